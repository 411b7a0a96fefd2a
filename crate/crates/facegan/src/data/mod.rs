//! Dataset ingestion: the manifest CSV binding image files to identity and
//! yaw labels, (profile, frontal) pair streams, and image normalization.

pub mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seeded::{stream_rng, tags};
use crate::tensor::Tensor;

/// Records with `|yaw| <= threshold` count as frontal ground truth.
pub const DEFAULT_FRONTAL_THRESHOLD: f32 = 10.0;

pub const MANIFEST_HEADER: &str = "path,identity,yaw,split";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug)]
pub struct FaceRecord {
    /// Image location, relative to the manifest's directory.
    pub image_path: PathBuf,
    pub identity_id: u32,
    /// Horizontal head rotation; 0 is frontal, +-90 full profile.
    pub yaw_degrees: f32,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct Manifest {
    pub records: Vec<FaceRecord>,
    pub frontal_threshold_degrees: f32,
    root: PathBuf,
}

/// Per-identity record counts produced by manifest validation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdentityCoverage {
    pub identity: u32,
    pub train_frontals: usize,
    pub train_profiles: usize,
    pub test_records: usize,
}

impl Manifest {
    /// Parse and validate `manifest.csv`. Image paths resolve relative to
    /// the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            row: 0,
            message: format!("cannot read manifest: {e}"),
        })?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, root, path)
    }

    fn parse(text: &str, root: PathBuf, src: &Path) -> Result<Self> {
        let err = |row: usize, message: String| Error::Manifest {
            path: src.to_path_buf(),
            row,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == MANIFEST_HEADER => {}
            Some((_, header)) => {
                return Err(err(
                    1,
                    format!("expected header {MANIFEST_HEADER:?}, got {:?}", header.trim()),
                ))
            }
            None => return Err(err(0, "empty manifest".into())),
        }

        let mut records = Vec::new();
        for (i, line) in lines {
            let row = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(err(row, format!("expected 4 fields, got {}", fields.len())));
            }
            let identity_id: u32 = fields[1]
                .trim()
                .parse()
                .map_err(|_| err(row, format!("bad identity {:?}", fields[1])))?;
            let yaw_degrees: f32 = fields[2]
                .trim()
                .parse()
                .map_err(|_| err(row, format!("bad yaw {:?}", fields[2])))?;
            if !yaw_degrees.is_finite() || yaw_degrees.abs() > 90.0 {
                return Err(err(row, format!("yaw {yaw_degrees} outside [-90, 90]")));
            }
            let split = match fields[3].trim() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(err(row, format!("bad split {other:?}"))),
            };
            records.push(FaceRecord {
                image_path: PathBuf::from(fields[0].trim()),
                identity_id,
                yaw_degrees,
                split,
            });
        }

        let manifest = Manifest {
            records,
            frontal_threshold_degrees: DEFAULT_FRONTAL_THRESHOLD,
            root,
        };
        manifest.validate(src)?;
        Ok(manifest)
    }

    /// Every identity with training records must contribute at least one
    /// frontal and one profile training record.
    fn validate(&self, src: &Path) -> Result<()> {
        for cov in self.coverage() {
            let trains = cov.train_frontals + cov.train_profiles;
            if trains > 0 && cov.train_frontals == 0 {
                return Err(Error::Manifest {
                    path: src.to_path_buf(),
                    row: 0,
                    message: format!(
                        "identity {} has no frontal training record (|yaw| <= {})",
                        cov.identity, self.frontal_threshold_degrees
                    ),
                });
            }
            if trains > 0 && cov.train_profiles == 0 {
                return Err(Error::Manifest {
                    path: src.to_path_buf(),
                    row: 0,
                    message: format!(
                        "identity {} has no profile training record (|yaw| > {})",
                        cov.identity, self.frontal_threshold_degrees
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn is_frontal(&self, r: &FaceRecord) -> bool {
        r.yaw_degrees.abs() <= self.frontal_threshold_degrees
    }

    pub fn resolve(&self, r: &FaceRecord) -> PathBuf {
        self.root.join(&r.image_path)
    }

    pub fn identities(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.records.iter().map(|r| r.identity_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn coverage(&self) -> Vec<IdentityCoverage> {
        let mut map: BTreeMap<u32, IdentityCoverage> = BTreeMap::new();
        for r in &self.records {
            let c = map.entry(r.identity_id).or_insert(IdentityCoverage {
                identity: r.identity_id,
                train_frontals: 0,
                train_profiles: 0,
                test_records: 0,
            });
            match r.split {
                Split::Train => {
                    if self.is_frontal(r) {
                        c.train_frontals += 1;
                    } else {
                        c.train_profiles += 1;
                    }
                }
                Split::Test => c.test_records += 1,
            }
        }
        map.into_values().collect()
    }

    /// Indices of records matching a predicate.
    pub fn select(&self, pred: impl Fn(&FaceRecord) -> bool) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| pred(r))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Endless stream of (profile, frontal) record pairs with matching identity.
/// Profiles are visited in epoch-shuffled order, so every profile training
/// record is sampled once per epoch; the ground-truth frontal is drawn
/// uniformly among the identity's frontal training records.
pub struct PairStream {
    profiles: Vec<usize>,
    frontals_by_identity: BTreeMap<u32, Vec<usize>>,
    identity_of: Vec<u32>,
    seed: u64,
    epoch: u64,
    pos: usize,
    order: Vec<usize>,
    rng: ChaCha8Rng,
}

impl PairStream {
    pub fn new(manifest: &Manifest, seed: u64) -> Result<Self> {
        let profiles =
            manifest.select(|r| r.split == Split::Train && !manifest.is_frontal(r));
        let mut frontals_by_identity: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for idx in manifest.select(|r| r.split == Split::Train && manifest.is_frontal(r)) {
            frontals_by_identity
                .entry(manifest.records[idx].identity_id)
                .or_default()
                .push(idx);
        }
        if profiles.is_empty() {
            return Err(Error::InvalidArgument(
                "manifest has no profile training records".into(),
            ));
        }
        let identity_of = manifest.records.iter().map(|r| r.identity_id).collect();
        let mut stream = PairStream {
            profiles,
            frontals_by_identity,
            identity_of,
            seed,
            epoch: 0,
            pos: 0,
            order: Vec::new(),
            rng: stream_rng(seed, 0, tags::PAIR_EPOCH),
        };
        stream.start_epoch(0);
        Ok(stream)
    }

    fn start_epoch(&mut self, epoch: u64) {
        self.epoch = epoch;
        self.pos = 0;
        self.rng = stream_rng(self.seed, epoch, tags::PAIR_EPOCH);
        self.order = (0..self.profiles.len()).collect();
        // Fisher-Yates from the epoch stream.
        for i in (1..self.order.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            self.order.swap(i, j);
        }
    }

    /// Next (profile record index, frontal record index).
    pub fn next_pair(&mut self) -> (usize, usize) {
        if self.pos >= self.order.len() {
            self.start_epoch(self.epoch + 1);
        }
        let profile = self.profiles[self.order[self.pos]];
        self.pos += 1;
        let identity = self.identity_of[profile];
        let frontals = &self.frontals_by_identity[&identity];
        let frontal = frontals[self.rng.gen_range(0..frontals.len())];
        (profile, frontal)
    }

    /// Fast-forward as if `n` pairs had been drawn; used by training resume.
    pub fn skip_pairs(&mut self, n: u64) {
        for _ in 0..n {
            self.next_pair();
        }
    }
}

/// One training minibatch of identity-matched (profile, frontal) images.
pub struct PairBatch {
    pub profiles: Vec<Tensor>,
    pub frontals: Vec<Tensor>,
    pub identity_ids: Vec<u32>,
    /// Manifest record indices, for embedding caches.
    pub profile_records: Vec<usize>,
    pub frontal_records: Vec<usize>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }
}

/// Manifest plus every referenced image decoded and normalized into memory.
pub struct LoadedDataset {
    pub manifest: Manifest,
    pub images: Vec<Tensor>,
    pub resolution: usize,
}

impl LoadedDataset {
    pub fn load(manifest: Manifest) -> Result<Self> {
        let mut images = Vec::with_capacity(manifest.records.len());
        let mut resolution = 0usize;
        for r in &manifest.records {
            let img = load_png(&manifest.resolve(r))?;
            let (h, w, _) = img.hwc()?;
            if h != w {
                return Err(Error::InvalidArgument(format!(
                    "image {} is not square ({h}x{w})",
                    r.image_path.display()
                )));
            }
            if resolution == 0 {
                resolution = h;
            } else if h != resolution {
                return Err(Error::InvalidArgument(format!(
                    "image {} has resolution {h}, dataset uses {resolution}",
                    r.image_path.display()
                )));
            }
            images.push(img);
        }
        Ok(LoadedDataset {
            manifest,
            images,
            resolution,
        })
    }

    pub fn draw_batch(&self, stream: &mut PairStream, n: usize) -> PairBatch {
        let mut batch = PairBatch {
            profiles: Vec::with_capacity(n),
            frontals: Vec::with_capacity(n),
            identity_ids: Vec::with_capacity(n),
            profile_records: Vec::with_capacity(n),
            frontal_records: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let (p, f) = stream.next_pair();
            batch.profiles.push(self.images[p].clone());
            batch.frontals.push(self.images[f].clone());
            batch.identity_ids.push(self.manifest.records[p].identity_id);
            batch.profile_records.push(p);
            batch.frontal_records.push(f);
        }
        batch
    }
}

/// Map 8-bit RGB bytes to a `[h,w,3]` tensor in `[-1, 1]`: `x/127.5 - 1`.
pub fn normalize_rgb(bytes: &[u8], h: usize, w: usize) -> Result<Tensor> {
    if bytes.len() != h * w * 3 {
        return Err(Error::InvalidArgument(format!(
            "expected {} RGB bytes for {h}x{w}, got {}",
            h * w * 3,
            bytes.len()
        )));
    }
    Ok(Tensor::from_fn(&[h, w, 3], |i| {
        bytes[i] as f32 / 127.5 - 1.0
    }))
}

/// Inverse of [`normalize_rgb`] with clamping into the valid byte range.
pub fn denormalize_rgb(t: &Tensor) -> Result<(Vec<u8>, usize, usize)> {
    let (h, w, c) = t.hwc()?;
    if c != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected 3 channels, got {c}"
        )));
    }
    let bytes = t
        .data()
        .iter()
        .map(|&v| ((v + 1.0) * 127.5).clamp(0.0, 255.0).round() as u8)
        .collect();
    Ok((bytes, h, w))
}

pub fn load_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    match img {
        image::DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            normalize_rgb(rgb.as_raw(), h, w)
        }
        other => Err(Error::InvalidArgument(format!(
            "{}: expected 8-bit RGB, got {:?}",
            path.display(),
            other.color()
        ))),
    }
}

pub fn save_png(path: &Path, t: &Tensor) -> Result<()> {
    let (bytes, h, w) = denormalize_rgb(t)?;
    let img = image::RgbImage::from_raw(w as u32, h as u32, bytes)
        .expect("byte length matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
}
