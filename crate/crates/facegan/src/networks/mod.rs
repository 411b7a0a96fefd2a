//! Builders and forward passes for the four networks: encoder, decoder,
//! identity critic (critic 1), and packed authenticity critic (critic 2).
//!
//! One code path serves every scale: a [`ScalePreset`] fixes the input
//! resolution, divides the internal channel widths, and sets the embedding
//! length. At the reference preset (128, /1, 512) the layer extents
//! reproduce the published topology row for row; the desk preset
//! (32, /4, 128) keeps every ratio intact at CI speed.

mod checkpoint;

pub use checkpoint::{load_network, save_network};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{fan_in_uniform, ActKind, Parameter, Tape, Tensor, Var};

/// Slope of the hidden-layer leaky ReLU in the encoder and both critics.
pub const LEAKY_ALPHA: f64 = 0.2;

/// Epsilon of the optional decoder normalization.
pub const NORM_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScalePreset {
    /// Input image side; must be a positive multiple of 16 so the five
    /// stride-2 stages of critic 1 land on integer extents.
    pub resolution: usize,
    /// Divisor applied to the reference channel widths (64/128/256).
    pub channel_divisor: usize,
    /// Length of the encoder output vector.
    pub embedding_dim: usize,
}

impl ScalePreset {
    /// The published topology: 128x128 images, full widths, 512-dim embedding.
    pub const fn reference() -> Self {
        ScalePreset {
            resolution: 128,
            channel_divisor: 1,
            embedding_dim: 512,
        }
    }

    /// CI-speed preset: 32x32 images, quarter widths, 128-dim embedding.
    pub const fn desk() -> Self {
        ScalePreset {
            resolution: 32,
            channel_divisor: 4,
            embedding_dim: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.resolution % 16 != 0 {
            return Err(Error::InvalidArgument(format!(
                "preset resolution must be a positive multiple of 16, got {}",
                self.resolution
            )));
        }
        if self.channel_divisor == 0 || 64 % self.channel_divisor != 0 {
            return Err(Error::InvalidArgument(format!(
                "channel divisor must divide 64, got {}",
                self.channel_divisor
            )));
        }
        if self.embedding_dim == 0 {
            return Err(Error::InvalidArgument("embedding_dim must be positive".into()));
        }
        Ok(())
    }

    /// Scale a reference channel width.
    pub fn ch(&self, reference: usize) -> usize {
        reference / self.channel_divisor
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetKind {
    Encoder,
    Decoder,
    Critic1,
    Critic2,
}

impl NetKind {
    pub fn tag(self) -> u8 {
        match self {
            NetKind::Encoder => 0,
            NetKind::Decoder => 1,
            NetKind::Critic1 => 2,
            NetKind::Critic2 => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => NetKind::Encoder,
            1 => NetKind::Decoder,
            2 => NetKind::Critic1,
            3 => NetKind::Critic2,
            other => {
                return Err(Error::Checkpoint(format!("unknown network kind tag {other}")))
            }
        })
    }
}

enum Layer {
    Conv {
        display: String,
        kernel: Parameter,
        bias: Parameter,
        stride: usize,
        transpose: bool,
        act: Option<ActKind>,
        norm: bool,
    },
    Dense {
        display: String,
        weight: Parameter,
        bias: Parameter,
        act: Option<ActKind>,
        reshape_to: Option<[usize; 3]>,
    },
    Flatten {
        display: String,
    },
}

/// One row of a network's shape report, comparable against the published
/// layer tables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeRow {
    pub name: String,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub kernel: Option<usize>,
    pub stride: Option<usize>,
}

pub struct Network {
    pub kind: NetKind,
    pub preset: ScalePreset,
    pub frozen: bool,
    /// Images packed per critic-2 input (4 or 1); 0 for other kinds.
    pub pack: usize,
    /// Decoder hidden-layer normalization flag; false elsewhere.
    pub norm: bool,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.shape_report()
            .last()
            .map(|r| r.output.clone())
            .unwrap_or_else(|| self.input_shape.clone())
    }

    pub fn parameters(&self) -> impl Iterator<Item = &Parameter> {
        self.layers.iter().flat_map(|l| match l {
            Layer::Conv { kernel, bias, .. } => vec![kernel, bias].into_iter(),
            Layer::Dense { weight, bias, .. } => vec![weight, bias].into_iter(),
            Layer::Flatten { .. } => vec![].into_iter(),
        })
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.layers.iter_mut().flat_map(|l| match l {
            Layer::Conv { kernel, bias, .. } => vec![kernel, bias].into_iter(),
            Layer::Dense { weight, bias, .. } => vec![weight, bias].into_iter(),
            Layer::Flatten { .. } => vec![].into_iter(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.parameters().map(|p| p.value.numel()).sum()
    }

    /// Copy of every parameter's name and values, for freeze/isolation checks.
    pub fn snapshot(&self) -> Vec<(String, Vec<f32>)> {
        self.parameters()
            .map(|p| (p.name.clone(), p.value.data().to_vec()))
            .collect()
    }

    /// Forward pass. Parameters are registered as tracked tape leaves unless
    /// `track` is false or the network is frozen; gradients still flow
    /// through untracked parameters to the input.
    pub fn forward(&self, tape: &mut Tape<f32>, input: Var, track: bool) -> Result<Var> {
        if tape.value(input).shape() != self.input_shape {
            return Err(Error::Shape(format!(
                "{:?} expects input {:?}, got {:?}",
                self.kind,
                self.input_shape,
                tape.value(input).shape()
            )));
        }
        let track = track && !self.frozen;
        let mut x = input;
        for layer in &self.layers {
            x = match layer {
                Layer::Conv {
                    kernel,
                    bias,
                    stride,
                    transpose,
                    act,
                    norm,
                    ..
                } => {
                    let k = self.leaf(tape, kernel, track)?;
                    let b = self.leaf(tape, bias, track)?;
                    let mut y = if *transpose {
                        tape.conv_transpose2d(x, k, b, *stride)?
                    } else {
                        tape.conv2d(x, k, b, *stride)?
                    };
                    if *norm {
                        y = tape.instance_norm(y, NORM_EPS)?;
                    }
                    match act {
                        Some(kind) => tape.activation(y, *kind)?,
                        None => y,
                    }
                }
                Layer::Dense {
                    weight,
                    bias,
                    act,
                    reshape_to,
                    ..
                } => {
                    let w = self.leaf(tape, weight, track)?;
                    let b = self.leaf(tape, bias, track)?;
                    let mut y = tape.dense(x, w, b)?;
                    if let Some(shape) = reshape_to {
                        y = tape.reshape(y, shape)?;
                    }
                    match act {
                        Some(kind) => tape.activation(y, *kind)?,
                        None => y,
                    }
                }
                Layer::Flatten { .. } => tape.flatten(x)?,
            };
        }
        Ok(x)
    }

    fn leaf(&self, tape: &mut Tape<f32>, p: &Parameter, track: bool) -> Result<Var> {
        if track {
            tape.param(p)
        } else {
            Ok(tape.constant(p.value.clone()))
        }
    }

    /// Forward pass on a throwaway tape, returning the output tensor.
    pub fn eval(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let out = self.forward(&mut tape, x, false)?;
        Ok(tape.value(out).clone())
    }

    /// Layer-by-layer shapes as a pure function of the preset.
    pub fn shape_report(&self) -> Vec<ShapeRow> {
        let mut rows = Vec::new();
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            let row = match layer {
                Layer::Conv {
                    display,
                    kernel,
                    stride,
                    transpose,
                    ..
                } => {
                    let k = kernel.value.shape()[0];
                    let c_out = kernel.value.shape()[3];
                    let (h, w) = (shape[0], shape[1]);
                    let out = if *transpose {
                        vec![h * stride, w * stride, c_out]
                    } else {
                        vec![
                            crate::tensor::conv2d_out_dim(h, *stride),
                            crate::tensor::conv2d_out_dim(w, *stride),
                            c_out,
                        ]
                    };
                    ShapeRow {
                        name: display.clone(),
                        input: shape.clone(),
                        output: out,
                        kernel: Some(k),
                        stride: Some(*stride),
                    }
                }
                Layer::Dense {
                    display,
                    weight,
                    reshape_to,
                    ..
                } => {
                    let out = match reshape_to {
                        Some(s) => s.to_vec(),
                        None => vec![weight.value.shape()[1]],
                    };
                    ShapeRow {
                        name: display.clone(),
                        input: shape.clone(),
                        output: out,
                        kernel: None,
                        stride: None,
                    }
                }
                Layer::Flatten { display } => ShapeRow {
                    name: display.clone(),
                    input: shape.clone(),
                    output: vec![shape.iter().product()],
                    kernel: None,
                    stride: None,
                },
            };
            shape = row.output.clone();
            rows.push(row);
        }
        rows
    }
}

struct NetBuilder {
    rng: ChaCha8Rng,
    layers: Vec<Layer>,
}

impl NetBuilder {
    fn new(seed: u64) -> Self {
        NetBuilder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            layers: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        display: &str,
        k: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        transpose: bool,
        act: Option<ActKind>,
        norm: bool,
    ) {
        let prefix = display.to_lowercase();
        let kernel = Parameter::new(
            format!("{prefix}.kernel"),
            fan_in_uniform(&mut self.rng, &[k, k, c_in, c_out], k * k * c_in),
        );
        let bias = Parameter::new(format!("{prefix}.bias"), Tensor::zeros(&[c_out]));
        self.layers.push(Layer::Conv {
            display: display.to_string(),
            kernel,
            bias,
            stride,
            transpose,
            act,
            norm,
        });
    }

    fn dense(
        &mut self,
        display: &str,
        n: usize,
        m: usize,
        act: Option<ActKind>,
        reshape_to: Option<[usize; 3]>,
    ) {
        let prefix = display.to_lowercase();
        let weight = Parameter::new(
            format!("{prefix}.weight"),
            fan_in_uniform(&mut self.rng, &[n, m], n),
        );
        let bias = Parameter::new(format!("{prefix}.bias"), Tensor::zeros(&[m]));
        self.layers.push(Layer::Dense {
            display: display.to_string(),
            weight,
            bias,
            act,
            reshape_to,
        });
    }

    fn flatten(&mut self, display: &str) {
        self.layers.push(Layer::Flatten {
            display: display.to_string(),
        });
    }
}

const LEAKY: Option<ActKind> = Some(ActKind::LeakyRelu(LEAKY_ALPHA));
const RELU: Option<ActKind> = Some(ActKind::Relu);
const TANH: Option<ActKind> = Some(ActKind::Tanh);

/// Feature extractor: five convolutions, flatten, dense to the embedding.
pub fn build_encoder(preset: ScalePreset, seed: u64) -> Result<Encoder> {
    preset.validate()?;
    let r = preset.resolution;
    let mut b = NetBuilder::new(seed);
    b.conv("Conv1", 7, 3, preset.ch(64), 1, false, LEAKY, false);
    b.conv("Conv2", 3, preset.ch(64), preset.ch(128), 2, false, LEAKY, false);
    b.conv("Conv3", 3, preset.ch(128), preset.ch(128), 2, false, LEAKY, false);
    b.conv("Conv4", 3, preset.ch(128), preset.ch(256), 2, false, LEAKY, false);
    b.conv("Conv5", 3, preset.ch(256), preset.ch(256), 2, false, LEAKY, false);
    b.flatten("Flatten");
    let side = halved(r, 4);
    b.dense("Dense", side * side * preset.ch(256), preset.embedding_dim, None, None);
    Ok(Encoder {
        net: Network {
            kind: NetKind::Encoder,
            preset,
            frozen: false,
            pack: 0,
            norm: false,
            input_shape: vec![r, r, 3],
            layers: b.layers,
        },
    })
}

/// Image synthesizer: dense from the embedding to a spatial seed, one wide
/// convolution, four stride-2 upsampling deconvolutions, and a tanh-bounded
/// output convolution.
pub fn build_decoder(preset: ScalePreset, seed: u64, norm: bool) -> Result<Decoder> {
    preset.validate()?;
    let r = preset.resolution;
    let base = r / 16;
    let c64 = preset.ch(64);
    let c128 = preset.ch(128);
    let mut b = NetBuilder::new(seed);
    b.dense(
        "Dense",
        preset.embedding_dim,
        base * base * c64,
        RELU,
        Some([base, base, c64]),
    );
    b.conv("Conv1", 8, c64, c64, 1, false, RELU, norm);
    b.conv("Deconv1", 3, c64, c128, 2, true, RELU, norm);
    b.conv("Deconv2", 3, c128, c128, 2, true, RELU, norm);
    b.conv("Deconv3", 3, c128, c128, 2, true, RELU, norm);
    b.conv("Deconv4", 3, c128, c64, 2, true, RELU, norm);
    b.conv("Conv2", 3, c64, 3, 1, false, TANH, false);
    Ok(Decoder {
        net: Network {
            kind: NetKind::Decoder,
            preset,
            frozen: false,
            pack: 0,
            norm,
            input_shape: vec![preset.embedding_dim],
            layers: b.layers,
        },
    })
}

/// Identity critic: scores a channel-concatenated (profile, candidate) pair.
pub fn build_critic1(preset: ScalePreset, seed: u64) -> Result<Critic1> {
    preset.validate()?;
    let r = preset.resolution;
    let mut b = NetBuilder::new(seed);
    b.conv("Conv1", 3, 6, preset.ch(128), 2, false, LEAKY, false);
    b.conv("Conv2", 3, preset.ch(128), preset.ch(128), 2, false, LEAKY, false);
    b.conv("Conv3", 3, preset.ch(128), preset.ch(256), 2, false, LEAKY, false);
    b.conv("Conv4", 3, preset.ch(256), preset.ch(256), 2, false, LEAKY, false);
    b.conv("Conv5", 3, preset.ch(256), preset.ch(256), 2, false, LEAKY, false);
    b.flatten("Flatten");
    let fside = halved(r, 5);
    b.dense("Dense", fside * fside * preset.ch(256), 1, None, None);
    Ok(Critic1 {
        net: Network {
            kind: NetKind::Critic1,
            preset,
            frozen: false,
            pack: 0,
            norm: false,
            input_shape: vec![r, r, 6],
            layers: b.layers,
        },
    })
}

/// Authenticity critic over packed inputs. `pack` is the number of images
/// per judged sample: 4 (a 2x2 stitch, the default) or 1 (the ablation).
pub fn build_critic2(preset: ScalePreset, seed: u64, pack: usize) -> Result<Critic2> {
    preset.validate()?;
    if pack != 4 && pack != 1 {
        return Err(Error::InvalidArgument(format!(
            "critic 2 pack factor must be 4 or 1, got {pack}"
        )));
    }
    let side = if pack == 4 {
        2 * preset.resolution
    } else {
        preset.resolution
    };
    let mut b = NetBuilder::new(seed);
    b.conv("Conv1", 3, 3, preset.ch(64), 2, false, LEAKY, false);
    b.conv("Conv2", 3, preset.ch(64), preset.ch(128), 2, false, LEAKY, false);
    b.conv("Conv3", 3, preset.ch(128), preset.ch(128), 2, false, LEAKY, false);
    b.conv("Conv4", 3, preset.ch(128), preset.ch(256), 2, false, LEAKY, false);
    b.conv("Conv5", 3, preset.ch(256), preset.ch(256), 2, false, LEAKY, false);
    b.conv("Conv6", 3, preset.ch(256), preset.ch(256), 2, false, LEAKY, false);
    b.flatten("Flatten");
    let fside = halved(side, 6);
    b.dense("Dense", fside * fside * preset.ch(256), 1, None, None);
    Ok(Critic2 {
        net: Network {
            kind: NetKind::Critic2,
            preset,
            frozen: false,
            pack,
            norm: false,
            input_shape: vec![side, side, 3],
            layers: b.layers,
        },
    })
}

/// Build any kind with its kind-specific flags; used by checkpoint loading.
pub fn build_network(
    kind: NetKind,
    preset: ScalePreset,
    seed: u64,
    pack: usize,
    norm: bool,
) -> Result<Network> {
    Ok(match kind {
        NetKind::Encoder => build_encoder(preset, seed)?.net,
        NetKind::Decoder => build_decoder(preset, seed, norm)?.net,
        NetKind::Critic1 => build_critic1(preset, seed)?.net,
        NetKind::Critic2 => build_critic2(preset, seed, if pack == 0 { 4 } else { pack })?.net,
    })
}

/// Spatial extent after `stages` same-padded stride-2 convolutions.
fn halved(extent: usize, stages: usize) -> usize {
    (0..stages).fold(extent, |e, _| crate::tensor::conv2d_out_dim(e, 2))
}

fn check_normalized(image: &Tensor, what: &str) -> Result<()> {
    const SLACK: f32 = 1e-5;
    if image.data().iter().any(|v| v.abs() > 1.0 + SLACK) {
        return Err(Error::InvalidArgument(format!(
            "{what} must be normalized to [-1, 1]"
        )));
    }
    Ok(())
}

pub struct Encoder {
    pub net: Network,
}

impl Encoder {
    /// Map a normalized `[R,R,3]` image to its embedding vector.
    pub fn encode(&self, image: &Tensor) -> Result<Tensor> {
        check_normalized(image, "encoder input")?;
        self.net.eval(image)
    }

    pub fn embedding_dim(&self) -> usize {
        self.net.preset.embedding_dim
    }

    pub fn freeze(&mut self) {
        self.net.frozen = true;
    }
}

pub struct Decoder {
    pub net: Network,
}

impl Decoder {
    /// Decode an embedding into a `[R,R,3]` image in `[-1, 1]`.
    pub fn decode(&self, embedding: &Tensor) -> Result<Tensor> {
        self.net.eval(embedding)
    }

    pub fn decode_on_tape(&self, tape: &mut Tape<f32>, embedding: Var, track: bool) -> Result<Var> {
        self.net.forward(tape, embedding, track)
    }
}

pub struct Critic1 {
    pub net: Network,
}

impl Critic1 {
    /// Score a (profile, candidate) pair. The profile occupies channels
    /// 0..3 of the critic input, the candidate channels 3..6.
    pub fn score_pair(
        &self,
        tape: &mut Tape<f32>,
        profile: Var,
        candidate: Var,
        track: bool,
    ) -> Result<Var> {
        let stacked = tape.concat_channels(profile, candidate)?;
        self.net.forward(tape, stacked, track)
    }
}

pub struct Critic2 {
    pub net: Network,
}

impl Critic2 {
    pub fn score_packed(&self, tape: &mut Tape<f32>, packed: Var, track: bool) -> Result<Var> {
        self.net.forward(tape, packed, track)
    }

    pub fn pack(&self) -> usize {
        self.net.pack
    }
}

/// Frozen encoder plus trainable decoder: the full profile-to-frontal map.
pub struct GeneratorBundle {
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl GeneratorBundle {
    pub fn new(encoder: Encoder, decoder: Decoder) -> Result<Self> {
        if !encoder.net.frozen {
            return Err(Error::InvalidArgument(
                "generator encoder must be frozen (pretrain it first)".into(),
            ));
        }
        if encoder.net.preset != decoder.net.preset {
            return Err(Error::InvalidArgument(
                "encoder and decoder presets differ".into(),
            ));
        }
        Ok(GeneratorBundle { encoder, decoder })
    }

    /// `decode(encode(profile))`; both passes gradient-free.
    pub fn generate(&self, profile: &Tensor) -> Result<Tensor> {
        let embedding = self.encoder.encode(profile)?;
        self.decoder.decode(&embedding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{uniform, GradMap};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk_image(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        uniform(&mut rng, &[32, 32, 3], -1.0, 1.0)
    }

    #[test]
    fn encoder_reference_intermediate_shapes() {
        let enc = build_encoder(ScalePreset::reference(), 0).unwrap();
        let outputs: Vec<Vec<usize>> = enc.net.shape_report().iter().map(|r| r.output.clone()).collect();
        assert_eq!(
            outputs,
            vec![
                vec![128, 128, 64],
                vec![64, 64, 128],
                vec![32, 32, 128],
                vec![16, 16, 256],
                vec![8, 8, 256],
                vec![16384],
                vec![512],
            ]
        );
    }

    #[test]
    fn critic1_first_conv_row() {
        let c1 = build_critic1(ScalePreset::reference(), 0).unwrap();
        let report = c1.net.shape_report();
        assert_eq!(report[0].input, vec![128, 128, 6]);
        assert_eq!(report[0].output, vec![64, 64, 128]);
        assert_eq!(report[0].kernel, Some(3));
        assert_eq!(report[0].stride, Some(2));
    }

    #[test]
    fn critic2_reference_input_is_256() {
        let c2 = build_critic2(ScalePreset::reference(), 0, 4).unwrap();
        assert_eq!(c2.net.input_shape(), &[256, 256, 3]);
        let report = c2.net.shape_report();
        assert_eq!(report[report.len() - 2].output, vec![4096]);
        assert_eq!(report.last().unwrap().output, vec![1]);
    }

    #[test]
    fn decoder_desk_output_resolution() {
        let dec = build_decoder(ScalePreset::desk(), 0, false).unwrap();
        assert_eq!(dec.net.output_shape(), vec![32, 32, 3]);
    }

    #[test]
    fn preset_validation_rules() {
        assert!(ScalePreset { resolution: 30, channel_divisor: 1, embedding_dim: 64 }
            .validate()
            .is_err());
        assert!(ScalePreset { resolution: 32, channel_divisor: 3, embedding_dim: 64 }
            .validate()
            .is_err());
        assert!(ScalePreset { resolution: 32, channel_divisor: 8, embedding_dim: 64 }
            .validate()
            .is_ok());
    }

    #[test]
    fn critic_stride_stages_stay_integral_for_valid_presets() {
        for res in [16usize, 32, 48, 64, 128] {
            let preset = ScalePreset { resolution: res, channel_divisor: 4, embedding_dim: 32 };
            preset.validate().unwrap();
            let c1 = build_critic1(preset, 0).unwrap();
            let mut tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(res as u64);
            let x = tape.constant(uniform(&mut rng, &[res, res, 6], -1.0, 1.0));
            let out = c1.net.forward(&mut tape, x, false).unwrap();
            assert_eq!(tape.value(out).shape(), &[1]);
        }
    }

    #[test]
    fn desk_forward_shapes_match_report() {
        let enc = build_encoder(ScalePreset::desk(), 3).unwrap();
        let out = enc.net.eval(&desk_image(1)).unwrap();
        assert_eq!(out.shape().to_vec(), enc.net.output_shape());
    }

    #[test]
    fn encode_is_deterministic_and_validates_input() {
        let enc = build_encoder(ScalePreset::desk(), 9).unwrap();
        let img = desk_image(2);
        let a = enc.encode(&img).unwrap();
        let b = enc.encode(&img).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.shape(), &[128]);

        let wrong = Tensor::zeros(&[16, 16, 3]);
        assert!(enc.encode(&wrong).is_err());
        let unnormalized = Tensor::full(&[32, 32, 3], 3.0);
        assert!(enc.encode(&unnormalized).is_err());
    }

    #[test]
    fn generator_output_bounded_and_encoder_untracked() {
        let mut enc = build_encoder(ScalePreset::desk(), 4).unwrap();
        enc.freeze();
        let dec = build_decoder(ScalePreset::desk(), 5, false).unwrap();
        let bundle = GeneratorBundle::new(enc, dec).unwrap();

        for seed in 0..4 {
            let out = bundle.generate(&desk_image(seed)).unwrap();
            assert_eq!(out.shape(), &[32, 32, 3]);
            assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }

        // A frozen network never registers tracked parameters, so a backward
        // pass through it yields no encoder gradients at all.
        let mut tape = Tape::new();
        let x = tape.constant(desk_image(7));
        let emb = bundle.encoder.net.forward(&mut tape, x, true).unwrap();
        let m = tape.mean_all(emb).unwrap();
        tape.backward(m).unwrap();
        assert_eq!(tape.param_grads(), GradMap::new());
    }

    #[test]
    fn generator_requires_frozen_encoder() {
        let enc = build_encoder(ScalePreset::desk(), 4).unwrap();
        let dec = build_decoder(ScalePreset::desk(), 5, false).unwrap();
        assert!(GeneratorBundle::new(enc, dec).is_err());
    }

    #[test]
    fn zero_image_embedding_matches_bias_propagation_oracle() {
        // Miniature two-layer stack: conv (stride 4, bias b1) -> leaky ->
        // flatten -> dense (bias b2). With a zero input image the embedding
        // must equal the hand-propagated biases.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kernel = Parameter::new("k", fan_in_uniform(&mut rng, &[3, 3, 1, 2], 9));
        let b1 = Parameter::new("b1", Tensor::new(vec![2], vec![0.5, -0.4]).unwrap());
        let weight = Parameter::new("w", fan_in_uniform(&mut rng, &[8, 3], 8));
        let b2 = Parameter::new("b2", Tensor::new(vec![3], vec![0.1, 0.0, -0.2]).unwrap());

        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[8, 8, 1]));
        let kv = tape.param(&kernel).unwrap();
        let b1v = tape.param(&b1).unwrap();
        let c = tape.conv2d(x, kv, b1v, 4).unwrap();
        let a = tape
            .activation(c, ActKind::LeakyRelu(LEAKY_ALPHA))
            .unwrap();
        let f = tape.flatten(a).unwrap();
        let wv = tape.param(&weight).unwrap();
        let b2v = tape.param(&b2).unwrap();
        let emb = tape.dense(f, wv, b2v).unwrap();

        // Oracle: conv output is bias per channel everywhere; leaky scales
        // negatives by alpha; dense sums weight columns against that map.
        let leaky = |v: f32| if v > 0.0 { v } else { 0.2 * v };
        let act = [leaky(0.5), leaky(-0.4)];
        let mut expected = [0.1f32, 0.0, -0.2];
        for pos in 0..4 {
            for (c, &av) in act.iter().enumerate() {
                let n = pos * 2 + c;
                for m in 0..3 {
                    expected[m] += weight.value.data()[n * 3 + m] * av;
                }
            }
        }
        for (got, want) in tape.value(emb).data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn critic1_concat_order_is_profile_then_candidate() {
        let c1 = build_critic1(ScalePreset::desk(), 21).unwrap();
        let mut tape = Tape::new();
        let profile = tape.constant(desk_image(31));
        let candidate = tape.constant(desk_image(32));
        let s = c1.score_pair(&mut tape, profile, candidate, false).unwrap();
        assert_eq!(tape.value(s).shape(), &[1]);
        let swapped = c1.score_pair(&mut tape, candidate, profile, false).unwrap();
        // Not required to be symmetric; on random nets the two orders differ.
        assert_ne!(tape.scalar(s).unwrap(), tape.scalar(swapped).unwrap());
    }

    #[test]
    fn critic_scores_finite_after_clipping() {
        use crate::tensor::clip_params;
        let mut c1 = build_critic1(ScalePreset::desk(), 22).unwrap();
        clip_params(c1.net.parameters_mut(), 0.01).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(desk_image(41));
        let b = tape.constant(desk_image(42));
        let s = c1.score_pair(&mut tape, a, b, false).unwrap();
        assert!(tape.scalar(s).unwrap().is_finite());
    }
}
