//! Checkpoint container: one file per network holding a small manifest
//! (format version, kind, preset, flags) followed by each parameter's name,
//! shape, and raw little-endian f32 data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{build_network, NetKind, Network, ScalePreset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"FGANCKPT";
const VERSION: u32 = 1;

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, data: &[f32]) -> std::io::Result<()> {
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r).map_err(io_err)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(io_err)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("non-utf8 name".into()))
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn io_err(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("truncated or unreadable checkpoint: {e}"))
}

pub fn save_network(path: &Path, net: &Network) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        write_u32(&mut w, VERSION)?;
        w.write_all(&[net.kind.tag(), net.frozen as u8])?;
        write_u32(&mut w, net.pack as u32)?;
        w.write_all(&[net.norm as u8])?;
        write_u32(&mut w, net.preset.resolution as u32)?;
        write_u32(&mut w, net.preset.channel_divisor as u32)?;
        write_u32(&mut w, net.preset.embedding_dim as u32)?;
        let params: Vec<_> = net.parameters().collect();
        write_u32(&mut w, params.len() as u32)?;
        for p in params {
            write_str(&mut w, &p.name)?;
            write_u32(&mut w, p.value.shape().len() as u32)?;
            for &d in p.value.shape() {
                write_u64(&mut w, d as u64)?;
            }
            write_f32s(&mut w, p.value.data())?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Load a network checkpoint. The network is rebuilt from its recorded kind,
/// preset, and flags, then every stored parameter is matched by name and
/// validated against the built shape.
pub fn load_network(path: &Path, expect: Option<NetKind>) -> Result<Network> {
    let file = File::open(path).map_err(|e| {
        Error::Checkpoint(format!("cannot open checkpoint {}: {e}", path.display()))
    })?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a network checkpoint",
            path.display()
        )));
    }
    let version = read_u32(&mut r).map_err(io_err)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut flags = [0u8; 2];
    r.read_exact(&mut flags).map_err(io_err)?;
    let kind = NetKind::from_tag(flags[0])?;
    let frozen = flags[1] != 0;
    let pack = read_u32(&mut r).map_err(io_err)? as usize;
    let mut norm_flag = [0u8; 1];
    r.read_exact(&mut norm_flag).map_err(io_err)?;
    let preset = ScalePreset {
        resolution: read_u32(&mut r).map_err(io_err)? as usize,
        channel_divisor: read_u32(&mut r).map_err(io_err)? as usize,
        embedding_dim: read_u32(&mut r).map_err(io_err)? as usize,
    };
    if let Some(expected) = expect {
        if expected != kind {
            return Err(Error::Checkpoint(format!(
                "{} holds a {kind:?} checkpoint, expected {expected:?}",
                path.display()
            )));
        }
    }

    let mut net = build_network(kind, preset, 0, pack, norm_flag[0] != 0)?;
    net.frozen = frozen;

    let count = read_u32(&mut r).map_err(io_err)? as usize;
    let expected: usize = net.parameters().count();
    if count != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {count} parameters, {kind:?} needs {expected}"
        )));
    }
    let mut filled = vec![false; count];
    for _ in 0..count {
        let name = read_str(&mut r)?;
        let ndim = read_u32(&mut r).map_err(io_err)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r).map_err(io_err)? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = read_f32s(&mut r, numel).map_err(io_err)?;
        let tensor = Tensor::new(shape.clone(), data)?;

        let slot = net
            .parameters_mut()
            .enumerate()
            .find(|(_, p)| p.name == name);
        match slot {
            Some((idx, p)) => {
                if p.value.shape() != shape.as_slice() {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name:?} has shape {:?} in the checkpoint but {:?} in the network",
                        shape,
                        p.value.shape()
                    )));
                }
                if filled[idx] {
                    return Err(Error::Checkpoint(format!("duplicate parameter {name:?}")));
                }
                filled[idx] = true;
                p.value = tensor;
            }
            None => {
                return Err(Error::Checkpoint(format!(
                    "checkpoint parameter {name:?} does not exist in {kind:?}"
                )))
            }
        }
    }
    Ok(net)
}
