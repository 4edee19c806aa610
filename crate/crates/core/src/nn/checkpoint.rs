//! Binary checkpoint format.
//!
//! Layout, all integers `u32` little-endian and all parameters `f32`
//! little-endian:
//!
//! ```text
//! "NNCK" | version = 1 | input rank | input extents... | layer count
//! per layer: tag (1 byte) | extents... | parameter buffers...
//! ```
//!
//! | tag | layer     | extents                  | buffers               |
//! |-----|-----------|--------------------------|-----------------------|
//! | 1   | Conv      | in, out, kernel_h, kernel_w | weight, bias       |
//! | 2   | MaxPool   | window                   |                       |
//! | 3   | Dense     | in, out                  | weight, bias          |
//! | 4   | ReLU      |                          |                       |
//! | 5   | Dropout   |                          | p                     |
//! | 6   | Flatten   |                          |                       |
//! | 7   | Normalize | channels                 | mean, std             |

use std::fs;
use std::path::Path;

use super::layer::LayerSpec;
use super::network::Network;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NNCK";
const VERSION: u32 = 1;

pub fn encode_checkpoint(net: &Network) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * net.param_count());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, net.input_shape().len() as u32);
    for &d in net.input_shape() {
        put_u32(&mut out, d as u32);
    }
    put_u32(&mut out, net.layers().len() as u32);
    for layer in net.layers() {
        match layer.spec() {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
            } => {
                out.push(1);
                for d in [in_channels, out_channels, kernel_h, kernel_w] {
                    put_u32(&mut out, *d as u32);
                }
            }
            LayerSpec::MaxPool { window } => {
                out.push(2);
                put_u32(&mut out, *window as u32);
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                out.push(3);
                put_u32(&mut out, *in_dim as u32);
                put_u32(&mut out, *out_dim as u32);
            }
            LayerSpec::ReLU => out.push(4),
            LayerSpec::Dropout { p } => {
                out.push(5);
                put_f32s(&mut out, &[*p]);
            }
            LayerSpec::Flatten => out.push(6),
            LayerSpec::Normalize { mean, std } => {
                out.push(7);
                put_u32(&mut out, mean.len() as u32);
                put_f32s(&mut out, mean);
                put_f32s(&mut out, std);
            }
        }
        put_f32s(&mut out, layer.weight());
        put_f32s(&mut out, layer.bias());
    }
    out
}

/// Parses a checkpoint; `path` is only used to label errors.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, 0, "bad magic, expected NNCK"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, 4, format!("unsupported version {version}")));
    }
    let rank = r.u32()? as usize;
    if rank == 0 || rank > 8 {
        return Err(r.error(format!("implausible input rank {rank}")));
    }
    let input_shape = (0..rank).map(|_| r.extent()).collect::<Result<Vec<_>>>()?;
    let count = r.u32()? as usize;
    let mut parts = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let tag_offset = r.pos;
        let tag = r.take(1)?[0];
        let spec = match tag {
            1 => LayerSpec::Conv {
                in_channels: r.extent()?,
                out_channels: r.extent()?,
                kernel_h: r.extent()?,
                kernel_w: r.extent()?,
            },
            2 => LayerSpec::MaxPool { window: r.extent()? },
            3 => LayerSpec::Dense {
                in_dim: r.extent()?,
                out_dim: r.extent()?,
            },
            4 => LayerSpec::ReLU,
            5 => LayerSpec::Dropout { p: r.f32s(1)?[0] },
            6 => LayerSpec::Flatten,
            7 => {
                let c = r.extent()?;
                LayerSpec::Normalize {
                    mean: r.f32s(c)?,
                    std: r.f32s(c)?,
                }
            }
            t => {
                return Err(Error::format(path, tag_offset as u64, format!("unknown layer tag {t}")));
            }
        };
        let (wl, bl) = spec.param_lens();
        let weight = r.f32s(wl)?;
        let bias = r.f32s(bl)?;
        parts.push((spec, weight, bias));
    }
    if r.pos != bytes.len() {
        return Err(r.error(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Network::from_parts(input_shape, parts).map_err(|e| Error::format(path, r.pos as u64, e.to_string()))
}

/// Writes atomically: a sibling temporary file is renamed into place.
pub fn checkpoint_save(net: &Network, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_checkpoint(net)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn error(&self, message: String) -> Error {
        Error::format(self.path, self.pos as u64, message)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(format!("truncated: needed {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn extent(&mut self) -> Result<usize> {
        let v = self.u32()?;
        if v == 0 {
            return Err(Error::format(self.path, self.pos as u64 - 4, "zero extent"));
        }
        Ok(v as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.error("overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
