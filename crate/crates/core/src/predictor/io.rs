//! Little-endian weight file.
//!
//! ```text
//! "PRDW" | u32 version | u32 tensor count
//! per tensor: u16 name length | name | u8 rank | u32 dims[rank] | f32 data (row-major)
//! scaler: f64 offset[20] | f64 gain[20]
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Network, PredictorWeights, Scaler};
use crate::error::{Error, Result};
use crate::features::{NUM_CEPS, NUM_FEATURES};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"PRDW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

pub fn write_weights(w: &PredictorWeights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    let tensors = w.net.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(shape.len() as u8);
        for d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for v in w.scaler.offset.iter().chain(&w.scaler.gain) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format("weight file is truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_header(c: &mut Cursor) -> Result<u32> {
    if c.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::format("not a predictor weight file (bad magic)"));
    }
    let version = c.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(format!(
            "unsupported weight file version {version}"
        )));
    }
    c.u32()
}

fn read_tensor(c: &mut Cursor, with_data: bool) -> Result<(TensorHeader, Vec<f64>)> {
    let name_len = c.u16()? as usize;
    let name = String::from_utf8(c.take(name_len)?.to_vec())
        .map_err(|_| Error::format("tensor name is not UTF-8"))?;
    let rank = c.u8()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(c.u32()? as usize);
    }
    let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let count = count.ok_or_else(|| Error::format("tensor shape overflows"))?;
    let bytes = c.take(
        count
            .checked_mul(4)
            .ok_or_else(|| Error::format("tensor too large"))?,
    )?;
    let data = if with_data {
        bytes
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect()
    } else {
        Vec::new()
    };
    Ok((TensorHeader { name, shape }, data))
}

/// Lists tensor names and shapes without decoding the payload.
pub fn dump_header(bytes: &[u8]) -> Result<Vec<TensorHeader>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let n = read_header(&mut c)?;
    (0..n)
        .map(|_| read_tensor(&mut c, false).map(|(h, _)| h))
        .collect()
}

pub fn read_weights(bytes: &[u8]) -> Result<PredictorWeights> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let n = read_header(&mut c)?;
    let mut tensors = Vec::with_capacity(n as usize);
    for _ in 0..n {
        tensors.push(read_tensor(&mut c, true)?);
    }
    let mut scaler = Scaler::identity();
    for v in scaler.offset.iter_mut() {
        *v = c.f64()?;
    }
    for v in scaler.gain.iter_mut() {
        *v = c.f64()?;
    }
    if c.pos != bytes.len() {
        return Err(Error::format("trailing bytes after weight file"));
    }
    scaler.validate()?;
    let net = assemble(tensors)?;
    Ok(PredictorWeights { net, scaler })
}

fn assemble(tensors: Vec<(TensorHeader, Vec<f64>)>) -> Result<Network> {
    let find = |name: &str| -> Result<&(TensorHeader, Vec<f64>)> {
        tensors
            .iter()
            .find(|(h, _)| h.name == name)
            .ok_or_else(|| Error::format(format!("missing tensor {name}")))
    };
    let shape_of = |name: &str, rank: usize| -> Result<Vec<usize>> {
        let (h, _) = find(name)?;
        if h.shape.len() != rank {
            return Err(Error::format(format!(
                "tensor {name} has rank {}",
                h.shape.len()
            )));
        }
        Ok(h.shape.clone())
    };
    let g1 = shape_of("gru1.w_input", 2)?;
    let g2 = shape_of("gru2.w_input", 2)?;
    let o = shape_of("out.weight", 2)?;
    if g1[0] % 3 != 0 || g2[0] % 3 != 0 {
        return Err(Error::format("GRU gate rows must be a multiple of 3"));
    }
    let (h1, h2) = (g1[0] / 3, g2[0] / 3);
    if g1[1] != NUM_FEATURES || g2[1] != h1 || o != vec![NUM_CEPS, h2] {
        return Err(Error::format("predictor tensor shapes are inconsistent"));
    }
    let mut net = Network::zeros(NUM_FEATURES, h1, h2, NUM_CEPS);
    let expected: Vec<(&'static str, Vec<usize>)> =
        net.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    for ((name, shape), dst) in expected.into_iter().zip(net.tensors_mut()) {
        let (h, data) = find(name)?;
        if h.shape != shape {
            return Err(Error::format(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                h.shape
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(format!(
                "tensor {name} contains non-finite values"
            )));
        }
        dst.copy_from_slice(data);
    }
    Ok(net)
}

pub fn save_weights(w: &PredictorWeights, path: &Path) -> Result<()> {
    fs::write(path, write_weights(w))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<PredictorWeights> {
    read_weights(&fs::read(path)?)
}

/// First 8 bytes of the SHA-256 of the serialized weights.
pub fn weights_hash(w: &PredictorWeights) -> u64 {
    hash64(&write_weights(w))
}

pub(crate) fn hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PredictorWeights {
        let mut scaler = Scaler::identity();
        scaler.gain[3] = 0.25;
        scaler.offset[19] = -0.5;
        PredictorWeights::init_sized(scaler, 12, 6, 9)
    }

    #[test]
    fn roundtrip_bit_equal() {
        let w = sample();
        let back = read_weights(&write_weights(&w)).unwrap();
        assert_eq!(back, w);
        assert_eq!(weights_hash(&back), weights_hash(&w));
    }

    #[test]
    fn full_size_roundtrip() {
        let w = PredictorWeights::init(Scaler::identity(), 42);
        assert_eq!(read_weights(&write_weights(&w)).unwrap(), w);
    }

    #[test]
    fn truncated_is_format_error() {
        let bytes = write_weights(&sample());
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(read_weights(&bytes[..cut]), Err(Error::Format(_))),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = write_weights(&sample());
        bytes[0] = b'X';
        assert!(matches!(read_weights(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn header_dump_lists_tensors() {
        let headers = dump_header(&write_weights(&sample())).unwrap();
        assert_eq!(headers.len(), 8);
        assert_eq!(headers[0].name, "gru1.w_input");
        assert_eq!(headers[0].shape, vec![36, 20]);
        assert_eq!(headers[6].shape, vec![18, 6]);
    }
}
