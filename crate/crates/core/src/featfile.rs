//! Feature stream file: `"PRFS"`, u32 version, u32 frame count, then per
//! frame 18 cepstra, pitch period and pitch correlation as little-endian
//! `f32`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{FeatureFrame, FeatureStream, NUM_FEATURES};

pub const FEATURE_MAGIC: &[u8; 4] = b"PRFS";
pub const FEATURE_VERSION: u32 = 1;

pub fn write_features(stream: &FeatureStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + stream.len() * NUM_FEATURES * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(stream.len() as u32).to_le_bytes());
    for f in &stream.frames {
        for v in f.to_vector() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_features(bytes: &[u8]) -> Result<FeatureStream> {
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format("not a feature file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FEATURE_VERSION {
        return Err(Error::format(format!(
            "unsupported feature file version {version}"
        )));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() != n * NUM_FEATURES * 4 {
        return Err(Error::format(format!(
            "feature file holds {} bytes for {n} frames",
            body.len()
        )));
    }
    let frames = body
        .chunks_exact(NUM_FEATURES * 4)
        .map(|chunk| {
            let mut v = [0.0; NUM_FEATURES];
            for (x, b) in v.iter_mut().zip(chunk.chunks_exact(4)) {
                *x = f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes")));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::format("non-finite value in feature file"));
            }
            Ok(FeatureFrame::from_vector(&v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureStream::new(frames))
}

pub fn save_features(stream: &FeatureStream, path: &Path) -> Result<()> {
    std::fs::write(path, write_features(stream))?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<FeatureStream> {
    read_features(&std::fs::read(path)?)
}
