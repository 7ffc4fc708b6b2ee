//! Helpers shared by the integration tests. Built from the public API only.

#![allow(dead_code)]

use std::collections::BTreeMap;

use predcodec::entropy::rate::attach_uniform_tables;
use predcodec::features::{FeatureFrame, FeatureStream, MAX_PERIOD, MIN_PERIOD, NUM_CEPS};
use predcodec::predictor::Scaler;
use predcodec::quantization::{
    BitrateProfile, Codebook, CodedFrame, ProfileId, ScalarCode, VectorCode, VQ_DIM,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_codebook(dim: usize, size: usize, spread: f64, rng: &mut ChaCha8Rng) -> Codebook {
    let mut cb = Codebook::new(
        dim,
        (0..dim * size)
            .map(|_| rng.gen_range(-spread..spread))
            .collect(),
    )
    .unwrap();
    cb.snap();
    cb
}

/// Random codebooks with the layout of `id` and placeholder Huffman tables.
pub fn random_profile(id: ProfileId, seed: u64) -> BitrateProfile {
    let mut rng = rng(seed);
    let layout = id.layout();
    let (theta_sq, theta_vq) = match id {
        ProfileId::High => (f64::NEG_INFINITY, f64::NEG_INFINITY),
        _ => (0.15, 2.0),
    };
    let mut p = BitrateProfile {
        id,
        theta_sq,
        theta_vq,
        sq_large: random_codebook(1, 1 << layout.sq_large_bits, 0.6, &mut rng),
        sq_small: layout
            .sq_small_bits
            .map(|b| random_codebook(1, 1 << b, 0.15, &mut rng)),
        vq_large: [
            random_codebook(VQ_DIM, 1 << layout.vq_large_bits[0], 0.4, &mut rng),
            random_codebook(VQ_DIM, 1 << layout.vq_large_bits[1], 0.1, &mut rng),
        ],
        vq_small: layout
            .vq_small_bits
            .map(|b| random_codebook(VQ_DIM, 1 << b, 0.1, &mut rng)),
        huffman: BTreeMap::new(),
    };
    attach_uniform_tables(&mut p).unwrap();
    p
}

/// Maps cepstra in [-2, 2], the full period range and correlation in [0, 1]
/// onto [-1, 1].
pub fn test_scaler() -> Scaler {
    let mut s = Scaler::identity();
    for d in 0..NUM_CEPS {
        s.gain[d] = 0.5;
    }
    let (lo, hi) = (MIN_PERIOD as f64, MAX_PERIOD as f64);
    s.gain[NUM_CEPS] = 2.0 / (hi - lo);
    s.offset[NUM_CEPS] = -(lo + hi) / 2.0;
    s.gain[NUM_CEPS + 1] = 2.0;
    s.offset[NUM_CEPS + 1] = -0.5;
    s
}

/// Smooth random walk through feature space.
pub fn random_stream(frames: usize, seed: u64) -> FeatureStream {
    let mut rng = rng(seed);
    let mut c = [0.0f64; NUM_CEPS];
    let mut period: f64 = rng.gen_range(40.0..200.0);
    FeatureStream::new(
        (0..frames)
            .map(|_| {
                for v in c.iter_mut() {
                    *v = (0.9 * *v + rng.gen_range(-0.3..0.3)).clamp(-2.0, 2.0);
                }
                period =
                    (period + rng.gen_range(-4.0..4.0)).clamp(MIN_PERIOD as f64, MAX_PERIOD as f64);
                FeatureFrame {
                    cepstrum: c,
                    pitch_period: period.round(),
                    pitch_correlation: rng.gen_range(0.0..1.0),
                }
            })
            .collect(),
    )
}

/// A coded frame that uses only the quantizers `profile` has.
pub fn random_coded_frame(profile: &BitrateProfile, rng: &mut ChaCha8Rng) -> CodedFrame {
    let layout = profile.layout();
    let index = |bits: u32, rng: &mut ChaCha8Rng| rng.gen_range(0..1u32 << bits) as u16;
    let large_sq = !layout.has_flags() || rng.gen_bool(0.3);
    let large_vq = !layout.has_flags() || rng.gen_bool(0.3);
    let scalar = if large_sq {
        ScalarCode::Large(index(layout.sq_large_bits, rng))
    } else {
        match layout.sq_small_bits {
            Some(b) => ScalarCode::Small(index(b, rng)),
            None => ScalarCode::Discard,
        }
    };
    let vector = if large_vq {
        VectorCode::Large([
            index(layout.vq_large_bits[0], rng),
            index(layout.vq_large_bits[1], rng),
        ])
    } else {
        match layout.vq_small_bits {
            Some(b) => VectorCode::Small(index(b, rng)),
            None => VectorCode::Discard,
        }
    };
    CodedFrame { scalar, vector }
}
