//! Codeword frequency estimation and bitrate accounting.
//!
//! The predicted rate is
//! `frame_rate * sum over components of (fraction * bits per frame) + 275`,
//! evaluated in exact rational arithmetic. Flag bits, which the decoder
//! needs but the formula leaves out, are reported separately.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::huffman::HuffmanTable;
use super::pitch::{FRAMES_PER_PACKET, PITCH_BITS};
use crate::error::{Error, Result};
use crate::features::{FeatureStream, HOP_SIZE, SAMPLE_RATE};
use crate::pipeline::encode_frames;
use crate::predictor::PredictorWeights;
use crate::quantization::{segment_bounds, BitrateProfile, ProfileId, Role};

/// Frames per second.
pub const FRAME_RATE: u32 = SAMPLE_RATE / HOP_SIZE as u32;

/// Per-role symbol statistics from running the encoder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolFrequencies {
    /// Raw counts per role, indexed by codeword.
    pub counts: BTreeMap<Role, Vec<u64>>,
    /// Probabilities with zero counts raised to one, so every codeword gets
    /// a Huffman code.
    pub probabilities: BTreeMap<Role, Vec<f64>>,
    pub frames: usize,
    pub ql_frames_sq: usize,
    pub ql_frames_vq: usize,
}

impl SymbolFrequencies {
    pub fn ql_fraction_sq(&self) -> f64 {
        self.ql_frames_sq as f64 / self.frames.max(1) as f64
    }

    pub fn ql_fraction_vq(&self) -> f64 {
        self.ql_frames_vq as f64 / self.frames.max(1) as f64
    }

    /// Observed codeword frequencies of `role`. Falls back to the smoothed
    /// distribution when the role was never used.
    pub fn empirical(&self, role: Role) -> Vec<f64> {
        let counts = &self.counts[&role];
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return self.probabilities[&role].clone();
        }
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    }
}

/// Adds one to zero counts and normalizes.
pub fn smooth(counts: &[u64]) -> Vec<f64> {
    let c: Vec<f64> = counts.iter().map(|&c| c.max(1) as f64).collect();
    let total: f64 = c.iter().sum();
    c.into_iter().map(|v| v / total).collect()
}

/// One randomly placed segment of at most `segment_frames` frames per
/// non-empty utterance.
pub fn pick_segments(
    corpus: &[FeatureStream],
    segment_frames: usize,
    seed: u64,
) -> Vec<FeatureStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .iter()
        .filter(|s| !s.is_empty())
        .map(|stream| {
            let (lo, hi) = segment_bounds(stream.len(), segment_frames, &mut rng);
            FeatureStream::new(stream.frames[lo..hi].to_vec())
        })
        .collect()
}

/// Runs the encoder over `segments` and tallies codeword usage per
/// quantizer role.
pub fn tally_frequencies(
    segments: &[FeatureStream],
    profile: &BitrateProfile,
    weights: &PredictorWeights,
) -> Result<SymbolFrequencies> {
    let layout = profile.layout();
    let mut counts: BTreeMap<Role, Vec<u64>> = layout
        .roles()
        .into_iter()
        .map(|r| {
            let k = profile.codebook(r).expect("validated profile").size();
            (r, vec![0u64; k])
        })
        .collect();
    // Symbols are tallied without tables, so encode against a copy carrying
    // placeholder tables.
    let mut coder = profile.clone();
    attach_uniform_tables(&mut coder)?;
    let encoded: Vec<_> = segments
        .par_iter()
        .map(|s| encode_frames(s, weights, &coder))
        .collect::<Result<_>>()?;
    let (mut frames, mut ql_sq, mut ql_vq) = (0, 0, 0);
    for code in encoded.iter().flat_map(|e| &e.frames) {
        frames += 1;
        ql_sq += usize::from(code.sq_flag());
        ql_vq += usize::from(code.vq_flag());
        for (role, index) in code.symbols() {
            counts.get_mut(&role).expect("role in layout")[index] += 1;
        }
    }
    if frames == 0 {
        return Err(Error::invalid("no frames to estimate frequencies from"));
    }
    let probabilities = counts.iter().map(|(r, c)| (*r, smooth(c))).collect();
    Ok(SymbolFrequencies {
        counts,
        probabilities,
        frames,
        ql_frames_sq: ql_sq,
        ql_frames_vq: ql_vq,
    })
}

/// Runs the encoder over one randomly placed segment per utterance and
/// tallies codeword usage per quantizer role.
pub fn estimate_frequencies(
    corpus: &[FeatureStream],
    profile: &BitrateProfile,
    weights: &PredictorWeights,
    segment_frames: usize,
    seed: u64,
) -> Result<SymbolFrequencies> {
    tally_frequencies(
        &pick_segments(corpus, segment_frames, seed),
        profile,
        weights,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BitsPerFrame {
    /// `-sum p log2 p`.
    pub entropy: f64,
    /// `sum p * len` for the Huffman code built from `p`.
    pub huffman_avg: f64,
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.log2())
        .sum::<f64>()
}

pub fn bits_per_frame(p: &[f64]) -> Result<BitsPerFrame> {
    let table = HuffmanTable::build(p)?;
    Ok(BitsPerFrame {
        entropy: entropy(p),
        huffman_avg: table.average_length(p),
    })
}

/// Builds Huffman tables from estimated frequencies.
pub fn attach_huffman_tables(
    profile: &mut BitrateProfile,
    freqs: &SymbolFrequencies,
) -> Result<()> {
    let mut tables = BTreeMap::new();
    for role in profile.layout().roles() {
        let p = freqs
            .probabilities
            .get(&role)
            .ok_or_else(|| Error::invalid(format!("no frequencies for {}", role.name())))?;
        tables.insert(role, HuffmanTable::build(p)?);
    }
    profile.huffman = tables;
    profile.validate()
}

/// Fixed-length codes for every role.
pub fn attach_uniform_tables(profile: &mut BitrateProfile) -> Result<()> {
    let mut tables = BTreeMap::new();
    for role in profile.layout().roles() {
        let k = profile
            .codebook(role)
            .ok_or_else(|| Error::invalid(format!("missing {} codebook", role.name())))?
            .size();
        tables.insert(role, HuffmanTable::build(&vec![1.0; k])?);
    }
    profile.huffman = tables;
    profile.validate()
}

/// Exact decimal literal, e.g. `"9.8"` becomes 49/5.
pub fn decimal(s: &str) -> Result<BigRational> {
    let bad = || Error::invalid(format!("'{s}' is not a decimal number"));
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let numer: BigInt = digits.parse().map_err(|_| bad())?;
    let denom = num_traits::pow(BigInt::from(10), frac.len());
    let v = BigRational::new(numer, denom);
    Ok(if neg { -v } else { v })
}

pub fn rational(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| Error::Numeric(format!("{x} is not finite")))
}

/// Inputs to the rate formula: Q_L fractions per component and bits per
/// frame per quantizer role.
#[derive(Debug, Clone, PartialEq)]
pub struct RateInputs {
    pub profile: ProfileId,
    pub ql_fraction_sq: BigRational,
    pub ql_fraction_vq: BigRational,
    pub bits: BTreeMap<Role, BigRational>,
}

impl RateInputs {
    /// Measured fractions, and the mean code length of each role's table
    /// over the codewords the encoder actually emitted.
    pub fn measured(profile: &BitrateProfile, freqs: &SymbolFrequencies) -> Result<Self> {
        let mut bits = BTreeMap::new();
        for role in profile.layout().roles() {
            let p = freqs.empirical(role);
            bits.insert(
                role,
                rational(profile.huffman_table(role)?.average_length(&p))?,
            );
        }
        let frames = BigInt::from(freqs.frames);
        Ok(Self {
            profile: profile.id,
            ql_fraction_sq: BigRational::new(BigInt::from(freqs.ql_frames_sq), frames.clone()),
            ql_fraction_vq: BigRational::new(BigInt::from(freqs.ql_frames_vq), frames),
            bits,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// The accounting formula, flags excluded.
    pub formula_bps: BigRational,
    pub pitch_bps: BigRational,
    /// Raw Q_L flag bits.
    pub flag_bps: BigRational,
}

impl RateReport {
    pub fn total_bps(&self) -> BigRational {
        &self.formula_bps + &self.flag_bps
    }

    pub fn formula_f64(&self) -> f64 {
        self.formula_bps.to_f64().unwrap_or(f64::NAN)
    }

    pub fn total_f64(&self) -> f64 {
        self.total_bps().to_f64().unwrap_or(f64::NAN)
    }
}

pub fn rate_report(inputs: &RateInputs) -> Result<RateReport> {
    let layout = inputs.profile.layout();
    let one = BigRational::from_integer(1.into());
    let zero = BigRational::zero();
    for f in [&inputs.ql_fraction_sq, &inputs.ql_fraction_vq] {
        if *f < zero || *f > one {
            return Err(Error::invalid(format!("Q_L fraction {f} outside [0, 1]")));
        }
    }
    let bits =
        |role: Role| -> Result<BigRational> {
            match layout.role_bits(role) {
                None => Ok(BigRational::zero()),
                Some(_) => inputs.bits.get(&role).cloned().ok_or_else(|| {
                    Error::invalid(format!("no bits per frame for {}", role.name()))
                }),
            }
        };
    let f_sq = &inputs.ql_fraction_sq;
    let f_vq = &inputs.ql_fraction_vq;
    let per_frame = f_sq * bits(Role::SqLarge)?
        + (&one - f_sq) * bits(Role::SqSmall)?
        + f_vq * (bits(Role::VqLarge1)? + bits(Role::VqLarge2)?)
        + (&one - f_vq) * bits(Role::VqSmall)?;
    let frame_rate = BigRational::from_integer(FRAME_RATE.into());
    let pitch_bps = BigRational::new(
        BigInt::from(PITCH_BITS * FRAME_RATE),
        BigInt::from(FRAMES_PER_PACKET),
    );
    let flag_bps = if layout.has_flags() {
        BigRational::from_integer((2 * FRAME_RATE).into())
    } else {
        BigRational::zero()
    };
    Ok(RateReport {
        formula_bps: &frame_rate * per_frame + &pitch_bps,
        pitch_bps,
        flag_bps,
    })
}
