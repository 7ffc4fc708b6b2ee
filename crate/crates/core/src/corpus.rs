//! Seeded synthetic speech-like corpus.
//!
//! Each utterance has a random base spectral envelope whose cepstral
//! coefficients are modulated by slow sinusoids (15 to 40 frames per
//! cycle), and a pitch contour that also varies sinusoidally. The envelope
//! drives the LPC synthesizer with a mostly voiced pulse-train excitation,
//! and the PCM is normalized to a fixed peak level.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    bands_to_cepstrum, FeatureFrame, HOP_SIZE, NUM_BANDS, NUM_CEPS, SAMPLE_RATE,
};
use crate::lpc::{band_energies_to_lpc, cepstrum_to_band_energies, synthesize_frame, SynthState};

const PEAK: f64 = 16_000.0;
const MODULATED: usize = NUM_CEPS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub utterances: usize,
    pub seconds: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            utterances: 50,
            seconds: 3.0,
            seed: 7,
        }
    }
}

/// Per-frame synthesis parameters of one utterance.
pub fn utterance_trajectory(seed: u64, frames: usize) -> Vec<FeatureFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Envelope falling with frequency plus a random tilt and ripple.
    let tilt = rng.gen_range(0.1..0.35);
    let base_log: [f64; NUM_BANDS] =
        std::array::from_fn(|b| 14.0 - tilt * b as f64 + rng.gen_range(-0.8..0.8));
    let base = bands_to_cepstrum(&base_log.map(f64::exp));
    let mods: Vec<(usize, f64, f64, f64)> = (0..MODULATED)
        .map(|coef| {
            let amp = rng.gen_range(1.0..2.5) / (1.0 + 0.15 * coef as f64);
            let period = rng.gen_range(15.0..40.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            (coef, amp, period, phase)
        })
        .collect();
    let pitch_mid = rng.gen_range(70.0..140.0);
    let pitch_depth = rng.gen_range(0.05..0.25);
    let pitch_cycle = rng.gen_range(30.0..80.0);
    let pitch_phase = rng.gen_range(0.0..2.0 * PI);
    let voicing = rng.gen_range(0.8..0.98);
    (0..frames)
        .map(|t| {
            let mut cepstrum = base;
            for &(coef, amp, period, phase) in &mods {
                cepstrum[coef] += amp * (2.0 * PI * t as f64 / period + phase).sin();
            }
            let swing = (2.0 * PI * t as f64 / pitch_cycle + pitch_phase).sin();
            FeatureFrame {
                cepstrum,
                pitch_period: pitch_mid * (1.0 + pitch_depth * swing),
                pitch_correlation: voicing,
            }
        })
        .collect()
}

/// One utterance of 16 kHz PCM.
pub fn synth_utterance(seed: u64, seconds: f64) -> Result<Vec<i16>> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(Error::invalid("utterance length must be positive"));
    }
    let frames = (seconds * f64::from(SAMPLE_RATE) / HOP_SIZE as f64).round() as usize;
    let mut state = SynthState::new(seed ^ 0xA5A5_5A5A);
    let mut pcm = Vec::with_capacity(frames * HOP_SIZE);
    for f in utterance_trajectory(seed, frames) {
        let model = band_energies_to_lpc(&cepstrum_to_band_energies(&f.cepstrum))?;
        pcm.extend(synthesize_frame(
            &model,
            (f.pitch_period, f.pitch_correlation),
            &mut state,
        ));
    }
    let peak = pcm.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Numeric(
            "synthetic utterance is silent or unbounded".into(),
        ));
    }
    let k = PEAK / peak;
    Ok(pcm.iter().map(|v| (v * k).round() as i16).collect())
}

fn utterance_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64
}

pub fn synth_corpus(config: &CorpusConfig) -> Result<Vec<Vec<i16>>> {
    (0..config.utterances)
        .into_par_iter()
        .map(|i| synth_utterance(utterance_seed(config.seed, i), config.seconds))
        .collect()
}

pub fn write_wav(path: &Path, samples: &[i16]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample(s)?;
    }
    w.finalize()?;
    Ok(())
}

/// Reads a mono 16-bit WAV, returning its samples and sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<i16>, u32)> {
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::format(format!(
            "{}: expected mono 16-bit PCM, got {} channel(s) at {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples = r
        .samples::<i16>()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((samples, spec.sample_rate))
}

/// Writes `utt_NNN.wav` files into `dir`.
pub fn write_corpus(dir: &Path, config: &CorpusConfig) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let corpus = synth_corpus(config)?;
    corpus
        .iter()
        .enumerate()
        .map(|(i, pcm)| {
            let path = dir.join(format!("utt_{i:03}.wav"));
            write_wav(&path, pcm)?;
            Ok(path)
        })
        .collect()
}
