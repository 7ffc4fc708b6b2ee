//! Classical LPC synthesis from Bark cepstra.
//!
//! Band energies are turned into a per-bin power spectrum, inverse
//! transformed to an autocorrelation and fitted with Levinson-Durbin. The
//! excitation is a mix of a pitch-synchronous impulse train and white noise.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{
    band_weights, hann_window, idct, BAND_EDGES, FRAME_SIZE, HOP_SIZE, NUM_BANDS, NUM_CEPS,
    SAMPLE_RATE, SPECTRUM_BINS,
};
use crate::predictor::Scaler;

pub const LPC_ORDER: usize = 16;
/// Gaussian lag-window bandwidth in Hz.
pub const LAG_WINDOW_HZ: f64 = 60.0;
/// Relative white-noise correction added to `r(0)`.
pub const NOISE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct LpcModel {
    /// Predictor coefficients: `x[t] ~ sum a[i] x[t - 1 - i]`.
    pub coefficients: Vec<f64>,
    pub reflection: Vec<f64>,
    /// Square root of the prediction error power.
    pub gain: f64,
}

impl LpcModel {
    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_stable(&self) -> bool {
        self.reflection.iter().all(|k| k.abs() < 1.0)
    }
}

/// Inverts the cepstral transform: inverse DCT then exponentiation.
pub fn cepstrum_to_band_energies(c: &[f64; NUM_CEPS]) -> [f64; NUM_BANDS] {
    idct(c).map(f64::exp)
}

pub fn scaled_cepstrum_to_band_energies(s: &[f64; NUM_CEPS], scaler: &Scaler) -> [f64; NUM_BANDS] {
    cepstrum_to_band_energies(&scaler.unscale(s))
}

fn window_energy() -> f64 {
    hann_window().iter().map(|w| w * w).sum()
}

/// Per-bin power spectral density, linearly interpolated between the band
/// edges.
pub fn band_energies_to_psd(energies: &[f64; NUM_BANDS]) -> Result<Vec<f64>> {
    if let Some(e) = energies.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::invalid(format!("band energy {e} is not positive")));
    }
    let weights = band_weights();
    let norm = window_energy();
    let level: Vec<f64> = energies
        .iter()
        .zip(weights)
        .map(|(e, w)| e / (w * norm))
        .collect();
    let mut psd = vec![0.0; SPECTRUM_BINS];
    for i in 0..NUM_BANDS - 1 {
        let width = BAND_EDGES[i + 1] - BAND_EDGES[i];
        for j in 0..width {
            let frac = j as f64 / width as f64;
            psd[BAND_EDGES[i] + j] = (1.0 - frac) * level[i] + frac * level[i + 1];
        }
    }
    psd[SPECTRUM_BINS - 1] = level[NUM_BANDS - 1];
    Ok(psd)
}

fn lag_window() -> &'static [f64; LPC_ORDER + 1] {
    static W: OnceLock<[f64; LPC_ORDER + 1]> = OnceLock::new();
    W.get_or_init(|| {
        std::array::from_fn(|t| {
            let x = 2.0 * PI * LAG_WINDOW_HZ * t as f64 / f64::from(SAMPLE_RATE);
            (-0.5 * x * x).exp()
        })
    })
}

/// Autocorrelation `r[0..=order]` of a process with one-sided PSD `psd`
/// sampled on `SPECTRUM_BINS` points of a `FRAME_SIZE`-point DFT.
pub fn psd_to_autocorrelation(psd: &[f64], order: usize) -> Vec<f64> {
    let n = FRAME_SIZE as f64;
    let last = psd.len() - 1;
    (0..=order)
        .map(|t| {
            let mut acc = psd[0] + psd[last] * (PI * t as f64).cos();
            for (k, &s) in psd.iter().enumerate().take(last).skip(1) {
                acc += 2.0 * s * (2.0 * PI * (k * t) as f64 / n).cos();
            }
            acc / n
        })
        .collect()
}

/// Levinson-Durbin recursion on `r[0..=order]`.
pub fn levinson(r: &[f64], order: usize) -> Result<LpcModel> {
    if r.len() <= order {
        return Err(Error::invalid(
            "autocorrelation shorter than the model order",
        ));
    }
    if !(r[0] > 0.0 && r[0].is_finite()) {
        return Err(Error::Numeric(format!(
            "autocorrelation r(0) = {} is not positive",
            r[0]
        )));
    }
    let mut a = vec![0.0; order];
    let mut reflection = Vec::with_capacity(order);
    let mut err = r[0];
    for i in 0..order {
        let mut acc = r[i + 1];
        for j in 0..i {
            acc -= a[j] * r[i - j];
        }
        let k = acc / err;
        if !(k.abs() < 1.0) {
            return Err(Error::Numeric(format!(
                "reflection coefficient {k} at order {} is not stable",
                i + 1
            )));
        }
        let prev = a.clone();
        a[i] = k;
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        reflection.push(k);
        err *= 1.0 - k * k;
    }
    Ok(LpcModel {
        coefficients: a,
        reflection,
        gain: err.sqrt(),
    })
}

pub fn band_energies_to_lpc_order(energies: &[f64; NUM_BANDS], order: usize) -> Result<LpcModel> {
    if order > LPC_ORDER {
        return Err(Error::invalid(format!("LPC order above {LPC_ORDER}")));
    }
    let psd = band_energies_to_psd(energies)?;
    let mut r = psd_to_autocorrelation(&psd, order);
    for (v, w) in r.iter_mut().zip(lag_window()) {
        *v *= w;
    }
    r[0] *= 1.0 + NOISE_FLOOR;
    levinson(&r, order)
}

pub fn band_energies_to_lpc(energies: &[f64; NUM_BANDS]) -> Result<LpcModel> {
    band_energies_to_lpc_order(energies, LPC_ORDER)
}

/// Filter memory and excitation generator, carried across frames.
#[derive(Debug, Clone)]
pub struct SynthState {
    /// Most recent output first.
    history: [f64; LPC_ORDER],
    /// Samples since the last pitch pulse.
    phase: f64,
    rng: ChaCha8Rng,
}

impl SynthState {
    pub fn new(seed: u64) -> Self {
        Self {
            history: [0.0; LPC_ORDER],
            phase: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn history(&self) -> &[f64; LPC_ORDER] {
        &self.history
    }

    /// Unit-power excitation sample: `sqrt(c)` times an impulse train of
    /// amplitude `sqrt(period)` plus `sqrt(1 - c)` times Gaussian noise.
    pub fn excitation(&mut self, period: f64, correlation: f64) -> f64 {
        let c = correlation.clamp(0.0, 1.0);
        let mut pulse = 0.0;
        self.phase += 1.0;
        if self.phase >= period {
            self.phase -= period;
            pulse = period.sqrt();
        }
        let noise: f64 = if c < 1.0 {
            StandardNormal.sample(&mut self.rng)
        } else {
            0.0
        };
        c.sqrt() * pulse + (1.0 - c).sqrt() * noise
    }

    /// All-pole filtering of one excitation sample.
    pub fn filter(&mut self, model: &LpcModel, excitation: f64) -> f64 {
        let y = model
            .coefficients
            .iter()
            .zip(&self.history)
            .map(|(a, h)| a * h)
            .sum::<f64>()
            + excitation;
        self.history.copy_within(0..LPC_ORDER - 1, 1);
        self.history[0] = y;
        y
    }
}

pub fn synthesize_samples(
    model: &LpcModel,
    pitch: (f64, f64),
    state: &mut SynthState,
    out: &mut [f64],
) {
    let period = pitch.0.max(1.0);
    for o in out.iter_mut() {
        let e = model.gain * state.excitation(period, pitch.1);
        *o = state.filter(model, e);
    }
}

/// One hop of output samples.
pub fn synthesize_frame(
    model: &LpcModel,
    pitch: (f64, f64),
    state: &mut SynthState,
) -> [f64; HOP_SIZE] {
    let mut out = [0.0; HOP_SIZE];
    synthesize_samples(model, pitch, state, &mut out);
    out
}

/// Synthesizes 16-bit PCM for a stream of unscaled feature frames.
pub fn synthesize_stream(frames: &[crate::features::FeatureFrame], seed: u64) -> Result<Vec<i16>> {
    let mut state = SynthState::new(seed);
    let mut pcm = Vec::with_capacity(frames.len() * HOP_SIZE);
    for f in frames {
        let model = band_energies_to_lpc(&cepstrum_to_band_energies(&f.cepstrum))?;
        for s in synthesize_frame(&model, (f.pitch_period, f.pitch_correlation), &mut state) {
            pcm.push(s.round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16);
        }
    }
    Ok(pcm)
}
