//! Frame-level analysis: 16 kHz PCM to Bark-band cepstra plus pitch.
//!
//! Frames are 320-sample Hann-windowed blocks on a 160-sample hop, so the
//! feature stream runs at 100 frames per second. Each frame carries 18
//! cepstral coefficients (orthonormal DCT-II of the log band energies) and a
//! pitch period / correlation pair from [`estimate_pitch`].

use std::f64::consts::PI;
use std::sync::OnceLock;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::pitch::estimate_pitch;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_SIZE: usize = 320;
pub const HOP_SIZE: usize = 160;
pub const NUM_BANDS: usize = 18;
pub const NUM_CEPS: usize = NUM_BANDS;
/// Cepstra followed by pitch period and pitch correlation.
pub const NUM_FEATURES: usize = NUM_CEPS + 2;
/// Number of one-sided spectrum bins for a `FRAME_SIZE` DFT.
pub const SPECTRUM_BINS: usize = FRAME_SIZE / 2 + 1;
pub const ENERGY_FLOOR: f64 = 1e-10;

pub const MIN_PERIOD: usize = 32;
pub const MAX_PERIOD: usize = 256;

/// Band edges in DFT bins (50 Hz per bin): 0, 200, ..., 6800, 8000 Hz.
pub const BAND_EDGES: [usize; NUM_BANDS] = [
    0, 4, 8, 12, 16, 20, 24, 28, 32, 40, 48, 56, 64, 80, 96, 112, 136, 160,
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcmSignal {
    samples: Vec<i16>,
}

impl PcmSignal {
    pub fn new(samples: Vec<i16>) -> Self {
        Self { samples }
    }

    /// Rejects anything other than 16 kHz input.
    pub fn with_rate(samples: Vec<i16>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::Format(format!(
                "expected {SAMPLE_RATE} Hz input, got {sample_rate} Hz"
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureFrame {
    pub cepstrum: [f64; NUM_CEPS],
    /// Samples per pitch cycle, within `[MIN_PERIOD, MAX_PERIOD]`. Integral
    /// when produced by analysis, possibly fractional after decoding.
    pub pitch_period: f64,
    pub pitch_correlation: f64,
}

impl FeatureFrame {
    pub fn to_vector(&self) -> [f64; NUM_FEATURES] {
        let mut v = [0.0; NUM_FEATURES];
        v[..NUM_CEPS].copy_from_slice(&self.cepstrum);
        v[NUM_CEPS] = self.pitch_period;
        v[NUM_CEPS + 1] = self.pitch_correlation;
        v
    }

    pub fn from_vector(v: &[f64; NUM_FEATURES]) -> Self {
        let mut cepstrum = [0.0; NUM_CEPS];
        cepstrum.copy_from_slice(&v[..NUM_CEPS]);
        Self {
            cepstrum,
            pitch_period: v[NUM_CEPS],
            pitch_correlation: v[NUM_CEPS + 1],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureStream {
    pub frames: Vec<FeatureFrame>,
}

impl FeatureStream {
    pub fn new(frames: Vec<FeatureFrame>) -> Self {
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Number of analysis frames for a signal of `len` samples.
pub fn frame_count(len: usize) -> usize {
    if len < FRAME_SIZE {
        0
    } else {
        (len - FRAME_SIZE) / HOP_SIZE + 1
    }
}

/// Periodic Hann window of length `FRAME_SIZE`.
pub fn hann_window() -> &'static [f64; FRAME_SIZE] {
    static WINDOW: OnceLock<[f64; FRAME_SIZE]> = OnceLock::new();
    WINDOW.get_or_init(|| {
        let mut w = [0.0; FRAME_SIZE];
        for (n, v) in w.iter_mut().enumerate() {
            *v = 0.5 - 0.5 * (2.0 * PI * n as f64 / FRAME_SIZE as f64).cos();
        }
        w
    })
}

pub fn frame_signal(pcm: &PcmSignal) -> Result<Vec<[f64; FRAME_SIZE]>> {
    let n = frame_count(pcm.len());
    if n == 0 {
        return Err(Error::EmptyStream {
            needed: FRAME_SIZE,
            got: pcm.len(),
        });
    }
    let window = hann_window();
    let samples = pcm.samples();
    Ok((0..n)
        .map(|i| {
            let start = i * HOP_SIZE;
            let mut frame = [0.0; FRAME_SIZE];
            for (j, v) in frame.iter_mut().enumerate() {
                *v = f64::from(samples[start + j]) * window[j];
            }
            frame
        })
        .collect())
}

/// `|X[k]|^2` for k in `0..SPECTRUM_BINS`.
pub fn power_spectrum(frame: &[f64]) -> Result<Vec<f64>> {
    if frame.len() != FRAME_SIZE {
        return Err(Error::Dimension {
            what: "analysis frame",
            expected: FRAME_SIZE,
            got: frame.len(),
        });
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FRAME_SIZE);
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft.process(&mut buf);
    Ok(buf[..SPECTRUM_BINS].iter().map(|c| c.norm_sqr()).collect())
}

/// Triangular interband weights: a bin between two edges splits its power
/// linearly between the neighbouring bands. The first and last band only get
/// one half-triangle and are doubled to compensate.
pub fn spectrum_to_bands(power: &[f64]) -> [f64; NUM_BANDS] {
    let mut bands = [0.0; NUM_BANDS];
    for i in 0..NUM_BANDS - 1 {
        let width = BAND_EDGES[i + 1] - BAND_EDGES[i];
        for j in 0..width {
            let frac = j as f64 / width as f64;
            let p = power[BAND_EDGES[i] + j];
            bands[i] += (1.0 - frac) * p;
            bands[i + 1] += frac * p;
        }
    }
    bands[0] *= 2.0;
    bands[NUM_BANDS - 1] *= 2.0;
    bands
}

/// Total triangular weight each band collects from a flat unit spectrum.
pub fn band_weights() -> &'static [f64; NUM_BANDS] {
    static WEIGHTS: OnceLock<[f64; NUM_BANDS]> = OnceLock::new();
    WEIGHTS.get_or_init(|| spectrum_to_bands(&[1.0; SPECTRUM_BINS]))
}

pub fn band_energies(frame: &[f64]) -> Result<[f64; NUM_BANDS]> {
    Ok(spectrum_to_bands(&power_spectrum(frame)?))
}

pub fn dct(input: &[f64; NUM_BANDS]) -> [f64; NUM_BANDS] {
    let table = dct_table();
    let mut out = [0.0; NUM_BANDS];
    for (k, o) in out.iter_mut().enumerate() {
        *o = (0..NUM_BANDS).map(|n| table[k][n] * input[n]).sum();
    }
    out
}

pub fn idct(input: &[f64; NUM_BANDS]) -> [f64; NUM_BANDS] {
    let table = dct_table();
    let mut out = [0.0; NUM_BANDS];
    for (n, o) in out.iter_mut().enumerate() {
        *o = (0..NUM_BANDS).map(|k| table[k][n] * input[k]).sum();
    }
    out
}

// Orthonormal DCT-II basis, table[k][n].
fn dct_table() -> &'static [[f64; NUM_BANDS]; NUM_BANDS] {
    static TABLE: OnceLock<[[f64; NUM_BANDS]; NUM_BANDS]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = NUM_BANDS as f64;
        let mut t = [[0.0; NUM_BANDS]; NUM_BANDS];
        for (k, row) in t.iter_mut().enumerate() {
            let scale = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            for (j, v) in row.iter_mut().enumerate() {
                *v = scale * (PI * k as f64 * (j as f64 + 0.5) / n).cos();
            }
        }
        t
    })
}

pub fn bands_to_cepstrum(bands: &[f64; NUM_BANDS]) -> [f64; NUM_CEPS] {
    let mut log_e = [0.0; NUM_BANDS];
    for (l, &e) in log_e.iter_mut().zip(bands) {
        *l = (e + ENERGY_FLOOR).ln();
    }
    dct(&log_e)
}

pub fn bark_cepstrum(frame: &[f64]) -> Result<[f64; NUM_CEPS]> {
    Ok(bands_to_cepstrum(&band_energies(frame)?))
}

pub fn analyze(pcm: &PcmSignal) -> Result<FeatureStream> {
    let frames = frame_signal(pcm)?;
    let mut out = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let cepstrum = bark_cepstrum(frame)?;
        let (period, correlation) = estimate_pitch(pcm, i)?;
        out.push(FeatureFrame {
            cepstrum,
            pitch_period: period as f64,
            pitch_correlation: correlation,
        });
    }
    Ok(FeatureStream::new(out))
}
