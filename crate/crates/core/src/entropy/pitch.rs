//! 11-bit pitch code shared by the four frames of a packet: a 7-bit
//! log-spaced period index and a 4-bit correlation index.

use crate::error::{Error, Result};
use crate::features::{FeatureFrame, MAX_PERIOD, MIN_PERIOD};

pub const FRAMES_PER_PACKET: usize = 4;
pub const PERIOD_BITS: u32 = 7;
pub const CORRELATION_BITS: u32 = 4;
pub const PITCH_BITS: u32 = PERIOD_BITS + CORRELATION_BITS;

const PERIOD_LEVELS: u16 = 1 << PERIOD_BITS;
const CORR_LEVELS: u16 = 1 << CORRELATION_BITS;

fn period_span() -> f64 {
    (MAX_PERIOD as f64 / MIN_PERIOD as f64).ln()
}

pub fn quantize_period(period: f64) -> u16 {
    let p = period.clamp(MIN_PERIOD as f64, MAX_PERIOD as f64);
    let t = (p / MIN_PERIOD as f64).ln() / period_span();
    ((t * f64::from(PERIOD_LEVELS - 1)).round() as u16).min(PERIOD_LEVELS - 1)
}

pub fn dequantize_period(index: u16) -> f64 {
    let t = f64::from(index) / f64::from(PERIOD_LEVELS - 1);
    MIN_PERIOD as f64 * (t * period_span()).exp()
}

pub fn quantize_correlation(correlation: f64) -> u16 {
    let c = correlation.clamp(0.0, 1.0);
    ((c * f64::from(CORR_LEVELS)).floor() as u16).min(CORR_LEVELS - 1)
}

/// Cell centre of the uniform 16-cell grid.
pub fn dequantize_correlation(index: u16) -> f64 {
    (f64::from(index) + 0.5) / f64::from(CORR_LEVELS)
}

pub fn quantize_pitch(period: f64, correlation: f64) -> u16 {
    (quantize_period(period) << CORRELATION_BITS) | quantize_correlation(correlation)
}

pub fn dequantize_pitch(code: u16) -> Result<(f64, f64)> {
    if code >= 1 << PITCH_BITS {
        return Err(Error::corrupt(format!(
            "pitch code {code} exceeds {PITCH_BITS} bits"
        )));
    }
    Ok((
        dequantize_period(code >> CORRELATION_BITS),
        dequantize_correlation(code & (CORR_LEVELS - 1)),
    ))
}

/// Median period and mean correlation of up to four frames.
pub fn packet_pitch_code(frames: &[FeatureFrame]) -> u16 {
    debug_assert!(!frames.is_empty() && frames.len() <= FRAMES_PER_PACKET);
    let mut periods: Vec<f64> = frames.iter().map(|f| f.pitch_period).collect();
    periods.sort_by(f64::total_cmp);
    let mid = periods.len() / 2;
    let median = if periods.len() % 2 == 0 {
        0.5 * (periods[mid - 1] + periods[mid])
    } else {
        periods[mid]
    };
    let mean_corr = frames.iter().map(|f| f.pitch_correlation).sum::<f64>() / frames.len() as f64;
    quantize_pitch(median, mean_corr)
}

pub fn packet_pitch_codes(frames: &[FeatureFrame]) -> Vec<u16> {
    frames
        .chunks(FRAMES_PER_PACKET)
        .map(packet_pitch_code)
        .collect()
}

/// Dequantized pitch for every frame, as the decoder sees it.
pub fn frame_pitch(frames: &[FeatureFrame]) -> Vec<(f64, f64)> {
    frames
        .chunks(FRAMES_PER_PACKET)
        .flat_map(|chunk| {
            let p = dequantize_pitch(packet_pitch_code(chunk)).expect("code fits in 11 bits");
            std::iter::repeat(p).take(chunk.len())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn period_boundaries() {
        assert_eq!(quantize_period(32.0), 0);
        assert_eq!(quantize_period(256.0), 127);
        assert_eq!(quantize_period(10.0), 0);
        assert_eq!(quantize_period(999.0), 127);
        assert!((dequantize_period(0) - 32.0).abs() < 1e-12);
        assert!((dequantize_period(127) - 256.0).abs() < 1e-9);
    }

    #[test]
    fn period_roundtrip_within_one_cell() {
        let cell = 8f64.powf(1.0 / 127.0);
        assert!((cell - 1.0165).abs() < 1e-3);
        for p in MIN_PERIOD..=MAX_PERIOD {
            let back = dequantize_period(quantize_period(p as f64));
            let ratio = (back / p as f64).max(p as f64 / back);
            assert!(ratio <= cell, "period {p} -> {back}");
        }
    }

    #[test]
    fn correlation_grid() {
        assert_eq!(quantize_correlation(1.0), 15);
        assert_eq!(dequantize_correlation(15), 0.96875);
        assert_eq!(quantize_correlation(0.0), 0);
        assert_eq!(dequantize_correlation(0), 0.03125);
    }

    #[test]
    fn code_layout() {
        let code = quantize_pitch(256.0, 1.0);
        assert_eq!(code, 0x7FF);
        let (p, c) = dequantize_pitch(code).unwrap();
        assert!((p - 256.0).abs() < 1e-9);
        assert_eq!(c, 0.96875);
        assert!(dequantize_pitch(2048).is_err());
    }

    #[test]
    fn packet_statistics() {
        let f = |p: f64, c: f64| FeatureFrame {
            cepstrum: [0.0; 18],
            pitch_period: p,
            pitch_correlation: c,
        };
        let frames = [f(100.0, 0.2), f(200.0, 0.4), f(40.0, 0.6), f(120.0, 0.8)];
        let code = packet_pitch_code(&frames);
        assert_eq!(code, quantize_pitch(110.0, 0.5));
        let pitches = frame_pitch(&frames[..3]);
        assert_eq!(pitches.len(), 3);
        assert_eq!(
            pitches[0],
            dequantize_pitch(packet_pitch_code(&frames[..3])).unwrap()
        );
    }
}
