//! Integer-lag pitch search by normalized autocorrelation.

use crate::error::{Error, Result};
use crate::features::{frame_count, PcmSignal, FRAME_SIZE, HOP_SIZE, MAX_PERIOD, MIN_PERIOD};

/// Look-back buffer ending at the last sample of the analysis frame.
pub const PITCH_BUFFER: usize = 640;
const CORR_WINDOW: usize = PITCH_BUFFER - MAX_PERIOD;
/// A shorter-lag peak wins over the global maximum when it reaches this
/// fraction of it, so harmonics of the true period are not reported.
const SUBMULTIPLE_RATIO: f64 = 0.9;

/// Returns `(period, correlation)` for frame `frame_index` of `pcm`.
pub fn estimate_pitch(pcm: &PcmSignal, frame_index: usize) -> Result<(usize, f64)> {
    let frames = frame_count(pcm.len());
    if frame_index >= frames {
        return Err(Error::invalid(format!(
            "frame {frame_index} out of range for {frames} frames"
        )));
    }
    let end = frame_index * HOP_SIZE + FRAME_SIZE;
    let samples = pcm.samples();
    let mut buf = [0.0f64; PITCH_BUFFER];
    for (i, v) in buf.iter_mut().enumerate() {
        let idx = end as isize - PITCH_BUFFER as isize + i as isize;
        if idx >= 0 {
            *v = f64::from(samples[idx as usize]);
        }
    }
    Ok(pitch_from_buffer(&buf))
}

pub(crate) fn pitch_from_buffer(buf: &[f64; PITCH_BUFFER]) -> (usize, f64) {
    let target = &buf[PITCH_BUFFER - CORR_WINDOW..];
    let target_energy: f64 = target.iter().map(|x| x * x).sum();

    let corr: Vec<f64> = (MIN_PERIOD..=MAX_PERIOD)
        .map(|lag| {
            let start = PITCH_BUFFER - CORR_WINDOW - lag;
            let lagged = &buf[start..start + CORR_WINDOW];
            let xy: f64 = target.iter().zip(lagged).map(|(a, b)| a * b).sum();
            let yy: f64 = lagged.iter().map(|x| x * x).sum();
            let denom = (target_energy * yy).sqrt();
            if denom > 0.0 {
                xy / denom
            } else {
                0.0
            }
        })
        .collect();

    let (best_idx, best) =
        corr.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &c)| if c > acc.1 { (i, c) } else { acc },
        );

    let mut chosen = best_idx;
    if best > 0.0 {
        let last = corr.len() - 1;
        for i in 0..best_idx {
            let left = if i == 0 {
                f64::NEG_INFINITY
            } else {
                corr[i - 1]
            };
            let right = if i == last {
                f64::NEG_INFINITY
            } else {
                corr[i + 1]
            };
            if corr[i] >= left && corr[i] >= right && corr[i] >= SUBMULTIPLE_RATIO * best {
                chosen = i;
                break;
            }
        }
    }
    (MIN_PERIOD + chosen, corr[chosen].clamp(0.0, 1.0))
}
