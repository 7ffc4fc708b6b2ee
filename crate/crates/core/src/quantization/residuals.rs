use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{l1, ProfileId, VQ_DIM};
use crate::entropy::pitch::{dequantize_pitch, packet_pitch_codes, FRAMES_PER_PACKET};
use crate::error::{Error, Result};
use crate::features::{FeatureStream, NUM_CEPS};
use crate::pipeline::{scaled_target, Recursion};
use crate::predictor::PredictorWeights;

/// Residual sets for codebook training, in scaled units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingResiduals {
    /// Scalar residuals at or above `theta_sq`.
    pub sq_large: Vec<f64>,
    pub sq_small: Vec<f64>,
    /// Row-major 17-dim residuals at or above `theta_vq`.
    pub vq_large: Vec<f64>,
    pub vq_small: Vec<f64>,
    /// L1 norms of every visited frame, per component.
    pub norms_sq: Vec<f64>,
    pub norms_vq: Vec<f64>,
}

impl TrainingResiduals {
    pub fn frames(&self) -> usize {
        self.norms_sq.len()
    }
}

/// A window of at most `segment_frames` frames at a random offset.
pub fn segment_bounds(len: usize, segment_frames: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
    if len <= segment_frames {
        return (0, len);
    }
    let start = rng.gen_range(0..=len - segment_frames);
    (start, start + segment_frames)
}

/// Runs the encoder recursion without quantization over random segments.
/// Above-threshold residuals go to the large sets and the rest to the small
/// sets. Residuals are added back to the prediction unless they fall below
/// the threshold of a component the profile discards there. With both
/// thresholds at `-inf` this is the teacher-forced recursion.
pub fn generate_codebook_training_residuals(
    corpus: &[FeatureStream],
    weights: &PredictorWeights,
    profile: ProfileId,
    theta_sq: f64,
    theta_vq: f64,
    segment_frames: usize,
    segments_per_utterance: usize,
    seed: u64,
) -> Result<TrainingResiduals> {
    if segment_frames == 0 || segments_per_utterance == 0 {
        return Err(Error::invalid("segment length and count must be positive"));
    }
    let layout = profile.layout();
    let keep_small_sq = layout.sq_small_bits.is_some();
    let keep_small_vq = layout.vq_small_bits.is_some();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TrainingResiduals::default();
    for stream in corpus.iter().filter(|s| !s.is_empty()) {
        for _ in 0..segments_per_utterance {
            let (lo, hi) = segment_bounds(stream.len(), segment_frames, &mut rng);
            let frames = &stream.frames[lo..hi];
            let pitch: Vec<(f64, f64)> = packet_pitch_codes(frames)
                .into_iter()
                .map(dequantize_pitch)
                .collect::<Result<_>>()?;
            let mut rec = Recursion::new(weights);
            for (n, frame) in frames.iter().enumerate() {
                let (prediction, next) = rec.predict(pitch[n / FRAMES_PER_PACKET])?;
                let target = scaled_target(&weights.scaler, frame);
                let r: [f64; NUM_CEPS] = std::array::from_fn(|d| target[d] - prediction[d]);
                let n_sq = r[0].abs();
                let n_vq = l1(&r[1..]);
                if !(n_sq.is_finite() && n_vq.is_finite()) {
                    return Err(Error::Numeric("non-finite residual".into()));
                }
                out.norms_sq.push(n_sq);
                out.norms_vq.push(n_vq);
                let mut recon = target;
                if n_sq >= theta_sq {
                    out.sq_large.push(r[0]);
                } else {
                    out.sq_small.push(r[0]);
                    if !keep_small_sq {
                        recon[0] = prediction[0];
                    }
                }
                if n_vq >= theta_vq {
                    out.vq_large.extend_from_slice(&r[1..]);
                } else {
                    out.vq_small.extend_from_slice(&r[1..]);
                    if !keep_small_vq {
                        recon[1..].copy_from_slice(&prediction[1..]);
                    }
                }
                rec.commit(next, recon);
            }
        }
    }
    debug_assert_eq!(out.vq_large.len() % VQ_DIM, 0);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureFrame;
    use crate::predictor::Scaler;

    fn corpus(n: usize, len: usize) -> Vec<FeatureStream> {
        (0..n)
            .map(|u| {
                FeatureStream::new(
                    (0..len)
                        .map(|t| FeatureFrame {
                            cepstrum: std::array::from_fn(|d| {
                                ((t * (d + 1) + u) as f64 * 0.1).sin() * 0.5
                            }),
                            pitch_period: 80.0,
                            pitch_correlation: 0.5,
                        })
                        .collect(),
                )
            })
            .collect()
    }

    #[test]
    fn segment_capped_at_stream_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(segment_bounds(99, 200, &mut rng), (0, 99));
        let (lo, hi) = segment_bounds(500, 200, &mut rng);
        assert_eq!(hi - lo, 200);
        assert!(hi <= 500);
    }

    #[test]
    fn ungated_collects_everything() {
        let w = PredictorWeights::init_sized(Scaler::identity(), 8, 4, 1);
        let c = corpus(3, 50);
        let r = generate_codebook_training_residuals(
            &c,
            &w,
            ProfileId::High,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
            40,
            2,
            5,
        )
        .unwrap();
        assert_eq!(r.frames(), 3 * 2 * 40);
        assert_eq!(r.sq_large.len(), r.frames());
        assert_eq!(r.vq_large.len(), r.frames() * VQ_DIM);
        assert!(r.sq_small.is_empty() && r.vq_small.is_empty());
    }

    #[test]
    fn infinite_threshold_sends_all_to_small() {
        let w = PredictorWeights::init_sized(Scaler::identity(), 8, 4, 1);
        let c = corpus(2, 30);
        let low = generate_codebook_training_residuals(
            &c,
            &w,
            ProfileId::Low,
            f64::INFINITY,
            f64::INFINITY,
            100,
            1,
            5,
        )
        .unwrap();
        assert!(low.sq_large.is_empty() && low.vq_large.is_empty());
        assert_eq!(low.sq_small.len(), 60);
        // mid keeps the below-threshold residuals, so it stays teacher-forced
        let mid = generate_codebook_training_residuals(
            &c,
            &w,
            ProfileId::Mid,
            f64::INFINITY,
            f64::INFINITY,
            100,
            1,
            5,
        )
        .unwrap();
        let forced = generate_codebook_training_residuals(
            &c,
            &w,
            ProfileId::High,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
            100,
            1,
            5,
        )
        .unwrap();
        assert_eq!(mid.sq_small, forced.sq_large);
        assert_ne!(low.norms_vq, forced.norms_vq);
    }
}
