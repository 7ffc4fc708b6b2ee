//! Corpus-level evaluation of a trained profile.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::entropy::bitstream::payload_bits;
use crate::entropy::pitch::{dequantize_pitch, packet_pitch_codes, FRAMES_PER_PACKET};
use crate::entropy::rate::{estimate_frequencies, rate_report, RateInputs, FRAME_RATE};
use crate::error::{Error, Result};
use crate::features::{FeatureStream, NUM_CEPS};
use crate::pipeline::{encode_stream, scaled_target, Recursion};
use crate::predictor::PredictorWeights;
use crate::quantization::{l1, BitrateProfile, ProfileId};

/// Frame wait (10 ms) plus the predictor's 5 ms look-ahead.
pub const ALGORITHMIC_DELAY_MS: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub profile: ProfileId,
    pub utterances: usize,
    pub frames: usize,
    /// Payload bits (pitch, flags, codes) per second of audio.
    pub measured_bps: f64,
    /// Header and byte padding, per second of audio.
    pub overhead_bps: f64,
    /// Rate formula plus flag bits, from segment frequencies.
    pub predicted_bps: f64,
    pub formula_bps: f64,
    pub flag_bps: f64,
    /// Per-frame mean squared cepstral error, scaled units.
    pub mse_mean: f64,
    pub mse_p95: f64,
    pub ql_fraction_sq: f64,
    pub ql_fraction_vq: f64,
    /// Pooled residual variance over feature variance, teacher-forced.
    pub residual_variance_ratio: f64,
    /// Same ratio for the closed-loop (quantized feedback) residuals.
    pub closed_loop_variance_ratio: f64,
    pub algorithmic_delay_ms: f64,
}

/// One row of the per-frame trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub utterance: usize,
    pub frame: usize,
    pub r0_l1: f64,
    pub rvec_l1: f64,
    pub sq_flag: bool,
    pub vq_flag: bool,
}

/// Accumulates per-dimension first and second moments.
#[derive(Debug, Clone, Default)]
pub struct PooledVariance {
    n: usize,
    sum: [f64; NUM_CEPS],
    sum_sq: [f64; NUM_CEPS],
}

impl PooledVariance {
    pub fn push(&mut self, v: &[f64; NUM_CEPS]) {
        self.n += 1;
        for d in 0..NUM_CEPS {
            self.sum[d] += v[d];
            self.sum_sq[d] += v[d] * v[d];
        }
    }

    pub fn merge(&mut self, other: &PooledVariance) {
        self.n += other.n;
        for d in 0..NUM_CEPS {
            self.sum[d] += other.sum[d];
            self.sum_sq[d] += other.sum_sq[d];
        }
    }

    /// Sum over dimensions of the population variance.
    pub fn total(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n as f64;
        (0..NUM_CEPS)
            .map(|d| (self.sum_sq[d] / n - (self.sum[d] / n).powi(2)).max(0.0))
            .sum()
    }
}

/// Teacher-forced residual and feature moments for one stream.
pub fn teacher_forced_moments(
    stream: &FeatureStream,
    weights: &PredictorWeights,
) -> Result<(PooledVariance, PooledVariance)> {
    let pitch: Vec<(f64, f64)> = packet_pitch_codes(&stream.frames)
        .into_iter()
        .map(dequantize_pitch)
        .collect::<Result<_>>()?;
    let mut rec = Recursion::new(weights);
    let (mut res, mut feat) = (PooledVariance::default(), PooledVariance::default());
    for (n, frame) in stream.frames.iter().enumerate() {
        let (p, next) = rec.predict(pitch[n / FRAMES_PER_PACKET])?;
        let c = scaled_target(&weights.scaler, frame);
        res.push(&std::array::from_fn(|d| c[d] - p[d]));
        feat.push(&c);
        rec.commit(next, c);
    }
    Ok((res, feat))
}

/// Pooled residual variance over pooled feature variance, teacher-forced.
pub fn residual_variance_ratio(
    corpus: &[FeatureStream],
    weights: &PredictorWeights,
) -> Result<f64> {
    let parts: Vec<(PooledVariance, PooledVariance)> = corpus
        .par_iter()
        .map(|s| teacher_forced_moments(s, weights))
        .collect::<Result<_>>()?;
    let (mut res, mut feat) = (PooledVariance::default(), PooledVariance::default());
    for (r, f) in &parts {
        res.merge(r);
        feat.merge(f);
    }
    ratio(res.total(), feat.total())
}

fn ratio(num: f64, den: f64) -> Result<f64> {
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(Error::invalid("features have zero variance"))
    }
}

struct StreamEval {
    bits: usize,
    bytes: usize,
    mse: Vec<f64>,
    ql_sq: usize,
    ql_vq: usize,
    closed_res: PooledVariance,
    feat: PooledVariance,
    trace: Vec<TraceRow>,
}

fn eval_stream(
    index: usize,
    stream: &FeatureStream,
    weights: &PredictorWeights,
    profile: &BitrateProfile,
) -> Result<StreamEval> {
    let (bytes, enc) = encode_stream(stream, weights, profile)?;
    let bits = payload_bits(&enc.pitch_codes, &enc.frames, profile)?;
    let mut out = StreamEval {
        bits,
        bytes: bytes.len(),
        mse: Vec::with_capacity(stream.len()),
        ql_sq: 0,
        ql_vq: 0,
        closed_res: PooledVariance::default(),
        feat: PooledVariance::default(),
        trace: Vec::with_capacity(stream.len()),
    };
    for (n, (code, t)) in enc.frames.iter().zip(&enc.traces).enumerate() {
        let mse = (0..NUM_CEPS)
            .map(|d| (t.reconstruction[d] - t.target[d]).powi(2))
            .sum::<f64>()
            / NUM_CEPS as f64;
        out.mse.push(mse);
        out.ql_sq += usize::from(code.sq_flag());
        out.ql_vq += usize::from(code.vq_flag());
        out.closed_res.push(&t.residual);
        out.feat.push(&t.target);
        out.trace.push(TraceRow {
            utterance: index,
            frame: n,
            r0_l1: t.residual[0].abs(),
            rvec_l1: l1(&t.residual[1..]),
            sq_flag: code.sq_flag(),
            vq_flag: code.vq_flag(),
        });
    }
    Ok(out)
}

/// Encodes every utterance in full and compares against the rate predicted
/// from one random segment per utterance.
pub fn evaluate(
    corpus: &[FeatureStream],
    weights: &PredictorWeights,
    profile: &BitrateProfile,
    segment_frames: usize,
    seed: u64,
) -> Result<(EvalReport, Vec<TraceRow>)> {
    let streams: Vec<StreamEval> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, s)| eval_stream(i, s, weights, profile))
        .collect::<Result<_>>()?;
    let frames: usize = streams.iter().map(|s| s.mse.len()).sum();
    if frames == 0 {
        return Err(Error::invalid("evaluation corpus has no frames"));
    }
    let seconds = frames as f64 / f64::from(FRAME_RATE);
    let bits: usize = streams.iter().map(|s| s.bits).sum();
    let bytes: usize = streams.iter().map(|s| s.bytes).sum();
    let mut mse: Vec<f64> = streams.iter().flat_map(|s| s.mse.iter().copied()).collect();
    mse.sort_by(f64::total_cmp);
    let p95 = mse[((mse.len() as f64 * 0.95).ceil() as usize).clamp(1, mse.len()) - 1];
    let (mut closed, mut feat) = (PooledVariance::default(), PooledVariance::default());
    for s in &streams {
        closed.merge(&s.closed_res);
        feat.merge(&s.feat);
    }

    let freqs = estimate_frequencies(corpus, profile, weights, segment_frames, seed)?;
    let rate = rate_report(&RateInputs::measured(profile, &freqs)?)?;
    let report = EvalReport {
        profile: profile.id,
        utterances: corpus.len(),
        frames,
        measured_bps: bits as f64 / seconds,
        overhead_bps: (bytes * 8 - bits) as f64 / seconds,
        predicted_bps: rate.total_f64(),
        formula_bps: rate.formula_f64(),
        flag_bps: num_traits::ToPrimitive::to_f64(&rate.flag_bps).unwrap_or(f64::NAN),
        mse_mean: mse.iter().sum::<f64>() / mse.len() as f64,
        mse_p95: p95,
        ql_fraction_sq: streams.iter().map(|s| s.ql_sq).sum::<usize>() as f64 / frames as f64,
        ql_fraction_vq: streams.iter().map(|s| s.ql_vq).sum::<usize>() as f64 / frames as f64,
        residual_variance_ratio: residual_variance_ratio(corpus, weights)?,
        closed_loop_variance_ratio: ratio(closed.total(), feat.total())?,
        algorithmic_delay_ms: ALGORITHMIC_DELAY_MS,
    };
    let trace = streams.into_iter().flat_map(|s| s.trace).collect();
    Ok((report, trace))
}

pub fn write_trace_csv<W: Write>(mut w: W, rows: &[TraceRow]) -> Result<()> {
    writeln!(w, "utterance,frame,r0_l1,rvec_l1,sq_flag,vq_flag")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.utterance,
            r.frame,
            r.r0_l1,
            r.rvec_l1,
            u8::from(r.sq_flag),
            u8::from(r.vq_flag)
        )?;
    }
    Ok(())
}
