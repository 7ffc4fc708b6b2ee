//! End-to-end training: scaler, predictor, thresholds, codebooks and
//! Huffman tables, plus the bundle directory layout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::rate::{
    attach_huffman_tables, attach_uniform_tables, entropy, pick_segments, rate_report,
    tally_frequencies, RateInputs, FRAME_RATE,
};
use crate::error::{Error, Result};
use crate::features::FeatureStream;
use crate::pipeline::encode_frames;
use crate::predictor::{
    fit_scaler, load_weights, save_weights, train_from, weights_hash, PredictorWeights, TrainConfig,
};
use crate::quantization::{
    calibrate_threshold, codebook_hash, exceedance_fraction, generate_codebook_training_residuals,
    kmeans_train, l1, load_profile, save_profile, split, BitrateProfile, Codebook, ProfileId, Role,
    VQ_DIM,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BundleConfig {
    pub predictor: TrainConfig,
    pub segment_seconds: f64,
    /// Random segments drawn per utterance for codebook training.
    pub segments_per_utterance: usize,
    /// Encoder runs spent searching the thresholds that hit the target
    /// Q_L fractions once the codebooks exist.
    pub calibration_passes: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self {
            predictor: TrainConfig::default(),
            segment_seconds: 2.0,
            segments_per_utterance: 1,
            calibration_passes: 10,
            kmeans_iters: 30,
            seed: 1,
        }
    }
}

impl BundleConfig {
    pub fn segment_frames(&self) -> usize {
        (self.segment_seconds * f64::from(FRAME_RATE))
            .round()
            .max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub weights: PredictorWeights,
    pub profiles: BTreeMap<ProfileId, BitrateProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantizerReport {
    pub role: Role,
    pub codebook_bits: u32,
    /// Entropy of the emitted codewords and the mean length the trained
    /// table spends on them.
    pub entropy: f64,
    pub huffman_avg: f64,
    pub training_vectors: usize,
    pub final_distortion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileReport {
    pub profile: ProfileId,
    pub theta_sq: f64,
    pub theta_vq: f64,
    pub target_fraction_sq: f64,
    pub target_fraction_vq: f64,
    /// Q_L fractions of the gated residual pass the codebooks were
    /// trained on.
    pub calibration_fraction_sq: f64,
    pub calibration_fraction_vq: f64,
    /// Q_L fractions of the quantized encoder on the frequency segments.
    pub coded_fraction_sq: f64,
    pub coded_fraction_vq: f64,
    pub quantizers: Vec<QuantizerReport>,
    pub formula_bps: f64,
    pub flag_bps: f64,
    pub predicted_bps: f64,
    pub codebook_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub parameters: usize,
    pub weights_hash: String,
    pub profiles: Vec<ProfileReport>,
}

fn train_codebook(
    data: &[f64],
    dim: usize,
    bits: u32,
    iters: usize,
    seed: u64,
    role: Role,
) -> Result<(Codebook, f64)> {
    let k = 1usize << bits;
    let n = data.len() / dim;
    if n < k {
        return Err(Error::invalid(format!(
            "{} needs at least {k} training vectors, the corpus gave {n}; use more data or segments",
            role.name()
        )));
    }
    let result = kmeans_train(data, dim, k, iters, seed)?;
    let mut cb = result.codebook;
    cb.snap();
    Ok((cb, *result.distortions.last().expect("at least one entry")))
}

/// One step towards the threshold that equals the target quantile of its
/// own encoder norms. Plain substitution converges slowly because a higher
/// threshold lets the reconstruction drift and raises the norms, so once two
/// points are known a secant on log(quantile / threshold) is used, limited
/// to a factor of two per step.
fn fixed_point_step(theta: f64, quantile: f64, previous: &mut Option<(f64, f64)>) -> f64 {
    if !(theta > 0.0 && quantile > 0.0 && theta.is_finite() && quantile.is_finite()) {
        *previous = None;
        return quantile;
    }
    let (x, g) = (theta.ln(), (quantile / theta).ln());
    let mut next = x + g;
    if let Some((px, pg)) = *previous {
        let slope = (g - pg) / (x - px);
        if slope.is_finite() && slope < 0.0 {
            next = x - g / slope;
        }
    }
    *previous = Some((x, g));
    next.clamp(x - std::f64::consts::LN_2, x + std::f64::consts::LN_2)
        .exp()
}

/// Moves the thresholds towards the target Q_L fractions under the
/// quantized encoder. Each pass encodes `segments` once and steps each
/// threshold towards the quantile of the norms the encoder actually saw. The two components interact through the
/// reconstruction, so the pair with the smallest joint miss is kept.
fn calibrate_coded_thresholds(
    segments: &[FeatureStream],
    weights: &PredictorWeights,
    profile: &mut BitrateProfile,
    passes: usize,
) -> Result<()> {
    let layout = profile.layout();
    let targets = [layout.ql_fraction_sq, layout.ql_fraction_vq];
    let mut coder = profile.clone();
    attach_uniform_tables(&mut coder)?;
    let mut best = (f64::INFINITY, coder.theta_sq, coder.theta_vq);
    let mut history: [Option<(f64, f64)>; 2] = [None, None];
    for _ in 0..passes {
        let encoded: Vec<_> = segments
            .par_iter()
            .map(|s| encode_frames(s, weights, &coder))
            .collect::<Result<_>>()?;
        let (mut norms_sq, mut norms_vq) = (Vec::new(), Vec::new());
        let (mut ql_sq, mut ql_vq) = (0usize, 0usize);
        for e in &encoded {
            for (code, trace) in e.frames.iter().zip(&e.traces) {
                let r = split(&trace.residual);
                norms_sq.push(r.r0.abs());
                norms_vq.push(l1(r.r_vec));
                ql_sq += usize::from(code.sq_flag());
                ql_vq += usize::from(code.vq_flag());
            }
        }
        if norms_sq.is_empty() {
            return Err(Error::invalid("no frames to calibrate thresholds on"));
        }
        let n = norms_sq.len() as f64;
        let miss = (ql_sq as f64 / n - targets[0]).abs() + (ql_vq as f64 / n - targets[1]).abs();
        if miss < best.0 {
            best = (miss, coder.theta_sq, coder.theta_vq);
        }
        let quantiles = [
            calibrate_threshold(&norms_sq, targets[0])?,
            calibrate_threshold(&norms_vq, targets[1])?,
        ];
        for c in 0..2 {
            let theta = if c == 0 {
                coder.theta_sq
            } else {
                coder.theta_vq
            };
            let next = fixed_point_step(theta, quantiles[c], &mut history[c]);
            if c == 0 {
                coder.theta_sq = next;
            } else {
                coder.theta_vq = next;
            }
        }
    }
    profile.theta_sq = best.1;
    profile.theta_vq = best.2;
    Ok(())
}

/// Calibrates thresholds, trains codebooks and Huffman tables for one
/// profile against a trained predictor.
pub fn train_profile(
    corpus: &[FeatureStream],
    weights: &PredictorWeights,
    id: ProfileId,
    config: &BundleConfig,
) -> Result<(BitrateProfile, ProfileReport)> {
    let layout = id.layout();
    let seg = config.segment_frames();
    let spu = config.segments_per_utterance;
    let residual_seed = config.seed.wrapping_add(101);
    let residuals = |ts: f64, tv: f64| {
        generate_codebook_training_residuals(corpus, weights, id, ts, tv, seg, spu, residual_seed)
    };

    let (mut theta_sq, mut theta_vq) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    if id != ProfileId::High {
        let first = residuals(f64::NEG_INFINITY, f64::NEG_INFINITY)?;
        theta_sq = calibrate_threshold(&first.norms_sq, layout.ql_fraction_sq)?;
        theta_vq = calibrate_threshold(&first.norms_vq, layout.ql_fraction_vq)?;
    }
    let sets = residuals(theta_sq, theta_vq)?;

    let iters = config.kmeans_iters;
    let seed = |role: Role| config.seed.wrapping_mul(31).wrapping_add(role.tag() as u64);
    let mut counts = BTreeMap::new();
    let mut distortion = BTreeMap::new();
    let mut fit = |role: Role, data: &[f64], bits: u32| -> Result<Codebook> {
        let (cb, d) = train_codebook(data, role.dim(), bits, iters, seed(role), role)?;
        counts.insert(role, data.len() / role.dim());
        distortion.insert(role, d);
        Ok(cb)
    };

    let sq_large = fit(Role::SqLarge, &sets.sq_large, layout.sq_large_bits)?;
    let sq_small = match layout.sq_small_bits {
        Some(bits) => Some(fit(Role::SqSmall, &sets.sq_small, bits)?),
        None => None,
    };
    let stage1 = fit(Role::VqLarge1, &sets.vq_large, layout.vq_large_bits[0])?;
    let remainder: Vec<f64> = sets
        .vq_large
        .chunks_exact(VQ_DIM)
        .flat_map(|v| {
            let c = stage1.centroid(stage1.nearest(v));
            v.iter().zip(c).map(|(a, b)| a - b).collect::<Vec<_>>()
        })
        .collect();
    let stage2 = fit(Role::VqLarge2, &remainder, layout.vq_large_bits[1])?;
    let vq_small = match layout.vq_small_bits {
        Some(bits) => Some(fit(Role::VqSmall, &sets.vq_small, bits)?),
        None => None,
    };

    let mut profile = BitrateProfile {
        id,
        theta_sq,
        theta_vq,
        sq_large,
        sq_small,
        vq_large: [stage1, stage2],
        vq_small,
        huffman: BTreeMap::new(),
    };
    profile.validate()?;
    let segments = pick_segments(corpus, seg, config.seed.wrapping_add(202));
    if id != ProfileId::High {
        calibrate_coded_thresholds(&segments, weights, &mut profile, config.calibration_passes)?;
    }
    let freqs = tally_frequencies(&segments, &profile, weights)?;
    attach_huffman_tables(&mut profile, &freqs)?;

    let mut quantizers = Vec::new();
    for role in layout.roles() {
        let p = freqs.empirical(role);
        quantizers.push(QuantizerReport {
            role,
            codebook_bits: layout.role_bits(role).expect("role in layout"),
            entropy: entropy(&p),
            huffman_avg: profile.huffman_table(role)?.average_length(&p),
            training_vectors: counts[&role],
            final_distortion: distortion[&role],
        });
    }
    let rate = rate_report(&RateInputs::measured(&profile, &freqs)?)?;
    let report = ProfileReport {
        profile: id,
        theta_sq: profile.theta_sq,
        theta_vq: profile.theta_vq,
        target_fraction_sq: layout.ql_fraction_sq,
        target_fraction_vq: layout.ql_fraction_vq,
        calibration_fraction_sq: exceedance_fraction(&sets.norms_sq, theta_sq),
        calibration_fraction_vq: exceedance_fraction(&sets.norms_vq, theta_vq),
        coded_fraction_sq: freqs.ql_fraction_sq(),
        coded_fraction_vq: freqs.ql_fraction_vq(),
        quantizers,
        formula_bps: rate.formula_f64(),
        flag_bps: num_traits::ToPrimitive::to_f64(&rate.flag_bps).unwrap_or(f64::NAN),
        predicted_bps: rate.total_f64(),
        codebook_hash: format!("{:016x}", codebook_hash(&profile)),
    };
    Ok((profile, report))
}

/// Fits the scaler and trains the predictor from its seeded initialization.
pub fn train_predictor_stage(
    corpus: &[FeatureStream],
    config: &TrainConfig,
) -> Result<(PredictorWeights, Vec<f64>)> {
    let scaler = fit_scaler(corpus)?;
    let init = PredictorWeights::init(scaler, config.seed);
    let out = train_from(init, corpus, config)?;
    Ok((out.weights, out.losses))
}

/// Trains every requested profile. When `predictor` is given it is reused
/// instead of being trained.
pub fn train_bundle(
    corpus: &[FeatureStream],
    ids: &[ProfileId],
    config: &BundleConfig,
    predictor: Option<PredictorWeights>,
) -> Result<(Bundle, TrainReport)> {
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::invalid("training corpus is empty"));
    }
    let (weights, losses) = match predictor {
        Some(w) => (w, Vec::new()),
        None => train_predictor_stage(corpus, &config.predictor)?,
    };
    let mut profiles = BTreeMap::new();
    let mut reports = Vec::new();
    for &id in ids {
        let (p, r) = train_profile(corpus, &weights, id, config)?;
        profiles.insert(id, p);
        reports.push(r);
    }
    let report = TrainReport {
        losses,
        parameters: weights.net.param_count(),
        weights_hash: format!("{:016x}", weights_hash(&weights)),
        profiles: reports,
    };
    Ok((Bundle { weights, profiles }, report))
}

/// Codebook bits against Huffman bits per quantizer, one block per profile.
pub fn format_table(report: &TrainReport) -> String {
    let mut s = String::new();
    for p in &report.profiles {
        let _ = writeln!(
            s,
            "profile {:<4}  Q_L fraction sq {:.3} vq {:.3}  predicted {:.1} bps (+{:.0} flag bps = {:.1})",
            p.profile.name(),
            p.coded_fraction_sq,
            p.coded_fraction_vq,
            p.formula_bps,
            p.flag_bps,
            p.predicted_bps
        );
        let _ = writeln!(
            s,
            "  {:<6} {:>5} {:>8} {:>8} {:>8}",
            "role", "bits", "entropy", "huffman", "vectors"
        );
        for q in &p.quantizers {
            let _ = writeln!(
                s,
                "  {:<6} {:>5} {:>8.3} {:>8.3} {:>8}",
                q.role.name(),
                q.codebook_bits,
                q.entropy,
                q.huffman_avg,
                q.training_vectors
            );
        }
    }
    s
}

pub const PREDICTOR_FILE: &str = "predictor.prdw";

pub fn profile_file(id: ProfileId) -> String {
    format!("codebooks-{}.prcb", id.name())
}

pub fn save_bundle(dir: &Path, bundle: &Bundle) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = vec![dir.join(PREDICTOR_FILE)];
    save_weights(&bundle.weights, &written[0])?;
    for (id, p) in &bundle.profiles {
        let path = dir.join(profile_file(*id));
        save_profile(p, &path)?;
        written.push(path);
    }
    Ok(written)
}

pub fn load_bundle_predictor(dir: &Path) -> Result<PredictorWeights> {
    load_weights(&dir.join(PREDICTOR_FILE))
}

pub fn load_bundle_profile(dir: &Path, id: ProfileId) -> Result<BitrateProfile> {
    let p = load_profile(&dir.join(profile_file(id)))?;
    if p.id != id {
        return Err(Error::format(format!(
            "{} holds the {} profile",
            profile_file(id),
            p.id.name()
        )));
    }
    if !p.has_huffman_tables() {
        return Err(Error::format(format!(
            "{} has no Huffman tables",
            profile_file(id)
        )));
    }
    Ok(p)
}

/// Loads the predictor and every profile present in `dir`.
pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let weights = load_bundle_predictor(dir)?;
    let mut profiles = BTreeMap::new();
    for id in ProfileId::ALL {
        if dir.join(profile_file(id)).exists() {
            profiles.insert(id, load_bundle_profile(dir, id)?);
        }
    }
    if profiles.is_empty() {
        return Err(Error::format(format!(
            "no codebook files in {}",
            dir.display()
        )));
    }
    Ok(Bundle { weights, profiles })
}
