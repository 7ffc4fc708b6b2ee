use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Network, PredictorState, PredictorWeights, Scaler, Sequence};
use crate::entropy::pitch::frame_pitch;
use crate::error::{Error, Result};
use crate::features::{FeatureStream, NUM_CEPS, NUM_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Momentum SGD.
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// BPTT window in frames.
    pub truncation_length: usize,
    /// Std of Gaussian noise added to the cepstral inputs (scaled units).
    pub noise_std: f64,
    /// Utterances per gradient step.
    pub batch_size: usize,
    pub clip_norm: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 20,
            truncation_length: 64,
            noise_std: 0.02,
            batch_size: 1,
            clip_norm: 1.0,
            optimizer: Optimizer::Sgd,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.truncation_length > 0
            && self.noise_std >= 0.0
            && self.batch_size > 0
            && self.clip_norm > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "bad training configuration: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: PredictorWeights,
    /// Teacher-forced MSE before training, then after every epoch.
    pub losses: Vec<f64>,
}

/// Teacher-forced sequences: the input at frame `n` is the scaled cepstrum of
/// frame `n - 1` (zeros for the first frame) plus frame `n`'s packet pitch.
pub fn build_training_sequences(corpus: &[FeatureStream], scaler: &Scaler) -> Vec<Sequence> {
    corpus
        .iter()
        .filter(|s| !s.is_empty())
        .map(|stream| {
            let pitch = frame_pitch(&stream.frames);
            let mut prev = [0.0; NUM_CEPS];
            let mut inputs = Vec::with_capacity(stream.len());
            let mut targets = Vec::with_capacity(stream.len());
            for (frame, &(period, corr)) in stream.frames.iter().zip(&pitch) {
                let mut input = [0.0; NUM_FEATURES];
                input[..NUM_CEPS].copy_from_slice(&prev);
                input[NUM_CEPS..].copy_from_slice(&scaler.scale_pitch(period, corr));
                let target = scaler.scale_cepstrum(&frame.cepstrum);
                inputs.push(input);
                targets.push(target);
                prev = target;
            }
            Sequence { inputs, targets }
        })
        .collect()
}

/// Mean squared error per coefficient over all sequences, teacher-forced.
pub fn evaluate_loss(net: &Network, sequences: &[Sequence]) -> Result<f64> {
    let mut sse = 0.0;
    let mut count = 0usize;
    for seq in sequences {
        let (s, _) = net.sequence_sse(seq, &PredictorState::zeros(net), None)?;
        sse += s;
        count += seq.len() * NUM_CEPS;
    }
    if count == 0 {
        return Err(Error::invalid("no frames to evaluate"));
    }
    Ok(sse / count as f64)
}

pub fn train_predictor(
    corpus: &[FeatureStream],
    scaler: Scaler,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let init = PredictorWeights::init(scaler, config.seed);
    train_from(init, corpus, config)
}

enum OptState {
    Sgd { velocity: Network },
    Adam { m: Network, v: Network, t: i32 },
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptState {
    fn new(kind: Optimizer, like: &Network) -> Self {
        match kind {
            Optimizer::Sgd => OptState::Sgd {
                velocity: like.zeros_like(),
            },
            Optimizer::Adam => OptState::Adam {
                m: like.zeros_like(),
                v: like.zeros_like(),
                t: 0,
            },
        }
    }

    fn apply(&mut self, net: &mut Network, grad: &Network, config: &TrainConfig) {
        let lr = config.learning_rate;
        match self {
            OptState::Sgd { velocity } => {
                let g = grad.tensors();
                for ((w, v), (_, _, g)) in net
                    .tensors_mut()
                    .into_iter()
                    .zip(velocity.tensors_mut())
                    .zip(g)
                {
                    for i in 0..w.len() {
                        v[i] = config.momentum * v[i] - lr * g[i];
                        w[i] += v[i];
                    }
                }
            }
            OptState::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*t);
                let c2 = 1.0 - ADAM_BETA2.powi(*t);
                let g = grad.tensors();
                for (((w, m), v), (_, _, g)) in net
                    .tensors_mut()
                    .into_iter()
                    .zip(m.tensors_mut())
                    .zip(v.tensors_mut())
                    .zip(g)
                {
                    for i in 0..w.len() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

fn noise_seed(seed: u64, epoch: usize, utterance: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (utterance as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Truncated-BPTT training starting from `weights`. The hidden state is
/// carried across windows within an utterance; each window ends with one
/// optimizer step over the batch.
pub fn train_from(
    weights: PredictorWeights,
    corpus: &[FeatureStream],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let sequences = build_training_sequences(corpus, &weights.scaler);
    if sequences.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    let PredictorWeights { mut net, scaler } = weights;
    let mut losses = vec![evaluate_loss(&net, &sequences)?];
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            weights: PredictorWeights { net, scaler },
            losses,
        });
    }

    let noise = Normal::new(0.0, config.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut opt = OptState::new(config.optimizer, &net);
    let window = config.truncation_length;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..sequences.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut shuffle_rng);

        for batch in order.chunks(config.batch_size) {
            let noisy: Vec<Sequence> = batch
                .iter()
                .map(|&u| {
                    let mut seq = sequences[u].clone();
                    if config.noise_std > 0.0 {
                        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(config.seed, epoch, u));
                        for input in seq.inputs.iter_mut().skip(1) {
                            for v in &mut input[..NUM_CEPS] {
                                *v += noise.sample(&mut rng);
                            }
                        }
                    }
                    seq
                })
                .collect();
            let mut states: Vec<PredictorState> =
                noisy.iter().map(|_| PredictorState::zeros(&net)).collect();
            let chunks = noisy
                .iter()
                .map(|s| s.len().div_ceil(window))
                .max()
                .unwrap_or(0);

            for k in 0..chunks {
                let lo = k * window;
                let results: Vec<Result<(usize, Network, f64, usize, PredictorState)>> = noisy
                    .par_iter()
                    .zip(states.par_iter())
                    .enumerate()
                    .filter(|(_, (seq, _))| seq.len() > lo)
                    .map(|(i, (seq, state))| {
                        let hi = (lo + window).min(seq.len());
                        let part = Sequence {
                            inputs: seq.inputs[lo..hi].to_vec(),
                            targets: seq.targets[lo..hi].to_vec(),
                        };
                        let mut grad = net.zeros_like();
                        let (sse, next) = net.sequence_sse(&part, state, Some(&mut grad))?;
                        Ok((i, grad, sse, hi - lo, next))
                    })
                    .collect();

                let mut total = net.zeros_like();
                let mut frames = 0usize;
                for r in results {
                    let (i, grad, sse, n, next) = r?;
                    if !sse.is_finite() {
                        return Err(Error::Numeric(format!(
                            "non-finite loss in epoch {} window {k}",
                            epoch + 1
                        )));
                    }
                    total.add_assign(&grad);
                    frames += n;
                    states[i] = next;
                }
                total.scale_by(1.0 / (frames * NUM_CEPS) as f64);
                let norm = total.sq_norm().sqrt();
                if !norm.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient in epoch {}",
                        epoch + 1
                    )));
                }
                if norm > config.clip_norm {
                    total.scale_by(config.clip_norm / norm);
                }
                opt.apply(&mut net, &total, config);
            }
        }
        let loss = evaluate_loss(&net, &sequences)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "loss diverged after epoch {}",
                epoch + 1
            )));
        }
        losses.push(loss);
    }
    net.round_to_f32();
    if !net.is_finite() {
        return Err(Error::Numeric("trained weights are not finite".into()));
    }
    Ok(TrainOutcome {
        weights: PredictorWeights { net, scaler },
        losses,
    })
}
