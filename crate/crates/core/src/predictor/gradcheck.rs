use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Network, PredictorState, Sequence};
use crate::error::{Error, Result};
use crate::features::NUM_CEPS;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, keeps vanishing gradients from
/// amplifying round-off.
const REL_FLOOR: f64 = 1e-6;
pub const MAX_SEQUENCE: usize = 10;

#[derive(Debug, Clone, Serialize)]
pub struct BlockCheck {
    pub name: String,
    pub checked: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub max_relative_error: f64,
}

fn mean_loss(net: &Network, seq: &Sequence) -> Result<f64> {
    let (sse, _) = net.sequence_sse(seq, &PredictorState::zeros(net), None)?;
    Ok(sse / (seq.len() * NUM_CEPS) as f64)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares BPTT gradients with central differences. At most
/// `samples_per_block` entries of each parameter block are probed (all of
/// them when the block is smaller).
pub fn grad_check(
    net: &Network,
    seq: &Sequence,
    samples_per_block: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if seq.is_empty() || seq.len() > MAX_SEQUENCE {
        return Err(Error::invalid(format!(
            "gradient check needs 1..={MAX_SEQUENCE} frames, got {}",
            seq.len()
        )));
    }
    let mut analytic = net.zeros_like();
    net.sequence_sse(seq, &PredictorState::zeros(net), Some(&mut analytic))?;
    analytic.scale_by(1.0 / (seq.len() * NUM_CEPS) as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = net.clone();
    let names: Vec<(&'static str, usize)> = net
        .tensors()
        .iter()
        .map(|(n, _, d)| (*n, d.len()))
        .collect();
    let grads: Vec<Vec<f64>> = analytic
        .tensors()
        .iter()
        .map(|(_, _, d)| d.to_vec())
        .collect();

    let mut blocks = Vec::with_capacity(names.len());
    for (b, (name, len)) in names.into_iter().enumerate() {
        let indices: Vec<usize> = if len <= samples_per_block {
            (0..len).collect()
        } else {
            (0..samples_per_block)
                .map(|_| rng.gen_range(0..len))
                .collect()
        };
        let mut worst = 0.0f64;
        for &i in &indices {
            let orig = probe.tensors_mut()[b][i];
            probe.tensors_mut()[b][i] = orig + FD_STEP;
            let plus = mean_loss(&probe, seq)?;
            probe.tensors_mut()[b][i] = orig - FD_STEP;
            let minus = mean_loss(&probe, seq)?;
            probe.tensors_mut()[b][i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grads[b][i], numeric));
        }
        blocks.push(BlockCheck {
            name: name.to_string(),
            checked: indices.len(),
            max_relative_error: worst,
        });
    }
    let max_relative_error = blocks
        .iter()
        .map(|b| b.max_relative_error)
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        blocks,
        max_relative_error,
    })
}

/// Random scaled-domain sequence for gradient checks.
pub fn random_sequence(frames: usize, seed: u64) -> Sequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<[f64; NUM_CEPS]> = (0..frames)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-0.9..0.9)))
        .collect();
    let inputs = (0..frames)
        .map(|t| {
            let mut x = [0.0; crate::features::NUM_FEATURES];
            if t > 0 {
                x[..NUM_CEPS].copy_from_slice(&targets[t - 1]);
            }
            x[NUM_CEPS] = rng.gen_range(-1.0..1.0);
            x[NUM_CEPS + 1] = rng.gen_range(-1.0..1.0);
            x
        })
        .collect();
    Sequence { inputs, targets }
}
