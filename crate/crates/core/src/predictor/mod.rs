//! Frame-level cepstrum predictor: two stacked GRUs and a tanh readout.
//!
//! The first GRU sees the previous (reconstructed) scaled cepstrum
//! concatenated with the current frame's scaled pitch pair; the readout maps
//! the second GRU's state to a prediction of the current cepstrum in the
//! scaled `[-1, 1]` domain.

mod gradcheck;
mod gru;
mod io;
mod scaler;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use gradcheck::{grad_check, random_sequence, BlockCheck, GradCheckReport};
pub use gru::{Dense, GruLayer, GruStep};
pub(crate) use io::hash64;
pub use io::{
    dump_header, load_weights, read_weights, save_weights, weights_hash, write_weights,
    TensorHeader,
};
pub use scaler::{fit_scaler, Scaler};
pub use train::{
    build_training_sequences, evaluate_loss, train_from, train_predictor, Optimizer, TrainConfig,
    TrainOutcome,
};

use crate::error::{Error, Result};
use crate::features::{NUM_CEPS, NUM_FEATURES};

pub const HIDDEN1: usize = 384;
pub const HIDDEN2: usize = 128;

/// Recurrent state carried between frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorState {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

impl PredictorState {
    pub fn zeros(net: &Network) -> Self {
        Self {
            h1: vec![0.0; net.gru1.hidden],
            h2: vec![0.0; net.gru2.hidden],
        }
    }
}

/// Trainable parameters. Also used as the gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub gru1: GruLayer,
    pub gru2: GruLayer,
    pub out: Dense,
}

/// One training sequence in the scaled domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    /// Previous cepstrum followed by the current pitch pair.
    pub inputs: Vec<[f64; NUM_FEATURES]>,
    pub targets: Vec<[f64; NUM_CEPS]>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

impl Network {
    pub fn zeros(input: usize, hidden1: usize, hidden2: usize, output: usize) -> Self {
        Self {
            gru1: GruLayer::zeros(input, hidden1),
            gru2: GruLayer::zeros(hidden1, hidden2),
            out: Dense::zeros(hidden2, output),
        }
    }

    pub fn random(input: usize, hidden1: usize, hidden2: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            gru1: GruLayer::random(input, hidden1, &mut rng),
            gru2: GruLayer::random(hidden1, hidden2, &mut rng),
            out: Dense::random(hidden2, output, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.gru1.input,
            self.gru1.hidden,
            self.gru2.hidden,
            self.out.output,
        )
    }

    pub fn param_count(&self) -> usize {
        self.gru1.param_count() + self.gru2.param_count() + self.out.param_count()
    }

    /// Named parameter blocks with their shapes, in file order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let (g1, g2, o) = (&self.gru1, &self.gru2, &self.out);
        vec![
            (
                "gru1.w_input",
                vec![3 * g1.hidden, g1.input],
                &g1.w_input[..],
            ),
            (
                "gru1.w_recurrent",
                vec![3 * g1.hidden, g1.hidden],
                &g1.w_recurrent[..],
            ),
            ("gru1.bias", vec![3 * g1.hidden], &g1.bias[..]),
            (
                "gru2.w_input",
                vec![3 * g2.hidden, g2.input],
                &g2.w_input[..],
            ),
            (
                "gru2.w_recurrent",
                vec![3 * g2.hidden, g2.hidden],
                &g2.w_recurrent[..],
            ),
            ("gru2.bias", vec![3 * g2.hidden], &g2.bias[..]),
            ("out.weight", vec![o.output, o.input], &o.weight[..]),
            ("out.bias", vec![o.output], &o.bias[..]),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![
            &mut self.gru1.w_input,
            &mut self.gru1.w_recurrent,
            &mut self.gru1.bias,
            &mut self.gru2.w_input,
            &mut self.gru2.w_recurrent,
            &mut self.gru2.bias,
            &mut self.out.weight,
            &mut self.out.bias,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, data)| data.iter().all(|v| v.is_finite()))
    }

    /// Rounds every parameter to the nearest `f32`, the precision of the
    /// weight file.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, _, d)| d.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn scale_by(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn add_assign(&mut self, other: &Network) {
        let src = other.tensors();
        for (dst, (_, _, s)) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += v;
            }
        }
    }

    fn check_state(&self, state: &PredictorState) -> Result<()> {
        if state.h1.len() != self.gru1.hidden {
            return Err(Error::Dimension {
                what: "predictor state h1",
                expected: self.gru1.hidden,
                got: state.h1.len(),
            });
        }
        if state.h2.len() != self.gru2.hidden {
            return Err(Error::Dimension {
                what: "predictor state h2",
                expected: self.gru2.hidden,
                got: state.h2.len(),
            });
        }
        Ok(())
    }

    pub fn step(
        &self,
        state: &PredictorState,
        input: &[f64],
    ) -> Result<(Vec<f64>, PredictorState)> {
        self.check_state(state)?;
        if input.len() != self.gru1.input {
            return Err(Error::Dimension {
                what: "predictor input",
                expected: self.gru1.input,
                got: input.len(),
            });
        }
        let s1 = self.gru1.step(input, &state.h1);
        let s2 = self.gru2.step(&s1.h, &state.h2);
        let y = self.out.forward_tanh(&s2.h);
        Ok((y, PredictorState { h1: s1.h, h2: s2.h }))
    }

    /// Sum of squared prediction errors over `seq`, starting from `state`.
    /// When `grad` is given, the gradient of that sum is accumulated into it.
    pub fn sequence_sse(
        &self,
        seq: &Sequence,
        state: &PredictorState,
        grad: Option<&mut Network>,
    ) -> Result<(f64, PredictorState)> {
        self.check_state(state)?;
        let t_len = seq.len();
        let mut steps1 = Vec::with_capacity(t_len);
        let mut steps2 = Vec::with_capacity(t_len);
        let mut outputs = Vec::with_capacity(t_len);
        let mut h1 = state.h1.clone();
        let mut h2 = state.h2.clone();
        let mut sse = 0.0;
        for (input, target) in seq.inputs.iter().zip(&seq.targets) {
            let s1 = self.gru1.step(input, &h1);
            let s2 = self.gru2.step(&s1.h, &h2);
            let y = self.out.forward_tanh(&s2.h);
            sse += y
                .iter()
                .zip(target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            h1 = s1.h.clone();
            h2 = s2.h.clone();
            steps1.push(s1);
            steps2.push(s2);
            outputs.push(y);
        }
        let final_state = PredictorState { h1, h2 };

        if let Some(grad) = grad {
            let mut dh1_next = vec![0.0; self.gru1.hidden];
            let mut dh2_next = vec![0.0; self.gru2.hidden];
            for t in (0..t_len).rev() {
                let y = &outputs[t];
                let dy: Vec<f64> = y
                    .iter()
                    .zip(&seq.targets[t])
                    .map(|(a, b)| 2.0 * (a - b))
                    .collect();
                let mut dh2 = dh2_next;
                self.out
                    .backward_tanh(&steps2[t].h, y, &dy, &mut grad.out, &mut dh2);
                let mut dh1 = dh1_next;
                let mut dh2_prev = vec![0.0; self.gru2.hidden];
                self.gru2
                    .backward(&steps2[t], &dh2, &mut grad.gru2, &mut dh1, &mut dh2_prev);
                let mut dx = vec![0.0; self.gru1.input];
                let mut dh1_prev = vec![0.0; self.gru1.hidden];
                self.gru1
                    .backward(&steps1[t], &dh1, &mut grad.gru1, &mut dx, &mut dh1_prev);
                dh1_next = dh1_prev;
                dh2_next = dh2_prev;
            }
        }
        Ok((sse, final_state))
    }
}

/// Predictor parameters plus the feature scaler they were trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorWeights {
    pub net: Network,
    pub scaler: Scaler,
}

impl PredictorWeights {
    /// Full-size predictor (20 -> 384 -> 128 -> 18) with seeded uniform
    /// initialization.
    pub fn init(scaler: Scaler, seed: u64) -> Self {
        Self::init_sized(scaler, HIDDEN1, HIDDEN2, seed)
    }

    pub fn init_sized(scaler: Scaler, hidden1: usize, hidden2: usize, seed: u64) -> Self {
        Self {
            net: Network::random(NUM_FEATURES, hidden1, hidden2, NUM_CEPS, seed),
            scaler,
        }
    }

    pub fn zeros(scaler: Scaler) -> Self {
        Self {
            net: Network::zeros(NUM_FEATURES, HIDDEN1, HIDDEN2, NUM_CEPS),
            scaler,
        }
    }

    pub fn initial_state(&self) -> PredictorState {
        PredictorState::zeros(&self.net)
    }

    /// Predicts the current scaled cepstrum from the previous one and the
    /// current scaled pitch pair.
    pub fn predict_step(
        &self,
        state: &PredictorState,
        prev_frame: &[f64],
        pitch: &[f64],
    ) -> Result<([f64; NUM_CEPS], PredictorState)> {
        if prev_frame.len() != NUM_CEPS {
            return Err(Error::Dimension {
                what: "previous frame",
                expected: NUM_CEPS,
                got: prev_frame.len(),
            });
        }
        if pitch.len() != 2 {
            return Err(Error::Dimension {
                what: "pitch",
                expected: 2,
                got: pitch.len(),
            });
        }
        if self.net.out.output != NUM_CEPS {
            return Err(Error::Dimension {
                what: "predictor output",
                expected: NUM_CEPS,
                got: self.net.out.output,
            });
        }
        let mut input = [0.0; NUM_FEATURES];
        input[..NUM_CEPS].copy_from_slice(prev_frame);
        input[NUM_CEPS..].copy_from_slice(pitch);
        let (y, next) = self.net.step(state, &input)?;
        let mut out = [0.0; NUM_CEPS];
        out.copy_from_slice(&y);
        Ok((out, next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PredictorWeights {
        PredictorWeights::init_sized(Scaler::identity(), 16, 8, 42)
    }

    #[test]
    fn full_size_parameter_count() {
        let w = PredictorWeights::zeros(Scaler::identity());
        // 3*(384*20 + 384*384 + 384) + 3*(128*384 + 128*128 + 128) + 128*18 + 18
        assert_eq!(w.net.param_count(), 665_874);
    }

    #[test]
    fn zero_weights_predict_zero() {
        let w = PredictorWeights::zeros(Scaler::identity());
        let s = w.initial_state();
        let (y, _) = w.predict_step(&s, &[0.3; NUM_CEPS], &[0.1, -0.2]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn outputs_bounded() {
        let mut w = small();
        w.net.out.weight.iter_mut().for_each(|v| *v *= 50.0);
        let mut s = w.initial_state();
        for k in 0..20 {
            let prev = [k as f64 * 0.3 - 3.0; NUM_CEPS];
            let (y, next) = w.predict_step(&s, &prev, &[1.0, -1.0]).unwrap();
            assert!(y.iter().all(|v| v.abs() <= 1.0));
            s = next;
        }
        assert!(s.h1.iter().chain(&s.h2).all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn dimension_mismatch() {
        let w = small();
        let s = w.initial_state();
        assert!(w.predict_step(&s, &[0.0; 17], &[0.0, 0.0]).is_err());
        assert!(w.predict_step(&s, &[0.0; 18], &[0.0]).is_err());
        let bad = PredictorState {
            h1: vec![0.0; 3],
            h2: vec![0.0; 8],
        };
        assert!(w.predict_step(&bad, &[0.0; 18], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn deterministic() {
        let w = small();
        let s = w.initial_state();
        let a = w.predict_step(&s, &[0.2; 18], &[0.1, 0.4]).unwrap();
        let b = w.predict_step(&s, &[0.2; 18], &[0.1, 0.4]).unwrap();
        assert_eq!(a, b);
    }
}
