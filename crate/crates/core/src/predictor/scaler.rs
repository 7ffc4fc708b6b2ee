use crate::error::{Error, Result};
use crate::features::{FeatureFrame, FeatureStream, NUM_CEPS, NUM_FEATURES};

/// Per-dimension affine map `s = gain * (x + offset)`, clamped to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub offset: [f64; NUM_FEATURES],
    pub gain: [f64; NUM_FEATURES],
}

impl Scaler {
    pub fn identity() -> Self {
        Self {
            offset: [0.0; NUM_FEATURES],
            gain: [1.0; NUM_FEATURES],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for d in 0..NUM_FEATURES {
            if !(self.gain[d] > 0.0 && self.gain[d].is_finite() && self.offset[d].is_finite()) {
                return Err(Error::format(format!("scaler dimension {d} is not fitted")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn scale_dim(&self, d: usize, x: f64) -> f64 {
        (self.gain[d] * (x + self.offset[d])).clamp(-1.0, 1.0)
    }

    #[inline]
    pub fn unscale_dim(&self, d: usize, s: f64) -> f64 {
        s / self.gain[d] - self.offset[d]
    }

    pub fn scale(&self, frame: &FeatureFrame) -> [f64; NUM_FEATURES] {
        let v = frame.to_vector();
        std::array::from_fn(|d| self.scale_dim(d, v[d]))
    }

    pub fn scale_cepstrum(&self, c: &[f64; NUM_CEPS]) -> [f64; NUM_CEPS] {
        std::array::from_fn(|d| self.scale_dim(d, c[d]))
    }

    pub fn scale_pitch(&self, period: f64, correlation: f64) -> [f64; 2] {
        [
            self.scale_dim(NUM_CEPS, period),
            self.scale_dim(NUM_CEPS + 1, correlation),
        ]
    }

    /// Inverse map for the cepstral dimensions.
    pub fn unscale(&self, s: &[f64]) -> [f64; NUM_CEPS] {
        std::array::from_fn(|d| self.unscale_dim(d, s[d]))
    }
}

/// Fits each dimension's `[min, max]` onto `[-1, 1]`. A constant dimension
/// gets gain 1 and offset `-min`, so it scales to 0.
pub fn fit_scaler(corpus: &[FeatureStream]) -> Result<Scaler> {
    let mut lo = [f64::INFINITY; NUM_FEATURES];
    let mut hi = [f64::NEG_INFINITY; NUM_FEATURES];
    let mut seen = false;
    for frame in corpus.iter().flat_map(|s| &s.frames) {
        seen = true;
        for (d, v) in frame.to_vector().into_iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite feature in dimension {d}"
                )));
            }
            lo[d] = lo[d].min(v);
            hi[d] = hi[d].max(v);
        }
    }
    if !seen {
        return Err(Error::invalid("cannot fit scaler on an empty corpus"));
    }
    let mut scaler = Scaler::identity();
    for d in 0..NUM_FEATURES {
        if hi[d] > lo[d] {
            scaler.gain[d] = 2.0 / (hi[d] - lo[d]);
            scaler.offset[d] = -(hi[d] + lo[d]) / 2.0;
        } else {
            scaler.gain[d] = 1.0;
            scaler.offset[d] = -lo[d];
        }
    }
    Ok(scaler)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame_with(c0: f64) -> FeatureFrame {
        let mut cepstrum = [0.0; NUM_CEPS];
        cepstrum[0] = c0;
        FeatureFrame {
            cepstrum,
            pitch_period: 100.0,
            pitch_correlation: 0.5,
        }
    }

    #[test]
    fn symmetric_range() {
        let corpus = vec![FeatureStream::new(vec![
            frame_with(-10.0),
            frame_with(10.0),
        ])];
        let s = fit_scaler(&corpus).unwrap();
        assert_eq!(s.scale_dim(0, 0.0), 0.0);
        assert_eq!(s.scale_dim(0, 10.0), 1.0);
        assert_eq!(s.scale_dim(0, -10.0), -1.0);
        assert_eq!(s.scale_dim(0, 25.0), 1.0);
    }

    #[test]
    fn three_points() {
        let corpus = vec![FeatureStream::new(vec![
            frame_with(-2.0),
            frame_with(0.0),
            frame_with(2.0),
        ])];
        let s = fit_scaler(&corpus).unwrap();
        let got: Vec<f64> = [-2.0, 0.0, 2.0]
            .iter()
            .map(|&x| s.scale_dim(0, x))
            .collect();
        assert_eq!(got, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn degenerate_dimension() {
        let corpus = vec![FeatureStream::new(vec![frame_with(3.5); 4])];
        let s = fit_scaler(&corpus).unwrap();
        assert_eq!(s.gain[0], 1.0);
        assert_eq!(s.offset[0], -3.5);
        assert_eq!(s.scale_dim(0, 3.5), 0.0);
        assert_eq!(s.scale(&frame_with(3.5))[NUM_CEPS], 0.0);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(fit_scaler(&[]).is_err());
        assert!(fit_scaler(&[FeatureStream::default()]).is_err());
    }

    #[test]
    fn roundtrip_random_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let corpus: Vec<FeatureStream> = (0..3)
            .map(|_| {
                FeatureStream::new(
                    (0..50)
                        .map(|_| FeatureFrame {
                            cepstrum: std::array::from_fn(|_| rng.gen_range(-40.0..120.0)),
                            pitch_period: rng.gen_range(32.0..256.0),
                            pitch_correlation: rng.gen_range(0.0..1.0),
                        })
                        .collect(),
                )
            })
            .collect();
        let s = fit_scaler(&corpus).unwrap();
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let x: [f64; NUM_CEPS] = std::array::from_fn(|d| {
                let lo = -1.0 / s.gain[d] - s.offset[d];
                let hi = 1.0 / s.gain[d] - s.offset[d];
                rng.gen_range(lo.min(hi)..=hi.max(lo))
            });
            let back = s.unscale(&s.scale_cepstrum(&x));
            for d in 0..NUM_CEPS {
                worst = worst.max((back[d] - x[d]).abs());
            }
        }
        assert!(worst < 1e-12, "worst {worst}");
    }

    proptest! {
        #[test]
        fn fitted_values_in_unit_range(values in proptest::collection::vec(-1e3f64..1e3, 1..60)) {
            let frames: Vec<FeatureFrame> = values.iter().map(|&v| frame_with(v)).collect();
            let corpus = vec![FeatureStream::new(frames.clone())];
            let s = fit_scaler(&corpus).unwrap();
            for f in &frames {
                for v in s.scale(f) {
                    prop_assert!((-1.0..=1.0).contains(&v));
                }
            }
        }
    }
}
