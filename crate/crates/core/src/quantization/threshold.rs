use crate::error::{Error, Result};

/// Threshold such that a fraction `f` of `norms` lies at or above it: the
/// `m`-th largest norm with `m = round(f * N)`. `f = 1` gives `-inf`.
pub fn calibrate_threshold(norms: &[f64], target_fraction: f64) -> Result<f64> {
    if norms.is_empty() {
        return Err(Error::invalid(
            "cannot calibrate a threshold on no residuals",
        ));
    }
    if !(target_fraction > 0.0 && target_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "target fraction {target_fraction} outside (0, 1]"
        )));
    }
    if norms.iter().any(|n| n.is_nan()) {
        return Err(Error::Numeric("NaN residual norm".into()));
    }
    if target_fraction == 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let m = (target_fraction * norms.len() as f64).round() as usize;
    if m == 0 {
        return Ok(f64::INFINITY);
    }
    let mut sorted = norms.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[m - 1])
}

pub fn exceedance_fraction(norms: &[f64], theta: f64) -> f64 {
    if norms.is_empty() {
        return 0.0;
    }
    norms.iter().filter(|&&n| n >= theta).count() as f64 / norms.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantile_example() {
        assert_eq!(
            calibrate_threshold(&[1.0, 2.0, 3.0, 4.0], 0.25).unwrap(),
            4.0
        );
        assert_eq!(
            calibrate_threshold(&[3.0, 1.0, 4.0, 2.0], 0.5).unwrap(),
            3.0
        );
    }

    #[test]
    fn full_fraction_disables_threshold() {
        let t = calibrate_threshold(&[0.0, 5.0], 1.0).unwrap();
        assert_eq!(t, f64::NEG_INFINITY);
        assert_eq!(exceedance_fraction(&[0.0, 5.0], t), 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(calibrate_threshold(&[], 0.5).is_err());
        assert!(calibrate_threshold(&[1.0], 0.0).is_err());
        assert!(calibrate_threshold(&[1.0], 1.5).is_err());
    }

    #[test]
    fn exceedance_on_calibration_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let norms: Vec<f64> = (0..5000).map(|_| rng.gen::<f64>()).collect();
        for f in [0.07, 0.25, 0.5] {
            let t = calibrate_threshold(&norms, f).unwrap();
            let got = exceedance_fraction(&norms, t);
            assert!((got - f).abs() <= 1.0 / norms.len() as f64, "{f}: {got}");
        }
    }

    #[test]
    fn held_out_exceedance() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let train: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>()).collect();
        let test: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>()).collect();
        let t = calibrate_threshold(&train, 0.07).unwrap();
        assert!((exceedance_fraction(&test, t) - 0.07).abs() < 0.01);
    }
}
