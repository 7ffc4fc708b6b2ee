//! LPC stand-in synthesis: Levinson-Durbin against a known AR(2) process
//! and stability over random spectra.

mod common;

use predcodec::corpus::synth_utterance;
use predcodec::features::{analyze, PcmSignal, HOP_SIZE, NUM_BANDS};
use predcodec::lpc::{
    band_energies_to_lpc, cepstrum_to_band_energies, levinson, synthesize_frame, synthesize_stream,
    SynthState,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn ar2_signal(a1: f64, a2: f64, len: usize, seed: u64) -> Vec<f64> {
    let mut rng = common::rng(seed);
    let mut x = vec![0.0f64; len];
    for n in 2..len {
        let e: f64 = StandardNormal.sample(&mut rng);
        x[n] = a1 * x[n - 1] + a2 * x[n - 2] + e;
    }
    x
}

fn autocorrelation(x: &[f64], order: usize) -> Vec<f64> {
    (0..=order)
        .map(|k| x[k..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / x.len() as f64)
        .collect()
}

#[test]
fn levinson_recovers_ar2() {
    for (seed, &(a1, a2)) in [(1.3, -0.6), (0.5, 0.3), (-0.9, -0.4), (1.6, -0.8)]
        .iter()
        .enumerate()
    {
        let x = ar2_signal(a1, a2, 40_000, seed as u64);
        let m = levinson(&autocorrelation(&x, 2), 2).unwrap();
        assert!(
            (m.coefficients[0] - a1).abs() < 0.05,
            "{:?}",
            m.coefficients
        );
        assert!(
            (m.coefficients[1] - a2).abs() < 0.05,
            "{:?}",
            m.coefficients
        );
        assert!(m.is_stable());
        assert!((m.gain - 1.0).abs() < 0.05);
    }
}

#[test]
fn levinson_exact_on_analytic_autocorrelation() {
    // Yule-Walker for AR(2) with unit innovation gives r1 / r0 = a1 / (1 - a2).
    let (a1, a2) = (1.2f64, -0.5f64);
    let rho1 = a1 / (1.0 - a2);
    let rho2 = a1 * rho1 + a2;
    let m = levinson(&[1.0, rho1, rho2], 2).unwrap();
    assert!((m.coefficients[0] - a1).abs() < 1e-12);
    assert!((m.coefficients[1] - a2).abs() < 1e-12);
    assert!(levinson(&[1.0, 1.0], 1).is_err());
    assert!(levinson(&[0.0, 0.0], 1).is_err());
}

#[test]
fn random_band_energies_give_stable_filters() {
    let mut rng = common::rng(7);
    for _ in 0..1000 {
        let e: [f64; NUM_BANDS] = std::array::from_fn(|_| 10f64.powf(rng.gen_range(-2.0..8.0)));
        let m = band_energies_to_lpc(&e).unwrap();
        assert!(m.reflection.iter().all(|k| k.abs() < 1.0));
        assert!(m.gain.is_finite() && m.gain > 0.0);
    }
}

fn rms(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = x.clone().count() as f64;
    (x.map(|v| v * v).sum::<f64>() / n).sqrt()
}

#[test]
fn ten_seconds_of_synthesis_stay_bounded() {
    let pcm = synth_utterance(3, 10.0).unwrap();
    let features = analyze(&PcmSignal::new(pcm.clone())).unwrap();
    let mut state = SynthState::new(1);
    let mut out = Vec::new();
    for f in &features.frames {
        let model = band_energies_to_lpc(&cepstrum_to_band_energies(&f.cepstrum)).unwrap();
        out.extend(synthesize_frame(
            &model,
            (f.pitch_period, f.pitch_correlation),
            &mut state,
        ));
    }
    assert!(out
        .iter()
        .all(|v| v.is_finite() && v.abs() < f64::from(i16::MAX)));
    // The filter gain follows the band energies, so loudness is preserved.
    let ratio = rms(out.iter().copied()) / rms(pcm.iter().map(|&s| f64::from(s)));
    assert!((0.5..2.0).contains(&ratio), "level ratio {ratio}");

    let a = synthesize_stream(&features.frames, 1).unwrap();
    assert_eq!(a.len(), features.len() * HOP_SIZE);
    assert_eq!(a, synthesize_stream(&features.frames, 1).unwrap());
}
