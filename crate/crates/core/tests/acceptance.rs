//! Acceptance gate. Each criterion runs at its stated tolerance and prints
//! one PASS or FAIL line; the process fails if any criterion does.

mod common;

use std::time::{Duration, Instant};

use num_rational::BigRational;
use num_traits::ToPrimitive;
use predcodec::corpus::{synth_corpus, CorpusConfig};
use predcodec::entropy::bitstream::{pack, payload_bits, unpack, Header};
use predcodec::entropy::huffman::{huffman_decode, huffman_encode, HuffmanTable};
use predcodec::entropy::pitch::{packet_pitch_codes, FRAMES_PER_PACKET, PITCH_BITS};
use predcodec::entropy::rate::{bits_per_frame, decimal, rate_report, RateInputs, FRAME_RATE};
use predcodec::eval::{evaluate, residual_variance_ratio};
use predcodec::features::{analyze, FeatureStream, PcmSignal, NUM_BANDS, NUM_CEPS};
use predcodec::lpc::{
    band_energies_to_lpc, cepstrum_to_band_energies, levinson, synthesize_frame, SynthState,
};
use predcodec::pipeline::{decode_stream, encode_stream};
use predcodec::predictor::{grad_check, random_sequence, PredictorWeights, Scaler};
use predcodec::quantization::{
    calibrate_threshold, exceedance_fraction, generate_codebook_training_residuals, kmeans_train,
    BitrateProfile, ProfileId, Role, VQ_DIM,
};
use predcodec::training::{train_bundle, Bundle, BundleConfig, TrainReport};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Gate {
    failed: Vec<u32>,
}

impl Gate {
    fn run(&mut self, id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let mut o = f();
        let took = start.elapsed();
        if let Some(limit) = limit {
            if took > limit {
                o.pass = false;
                o.detail
                    .push_str(&format!("; over the {:.0} s budget", limit.as_secs_f64()));
            }
        }
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{tag} {id:>2} {name}: {} [{:.1} s]",
            o.detail,
            took.as_secs_f64()
        );
        if !o.pass {
            self.failed.push(id);
        }
    }
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn rate_accounting() -> Outcome {
    let inputs = |id, f: &str, bits: &[(Role, &str)]| RateInputs {
        profile: id,
        ql_fraction_sq: decimal(f).unwrap(),
        ql_fraction_vq: decimal(f).unwrap(),
        bits: bits
            .iter()
            .map(|(r, v)| (*r, decimal(v).unwrap()))
            .collect(),
    };
    let high = rate_report(&inputs(
        ProfileId::High,
        "1",
        &[
            (Role::SqLarge, "7.2"),
            (Role::VqLarge1, "9.2"),
            (Role::VqLarge2, "9.6"),
        ],
    ))
    .unwrap();
    let mid = rate_report(&inputs(
        ProfileId::Mid,
        "0.07",
        &[
            (Role::SqLarge, "7.4"),
            (Role::SqSmall, "2.9"),
            (Role::VqLarge1, "9.2"),
            (Role::VqLarge2, "9.4"),
            (Role::VqSmall, "8.0"),
        ],
    ))
    .unwrap();
    let low = rate_report(&inputs(
        ProfileId::Low,
        "0.25",
        &[
            (Role::SqLarge, "7.0"),
            (Role::VqLarge1, "9.8"),
            (Role::VqLarge2, "9.9"),
        ],
    ))
    .unwrap();
    let stated_low = decimal("932").unwrap();
    let gap = to_f64(&((&low.formula_bps - &stated_low) / &stated_low));
    let pass = high.formula_bps == decimal("2875").unwrap()
        && mid.formula_bps == decimal("1470.7").unwrap()
        && low.formula_bps == decimal("942.5").unwrap()
        && gap.abs() <= 0.012;
    outcome(
        pass,
        format!(
            "high {} mid {} low {} bps exactly; low vs stated 932 is {:+.2}%",
            to_f64(&high.formula_bps),
            to_f64(&mid.formula_bps),
            to_f64(&low.formula_bps),
            gap * 100.0
        ),
    )
}

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    let mut blocks = 0;
    for seed in 1..=5u64 {
        let w = PredictorWeights::init(Scaler::identity(), seed);
        let seq = random_sequence(10, seed + 100);
        let report = grad_check(&w.net, &seq, 24, seed).unwrap();
        worst = worst.max(report.max_relative_error);
        blocks += report.blocks.len();
    }
    outcome(
        worst < 1e-4,
        format!("max relative error {worst:.2e} over {blocks} parameter blocks in 5 seeds (need < 1e-4)"),
    )
}

fn random_distribution(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..len)
        .map(|_| rng.gen_range(0.0f64..1.0).powi(4) + 1e-6)
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn entropy_coder(profiles: &[BitrateProfile]) -> Outcome {
    let mut rng = common::rng(801);
    let mut bound_ok = true;
    for t in 0..50 {
        let p = random_distribution([2usize, 16, 256, 512, 1024][t % 5], &mut rng);
        let b = bits_per_frame(&p).unwrap();
        bound_ok &= b.entropy <= b.huffman_avg + 1e-12 && b.huffman_avg < b.entropy + 1.0;
    }
    let mut roundtrip_ok = true;
    for _ in 0..1000 {
        let len = rng.gen_range(1..1025);
        let table = HuffmanTable::build(&random_distribution(len, &mut rng)).unwrap();
        let symbols: Vec<usize> = (0..rng.gen_range(0..300))
            .map(|_| rng.gen_range(0..len))
            .collect();
        let (bytes, _) = huffman_encode(&symbols, &table).unwrap();
        roundtrip_ok &= huffman_decode(&bytes, &table, symbols.len()).unwrap() == symbols;
    }
    let mut pack_ok = true;
    let mut packed = 0;
    for profile in profiles {
        for _ in 0..200 {
            let n: usize = rng.gen_range(0..200);
            let frames: Vec<_> = (0..n)
                .map(|_| common::random_coded_frame(profile, &mut rng))
                .collect();
            let pitch: Vec<u16> = (0..n.div_ceil(FRAMES_PER_PACKET))
                .map(|_| rng.gen_range(0..1u16 << PITCH_BITS))
                .collect();
            let header = Header {
                profile: profile.id,
                weights_hash: rng.gen(),
                codebook_hash: rng.gen(),
                frame_count: n as u32,
            };
            let bytes = pack(&header, &pitch, &frames, profile).unwrap();
            pack_ok &= matches!(unpack(&bytes, profile), Ok(u) if u == (header, pitch, frames));
            packed += 1;
        }
    }
    outcome(
        bound_ok && roundtrip_ok && pack_ok,
        format!(
            "entropy <= Huffman < entropy + 1 on 50 tables: {bound_ok}; 1000 fuzzed streams roundtrip: {roundtrip_ok}; {packed} fuzzed frame sequences pack/unpack exactly: {pack_ok}"
        ),
    )
}

fn pitch_rate(profile: &BitrateProfile) -> Outcome {
    let mut rng = common::rng(901);
    let mut ok = true;
    let mut checked = 0;
    for packets in [1usize, 2, 5, 25, 100, 250] {
        let frames = packets * FRAMES_PER_PACKET;
        let stream = common::random_stream(frames, packets as u64);
        let codes = packet_pitch_codes(&stream.frames);
        let coded: Vec<_> = (0..frames)
            .map(|_| common::random_coded_frame(profile, &mut rng))
            .collect();
        let total = payload_bits(&codes, &coded, profile).unwrap();
        let residual: usize = coded
            .iter()
            .map(|c| {
                c.symbols()
                    .iter()
                    .map(|(r, i)| profile.huffman_table(*r).unwrap().code(*i).1 as usize)
                    .sum::<usize>()
            })
            .sum();
        let flags = if profile.layout().has_flags() {
            2 * frames
        } else {
            0
        };
        let pitch_bits = total - residual - flags;
        // bits * frame rate / frames, kept in integers.
        ok &= pitch_bits * FRAME_RATE as usize == 275 * frames;
        checked += 1;
    }
    outcome(
        ok,
        format!("{checked} packed streams of 4..1000 frames carry exactly 275 pitch bits/s"),
    )
}

fn ar2(a1: f64, a2: f64, len: usize, seed: u64) -> Vec<f64> {
    let mut rng = common::rng(seed);
    let mut x = vec![0.0f64; len];
    for n in 2..len {
        let e: f64 = StandardNormal.sample(&mut rng);
        x[n] = a1 * x[n - 1] + a2 * x[n - 2] + e;
    }
    x
}

fn lpc_stand_in(corpus_pcm: &[i16]) -> Outcome {
    let mut worst = 0.0f64;
    for (seed, &(a1, a2)) in [(1.3, -0.6), (0.5, 0.3), (-0.9, -0.4), (1.6, -0.8)]
        .iter()
        .enumerate()
    {
        let x = ar2(a1, a2, 40_000, seed as u64);
        let r: Vec<f64> = (0..=2)
            .map(|k| x[k..].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / x.len() as f64)
            .collect();
        let m = levinson(&r, 2).unwrap();
        worst = worst
            .max((m.coefficients[0] - a1).abs())
            .max((m.coefficients[1] - a2).abs());
    }
    let mut rng = common::rng(1001);
    let mut stable = 0;
    for _ in 0..1000 {
        let e: [f64; NUM_BANDS] = std::array::from_fn(|_| 10f64.powf(rng.gen_range(-2.0..8.0)));
        if band_energies_to_lpc(&e).is_ok_and(|m| m.reflection.iter().all(|k| k.abs() < 1.0)) {
            stable += 1;
        }
    }
    let features = analyze(&PcmSignal::new(corpus_pcm.to_vec())).unwrap();
    let mut state = SynthState::new(1);
    let mut peak = 0.0f64;
    let mut finite = true;
    for f in &features.frames {
        let model = band_energies_to_lpc(&cepstrum_to_band_energies(&f.cepstrum)).unwrap();
        for s in synthesize_frame(&model, (f.pitch_period, f.pitch_correlation), &mut state) {
            finite &= s.is_finite();
            peak = peak.max(s.abs());
        }
    }
    let bounded = finite && peak < f64::from(i16::MAX);
    outcome(
        worst < 0.05 && stable == 1000 && bounded,
        format!(
            "AR(2) max coefficient error {worst:.4} (need < 0.05); {stable}/1000 random spectra stable; synthesis of a 10 s utterance ({} frames) peaks at {peak:.0} (< 32767)",
            features.len()
        ),
    )
}

struct Trained {
    corpus: Vec<FeatureStream>,
    bundle: Bundle,
    report: TrainReport,
    config: BundleConfig,
}

fn train() -> Trained {
    let config = CorpusConfig::default();
    let pcm = synth_corpus(&config).unwrap();
    let corpus: Vec<FeatureStream> = pcm
        .into_iter()
        .map(|p| analyze(&PcmSignal::new(p)).unwrap())
        .collect();
    let mut config = BundleConfig::default();
    config.predictor.epochs = 2;
    config.segments_per_utterance = 3;
    let (bundle, report) = train_bundle(&corpus, &ProfileId::ALL, &config, None).unwrap();
    Trained {
        corpus,
        bundle,
        report,
        config,
    }
}

fn end_to_end_rate(t: &Trained) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    let mut measured = Vec::new();
    for id in ProfileId::ALL {
        let profile = &t.bundle.profiles[&id];
        let (r, _) = evaluate(
            &t.corpus,
            &t.bundle.weights,
            profile,
            t.config.segment_frames(),
            17,
        )
        .unwrap();
        let dev = r.measured_bps / r.predicted_bps - 1.0;
        ok &= dev.abs() <= 0.10;
        measured.push(r.measured_bps);
        parts.push(format!(
            "{} measured {:.0} vs predicted {:.0} ({:+.1}%, Q_L {:.3}/{:.3})",
            id.name(),
            r.measured_bps,
            r.predicted_bps,
            dev * 100.0,
            r.ql_fraction_sq,
            r.ql_fraction_vq
        ));
    }
    let ordered = measured.windows(2).all(|w| w[0] < w[1]);
    let low = &t.report.profiles[0];
    let low_ok = (low.coded_fraction_sq - 0.25).abs() <= 0.03
        && (low.coded_fraction_vq - 0.25).abs() <= 0.03;
    outcome(
        ok && ordered && low_ok,
        format!(
            "{}; low < mid < high: {ordered}; low training Q_L {:.3}/{:.3}",
            parts.join("; "),
            low.coded_fraction_sq,
            low.coded_fraction_vq
        ),
    )
}

/// Criteria 3 and 4 share the same runs.
fn symmetry(t: &Trained) -> (Outcome, Outcome) {
    let mut rng = common::rng(301);
    let mut mismatched = 0usize;
    let mut identity_broken = 0usize;
    let mut frames = 0usize;
    for s in 0..100u64 {
        let len = rng.gen_range(1..=500);
        let stream = common::random_stream(len, 3000 + s);
        for id in ProfileId::ALL {
            let profile = &t.bundle.profiles[&id];
            let (bytes, encoded) = encode_stream(&stream, &t.bundle.weights, profile).unwrap();
            let decoded = decode_stream(&bytes, &t.bundle.weights, profile).unwrap();
            for (tr, d) in encoded.traces.iter().zip(&decoded.reconstructions) {
                frames += 1;
                if tr.reconstruction.map(f64::to_bits) != d.map(f64::to_bits) {
                    mismatched += 1;
                }
                if (0..NUM_CEPS).any(|k| {
                    tr.reconstruction[k] - tr.target[k] != tr.quantized_residual[k] - tr.residual[k]
                }) {
                    identity_broken += 1;
                }
            }
            if decoded.reconstructions.len() != stream.len() {
                mismatched += 1;
            }
        }
    }
    (
        outcome(
            mismatched == 0,
            format!("{mismatched} of {frames} decoded frames differ from the encoder's reconstruction (100 streams x 3 profiles)"),
        ),
        outcome(
            identity_broken == 0,
            format!("{identity_broken} of {frames} frames break c_hat - c == r_hat - r"),
        ),
    )
}

fn prediction_benefit(t: &Trained) -> Outcome {
    let ratio = residual_variance_ratio(&t.corpus, &t.bundle.weights).unwrap();
    let mut ok = ratio < 0.5;
    let mut parts = Vec::new();
    for p in &t.report.profiles {
        let q = p
            .quantizers
            .iter()
            .find(|q| q.role == Role::VqLarge1)
            .unwrap();
        ok &= q.huffman_avg < f64::from(q.codebook_bits);
        parts.push(format!(
            "{} {} : {:.2}",
            p.profile.name(),
            q.codebook_bits,
            q.huffman_avg
        ));
    }
    outcome(
        ok,
        format!(
            "residual/feature variance {ratio:.3} (need < 0.5); VQ stage-1 bits : Huffman {}",
            parts.join(", ")
        ),
    )
}

fn quantization_properties(t: &Trained) -> Outcome {
    let seg = t.config.segment_frames();
    let pool = generate_codebook_training_residuals(
        &t.corpus,
        &t.bundle.weights,
        ProfileId::High,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
        seg,
        2,
        77,
    )
    .unwrap();
    let km = kmeans_train(&pool.vq_large, VQ_DIM, 1024, 30, 5).unwrap();
    let monotone = km.distortions.windows(2).all(|w| w[1] <= w[0]);

    let high = &t.bundle.profiles[&ProfileId::High];
    let [s1, s2] = &high.vq_large;
    let mut rng = common::rng(701);
    let mut rows: Vec<&[f64]> = pool.vq_large.chunks(VQ_DIM).collect();
    rows.shuffle(&mut rng);
    let (mut one, mut two) = (0.0, 0.0);
    for v in rows.iter().take(1000) {
        let c1 = s1.centroid(s1.nearest(v));
        let rem: Vec<f64> = v.iter().zip(c1).map(|(a, b)| a - b).collect();
        let c2 = s2.centroid(s2.nearest(&rem));
        one += rem.iter().map(|x| x * x).sum::<f64>();
        two += rem
            .iter()
            .zip(c2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }

    let mut threshold_ok = true;
    let mut worst = 0.0f64;
    for (norms, f) in [
        (&pool.norms_sq, 0.25),
        (&pool.norms_vq, 0.25),
        (&pool.norms_sq, 0.07),
        (&pool.norms_vq, 0.07),
    ] {
        let theta = calibrate_threshold(norms, f).unwrap();
        let miss = (exceedance_fraction(norms, theta) - f).abs() * norms.len() as f64;
        worst = worst.max(miss);
        threshold_ok &= miss <= 1.0 + 1e-9;
    }
    outcome(
        monotone && two < one && threshold_ok,
        format!(
            "k-means K=1024 distortion non-increasing over {} iterations: {monotone}; mean error one-stage {:.4} vs two-stage {:.4} over 1000 residuals; threshold miss {worst:.2}/N (need <= 1/N)",
            km.distortions.len(),
            one / 1000.0,
            two / 1000.0
        ),
    )
}

fn main() {
    let mut gate = Gate { failed: Vec::new() };
    let fast = Some(Duration::from_secs(1));
    gate.run(1, "rate accounting", fast, rate_accounting);
    gate.run(
        5,
        "predictor gradient check",
        Some(Duration::from_secs(60)),
        gradient_check,
    );
    let random_profiles: Vec<_> = ProfileId::ALL
        .iter()
        .map(|&id| common::random_profile(id, 800 + id as u64))
        .collect();
    gate.run(9, "pitch rate", None, || pitch_rate(&random_profiles[1]));
    let utterance = synth_corpus(&CorpusConfig {
        utterances: 1,
        seconds: 10.0,
        seed: 11,
    })
    .unwrap()
    .remove(0);
    gate.run(10, "LPC stand-in", None, || lpc_stand_in(&utterance));

    let start = Instant::now();
    let trained = train();
    let training = start.elapsed();
    println!(
        "trained predictor and 3 profiles in {:.0} s (losses {:?})",
        training.as_secs_f64(),
        trained.report.losses
    );
    let budget = Duration::from_secs(600).saturating_sub(training);
    gate.run(2, "end-to-end rate", Some(budget), || {
        end_to_end_rate(&trained)
    });
    let (c3, c4) = symmetry(&trained);
    gate.run(3, "encoder/decoder symmetry", None, || c3);
    gate.run(4, "reconstruction identity", None, || c4);
    gate.run(6, "prediction benefit", None, || {
        prediction_benefit(&trained)
    });
    gate.run(7, "quantization properties", None, || {
        quantization_properties(&trained)
    });
    let trained_profiles: Vec<_> = trained.bundle.profiles.values().cloned().collect();
    gate.run(8, "entropy coder", None, || {
        entropy_coder(&trained_profiles)
    });

    if gate.failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {:?}", gate.failed);
        std::process::exit(1);
    }
}
