//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;

use crate::corpus::{read_wav, write_corpus, write_wav, CorpusConfig};
use crate::entropy::bitstream::read_header;
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_trace_csv};
use crate::featfile::{load_features, save_features};
use crate::features::{analyze, FeatureStream, PcmSignal};
use crate::lpc::synthesize_stream;
use crate::pipeline::{decode_stream, encode_stream};
use crate::predictor::{
    dump_header, grad_check, random_sequence, Optimizer, PredictorWeights, Scaler, TrainConfig,
};
use crate::quantization::ProfileId;
use crate::training::{
    format_table, load_bundle_predictor, load_bundle_profile, save_bundle, train_bundle,
    BundleConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "predcodec",
    version,
    about = "Predictive low-bitrate speech feature codec"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a feature file from a 16 kHz mono WAV.
    Extract { input: PathBuf, output: PathBuf },
    /// Train the predictor and codebooks into a bundle directory.
    Train(TrainArgs),
    /// Encode a WAV or feature file into a bitstream.
    Encode {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "mid")]
        profile: String,
    },
    /// Decode a bitstream into a feature file and optionally a WAV.
    Decode {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        wav: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Encode a corpus and report rate, distortion and residual statistics.
    Eval {
        corpus: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "mid")]
        profile: String,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-frame residual norms and flags as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        segment_seconds: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print codebook sizes, thresholds and Huffman lengths per profile.
    ProfileReport {
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference predictor gradients.
    GradCheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = 16)]
        samples: usize,
        /// Check this weight file instead of a seeded initialization.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// List tensor names and shapes of a weight file.
    DumpWeights { input: PathBuf },
    /// Write a seeded synthetic WAV corpus.
    SynthCorpus {
        output: PathBuf,
        #[arg(long, default_value_t = 50)]
        utterances: usize,
        #[arg(long, default_value_t = 3.0)]
        seconds: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of WAV or feature files.
    pub corpus: PathBuf,
    /// Output bundle directory.
    pub output: PathBuf,
    /// low, mid, high or all.
    #[arg(long, default_value = "all")]
    pub profile: String,
    /// key = value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Reuse the predictor already in the output bundle.
    #[arg(long)]
    pub reuse_predictor: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub truncation_length: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub segment_seconds: Option<f64>,
    #[arg(long)]
    pub segments_per_utterance: Option<usize>,
    #[arg(long)]
    pub calibration_passes: Option<usize>,
    #[arg(long)]
    pub kmeans_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Keys accepted in the training config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    optimizer: Option<String>,
    truncation_length: Option<usize>,
    batch_size: Option<usize>,
    noise_std: Option<f64>,
    clip_norm: Option<f64>,
    segment_seconds: Option<f64>,
    segments_per_utterance: Option<usize>,
    calibration_passes: Option<usize>,
    kmeans_iters: Option<usize>,
    seed: Option<u64>,
}

fn parse_optimizer(s: &str) -> Result<Optimizer> {
    match s {
        "sgd" => Ok(Optimizer::Sgd),
        "adam" => Ok(Optimizer::Adam),
        _ => Err(Error::invalid(format!(
            "unknown optimizer '{s}' (sgd, adam)"
        ))),
    }
}

impl TrainArgs {
    pub fn bundle_config(&self) -> Result<BundleConfig> {
        let file: FileConfig = match &self.config {
            Some(path) => toml::from_str(&fs::read_to_string(path)?)
                .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?,
            None => FileConfig::default(),
        };
        let mut c = BundleConfig::default();
        let p: &mut TrainConfig = &mut c.predictor;
        macro_rules! pick {
            ($dst:expr, $field:ident) => {
                if let Some(v) = self.$field.clone().or(file.$field.clone()) {
                    $dst = v;
                }
            };
        }
        pick!(p.epochs, epochs);
        pick!(p.learning_rate, learning_rate);
        pick!(p.momentum, momentum);
        pick!(p.truncation_length, truncation_length);
        pick!(p.batch_size, batch_size);
        pick!(p.noise_std, noise_std);
        if let Some(v) = file.clip_norm {
            p.clip_norm = v;
        }
        if let Some(o) = self.optimizer.as_ref().or(file.optimizer.as_ref()) {
            p.optimizer = parse_optimizer(o)?;
        }
        pick!(c.segment_seconds, segment_seconds);
        pick!(c.segments_per_utterance, segments_per_utterance);
        pick!(c.calibration_passes, calibration_passes);
        pick!(c.kmeans_iters, kmeans_iters);
        pick!(c.seed, seed);
        c.predictor.seed = c.seed;
        c.predictor.validate()?;
        if !(c.segment_seconds > 0.0) || c.segments_per_utterance == 0 {
            return Err(Error::invalid("segment length and count must be positive"));
        }
        Ok(c)
    }
}

fn parse_profiles(s: &str) -> Result<Vec<ProfileId>> {
    if s == "all" {
        Ok(ProfileId::ALL.to_vec())
    } else {
        s.split(',').map(|p| ProfileId::parse(p.trim())).collect()
    }
}

fn is_ext(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Features from a WAV (analyzed) or a feature file.
pub fn load_input(path: &Path) -> Result<FeatureStream> {
    if is_ext(path, "wav") {
        let (samples, rate) = read_wav(path)?;
        analyze(&PcmSignal::with_rate(samples, rate)?)
    } else {
        load_features(path)
    }
}

/// Every `.wav` or `.prfs` file in `dir`, sorted by name.
pub fn load_corpus(dir: &Path) -> Result<Vec<FeatureStream>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| is_ext(p, "wav") || is_ext(p, "prfs"));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!(
            "no .wav or .prfs files in {}",
            dir.display()
        )));
    }
    paths.par_iter().map(|p| load_input(p)).collect()
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let config = args.bundle_config()?;
    let ids = parse_profiles(&args.profile)?;
    let corpus = load_corpus(&args.corpus)?;
    let predictor = if args.reuse_predictor {
        Some(load_bundle_predictor(&args.output)?)
    } else {
        None
    };
    let (bundle, report) = train_bundle(&corpus, &ids, &config, predictor)?;
    for path in save_bundle(&args.output, &bundle)? {
        eprintln!("wrote {}", path.display());
    }
    if !report.losses.is_empty() {
        eprintln!("predictor loss per epoch: {:?}", report.losses);
    }
    print!("{}", format_table(&report));
    if let Some(path) = &args.report {
        fs::write(
            path,
            serde_json::to_string_pretty(&report).expect("serializable"),
        )?;
    }
    Ok(())
}

fn run_profile_report(bundle: Option<&Path>) -> Result<()> {
    for id in ProfileId::ALL {
        let layout = id.layout();
        println!(
            "{:<4}  Q_L target {:>5.1}%  flags {}",
            id.name(),
            layout.ql_fraction_vq * 100.0,
            if layout.has_flags() { "yes" } else { "no" }
        );
        let profile = match bundle {
            Some(dir) if dir.join(crate::training::profile_file(id)).exists() => {
                Some(load_bundle_profile(dir, id)?)
            }
            _ => None,
        };
        if let Some(p) = &profile {
            println!(
                "      theta_sq {:.6}  theta_vq {:.6}",
                p.theta_sq, p.theta_vq
            );
        }
        for role in layout.roles() {
            let bits = layout.role_bits(role).expect("role in layout");
            match profile.as_ref().and_then(|p| p.huffman.get(&role)) {
                Some(t) => {
                    let mean_len =
                        t.lengths().iter().map(|&l| f64::from(l)).sum::<f64>() / t.len() as f64;
                    println!(
                        "      {:<6} {:>2} bits  code lengths {}..{} (mean {:.2})",
                        role.name(),
                        bits,
                        t.lengths().iter().min().expect("non-empty"),
                        t.lengths().iter().max().expect("non-empty"),
                        mean_len
                    );
                }
                None => println!("      {:<6} {:>2} bits", role.name(), bits),
            }
        }
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract { input, output } => {
            let (samples, rate) = read_wav(&input)?;
            let features = analyze(&PcmSignal::with_rate(samples, rate)?)?;
            save_features(&features, &output)?;
            eprintln!("{} frames", features.len());
        }
        Command::Train(args) => run_train(&args)?,
        Command::Encode {
            input,
            output,
            bundle,
            profile,
        } => {
            let id = ProfileId::parse(&profile)?;
            let weights = load_bundle_predictor(&bundle)?;
            let profile = load_bundle_profile(&bundle, id)?;
            let features = load_input(&input)?;
            let (bytes, _) = encode_stream(&features, &weights, &profile)?;
            fs::write(&output, &bytes)?;
            eprintln!("{} frames, {} bytes", features.len(), bytes.len());
        }
        Command::Decode {
            input,
            output,
            bundle,
            wav,
            seed,
        } => {
            let bytes = fs::read(&input)?;
            let header = read_header(&bytes)?;
            let weights = load_bundle_predictor(&bundle)?;
            let profile = load_bundle_profile(&bundle, header.profile)?;
            let decoded = decode_stream(&bytes, &weights, &profile)?;
            save_features(&decoded.features, &output)?;
            if let Some(path) = wav {
                write_wav(&path, &synthesize_stream(&decoded.features.frames, seed)?)?;
            }
            eprintln!("{} frames", decoded.features.len());
        }
        Command::Eval {
            corpus,
            bundle,
            profile,
            report,
            trace,
            segment_seconds,
            seed,
        } => {
            let id = ProfileId::parse(&profile)?;
            let weights = load_bundle_predictor(&bundle)?;
            let profile = load_bundle_profile(&bundle, id)?;
            let corpus = load_corpus(&corpus)?;
            let segment = (segment_seconds * 100.0).round().max(1.0) as usize;
            let (r, rows) = evaluate(&corpus, &weights, &profile, segment, seed)?;
            let json = serde_json::to_string_pretty(&r).expect("serializable");
            match report {
                Some(path) => fs::write(path, json)?,
                None => println!("{json}"),
            }
            if let Some(path) = trace {
                write_trace_csv(std::io::BufWriter::new(fs::File::create(path)?), &rows)?;
            }
        }
        Command::ProfileReport { bundle } => run_profile_report(bundle.as_deref())?,
        Command::GradCheck {
            seed,
            frames,
            samples,
            weights,
        } => {
            let w = match weights {
                Some(path) => crate::predictor::load_weights(&path)?,
                None => PredictorWeights::init(Scaler::identity(), seed),
            };
            let report = grad_check(&w.net, &random_sequence(frames, seed), samples, seed)?;
            for b in &report.blocks {
                println!(
                    "{:<18} {:>4} checked  max rel err {:.3e}",
                    b.name, b.checked, b.max_relative_error
                );
            }
            println!("max relative error {:.3e}", report.max_relative_error);
            if !(report.max_relative_error < 1e-4) {
                return Err(Error::Numeric("gradient check failed".into()));
            }
        }
        Command::DumpWeights { input } => {
            let bytes = fs::read(&input)?;
            for t in dump_header(&bytes)? {
                println!("{:<18} {:?}", t.name, t.shape);
            }
            let w = crate::predictor::read_weights(&bytes)?;
            println!("parameters {}", w.net.param_count());
            println!("hash {:016x}", crate::predictor::weights_hash(&w));
        }
        Command::SynthCorpus {
            output,
            utterances,
            seconds,
            seed,
        } => {
            let paths = write_corpus(
                &output,
                &CorpusConfig {
                    utterances,
                    seconds,
                    seed,
                },
            )?;
            eprintln!("wrote {} files to {}", paths.len(), output.display());
        }
    }
    Ok(())
}

/// Parses arguments and runs, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
