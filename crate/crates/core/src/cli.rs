//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::augment::{balance_augment, LabeledImageSet};
use crate::config::{load_config, to_config_text};
use crate::error::{Error, Result};
use crate::io::{self, Checkpoint};
use crate::pipeline::{evaluate, run_sweep, Experiment, ExperimentConfig, Strategy, SweepAxis};
use crate::preprocess::{compute_hybrid_ratios, gaf_encode, FeatureScaler, FeatureVector, GafImage, GasSample};
use crate::stats::{akld, build_weight_matrix, ks_feature_vector, per_feature_kl, pixel_intensity_histogram};

#[derive(Debug, Parser)]
#[command(
    name = "dga-adapt",
    version,
    about = "Feature-weighted MMD-CORAL adaptation for DGA fault diagnosis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hybrid-ratio features and GAF images for a dataset.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        /// Fit the scaler on this dataset instead of the input.
        #[arg(long)]
        scaler_from: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-feature K-S statistics and the 9×9 weight matrix.
    Weights {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = crate::stats::DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Class-balanced augmented image set.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one strategy and write run artifacts.
    Train {
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a labeled dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Metrics file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Target-fraction or alpha/beta grid over several strategies.
    Sweep {
        #[command(flatten)]
        settings: Settings,
        #[arg(long, value_enum)]
        axis: AxisKind,
        /// Comma-separated fractions, or alpha/beta pairs such as `0.5/0.7,0.9/0.5`.
        #[arg(long)]
        values: String,
        /// Comma-separated strategies.
        #[arg(long, default_value = "source-only,finetune,mc,mcw")]
        strategies: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// AKLD and pixel-intensity histograms between two datasets.
    Diagnose {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = crate::stats::DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisKind {
    Fraction,
    AlphaBeta,
}

/// Experiment settings: a config file plus overriding flags.
#[derive(Debug, Clone, Default, Args)]
pub struct Settings {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<String>,
    /// Single master seed; replaces the configured seed list.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Settings {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("source", self.source.as_ref().map(|p| p.display().to_string()));
        push("target", self.target.as_ref().map(|p| p.display().to_string()));
        push("strategy", self.strategy.clone());
        push("seeds", self.seed.map(|s| s.to_string()));
        push("alpha", self.alpha.map(|v| v.to_string()));
        push("beta", self.beta.map(|v| v.to_string()));
        push("epsilon", self.epsilon.map(|v| v.to_string()));
        push("target_fraction", self.fraction.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{kv}`")))?;
            if !crate::config::CONFIG_KEYS.contains(&k.trim()) {
                return Err(Error::Config(format!("unknown key `{}`", k.trim())));
            }
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        load_config(self.config.as_deref(), &self.overrides()?)
    }
}

fn features_of(samples: &[GasSample]) -> Result<Vec<FeatureVector>> {
    samples.iter().map(compute_hybrid_ratios).collect()
}

fn encode(samples: &[GasSample], scaler: &FeatureScaler) -> Result<Vec<GafImage>> {
    samples
        .iter()
        .map(|s| Ok(gaf_encode(&scaler.scale(&compute_hybrid_ratios(s)?))))
        .collect()
}

fn preprocess(input: &Path, scaler_from: Option<&Path>, out: &Path) -> Result<()> {
    let samples = io::load_dataset(input)?;
    let features = features_of(&samples)?;
    let scaler = match scaler_from {
        Some(p) => FeatureScaler::fit(&features_of(&io::load_dataset(p)?)?)?,
        None => FeatureScaler::fit(&features)?,
    };
    let labels: Vec<_> = samples.iter().map(|s| s.label).collect();
    let images = encode(&samples, &scaler)?;
    io::write_text(out.join("features.csv"), &io::features_to_csv(&features, &labels))?;
    io::write_text(out.join("gaf.csv"), &io::gaf_to_csv(&images, &labels))?;
    io::write_text(out.join("scaler.csv"), &io::scaler_to_csv(&scaler))
}

fn weights(source: &Path, target: &Path, epsilon: f64, out: &Path) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!(
            "epsilon={epsilon} out of range; valid range is (0, inf)"
        )));
    }
    let ks = ks_feature_vector(
        &features_of(&io::load_dataset(source)?)?,
        &features_of(&io::load_dataset(target)?)?,
    )?;
    let w = build_weight_matrix(&ks, epsilon)?;
    io::write_text(out.join("ks.csv"), &io::ks_to_csv(&ks))?;
    io::write_text(out.join("weights.csv"), &io::weights_to_csv(&w))
}

fn augment(input: &Path, settings: &Settings, out: &Path) -> Result<()> {
    let cfg = settings.resolve()?;
    let samples = io::load_dataset(input)?;
    let scaler = FeatureScaler::fit(&features_of(&samples)?)?;
    let images = encode(&samples, &scaler)?;
    let pairs = images
        .into_iter()
        .zip(&samples)
        .enumerate()
        .map(|(i, (im, s))| {
            s.label
                .map(|l| (im, l))
                .ok_or_else(|| Error::invalid(format!("sample {i} has no label; augmentation needs labels")))
        })
        .collect::<Result<Vec<_>>>()?;
    let set = LabeledImageSet::from_originals(pairs)?;
    let per_class = cfg
        .per_class_target
        .unwrap_or_else(|| set.class_counts().into_iter().max().unwrap_or(0));
    let seed = cfg.seeds[0];
    let balanced = balance_augment(
        &set,
        per_class,
        &cfg.augmentation,
        crate::seed::derive_seed(seed, "augment"),
    )?;
    io::write_text(out.join("images.csv"), &io::images_to_csv(balanced.items()))
}

/// Trains `cfg.strategy` for the first configured seed and writes the run
/// directory: `config.cfg`, `metrics.txt`, `checkpoint.txt` and, for the
/// adapted strategies, `weights.csv` (plus `ks.csv` for MCW).
pub fn train_run(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let exp = Experiment::from_config(cfg.clone())?;
    let seed = cfg.seeds[0];
    io::write_text(out.join("config.cfg"), &to_config_text(cfg))?;
    let outcome = exp.run(cfg.strategy, seed)?;
    let meta = [("strategy", cfg.strategy.to_string()), ("seed", seed.to_string())];
    io::write_text(out.join("metrics.txt"), &outcome.metrics.to_text(&meta))?;
    if let Some(w) = &outcome.model.weights {
        io::write_text(out.join("weights.csv"), &io::weights_to_csv(w))?;
    }
    if let Some(ks) = &outcome.model.ks {
        io::write_text(out.join("ks.csv"), &io::ks_to_csv(ks))?;
    }
    Checkpoint {
        params: outcome.model.params,
        scaler: *exp.scaler(),
        strategy: cfg.strategy,
        seed,
    }
    .save(out.join("checkpoint.txt"))
}

fn evaluate_checkpoint(checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let samples = io::load_dataset(data)?;
    let labels = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.label
                .ok_or_else(|| Error::invalid(format!("sample {i} has no label")))
        })
        .collect::<Result<Vec<_>>>()?;
    let images = encode(&samples, &ck.scaler)?;
    let metrics = evaluate(&ck.params, &images, &labels)?;
    let text = metrics.to_text(&[("strategy", ck.strategy.to_string()), ("seed", ck.seed.to_string())]);
    match out {
        Some(p) => io::write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_axis(kind: AxisKind, values: &str) -> Result<SweepAxis> {
    let bad = |v: &str| Error::Config(format!("bad sweep value `{v}`"));
    let items: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    Ok(match kind {
        AxisKind::Fraction => SweepAxis::TargetFraction(
            items
                .iter()
                .map(|v| v.parse().map_err(|_| bad(v)))
                .collect::<Result<_>>()?,
        ),
        AxisKind::AlphaBeta => SweepAxis::AlphaBeta(
            items
                .iter()
                .map(|v| {
                    let (a, b) = v.split_once('/').ok_or_else(|| bad(v))?;
                    Ok((a.parse().map_err(|_| bad(v))?, b.parse().map_err(|_| bad(v))?))
                })
                .collect::<Result<_>>()?,
        ),
    })
}

/// Writes `config.cfg`, `sweep.csv` and one metrics file per run under
/// `runs/`.
pub fn sweep_run(cfg: &ExperimentConfig, axis: &SweepAxis, strategies: &[Strategy], out: &Path) -> Result<()> {
    let exp = Experiment::from_config(cfg.clone())?;
    io::write_text(out.join("config.cfg"), &to_config_text(cfg))?;
    let report = run_sweep(&exp, axis, strategies)?;
    for run in &report.runs {
        let name = format!("{}_{}_seed{}.txt", run.axis.replace('/', "-"), run.strategy, run.seed);
        let meta = [
            ("axis", run.axis.clone()),
            ("strategy", run.strategy.to_string()),
            ("seed", run.seed.to_string()),
        ];
        io::write_text(out.join("runs").join(name), &run.metrics.to_text(&meta))?;
    }
    io::write_text(out.join("sweep.csv"), &report.to_csv())
}

fn diagnose(source: &Path, target: &Path, bins: usize, out: &Path) -> Result<()> {
    let s = io::load_dataset(source)?;
    let t = io::load_dataset(target)?;
    let (fs, ft) = (features_of(&s)?, features_of(&t)?);
    let per = per_feature_kl(&fs, &ft, bins)?;
    let avg = akld(&fs, &ft, bins)?;
    let scaler = FeatureScaler::fit(&fs)?;
    let hist = pixel_intensity_histogram(&encode(&s, &scaler)?, &encode(&t, &scaler)?, bins)?;
    io::write_text(out.join("akld.csv"), &io::akld_to_csv(&per, avg))?;
    io::write_text(out.join("histogram.csv"), &hist.to_csv())?;
    println!("AKLD={avg}");
    Ok(())
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Preprocess {
            input,
            scaler_from,
            out,
        } => preprocess(input, scaler_from.as_deref(), out),
        Command::Weights {
            source,
            target,
            epsilon,
            out,
        } => weights(source, target, *epsilon, out),
        Command::Augment { input, settings, out } => augment(input, settings, out),
        Command::Train { settings, out } => train_run(&settings.resolve()?, out),
        Command::Evaluate { checkpoint, data, out } => evaluate_checkpoint(checkpoint, data, out.as_deref()),
        Command::Sweep {
            settings,
            axis,
            values,
            strategies,
            out,
        } => {
            let cfg = settings.resolve()?;
            let strategies = strategies
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<Vec<Strategy>>>()?;
            sweep_run(&cfg, &parse_axis(*axis, values)?, &strategies, out)
        }
        Command::Diagnose {
            source,
            target,
            bins,
            out,
        } => diagnose(source, target, *bins, out),
    }
}

/// Parses `argv` and runs the command. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}
