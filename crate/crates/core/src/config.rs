//! Flat `key=value` experiment configuration.
//!
//! Blank lines and text after `#` are ignored. Keys are listed in
//! [`CONFIG_KEYS`]; unknown keys are rejected. List values are
//! comma-separated. Later settings override earlier ones, so applying a file
//! and then command-line flags gives flags precedence.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::losses::{KernelConfig, LossWeights};
use crate::pipeline::ExperimentConfig;

pub const CONFIG_KEYS: [&str; 25] = [
    "source",
    "target",
    "strategy",
    "seeds",
    "target_fraction",
    "alpha",
    "beta",
    "epsilon",
    "blur_sigma",
    "noise_std",
    "salt_pepper_density",
    "brightness_delta",
    "per_class_target",
    "conv_filters",
    "fc_widths",
    "dropout",
    "learning_rate",
    "momentum",
    "batch_size",
    "epochs",
    "finetune_epochs",
    "kernel",
    "alignment",
    "akld_bins",
    "histogram_bins",
];

/// Parses config text into `(key, value)` pairs, keeping file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, found `{line}`", i + 1)))?;
        let key = k.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::Config(format!("line {}: unknown key `{key}`", i + 1)));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn in_range(key: &str, v: f64, ok: bool, range: &str) -> Result<f64> {
    if ok && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("{key}={v} out of range; valid range is {range}")))
    }
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|x| num(key, x.trim())).collect()
}

fn positive(key: &str, value: &str) -> Result<usize> {
    let v: usize = num(key, value)?;
    if v == 0 {
        return Err(Error::Config(format!("{key}=0 out of range; valid range is >= 1")));
    }
    Ok(v)
}

/// Applies one setting. Range errors name the valid range.
pub fn apply_setting(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    let unit = |v: f64| (0.0..=1.0).contains(&v);
    match key {
        "source" => cfg.source_path = Some(PathBuf::from(value)),
        "target" => cfg.target_path = Some(PathBuf::from(value)),
        "strategy" => cfg.strategy = value.parse()?,
        "seeds" => {
            cfg.seeds = list(key, value)?;
        }
        "target_fraction" => {
            let v = num(key, value)?;
            cfg.target_fraction = in_range(key, v, v > 0.0 && v < 1.0, "(0, 1)")?;
        }
        "alpha" => {
            let v = num(key, value)?;
            cfg.loss_weights = LossWeights::new(in_range(key, v, unit(v), "[0, 1]")?, cfg.loss_weights.beta())?;
        }
        "beta" => {
            let v = num(key, value)?;
            cfg.loss_weights = LossWeights::new(cfg.loss_weights.alpha(), in_range(key, v, unit(v), "[0, 1]")?)?;
        }
        "epsilon" => {
            let v = num(key, value)?;
            cfg.epsilon = in_range(key, v, v > 0.0, "(0, inf)")?;
        }
        "blur_sigma" => {
            let v = num(key, value)?;
            cfg.augmentation.blur_sigma = in_range(key, v, v >= 0.0, "[0, inf)")?;
        }
        "noise_std" => {
            let v = num(key, value)?;
            cfg.augmentation.noise_std = in_range(key, v, v >= 0.0, "[0, inf)")?;
        }
        "salt_pepper_density" => {
            let v = num(key, value)?;
            cfg.augmentation.salt_pepper_density = in_range(key, v, unit(v), "[0, 1]")?;
        }
        "brightness_delta" => {
            let v = num(key, value)?;
            cfg.augmentation.brightness_delta = in_range(key, v, (0.0..=2.0).contains(&v), "[0, 2]")?;
        }
        "per_class_target" => {
            cfg.per_class_target = match value {
                "max" => None,
                v => Some(positive(key, v)?),
            }
        }
        "conv_filters" => cfg.model.conv_filters = list(key, value)?,
        "fc_widths" => cfg.model.fc_widths = list(key, value)?,
        "dropout" => {
            let v = num(key, value)?;
            cfg.model.dropout = in_range(key, v, (0.0..1.0).contains(&v), "[0, 1)")?;
        }
        "learning_rate" => {
            let v = num(key, value)?;
            cfg.train.learning_rate = in_range(key, v, v > 0.0, "(0, inf)")?;
        }
        "momentum" => {
            let v = num(key, value)?;
            cfg.train.momentum = in_range(key, v, (0.0..1.0).contains(&v), "[0, 1)")?;
        }
        "batch_size" => cfg.train.batch_size = positive(key, value)?,
        "epochs" => cfg.train.epochs = num(key, value)?,
        "finetune_epochs" => cfg.train.finetune_epochs = num(key, value)?,
        "kernel" => {
            cfg.kernel = match value {
                "median" => KernelConfig::MedianHeuristic,
                v => {
                    let s = num(key, v)?;
                    KernelConfig::fixed(in_range(key, s, s > 0.0, "median or a sigma in (0, inf)")?)?
                }
            }
        }
        "alignment" => cfg.substrate = value.parse()?,
        "akld_bins" => {
            let v: usize = num(key, value)?;
            if v < 2 {
                return Err(Error::Config(format!("{key}={v} out of range; valid range is >= 2")));
            }
            cfg.akld_bins = v;
        }
        "histogram_bins" => {
            let v: usize = num(key, value)?;
            if v < 2 {
                return Err(Error::Config(format!("{key}={v} out of range; valid range is >= 2")));
            }
            cfg.histogram_bins = v;
        }
        other => return Err(Error::Config(format!("unknown key `{other}`"))),
    }
    Ok(())
}

/// Defaults, then `file_text`, then `overrides`, then validation.
pub fn parse_config(file_text: Option<&str>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let file_pairs = match file_text {
        Some(t) => parse_pairs(t)?,
        None => Vec::new(),
    };
    for (k, v) in file_pairs.iter().chain(overrides) {
        apply_setting(&mut cfg, k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: Option<&std::path::Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => Some(crate::io::read_text(p)?),
        None => None,
    };
    parse_config(text.as_deref(), overrides)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Every key with its resolved value. Parsing the output yields `cfg`.
pub fn to_config_text(cfg: &ExperimentConfig) -> String {
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let mut lines: Vec<(&str, String)> = Vec::new();
    if let Some(s) = path(&cfg.source_path) {
        lines.push(("source", s));
    }
    if let Some(t) = path(&cfg.target_path) {
        lines.push(("target", t));
    }
    lines.extend([
        ("strategy", cfg.strategy.to_string()),
        ("seeds", join(&cfg.seeds)),
        ("target_fraction", cfg.target_fraction.to_string()),
        ("alpha", cfg.loss_weights.alpha().to_string()),
        ("beta", cfg.loss_weights.beta().to_string()),
        ("epsilon", cfg.epsilon.to_string()),
        ("blur_sigma", cfg.augmentation.blur_sigma.to_string()),
        ("noise_std", cfg.augmentation.noise_std.to_string()),
        ("salt_pepper_density", cfg.augmentation.salt_pepper_density.to_string()),
        ("brightness_delta", cfg.augmentation.brightness_delta.to_string()),
        (
            "per_class_target",
            cfg.per_class_target.map_or("max".to_string(), |n| n.to_string()),
        ),
        ("conv_filters", join(&cfg.model.conv_filters)),
        ("fc_widths", join(&cfg.model.fc_widths)),
        ("dropout", cfg.model.dropout.to_string()),
        ("learning_rate", cfg.train.learning_rate.to_string()),
        ("momentum", cfg.train.momentum.to_string()),
        ("batch_size", cfg.train.batch_size.to_string()),
        ("epochs", cfg.train.epochs.to_string()),
        ("finetune_epochs", cfg.train.finetune_epochs.to_string()),
        (
            "kernel",
            match cfg.kernel {
                KernelConfig::MedianHeuristic => "median".to_string(),
                KernelConfig::Fixed(s) => s.to_string(),
            },
        ),
        ("alignment", cfg.substrate.name().to_string()),
        ("akld_bins", cfg.akld_bins.to_string()),
        ("histogram_bins", cfg.histogram_bins.to_string()),
    ]);
    let mut out = String::from("# resolved dga-adapt configuration\n");
    for (k, v) in lines {
        out.push_str(&format!("{k}={v}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn empty_config_gives_defaults() {
        assert_eq!(
            parse_config(Some("# nothing\n\n"), &[]).unwrap(),
            ExperimentConfig::default()
        );
        assert_eq!(parse_config(None, &[]).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn flags_override_file() {
        let cfg = parse_config(Some("alpha=0.5\n"), &[pair("alpha", "0.9")]).unwrap();
        assert_eq!(cfg.loss_weights.alpha(), 0.9);
    }

    #[test]
    fn range_and_key_errors() {
        let e = parse_config(Some("alpha=1.5"), &[]).unwrap_err().to_string();
        assert!(e.contains("[0, 1]"), "{e}");
        let e = parse_config(Some("gamma=1"), &[]).unwrap_err().to_string();
        assert!(e.contains("unknown key"), "{e}");
        let e = parse_config(Some("target_fraction=1"), &[]).unwrap_err().to_string();
        assert!(e.contains("(0, 1)"), "{e}");
        assert!(parse_config(Some("alpha"), &[]).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let text = "source=a.csv\ntarget=b.csv\nalpha=0.3 # comment\nkernel=2.5\nseeds=7,8\nper_class_target=40\nalignment=input\nfc_widths=32,5\n";
        let cfg = parse_config(Some(text), &[]).unwrap();
        let snap = to_config_text(&cfg);
        assert_eq!(parse_config(Some(&snap), &[]).unwrap(), cfg);
    }
}
