//! Configuration resolution: defaults, then the config file, then `--set`
//! pairs, then dedicated flags.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rationale_core::config::parse_pairs;
use rationale_core::{Ablation, TrainConfig};

use crate::failure::{Failure, Outcome};

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// File of `key = value` lines (`#` starts a comment)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Epoch budget (`max_epochs`)
    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long)]
    pub dim: Option<usize>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    /// Model variant to train
    #[arg(long, value_name = "none|no_te|random_mask|mlp_mask|no_rd")]
    pub ablate: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Set,
    Flag,
}

impl Source {
    fn label(self) -> &'static str {
        match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Set => "--set",
            Source::Flag => "flag",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: TrainConfig,
    pub sources: Vec<(&'static str, Source)>,
}

impl Resolved {
    fn mark(&mut self, key: &str, source: Source) {
        if let Some(entry) = self.sources.iter_mut().find(|(k, _)| *k == key) {
            entry.1 = source;
        }
    }

    fn apply(&mut self, key: &str, value: &str, source: Source) -> Outcome {
        self.config
            .set(key, value)
            .map_err(|e| Failure::config(e.to_string()))?;
        self.mark(key, source);
        Ok(())
    }

    /// `key = value  # source` lines, for the startup banner.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for (line, (_, source)) in self.config.to_text().lines().zip(&self.sources) {
            let _ = writeln!(out, "  {line:<28} # {}", source.label());
        }
        out
    }
}

impl ConfigArgs {
    pub fn resolve(&self) -> Outcome<Resolved> {
        let mut r = Resolved {
            config: TrainConfig::default(),
            sources: TrainConfig::KEYS.iter().map(|&k| (k, Source::Default)).collect(),
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| {
                Failure::config(format!("cannot read config {}: {e}", path.display()))
            })?;
            let pairs = parse_pairs(&text)
                .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            for (line, k, v) in pairs {
                r.apply(&k, &v, Source::File).map_err(|f| {
                    Failure::config(format!("{}:{line}: {}", path.display(), f.message))
                })?;
            }
        }
        for pair in &self.set {
            let Some((k, v)) = pair.split_once('=') else {
                return Err(Failure::config(format!("--set expects KEY=VALUE, got `{pair}`")));
            };
            r.apply(k.trim(), v.trim(), Source::Set)?;
        }
        let flags: [(&str, Option<String>); 6] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("max_epochs", self.epochs.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("dim", self.dim.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("ablation", self.ablate.clone()),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                r.apply(k, &v, Source::Flag)?;
            }
        }
        r.config
            .validate()
            .map_err(|e| Failure::config(e.to_string()))?;
        Ok(r)
    }
}

/// Every key with its default, for help text.
pub fn defaults_help() -> String {
    let mut out = String::from("Configuration keys and defaults:\n");
    for line in TrainConfig::default().to_text().lines() {
        let _ = writeln!(out, "  {line}");
    }
    let variants: Vec<&str> = Ablation::ALL.iter().map(|a| a.as_str()).collect();
    let _ = write!(out, "\nAblations: --ablate {}", variants.join("|"));
    out
}

/// Writes `<dir>/<command>.run.cfg`: the command's inputs as comments and,
/// when given, the resolved training configuration. The file loads back
/// with `--config`.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    inputs: &[(&str, String)],
    config: Option<&TrainConfig>,
) -> Outcome<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut text = format!("# rationale {command}\n");
    for (k, v) in inputs {
        let _ = writeln!(text, "# {k}: {v}");
    }
    if let Some(c) = config {
        text.push_str(&c.to_text());
    }
    let path = dir.join(format!("{command}.run.cfg"));
    fs::write(&path, text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_set_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.cfg");
        fs::write(&file, "seed = 1\nlr = 0.5 # comment\ndim = 16\n").unwrap();
        let args = ConfigArgs {
            config: Some(file),
            set: vec!["seed=2".into(), "dim = 8".into()],
            seed: Some(3),
            ..Default::default()
        };
        let r = args.resolve().unwrap();
        assert_eq!((r.config.seed, r.config.lr, r.config.dim), (3, 0.5, 8));
        let source = |k: &str| r.sources.iter().find(|(n, _)| *n == k).unwrap().1;
        assert_eq!(source("seed"), Source::Flag);
        assert_eq!(source("dim"), Source::Set);
        assert_eq!(source("lr"), Source::File);
        assert_eq!(source("tau"), Source::Default);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let args = ConfigArgs {
            set: vec!["learning_rate=1".into()],
            ..Default::default()
        };
        let f = args.resolve().unwrap_err();
        assert_eq!(f.kind.exit_code(), 3);
        assert!(f.message.contains("learning_rate"));
    }

    #[test]
    fn manifest_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let c = TrainConfig {
            seed: 9,
            ablation: Ablation::NoTe,
            ..TrainConfig::default()
        };
        let path = write_manifest(dir.path(), "train", &[("data", "x".into())], Some(&c)).unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert_eq!(TrainConfig::from_text(&text).unwrap(), c);
    }
}
