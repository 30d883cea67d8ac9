//! Training configuration and the flat `key = value` format it is read from.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::objectives::{LossWeights, DEFAULT_LAMBDA1, DEFAULT_LAMBDA2, DEFAULT_LAMBDA3, DEFAULT_TAU};
use crate::sampler::{Sampler, DEFAULT_EPS, DEFAULT_RHO_C, DEFAULT_RHO_M, DEFAULT_RHO_R};

/// Model variants with one component removed or replaced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Ablation {
    #[default]
    None,
    /// Topology injection bypassed: `H̄ = H`.
    NoTe,
    /// Masked graph drawn uniformly instead of by rationale scores.
    RandomMask,
    /// Masked graph drawn from MLP edge scores instead of attention.
    MlpMask,
    /// Rationale-discovery loss dropped.
    NoRd,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::None,
        Ablation::NoTe,
        Ablation::RandomMask,
        Ablation::MlpMask,
        Ablation::NoRd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoTe => "no_te",
            Ablation::RandomMask => "random_mask",
            Ablation::MlpMask => "mlp_mask",
            Ablation::NoRd => "no_rd",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation `{s}` (expected none|no_te|random_mask|mlp_mask|no_rd)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub heads: usize,
    pub anchor_count: usize,
    /// Hop cutoff for anchor correlation weights; negative disables them.
    pub q: i64,
    pub topo_layers: usize,
    /// Propagation depth of the rationale branch.
    pub rationale_layers: usize,
    /// Smoothing depth of the autoencoder branch.
    pub autoencoder_layers: usize,
    /// Propagation depth of the two independence views.
    pub cir_layers: usize,
    pub rho_r: f64,
    pub rho_m: f64,
    pub rho_c: f64,
    pub eps: f64,
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub grad_clip: f64,
    pub resample_anchors: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            heads: 4,
            anchor_count: 32,
            q: 4,
            topo_layers: 1,
            rationale_layers: 2,
            autoencoder_layers: 2,
            cir_layers: 2,
            rho_r: DEFAULT_RHO_R,
            rho_m: DEFAULT_RHO_M,
            rho_c: DEFAULT_RHO_C,
            eps: DEFAULT_EPS,
            tau: DEFAULT_TAU,
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            lambda3: DEFAULT_LAMBDA3,
            lr: 1e-3,
            batch_size: 4096,
            max_epochs: 100,
            patience: 10,
            seed: 2023,
            ablation: Ablation::None,
            grad_clip: 5.0,
            resample_anchors: false,
        }
    }
}

/// Splits `key = value` lines. `#` starts a comment; blank lines are
/// ignored. Returns `(line, key, value)`.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected `key = value`", n + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.push((n + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

/// Plain decimal for ordinary magnitudes, exponent form otherwise.
fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-4..1e6).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 24] = [
        "dim",
        "heads",
        "anchor_count",
        "q",
        "topo_layers",
        "rationale_layers",
        "autoencoder_layers",
        "cir_layers",
        "rho_r",
        "rho_m",
        "rho_c",
        "eps",
        "tau",
        "lambda1",
        "lambda2",
        "lambda3",
        "lr",
        "batch_size",
        "max_epochs",
        "patience",
        "seed",
        "ablation",
        "grad_clip",
        "resample_anchors",
    ];

    /// Sets one key. Unknown keys are a config error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dim" => self.dim = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "anchor_count" => self.anchor_count = parse(key, value)?,
            "q" => self.q = parse(key, value)?,
            "topo_layers" => self.topo_layers = parse(key, value)?,
            "rationale_layers" => self.rationale_layers = parse(key, value)?,
            "autoencoder_layers" => self.autoencoder_layers = parse(key, value)?,
            "cir_layers" => self.cir_layers = parse(key, value)?,
            "rho_r" => self.rho_r = parse(key, value)?,
            "rho_m" => self.rho_m = parse(key, value)?,
            "rho_c" => self.rho_c = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "lambda3" => self.lambda3 = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "ablation" => self.ablation = value.parse()?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "resample_anchors" => self.resample_anchors = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses a complete config text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (line, k, v) in parse_pairs(text)? {
            c.set(&k, &v)
                .map_err(|e| Error::Config(format!("line {line}: {}", strip(e))))?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Every key with its current value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let pairs: [(&str, String); 24] = [
            ("dim", self.dim.to_string()),
            ("heads", self.heads.to_string()),
            ("anchor_count", self.anchor_count.to_string()),
            ("q", self.q.to_string()),
            ("topo_layers", self.topo_layers.to_string()),
            ("rationale_layers", self.rationale_layers.to_string()),
            ("autoencoder_layers", self.autoencoder_layers.to_string()),
            ("cir_layers", self.cir_layers.to_string()),
            ("rho_r", num(self.rho_r)),
            ("rho_m", num(self.rho_m)),
            ("rho_c", num(self.rho_c)),
            ("eps", num(self.eps)),
            ("tau", num(self.tau)),
            ("lambda1", num(self.lambda1)),
            ("lambda2", num(self.lambda2)),
            ("lambda3", num(self.lambda3)),
            ("lr", num(self.lr)),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("ablation", self.ablation.to_string()),
            ("grad_clip", num(self.grad_clip)),
            ("resample_anchors", self.resample_anchors.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim ({}) must be a positive multiple of heads ({})",
                self.dim, self.heads
            )));
        }
        if self.anchor_count == 0 {
            return Err(Error::Config("anchor_count must be positive".into()));
        }
        self.sampler()?;
        let positive = [
            ("tau", self.tau),
            ("lr", self.lr),
            ("grad_clip", self.grad_clip),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        for (k, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be non-negative, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn sampler(&self) -> Result<Sampler> {
        Sampler::new(self.rho_r, self.rho_m, self.rho_c, self.eps)
    }

    /// Loss weights with `λ1` forced to zero under the `no_rd` ablation.
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda1: if self.ablation == Ablation::NoRd {
                0.0
            } else {
                self.lambda1
            },
            lambda2: self.lambda2,
            lambda3: self.lambda3,
        }
    }

    pub fn use_topology(&self) -> bool {
        self.ablation != Ablation::NoTe && self.topo_layers > 0
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut c = TrainConfig::default();
        c.lr = 0.0123;
        c.ablation = Ablation::MlpMask;
        c.q = -1;
        let back = TrainConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let c = TrainConfig::from_text("# header\n\nlr = 0.01 # fast\n  seed=7\n").unwrap();
        assert_eq!((c.lr, c.seed), (0.01, 7));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(TrainConfig::from_text("colour = red"), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::from_text("lr = fast"), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::from_text("no equals sign"), Err(Error::Config(_))));
    }

    #[test]
    fn invariants_are_checked() {
        assert!(TrainConfig::from_text("dim = 30\nheads = 4").is_err());
        assert!(TrainConfig::from_text("rho_c = 0.95").is_err());
        assert!(TrainConfig::from_text("rho_r = 1.5").is_err());
    }

    #[test]
    fn ablation_names() {
        for a in Ablation::ALL {
            assert_eq!(a.as_str().parse::<Ablation>().unwrap(), a);
        }
        assert!("mm".parse::<Ablation>().is_err());
    }

    #[test]
    fn no_rd_zeroes_lambda1() {
        let c = TrainConfig {
            ablation: Ablation::NoRd,
            ..TrainConfig::default()
        };
        assert_eq!(c.loss_weights().lambda1, 0.0);
    }
}
