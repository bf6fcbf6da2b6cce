//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are the field
//! names of [`TrainConfig`] (or of [`crate::synth::SynthSpec`]).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::sampler::SamplerConfig;

/// Parses `key = value` lines. Duplicate keys are an error.
pub fn parse_kv(text: &str, file: &str) -> Result<Vec<(String, String)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(file, n + 1, "expected `key = value`"))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::parse(file, n + 1, "empty key"));
        }
        if !seen.insert(k.to_string()) {
            return Err(Error::parse(file, n + 1, format!("duplicate key {k:?}")));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

/// Ablation switches, each reducing the model to one of its variants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Uniform child distribution instead of attention-driven sampling.
    pub uniform_sampling: bool,
    /// One-hop full-neighborhood attention instead of sampled trees.
    pub plain_gnn_encoder: bool,
    /// Drop the mutual-information regularizers (λ = 1).
    pub no_mi: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub tau: f64,
    pub mu: f64,
    /// Epochs between tree resampling / pseudo-label refreshes.
    pub m: usize,
    pub depth: usize,
    pub fanout: usize,
    pub delta: usize,
    pub n_neg: usize,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub leaky_slope: f64,
    pub neg_edge_ratio: f64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.4,
            tau: 0.08,
            mu: 0.9,
            m: 10,
            depth: 2,
            fanout: 8,
            delta: 10,
            n_neg: 128,
            dim: 300,
            epochs: 300,
            batch_size: 128,
            learning_rate: 1e-4,
            seed: 0,
            leaky_slope: 0.01,
            neg_edge_ratio: 1.0,
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 18] = [
        "lambda",
        "tau",
        "mu",
        "m",
        "depth",
        "fanout",
        "delta",
        "n_neg",
        "dim",
        "epochs",
        "batch_size",
        "learning_rate",
        "seed",
        "leaky_slope",
        "neg_edge_ratio",
        "uniform_sampling",
        "plain_gnn_encoder",
        "no_mi",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "lambda" => self.lambda = parse_value(key, v)?,
            "tau" => self.tau = parse_value(key, v)?,
            "mu" => self.mu = parse_value(key, v)?,
            "m" => self.m = parse_value(key, v)?,
            "depth" => self.depth = parse_value(key, v)?,
            "fanout" => self.fanout = parse_value(key, v)?,
            "delta" => self.delta = parse_value(key, v)?,
            "n_neg" => self.n_neg = parse_value(key, v)?,
            "dim" => self.dim = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "learning_rate" => self.learning_rate = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "leaky_slope" => self.leaky_slope = parse_value(key, v)?,
            "neg_edge_ratio" => self.neg_edge_ratio = parse_value(key, v)?,
            "uniform_sampling" => self.ablation.uniform_sampling = parse_value(key, v)?,
            "plain_gnn_encoder" => self.ablation.plain_gnn_encoder = parse_value(key, v)?,
            "no_mi" => self.ablation.no_mi = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Defaults overridden by the entries of a config file.
    pub fn from_kv_text(text: &str, file: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text, file)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical `key = value` rendering; parses back to the same config.
    pub fn to_kv_text(&self) -> String {
        let a = &self.ablation;
        let mut s = String::new();
        let vals: [String; 18] = [
            self.lambda.to_string(),
            self.tau.to_string(),
            self.mu.to_string(),
            self.m.to_string(),
            self.depth.to_string(),
            self.fanout.to_string(),
            self.delta.to_string(),
            self.n_neg.to_string(),
            self.dim.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.learning_rate.to_string(),
            self.seed.to_string(),
            self.leaky_slope.to_string(),
            self.neg_edge_ratio.to_string(),
            a.uniform_sampling.to_string(),
            a.plain_gnn_encoder.to_string(),
            a.no_mi.to_string(),
        ];
        for (k, v) in Self::KEYS.iter().zip(vals) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_kv_text().as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return fail(format!("mu {} outside [0, 1]", self.mu));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return fail(format!("tau {} must be positive", self.tau));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.neg_edge_ratio >= 0.0) || !self.neg_edge_ratio.is_finite() {
            return fail(format!("neg_edge_ratio {} must be non-negative", self.neg_edge_ratio));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return fail(format!("leaky_slope {} outside [0, 1)", self.leaky_slope));
        }
        for (name, v) in [
            ("m", self.m),
            ("fanout", self.fanout),
            ("delta", self.delta),
            ("n_neg", self.n_neg),
            ("dim", self.dim),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        Ok(())
    }

    /// λ with the no-MI ablation applied.
    pub fn effective_lambda(&self) -> f64 {
        if self.ablation.no_mi {
            1.0
        } else {
            self.lambda
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            depth: self.depth,
            fanout: self.fanout,
            leaky_slope: self.leaky_slope,
            uniform: self.ablation.uniform_sampling,
        }
    }

    pub fn losses(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            lambda: self.effective_lambda(),
            n_neg: self.n_neg,
            neg_edge_ratio: self.neg_edge_ratio,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.lambda, c.tau, c.mu), (0.4, 0.08, 0.9));
        assert_eq!((c.m, c.depth, c.fanout, c.delta, c.n_neg), (10, 2, 8, 10, 128));
        assert_eq!((c.dim, c.epochs, c.batch_size), (300, 300, 128));
        assert_eq!(c.learning_rate, 1e-4);
        c.validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let mut c = TrainConfig::default();
        c.lambda = 0.25;
        c.ablation.no_mi = true;
        c.seed = 42;
        let back = TrainConfig::from_kv_text(&c.to_kv_text(), "cfg").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.effective_lambda(), 1.0);
    }

    #[test]
    fn kv_errors() {
        assert!(parse_kv("lambda 0.3\n", "c").is_err());
        assert!(parse_kv("a = 1\na = 2\n", "c").is_err());
        assert!(parse_kv(" = 2\n", "c").is_err());
        assert!(TrainConfig::from_kv_text("bogus = 1\n", "c").is_err());
        assert!(TrainConfig::from_kv_text("lambda = 1.5\n", "c").is_err());
        assert!(TrainConfig::from_kv_text("fanout = 0\n", "c").is_err());
        assert!(TrainConfig::from_kv_text("tau = x\n", "c").is_err());
        let c = TrainConfig::from_kv_text("# comment\n\nepochs = 7\n", "c").unwrap();
        assert_eq!(c.epochs, 7);
    }
}
