//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::envs::EnvSpec;
use crate::learner::Variant;
use crate::replay::CmaxSchedule;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {msg}")]
    Value { line: usize, key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub gamma: f64,
    pub capacity: usize,
    pub min_experiences_before_training: usize,
    pub lr: f64,
    pub batch: usize,
    pub hidden_widths: Vec<usize>,
    pub beta0: f64,
    pub f_star: f64,
    pub c_max: f64,
    pub eta_beta: f64,
    pub env: EnvSpec,
    pub variant: Variant,
    pub seed: u64,
    pub max_episodes: u64,
    /// Gradient steps after each episode; 0 means one per collected timestep.
    pub grad_steps_per_episode: usize,
    /// Annealing time constant of the cut-off in gradient steps; 0 keeps it constant.
    pub c_max_anneal_tau: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            gamma: 0.995,
            capacity: 1 << 18,
            min_experiences_before_training: 1 << 17,
            lr: 1e-4,
            batch: 256,
            hidden_widths: vec![128, 128],
            beta0: 0.3,
            f_star: 0.1,
            c_max: 4.0,
            eta_beta: 1e-4,
            env: "pursuit-lite".parse().expect("valid default env"),
            variant: Variant::Ldi,
            seed: 0,
            max_episodes: 20_000,
            grad_steps_per_episode: 0,
            c_max_anneal_tau: 0.0,
        }
    }
}

const KEYS: [&str; 16] = [
    "gamma",
    "capacity",
    "min_experiences_before_training",
    "lr",
    "batch",
    "hidden_widths",
    "beta0",
    "f_star",
    "c_max",
    "eta_beta",
    "env",
    "variant",
    "seed",
    "max_episodes",
    "grad_steps_per_episode",
    "c_max_anneal_tau",
];

fn parse_num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn parse_widths(v: &str) -> Result<Vec<usize>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|w| parse_num::<usize>(w.trim())).collect()
}

impl Config {
    pub fn schedule(&self) -> CmaxSchedule {
        if self.c_max_anneal_tau > 0.0 {
            CmaxSchedule::Annealed { c: self.c_max, tau: self.c_max_anneal_tau }
        } else {
            CmaxSchedule::Constant(self.c_max)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.batch == 0 || self.batch > self.capacity {
            return bad("batch must be positive and at most capacity");
        }
        if self.min_experiences_before_training > self.capacity {
            return bad("min_experiences_before_training exceeds capacity");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return bad("hidden widths must be positive");
        }
        if !(0.0..=1.0).contains(&self.beta0) {
            return bad("beta0 must lie in [0, 1]");
        }
        if !(self.f_star > 0.0 && self.f_star < 1.0) {
            return bad("f_star must lie in (0, 1)");
        }
        if !(self.c_max.is_finite() && self.c_max > 1.0) {
            return bad("c_max must exceed 1");
        }
        if !(self.eta_beta > 0.0 && self.eta_beta <= 1.0) {
            return bad("eta_beta must lie in (0, 1]");
        }
        if !(self.c_max_anneal_tau.is_finite() && self.c_max_anneal_tau >= 0.0) {
            return bad("c_max_anneal_tau must be non-negative");
        }
        Ok(())
    }

    /// Parses the text format: one `key = value` per line, `#` starts a
    /// comment, every key at most once, missing keys take their defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        let mut seen = [false; KEYS.len()];
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            let idx = KEYS
                .iter()
                .position(|&k| k == key)
                .ok_or_else(|| ConfigError::UnknownKey { line, key: key.to_string() })?;
            if std::mem::replace(&mut seen[idx], true) {
                return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
            }
            cfg.set(key, value)
                .map_err(|msg| ConfigError::Value { line, key: key.to_string(), msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "gamma" => self.gamma = parse_num(v)?,
            "capacity" => self.capacity = parse_num(v)?,
            "min_experiences_before_training" => self.min_experiences_before_training = parse_num(v)?,
            "lr" => self.lr = parse_num(v)?,
            "batch" => self.batch = parse_num(v)?,
            "hidden_widths" => self.hidden_widths = parse_widths(v)?,
            "beta0" => self.beta0 = parse_num(v)?,
            "f_star" => self.f_star = parse_num(v)?,
            "c_max" => self.c_max = parse_num(v)?,
            "eta_beta" => self.eta_beta = parse_num(v)?,
            "env" => self.env = v.parse().map_err(|e: crate::envs::EnvError| e.to_string())?,
            "variant" => self.variant = v.parse().map_err(|e: crate::learner::LearnError| e.to_string())?,
            "seed" => self.seed = parse_num(v)?,
            "max_episodes" => self.max_episodes = parse_num(v)?,
            "grad_steps_per_episode" => self.grad_steps_per_episode = parse_num(v)?,
            "c_max_anneal_tau" => self.c_max_anneal_tau = parse_num(v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let widths: Vec<String> = self.hidden_widths.iter().map(|w| w.to_string()).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("gamma", format!("{:?}", self.gamma));
        kv("capacity", self.capacity.to_string());
        kv("min_experiences_before_training", self.min_experiences_before_training.to_string());
        kv("lr", format!("{:?}", self.lr));
        kv("batch", self.batch.to_string());
        kv("hidden_widths", widths.join(","));
        kv("beta0", format!("{:?}", self.beta0));
        kv("f_star", format!("{:?}", self.f_star));
        kv("c_max", format!("{:?}", self.c_max));
        kv("eta_beta", format!("{:?}", self.eta_beta));
        kv("env", self.env.to_string());
        kv("variant", self.variant.to_string());
        kv("seed", self.seed.to_string());
        kv("max_episodes", self.max_episodes.to_string());
        kv("grad_steps_per_episode", self.grad_steps_per_episode.to_string());
        kv("c_max_anneal_tau", format!("{:?}", self.c_max_anneal_tau));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = Config::default();
        assert_eq!(c.gamma, 0.995);
        assert_eq!(c.capacity, 262_144);
        assert_eq!(c.min_experiences_before_training, 131_072);
        assert_eq!(c.lr, 1e-4);
        assert_eq!(c.batch, 256);
        assert_eq!((c.beta0, c.f_star, c.c_max), (0.3, 0.1, 4.0));
        c.validate().unwrap();
    }

    #[test]
    fn text_roundtrip() {
        let mut c = Config::default();
        c.gamma = 0.1 + 0.2;
        c.hidden_widths = vec![3, 5];
        c.variant = Variant::FdCo;
        c.env = "coop-targets:2".parse().unwrap();
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_errors() {
        let c = Config::parse("# header\nseed = 7 # trailing\n\nvariant = LDCo\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.variant, Variant::LdCo);
        assert!(matches!(Config::parse("colour = red"), Err(ConfigError::UnknownKey { line: 1, .. })));
        assert!(matches!(Config::parse("seed = 1\nseed = 2"), Err(ConfigError::DuplicateKey { line: 2, .. })));
        assert!(matches!(Config::parse("seed"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(Config::parse("lr = fast"), Err(ConfigError::Value { .. })));
        assert!(matches!(Config::parse("gamma = 1.0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::parse("batch = 300\ncapacity = 200\nmin_experiences_before_training = 10"), Err(ConfigError::Invalid(_))));
    }
}
