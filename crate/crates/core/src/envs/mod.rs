//! Cooperative multi-agent environments with homogeneous agents.

pub mod coop_targets;
pub mod pursuit_lite;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::dist::{Action, ActionSpace};

pub use coop_targets::CoopTargets;
pub use pursuit_lite::PursuitLite;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called before reset or after the episode ended")]
    NotRunning,
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("action {0:?} does not belong to the action space")]
    ActionKind(Action),
    #[error("bad environment spec {0:?}: expected coop-targets[:N] or pursuit-lite[:N]")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Result of one joint step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub rewards: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// The episode is over (absorbing or truncated).
    pub terminal: bool,
    /// The final state is absorbing, so its value is zero.
    pub absorbing: bool,
}

/// Joint environment `r, s' = D(s, a)`.
pub trait Environment {
    fn n_agents(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn max_steps(&self) -> usize;
    /// Deterministic initial layout for `seed`; returns per-agent states.
    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>>;
    fn step(&mut self, actions: &[Action]) -> Result<Transition, EnvError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    CoopTargets,
    PursuitLite,
}

/// Environment name with an optional agent count, e.g. `pursuit-lite:4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub n_agents: usize,
}

impl EnvSpec {
    pub fn build(&self) -> Box<dyn Environment> {
        match self.kind {
            EnvKind::CoopTargets => Box::new(CoopTargets::new(self.n_agents)),
            EnvKind::PursuitLite => Box::new(PursuitLite::new(self.n_agents)),
        }
    }
}

impl FromStr for EnvSpec {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || EnvError::Spec(s.to_string());
        let (name, n) = match s.split_once(':') {
            Some((name, n)) => (name, Some(n.parse::<usize>().map_err(|_| err())?)),
            None => (s, None),
        };
        let (kind, default_n) = match name {
            "coop-targets" => (EnvKind::CoopTargets, coop_targets::DEFAULT_AGENTS),
            "pursuit-lite" => (EnvKind::PursuitLite, pursuit_lite::DEFAULT_PURSUERS),
            _ => return Err(err()),
        };
        let n_agents = n.unwrap_or(default_n);
        if !(1..=16).contains(&n_agents) {
            return Err(err());
        }
        Ok(EnvSpec { kind, n_agents })
    }
}

impl fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            EnvKind::CoopTargets => "coop-targets",
            EnvKind::PursuitLite => "pursuit-lite",
        };
        write!(f, "{name}:{}", self.n_agents)
    }
}

fn check_count(actions: &[Action], n: usize) -> Result<(), EnvError> {
    if actions.len() != n {
        return Err(EnvError::ActionCount { expected: n, got: actions.len() });
    }
    Ok(())
}

#[derive(Serialize)]
struct TraceLine<'a> {
    t: usize,
    states: &'a [Vec<f64>],
    actions: &'a [Action],
    rewards: &'a [f64],
    terminal: bool,
}

/// Writes one JSON object per timestep.
pub struct TrajectoryRecorder<W: Write> {
    out: W,
    t: usize,
}

impl<W: Write> TrajectoryRecorder<W> {
    pub fn new(out: W) -> Self {
        Self { out, t: 0 }
    }

    /// Records the states an action was taken in, the action and its outcome.
    pub fn record(&mut self, states: &[Vec<f64>], actions: &[Action], tr: &Transition) -> Result<(), EnvError> {
        let line = TraceLine { t: self.t, states, actions, rewards: &tr.rewards, terminal: tr.terminal };
        serde_json::to_writer(&mut self.out, &line).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.t = if tr.terminal { 0 } else { self.t + 1 };
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing() {
        let s: EnvSpec = "pursuit-lite".parse().unwrap();
        assert_eq!(s, EnvSpec { kind: EnvKind::PursuitLite, n_agents: 4 });
        let s: EnvSpec = "coop-targets:1".parse().unwrap();
        assert_eq!(s.n_agents, 1);
        assert_eq!(s.to_string().parse::<EnvSpec>().unwrap(), s);
        for bad in ["", "pong", "coop-targets:", "coop-targets:0", "pursuit-lite:x"] {
            assert!(bad.parse::<EnvSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn recorder_writes_lines() {
        let mut env = CoopTargets::new(2);
        let s = env.reset(1);
        let a = vec![Action::Continuous(vec![0.0, 0.0]); 2];
        let tr = env.step(&a).unwrap();
        let mut rec = TrajectoryRecorder::new(Vec::new());
        rec.record(&s, &a, &tr).unwrap();
        rec.record(&tr.states, &a, &tr).unwrap();
        let text = String::from_utf8(rec.into_inner()).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1]["t"], 1);
    }
}
