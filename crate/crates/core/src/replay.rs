//! Episodic replay memory with V-trace targets and far-policy bookkeeping.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::dist::{Action, ActionSpace, BoltzmannParams, GaussParams, PolicyParams};
use crate::learner::{joint_iw, scalarize_value, DynamicsModel, Scalarization};

pub use crate::learner::classify;

pub const DEFAULT_CAPACITY: usize = 1 << 18;
pub const DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("episode has no timesteps")]
    EmptyEpisode,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid experience: {0}")]
    Invalid(String),
    #[error("terminal values missing or of the wrong length")]
    MissingTerminal,
    #[error("replay memory holds {have} experiences, {need} required")]
    NotReady { have: usize, need: usize },
    #[error("replay memory is empty")]
    Empty,
    #[error("episode id {0} is not in memory")]
    UnknownEpisode(u64),
}

/// One agent's slice of a joint experience.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub state: Vec<f64>,
    pub action: Action,
    pub behavior: PolicyParams,
    pub value: f64,
    pub target: f64,
    pub on_policy: bool,
    pub rho: f64,
}

impl AgentRecord {
    /// A freshly collected record: behavior equals the current policy.
    pub fn fresh(state: Vec<f64>, action: Action, behavior: PolicyParams, value: f64) -> Self {
        Self { state, action, behavior, value, target: value, on_policy: true, rho: 1.0 }
    }
}

/// Joint experience at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub rewards: Vec<f64>,
    pub agents: Vec<AgentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub steps: Vec<Experience>,
    pub terminal_states: Vec<Vec<f64>>,
    /// `V(s_T)` per agent; zero for an absorbing end.
    pub terminal_values: Vec<f64>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.terminal_values.len()
    }

    pub fn validate(&self, space: &ActionSpace) -> Result<(), ReplayError> {
        if self.steps.is_empty() {
            return Err(ReplayError::EmptyEpisode);
        }
        let n = self.terminal_values.len();
        if n == 0 || self.terminal_states.len() != n {
            return Err(ReplayError::MissingTerminal);
        }
        if self.terminal_values.iter().any(|v| !v.is_finite()) {
            return Err(ReplayError::Invalid("non-finite terminal value".into()));
        }
        for (t, e) in self.steps.iter().enumerate() {
            if e.rewards.len() != n || e.agents.len() != n {
                return Err(ReplayError::Shape(format!("timestep {t} does not hold {n} agents")));
            }
            if e.rewards.iter().any(|r| !r.is_finite()) {
                return Err(ReplayError::Invalid(format!("non-finite reward at timestep {t}")));
            }
            for a in &e.agents {
                a.behavior
                    .validate(space)
                    .map_err(|err| ReplayError::Invalid(format!("timestep {t}: {err}")))?;
                let action_ok = match (&a.action, space) {
                    (Action::Continuous(x), ActionSpace::Continuous { bounds }) => {
                        x.len() == bounds.len() && x.iter().zip(bounds).all(|(&v, b)| b.contains(v))
                    }
                    (Action::Discrete(k), ActionSpace::Discrete { n }) => k < n,
                    _ => false,
                };
                if !action_ok {
                    return Err(ReplayError::Invalid(format!("action outside the action space at timestep {t}")));
                }
                if !(a.value.is_finite() && a.target.is_finite() && a.rho.is_finite() && a.rho >= 0.0) {
                    return Err(ReplayError::Invalid(format!("non-finite value, target or weight at timestep {t}")));
                }
            }
        }
        Ok(())
    }

    fn far_count(&self) -> usize {
        self.steps.iter().flat_map(|e| &e.agents).filter(|a| !a.on_policy).count()
    }

    /// Recomputes the stored targets from timestep `from` to the end using
    /// the stored values and importance weights.
    pub fn refresh_targets(&mut self, from: usize, gamma: f64, scal: Scalarization, dynamics: DynamicsModel) {
        let n = self.n_agents();
        let mut next = vec![0.0; n];
        for i in 0..n {
            next[i] = scalarize_value(&self.terminal_values, i, scal);
        }
        let mut rhos = vec![0.0; n];
        let mut values = vec![0.0; n];
        for e in self.steps[from..].iter_mut().rev() {
            for (k, a) in e.agents.iter().enumerate() {
                rhos[k] = a.rho;
                values[k] = a.value;
            }
            for i in 0..n {
                let rho_bar = joint_iw(&rhos, dynamics, i).min(1.0);
                let f = scalarize_value(&e.rewards, i, scal);
                let v = scalarize_value(&values, i, scal);
                let target = vtrace_step(v, rho_bar, f, gamma, next[i]);
                e.agents[i].target = target;
                next[i] = target;
            }
        }
    }
}

#[inline]
fn vtrace_step(v: f64, rho_bar: f64, f: f64, gamma: f64, next: f64) -> f64 {
    v + rho_bar * (f + gamma * next - v)
}

/// Backward V-trace recursion over a whole episode.
///
/// `rewards`, `values` and `rho_bar` are indexed `[t][agent]`; the result has
/// the same shape.
pub fn compute_vtbc(
    rewards: &[Vec<f64>],
    values: &[Vec<f64>],
    rho_bar: &[Vec<f64>],
    terminal_values: &[f64],
    gamma: f64,
    scal: Scalarization,
) -> Result<Vec<Vec<f64>>, ReplayError> {
    let t_len = rewards.len();
    let n = terminal_values.len();
    if n == 0 {
        return Err(ReplayError::MissingTerminal);
    }
    if values.len() != t_len || rho_bar.len() != t_len {
        return Err(ReplayError::Shape("rewards, values and weights differ in length".into()));
    }
    let shape_ok = |rows: &[Vec<f64>]| rows.iter().all(|r| r.len() == n);
    if !(shape_ok(rewards) && shape_ok(values) && shape_ok(rho_bar)) {
        return Err(ReplayError::Shape(format!("every timestep must hold {n} agents")));
    }
    let mut out = vec![vec![0.0; n]; t_len];
    let mut next: Vec<f64> = (0..n).map(|i| scalarize_value(terminal_values, i, scal)).collect();
    for t in (0..t_len).rev() {
        for i in 0..n {
            let f = scalarize_value(&rewards[t], i, scal);
            let v = scalarize_value(&values[t], i, scal);
            out[t][i] = vtrace_step(v, rho_bar[t][i], f, gamma, next[i]);
        }
        next.copy_from_slice(&out[t]);
    }
    Ok(out)
}

/// Cut-off schedule for the on-policy window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CmaxSchedule {
    Constant(f64),
    /// `1 + (c - 1) / (1 + step / tau)`.
    Annealed { c: f64, tau: f64 },
}

impl Default for CmaxSchedule {
    fn default() -> Self {
        CmaxSchedule::Constant(4.0)
    }
}

pub fn anneal_cmax(step: u64, schedule: CmaxSchedule) -> f64 {
    match schedule {
        CmaxSchedule::Constant(c) => c,
        CmaxSchedule::Annealed { c, tau } => 1.0 + (c - 1.0) / (1.0 + step as f64 / tau),
    }
}

/// Location of one joint experience in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleIndex {
    pub episode: u64,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    id: u64,
    start: u64,
    episode: Episode,
}

/// FIFO memory of whole episodes; sampling is uniform over joint experiences.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMemory {
    slots: VecDeque<Slot>,
    capacity: usize,
    n_agents: usize,
    total: usize,
    far: usize,
    next_id: u64,
    next_start: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize, n_agents: usize) -> Self {
        Self { slots: VecDeque::new(), capacity, n_agents, total: 0, far: 0, next_id: 0, next_start: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// Number of stored joint experiences.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn n_episodes(&self) -> usize {
        self.slots.len()
    }

    /// Number of stored agent-experiences currently flagged far-policy.
    pub fn far_count(&self) -> usize {
        self.far
    }

    pub fn episodes(&self) -> impl Iterator<Item = (u64, &Episode)> {
        self.slots.iter().map(|s| (s.id, &s.episode))
    }

    /// Appends an episode and evicts the oldest whole episodes while the
    /// memory is over capacity. A single episode longer than the capacity
    /// is kept on its own. Returns the new episode's id.
    pub fn store_episode(&mut self, ep: Episode) -> Result<u64, ReplayError> {
        if ep.is_empty() {
            return Err(ReplayError::EmptyEpisode);
        }
        if ep.n_agents() != self.n_agents || ep.steps.iter().any(|e| e.agents.len() != self.n_agents) {
            return Err(ReplayError::Shape(format!("memory holds {} agents per experience", self.n_agents)));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.total += ep.len();
        self.far += ep.far_count();
        self.slots.push_back(Slot { id, start: self.next_start, episode: ep });
        self.next_start += self.slots.back().map_or(0, |s| s.episode.len() as u64);
        while self.total > self.capacity && self.slots.len() > 1 {
            let old = self.slots.pop_front().expect("non-empty");
            self.total -= old.episode.len();
            self.far -= old.episode.far_count();
        }
        Ok(id)
    }

    fn slot_pos(&self, id: u64) -> Result<usize, ReplayError> {
        let front = self.slots.front().ok_or(ReplayError::UnknownEpisode(id))?.id;
        let pos = id.checked_sub(front).ok_or(ReplayError::UnknownEpisode(id))? as usize;
        if pos < self.slots.len() {
            Ok(pos)
        } else {
            Err(ReplayError::UnknownEpisode(id))
        }
    }

    pub fn episode(&self, id: u64) -> Result<&Episode, ReplayError> {
        Ok(&self.slots[self.slot_pos(id)?].episode)
    }

    /// Mutable access to an episode. Changing on-policy flags through this
    /// handle bypasses the far-policy counter; use [`ReplayMemory::update_status`]
    /// or call [`ReplayMemory::recount_far`] afterwards.
    pub fn episode_mut(&mut self, id: u64) -> Result<&mut Episode, ReplayError> {
        let pos = self.slot_pos(id)?;
        Ok(&mut self.slots[pos].episode)
    }

    /// Stores a refreshed value, weight and flag for one agent-experience.
    pub fn update_status(&mut self, at: SampleIndex, agent: usize, value: f64, rho: f64, on_policy: bool) -> Result<(), ReplayError> {
        let pos = self.slot_pos(at.episode)?;
        let rec = self.slots[pos]
            .episode
            .steps
            .get_mut(at.t)
            .and_then(|e| e.agents.get_mut(agent))
            .ok_or_else(|| ReplayError::Shape(format!("no agent {agent} at timestep {}", at.t)))?;
        match (rec.on_policy, on_policy) {
            (true, false) => self.far += 1,
            (false, true) => self.far -= 1,
            _ => {}
        }
        rec.value = value;
        rec.rho = rho;
        rec.on_policy = on_policy;
        Ok(())
    }

    /// Re-derives the far-policy counter from a full scan.
    pub fn recount_far(&mut self) -> usize {
        self.far = self.slots.iter().map(|s| s.episode.far_count()).sum();
        self.far
    }

    /// Fraction of stored agent-experiences flagged far-policy.
    pub fn far_policy_fraction(&self) -> Result<f64, ReplayError> {
        if self.total == 0 {
            return Err(ReplayError::Empty);
        }
        Ok(self.far as f64 / (self.total * self.n_agents) as f64)
    }

    /// `b` draws, uniform with replacement over stored joint experiences.
    pub fn sample_minibatch<R: Rng + ?Sized>(&self, b: usize, rng: &mut R) -> Result<Vec<SampleIndex>, ReplayError> {
        if self.total < b || self.total == 0 {
            return Err(ReplayError::NotReady { have: self.total, need: b.max(1) });
        }
        let base = self.slots.front().expect("non-empty").start;
        Ok((0..b)
            .map(|_| {
                let g = base + rng.random_range(0..self.total as u64);
                let pos = self.slots.partition_point(|s| s.start + s.episode.len() as u64 <= g);
                let slot = &self.slots[pos];
                SampleIndex { episode: slot.id, t: (g - slot.start) as usize }
            })
            .collect())
    }

    pub fn encode_into(&self, w: &mut Writer) {
        w.usize(self.capacity);
        w.usize(self.n_agents);
        w.u64(self.next_id);
        w.u64(self.next_start);
        w.usize(self.slots.len());
        for s in &self.slots {
            w.u64(s.id);
            w.u64(s.start);
            encode_episode(w, &s.episode);
        }
    }

    pub fn decode_from(r: &mut Reader<'_>, space: &ActionSpace) -> Result<Self, CodecError> {
        let capacity = r.u64()? as usize;
        let n_agents = r.count(1 << 16)?;
        if n_agents == 0 {
            return Err(CodecError::Invalid("memory with zero agents".into()));
        }
        let next_id = r.u64()?;
        let next_start = r.u64()?;
        let n_slots = r.len(16)?;
        let mut mem = ReplayMemory::new(capacity, n_agents);
        mem.next_id = next_id;
        mem.next_start = next_start;
        let mut expect: Option<(u64, u64)> = None;
        for _ in 0..n_slots {
            let id = r.u64()?;
            let start = r.u64()?;
            let episode = decode_episode(r, n_agents)?;
            episode.validate(space).map_err(|e| CodecError::Invalid(e.to_string()))?;
            if let Some((eid, estart)) = expect {
                if id != eid || start != estart {
                    return Err(CodecError::Invalid("episode ids or offsets are not contiguous".into()));
                }
            }
            let end = start
                .checked_add(episode.len() as u64)
                .ok_or_else(|| CodecError::Invalid("offset overflow".into()))?;
            expect = Some((id.wrapping_add(1), end));
            mem.total += episode.len();
            mem.far += episode.far_count();
            mem.slots.push_back(Slot { id, start, episode });
        }
        if let Some((eid, estart)) = expect {
            if eid != next_id || estart != next_start {
                return Err(CodecError::Invalid("memory counters disagree with stored episodes".into()));
            }
        }
        Ok(mem)
    }

    /// JSON dump of every stored episode.
    pub fn to_dump(&self) -> ReplayDump {
        ReplayDump {
            version: DUMP_VERSION,
            capacity: self.capacity,
            n_agents: self.n_agents,
            episodes: self.slots.iter().map(|s| s.episode.clone()).collect(),
        }
    }
}

/// Versioned, human-readable replay snapshot: episodes, then timesteps,
/// then per-agent records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayDump {
    pub version: u32,
    pub capacity: usize,
    pub n_agents: usize,
    pub episodes: Vec<Episode>,
}

impl ReplayDump {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("replay dump is always serializable")
    }

    /// Parses and validates a dump, rebuilding the memory it describes.
    pub fn from_json(text: &str, space: &ActionSpace) -> Result<ReplayMemory, ReplayError> {
        let dump: ReplayDump = serde_json::from_str(text).map_err(|e| ReplayError::Invalid(e.to_string()))?;
        if dump.version != DUMP_VERSION {
            return Err(ReplayError::Invalid(format!("unsupported dump version {}", dump.version)));
        }
        if dump.n_agents == 0 {
            return Err(ReplayError::Invalid("dump with zero agents".into()));
        }
        let mut mem = ReplayMemory::new(dump.capacity, dump.n_agents);
        for ep in dump.episodes {
            ep.validate(space)?;
            mem.store_episode(ep)?;
        }
        Ok(mem)
    }
}

pub fn encode_action(w: &mut Writer, a: &Action) {
    match a {
        Action::Continuous(x) => {
            w.u8(0);
            w.f64s(x);
        }
        Action::Discrete(k) => {
            w.u8(1);
            w.usize(*k);
        }
    }
}

pub fn decode_action(r: &mut Reader<'_>) -> Result<Action, CodecError> {
    match r.u8()? {
        0 => Ok(Action::Continuous(r.f64s()?)),
        1 => Ok(Action::Discrete(r.count(u32::MAX as usize)?)),
        t => Err(CodecError::Invalid(format!("action tag {t}"))),
    }
}

pub fn encode_policy(w: &mut Writer, p: &PolicyParams) {
    match p {
        PolicyParams::Continuous(gs) => {
            w.u8(0);
            w.usize(gs.len());
            for g in gs {
                w.f64(g.mu);
                w.f64(g.sigma);
            }
        }
        PolicyParams::Discrete(b) => {
            w.u8(1);
            w.f64s(&b.energies);
            w.f64(b.inv_temp);
        }
    }
}

pub fn decode_policy(r: &mut Reader<'_>) -> Result<PolicyParams, CodecError> {
    match r.u8()? {
        0 => {
            let n = r.len(16)?;
            let gs = (0..n)
                .map(|_| Ok(GaussParams { mu: r.f64()?, sigma: r.f64()? }))
                .collect::<Result<_, CodecError>>()?;
            Ok(PolicyParams::Continuous(gs))
        }
        1 => {
            let energies = r.f64s()?;
            let inv_temp = r.f64()?;
            Ok(PolicyParams::Discrete(BoltzmannParams { energies, inv_temp }))
        }
        t => Err(CodecError::Invalid(format!("policy tag {t}"))),
    }
}

fn encode_episode(w: &mut Writer, ep: &Episode) {
    w.usize(ep.steps.len());
    for e in &ep.steps {
        w.f64s(&e.rewards);
        for a in &e.agents {
            w.f64s(&a.state);
            encode_action(w, &a.action);
            encode_policy(w, &a.behavior);
            w.f64(a.value);
            w.f64(a.target);
            w.bool(a.on_policy);
            w.f64(a.rho);
        }
    }
    for s in &ep.terminal_states {
        w.f64s(s);
    }
    w.f64s(&ep.terminal_values);
}

fn decode_episode(r: &mut Reader<'_>, n_agents: usize) -> Result<Episode, CodecError> {
    let t_len = r.len(8)?;
    let mut steps = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        let rewards = r.f64s()?;
        if rewards.len() != n_agents {
            return Err(CodecError::Invalid("reward vector length".into()));
        }
        let mut agents = Vec::with_capacity(n_agents);
        for _ in 0..n_agents {
            agents.push(AgentRecord {
                state: r.f64s()?,
                action: decode_action(r)?,
                behavior: decode_policy(r)?,
                value: r.f64()?,
                target: r.f64()?,
                on_policy: r.bool()?,
                rho: r.f64()?,
            });
        }
        steps.push(Experience { rewards, agents });
    }
    let terminal_states = (0..n_agents).map(|_| r.f64s()).collect::<Result<_, _>>()?;
    let terminal_values = r.f64s()?;
    if terminal_values.len() != n_agents {
        return Err(CodecError::Invalid("terminal value count".into()));
    }
    Ok(Episode { steps, terminal_states, terminal_values })
}
