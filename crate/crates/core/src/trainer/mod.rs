//! The synchronous collect-then-train loop.
//!
//! Each training episode is collected with the current network, stored with
//! V-trace targets, and followed by a fixed number of minibatch gradient
//! steps. Before the first training episode the memory is filled with
//! episodes from the untrained network.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod plot;
pub mod verify;

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::CodecError;
use crate::dist::clipped_normal::GUARD_RATIO;
use crate::dist::DistError;
use crate::envs::{EnvError, Environment};
use crate::learner::{
    classify, joint_iw, others_product, qret, refer_blend_into, scalarize, scalarize_value, DynamicsModel, LearnError,
    PolicyHead, ReferState, Scalarization,
};
use crate::net::{AdamState, NetError, NetLayout, Network, Trace};
use crate::replay::{anneal_cmax, AgentRecord, Episode, Experience, ReplayError, ReplayMemory, SampleIndex};

pub use checkpoint::TrainerCheckpoint;
pub use config::{Config, ConfigError};
pub use metrics::EpisodeMetrics;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("checkpoint: {0}")]
    Codec(#[from] CodecError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

/// Quantities of one minibatch element that the gradient treats as fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDetail {
    pub index: SampleIndex,
    pub targets: Vec<f64>,
    pub advantages: Vec<f64>,
    pub rhos: Vec<f64>,
    pub on_policy: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    /// Descent direction averaged over the minibatch.
    pub grad: Vec<f64>,
    pub mean_kl: f64,
    pub details: Vec<SampleDetail>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    pub mean_kl: f64,
    pub applied: bool,
}

pub struct Trainer {
    pub(crate) cfg: Config,
    pub(crate) env: Box<dyn Environment>,
    pub(crate) head: PolicyHead,
    pub(crate) net: Network,
    pub(crate) adam: AdamState,
    pub(crate) memory: ReplayMemory,
    pub(crate) refer: ReferState,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) episodes: u64,
    pub(crate) warmup_episodes: u64,
    pub(crate) train_steps: u64,
    pub(crate) skipped_steps: u64,
    traces: Vec<Trace>,
}

impl Trainer {
    pub fn new(cfg: Config) -> Result<Self, TrainError> {
        cfg.validate()?;
        let env = cfg.env.build();
        let head = PolicyHead::new(env.action_space());
        let layout = NetLayout::new(env.state_dim(), cfg.hidden_widths.clone(), head.width())?;
        let net = Network::init(layout, cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let refer = ReferState {
            beta: cfg.beta0,
            c_max: anneal_cmax(0, cfg.schedule()),
            f_star: cfg.f_star,
            eta_beta: cfg.eta_beta,
        };
        Ok(Self {
            adam: AdamState::new(net.n_params(), cfg.lr),
            memory: ReplayMemory::new(cfg.capacity, env.n_agents()),
            traces: vec![Trace::default(); env.n_agents()],
            cfg,
            env,
            head,
            net,
            refer,
            rng,
            episodes: 0,
            warmup_episodes: 0,
            train_steps: 0,
            skipped_steps: 0,
        })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn head(&self) -> &PolicyHead {
        &self.head
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn refer(&self) -> &ReferState {
        &self.refer
    }

    /// Overrides the ReF-ER state, e.g. to pin `beta` in experiments.
    pub fn set_refer(&mut self, refer: ReferState) {
        self.refer = refer;
    }

    /// Training episodes completed.
    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn warmup_episodes(&self) -> u64 {
        self.warmup_episodes
    }

    fn ready_size(&self) -> usize {
        self.cfg.min_experiences_before_training.max(self.cfg.batch)
    }

    /// Rolls one episode with actions sampled from the current network.
    /// Returns the episode (targets not yet computed) and per-agent returns.
    pub fn collect_episode(&mut self) -> Result<(Episode, Vec<f64>), TrainError> {
        let seed: u64 = self.rng.random();
        let n = self.env.n_agents();
        let mut states = self.env.reset(seed);
        let mut steps = Vec::with_capacity(self.env.max_steps());
        let mut returns = vec![0.0; n];
        loop {
            let mut agents = Vec::with_capacity(n);
            for s in states {
                let (v, raw) = self.net.forward(&s)?;
                let (action, params) = self.head.sample(&raw, &mut self.rng);
                agents.push(AgentRecord::fresh(s, action, params, v));
            }
            let actions: Vec<_> = agents.iter().map(|a| a.action.clone()).collect();
            let tr = self.env.step(&actions)?;
            for (r, x) in returns.iter_mut().zip(&tr.rewards) {
                *r += x;
            }
            steps.push(Experience { rewards: tr.rewards, agents });
            if tr.terminal {
                let terminal_values = if tr.absorbing {
                    vec![0.0; n]
                } else {
                    tr.states
                        .iter()
                        .map(|s| self.net.forward(s).map(|(v, _)| v))
                        .collect::<Result<_, _>>()?
                };
                let ep = Episode { steps, terminal_states: tr.states, terminal_values };
                return Ok((ep, returns));
            }
            states = tr.states;
        }
    }

    /// Computes the stored targets of a freshly collected episode, whose
    /// importance weights are all 1.
    pub fn postprocess_episode(&self, ep: &mut Episode) {
        let v = self.cfg.variant;
        ep.refresh_targets(0, self.cfg.gamma, v.scalarization(), v.dynamics());
    }

    /// Fills the memory with episodes from the current network until
    /// training may start. Returns the number of episodes collected.
    pub fn warmup(&mut self) -> Result<u64, TrainError> {
        let mut k = 0;
        while self.memory.len() < self.ready_size() {
            let (mut ep, _) = self.collect_episode()?;
            self.postprocess_episode(&mut ep);
            self.memory.store_episode(ep)?;
            self.warmup_episodes += 1;
            k += 1;
        }
        Ok(k)
    }

    /// Gradient of the blended minibatch objective at the current
    /// parameters. Refreshes the stored values, weights, flags and targets
    /// of every sampled experience first.
    pub fn batch_gradient(&mut self, batch: &[SampleIndex]) -> Result<BatchGradient, TrainError> {
        let n = self.memory.n_agents();
        let inv_n = 1.0 / n as f64;
        let inv_b = 1.0 / batch.len() as f64;
        let gamma = self.cfg.gamma;
        let scal = self.cfg.variant.scalarization();
        let dynamics = self.cfg.variant.dynamics();
        let (beta, c_max) = (self.refer.beta, self.refer.c_max);
        let width = self.head.width();

        let mut grad = vec![0.0; self.net.n_params()];
        let mut kl_sum = 0.0;
        let mut details = Vec::with_capacity(batch.len());
        let mut rhos = vec![0.0; n];
        let mut values = vec![0.0; n];
        let mut d_rho = vec![vec![0.0; width]; n];
        let mut d_kl = vec![vec![0.0; width]; n];
        let mut g = vec![0.0; width];
        let mut g_kl = vec![0.0; width];
        let mut out = vec![0.0; width];

        for &idx in batch {
            let exp = &self.memory.episode(idx.episode)?.steps[idx.t];
            for (j, rec) in exp.agents.iter().enumerate() {
                self.net.forward_trace(&rec.state, &mut self.traces[j])?;
                let raw = &self.traces[j].policy;
                values[j] = self.traces[j].value;
                match self.head.iw_with_grad(&rec.action, raw, &rec.behavior) {
                    Ok((w, dw)) => {
                        rhos[j] = w;
                        d_rho[j] = dw;
                    }
                    Err(DistError::ZeroBehaviorMass) => {
                        rhos[j] = GUARD_RATIO;
                        d_rho[j].fill(0.0);
                    }
                    Err(e) => return Err(e.into()),
                }
                let (kl, dk) = self.head.kl_with_grad(&rec.behavior, raw)?;
                kl_sum += kl * inv_n;
                d_kl[j] = dk;
            }
            let on: Vec<bool> = (0..n).map(|j| classify(joint_iw(&rhos, dynamics, j), c_max)).collect();
            for j in 0..n {
                self.memory.update_status(idx, j, values[j], rhos[j], on[j])?;
            }
            let ep = self.memory.episode_mut(idx.episode)?;
            ep.refresh_targets(idx.t, gamma, scal, dynamics);
            let ep = &*ep;
            let rewards = &ep.steps[idx.t].rewards;
            let targets: Vec<f64> = ep.steps[idx.t].agents.iter().map(|a| a.target).collect();
            let mut advantages = Vec::with_capacity(n);
            for j in 0..n {
                let next = match ep.steps.get(idx.t + 1) {
                    Some(e) => e.agents[j].target,
                    None => scalarize_value(&ep.terminal_values, j, scal),
                };
                let q = qret(scalarize(rewards, j, scal)?, next, gamma);
                advantages.push(q - scalarize_value(&values, j, scal));
            }
            let mean_adv = advantages.iter().sum::<f64>() / n as f64;

            for j in 0..n {
                let d_value = match scal {
                    Scalarization::Individual => (values[j] - targets[j]) * inv_n,
                    Scalarization::Cooperative => (0..n)
                        .map(|i| (scalarize_value(&values, i, scal) - targets[i]) * inv_n * inv_n)
                        .sum(),
                };
                let coef = match dynamics {
                    DynamicsModel::Local => advantages[j] * inv_n,
                    DynamicsModel::Full => mean_adv * others_product(&rhos, j),
                };
                for k in 0..width {
                    g[k] = coef * d_rho[j][k];
                    g_kl[k] = inv_n * d_kl[j][k];
                }
                refer_blend_into(&mut out, &g, &g_kl, beta, on[j]);
                for o in out.iter_mut() {
                    *o *= inv_b;
                }
                self.net.accumulate_backward(&self.traces[j], d_value * inv_b, &out, &mut grad);
            }
            details.push(SampleDetail { index: idx, targets, advantages, rhos: rhos.clone(), on_policy: on });
        }
        Ok(BatchGradient { grad, mean_kl: kl_sum * inv_b, details })
    }

    /// One minibatch update followed by the ReF-ER parameter updates.
    pub fn train_step(&mut self) -> Result<StepStats, TrainError> {
        let batch = self.memory.sample_minibatch(self.cfg.batch, &mut self.rng)?;
        let bg = self.batch_gradient(&batch)?;
        let grad_norm = bg.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let applied = match self.adam.step(self.net.params_mut(), &bg.grad) {
            Ok(()) => true,
            Err(NetError::NonFiniteGradient(_)) => {
                self.skipped_steps += 1;
                false
            }
            Err(e) => return Err(e.into()),
        };
        self.refer.update_beta(self.memory.far_policy_fraction()?);
        self.train_steps += 1;
        self.refer.c_max = anneal_cmax(self.train_steps, self.cfg.schedule());
        Ok(StepStats { grad_norm, mean_kl: bg.mean_kl, applied })
    }

    /// Collects, stores and trains on one episode.
    pub fn step_episode(&mut self) -> Result<EpisodeMetrics, TrainError> {
        self.warmup()?;
        let start = Instant::now();
        let (mut ep, returns) = self.collect_episode()?;
        let length = ep.len();
        self.postprocess_episode(&mut ep);
        self.memory.store_episode(ep)?;
        let n_steps = match self.cfg.grad_steps_per_episode {
            0 => length,
            k => k,
        };
        let (mut kl, mut norm, mut applied) = (0.0, 0.0, 0u64);
        for _ in 0..n_steps {
            let s = self.train_step()?;
            kl += s.mean_kl;
            if s.applied {
                norm += s.grad_norm;
                applied += 1;
            }
        }
        let m = EpisodeMetrics {
            episode: self.episodes,
            mean_return: returns.iter().sum::<f64>() / returns.len() as f64,
            returns,
            length,
            f_off: self.memory.far_policy_fraction()?,
            beta: self.refer.beta,
            c_max: self.refer.c_max,
            mean_kl: if n_steps > 0 { kl / n_steps as f64 } else { 0.0 },
            grad_norm: if applied > 0 { norm / applied as f64 } else { 0.0 },
            train_steps: self.train_steps,
            skipped_steps: self.skipped_steps,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        self.episodes += 1;
        Ok(m)
    }

    /// Trains until `max_episodes` (or `opts.stop_at`), appending metrics
    /// and writing checkpoints under `opts.out_dir` when given.
    pub fn run<F: FnMut(&EpisodeMetrics)>(&mut self, opts: &RunOptions, mut on_episode: F) -> Result<(), TrainError> {
        let mut sink = match &opts.out_dir {
            Some(dir) => {
                let path = dir.join(METRICS_FILE);
                let f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
                Some((path, BufWriter::new(f)))
            }
            None => None,
        };
        self.warmup()?;
        let end = opts.stop_at.map_or(self.cfg.max_episodes, |s| s.min(self.cfg.max_episodes));
        while self.episodes < end {
            let m = self.step_episode()?;
            if let Some((path, w)) = &mut sink {
                metrics::write_jsonl(w, &m).map_err(io_err(path))?;
            }
            on_episode(&m);
            if opts.checkpoint_every > 0 && self.episodes % opts.checkpoint_every == 0 {
                self.flush_and_checkpoint(opts, &mut sink)?;
            }
        }
        self.flush_and_checkpoint(opts, &mut sink)
    }

    fn flush_and_checkpoint(
        &self,
        opts: &RunOptions,
        sink: &mut Option<(PathBuf, BufWriter<File>)>,
    ) -> Result<(), TrainError> {
        if let Some((path, w)) = sink {
            w.flush().map_err(io_err(path))?;
        }
        if let Some(dir) = &opts.out_dir {
            self.save_checkpoint(&dir.join(CHECKPOINT_FILE))?;
        }
        Ok(())
    }

    /// Writes the full trainer state atomically (temporary file + rename).
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), TrainError> {
        let bytes = TrainerCheckpoint::encode(self);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, TrainError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Ok(TrainerCheckpoint::decode(&bytes)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub checkpoint_every: u64,
    /// Stop after this many training episodes even if `max_episodes` is larger.
    pub stop_at: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { out_dir: None, checkpoint_every: 100, stop_at: None }
    }
}

/// Starts a fresh run in `opts.out_dir` (metrics file truncated).
pub fn run_training<F: FnMut(&EpisodeMetrics)>(
    cfg: Config,
    opts: &RunOptions,
    on_episode: F,
) -> Result<Trainer, TrainError> {
    let mut t = Trainer::new(cfg)?;
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let cfg_path = dir.join(CONFIG_FILE);
        fs::write(&cfg_path, t.cfg.to_text()).map_err(io_err(&cfg_path))?;
        let path = dir.join(METRICS_FILE);
        File::create(&path).map_err(io_err(&path))?;
    }
    t.run(opts, on_episode)?;
    Ok(t)
}

/// Continues the run stored in `opts.out_dir` from its checkpoint. Metrics
/// written after the checkpoint are discarded first.
pub fn resume<F: FnMut(&EpisodeMetrics)>(opts: &RunOptions, on_episode: F) -> Result<Trainer, TrainError> {
    let dir = opts.out_dir.as_deref().ok_or_else(|| TrainError::Io {
        path: PathBuf::new(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "resume needs an output directory"),
    })?;
    let mut t = Trainer::load_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    let path = dir.join(METRICS_FILE);
    let f = File::open(&path).map_err(io_err(&path))?;
    let mut kept = metrics::read_jsonl(BufReader::new(f)).map_err(io_err(&path))?;
    kept.truncate(t.episodes as usize);
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    for m in &kept {
        metrics::write_jsonl(&mut w, m).map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    drop(w);
    t.run(opts, on_episode)?;
    Ok(t)
}

/// Mean per-agent return of `episodes` rollouts with actions sampled from
/// the network's policy; the network is not updated.
pub fn evaluate(
    net: &Network,
    head: &PolicyHead,
    env: &mut dyn Environment,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut states = env.reset(rng.random());
        let mut total = 0.0;
        loop {
            let mut actions = Vec::with_capacity(states.len());
            for s in &states {
                let (_, raw) = net.forward(s)?;
                actions.push(head.sample(&raw, &mut rng).0);
            }
            let tr = env.step(&actions)?;
            total += tr.rewards.iter().sum::<f64>() / tr.rewards.len() as f64;
            if tr.terminal {
                break;
            }
            states = tr.states;
        }
        out.push(total);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::Variant;

    fn tiny(variant: Variant, env: &str) -> Config {
        Config {
            capacity: 2000,
            min_experiences_before_training: 300,
            batch: 8,
            hidden_widths: vec![8],
            env: env.parse().unwrap(),
            variant,
            max_episodes: 3,
            grad_steps_per_episode: 5,
            lr: 1e-3,
            ..Config::default()
        }
    }

    #[test]
    fn warmup_fills_memory_without_training() {
        let mut t = Trainer::new(tiny(Variant::Ldi, "pursuit-lite")).unwrap();
        let before = t.net().params().to_vec();
        t.warmup().unwrap();
        assert!(t.memory().len() >= 300);
        assert_eq!(t.train_steps(), 0);
        assert_eq!(t.net().params(), &before[..]);
    }

    #[test]
    fn zero_episodes_means_empty_metrics() {
        let mut cfg = tiny(Variant::Ldi, "coop-targets");
        cfg.max_episodes = 0;
        let mut t = Trainer::new(cfg).unwrap();
        let mut seen = 0;
        t.run(&RunOptions::default(), |_| seen += 1).unwrap();
        assert_eq!(seen, 0);
        assert!(t.warmup_episodes() > 0);
    }

    #[test]
    fn fresh_episode_targets_are_discounted_returns() {
        let t = Trainer::new(tiny(Variant::Ldi, "coop-targets:2")).unwrap();
        let mut t = t;
        let (mut ep, _) = t.collect_episode().unwrap();
        t.postprocess_episode(&mut ep);
        let gamma = t.config().gamma;
        for i in 0..2 {
            let mut g = ep.terminal_values[i];
            for e in ep.steps.iter().rev() {
                g = e.rewards[i] + gamma * g;
            }
            assert!((ep.steps[0].agents[i].target - g).abs() < 1e-9);
        }
    }

    #[test]
    fn recorded_values_match_forward_pass() {
        let mut t = Trainer::new(tiny(Variant::Fdi, "coop-targets")).unwrap();
        let (ep, _) = t.collect_episode().unwrap();
        for e in &ep.steps {
            for a in &e.agents {
                assert_eq!(t.net().forward(&a.state).unwrap().0, a.value);
                if let crate::dist::Action::Continuous(x) = &a.action {
                    assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)));
                }
            }
        }
    }

    #[test]
    fn identical_minibatch_elements_average_to_one() {
        let mut t = Trainer::new(tiny(Variant::LdCo, "pursuit-lite:2")).unwrap();
        t.warmup().unwrap();
        let idx = SampleIndex { episode: 0, t: 3 };
        let one = t.batch_gradient(&[idx]).unwrap();
        let four = t.batch_gradient(&[idx; 4]).unwrap();
        for (a, b) in one.grad.iter().zip(&four.grad) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-12));
        }
    }

    #[test]
    fn same_seed_same_metrics() {
        let run = || {
            let mut out = Vec::new();
            let mut t = Trainer::new(tiny(Variant::FdCo, "pursuit-lite")).unwrap();
            t.run(&RunOptions::default(), |m| out.push(m.clone())).unwrap();
            out
        };
        let (a, b) = (run(), run());
        assert_eq!(a.len(), 3);
        assert!(a.iter().zip(&b).all(|(x, y)| x.same_run_as(y)));
    }
}
