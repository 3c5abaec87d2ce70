//! Agents steer point masses in `[-1, 1]^2` and are rewarded when two of
//! them touch the same target at once.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_count, EnvError, Environment, Transition};
use crate::dist::{Action, ActionSpace, Bounds};

pub const DEFAULT_AGENTS: usize = 3;
pub const N_TARGETS: usize = 3;
pub const ARENA: f64 = 1.0;
pub const TOUCH_RADIUS: f64 = 0.2;
pub const DRAG: f64 = 0.25;
pub const DT: f64 = 0.1;
pub const PAIR_REWARD: f64 = 10.0;
pub const TOUCH_REWARD: f64 = 0.01;
pub const THRUST_COST: f64 = 0.01;
pub const MAX_STEPS: usize = 100;

type Vec2 = [f64; 2];

fn dist(a: Vec2, b: Vec2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone)]
pub struct CoopTargets {
    n: usize,
    pos: Vec<Vec2>,
    vel: Vec<Vec2>,
    targets: Vec<Vec2>,
    t: usize,
    running: bool,
    clamped_actions: u64,
    rng: ChaCha8Rng,
}

impl CoopTargets {
    pub fn new(n_agents: usize) -> Self {
        Self {
            n: n_agents,
            pos: vec![[0.0; 2]; n_agents],
            vel: vec![[0.0; 2]; n_agents],
            targets: vec![[0.0; 2]; N_TARGETS],
            t: 0,
            running: false,
            clamped_actions: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Number of out-of-bound thrust components clamped so far.
    pub fn clamped_actions(&self) -> u64 {
        self.clamped_actions
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.pos
    }

    pub fn targets(&self) -> &[Vec2] {
        &self.targets
    }

    /// Places agents and targets by hand (velocities reset to zero).
    pub fn set_layout(&mut self, pos: Vec<Vec2>, targets: Vec<Vec2>) {
        assert_eq!(pos.len(), self.n);
        assert_eq!(targets.len(), N_TARGETS);
        self.pos = pos;
        self.vel = vec![[0.0; 2]; self.n];
        self.targets = targets;
    }

    fn random_point(&mut self) -> Vec2 {
        [self.rng.random_range(-ARENA..ARENA), self.rng.random_range(-ARENA..ARENA)]
    }

    /// A point at least one touch radius away from every agent.
    fn free_point(&mut self, others: &[Vec2]) -> Vec2 {
        for _ in 0..1000 {
            let p = self.random_point();
            if others.iter().all(|&o| dist(o, p) >= TOUCH_RADIUS) {
                return p;
            }
        }
        self.random_point()
    }

    fn observe(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                let me = self.pos[i];
                let rel = |p: Vec2| [p[0] - me[0], p[1] - me[1]];
                let mut obs = Vec::with_capacity(self.state_dim());
                obs.extend_from_slice(&me);
                obs.extend_from_slice(&self.vel[i]);
                let mut ts: Vec<Vec2> = self.targets.iter().map(|&p| rel(p)).collect();
                ts.sort_by(|a, b| a[0].hypot(a[1]).total_cmp(&b[0].hypot(b[1])));
                ts.iter().for_each(|p| obs.extend_from_slice(p));
                let mut os: Vec<Vec2> = (0..self.n).filter(|&j| j != i).map(|j| rel(self.pos[j])).collect();
                os.sort_by(|a, b| a[0].hypot(a[1]).total_cmp(&b[0].hypot(b[1])));
                os.iter().for_each(|p| obs.extend_from_slice(p));
                obs
            })
            .collect()
    }
}

impl Environment for CoopTargets {
    fn n_agents(&self) -> usize {
        self.n
    }

    /// Own position and velocity, targets then other agents relative to the
    /// agent, each sorted by distance.
    fn state_dim(&self) -> usize {
        4 + 2 * N_TARGETS + 2 * (self.n - 1)
    }

    fn action_space(&self) -> ActionSpace {
        let b = Bounds { lo: -1.0, hi: 1.0 };
        ActionSpace::Continuous { bounds: vec![b, b] }
    }

    fn max_steps(&self) -> usize {
        MAX_STEPS
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.pos.clear();
        for _ in 0..self.n {
            let p = self.free_point(&self.pos.clone());
            self.pos.push(p);
        }
        self.vel = vec![[0.0; 2]; self.n];
        self.targets.clear();
        for _ in 0..N_TARGETS {
            let mut taken = self.pos.clone();
            taken.extend_from_slice(&self.targets);
            let p = self.free_point(&taken);
            self.targets.push(p);
        }
        self.t = 0;
        self.running = true;
        self.observe()
    }

    fn step(&mut self, actions: &[Action]) -> Result<Transition, EnvError> {
        if !self.running {
            return Err(EnvError::NotRunning);
        }
        check_count(actions, self.n)?;
        let mut thrust = vec![[0.0; 2]; self.n];
        for (i, a) in actions.iter().enumerate() {
            match a {
                Action::Continuous(x) if x.len() == 2 && x.iter().all(|v| !v.is_nan()) => {
                    for d in 0..2 {
                        let c = x[d].clamp(-1.0, 1.0);
                        if c != x[d] {
                            self.clamped_actions += 1;
                        }
                        thrust[i][d] = c;
                    }
                }
                _ => return Err(EnvError::ActionKind(a.clone())),
            }
        }
        let mut rewards: Vec<f64> = thrust.iter().map(|u| -THRUST_COST * (u[0].abs() + u[1].abs())).collect();
        for i in 0..self.n {
            for d in 0..2 {
                self.vel[i][d] = (1.0 - DRAG) * self.vel[i][d] + DRAG * thrust[i][d];
                let p = self.pos[i][d] + DT * self.vel[i][d];
                if p.abs() > ARENA {
                    self.pos[i][d] = p.clamp(-ARENA, ARENA);
                    self.vel[i][d] = 0.0;
                } else {
                    self.pos[i][d] = p;
                }
            }
        }
        for k in 0..N_TARGETS {
            let mut near: Vec<(f64, usize)> = (0..self.n)
                .map(|i| (dist(self.pos[i], self.targets[k]), i))
                .filter(|&(d, _)| d <= TOUCH_RADIUS)
                .collect();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            match near.len() {
                0 => {}
                1 => rewards[near[0].1] += TOUCH_REWARD,
                _ => {
                    rewards[near[0].1] += PAIR_REWARD;
                    rewards[near[1].1] += PAIR_REWARD;
                    let pos = self.pos.clone();
                    self.targets[k] = self.free_point(&pos);
                }
            }
        }
        self.t += 1;
        let terminal = self.t >= MAX_STEPS;
        self.running = !terminal;
        Ok(Transition { rewards, states: self.observe(), terminal, absorbing: false })
    }
}
