//! Grid pursuit: pursuers capture randomly moving evaders by blocking all
//! four of their neighbours (walls count as blocked).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_count, EnvError, Environment, Transition};
use crate::dist::{Action, ActionSpace};

pub const GRID: i32 = 8;
pub const DEFAULT_PURSUERS: usize = 4;
pub const N_EVADERS: usize = 4;
pub const WINDOW: i32 = 5;
pub const CAPTURE_REWARD: f64 = 5.0;
pub const TOUCH_REWARD: f64 = 0.01;
pub const MAX_STEPS: usize = 100;

/// Up, down, left, right, stay.
pub const MOVES: [(i32, i32); 5] = [(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)];
const NEIGHBOURS: [(i32, i32); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

pub type Cell = (i32, i32);

fn on_grid(c: Cell) -> bool {
    (0..GRID).contains(&c.0) && (0..GRID).contains(&c.1)
}

fn shift(c: Cell, d: (i32, i32)) -> Cell {
    (c.0 + d.0, c.1 + d.1)
}

#[derive(Debug, Clone)]
pub struct PursuitLite {
    n: usize,
    pursuers: Vec<Cell>,
    evaders: Vec<Cell>,
    t: usize,
    running: bool,
    captures: usize,
    rng: ChaCha8Rng,
}

impl PursuitLite {
    pub fn new(n_pursuers: usize) -> Self {
        Self {
            n: n_pursuers,
            pursuers: Vec::new(),
            evaders: Vec::new(),
            t: 0,
            running: false,
            captures: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn pursuers(&self) -> &[Cell] {
        &self.pursuers
    }

    pub fn evaders(&self) -> &[Cell] {
        &self.evaders
    }

    /// Evaders captured in the current episode.
    pub fn captures(&self) -> usize {
        self.captures
    }

    /// Places entities by hand; the episode clock restarts.
    pub fn set_layout(&mut self, pursuers: Vec<Cell>, evaders: Vec<Cell>) {
        assert_eq!(pursuers.len(), self.n);
        self.pursuers = pursuers;
        self.evaders = evaders;
        self.t = 0;
        self.captures = 0;
        self.running = true;
    }

    fn occupied(&self, c: Cell) -> bool {
        self.pursuers.contains(&c) || self.evaders.contains(&c)
    }

    fn surrounded(&self, c: Cell) -> bool {
        NEIGHBOURS.iter().all(|&d| {
            let nb = shift(c, d);
            !on_grid(nb) || self.pursuers.contains(&nb)
        })
    }

    fn capture(&mut self) -> usize {
        let before = self.evaders.len();
        let caught: Vec<bool> = self.evaders.iter().map(|&e| self.surrounded(e)).collect();
        let mut k = 0;
        self.evaders.retain(|_| {
            k += 1;
            !caught[k - 1]
        });
        before - self.evaders.len()
    }

    fn observe(&self) -> Vec<Vec<f64>> {
        let half = WINDOW / 2;
        let plane = (WINDOW * WINDOW) as usize;
        (0..self.n)
            .map(|i| {
                let me = self.pursuers[i];
                let mut obs = vec![0.0; 3 * plane];
                for dr in -half..=half {
                    for dc in -half..=half {
                        let c = shift(me, (dr, dc));
                        let k = ((dr + half) * WINDOW + (dc + half)) as usize;
                        if !on_grid(c) {
                            obs[k] = 1.0;
                        } else if (dr, dc) != (0, 0) && self.pursuers.contains(&c) {
                            obs[plane + k] = 1.0;
                        } else if self.evaders.contains(&c) {
                            obs[2 * plane + k] = 1.0;
                        }
                    }
                }
                obs
            })
            .collect()
    }
}

impl Environment for PursuitLite {
    fn n_agents(&self) -> usize {
        self.n
    }

    /// Wall, ally and evader planes of the window around the pursuer.
    fn state_dim(&self) -> usize {
        3 * (WINDOW * WINDOW) as usize
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete { n: MOVES.len() }
    }

    fn max_steps(&self) -> usize {
        MAX_STEPS
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cells: Vec<Cell> = Vec::with_capacity(self.n + N_EVADERS);
        while cells.len() < self.n + N_EVADERS {
            let c = (self.rng.random_range(0..GRID), self.rng.random_range(0..GRID));
            if !cells.contains(&c) {
                cells.push(c);
            }
        }
        self.evaders = cells.split_off(self.n);
        self.pursuers = cells;
        self.t = 0;
        self.captures = 0;
        self.running = true;
        self.observe()
    }

    fn step(&mut self, actions: &[Action]) -> Result<Transition, EnvError> {
        if !self.running {
            return Err(EnvError::NotRunning);
        }
        check_count(actions, self.n)?;
        let mut wanted = Vec::with_capacity(self.n);
        for (i, a) in actions.iter().enumerate() {
            match a {
                Action::Discrete(k) if *k < MOVES.len() => {
                    let c = shift(self.pursuers[i], MOVES[*k]);
                    let blocked = c != self.pursuers[i] && (!on_grid(c) || self.occupied(c));
                    wanted.push(if blocked { self.pursuers[i] } else { c });
                }
                _ => return Err(EnvError::ActionKind(a.clone())),
            }
        }
        let contested: Vec<bool> = (0..self.n)
            .map(|i| wanted[i] != self.pursuers[i] && (0..self.n).any(|j| j != i && wanted[j] == wanted[i]))
            .collect();
        for i in 0..self.n {
            if !contested[i] {
                self.pursuers[i] = wanted[i];
            }
        }
        let mut caught = self.capture();
        for e in 0..self.evaders.len() {
            let here = self.evaders[e];
            let options: Vec<Cell> = MOVES
                .iter()
                .map(|&d| shift(here, d))
                .filter(|&c| c == here || (on_grid(c) && !self.occupied(c)))
                .collect();
            self.evaders[e] = options[self.rng.random_range(0..options.len())];
        }
        caught += self.capture();
        self.captures += caught;

        let rewards = self
            .pursuers
            .iter()
            .map(|&p| {
                let touching = self.evaders.iter().any(|&e| NEIGHBOURS.iter().any(|&d| shift(p, d) == e));
                CAPTURE_REWARD * caught as f64 + if touching { TOUCH_REWARD } else { 0.0 }
            })
            .collect();
        self.t += 1;
        let absorbing = self.evaders.is_empty();
        let terminal = absorbing || self.t >= MAX_STEPS;
        self.running = !terminal;
        Ok(Transition { rewards, states: self.observe(), terminal, absorbing })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STAY: usize = 4;

    fn act(ks: &[usize]) -> Vec<Action> {
        ks.iter().map(|&k| Action::Discrete(k)).collect()
    }

    #[test]
    fn all_stay_keeps_pursuers_in_place() {
        let mut env = PursuitLite::new(4);
        env.reset(3);
        let before = env.pursuers().to_vec();
        env.step(&act(&[STAY; 4])).unwrap();
        assert_eq!(env.pursuers(), &before[..]);
    }

    #[test]
    fn surround_rewards_every_pursuer() {
        let mut env = PursuitLite::new(4);
        // Evader at (4,4); three sides blocked, the fourth pursuer closes in.
        env.set_layout(vec![(3, 4), (5, 4), (4, 3), (4, 6)], vec![(4, 4), (0, 0)]);
        let tr = env.step(&act(&[STAY, STAY, STAY, 2])).unwrap();
        assert_eq!(env.pursuers()[3], (4, 5));
        assert_eq!(env.evaders().len(), 1);
        assert!(tr.rewards.iter().all(|&r| r >= CAPTURE_REWARD));
        assert!(!tr.absorbing);
    }

    #[test]
    fn corner_capture_ends_episode() {
        let mut env = PursuitLite::new(2);
        env.set_layout(vec![(0, 1), (2, 0)], vec![(0, 0)]);
        let tr = env.step(&act(&[STAY, 0])).unwrap();
        assert!(tr.terminal && tr.absorbing);
        assert_eq!(tr.rewards, vec![CAPTURE_REWARD; 2]);
        assert!(env.step(&act(&[STAY, STAY])).is_err());
    }

    #[test]
    fn contested_cell_means_both_stay() {
        let mut env = PursuitLite::new(2);
        env.set_layout(vec![(3, 2), (3, 4)], vec![(7, 7)]);
        env.step(&act(&[3, 2])).unwrap();
        assert_eq!(env.pursuers(), &[(3, 2), (3, 4)]);
    }

    #[test]
    fn corner_window_is_padded_with_walls() {
        let mut env = PursuitLite::new(1);
        env.set_layout(vec![(0, 0)], vec![(1, 1)]);
        let obs = &env.observe()[0];
        let wall = &obs[..25];
        // Rows -2 and -1, and columns -2 and -1, are off the grid.
        assert_eq!(wall.iter().filter(|&&v| v == 1.0).count(), 25 - 9);
        assert_eq!(obs[2 * 25 + 3 * 5 + 3], 1.0);
    }

    #[test]
    fn reset_is_deterministic_and_collision_free() {
        let mut a = PursuitLite::new(4);
        let mut b = PursuitLite::new(4);
        assert_eq!(a.reset(11), b.reset(11));
        let mut all = a.pursuers().to_vec();
        all.extend_from_slice(a.evaders());
        let mut dedup = all.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), all.len());
        let layouts: Vec<_> = (0..5u64).map(|s| {
            a.reset(s);
            a.pursuers().to_vec()
        }).collect();
        assert!(layouts.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn episodes_terminate_and_rewards_are_bounded() {
        let mut env = PursuitLite::new(4);
        for seed in 0..20 {
            env.reset(seed);
            let mut capture_events = 0.0;
            let mut k = 0;
            loop {
                let tr = env.step(&act(&[k % 5, (k + 1) % 5, (k * 3) % 5, (k * 7) % 5])).unwrap();
                capture_events += (tr.rewards[0] / CAPTURE_REWARD).floor();
                k += 1;
                if tr.terminal {
                    break;
                }
            }
            assert!(k <= MAX_STEPS);
            assert!(capture_events <= N_EVADERS as f64);
        }
    }
}
