//! Multi-agent V-RACER learning rules with ReF-ER.
//!
//! Sign convention: policy gradients `g` are ascent directions of the
//! expected off-policy advantage; everything handed to the optimizer is a
//! descent direction, so [`refer_blend`] negates `g` and adds the KL
//! regularizer gradient as is.

pub mod head;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use head::{iw_grad_net, kl_reg_grad, value_grad_net, PolicyHead};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("agent index {index} out of range for {n} agents")]
    AgentIndex { index: usize, n: usize },
    #[error("unknown variant {0:?} (expected LDI, LDCo, FDI or FDCo)")]
    UnknownVariant(String),
}

/// How the reward vector (and the value function) is reduced per agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scalarization {
    /// Each agent learns from its own reward and value.
    Individual,
    /// Rewards and values are averaged over agents.
    Cooperative,
}

/// Which agents' action probabilities enter an importance weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamicsModel {
    /// The agent's own ratio only.
    Local,
    /// Product of every agent's ratio.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Ldi,
    LdCo,
    Fdi,
    FdCo,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ldi, Variant::LdCo, Variant::Fdi, Variant::FdCo];

    pub fn dynamics(self) -> DynamicsModel {
        match self {
            Variant::Ldi | Variant::LdCo => DynamicsModel::Local,
            Variant::Fdi | Variant::FdCo => DynamicsModel::Full,
        }
    }

    pub fn scalarization(self) -> Scalarization {
        match self {
            Variant::Ldi | Variant::Fdi => Scalarization::Individual,
            Variant::LdCo | Variant::FdCo => Scalarization::Cooperative,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ldi => "LDI",
            Variant::LdCo => "LDCo",
            Variant::Fdi => "FDI",
            Variant::FdCo => "FDCo",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = LearnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| LearnError::UnknownVariant(s.to_string()))
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `f^(i)(r)`: the agent's own reward, or the mean reward.
pub fn scalarize(r: &[f64], i: usize, s: Scalarization) -> Result<f64, LearnError> {
    if i >= r.len() {
        return Err(LearnError::AgentIndex { index: i, n: r.len() });
    }
    Ok(match s {
        Scalarization::Individual => r[i],
        Scalarization::Cooperative => mean(r),
    })
}

/// `V_f^(i)`: the agent's own value, or the mean value over agents.
pub fn scalarize_value(values: &[f64], i: usize, s: Scalarization) -> f64 {
    match s {
        Scalarization::Individual => values[i],
        Scalarization::Cooperative => mean(values),
    }
}

/// Importance weight seen by agent `i`.
pub fn joint_iw(rhos: &[f64], d: DynamicsModel, i: usize) -> f64 {
    match d {
        DynamicsModel::Local => rhos[i],
        DynamicsModel::Full => rhos.iter().product(),
    }
}

/// Product of every ratio except agent `j`'s.
pub fn others_product(rhos: &[f64], j: usize) -> f64 {
    rhos.iter()
        .enumerate()
        .filter(|&(k, _)| k != j)
        .map(|(_, &r)| r)
        .product()
}

/// Retrace estimate `f(r_t) + gamma * Vtbc_{t+1}`.
pub fn qret(r_scalar: f64, vtbc_next: f64, gamma: f64) -> f64 {
    r_scalar + gamma * vtbc_next
}

/// Descent gradient of `1/2 (V - Vtbc)^2` given `dV/dtheta`.
pub fn value_grad(v_pred: f64, vtbc_target: f64, d_v_net: &[f64]) -> Vec<f64> {
    let r = v_pred - vtbc_target;
    d_v_net.iter().map(|d| r * d).collect()
}

/// Ascent gradient of `rho * A` given `drho/dtheta`.
pub fn policy_grad(advantage: f64, iw_grad_net: &[f64]) -> Vec<f64> {
    iw_grad_net.iter().map(|d| advantage * d).collect()
}

/// ReF-ER blend in descent convention: `beta * (-g) + (1 - beta) * g_kl`
/// for on-policy samples, `(1 - beta) * g_kl` otherwise.
pub fn refer_blend(g: &[f64], g_kl: &[f64], beta: f64, on_policy: bool) -> Vec<f64> {
    let mut out = vec![0.0; g_kl.len()];
    refer_blend_into(&mut out, g, g_kl, beta, on_policy);
    out
}

pub fn refer_blend_into(out: &mut [f64], g: &[f64], g_kl: &[f64], beta: f64, on_policy: bool) {
    debug_assert_eq!(g.len(), g_kl.len());
    let w_kl = 1.0 - beta;
    if on_policy {
        for ((o, &gi), &ki) in out.iter_mut().zip(g).zip(g_kl) {
            *o = -beta * gi + w_kl * ki;
        }
    } else {
        for (o, &ki) in out.iter_mut().zip(g_kl) {
            *o = w_kl * ki;
        }
    }
}

/// Per-sample gradients that make up one minibatch contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub policy_grad: Vec<f64>,
    pub value_grad: Vec<f64>,
    pub kl_grad: Vec<f64>,
    pub on_policy: bool,
}

impl GradientBundle {
    /// Total descent direction: blended policy part plus value part.
    pub fn combined(&self, beta: f64) -> Vec<f64> {
        let mut out = refer_blend(&self.policy_grad, &self.kl_grad, beta, self.on_policy);
        for (o, v) in out.iter_mut().zip(&self.value_grad) {
            *o += v;
        }
        out
    }
}

/// ReF-ER control state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferState {
    pub beta: f64,
    pub c_max: f64,
    pub f_star: f64,
    pub eta_beta: f64,
}

impl Default for ReferState {
    fn default() -> Self {
        Self { beta: 0.3, c_max: 4.0, f_star: 0.1, eta_beta: 1e-4 }
    }
}

impl ReferState {
    /// Pulls `beta` toward 0 while the far-policy fraction exceeds the
    /// target and toward 1 otherwise.
    pub fn update_beta(&mut self, f_off: f64) {
        let eta = self.eta_beta;
        self.beta = if f_off > self.f_star {
            (1.0 - eta) * self.beta
        } else {
            (1.0 - eta) * self.beta + eta
        };
        self.beta = self.beta.clamp(0.0, 1.0);
    }
}

/// On-policy iff `1/c_max < rho < c_max`.
pub fn classify(rho: f64, c_max: f64) -> bool {
    rho > 1.0 / c_max && rho < c_max
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalarize_examples() {
        let r = [1.0, 2.0, 3.0];
        assert_eq!(scalarize(&r, 2, Scalarization::Individual).unwrap(), 3.0);
        assert_eq!(scalarize(&r, 0, Scalarization::Cooperative).unwrap(), 2.0);
        assert_eq!(scalarize(&[3.0, 1.0, 2.0], 1, Scalarization::Cooperative).unwrap(), 2.0);
        assert!(scalarize(&r, 3, Scalarization::Individual).is_err());
    }

    #[test]
    fn joint_iw_examples() {
        let r = [0.5, 2.0, 1.0];
        assert_eq!(joint_iw(&r, DynamicsModel::Full, 0), 1.0);
        assert_eq!(joint_iw(&r, DynamicsModel::Local, 1), 2.0);
        assert_eq!(joint_iw(&[1.0; 4], DynamicsModel::Full, 3), 1.0);
        assert_eq!(others_product(&r, 1), 0.5);
    }

    #[test]
    fn qret_examples() {
        assert!((qret(1.0, 2.0, 0.995) - 2.99).abs() < 1e-15);
        assert_eq!(qret(1.5, 7.0, 0.0), 1.5);
        assert_eq!(qret(1.5, 0.0, 0.995), 1.5);
    }

    #[test]
    fn value_and_policy_grad_linearity() {
        let d = [0.5, -1.0, 2.0];
        assert!(value_grad(1.0, 1.0, &d).iter().all(|&v| v == 0.0));
        let a = value_grad(3.0, 1.0, &d);
        let b = value_grad(5.0, 1.0, &d);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(2.0 * x, *y);
        }
        assert!(policy_grad(0.0, &d).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blend_examples() {
        let g = [1.0, -2.0];
        let k = [0.5, 0.25];
        assert_eq!(refer_blend(&g, &k, 1.0, true), vec![-1.0, 2.0]);
        assert_eq!(refer_blend(&g, &k, 0.0, true), k.to_vec());
        assert_eq!(refer_blend(&g, &k, 0.0, false), k.to_vec());
        assert_eq!(refer_blend(&g, &k, 0.4, false), vec![0.6 * 0.5, 0.6 * 0.25]);
    }

    #[test]
    fn beta_update_arithmetic() {
        let mut s = ReferState::default();
        s.update_beta(0.2);
        assert!((s.beta - 0.29997).abs() < 1e-15);
        let mut s = ReferState { eta_beta: 0.1, ..Default::default() };
        for _ in 0..1000 {
            s.update_beta(0.0);
        }
        assert!((s.beta - 1.0).abs() < 1e-12);
        for _ in 0..1000 {
            s.update_beta(1.0);
        }
        assert!(s.beta < 1e-12);
    }

    #[test]
    fn classify_examples() {
        assert!(classify(1.0, 4.0));
        assert!(!classify(4.0, 4.0));
        assert!(!classify(0.25, 4.0));
        assert!(!classify(0.2, 4.0));
        assert!(classify(0.2500001, 4.0));
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("XYZ".parse::<Variant>().is_err());
        assert_eq!(Variant::FdCo.dynamics(), DynamicsModel::Full);
        assert_eq!(Variant::FdCo.scalarization(), Scalarization::Cooperative);
    }
}
