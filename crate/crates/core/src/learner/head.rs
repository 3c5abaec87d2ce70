//! Maps raw policy-head outputs to distribution parameters and chains the
//! distribution-level gradients back onto those raw outputs.
//!
//! Continuous heads are laid out as `(mean, scale)` pairs per action
//! dimension; discrete heads as `|A|` energies followed by one inverse
//! temperature pre-activation. Scales and inverse temperatures pass through
//! `softplus(x) + POSITIVE_FLOOR`.

use rand::Rng;

use crate::dist::boltzmann::{self, BoltzmannParams};
use crate::dist::clipped_normal::{self, GaussParams};
use crate::dist::{Action, ActionSpace, DistError, PolicyParams};
use crate::net::{Network, NetError};

pub const POSITIVE_FLOOR: f64 = 1e-4;

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyHead {
    space: ActionSpace,
}

impl PolicyHead {
    pub fn new(space: ActionSpace) -> Self {
        Self { space }
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn width(&self) -> usize {
        self.space.head_width()
    }

    pub fn params(&self, raw: &[f64]) -> PolicyParams {
        debug_assert_eq!(raw.len(), self.width());
        match &self.space {
            ActionSpace::Continuous { .. } => PolicyParams::Continuous(
                raw.chunks_exact(2)
                    .map(|c| GaussParams { mu: c[0], sigma: softplus(c[1]) + POSITIVE_FLOOR })
                    .collect(),
            ),
            ActionSpace::Discrete { n } => PolicyParams::Discrete(BoltzmannParams {
                energies: raw[..*n].to_vec(),
                inv_temp: softplus(raw[*n]) + POSITIVE_FLOOR,
            }),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, raw: &[f64], rng: &mut R) -> (Action, PolicyParams) {
        let p = self.params(raw);
        (p.sample(&self.space, rng), p)
    }

    /// Importance weight `pi_current(a) / pi_behavior(a)` and its gradient
    /// with respect to the raw head outputs of the current policy.
    pub fn iw_with_grad(&self, action: &Action, raw: &[f64], behavior: &PolicyParams) -> Result<(f64, Vec<f64>), DistError> {
        let current = self.params(raw);
        let mut grad = vec![0.0; raw.len()];
        match (&self.space, &current, behavior, action) {
            (
                ActionSpace::Continuous { bounds },
                PolicyParams::Continuous(q),
                PolicyParams::Continuous(p),
                Action::Continuous(x),
            ) if x.len() == bounds.len() && p.len() == bounds.len() => {
                let dims = bounds.len();
                let mut w = Vec::with_capacity(dims);
                let mut g = Vec::with_capacity(dims);
                for d in 0..dims {
                    let (wd, gd) = clipped_normal::iw_with_grad(x[d], &q[d], &p[d], &bounds[d])?;
                    w.push(wd);
                    g.push(gd);
                }
                // Product of the other dimensions' weights via prefix/suffix
                // products, so a zero factor does not need a division.
                let mut suffix = vec![1.0; dims + 1];
                for d in (0..dims).rev() {
                    suffix[d] = suffix[d + 1] * w[d];
                }
                let mut prefix = 1.0;
                for d in 0..dims {
                    let others = prefix * suffix[d + 1];
                    grad[2 * d] = others * g[d].d_mu;
                    grad[2 * d + 1] = others * g[d].d_sigma * sigmoid(raw[2 * d + 1]);
                    prefix *= w[d];
                }
                Ok((suffix[0], grad))
            }
            (ActionSpace::Discrete { n }, PolicyParams::Discrete(q), PolicyParams::Discrete(b), Action::Discrete(a)) => {
                let behavior_probs = boltzmann::probs(b);
                let (w, g) = boltzmann::iw_with_grad_discrete(*a, q, &behavior_probs)?;
                grad[..*n].copy_from_slice(&g.d_energies);
                grad[*n] = g.d_inv_temp * sigmoid(raw[*n]);
                Ok((w, grad))
            }
            _ => Err(DistError::InvalidExperience("action or behavior does not match the action space".into())),
        }
    }

    /// `KL(behavior || current)` and its gradient with respect to the raw
    /// head outputs of the current policy.
    pub fn kl_with_grad(&self, behavior: &PolicyParams, raw: &[f64]) -> Result<(f64, Vec<f64>), DistError> {
        let current = self.params(raw);
        let mut grad = vec![0.0; raw.len()];
        match (&self.space, &current, behavior) {
            (ActionSpace::Continuous { bounds }, PolicyParams::Continuous(q), PolicyParams::Continuous(p))
                if p.len() == bounds.len() =>
            {
                let mut total = 0.0;
                for d in 0..bounds.len() {
                    total += clipped_normal::kl(&p[d], &q[d], &bounds[d]);
                    let g = clipped_normal::kl_grad(&p[d], &q[d], &bounds[d]);
                    grad[2 * d] = g.d_mu;
                    grad[2 * d + 1] = g.d_sigma * sigmoid(raw[2 * d + 1]);
                }
                Ok((total, grad))
            }
            (ActionSpace::Discrete { n }, PolicyParams::Discrete(q), PolicyParams::Discrete(b)) => {
                let pb = boltzmann::probs(b);
                let kl = boltzmann::kl_discrete(&pb, &boltzmann::probs(q));
                let g = boltzmann::kl_grad_discrete(&pb, q);
                grad[..*n].copy_from_slice(&g.d_energies);
                grad[*n] = g.d_inv_temp * sigmoid(raw[*n]);
                Ok((kl, grad))
            }
            _ => Err(DistError::InvalidExperience("behavior does not match the action space".into())),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ChainError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// `KL(behavior || pi(.|state))` and its gradient with respect to every
/// network parameter (the head gradient chained through the network).
pub fn kl_reg_grad(
    net: &Network,
    head: &PolicyHead,
    state: &[f64],
    behavior: &PolicyParams,
) -> Result<(f64, Vec<f64>), ChainError> {
    let (_, raw) = net.forward(state)?;
    let (kl, d_raw) = head.kl_with_grad(behavior, &raw)?;
    Ok((kl, net.backward(state, 0.0, &d_raw)?))
}

/// Importance weight of a stored action and its gradient with respect to
/// every network parameter.
pub fn iw_grad_net(
    net: &Network,
    head: &PolicyHead,
    state: &[f64],
    action: &Action,
    behavior: &PolicyParams,
) -> Result<(f64, Vec<f64>), ChainError> {
    let (_, raw) = net.forward(state)?;
    let (w, d_raw) = head.iw_with_grad(action, &raw, behavior)?;
    Ok((w, net.backward(state, 0.0, &d_raw)?))
}

/// Gradient of the state value with respect to every network parameter.
pub fn value_grad_net(net: &Network, state: &[f64]) -> Result<(f64, Vec<f64>), NetError> {
    let (v, raw) = net.forward(state)?;
    Ok((v, net.backward(state, 1.0, &vec![0.0; raw.len()])?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Bounds;

    fn cont2() -> PolicyHead {
        PolicyHead::new(ActionSpace::Continuous {
            bounds: vec![Bounds::new(-1.0, 1.0).unwrap(), Bounds::new(-1.0, 1.0).unwrap()],
        })
    }

    #[test]
    fn softplus_and_sigmoid_tails() {
        assert_eq!(softplus(100.0), 100.0);
        assert!(softplus(-100.0) > 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn kl_zero_at_behavior() {
        let head = cont2();
        let raw = [0.1, -0.4, -0.3, 0.2];
        let b = head.params(&raw);
        let (kl, g) = head.kl_with_grad(&b, &raw).unwrap();
        assert_eq!(kl, 0.0);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn kl_is_additive_over_dimensions() {
        let head = cont2();
        let raw = [0.1, -0.4, -0.3, 0.2];
        let braw = [0.3, 0.1, 0.2, -0.5];
        let b = head.params(&braw);
        let (kl, _) = head.kl_with_grad(&b, &raw).unwrap();
        let one = PolicyHead::new(ActionSpace::Continuous { bounds: vec![Bounds::new(-1.0, 1.0).unwrap()] });
        let (k0, _) = one.kl_with_grad(&one.params(&braw[..2]), &raw[..2]).unwrap();
        let (k1, _) = one.kl_with_grad(&one.params(&braw[2..]), &raw[2..]).unwrap();
        assert!((kl - (k0 + k1)).abs() < 1e-15);
    }

    #[test]
    fn mismatched_action_is_rejected() {
        let head = cont2();
        let raw = [0.0; 4];
        let b = head.params(&raw);
        assert!(head.iw_with_grad(&Action::Discrete(0), &raw, &b).is_err());
    }
}
