//! Feed-forward approximator with a shared tanh trunk and two linear heads:
//! a scalar state-value head and a raw policy-parameter head.
//!
//! Parameters live in one flat vector with a canonical ordering: trunk
//! layers first, then the value head, then the policy head; within each
//! layer the row-major weight matrix precedes the bias. Adam and the
//! checkpoint format both index into that vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};

pub const HEAD_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("layout error: {0}")]
    Layout(String),
    #[error("non-finite gradient entry at index {0}; update rejected")]
    NonFiniteGradient(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetLayout {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub value_out: usize,
    pub policy_out: usize,
}

impl NetLayout {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, policy_out: usize) -> Result<Self, NetError> {
        let l = Self { input_dim, hidden_widths, value_out: 1, policy_out };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0 || self.policy_out == 0 || self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(NetError::Layout(format!("zero-sized dimension in {self:?}")));
        }
        if self.value_out != 1 {
            return Err(NetError::Layout(format!("value head must be scalar, got {}", self.value_out)));
        }
        Ok(())
    }

    fn trunk_out(&self) -> usize {
        self.hidden_widths.last().copied().unwrap_or(self.input_dim)
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        let mut prev = self.input_dim;
        for &w in &self.hidden_widths {
            n += w * prev + w;
            prev = w;
        }
        let t = self.trunk_out();
        n + (t + 1) * (self.value_out + self.policy_out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Span {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

impl Span {
    fn end(&self) -> usize {
        self.b + self.rows
    }
}

fn spans_for(layout: &NetLayout) -> Vec<Span> {
    let mut spans = Vec::with_capacity(layout.hidden_widths.len() + 2);
    let mut off = 0;
    let mut prev = layout.input_dim;
    let mut push = |rows: usize, cols: usize| {
        spans.push(Span { w: off, b: off + rows * cols, rows, cols });
        off += rows * cols + rows;
    };
    for &w in &layout.hidden_widths {
        push(w, prev);
        prev = w;
    }
    push(layout.value_out, prev);
    push(layout.policy_out, prev);
    spans
}

/// Intermediate activations of one forward pass, reusable across calls.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
    pub value: f64,
    pub policy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layout: NetLayout,
    spans: Vec<Span>,
    params: Vec<f64>,
}

impl Network {
    pub fn zeros(layout: NetLayout) -> Result<Self, NetError> {
        layout.validate()?;
        let spans = spans_for(&layout);
        let params = vec![0.0; layout.n_params()];
        Ok(Self { layout, spans, params })
    }

    /// LeCun-uniform trunk weights (`U(-sqrt(3/fan_in), sqrt(3/fan_in))`),
    /// heads drawn the same way and scaled by [`HEAD_INIT_SCALE`], zero biases.
    pub fn init(layout: NetLayout, seed: u64) -> Result<Self, NetError> {
        let mut net = Self::zeros(layout)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_trunk = net.layout.hidden_widths.len();
        for (k, span) in net.spans.iter().enumerate() {
            let limit = (3.0 / span.cols as f64).sqrt();
            let scale = if k < n_trunk { 1.0 } else { HEAD_INIT_SCALE };
            for w in &mut net.params[span.w..span.b] {
                *w = scale * rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn from_params(layout: NetLayout, params: Vec<f64>) -> Result<Self, NetError> {
        let mut net = Self::zeros(layout)?;
        if params.len() != net.params.len() {
            return Err(NetError::Layout(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layout(&self) -> &NetLayout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Flat index range of the value head (weights and bias).
    pub fn value_head_range(&self) -> std::ops::Range<usize> {
        let s = self.spans[self.spans.len() - 2];
        s.w..s.end()
    }

    /// Flat index range of the policy head (weights and bias).
    pub fn policy_head_range(&self) -> std::ops::Range<usize> {
        let s = self.spans[self.spans.len() - 1];
        s.w..s.end()
    }

    pub fn forward(&self, state: &[f64]) -> Result<(f64, Vec<f64>), NetError> {
        let mut t = Trace::default();
        self.forward_trace(state, &mut t)?;
        Ok((t.value, t.policy))
    }

    pub fn forward_trace(&self, state: &[f64], trace: &mut Trace) -> Result<(), NetError> {
        if state.len() != self.layout.input_dim {
            return Err(NetError::Layout(format!(
                "state has length {}, network expects {}",
                state.len(),
                self.layout.input_dim
            )));
        }
        let n_hidden = self.layout.hidden_widths.len();
        trace.acts.resize(n_hidden + 1, Vec::new());
        trace.acts[0].clear();
        trace.acts[0].extend_from_slice(state);
        for k in 0..n_hidden {
            let (done, rest) = trace.acts.split_at_mut(k + 1);
            affine(&self.params, self.spans[k], &done[k], &mut rest[0]);
            for v in rest[0].iter_mut() {
                *v = v.tanh();
            }
        }
        let h = &trace.acts[n_hidden];
        let mut v = Vec::with_capacity(1);
        affine(&self.params, self.spans[n_hidden], h, &mut v);
        trace.value = v[0];
        affine(&self.params, self.spans[n_hidden + 1], h, &mut trace.policy);
        Ok(())
    }

    /// Adds the gradient of `d_value * V + <d_policy, policy_raw>` with
    /// respect to all parameters into `grad`.
    pub fn accumulate_backward(&self, trace: &Trace, d_value: f64, d_policy: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        debug_assert_eq!(d_policy.len(), self.layout.policy_out);
        let n_hidden = self.layout.hidden_widths.len();
        let h = &trace.acts[n_hidden];
        let mut dh = vec![0.0; h.len()];
        affine_backward(&self.params, self.spans[n_hidden], h, &[d_value], grad, &mut dh);
        affine_backward(&self.params, self.spans[n_hidden + 1], h, d_policy, grad, &mut dh);
        for k in (0..n_hidden).rev() {
            let out = &trace.acts[k + 1];
            for (d, &a) in dh.iter_mut().zip(out) {
                *d *= 1.0 - a * a;
            }
            let input = &trace.acts[k];
            let mut dx = vec![0.0; input.len()];
            affine_backward(&self.params, self.spans[k], input, &dh, grad, &mut dx);
            dh = dx;
        }
    }

    /// Reverse-mode gradient of `d_value * V(s) + <d_policy, policy_raw(s)>`.
    pub fn backward(&self, state: &[f64], d_value: f64, d_policy: &[f64]) -> Result<Vec<f64>, NetError> {
        if d_policy.len() != self.layout.policy_out {
            return Err(NetError::Layout(format!(
                "policy gradient has length {}, head has {}",
                d_policy.len(),
                self.layout.policy_out
            )));
        }
        let mut t = Trace::default();
        self.forward_trace(state, &mut t)?;
        let mut g = vec![0.0; self.params.len()];
        self.accumulate_backward(&t, d_value, d_policy, &mut g);
        Ok(g)
    }
}

fn affine(params: &[f64], s: Span, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let w = &params[s.w..s.b];
    let b = &params[s.b..s.b + s.rows];
    for r in 0..s.rows {
        let row = &w[r * s.cols..(r + 1) * s.cols];
        let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
        out.push(b[r] + dot);
    }
}

fn affine_backward(params: &[f64], s: Span, x: &[f64], dz: &[f64], grad: &mut [f64], dx: &mut [f64]) {
    let w = &params[s.w..s.b];
    for (r, &d) in dz.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &w[r * s.cols..(r + 1) * s.cols];
        let grow = &mut grad[s.w + r * s.cols..s.w + (r + 1) * s.cols];
        for ((g, &xi), (dxi, &wi)) in grow.iter_mut().zip(x).zip(dx.iter_mut().zip(row)) {
            *g += d * xi;
            *dxi += d * wi;
        }
        grad[s.b + r] += d;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected descent step. Rejects the whole update (state
    /// untouched) if any gradient entry is non-finite.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), NetError> {
        if grad.len() != params.len() || grad.len() != self.m.len() {
            return Err(NetError::Layout(format!(
                "gradient length {} vs {} parameters",
                grad.len(),
                params.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(NetError::NonFiniteGradient(i));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

const NET_MAGIC: &[u8] = b"RFNN";
const NET_VERSION: u32 = 1;
const MAX_WIDTH: usize = 1 << 20;

/// Network parameters plus optimizer state, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct NetCheckpoint {
    pub net: Network,
    pub adam: AdamState,
}

impl NetCheckpoint {
    pub fn encode_into(&self, w: &mut Writer) {
        w.bytes(NET_MAGIC);
        w.u32(NET_VERSION);
        let l = &self.net.layout;
        w.usize(l.input_dim);
        w.usize(l.hidden_widths.len());
        for &h in &l.hidden_widths {
            w.usize(h);
        }
        w.usize(l.value_out);
        w.usize(l.policy_out);
        w.f64s(&self.net.params);
        let a = &self.adam;
        w.u64(a.t);
        w.f64(a.lr);
        w.f64(a.beta1);
        w.f64(a.beta2);
        w.f64(a.eps);
        w.f64s(&a.m);
        w.f64s(&a.v);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_into(&mut w);
        w.into_bytes()
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.magic(NET_MAGIC)?;
        r.version(NET_VERSION)?;
        let input_dim = r.count(MAX_WIDTH)?;
        let n_hidden = r.count(64)?;
        let hidden_widths = (0..n_hidden).map(|_| r.count(MAX_WIDTH)).collect::<Result<Vec<_>, _>>()?;
        let value_out = r.count(MAX_WIDTH)?;
        let policy_out = r.count(MAX_WIDTH)?;
        let layout = NetLayout { input_dim, hidden_widths, value_out, policy_out };
        layout.validate().map_err(|e| CodecError::Invalid(e.to_string()))?;
        let params = r.f64s()?;
        let net = Network::from_params(layout, params).map_err(|e| CodecError::Invalid(e.to_string()))?;
        let t = r.u64()?;
        let lr = r.f64()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let eps = r.f64()?;
        let m = r.f64s()?;
        let v = r.f64s()?;
        if m.len() != net.n_params() || v.len() != net.n_params() {
            return Err(CodecError::Invalid("optimizer moments do not match parameter count".into()));
        }
        Ok(Self { net, adam: AdamState { m, v, t, lr, beta1, beta2, eps } })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let c = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> NetLayout {
        NetLayout::new(2, vec![4, 4], 3).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = Network::init(toy(), 11).unwrap();
        let b = Network::init(toy(), 11).unwrap();
        assert_eq!(
            a.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(a.params(), Network::init(toy(), 12).unwrap().params());
        // trunk layer 0: fan-in 2, limit sqrt(1.5); heads: fan-in 4, 0.1 * sqrt(0.75)
        let l0 = (1.5f64).sqrt();
        assert!(a.params()[..8].iter().all(|w| w.abs() < l0));
        let lh = 0.1 * (0.75f64).sqrt();
        let vr = a.value_head_range();
        assert!(a.params()[vr.start..vr.end - 1].iter().all(|w| w.abs() < lh));
        assert_eq!(a.params()[vr.end - 1], 0.0);
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let n = Network::zeros(toy()).unwrap();
        let (v, p) = n.forward(&[0.3, -2.0]).unwrap();
        assert_eq!(v, 0.0);
        assert!(p.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hand_computed_single_unit() {
        // 1 -> [1] -> (1, 1): V = wv * tanh(w0 x + b0) + bv
        let layout = NetLayout::new(1, vec![1], 1).unwrap();
        let net = Network::from_params(layout, vec![0.5, 0.1, 2.0, -0.3, 1.5, 0.25]).unwrap();
        let x: f64 = 0.8;
        let h = (0.5 * x + 0.1).tanh();
        let (v, p) = net.forward(&[x]).unwrap();
        assert!((v - (2.0 * h - 0.3)).abs() < 1e-15);
        assert!((p[0] - (1.5 * h + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn forward_saturates_without_overflow() {
        let n = Network::init(toy(), 1).unwrap();
        let (v, p) = n.forward(&[1e3, -1e3]).unwrap();
        assert!(v.is_finite() && p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn dimension_mismatch_is_layout_error() {
        let n = Network::init(toy(), 1).unwrap();
        assert!(matches!(n.forward(&[1.0]), Err(NetError::Layout(_))));
        assert!(matches!(n.backward(&[1.0, 2.0], 1.0, &[0.0]), Err(NetError::Layout(_))));
    }

    #[test]
    fn zero_out_grads_zero_gradient() {
        let n = Network::init(toy(), 2).unwrap();
        let g = n.backward(&[0.1, 0.2], 0.0, &[0.0; 3]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn value_head_grad_ignores_policy_grads() {
        let n = Network::init(toy(), 2).unwrap();
        let g1 = n.backward(&[0.1, 0.2], 0.7, &[0.0; 3]).unwrap();
        let g2 = n.backward(&[0.1, 0.2], 0.7, &[1.0, -2.0, 3.0]).unwrap();
        let r = n.value_head_range();
        assert_eq!(&g1[r.clone()], &g2[r]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![0.5, -0.5, 2.0];
        let mut a = AdamState::new(3, 1e-3);
        a.step(&mut p, &[0.3, -7.0, 0.3]).unwrap();
        assert!((p[0] - (0.5 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-0.5 + 1e-3)).abs() < 1e-9);
        assert!((p[2] - (2.0 - 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn adam_zero_grad_and_zero_lr() {
        let mut p = vec![0.5, -0.5];
        let mut a = AdamState::new(2, 1e-3);
        a.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, -0.5]);
        assert_eq!(a.t, 1);
        let mut a = AdamState::new(2, 0.0);
        a.step(&mut p, &[1.0, -3.0]).unwrap();
        assert_eq!(p, vec![0.5, -0.5]);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = vec![0.5, -0.5];
        let mut a = AdamState::new(2, 1e-3);
        assert_eq!(a.step(&mut p, &[1.0, f64::NAN]), Err(NetError::NonFiniteGradient(1)));
        assert_eq!(a.t, 0);
        assert_eq!(p, vec![0.5, -0.5]);
    }

    #[test]
    fn adam_quadratic_descends() {
        // f(w) = w^2 from w = 1; |w| must shrink monotonically once past the
        // first few steps (lr = 0.005 keeps it far from overshoot).
        let mut w = vec![1.0];
        let mut a = AdamState::new(1, 0.005);
        let mut prev = f64::INFINITY;
        for k in 0..100 {
            let g = vec![2.0 * w[0]];
            a.step(&mut w, &g).unwrap();
            if k >= 5 {
                assert!(w[0].abs() < prev);
            }
            prev = w[0].abs();
        }
        assert!(w[0].abs() < 0.6);
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let net = Network::init(toy(), 5).unwrap();
        let mut adam = AdamState::new(net.n_params(), 1e-4);
        let mut p = net.params().to_vec();
        let g = vec![0.01; p.len()];
        adam.step(&mut p, &g).unwrap();
        let ck = NetCheckpoint { net: Network::from_params(toy(), p).unwrap(), adam };
        let bytes = ck.encode();
        let back = NetCheckpoint::decode(&bytes).unwrap();
        assert_eq!(back.encode(), bytes);
        assert!(NetCheckpoint::decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
