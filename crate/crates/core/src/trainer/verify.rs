//! Numerical self-checks: closed forms against quadrature, analytic
//! gradients against central differences, V-trace against a direct unroll,
//! and the ReF-ER fixed points.
//!
//! The functions under test are passed in through [`Subjects`] so that a
//! deliberately broken implementation can be checked for detection.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dist::boltzmann::{self, ActionProbs, BoltzmannParams, DiscreteGrad};
use crate::dist::clipped_normal::{self, Bounds, GaussParams, GradPair};
use crate::dist::special::std_cdf;
use crate::dist::DistError;
use crate::learner::{classify, ReferState, Scalarization};
use crate::net::{NetLayout, Network};
use crate::replay::{self, ReplayError};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_TOL: f64 = 1e-8;
pub const FD_SMALL: f64 = 1e-6;

type ContGrad = fn(&GaussParams, &GaussParams, &Bounds) -> GradPair;
type ContIwGrad = fn(f64, &GaussParams, &GaussParams, &Bounds) -> Result<GradPair, DistError>;
type DiscIwGrad = fn(usize, &BoltzmannParams, &ActionProbs) -> Result<DiscreteGrad, DistError>;
type Vtbc = fn(&[Vec<f64>], &[Vec<f64>], &[Vec<f64>], &[f64], f64, Scalarization) -> Result<Vec<Vec<f64>>, ReplayError>;

/// Implementations under test.
#[derive(Clone, Copy)]
pub struct Subjects {
    pub kl: fn(&GaussParams, &GaussParams, &Bounds) -> f64,
    pub kl_grad: ContGrad,
    pub iw: fn(f64, &GaussParams, &GaussParams, &Bounds) -> Result<f64, DistError>,
    pub iw_grad: ContIwGrad,
    pub kl_grad_discrete: fn(&ActionProbs, &BoltzmannParams) -> DiscreteGrad,
    pub iw_grad_discrete: DiscIwGrad,
    pub compute_vtbc: Vtbc,
}

impl Default for Subjects {
    fn default() -> Self {
        Self {
            kl: clipped_normal::kl,
            kl_grad: clipped_normal::kl_grad,
            iw: clipped_normal::iw,
            iw_grad: clipped_normal::iw_grad,
            kl_grad_discrete: boltzmann::kl_grad_discrete,
            iw_grad_discrete: boltzmann::iw_grad_discrete,
            compute_vtbc: replay::compute_vtbc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub cases: usize,
    pub max_err: f64,
    pub tol: f64,
    pub passed: bool,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} cases={:<5} max_err={:.3e} tol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.max_err,
            self.tol
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        write!(f, "{}", if self.passed() { "all checks passed" } else { "verification FAILED" })
    }
}

/// Error measure for gradient checks: relative above [`FD_SMALL`], absolute
/// below it, scaled so that 1.0 is the tolerance boundary.
pub fn fd_score(analytic: f64, numeric: f64) -> f64 {
    let mag = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if !diff.is_finite() {
        return f64::INFINITY;
    }
    if mag < FD_SMALL {
        diff / FD_ABS_TOL
    } else {
        diff / mag / FD_REL_TOL
    }
}

fn central<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(&f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `KL(p || q)` of clipped normals by quadrature of the interior plus the
/// two atoms.
pub fn kl_by_quadrature(p: &GaussParams, q: &GaussParams, b: &Bounds) -> f64 {
    let log_n = |g: &GaussParams, x: f64| {
        let z = (x - g.mu) / g.sigma;
        -0.5 * z * z - g.sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    };
    let interior = integrate(|x| log_n(p, x).exp() * (log_n(p, x) - log_n(q, x)), b.lo, b.hi, 1e-12);
    let atom = |mp: f64, mq: f64| if mp > 0.0 { mp * (mp / mq).ln() } else { 0.0 };
    let lo = atom(std_cdf((b.lo - p.mu) / p.sigma), std_cdf((b.lo - q.mu) / q.sigma));
    let hi = atom(std_cdf(-(b.hi - p.mu) / p.sigma), std_cdf(-(b.hi - q.mu) / q.sigma));
    lo + interior + hi
}

fn random_gauss<R: Rng>(rng: &mut R) -> GaussParams {
    GaussParams { mu: rng.random_range(-0.8..0.8), sigma: rng.random_range(0.2..1.5) }
}

const UNIT: Bounds = Bounds { lo: -1.0, hi: 1.0 };

struct Acc {
    name: &'static str,
    cases: usize,
    max_err: f64,
}

impl Acc {
    fn new(name: &'static str) -> Self {
        Self { name, cases: 0, max_err: 0.0 }
    }

    fn add(&mut self, err: f64) {
        self.cases += 1;
        self.max_err = if err.is_nan() { f64::INFINITY } else { self.max_err.max(err) };
    }

    /// `tol` is the bound on `max_err`; scored checks use 1.0.
    fn done(self, tol: f64) -> Check {
        Check { name: self.name, cases: self.cases, passed: self.max_err <= tol, max_err: self.max_err, tol }
    }
}

fn check_kl_quadrature(s: &Subjects, n: usize, rng: &mut ChaCha8Rng) -> Check {
    let mut acc = Acc::new("kl_vs_quadrature");
    for _ in 0..n {
        let (p, q) = (random_gauss(rng), random_gauss(rng));
        acc.add(((s.kl)(&p, &q, &UNIT) - kl_by_quadrature(&p, &q, &UNIT)).abs());
    }
    acc.done(1e-6)
}

fn check_kl_grad(s: &Subjects, n: usize, rng: &mut ChaCha8Rng) -> Check {
    let mut acc = Acc::new("kl_grad_fd");
    let mut done = 0;
    while done < n {
        let (p, q) = (random_gauss(rng), random_gauss(rng));
        // Where the tail guard clips a ratio the gradient is intentionally
        // not that of the plain KL.
        if clipped_normal::kl_grad_guarded(&p, &q, &UNIT).guarded {
            continue;
        }
        done += 1;
        let g = (s.kl_grad)(&p, &q, &UNIT);
        let fd_mu = central(|m| (s.kl)(&p, &GaussParams { mu: m, ..q }, &UNIT), q.mu);
        let fd_sigma = central(|sg| (s.kl)(&p, &GaussParams { sigma: sg, ..q }, &UNIT), q.sigma);
        acc.add(fd_score(g.d_mu, fd_mu).max(fd_score(g.d_sigma, fd_sigma)));
    }
    acc.done(1.0)
}

fn check_iw_grad(s: &Subjects, n: usize, rng: &mut ChaCha8Rng) -> Check {
    let mut acc = Acc::new("iw_grad_fd");
    for k in 0..n {
        let (p, q) = (random_gauss(rng), random_gauss(rng));
        let x = match k % 3 {
            0 => UNIT.lo,
            1 => rng.random_range(-0.95..0.95),
            _ => UNIT.hi,
        };
        let g = match (s.iw_grad)(x, &q, &p, &UNIT) {
            Ok(g) => g,
            Err(_) => {
                acc.add(f64::INFINITY);
                continue;
            }
        };
        let w = |qq: GaussParams| (s.iw)(x, &qq, &p, &UNIT).unwrap_or(f64::NAN);
        let fd_mu = central(|m| w(GaussParams { mu: m, ..q }), q.mu);
        let fd_sigma = central(|sg| w(GaussParams { sigma: sg, ..q }), q.sigma);
        acc.add(fd_score(g.d_mu, fd_mu).max(fd_score(g.d_sigma, fd_sigma)));
    }
    acc.done(1.0)
}

fn random_boltzmann<R: Rng>(rng: &mut R, n: usize) -> BoltzmannParams {
    BoltzmannParams { energies: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(), inv_temp: rng.random_range(0.2..3.0) }
}

fn discrete_fd<F: Fn(&BoltzmannParams) -> f64>(f: F, q: &BoltzmannParams, g: &DiscreteGrad) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..q.energies.len() {
        let fd = central(
            |e| {
                let mut qq = q.clone();
                qq.energies[j] = e;
                f(&qq)
            },
            q.energies[j],
        );
        worst = worst.max(fd_score(g.d_energies[j], fd));
    }
    let fd = central(|b| f(&BoltzmannParams { inv_temp: b, ..q.clone() }), q.inv_temp);
    worst.max(fd_score(g.d_inv_temp, fd))
}

fn check_kl_grad_discrete(s: &Subjects, n: usize, rng: &mut ChaCha8Rng) -> Check {
    let mut acc = Acc::new("kl_grad_discrete_fd");
    for _ in 0..n {
        let k = rng.random_range(2..7);
        let p = boltzmann::probs(&random_boltzmann(rng, k));
        let q = random_boltzmann(rng, k);
        let g = (s.kl_grad_discrete)(&p, &q);
        acc.add(discrete_fd(|qq| boltzmann::kl_discrete(&p, &boltzmann::probs(qq)), &q, &g));
    }
    acc.done(1.0)
}

fn check_iw_grad_discrete(s: &Subjects, n: usize, rng: &mut ChaCha8Rng) -> Check {
    let mut acc = Acc::new("iw_grad_discrete_fd");
    for _ in 0..n {
        let k = rng.random_range(2..7);
        let b = boltzmann::probs(&random_boltzmann(rng, k));
        let q = random_boltzmann(rng, k);
        let a = rng.random_range(0..k);
        match (s.iw_grad_discrete)(a, &q, &b) {
            Ok(g) => acc.add(discrete_fd(|qq| boltzmann::iw_discrete(a, qq, &b).unwrap_or(f64::NAN), &q, &g)),
            Err(_) => acc.add(f64::INFINITY),
        }
    }
    acc.done(1.0)
}

fn check_net_backward(n: usize, rng: &mut ChaCha8Rng) -> Check {
    let mut acc = Acc::new("net_backward_fd");
    let layout = NetLayout::new(2, vec![4, 4], 3).expect("valid layout");
    for k in 0..n {
        let net = Network::init(layout.clone(), k as u64).expect("valid layout");
        let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let dv: f64 = rng.random_range(-1.0..1.0);
        let dp: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = net.backward(&x, dv, &dp).expect("shapes match");
        let obj = |params: &[f64]| {
            let nn = Network::from_params(layout.clone(), params.to_vec()).expect("same layout");
            let (v, p) = nn.forward(&x).expect("shapes match");
            dv * v + p.iter().zip(&dp).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut params = net.params().to_vec();
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + FD_STEP;
            let up = obj(&params);
            params[i] = orig - FD_STEP;
            let down = obj(&params);
            params[i] = orig;
            worst = worst.max(fd_score(g[i], (up - down) / (2.0 * FD_STEP)));
        }
        acc.add(worst);
    }
    acc.done(1.0)
}

/// Direct evaluation of the V-trace sum, without the recursion:
/// `V_t + sum_{k>=t} gamma^{k-t} (prod_{t<=m<k} rho_m) rho_k delta_k`, with
/// the episode end contributing the terminal value.
pub fn vtrace_unrolled(r: &[f64], v: &[f64], rho: &[f64], v_end: f64, gamma: f64) -> Vec<f64> {
    let t_len = r.len();
    (0..t_len)
        .map(|t| {
            let mut total = v[t];
            let mut weight = 1.0;
            for k in t..t_len {
                let next = if k + 1 < t_len { v[k + 1] } else { v_end };
                let delta = r[k] + gamma * next - v[k];
                weight *= rho[k];
                total += weight * delta;
                weight *= gamma;
            }
            total
        })
        .collect()
}

fn check_vtrace(s: &Subjects, n: usize, rng: &mut ChaCha8Rng) -> Check {
    let mut acc = Acc::new("vtrace_unroll");
    for _ in 0..n {
        let t_len = rng.random_range(1..=10);
        let r: Vec<f64> = (0..t_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..t_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rho: Vec<f64> = (0..t_len).map(|_| rng.random_range(0.0..=1.0)).collect();
        let v_end = rng.random_range(-1.0..1.0);
        let gamma = rng.random_range(0.0..1.0);
        let col = |xs: &[f64]| xs.iter().map(|&x| vec![x]).collect::<Vec<_>>();
        let got = (s.compute_vtbc)(&col(&r), &col(&v), &col(&rho), &[v_end], gamma, Scalarization::Individual);
        let want = vtrace_unrolled(&r, &v, &rho, v_end, gamma);
        match got {
            Ok(g) => acc.add(g.iter().zip(&want).map(|(a, b)| (a[0] - b).abs()).fold(0.0, f64::max)),
            Err(_) => acc.add(f64::INFINITY),
        }
    }
    acc.done(1e-12)
}

fn check_beta_fixed_points() -> Check {
    let mut acc = Acc::new("beta_fixed_points");
    for (f_off, target) in [(0.5, 0.0), (0.0, 1.0)] {
        let mut s = ReferState::default();
        let mut iters = 0;
        while (s.beta - target).abs() > 1e-6 && iters < 200_000 {
            s.update_beta(f_off);
            iters += 1;
        }
        acc.add((s.beta - target).abs());
    }
    acc.done(1e-6)
}

fn check_classify_boundary() -> Check {
    let mut acc = Acc::new("classify_boundary");
    let cases = [(1.0, true), (4.0, false), (0.25, false), (4.0f64.next_down(), true), (0.25f64.next_up(), true)];
    for (rho, want) in cases {
        acc.add(if classify(rho, 4.0) == want { 0.0 } else { 1.0 });
    }
    acc.done(0.0)
}

/// Runs every check. `quick` uses fewer random cases.
pub fn run(subjects: &Subjects, quick: bool, seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = |full: usize, fast: usize| if quick { fast } else { full };
    Report {
        checks: vec![
            check_kl_quadrature(subjects, k(200, 20), &mut rng),
            check_kl_grad(subjects, k(100, 20), &mut rng),
            check_iw_grad(subjects, k(150, 30), &mut rng),
            check_kl_grad_discrete(subjects, k(100, 20), &mut rng),
            check_iw_grad_discrete(subjects, k(100, 20), &mut rng),
            check_net_backward(k(50, 10), &mut rng),
            check_vtrace(subjects, k(1000, 100), &mut rng),
            check_beta_fixed_points(),
            check_classify_boundary(),
        ],
    }
}
