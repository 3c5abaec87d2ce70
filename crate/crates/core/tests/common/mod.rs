//! Reference computations used as oracles by the integration tests. Nothing
//! here calls into the library's special functions or closed forms.

#![allow(dead_code)]

use std::f64::consts::PI;

pub const H: f64 = 1e-5;

/// Adaptive Simpson quadrature.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (l, r) = (0.5 * (a + m), 0.5 * (m + b));
        let (fl, fr) = (f(l), f(r));
        let left = (m - a) / 6.0 * (fa + 4.0 * fl + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * fr + fb);
        let d = left + right - whole;
        if depth == 0 || d.abs() <= 15.0 * tol {
            left + right + d / 15.0
        } else {
            rec(f, a, m, fa, fl, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, fr, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

pub fn std_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF by quadrature of the density. The lower tail is
/// integrated directly (not as `0.5 - ...`) so that tiny tail masses keep
/// their relative accuracy.
pub fn std_cdf(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 - std_cdf(-z)
    } else {
        simpson(&std_pdf, z - 20.0, z, std_pdf(z) * 1e-15)
    }
}

pub fn normal_logpdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * PI).ln()
}

/// `KL(p || q)` for normals clipped to `[lo, hi]`: interior by quadrature,
/// atoms from the CDF oracle.
pub fn clipped_kl(p: (f64, f64), q: (f64, f64), lo: f64, hi: f64) -> f64 {
    let f = |x: f64| {
        let lp = normal_logpdf(x, p.0, p.1);
        lp.exp() * (lp - normal_logpdf(x, q.0, q.1))
    };
    let interior = simpson(&f, lo, hi, 1e-13);
    let atom = |mp: f64, mq: f64| if mp > 0.0 { mp * (mp / mq).ln() } else { 0.0 };
    let lo_p = std_cdf((lo - p.0) / p.1);
    let lo_q = std_cdf((lo - q.0) / q.1);
    let hi_p = std_cdf((p.0 - hi) / p.1);
    let hi_q = std_cdf((q.0 - hi) / q.1);
    atom(lo_p, lo_q) + interior + atom(hi_p, hi_q)
}

pub fn central<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
    (f(x + H) - f(x - H)) / (2.0 * H)
}

/// Central-difference gradient of `f` over every coordinate of `x`.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = y[i];
            y[i] = orig + H;
            let up = f(&y);
            y[i] = orig - H;
            let down = f(&y);
            y[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Gradient agreement: relative error at most 1e-4, or absolute error at
/// most 1e-8 when both values are below 1e-6 in magnitude.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    let mag = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if mag < 1e-6 {
        diff <= 1e-8
    } else {
        diff / mag <= 1e-4
    }
}

/// Worst relative error (or scaled absolute error for tiny values), in the
/// units used by [`grad_close`]: below 1.0 passes.
pub fn grad_score(analytic: f64, numeric: f64) -> f64 {
    let mag = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if mag < 1e-6 {
        diff / 1e-8
    } else {
        diff / mag / 1e-4
    }
}

/// Direct evaluation of the V-trace target as an explicit sum:
/// `V_t + sum_{k>=t} gamma^{k-t} (prod_{m=t}^{k} rho_m) delta_k`.
pub fn vtrace_brute(r: &[f64], v: &[f64], rho: &[f64], v_end: f64, gamma: f64) -> Vec<f64> {
    let n = r.len();
    let vv = |k: usize| if k < n { v[k] } else { v_end };
    (0..n)
        .map(|t| {
            let mut total = v[t];
            for k in t..n {
                let c: f64 = rho[t..=k].iter().product();
                let delta = r[k] + gamma * vv(k + 1) - v[k];
                total += gamma.powi((k - t) as i32) * c * delta;
            }
            total
        })
        .collect()
}

pub fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}
