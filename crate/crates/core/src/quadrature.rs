//! Gauss–Hermite rules, adaptive (mode-centred) Gauss–Hermite integration of
//! log-integrands, and adaptive Simpson on finite intervals.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Node count used by the moment oracles.
pub const DEFAULT_NODES: usize = 200;
/// Relative agreement demanded between the full rule and the half-size rule.
pub const DEFAULT_RTOL: f64 = 1e-9;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Gauss–Hermite rule for the weight `exp(-t^2)` on the real line.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `ln(w_i) + t_i^2`, so that `sum exp(log_scaled_i) f(t_i)` integrates `f` itself.
    log_scaled: Vec<f64>,
}

impl GaussHermite {
    /// Nodes from the eigenvalues of the Jacobi matrix, polished by Newton
    /// iteration on the orthonormal Hermite recurrence, which also yields the
    /// weights without the precision loss of eigenvector components in the tails.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
        let pim4 = PI.powf(-0.25);
        let nf = n as f64;
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i.abs_diff(j) == 1 {
                (i.max(j) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let mut guesses: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        guesses.sort_by(f64::total_cmp);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for (i, &guess) in guesses.iter().enumerate() {
            let mut z = guess;
            let mut pp = 0.0;
            for _ in 0..20 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            weights[i] = 2.0 / (pp * pp);
        }
        // Symmetrise.
        for i in 0..n / 2 {
            let t = 0.5 * (nodes[n - 1 - i] - nodes[i]);
            let w = 0.5 * (weights[i] + weights[n - 1 - i]);
            nodes[i] = -t;
            nodes[n - 1 - i] = t;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let log_scaled = nodes.iter().zip(&weights).map(|(t, w)| w.ln() + t * t).collect();
        Self { nodes, weights, log_scaled }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(mean + sd * Z)]` for `Z ~ N(0, 1)`.
    pub fn expect_normal(&self, mean: f64, sd: f64, f: impl Fn(f64) -> f64) -> f64 {
        let s = std::f64::consts::SQRT_2 * sd;
        let total: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * f(mean + s * t))
            .sum();
        total / PI.sqrt()
    }

    /// Log of `∫ exp(log_f(t)) dt` with the rule placed at `centre`, scale `scale`.
    fn log_integral_at(&self, centre: f64, scale: f64, log_f: &impl Fn(f64) -> f64) -> f64 {
        let s = std::f64::consts::SQRT_2 * scale;
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.log_scaled)
            .map(|(t, ls)| ls + log_f(centre + s * t))
            .collect();
        log_sum_exp(&terms) + s.ln()
    }
}

fn rule(n: usize) -> &'static GaussHermite {
    static R100: OnceLock<GaussHermite> = OnceLock::new();
    static R200: OnceLock<GaussHermite> = OnceLock::new();
    match n {
        100 => R100.get_or_init(|| GaussHermite::new(100)),
        200 => R200.get_or_init(|| GaussHermite::new(200)),
        _ => panic!("only the 100- and 200-node rules are cached"),
    }
}

/// Cached Gauss–Hermite rule with `DEFAULT_NODES` nodes.
pub fn default_rule() -> &'static GaussHermite {
    rule(DEFAULT_NODES)
}

/// Numerically stable `ln(sum(exp(v)))`; `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Mode and curvature of a (near) concave log-integrand. `None` when the
/// log-integrand has non-negative curvature at the search point, i.e. the
/// integral diverges for the quadratic integrands handled here.
fn laplace_fit(log_f: &impl Fn(f64) -> f64) -> Option<(f64, f64)> {
    let mut t = 0.0f64;
    let mut h = 1e-2;
    for _ in 0..100 {
        let f0 = log_f(t);
        let fp = log_f(t + h);
        let fm = log_f(t - h);
        let d1 = (fp - fm) / (2.0 * h);
        let d2 = (fp - 2.0 * f0 + fm) / (h * h);
        if !(d2 < 0.0) || !d2.is_finite() {
            return None;
        }
        let step = d1 / d2;
        t -= step;
        h = (1e-2 / (-d2).sqrt()).max(1e-6);
        if step.abs() <= 1e-13 * t.abs().max(1.0) {
            break;
        }
    }
    let d2 = (log_f(t + h) - 2.0 * log_f(t) + log_f(t - h)) / (h * h);
    if d2 < 0.0 && d2.is_finite() {
        Some((t, (-d2).sqrt().recip()))
    } else {
        None
    }
}

/// Adaptive Gauss–Hermite: returns `ln ∫ exp(log_f(t)) dt`, or `+inf` when the
/// integrand is not integrable (non-concave log-integrand).
///
/// The rule is recentred at the mode and rescaled by the curvature; the
/// `DEFAULT_NODES` result is checked against the half-size rule to `rtol`.
pub fn adaptive_log_integral(log_f: impl Fn(f64) -> f64, rtol: f64) -> Result<f64> {
    let Some((mode, scale)) = laplace_fit(&log_f) else {
        return Ok(f64::INFINITY);
    };
    let full = rule(DEFAULT_NODES).log_integral_at(mode, scale, &log_f);
    let half = rule(DEFAULT_NODES / 2).log_integral_at(mode, scale, &log_f);
    // Relative error of the integral itself is |exp(full - half) - 1|.
    let rel = (full - half).exp_m1().abs();
    if rel > rtol {
        return Err(Error::Quadrature(format!(
            "adaptive Gauss-Hermite disagreement {rel:e} exceeds {rtol:e}"
        )));
    }
    Ok(full)
}

/// `ln E[exp(g(X, X + sd * Z))]` for independent scalar `X, Z ~ N(0, 1)`,
/// computed as an outer adaptive Gauss–Hermite integral over `x` of an inner
/// one over `z`. Returns `+inf` when either level diverges.
pub fn log_pair_expectation(g: impl Fn(f64, f64) -> f64 + Sync, sd: f64, rtol: f64) -> Result<f64> {
    let inner = |x: f64| -> Result<f64> {
        adaptive_log_integral(|z| -0.5 * z * z - LN_SQRT_2PI + g(x, x + sd * z), rtol)
    };
    // Probe the inner integral first so divergence is reported as +inf rather
    // than as a failed outer fit.
    if inner(0.0)?.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let failure = std::cell::Cell::new(None::<Error>);
    let outer = adaptive_log_integral(
        |x| match inner(x) {
            Ok(v) => -0.5 * x * x - LN_SQRT_2PI + v,
            Err(e) => {
                failure.set(Some(e));
                f64::NAN
            }
        },
        rtol,
    );
    if let Some(e) = failure.take() {
        return Err(e);
    }
    outer
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(&f, a, b, fa, fm, fb, whole, tol, 50)
}
