//! Closed-form bounds and constants for the Gaussian case with locally
//! balanced weights, the importance-weight moment oracle, and weak Poincaré
//! curve composition.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{log_importance_weight, RwProposal, TargetModel, WeightSpec};
use crate::quadrature::{log_pair_expectation, DEFAULT_RTOL};
use crate::rng::{Lane, StepStream};
use crate::stats::mean_se;

/// Constant of the close-coupling argument for the ideal chain.
pub const C_GAMMA: f64 = 0.3177765;

/// Relative tolerance used to flag formula/oracle agreement.
pub const REPORT_TOLERANCE: f64 = 1e-6;

/// Grid density for numeric curve composition.
pub const GRID_POINTS_PER_DECADE: usize = 400;

/// Inputs of the moment computations (`theta = 1/2`, standard Gaussian target).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentInputs {
    pub d: usize,
    pub sigma2: f64,
    pub p: f64,
}

impl MomentInputs {
    pub fn new(d: usize, sigma2: f64, p: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("d", "must be positive"));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::invalid("sigma2", "must be positive and finite"));
        }
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::invalid("p", format!("must be >= 1, got {p}")));
        }
        Ok(Self { d, sigma2, p })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Whether `M_varpi(r) = (pi ⊗ q)(varpi^r)` is finite.
///
/// Per coordinate `ln varpi = x^2 / (2 (2 + s2)) - y^2 / 4 + const`; the inner
/// Gaussian integral over `y` needs `1 + r s2 / 2 > 0` and the outer one
/// `r / (2 + s2) - r / (2 + r s2) < 1`.
pub fn moment_is_finite(sigma2: f64, r: f64) -> bool {
    let inner = 2.0 + r * sigma2;
    inner > 0.0 && r / (2.0 + sigma2) - r / inner < 1.0
}

/// `M_varpi(r)` for any real `r` by nested adaptive Gauss–Hermite on one
/// coordinate, raised to the power `d`. `+inf` when not integrable.
pub fn varpi_moment(d: usize, sigma2: f64, r: f64) -> Result<f64> {
    if !moment_is_finite(sigma2, r) {
        return Ok(f64::INFINITY);
    }
    if r == 0.0 {
        return Ok(1.0);
    }
    let target = TargetModel::standard_gaussian(1)?;
    let sigma = sigma2.sqrt();
    let prop = RwProposal::new(sigma, 1)?;
    let w = WeightSpec::locally_balanced();
    let ln_e1 = log_pair_expectation(
        |x, y| r * log_importance_weight(&target, &prop, &w, &[x], &[y]).expect("finite Gaussian weights"),
        sigma,
        DEFAULT_RTOL,
    )?;
    Ok((d as f64 * ln_e1).exp())
}

/// Monte Carlo `M_varpi(r)` from `draws` pairs `(X, X + sigma Z)`; returns
/// the mean and its standard error.
pub fn varpi_moment_mc(d: usize, sigma2: f64, r: f64, draws: u64, seed: u64) -> Result<(f64, f64)> {
    use rand_distr::{Distribution, StandardNormal};
    use rayon::prelude::*;
    if draws < 2 {
        return Err(Error::invalid("draws", "need at least 2"));
    }
    let target = TargetModel::standard_gaussian(d)?;
    let sigma = sigma2.sqrt();
    let prop = RwProposal::new(sigma, d)?;
    let w = WeightSpec::locally_balanced();
    let vals = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = StepStream::new(seed, 0, i).rng(Lane::Stationary, 0);
            let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let y: Vec<f64> = x.iter().map(|xi| { let z: f64 = StandardNormal.sample(&mut rng); xi + sigma * z }).collect();
            Ok((r * log_importance_weight(&target, &prop, &w, &x, &y)?).exp())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_se(&vals))
}

/// `M_varpi(+-2p)` by quadrature; `+inf` when the finiteness condition fails.
pub fn moment_oracle(inp: &MomentInputs, sign: Sign) -> Result<f64> {
    varpi_moment(inp.d, inp.sigma2, sign.factor() * 2.0 * inp.p)
}

/// Literal evaluation of the two displayed closed forms for `M_varpi(+-2p)`.
/// Kept for discrepancy reporting only.
pub fn displayed_moment_formula(inp: &MomentInputs, sign: Sign) -> Result<f64> {
    let (d, s2, p) = (inp.d as f64, inp.sigma2, inp.p);
    match sign {
        Sign::Plus => {
            let base = 1.0 + p * (1.0 / (1.0 + p * s2) - 2.0 / (2.0 + s2));
            if base <= 0.0 {
                return Err(Error::invalid("sigma2", "displayed M(2p) expression is nonpositive under the -d/2 power"));
            }
            Ok(((2.0 + s2) / (2.0 * (1.0 + p * s2))).powf(d * p / 2.0) * base.powf(-d / 2.0))
        }
        Sign::Minus => {
            let base = 2.0 + (1.0 - 3.0 * p - 3.0 * p * p) * s2 - p * s2 * s2;
            if base <= 0.0 {
                return Err(Error::invalid("sigma2", "displayed M(-2p) expression is nonpositive under the -d/2 power"));
            }
            Ok(2f64.powf(d * p / 2.0) * (2.0 + s2).powf(d * (1.0 - p) / 2.0) * base.powf(-d / 2.0))
        }
    }
}

/// `sigma^2(p) = 1/(2p) - p + (-3 + sqrt(5 + 1/p^2 + 2/p + 12p + 4p^2)) / 2`.
pub fn sigma2_threshold(p: f64) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid("p", format!("must be >= 1, got {p}")));
    }
    Ok(1.0 / (2.0 * p) - p + 0.5 * (-3.0 + (5.0 + 1.0 / (p * p) + 2.0 / p + 12.0 * p + 4.0 * p * p).sqrt()))
}

/// Importance-weight moments entering the comparison constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarpiMoments {
    /// `M(p)`.
    pub m_p: f64,
    /// `M(p + 1)`.
    pub m_p1: f64,
    /// `M(2p)`.
    pub m_2p: f64,
    /// `M(-2p)`.
    pub m_neg2p: f64,
}

impl VarpiMoments {
    pub fn compute(inp: &MomentInputs) -> Result<Self> {
        Ok(Self {
            m_p: varpi_moment(inp.d, inp.sigma2, inp.p)?,
            m_p1: varpi_moment(inp.d, inp.sigma2, inp.p + 1.0)?,
            m_2p: moment_oracle(inp, Sign::Plus)?,
            m_neg2p: moment_oracle(inp, Sign::Minus)?,
        })
    }

    pub fn all_finite(&self) -> bool {
        [self.m_p, self.m_p1, self.m_2p, self.m_neg2p].iter().all(|v| v.is_finite())
    }
}

/// The three proof constants of the weak Poincaré comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl KConstants {
    /// `K1 = M(p+1)`, `K2 = M(2p) + M(-2p)`, `K3 = 2 (pi ⊗ q)(w^{-1})`.
    pub fn traceable(inp: &MomentInputs, m: &VarpiMoments) -> Result<Self> {
        let target = TargetModel::standard_gaussian(1)?;
        let sigma = inp.sigma2.sqrt();
        let w = WeightSpec::locally_balanced();
        let ln_inv_w = log_pair_expectation(
            |x, y| -crate::gaussian::log_weight(&target, &w, &[x], &[y]).expect("finite Gaussian weights"),
            sigma,
            DEFAULT_RTOL,
        )?;
        Ok(Self { k1: m.m_p1, k2: m.m_2p + m.m_neg2p, k3: 2.0 * (inp.d as f64 * ln_inv_w).exp() })
    }

    fn validate(&self) -> Result<()> {
        if [self.k1, self.k2, self.k3].iter().any(|k| !(*k >= 0.0)) {
            return Err(Error::invalid("k", "K constants must be nonnegative"));
        }
        Ok(())
    }
}

/// A value together with an optional explanation of why it is degenerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flagged {
    pub value: f64,
    pub note: Option<String>,
}

impl Flagged {
    fn ok(value: f64) -> Self {
        Self { value, note: None }
    }

    fn infinite(note: impl Into<String>) -> Self {
        Self { value: f64::INFINITY, note: Some(note.into()) }
    }
}

/// `c_{1,n,p} = M(p) + K1/n`, `c_{2,n,p} = 2^{p+1} (K2/n + K3/n^2 + M(2p) + M(-2p))`.
pub fn comparison_constants(n: usize, p: f64, m: &VarpiMoments, k: &KConstants) -> (f64, f64) {
    let nf = n as f64;
    let c1 = m.m_p + k.k1 / nf;
    let c2 = 2f64.powf(p + 1.0) * (k.k2 / nf + k.k3 / (nf * nf) + m.m_2p + m.m_neg2p);
    (c1, c2)
}

/// Exponent `p^2 / (1 + 2p)` of a chained pair of `c_i s^{-p}` curves.
pub fn chained_exponent(p: f64) -> f64 {
    p * p / (1.0 + 2.0 * p)
}

/// Displayed chaining constant `c2 A^{1+p} + c1 A^{-p}`, `A = c1 p / (c2 (1+p))`.
///
/// This is the composed objective at `s1 = A s^{p/(1+2p)}`, so it bounds
/// the infimum from above; see [`chaining_constant_optimal`].
pub fn chaining_constant(c1: f64, c2: f64, p: f64) -> f64 {
    let a = c1 * p / (c2 * (1.0 + p));
    c2 * a.powf(1.0 + p) + c1 * a.powf(-p)
}

/// Exact infimum constant `c1 A^{-p/(1+2p)} + c2 A^{(1+p)/(1+2p)}`.
pub fn chaining_constant_optimal(c1: f64, c2: f64, p: f64) -> f64 {
    let a = c1 * p / (c2 * (1.0 + p));
    let e = 1.0 + 2.0 * p;
    c1 * a.powf(-p / e) + c2 * a.powf((1.0 + p) / e)
}

/// `beta_n(s)` envelope from the moment constants.
pub fn beta_n_bound(s: f64, n: usize, p: f64, m: &VarpiMoments, k: &KConstants) -> Result<Flagged> {
    if !(s > 0.0) {
        return Err(Error::invalid("s", "must be positive"));
    }
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    k.validate()?;
    if !m.all_finite() {
        return Ok(Flagged::infinite("an importance-weight moment is infinite"));
    }
    let (c1, c2) = comparison_constants(n, p, m, k);
    Ok(Flagged::ok(s.powf(-chained_exponent(p)) * chaining_constant(c1, c2, p)))
}

/// A weak Poincaré `beta` function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BetaCurve {
    /// `beta(s) = c s^{-alpha}`.
    Power { c: f64, alpha: f64 },
    /// A strong Poincaré comparison with constant `scale`: `beta(s) = 0` for
    /// `s >= 1/scale`, `+inf` below.
    Comparison { scale: f64 },
    /// Tabulated decreasing curve, log-log interpolated, constant beyond the ends.
    Table { s: Vec<f64>, beta: Vec<f64> },
    /// `inf {beta_1(s1) + s1 beta_2(s / s1)}` evaluated on a log grid.
    Chained(Box<BetaCurve>, Box<BetaCurve>),
}

impl BetaCurve {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            BetaCurve::Power { c, alpha } => c * s.powf(-alpha),
            BetaCurve::Comparison { scale } => {
                if s * scale >= 1.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            BetaCurve::Table { s: xs, beta } => {
                if s <= xs[0] {
                    return beta[0];
                }
                if s >= xs[xs.len() - 1] {
                    return beta[beta.len() - 1];
                }
                let i = xs.partition_point(|&v| v <= s) - 1;
                let t = (s.ln() - xs[i].ln()) / (xs[i + 1].ln() - xs[i].ln());
                if beta[i] > 0.0 && beta[i + 1] > 0.0 {
                    (beta[i].ln() * (1.0 - t) + beta[i + 1].ln() * t).exp()
                } else {
                    beta[i] * (1.0 - t) + beta[i + 1] * t
                }
            }
            BetaCurve::Chained(a, b) => chain_beta_numeric(a, b, s),
        }
    }
}

/// `inf_{s1} beta_1(s1) + s1 beta_2(s / s1)` over `s1 = 10^{k/400}`, `|k| <= 24 * 400`.
pub fn chain_beta_numeric(b1: &BetaCurve, b2: &BetaCurve, s: f64) -> f64 {
    let span = 24 * GRID_POINTS_PER_DECADE as i64;
    let mut best = f64::INFINITY;
    for k in -span..=span {
        let s1 = 10f64.powf(k as f64 / GRID_POINTS_PER_DECADE as f64);
        let second = b2.eval(s / s1);
        if second.is_infinite() {
            continue;
        }
        let v = b1.eval(s1) + if second == 0.0 { 0.0 } else { s1 * second };
        best = best.min(v);
    }
    best
}

/// Power-law pair and the composed curve's constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WpiCurve {
    pub c1: f64,
    pub c2: f64,
    pub p: f64,
    pub alpha: f64,
    /// Displayed constant.
    pub c: f64,
    /// Exact infimum constant.
    pub c_optimal: f64,
}

impl WpiCurve {
    pub fn new(c1: f64, c2: f64, p: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0 && p > 0.0) {
            return Err(Error::invalid("wpi", "c1, c2 and p must be positive"));
        }
        Ok(Self {
            c1,
            c2,
            p,
            alpha: chained_exponent(p),
            c: chaining_constant(c1, c2, p),
            c_optimal: chaining_constant_optimal(c1, c2, p),
        })
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.c * s.powf(-self.alpha)
    }
}

/// Composes two curves. Power laws with a common exponent give the displayed
/// analytic constant; a comparison curve rescales; anything else is
/// evaluated numerically.
pub fn chain_beta(b1: &BetaCurve, b2: &BetaCurve) -> BetaCurve {
    match (b1, b2) {
        (BetaCurve::Power { c: c1, alpha: p1 }, BetaCurve::Power { c: c2, alpha: p2 }) if p1 == p2 => {
            BetaCurve::Power { c: chaining_constant(*c1, *c2, *p1), alpha: chained_exponent(*p1) }
        }
        (BetaCurve::Power { c, alpha }, BetaCurve::Comparison { scale }) => {
            BetaCurve::Power { c: c * scale.powf(-alpha), alpha: *alpha }
        }
        _ => BetaCurve::Chained(Box::new(b1.clone()), Box::new(b2.clone())),
    }
}

/// `c (1 + alpha)^{1 + alpha} k^{-alpha}`.
pub fn subgeometric_bound(c: f64, alpha: f64, k: f64) -> Result<f64> {
    if !(c > 0.0 && alpha > 0.0 && k >= 1.0) {
        return Err(Error::invalid("subgeometric", "need c > 0, alpha > 0, k >= 1"));
    }
    Ok(c * (1.0 + alpha).powf(1.0 + alpha) * k.powf(-alpha))
}

/// The same envelope when the inequality holds with `beta(scale * s)`.
pub fn subgeometric_bound_rescaled(c: f64, alpha: f64, k: f64, scale: f64) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::invalid("scale", "must be positive"));
    }
    subgeometric_bound(c, alpha, scale * k)
}

/// Lower bound on the spectral gap of the ideal chain at general `sigma^2`.
pub fn gap_lower_sigma(sigma2: f64, d: usize) -> f64 {
    2f64.powi(-10) * (-sigma2 * sigma2 * d as f64 / 4.0).exp() * sigma2 * (2.0 + sigma2) * C_GAMMA * C_GAMMA
}

/// Conductance and spectral-gap lower bounds at `sigma = zeta d^{-1/4}`.
pub fn gap_lower_bound(zeta: f64, d: usize) -> Result<(f64, f64)> {
    if !(zeta > 0.0) || d == 0 {
        return Err(Error::invalid("gap_lower_bound", "need zeta > 0 and d >= 1"));
    }
    let s2 = zeta * zeta / (d as f64).sqrt();
    let z4 = zeta.powi(4);
    let phi = 2f64.powf(-4.5) * (-z4 / 8.0).exp() * (s2 * (2.0 + s2)).sqrt() * C_GAMMA;
    let gamma = 2f64.powi(-10) * (-z4 / 4.0).exp() * s2 * (2.0 + s2) * C_GAMMA * C_GAMMA;
    Ok((phi, gamma))
}

/// `min{(3/2) s2 / (2 + s2), (1 + s2^2 / (2 + s2)^2)^{-d/2}}`.
pub fn gap_upper_bound(sigma2: f64, d: usize) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("sigma2", "must be positive"));
    }
    let a = 1.5 * sigma2 / (2.0 + sigma2);
    let b = (1.0 + sigma2 * sigma2 / (2.0 + sigma2).powi(2)).powf(-(d as f64) / 2.0);
    Ok(a.min(b))
}

/// `1/2 exp(-d s2^2 / (4 (2 + s2)^2))`.
pub fn alpha_inf_lower(sigma2: f64, d: usize) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("sigma2", "must be positive"));
    }
    Ok(0.5 * (-(d as f64) * sigma2 * sigma2 / (4.0 * (2.0 + sigma2).powi(2))).exp())
}

/// `1/2 exp(-zeta^4 / 16)`.
pub fn alpha_inf_lower_zeta(zeta: f64) -> f64 {
    0.5 * (-zeta.powi(4) / 16.0).exp()
}

/// Pinsker bound `|x - y| sqrt(1 / (2 s2 (2 + s2)))` on the total variation
/// between `q^w(x, .)` and `q^w(y, .)`.
pub fn tv_qw_bound(x: &[f64], y: &[f64], sigma2: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid("y", "dimension mismatch"));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("sigma2", "must be positive"));
    }
    let dist = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(dist * (1.0 / (2.0 * sigma2 * (2.0 + sigma2))).sqrt())
}

/// Envelope on the globally balanced ideal acceptance and the radius past
/// which it drops below a level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbEnvelope {
    pub c1: f64,
    pub c2: f64,
}

impl GbEnvelope {
    pub fn new(sigma2: f64, d: usize) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::invalid("sigma2", "must be positive"));
        }
        let c1 = sigma2 / (2.0 * ((1.0 + sigma2).powi(2) - sigma2));
        let c2 = (1.0 - sigma2 / (1.0 + sigma2).powi(2)).powf(-(d as f64) / 2.0);
        Ok(Self { c1, c2 })
    }

    /// `exp(-|x|^2 c1) c2`.
    pub fn at_norm2(&self, norm2: f64) -> f64 {
        (-norm2 * self.c1).exp() * self.c2
    }

    /// Smallest `R` with envelope `<= eps` for all `|x| > R`.
    pub fn radius(&self, eps: f64) -> f64 {
        if self.c2 <= eps {
            0.0
        } else {
            ((self.c2 / eps).ln() / self.c1).sqrt()
        }
    }
}

/// Envelope value at `x`.
pub fn gb_acceptance_envelope(x: &[f64], sigma2: f64) -> Result<f64> {
    let e = GbEnvelope::new(sigma2, x.len())?;
    Ok(e.at_norm2(x.iter().map(|v| v * v).sum()))
}

/// Convergence envelope for the lazy Multiple-try chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceBound {
    pub constant: f64,
    pub exponent: f64,
    pub note: Option<String>,
}

impl ConvergenceBound {
    pub fn at(&self, k: f64) -> f64 {
        self.constant * k.powf(-self.exponent)
    }
}

fn convergence_inputs(
    n: usize,
    sigma2: f64,
    p: f64,
    d: usize,
    k: &KConstants,
) -> Result<std::result::Result<(f64, f64, f64), String>> {
    let inp = MomentInputs::new(d, sigma2, p)?;
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    k.validate()?;
    let thr = sigma2_threshold(p)?;
    if sigma2 >= thr {
        return Ok(Err(format!("sigma^2 = {sigma2} is not below the threshold {thr} for p = {p}")));
    }
    let m = VarpiMoments::compute(&inp)?;
    if !m.all_finite() {
        return Ok(Err("an importance-weight moment is infinite".to_string()));
    }
    let (c1, c2) = comparison_constants(n, p, &m, k);
    Ok(Ok((c1, c2, gap_lower_sigma(sigma2, d))))
}

/// Displayed bound `C_{n,sigma,p} k^{-p^2 / (2 (1 + 2p))}` with
/// `C = C_sigma^{-(p+1)^2/(1+2p)} {c2 A^{1+p} + c1 A^{-p}}`.
pub fn mtm_convergence_bound(n: usize, sigma2: f64, p: f64, d: usize, k: &KConstants) -> Result<ConvergenceBound> {
    let exponent = p * p / (2.0 * (1.0 + 2.0 * p));
    match convergence_inputs(n, sigma2, p, d, k)? {
        Err(note) => Ok(ConvergenceBound { constant: f64::INFINITY, exponent, note: Some(note) }),
        Ok((c1, c2, cs)) => {
            let constant = cs.powf(-(p + 1.0).powi(2) / (1.0 + 2.0 * p)) * chaining_constant(c1, c2, p);
            Ok(ConvergenceBound { constant, exponent, note: None })
        }
    }
}

/// The same bound re-derived through the sub-geometric example with the
/// lazy rescaling `s' = 2 s`: `2^alpha (1+alpha)^{1+alpha} C k^{-alpha}`, `alpha = p^2/(1+2p)`.
pub fn mtm_convergence_bound_rederived(
    n: usize,
    sigma2: f64,
    p: f64,
    d: usize,
    k: &KConstants,
) -> Result<ConvergenceBound> {
    let alpha = chained_exponent(p);
    match convergence_inputs(n, sigma2, p, d, k)? {
        Err(note) => Ok(ConvergenceBound { constant: f64::INFINITY, exponent: alpha, note: Some(note) }),
        Ok((c1, c2, cs)) => {
            let c = cs.powf(-1.0 - alpha) * chaining_constant(c1, c2, p) * 2f64.powf(alpha);
            Ok(ConvergenceBound { constant: c * (1.0 + alpha).powf(1.0 + alpha), exponent: alpha, note: None })
        }
    }
}

/// A closed-form value next to its independent numeric oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub inputs: BTreeMap<String, f64>,
    pub formula: f64,
    pub oracle: Option<f64>,
    pub relative_discrepancy: Option<f64>,
    pub agree: Option<bool>,
    pub tolerance: f64,
}

impl BoundReport {
    pub fn new(name: impl Into<String>, inputs: &[(&str, f64)], formula: f64, oracle: Option<f64>) -> Self {
        let relative_discrepancy = oracle.map(|o| relative_discrepancy(formula, o));
        Self {
            name: name.into(),
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            formula,
            oracle,
            relative_discrepancy,
            agree: relative_discrepancy.map(|r| r <= REPORT_TOLERANCE),
            tolerance: REPORT_TOLERANCE,
        }
    }
}

/// `|a - b| / |b|`, with matching infinities counted as agreement.
pub fn relative_discrepancy(formula: f64, oracle: f64) -> f64 {
    if formula == oracle {
        return 0.0;
    }
    if !formula.is_finite() || !oracle.is_finite() {
        return f64::INFINITY;
    }
    (formula - oracle).abs() / oracle.abs().max(f64::MIN_POSITIVE)
}

/// Formula-versus-oracle report for `M_varpi(+-2p)`.
pub fn moment_report(inp: &MomentInputs, sign: Sign) -> Result<BoundReport> {
    let oracle = moment_oracle(inp, sign)?;
    let formula = displayed_moment_formula(inp, sign).unwrap_or(f64::NAN);
    let name = match sign {
        Sign::Plus => "moment_plus_2p",
        Sign::Minus => "moment_minus_2p",
    };
    Ok(BoundReport::new(name, &[("d", inp.d as f64), ("sigma2", inp.sigma2), ("p", inp.p)], formula, Some(oracle)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn displayed_moment_formula_examples() {
        let a = MomentInputs::new(1, 1.0, 1.0).unwrap();
        assert!((displayed_moment_formula(&a, Sign::Plus).unwrap() - 0.94868).abs() < 1e-5);
        let b = MomentInputs::new(2, 0.25, 1.0).unwrap();
        assert_relative_eq!(displayed_moment_formula(&b, Sign::Plus).unwrap(), 0.9 / 0.911111111111111, max_relative = 1e-12);
        let tiny = MomentInputs::new(3, 1e-12, 2.0).unwrap();
        assert_relative_eq!(displayed_moment_formula(&tiny, Sign::Plus).unwrap(), 1.0, max_relative = 1e-9);
        assert_relative_eq!(displayed_moment_formula(&tiny, Sign::Minus).unwrap(), 1.0, max_relative = 1e-9);
        let bad = MomentInputs::new(1, 3.0, 2.0).unwrap();
        assert!(displayed_moment_formula(&bad, Sign::Minus).is_err());
    }

    #[test]
    fn moment_oracle_small_sigma_and_divergence() {
        let tiny = MomentInputs::new(2, 1e-6, 1.0).unwrap();
        assert!((moment_oracle(&tiny, Sign::Plus).unwrap() - 1.0).abs() < 1e-5);
        assert!((moment_oracle(&tiny, Sign::Minus).unwrap() - 1.0).abs() < 1e-5);
        let over = MomentInputs::new(1, 0.5, 1.0).unwrap();
        assert!(moment_oracle(&over, Sign::Minus).unwrap().is_infinite());
        assert!(MomentInputs::new(1, 0.5, 0.5).is_err());
    }

    #[test]
    fn first_moment_is_one() {
        // varpi is a density ratio, so E varpi = 1.
        for s2 in [0.1, 1.0, 3.0] {
            assert_relative_eq!(varpi_moment(4, s2, 1.0).unwrap(), 1.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn threshold_values() {
        assert_relative_eq!(sigma2_threshold(1.0).unwrap(), 6f64.sqrt() - 2.0, max_relative = 1e-14);
        let mut prev = f64::INFINITY;
        for p in [1.0, 2.0, 4.0, 8.0, 16.0] {
            let t = sigma2_threshold(p).unwrap();
            assert!(t > 0.0 && t < prev);
            prev = t;
        }
        assert!(sigma2_threshold(0.5).is_err());
    }

    #[test]
    fn chaining_examples() {
        let w = WpiCurve::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(w.alpha, 1.0 / 3.0);
        assert_eq!(w.c, 2.25);
        assert!(w.c_optimal < w.c);
        let m = VarpiMoments { m_p: 1.0, m_p1: 1.0, m_2p: 0.125, m_neg2p: 0.125 };
        let b = beta_n_bound(1.0, 5, 1.0, &m, &KConstants::default()).unwrap();
        assert_eq!(b.value, 2.25);
        assert!(beta_n_bound(1e12, 5, 1.0, &m, &KConstants::default()).unwrap().value < 1e-3);
        let inf = VarpiMoments { m_2p: f64::INFINITY, ..m };
        let b = beta_n_bound(1.0, 5, 1.0, &inf, &KConstants::default()).unwrap();
        assert!(b.value.is_infinite() && b.note.is_some());
    }

    #[test]
    fn chain_with_perfect_comparison_returns_first() {
        let b1 = BetaCurve::Power { c: 3.0, alpha: 0.7 };
        let id = BetaCurve::Comparison { scale: 1.0 };
        assert_eq!(chain_beta(&b1, &id), b1);
        for s in [0.1, 1.0, 10.0] {
            let numeric = chain_beta_numeric(&b1, &id, s);
            assert_relative_eq!(numeric, b1.eval(s), max_relative = 1e-2);
        }
    }

    #[test]
    fn subgeometric_examples() {
        assert_relative_eq!(subgeometric_bound(1.0, 1.0, 4.0).unwrap(), 1.0, max_relative = 1e-15);
        assert!(subgeometric_bound(1.0, 1.0, 1e12).unwrap() < 1e-10);
        let a = subgeometric_bound_rescaled(2.0, 0.4, 10.0, 3.0).unwrap();
        assert_eq!(a, subgeometric_bound(2.0, 0.4, 30.0).unwrap());
    }

    #[test]
    fn gap_examples() {
        let (phi, g) = gap_lower_bound(1.0, 16).unwrap();
        assert!((g - 4.32e-5).abs() < 1e-7);
        assert_relative_eq!(g, phi * phi / 2.0, max_relative = 1e-13);
        assert_eq!(gap_upper_bound(1.0, 1).unwrap(), 0.5);
        // Large d at fixed zeta.
        let d = 1usize << 40;
        let (_, g) = gap_lower_bound(1.3, d).unwrap();
        let limit = 2f64.powi(-10) * (-(1.3f64.powi(4)) / 4.0).exp() * 2.0 * 1.69 * C_GAMMA * C_GAMMA;
        assert_relative_eq!(g * (d as f64).sqrt(), limit, max_relative = 1e-5);
        assert!(gap_upper_bound(1.0, 100_000).unwrap() < 1e-100);
    }

    #[test]
    fn acceptance_examples() {
        assert_relative_eq!(alpha_inf_lower(1e-9, 3).unwrap(), 0.5, max_relative = 1e-12);
        assert_relative_eq!(alpha_inf_lower(1.0, 4).unwrap(), 0.5 * (-1.0f64 / 9.0).exp(), max_relative = 1e-15);
        assert!((alpha_inf_lower_zeta(1.0) - 0.4697).abs() < 1e-4);
        for d in [1usize, 2, 10, 1000, 1_000_000] {
            let s2 = 1.0 / (d as f64).sqrt();
            assert!(alpha_inf_lower(s2, d).unwrap() >= alpha_inf_lower_zeta(1.0));
        }
        assert_eq!(tv_qw_bound(&[1.0, 2.0], &[1.0, 2.0], 1.0).unwrap(), 0.0);
        assert_relative_eq!(tv_qw_bound(&[0.0], &[1.0], 2.0).unwrap(), 0.25, max_relative = 1e-15);
        let env = gb_acceptance_envelope(&[6f64.sqrt()], 1.0).unwrap();
        assert!((env - 0.4248).abs() < 1e-4);
        assert!(gb_acceptance_envelope(&[0.0, 0.0], 0.7).unwrap() >= 1.0);
        let e = GbEnvelope::new(1.0, 2).unwrap();
        assert_relative_eq!(e.at_norm2(e.radius(0.05).powi(2)), 0.05, max_relative = 1e-12);
    }

    #[test]
    fn convergence_bound_shape() {
        let k = KConstants { k1: 1.0, k2: 1.0, k3: 1.0 };
        let b = mtm_convergence_bound(10, 0.2, 1.0, 2, &k).unwrap();
        assert!(b.note.is_none() && b.constant.is_finite());
        for kk in [1.0, 10.0, 100.0] {
            assert!(b.at(2.0 * kk) < b.at(kk));
        }
        let slope = (b.at(1e6).ln() - b.at(1e2).ln()) / (1e6f64.ln() - 1e2f64.ln());
        assert!((slope + 1.0 / 6.0).abs() < 1e-6);
        let over = mtm_convergence_bound(10, 0.5, 1.0, 2, &k).unwrap();
        assert!(over.constant.is_infinite() && over.note.is_some());
    }

    #[test]
    fn report_flags() {
        let r = BoundReport::new("x", &[("a", 1.0)], 1.0, Some(1.0 + 1e-9));
        assert_eq!(r.agree, Some(true));
        let r = BoundReport::new("x", &[], 0.94868, Some(1.1619));
        assert_eq!(r.agree, Some(false));
        let r = BoundReport::new("x", &[], f64::INFINITY, Some(f64::INFINITY));
        assert_eq!(r.relative_discrepancy, Some(0.0));
        let r = BoundReport::new("x", &[], 2.0, None);
        assert_eq!(r.agree, None);
    }
}
