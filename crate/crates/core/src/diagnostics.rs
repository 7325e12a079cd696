//! Empirical surrogates for spectral gap, conductance and acceptance of
//! continuous-space chains, all from stationary starts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::discrete::FiniteModel;
use crate::error::{Error, Result};
use crate::gaussian::{sq_norm, RwModel};
use crate::model::Model;
use crate::rng::StepStream;
use crate::samplers::{stationary_draw, ChainTrace, KernelSpec, StepRecord, Transition};
use crate::stats::{mean_se, MIN_BATCHES};

/// Smallest sample a report may rest on.
pub const MIN_REPORT_SAMPLES: usize = 1_000;

/// Shortest trace accepted by [`autocorr_gap_proxy`].
pub const MIN_TRACE_LEN: usize = 10_000;

/// Rejection attempts allowed per draw from `pi` restricted to a set.
pub const MAX_REJECTION_ATTEMPTS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapEstimator {
    DirichletLinear,
    LagAutocorrelation,
    AcceptanceRate,
    ConductanceHalfspace,
}

impl GapEstimator {
    pub fn as_str(&self) -> &'static str {
        match self {
            GapEstimator::DirichletLinear => "dirichlet-linear",
            GapEstimator::LagAutocorrelation => "lag-autocorrelation",
            GapEstimator::AcceptanceRate => "acceptance-rate",
            GapEstimator::ConductanceHalfspace => "conductance-halfspace",
        }
    }
}

/// Identifies the chain a report was computed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTag {
    pub kernel: String,
    pub d: usize,
    pub sigma: Option<f64>,
    pub theta: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapProxyReport {
    pub tag: KernelTag,
    pub estimator: GapEstimator,
    pub estimate: f64,
    pub se: f64,
    pub n_samples: usize,
    /// Radius of the evaluation point or set, when the estimator has one.
    pub radius: Option<f64>,
}

impl GapProxyReport {
    fn new(tag: KernelTag, estimator: GapEstimator, estimate: f64, se: f64, n_samples: usize) -> Result<Self> {
        if n_samples < MIN_REPORT_SAMPLES {
            return Err(Error::invalid("n_samples", format!("need at least {MIN_REPORT_SAMPLES}, got {n_samples}")));
        }
        if !(se > 0.0 && se.is_finite()) || !estimate.is_finite() {
            return Err(Error::invalid(
                "se",
                format!("{} estimator is degenerate (estimate {estimate}, se {se})", estimator.as_str()),
            ));
        }
        Ok(Self { tag, estimator, estimate, se, n_samples, radius: None })
    }

    fn at_radius(mut self, r: f64) -> Self {
        self.radius = Some(r);
        self
    }

    /// True when `|estimate - value| <= k * se`.
    pub fn within(&self, value: f64, k: f64) -> bool {
        (self.estimate - value).abs() <= k * self.se
    }
}

/// Targets with exact draws and closed-form linear and radial statistics.
pub trait StationaryModel: Model {
    /// Proposal scale and weight exponent, when meaningful.
    fn params(&self) -> (Option<f64>, Option<f64>);

    /// `Var_pi <v, X>`.
    fn linear_variance(&self, v: &[f64]) -> Result<f64>;

    /// `pi(|X| > r)`.
    fn radial_tail(&self, r: f64) -> Result<f64>;
}

impl StationaryModel for RwModel {
    fn params(&self) -> (Option<f64>, Option<f64>) {
        (Some(self.proposal.sigma()), Some(self.weight.theta()))
    }

    fn linear_variance(&self, v: &[f64]) -> Result<f64> {
        if !self.target.is_standard_gaussian() {
            return Err(Error::UnsupportedTarget("linear variance needs the standard Gaussian target"));
        }
        Ok(sq_norm(v))
    }

    fn radial_tail(&self, r: f64) -> Result<f64> {
        if !self.target.is_standard_gaussian() {
            return Err(Error::UnsupportedTarget("radial tail needs the standard Gaussian target"));
        }
        let chi = ChiSquared::new(self.dim() as f64).map_err(|e| Error::invalid("d", e.to_string()))?;
        Ok(chi.sf(r * r))
    }
}

impl StationaryModel for FiniteModel {
    fn params(&self) -> (Option<f64>, Option<f64>) {
        (None, None)
    }

    fn linear_variance(&self, v: &[f64]) -> Result<f64> {
        let pi = &self.spec().pi;
        let mean: f64 = pi.iter().enumerate().map(|(i, p)| p * i as f64).sum();
        let var: f64 = pi.iter().enumerate().map(|(i, p)| p * (i as f64 - mean).powi(2)).sum();
        Ok(v[0] * v[0] * var)
    }

    fn radial_tail(&self, r: f64) -> Result<f64> {
        Ok(self.spec().pi.iter().enumerate().filter(|(i, _)| *i as f64 > r).map(|(_, p)| p).sum())
    }
}

/// A transition whose stationary law is a [`StationaryModel`] target.
pub trait Diagnosable: Transition {
    type Target: StationaryModel;
    fn target(&self) -> &Self::Target;
    fn tag(&self) -> KernelTag;
}

impl<M: StationaryModel> Diagnosable for KernelSpec<M> {
    type Target = M;

    fn target(&self) -> &M {
        self.model()
    }

    fn tag(&self) -> KernelTag {
        let (sigma, theta) = self.model().params();
        KernelTag { kernel: self.kind().as_str().to_string(), d: self.model().dim(), sigma, theta, n: self.n_tries() }
    }
}

/// `P(x, .) = pi`: every step is a fresh exact draw.
#[derive(Debug, Clone)]
pub struct PerfectKernel<M> {
    pub model: M,
}

impl<M: StationaryModel> Transition for PerfectKernel<M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn step(&self, x: &[f64], stream: &StepStream) -> Result<(Vec<f64>, StepRecord)> {
        let y = stationary_draw(&self.model, stream, 0)?;
        let rec = StepRecord {
            prev: x.to_vec(),
            proposed: y.clone(),
            selected_index: None,
            log_accept: 0.0,
            accepted: true,
            weight_evals: 0,
            lazy_hold: false,
            clamped: false,
        };
        Ok((y, rec))
    }
}

impl<M: StationaryModel> Diagnosable for PerfectKernel<M> {
    type Target = M;

    fn target(&self) -> &M {
        &self.model
    }

    fn tag(&self) -> KernelTag {
        let (sigma, theta) = self.model.params();
        KernelTag { kernel: "perfect".to_string(), d: self.model.dim(), sigma, theta, n: 0 }
    }
}

/// Stationary start for replica `i`, then one transition on a distinct step.
fn stationary_pair<K: Diagnosable + ?Sized>(kernel: &K, seed: u64, i: u64) -> Result<(Vec<f64>, Vec<f64>, StepRecord)> {
    let x = stationary_draw(kernel.target(), &StepStream::new(seed, i, 0), 0)?;
    let (y, rec) = kernel.step(&x, &StepStream::new(seed, i, 1))?;
    Ok((x, y, rec))
}

/// Replica results in index order, whatever the thread count.
fn replicas<T: Send>(n: usize, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n as u64).into_par_iter().map(f).collect()
}

/// Estimates `E(P, f) / ||f||^2` for `f(x) = <v, x>` from `n` stationary
/// transitions. An upper bound on the spectral gap by the variational formula.
pub fn dirichlet_ratio_linear<K: Diagnosable + ?Sized>(kernel: &K, v: &[f64], n: usize, seed: u64) -> Result<GapProxyReport> {
    if v.len() != kernel.dim() {
        return Err(Error::invalid("v", format!("expected dimension {}, got {}", kernel.dim(), v.len())));
    }
    let var = kernel.target().linear_variance(v)?;
    if !(var > 0.0) {
        return Err(Error::invalid("v", "f has zero variance under pi"));
    }
    let vals = replicas(n, |i| {
        let (x, y, _) = stationary_pair(kernel, seed, i)?;
        let df: f64 = v.iter().zip(x.iter().zip(&y)).map(|(vi, (a, b))| vi * (a - b)).sum();
        Ok(0.5 * df * df / var)
    })?;
    let (m, se) = mean_se(&vals);
    GapProxyReport::new(kernel.tag(), GapEstimator::DirichletLinear, m, se, n)
}

/// Monte Carlo acceptance probability `alpha(x)` at `x = r e_1` for each radius,
/// averaging the per-step acceptance probability over proposals (and shadow tuples).
pub fn acceptance_profile<K: Diagnosable + ?Sized>(
    kernel: &K,
    radii: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<GapProxyReport>> {
    radii
        .iter()
        .enumerate()
        .map(|(ri, &r)| {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::invalid("radii", format!("radius {r} must be finite and nonnegative")));
            }
            let mut x = vec![0.0; kernel.dim()];
            x[0] = r;
            let vals = replicas(n, |i| {
                let (_, rec) = kernel.step(&x, &StepStream::new(seed, ri as u64, i))?;
                Ok(rec.log_accept.exp())
            })?;
            let (m, se) = mean_se(&vals);
            Ok(GapProxyReport::new(kernel.tag(), GapEstimator::AcceptanceRate, m, se, n)?.at_radius(r))
        })
        .collect()
}

/// Mean acceptance probability `E_pi alpha(X)` over `n` stationary starts.
pub fn stationary_acceptance<K: Diagnosable + ?Sized>(kernel: &K, n: usize, seed: u64) -> Result<GapProxyReport> {
    let vals = replicas(n, |i| {
        let (_, _, rec) = stationary_pair(kernel, seed, i)?;
        Ok(if rec.lazy_hold { 0.0 } else { rec.log_accept.exp() })
    })?;
    let (m, se) = mean_se(&vals);
    GapProxyReport::new(kernel.tag(), GapEstimator::AcceptanceRate, m, se, n)
}

/// Radius `R` with `pi(|X| > R) = mass` for the standard Gaussian in `d` dimensions.
pub fn radius_for_mass(d: usize, mass: f64) -> Result<f64> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::invalid("mass", "must lie in (0, 1)"));
    }
    let chi = ChiSquared::new(d as f64).map_err(|e| Error::invalid("d", e.to_string()))?;
    Ok(chi.inverse_cdf(1.0 - mass).sqrt())
}

/// Estimates `(pi ⊗ P)(A x A^c) / pi(A)` for `A = {|x| > R}`, an upper bound
/// on the conductance. Starts are drawn from `pi` restricted to `A` by rejection.
pub fn conductance_halfspace<K: Diagnosable + ?Sized>(kernel: &K, r: f64, n: usize, seed: u64) -> Result<GapProxyReport> {
    let mass = kernel.target().radial_tail(r)?;
    if mass > 0.5 {
        return Err(Error::InvalidSet(format!("pi(|x| > {r}) = {mass} exceeds 1/2")));
    }
    if !(mass > 0.0) {
        return Err(Error::InvalidSet(format!("pi(|x| > {r}) is zero")));
    }
    let r2 = r * r;
    let vals = replicas(n, |i| {
        let start = StepStream::new(seed, i, 0);
        let mut j = 0;
        let x = loop {
            let x = stationary_draw(kernel.target(), &start, j)?;
            if sq_norm(&x) > r2 {
                break x;
            }
            j += 1;
            if j >= MAX_REJECTION_ATTEMPTS {
                return Err(Error::InvalidSet(format!("no draw landed in |x| > {r}")));
            }
        };
        let (y, _) = kernel.step(&x, &StepStream::new(seed, i, 1))?;
        Ok(if sq_norm(&y) <= r2 { 1.0 } else { 0.0 })
    })?;
    let (m, se) = mean_se(&vals);
    Ok(GapProxyReport::new(kernel.tag(), GapEstimator::ConductanceHalfspace, m, se, n)?.at_radius(r))
}

/// `1 - rho_1` for coordinate `f` of a stationary-start trace, with a
/// batch-means standard error over ratio estimates per batch.
pub fn autocorr_gap_proxy(trace: &ChainTrace, f: usize, tag: KernelTag) -> Result<GapProxyReport> {
    if trace.is_empty() || f >= trace.states[0].len() {
        return Err(Error::invalid("f", format!("coordinate {f} out of range")));
    }
    autocorr_gap_proxy_series(&trace.coordinate(f), tag)
}

/// [`autocorr_gap_proxy`] on an already extracted series `f(X_0), f(X_1), ..`.
pub fn autocorr_gap_proxy_series(xs: &[f64], tag: KernelTag) -> Result<GapProxyReport> {
    let len = xs.len();
    if len < MIN_TRACE_LEN {
        return Err(Error::TraceTooShort { len, min: MIN_TRACE_LEN });
    }
    let mean = xs.iter().sum::<f64>() / len as f64;
    let jumps: Vec<f64> = xs.windows(2).map(|w| 0.5 * (w[1] - w[0]).powi(2)).collect();
    let devs: Vec<f64> = xs[..len - 1].iter().map(|x| (x - mean).powi(2)).collect();
    let ratio = |a: &[f64], b: &[f64]| a.iter().sum::<f64>() / b.iter().sum::<f64>();
    let estimate = ratio(&jumps, &devs);
    let m = jumps.len();
    let batches = MIN_BATCHES.max((m as f64).sqrt() as usize);
    let size = m / batches;
    let per: Vec<f64> =
        (0..batches).map(|b| ratio(&jumps[b * size..(b + 1) * size], &devs[b * size..(b + 1) * size])).collect();
    let (_, se) = mean_se(&per);
    GapProxyReport::new(tag, GapEstimator::LagAutocorrelation, estimate, se, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{alpha_inf_lower, gap_upper_bound, GbEnvelope};
    use crate::samplers::run_chain;

    fn g(d: usize, sigma: f64, theta: f64) -> RwModel {
        RwModel::gaussian(d, sigma, theta).unwrap()
    }

    #[test]
    fn report_invariants() {
        let tag = KernelTag { kernel: "mh".into(), d: 1, sigma: None, theta: None, n: 1 };
        assert!(GapProxyReport::new(tag.clone(), GapEstimator::AcceptanceRate, 0.5, 0.1, 999).is_err());
        assert!(GapProxyReport::new(tag.clone(), GapEstimator::AcceptanceRate, 0.5, 0.0, 1000).is_err());
        assert!(GapProxyReport::new(tag, GapEstimator::AcceptanceRate, 0.5, 0.1, 1000).is_ok());
    }

    #[test]
    fn tiny_step_gives_tiny_ratio() {
        let k = KernelSpec::mh(g(3, 1e-4, 0.0));
        let r = dirichlet_ratio_linear(&k, &[1.0, 0.0, 0.0], 2_000, 3).unwrap();
        assert!(r.estimate < 1e-7);
    }

    #[test]
    fn ratio_is_scale_invariant() {
        let k = KernelSpec::ideal(g(2, 1.0, 0.5));
        let a = dirichlet_ratio_linear(&k, &[1.0, 1.0], 20_000, 5).unwrap();
        let b = dirichlet_ratio_linear(&k, &[2.0, 2.0], 20_000, 5).unwrap();
        assert!((a.estimate - b.estimate).abs() < 1e-12 * a.estimate);
    }

    #[test]
    fn ideal_ratio_below_gap_upper_bound() {
        for (d, sigma) in [(2usize, 1.0f64), (8, 0.5)] {
            let k = KernelSpec::ideal(g(d, sigma, 0.5));
            let mut v = vec![0.0; d];
            v[0] = 1.0;
            let r = dirichlet_ratio_linear(&k, &v, 20_000, 9).unwrap();
            let s2 = sigma * sigma;
            assert!(r.estimate <= 1.5 * s2 / (2.0 + s2) + 4.0 * r.se);
            assert!(r.estimate <= gap_upper_bound(s2, d).unwrap().max(1.5 * s2 / (2.0 + s2)) + 4.0 * r.se);
        }
    }

    #[test]
    fn perfect_kernel_estimators() {
        let p = PerfectKernel { model: g(3, 1.0, 0.5) };
        let r = dirichlet_ratio_linear(&p, &[0.0, 1.0, 0.0], 20_000, 1).unwrap();
        assert!(r.within(1.0, 4.0), "{r:?}");
        let rad = radius_for_mass(3, 0.2).unwrap();
        let c = conductance_halfspace(&p, rad, 20_000, 2).unwrap();
        assert!(c.within(0.8, 4.0), "{c:?}");
        let trace = run_chain(&p, &[0.0; 3], 20_000, 0, 4, 0).unwrap();
        let a = autocorr_gap_proxy(&trace, 1, p.tag()).unwrap();
        assert!(a.within(1.0, 4.0), "{a:?}");
    }

    #[test]
    fn conductance_rejects_large_sets() {
        let k = KernelSpec::mh(g(2, 1.0, 0.0));
        assert!(matches!(conductance_halfspace(&k, 0.5, 1_000, 0), Err(Error::InvalidSet(_))));
    }

    #[test]
    fn short_trace_rejected() {
        let k = KernelSpec::mh(g(1, 1.0, 0.0));
        let trace = run_chain(&k, &[0.0], 100, 0, 0, 0).unwrap();
        assert!(matches!(autocorr_gap_proxy(&trace, 0, k.tag()), Err(Error::TraceTooShort { .. })));
    }

    #[test]
    fn acceptance_examples() {
        let d = 2;
        let s = (d as f64).powf(-0.25);
        let k = KernelSpec::ideal(g(d, s, 0.5));
        let reps = acceptance_profile(&k, &[0.0, 2.0, 4.0], 20_000, 7).unwrap();
        assert!(reps[0].estimate >= 0.5);
        let lower = alpha_inf_lower(s * s, d).unwrap();
        for r in &reps {
            assert!(r.estimate >= lower - 4.0 * r.se);
        }
        let gb = KernelSpec::ideal(g(2, 1.0, 1.0));
        let env = GbEnvelope::new(1.0, 2).unwrap();
        for r in acceptance_profile(&gb, &[2.0, 4.0, 6.0], 20_000, 8).unwrap() {
            let rad = r.radius.unwrap();
            assert!(r.estimate <= env.at_norm2(rad * rad) + 4.0 * r.se, "{r:?}");
        }
    }
}
