//! Targets, Gaussian random-walk proposals, power weights and the
//! importance-weight algebra shared by the samplers and the analytics.
//!
//! Convention: the standard Gaussian target has `ln pi(x) = -|x|^2 / 2`, the
//! normalising constant dropped.

use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::StreamRng;

type LogDensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
enum Density {
    StandardGaussian,
    Custom(Arc<LogDensityFn>),
}

/// A `d`-dimensional target density.
#[derive(Clone)]
pub struct TargetModel {
    dim: usize,
    density: Density,
}

impl fmt::Debug for TargetModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.density {
            Density::StandardGaussian => "standard-gaussian",
            Density::Custom(_) => "custom",
        };
        f.debug_struct("TargetModel").field("dim", &self.dim).field("density", &kind).finish()
    }
}

impl TargetModel {
    pub fn standard_gaussian(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        Ok(Self { dim, density: Density::StandardGaussian })
    }

    /// A custom log-density. It must be finite at the origin.
    pub fn custom(dim: usize, log_density: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        if !log_density(&vec![0.0; dim]).is_finite() {
            return Err(Error::NonFiniteDensity { which: "origin", point: vec![0.0; dim] });
        }
        Ok(Self { dim, density: Density::Custom(Arc::new(log_density)) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_standard_gaussian(&self) -> bool {
        matches!(self.density, Density::StandardGaussian)
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        match &self.density {
            Density::StandardGaussian => -0.5 * sq_norm(x),
            Density::Custom(f) => f(x),
        }
    }

    fn checked_log_density(&self, x: &[f64], which: &'static str) -> Result<f64> {
        let v = self.log_density(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteDensity { which, point: x.to_vec() })
        }
    }
}

/// Gaussian random-walk proposal `q(x, dy) = N(dy; x, sigma^2 I_d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwProposal {
    sigma: f64,
    dim: usize,
}

impl RwProposal {
    pub fn new(sigma: f64, dim: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", format!("must be positive and finite, got {sigma}")));
        }
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        Ok(Self { sigma, dim })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Power weights `w(x, y) = (pi(y) / pi(x))^theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSpec {
    theta: f64,
}

impl WeightSpec {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::invalid("theta", format!("must be finite and >= 0, got {theta}")));
        }
        Ok(Self { theta })
    }

    /// `theta = 0`: `w == 1`, plain Metropolis proposals.
    pub fn uninformed() -> Self {
        Self { theta: 0.0 }
    }

    /// `theta = 1/2`.
    pub fn locally_balanced() -> Self {
        Self { theta: 0.5 }
    }

    /// `theta = 1`.
    pub fn globally_balanced() -> Self {
        Self { theta: 1.0 }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

pub(crate) fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `ln w(x, y) = theta * (ln pi(y) - ln pi(x))`.
pub fn log_weight(target: &TargetModel, spec: &WeightSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    let lx = target.checked_log_density(x, "current")?;
    let ly = target.checked_log_density(y, "proposed")?;
    if spec.theta == 0.0 {
        return Ok(0.0);
    }
    Ok(spec.theta * (ly - lx))
}

/// `ln (qw)(x)` for the standard Gaussian target:
/// `(qw)(x) = (1 + theta sigma^2)^(-d/2) exp(theta^2 sigma^2 |x|^2 / (2 (1 + theta sigma^2)))`.
pub fn log_qw_normalizer(target: &TargetModel, prop: &RwProposal, spec: &WeightSpec, x: &[f64]) -> Result<f64> {
    if !target.is_standard_gaussian() {
        return Err(Error::UnsupportedTarget("(qw)(x) closed form needs the standard Gaussian target"));
    }
    let t = spec.theta;
    if t == 0.0 {
        return Ok(0.0);
    }
    let s2 = prop.sigma2();
    let a = 1.0 + t * s2;
    Ok(-0.5 * target.dim as f64 * a.ln() + t * t * s2 * sq_norm(x) / (2.0 * a))
}

/// `ln varpi(x, y) = ln w(x, y) - ln (qw)(x)`.
pub fn log_importance_weight(
    target: &TargetModel,
    prop: &RwProposal,
    spec: &WeightSpec,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    Ok(log_weight(target, spec, x, y)? - log_qw_normalizer(target, prop, spec, x)?)
}

/// `x + sigma * Z`.
pub fn sample_rw(prop: &RwProposal, x: &[f64], rng: &mut StreamRng) -> Vec<f64> {
    x.iter()
        .map(|xi| {
            let z: f64 = StandardNormal.sample(rng);
            xi + prop.sigma * z
        })
        .collect()
}

/// Draw from `q^w(x, .) = N(x / (1 + theta sigma^2), sigma^2 / (1 + theta sigma^2) I_d)`.
pub fn sample_qw_ideal(
    target: &TargetModel,
    prop: &RwProposal,
    spec: &WeightSpec,
    x: &[f64],
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    if !target.is_standard_gaussian() {
        return Err(Error::UnsupportedTarget("q^w sampler needs the standard Gaussian target"));
    }
    let a = 1.0 + spec.theta * prop.sigma2();
    let sd = prop.sigma / a.sqrt();
    Ok(x.iter()
        .map(|xi| {
            let z: f64 = StandardNormal.sample(rng);
            xi / a + sd * z
        })
        .collect())
}

/// Target, random-walk proposal and power weight bundled for the samplers.
#[derive(Debug, Clone)]
pub struct RwModel {
    pub target: TargetModel,
    pub proposal: RwProposal,
    pub weight: WeightSpec,
}

impl RwModel {
    pub fn new(target: TargetModel, proposal: RwProposal, weight: WeightSpec) -> Result<Self> {
        if target.dim() != proposal.dim() {
            return Err(Error::invalid(
                "dim",
                format!("target has d={} but proposal has d={}", target.dim(), proposal.dim()),
            ));
        }
        Ok(Self { target, proposal, weight })
    }

    /// Standard Gaussian target in `dim` dimensions with the given scale and exponent.
    pub fn gaussian(dim: usize, sigma: f64, theta: f64) -> Result<Self> {
        Self::new(TargetModel::standard_gaussian(dim)?, RwProposal::new(sigma, dim)?, WeightSpec::new(theta)?)
    }
}

impl Model for RwModel {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn log_target(&self, x: &[f64]) -> f64 {
        self.target.log_density(x)
    }

    fn sample_proposal(&self, x: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        sample_rw(&self.proposal, x, rng)
    }

    fn log_weight(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        log_weight(&self.target, &self.weight, x, y)
    }

    fn weight_is_antisymmetric(&self) -> bool {
        true
    }

    fn sample_weighted_proposal(&self, x: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
        sample_qw_ideal(&self.target, &self.proposal, &self.weight, x, rng)
    }

    fn log_qw_normalizer(&self, x: &[f64]) -> Result<f64> {
        log_qw_normalizer(&self.target, &self.proposal, &self.weight, x)
    }

    fn ideal_log_ratio(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        // theta = 1/2: min{1, exp(psi(x) - psi(y))}, psi(x) = sigma^2 |x|^2 / (4 (2 + sigma^2)).
        if self.target.is_standard_gaussian() && self.weight.theta == 0.5 {
            let s2 = self.proposal.sigma2();
            let c = s2 / (4.0 * (2.0 + s2));
            Some(c * (sq_norm(x) - sq_norm(y)))
        } else {
            None
        }
    }

    fn sample_target(&self, rng: &mut StreamRng) -> Option<Vec<f64>> {
        if !self.target.is_standard_gaussian() {
            return None;
        }
        Some((0..self.dim()).map(|_| StandardNormal.sample(rng)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussHermite;
    use crate::rng::{Lane, StepStream};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn g1() -> TargetModel {
        TargetModel::standard_gaussian(1).unwrap()
    }

    #[test]
    fn weight_examples() {
        let t = g1();
        for theta in [0.0, 0.5, 1.0, 2.3] {
            let w = WeightSpec::new(theta).unwrap();
            assert_eq!(log_weight(&t, &w, &[0.7], &[0.7]).unwrap(), 0.0);
        }
        assert_eq!(log_weight(&t, &WeightSpec::uninformed(), &[3.0], &[-1.0]).unwrap(), 0.0);
        // ln pi(0) - ln pi(1) = 0.5, times theta = 1/2.
        let v = log_weight(&t, &WeightSpec::locally_balanced(), &[1.0], &[0.0]).unwrap();
        assert_relative_eq!(v, 0.25, max_relative = 1e-15);
    }

    #[test]
    fn presets_map_to_exponents() {
        assert_eq!(WeightSpec::uninformed().theta(), 0.0);
        assert_eq!(WeightSpec::locally_balanced().theta(), 0.5);
        assert_eq!(WeightSpec::globally_balanced().theta(), 1.0);
        assert!(WeightSpec::new(-0.1).is_err());
        assert!(RwProposal::new(0.0, 1).is_err());
    }

    #[test]
    fn non_finite_density_is_a_domain_error() {
        let t = TargetModel::custom(1, |x: &[f64]| if x[0] > 5.0 { f64::NEG_INFINITY } else { 0.0 }).unwrap();
        let err = log_weight(&t, &WeightSpec::locally_balanced(), &[0.0], &[6.0]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteDensity { which: "proposed", .. }));
        assert!(TargetModel::custom(1, |_: &[f64]| f64::NAN).is_err());
    }

    #[test]
    fn normalizer_examples() {
        let t = g1();
        let p = RwProposal::new(1.0, 1).unwrap();
        let lb = WeightSpec::locally_balanced();
        assert_eq!(log_qw_normalizer(&t, &p, &WeightSpec::uninformed(), &[2.0]).unwrap(), 0.0);
        let at0 = log_qw_normalizer(&t, &p, &lb, &[0.0]).unwrap();
        assert_relative_eq!(at0, -0.5 * 1.5f64.ln(), max_relative = 1e-14);
        assert!((at0 + 0.2027).abs() < 1e-4);
        let at1 = log_qw_normalizer(&t, &p, &lb, &[1.0]).unwrap();
        assert_relative_eq!(at1, at0 + 1.0 / 12.0, max_relative = 1e-14);
        let custom = TargetModel::custom(1, |_: &[f64]| 0.0).unwrap();
        assert!(matches!(log_qw_normalizer(&custom, &p, &lb, &[0.0]), Err(Error::UnsupportedTarget(_))));
    }

    #[test]
    fn importance_weight_examples() {
        let t = g1();
        let p = RwProposal::new(1.0, 1).unwrap();
        let lb = WeightSpec::locally_balanced();
        assert_eq!(log_importance_weight(&t, &p, &WeightSpec::uninformed(), &[1.0], &[2.0]).unwrap(), 0.0);
        let v00 = log_importance_weight(&t, &p, &lb, &[0.0], &[0.0]).unwrap();
        assert_relative_eq!(v00, 0.5 * 1.5f64.ln(), max_relative = 1e-14);
        let v10 = log_importance_weight(&t, &p, &lb, &[1.0], &[0.0]).unwrap();
        assert_relative_eq!(v10, 0.25 + 0.5 * 1.5f64.ln() - 1.0 / 12.0, max_relative = 1e-14);
        assert!((v10 - 0.3694).abs() < 1e-4);
    }

    /// Quadrature oracle: ∫ N(y; x, sigma^2) w(x, y) dy by plain Gauss–Hermite.
    #[test]
    fn normalizer_matches_quadrature() {
        let gh = GaussHermite::new(200);
        let t = g1();
        for sigma in [0.3, 1.0, 2.0] {
            let p = RwProposal::new(sigma, 1).unwrap();
            for theta in [0.0, 0.5, 1.0] {
                let w = WeightSpec::new(theta).unwrap();
                for x in [0.0, 1.0, -1.0, 3.0, -3.0] {
                    let numeric = gh.expect_normal(x, sigma, |y| (theta * (-0.5 * y * y + 0.5 * x * x)).exp());
                    let closed = log_qw_normalizer(&t, &p, &w, &[x]).unwrap().exp();
                    assert_relative_eq!(numeric, closed, max_relative = 1e-8);
                }
            }
        }
    }

    fn ln_normal_pdf(y: &[f64], mean: &[f64], var: f64) -> f64 {
        let d = y.len() as f64;
        let q: f64 = y.iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum();
        -0.5 * d * (2.0 * std::f64::consts::PI * var).ln() - q / (2.0 * var)
    }

    /// exp(ln varpi) = q^w(x, y) / q(x, y) with both densities Gaussian.
    #[test]
    fn importance_weight_is_density_ratio() {
        let d = 3;
        let t = TargetModel::standard_gaussian(d).unwrap();
        for sigma in [0.4, 1.0, 1.7] {
            let p = RwProposal::new(sigma, d).unwrap();
            for w in [WeightSpec::uninformed(), WeightSpec::locally_balanced(), WeightSpec::globally_balanced()] {
                let a = 1.0 + w.theta() * sigma * sigma;
                for i in -2..=2 {
                    for j in -2..=2 {
                        let x = [i as f64 * 0.8, 0.3, -0.5 * i as f64];
                        let y = [j as f64 * 0.6, -0.2 * j as f64, 1.1];
                        let mean: Vec<f64> = x.iter().map(|v| v / a).collect();
                        let ratio = (ln_normal_pdf(&y, &mean, sigma * sigma / a) - ln_normal_pdf(&y, &x, sigma * sigma)).exp();
                        let lw = log_importance_weight(&t, &p, &w, &x, &y).unwrap().exp();
                        assert_relative_eq!(lw, ratio, max_relative = 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn rw_degenerate_and_deterministic() {
        let s = StepStream::new(1, 0, 0);
        let tiny = RwProposal::new(1e-300, 2).unwrap();
        let x = [0.5, -2.0];
        assert_eq!(sample_rw(&tiny, &x, &mut s.rng(Lane::Proposal, 0)), x.to_vec());
        let p = RwProposal::new(1.3, 2).unwrap();
        let a = sample_rw(&p, &x, &mut s.rng(Lane::Proposal, 4));
        let b = sample_rw(&p, &x, &mut s.rng(Lane::Proposal, 4));
        assert_eq!(a, b);
    }

    #[test]
    fn rw_mean_clt() {
        let p = RwProposal::new(1.5, 2).unwrap();
        let x = [1.0, -2.0];
        let n = 100_000;
        let mut sums = [0.0; 2];
        for i in 0..n {
            let y = sample_rw(&p, &x, &mut StepStream::new(9, 0, i).rng(Lane::Proposal, 0));
            sums[0] += y[0];
            sums[1] += y[1];
        }
        let se = 1.5 / (n as f64).sqrt();
        for k in 0..2 {
            assert!((sums[k] / n as f64 - x[k]).abs() < 4.0 * se);
        }
    }

    #[test]
    fn qw_sampler_moments() {
        let t = TargetModel::standard_gaussian(3).unwrap();
        // theta = 1/2, sigma^2 = 2, x = 4: mean 2, variance 1.
        let p = RwProposal::new(2f64.sqrt(), 3).unwrap();
        let lb = WeightSpec::locally_balanced();
        let n = 100_000u64;
        let draws: Vec<f64> = (0..n)
            .map(|i| sample_qw_ideal(&t, &p, &lb, &[4.0, 4.0, 4.0], &mut StepStream::new(3, 0, i).rng(Lane::Proposal, 0)).unwrap()[1])
            .collect();
        let (m, se) = crate::stats::mean_se(&draws);
        assert!((m - 2.0).abs() < 4.0 * se);
        let var = draws.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        // Var of the sample variance of a Gaussian: 2 sigma^4 / n.
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());

        // theta = 1, sigma = 1, x = 0: variance 1/2.
        let p1 = RwProposal::new(1.0, 1).unwrap();
        let t1 = g1();
        let draws: Vec<f64> = (0..n)
            .map(|i| sample_qw_ideal(&t1, &p1, &WeightSpec::globally_balanced(), &[0.0], &mut StepStream::new(4, 0, i).rng(Lane::Proposal, 0)).unwrap()[0])
            .collect();
        let var = draws.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((var - 0.5).abs() < 4.0 * 0.5 * (2.0 / n as f64).sqrt());

        // theta = 0 reproduces the random walk draw exactly.
        let s = StepStream::new(5, 0, 0);
        let a = sample_qw_ideal(&t1, &p1, &WeightSpec::uninformed(), &[0.3], &mut s.rng(Lane::Proposal, 0)).unwrap();
        let b = sample_rw(&p1, &[0.3], &mut s.rng(Lane::Proposal, 0));
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn log_weight_antisymmetric(
            theta in 0.0f64..3.0,
            x in proptest::collection::vec(-10.0f64..10.0, 4),
            y in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let t = TargetModel::standard_gaussian(4).unwrap();
            let w = WeightSpec::new(theta).unwrap();
            let f = log_weight(&t, &w, &x, &y).unwrap();
            let b = log_weight(&t, &w, &y, &x).unwrap();
            prop_assert_eq!(f, -b);
        }
    }
}
