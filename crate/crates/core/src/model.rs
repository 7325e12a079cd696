//! The interface the samplers need from a (target, proposal, weight) triple.

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// A target `pi`, a proposal kernel `q` and a weight function `w`, seen
/// through the operations the Markov kernels use. All densities are in log
/// space and only ratios are ever formed, so normalising constants may be
/// dropped.
pub trait Model: Send + Sync {
    fn dim(&self) -> usize;

    /// Unnormalised `ln pi(x)`. May be non-finite; callers check.
    fn log_target(&self, x: &[f64]) -> f64;

    /// Draw `Y ~ q(x, .)`.
    fn sample_proposal(&self, x: &[f64], rng: &mut StreamRng) -> Vec<f64>;

    /// `ln q(y, x) - ln q(x, y)`; zero for symmetric proposals.
    fn log_proposal_ratio(&self, _x: &[f64], _y: &[f64]) -> f64 {
        0.0
    }

    /// `ln w(x, y)`.
    fn log_weight(&self, x: &[f64], y: &[f64]) -> Result<f64>;

    /// True when `ln w(y, x) == -ln w(x, y)` holds exactly, which lets a
    /// Multiple-try step reuse the forward weight of the selected candidate.
    fn weight_is_antisymmetric(&self) -> bool {
        false
    }

    /// Draw from the weighted proposal `q^w(x, .)`, when it is tractable.
    fn sample_weighted_proposal(&self, _x: &[f64], _rng: &mut StreamRng) -> Result<Vec<f64>> {
        Err(Error::UnsupportedTarget("weighted proposal q^w has no sampler for this model"))
    }

    /// `ln (qw)(x)`, when it is tractable.
    fn log_qw_normalizer(&self, _x: &[f64]) -> Result<f64> {
        Err(Error::UnsupportedTarget("normaliser (qw)(x) has no closed form for this model"))
    }

    /// Closed-form `ln` of the ideal acceptance ratio, if the model has one
    /// that is cheaper or more stable than the generic assembly.
    fn ideal_log_ratio(&self, _x: &[f64], _y: &[f64]) -> Option<f64> {
        None
    }

    /// Exact draw from `pi`, when available.
    fn sample_target(&self, _rng: &mut StreamRng) -> Option<Vec<f64>> {
        None
    }

    /// Finite support of `q(x, .)` with probabilities, for models on finite
    /// state spaces. Enables exact enumeration in place of Monte Carlo.
    fn proposal_support(&self, _x: &[f64]) -> Option<Vec<(Vec<f64>, f64)>> {
        None
    }
}
