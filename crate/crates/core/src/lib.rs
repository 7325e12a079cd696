//! Multiple-try Metropolis kernels, their ideal and semi-ideal limits, exact
//! finite-state oracles and the analytic bounds relating them.

pub mod analytics;
pub mod diagnostics;
pub mod discrete;
pub mod error;
pub mod gaussian;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod samplers;
pub mod stats;

pub use error::{Error, Result};
pub use model::Model;
pub use rng::{Lane, StepStream, StreamRng};
