//! Deterministic simulator for distributed gradient methods with Top-K
//! compression and error feedback.
//!
//! The crate builds sparse distributed problems (synthetic least squares,
//! logistic regression on LIBSVM data), computes their smoothness and
//! sparsity constants, runs DGD, DCGD, EF14, EF21 and EF21 with an adaptive
//! stepsize, and checks the convergence inequalities along every trajectory.
//!
//! Numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix `f64`.

pub mod algorithms;
pub mod compress;
pub mod datasets;
pub mod error;
pub mod kv;
pub mod linalg;
pub mod metrics;
pub mod problem;
pub mod scalar;
pub mod smoothness;
pub mod verify;

pub use algorithms::{run, GammaRule, LPlusSource, Method, RunConfig, RunFailure, X0Init, G0Init};
pub use compress::TopK;
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Problem = problem::DistributedProblem<f64>;
pub type Client = problem::ClientObjective<f64>;
pub type Trace = metrics::RunTrace<f64>;
pub type Record = metrics::TraceRecord<f64>;
pub type Report = smoothness::SmoothnessReport<f64>;
pub type Constants = metrics::RunConstants<f64>;
