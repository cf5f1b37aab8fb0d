//! Byzantine-robust distributed gradient descent.
//!
//! The crate implements a full-gradient learner that stays on track when a
//! fraction of its workers send corrupted gradients. The robust aggregation
//! step filters worker reports by iteratively down-weighting points that a
//! min–max certificate flags as outliers; supporting modules provide the
//! numerical kernels, an adversary simulator, a TCP transport for running
//! real worker processes, and a Monte-Carlo lab for the matrix-concentration
//! behavior the filter's thresholds rely on.

pub mod byzantine;
pub mod cli;
pub mod conclab;
pub mod config;
pub mod filter;
pub mod learning;
pub mod metrics;
pub mod numerics;
pub mod saddle;
pub mod transport;
