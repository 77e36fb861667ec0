//! Low-rank multivariate Hawkes processes.
//!
//! The triggering kernels of a `d`-dimensional Hawkes process are factored as
//! `g = P g̃ Pᵀ`, where `P` is a nonnegative `d × r` projection of event types
//! onto `r` latent groups and `g̃` holds the `r × r` group-level kernels. Both
//! the group kernels and the baselines are expanded over a basis of decaying
//! exponentials, which makes the log-likelihood computable in time linear in
//! the number of events through two sparse statistics tensors.
//!
//! Inference alternates a barrier-Newton step on the kernel coefficients
//! ([`alpha`]) with multiplicative minorize–maximization sweeps on the
//! projection ([`projection`]); [`fit`] drives the alternation.
//!
//! Data-parallel loops (per realization, per event block) run on rayon when the
//! `parallel` feature is enabled. Every reduction folds fixed-size blocks in a
//! fixed order, so parallel and sequential runs are bit-identical.

pub mod alpha;
pub mod bench;
pub mod error;
pub mod eval;
pub mod exec;
pub mod fit;
pub mod io;
pub mod likelihood;
pub mod projection;
pub mod simulate;
pub mod tensors;
pub mod types;

pub use error::{Error, Result};
pub use fit::{fit, init_params, FitReport};
pub use tensors::{build_tensors, TensorPair};
pub use types::{
    exp_integral, Event, EventHistory, Hyperparams, LowRankModel, Network, Realization,
};
