//! Sub-sampled cubic regularization (SCR) for finite-sum objectives.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`]: libsvm ingestion, synthetic Gaussian classification sets and a
//!   binary cache format.
//! * [`losses`]: regularized logistic regression exposing value, gradient and
//!   Hessian-vector products over arbitrary index sets.
//! * [`sampling`]: sample-size schedules and Monte-Carlo checks of the
//!   Bernstein deviation bounds that motivate them.
//! * [`cubic`]: exact (secular equation) and Lanczos solvers for the cubic
//!   model subproblem.
//! * [`scr`]: the adaptive outer loop, its trace and post-hoc invariant checks.
//! * [`baselines`]: SGD, SAGA, Newton with line search and L-BFGS.
//!
//! Inner loops over samples run on rayon when the `parallel` feature is on.
//! Reductions always use the same fixed-shape tree, so results do not depend
//! on the feature or on the thread count.

pub mod baselines;
pub mod cubic;
pub mod data;
mod error;
pub mod exec;
pub mod losses;
pub mod sampling;
pub mod scr;
pub mod trace;

pub use error::{Error, Result};
pub use exec::{Exec, IndexSet};
pub use losses::{Objective, ObjectiveModel, Regularizer};

/// Dense column vector used for iterates, gradients and steps.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used for explicit Hessians and small subproblems.
pub type Matrix = nalgebra::DMatrix<f64>;
