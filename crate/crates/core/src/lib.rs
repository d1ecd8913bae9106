//! Maximum-variation averaging (MaxVA) for adaptive gradient methods.
//!
//! The second-moment running average of Adam-style optimizers normally uses a
//! constant coefficient. MaxVA instead picks, per coordinate and per step, the
//! coefficient that maximizes the estimated gradient variance, which has a
//! closed form. This crate provides:
//!
//! - [`vecmath`]: the flat coordinate vector used everywhere.
//! - [`maxva`]: the weighted zeroth/first/second moment state machine.
//! - [`optimizers`]: MAdam, LaMAdam and the Adam/AMSGrad/LaProp/AdaBound/SGD baselines.
//! - [`problems`]: the finite-sample non-convergence counterexample and the noisy quadratic model.
//! - [`toyml`]: logistic regression and a tanh MLP on seeded Gaussian blobs.
//! - [`harness`]: seeded multi-run experiments, diagnostics and aggregation.
//! - `oracle` (feature `oracle`): independent verification engines.

pub mod error;
pub mod harness;
pub mod maxva;
pub mod optimizers;
pub mod problems;
pub mod rng;
pub mod schedule;
pub mod toyml;
pub mod vecmath;

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
#[cfg(any(test, feature = "oracle"))]
pub mod verify;

pub use error::{Error, Result};
pub use maxva::{BetaBounds, MaxVAState};
pub use optimizers::{Algorithm, OptimizerConfig, OptimizerState, StepReport};
pub use schedule::LrSchedule;
pub use vecmath::CoordVector;
