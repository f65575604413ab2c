//! Induced objectives of advantage-weighted policy gradients with binary
//! rewards.
//!
//! A policy-gradient update that weights each of `M` sampled answers by
//! `Z_i = (1 - R_i) a[S_i] + R_i b[S_i]` is, in expectation, gradient ascent
//! on `h_M(p)`, where `p` is the probability of a correct answer and `h_M`
//! is a weighted sum of regularized incomplete beta functions. This crate
//! builds the weight tables for the common schedules (REINFORCE, averaging
//! over correct samples, GRPO and its variance-normalized cousin, Bernstein
//! fits), evaluates `h_M` and its derivative, and checks the correspondence
//! exactly on tabular softmax policies.

pub mod error;
pub mod estimator;
pub mod exact;
pub mod par;
pub mod policy;
pub mod schedule;
pub mod specfun;
pub mod trainer;
pub mod transform;
pub mod verify;

pub use error::{Error, Result};
pub use estimator::{GradientEstimate, GroupSample, RejectionOutcome};
pub use policy::{Corpus, Gradient, PromptTask, TabularPolicy};
pub use schedule::{AdvantageSchedule, BernsteinSplit, VarianceConvention};
pub use specfun::RefTransform;
pub use trainer::{Mode, TrainerConfig, Trajectory};
pub use transform::{InducedTransform, MonotoneTransform};

/// Floating point with 17 significant digits; round-trips every `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}
