//! Weighted-reward preference optimization on a desk-scale toy task.
//!
//! * [`policy`]: tabular autoregressive softmax policies with exact log-probs,
//!   analytic gradients and nucleus sampling.
//! * [`objectives`]: DPO, IPO, SimPO and the weighted-reward family as pure
//!   functions of sequence log-probabilities.
//! * [`schedule`]: fusion-coefficient schedules.
//! * [`datagen`]: the synthetic task, source ensemble and preference-quadruple
//!   construction.
//! * [`trainer`]: SFT followed by preference optimization, with telemetry.
//! * [`cli`]: config-driven commands behind the `wrpo` binary.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod objectives;
pub mod policy;
pub mod schedule;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
