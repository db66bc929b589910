//! Multirotor flight-dynamics simulator and controller library.
//!
//! The centerpiece is a feedback-linearizing position controller that
//! models first-order thrust lag through a dynamic extension and injects an
//! online-learned acceleration disturbance model, together with its time
//! derivatives, into the linearizing transformation. Cascaded geometric and
//! tilt-prioritized controllers plus an adaptive disturbance estimator are
//! provided as baselines, and [`harness`] runs scenario comparisons.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod baselines;
pub mod dynamics;
pub mod error;
pub mod fbl;
pub mod geometry;
pub mod harness;
pub mod learner;
pub mod trajectories;

pub use error::{Error, Result};
