//! Streaming class-incremental learning with ensemble deep RVFL networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`solver`]: Woodbury updates, Bregman quadratic forms and offline
//!   closed-form experts.
//! * [`rvfl`]: fixed random hidden layers and ensemble decision fusion.
//! * [`learners`]: the recursive ridge, forward (`kf`) and adaptive forward
//!   (`kf_bayes`) output heads, plus non-continual baselines.
//! * [`stream`]: dataset loading and boundary-free task streams.
//! * [`metrics`]: ACC/BWT/FWT and the immediate accuracy, regret and KL traces.
//! * [`experiment`] and [`report`]: the config-driven runner and its outputs.

pub mod error;
pub mod experiment;
pub mod learners;
pub(crate) mod linalg;
pub mod metrics;
pub mod report;
pub mod rvfl;
pub mod solver;
pub mod stream;

pub use error::{Error, Result};
