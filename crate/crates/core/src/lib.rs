//! Online binary classification under concept drift.
//!
//! The centrepiece is [`lasec::Lasec`], a second-order learner that predicts
//! with the last-step min-max solution of a drifting ridge objective and can
//! query labels selectively. Around it sit comparison learners
//! ([`baselines`]), a brute-force [`oracle`] for the recurrences, computable
//! mistake-bound diagnostics ([`bounds`]), data generation and loading
//! ([`data`]) and a seeded experiment runner ([`harness`]).

pub mod baselines;
pub mod bounds;
pub mod data;
pub mod error;
pub mod harness;
pub mod lasec;
pub mod learner;
pub mod linalg;
pub mod oracle;

pub use data::{DriftScenario, Example, ReferenceSequence};
pub use error::{Error, ErrorCategory, Result};
pub use harness::{AggregateResult, Algorithm, AlgorithmParams, ExperimentConfig, RunTrace};
pub use lasec::{Lasec, LasecParams, LasecState};
pub use learner::{OnlineLearner, Param, RoundOutcome};
pub use linalg::SpdMatrix;
