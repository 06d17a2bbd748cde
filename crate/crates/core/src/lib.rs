//! Adaptive composition for Gaussian differential privacy.
//!
//! * [`filter`]: the sum-of-squares budget filter.
//! * [`cholesky`]: the online canonical factor of `I − mmᵀ`.
//! * [`curator`]: direct and simulated sessions over a secret bit.
//! * [`adversaries`]: adaptive query policies.
//! * [`mechanisms`]: mechanisms as postprocessed Gaussian queries.
//! * [`stats`]: the two-sample tests used to compare curators.
//! * [`harness`]: experiment configs, runs and reports.

#![allow(clippy::needless_range_loop)]

pub mod adversaries;
pub mod cholesky;
pub mod curator;
pub mod filter;
pub mod harness;
pub mod mechanisms;
pub mod numeric;
pub mod rng;
pub mod stats;
pub mod transcript;

pub use adversaries::{AdversaryPolicy, Policy};
pub use cholesky::{CholeskyError, CholeskyState, Mode};
pub use curator::{run_interaction, Response, SecretBit, Session, SessionError, SessionKind};
pub use filter::{Decision, FilterError, FilterState, PrivacyBudget, QuerySpend};
pub use harness::{ExperimentConfig, ExperimentReport, HarnessError};
pub use transcript::{Round, RoundOutcome, Transcript};
