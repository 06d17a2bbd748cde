//! Experiment configuration.
//!
//! Configs are TOML. Every key except `budget` has a default and unknown keys
//! are rejected:
//!
//! ```toml
//! budget = 1.0            # mu0
//! bits = [0, 1]
//! n_trials = 200000
//! max_rounds = 256
//! master_seed = 42
//! alpha = 0.001
//! covariance_tolerance = 0.02
//! simulator = "streaming" # or "dense"
//! retry_on_failure = true
//!
//! [[policies]]
//! name = "fixed"
//! spends = [0.6, 0.8]
//!
//! [[policies]]
//! name = "sign-adaptive"
//! hi = 0.8
//! lo = 0.2
//!
//! [[mechanisms]]
//! map = "threshold"
//! mu = 1.0
//! tau = 0.5
//! ```
//!
//! Policy names: `fixed`, `sign-adaptive`, `greedy-halving`,
//! `overspend-prober`, `random-fraction` (`scale`, `rounds`). Mechanism maps:
//! `identity`, `threshold` (`tau`), `sign`, `round-to-integer`; each takes
//! its spend as `mu`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversaries::Policy;
use crate::cholesky::Mode;
use crate::curator::{SecretBit, DEFAULT_MAX_ROUNDS};
use crate::mechanisms::MechanismSpec;
use crate::stats::DEFAULT_ALPHA;

pub const DEFAULT_TRIALS: usize = 200_000;
pub const DEFAULT_COVARIANCE_TOLERANCE: f64 = 0.02;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid field `{field}`: {msg}")]
    Invalid { field: String, msg: String },
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub budget: f64,
    #[serde(default)]
    pub policies: Vec<Policy>,
    #[serde(default)]
    pub mechanisms: Vec<MechanismSpec>,
    #[serde(default = "both_bits")]
    pub bits: Vec<SecretBit>,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_cov_tol")]
    pub covariance_tolerance: f64,
    #[serde(default = "default_mode")]
    pub simulator: Mode,
    #[serde(default = "default_retry")]
    pub retry_on_failure: bool,
}

fn both_bits() -> Vec<SecretBit> {
    vec![SecretBit::Zero, SecretBit::One]
}
fn default_trials() -> usize {
    DEFAULT_TRIALS
}
fn default_max_rounds() -> usize {
    DEFAULT_MAX_ROUNDS
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_cov_tol() -> f64 {
    DEFAULT_COVARIANCE_TOLERANCE
}
fn default_mode() -> Mode {
    Mode::Streaming
}
fn default_retry() -> bool {
    true
}

impl ExperimentConfig {
    /// A config with defaults everywhere and no policies or mechanisms.
    pub fn new(budget: f64) -> Self {
        Self {
            budget,
            policies: Vec::new(),
            mechanisms: Vec::new(),
            bits: both_bits(),
            n_trials: DEFAULT_TRIALS,
            max_rounds: DEFAULT_MAX_ROUNDS,
            master_seed: 0,
            alpha: DEFAULT_ALPHA,
            covariance_tolerance: DEFAULT_COVARIANCE_TOLERANCE,
            simulator: Mode::Streaming,
            retry_on_failure: true,
        }
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.budget.is_finite() && self.budget >= 0.0) {
            return Err(invalid(
                "budget",
                format!("must be finite and >= 0, got {}", self.budget),
            ));
        }
        if self.n_trials < 1 {
            return Err(invalid("n_trials", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(
                "alpha",
                format!("must lie in (0, 1), got {}", self.alpha),
            ));
        }
        if !(self.covariance_tolerance.is_finite() && self.covariance_tolerance >= 0.0) {
            return Err(invalid("covariance_tolerance", "must be finite and >= 0"));
        }
        if self.bits.is_empty() {
            return Err(invalid("bits", "must name at least one bit"));
        }
        let mut seen = self.bits.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.bits.len() {
            return Err(invalid("bits", "duplicate entries"));
        }
        for (i, p) in self.policies.iter().enumerate() {
            p.validate()
                .map_err(|m| invalid(format!("policies[{i}]"), m))?;
        }
        for (i, m) in self.mechanisms.iter().enumerate() {
            if !(m.mu().is_finite() && m.mu() >= 0.0) {
                return Err(invalid(
                    format!("mechanisms[{i}].mu"),
                    "must be finite and >= 0",
                ));
            }
        }
        Ok(())
    }

    /// Identifier of policy `i` in seeds, reports and transcript files.
    pub fn policy_id(&self, i: usize) -> String {
        format!("{}#{i}", self.policies[i].label())
    }

    pub fn mechanism_id(&self, i: usize) -> String {
        format!("{}#{i}", self.mechanisms[i].map().label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::from_toml_str(text, Path::new("test.cfg"))
    }

    #[test]
    fn documented_example_parses() {
        let cfg = parse(
            r#"
budget = 1.0
bits = [0, 1]
n_trials = 200000
master_seed = 42

[[policies]]
name = "fixed"
spends = [0.6, 0.8]

[[policies]]
name = "sign-adaptive"
hi = 0.8
lo = 0.2

[[mechanisms]]
map = "threshold"
mu = 1.0
tau = 0.5
"#,
        )
        .unwrap();
        assert_eq!(cfg.policies.len(), 2);
        assert_eq!(cfg.policy_id(1), "sign-adaptive#1");
        assert_eq!(cfg.mechanism_id(0), "threshold#0");
        assert_eq!(cfg.alpha, DEFAULT_ALPHA);
        assert_eq!(cfg.max_rounds, 256);
    }

    #[test]
    fn unknown_keys_fail_closed() {
        let err = parse("budget = 1.0\nbudgte = 2.0").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("budgte"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn invalid_values_name_the_field() {
        for (text, field) in [
            ("budget = -1.0", "budget"),
            ("budget = 1.0\nn_trials = 0", "n_trials"),
            ("budget = 1.0\nalpha = 1.5", "alpha"),
            ("budget = 1.0\nbits = []", "bits"),
            (
                "budget = 1.0\n[[policies]]\nname = \"sign-adaptive\"\nhi = 0.1\nlo = 0.5",
                "policies[0]",
            ),
        ] {
            match parse(text) {
                Err(ConfigError::Invalid { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(
            parse("budget = 1.0\nbits = [2]"),
            Err(ConfigError::Parse { .. })
        ));
    }
}
