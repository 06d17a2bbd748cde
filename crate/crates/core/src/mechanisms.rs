//! Mechanisms in postprocessing form.
//!
//! A `mu`-GDP mechanism is represented by a randomized map `F` applied to a
//! shifted Gaussian: on bit `b` it outputs `F(b·mu + Z)`. Serving such a
//! mechanism through a session only needs the session's Gaussian answer for
//! spend `mu`, which is how arbitrary mechanisms reduce to Gaussian queries.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::curator::{Response, SecretBit, Session, SessionError};
use crate::filter::QuerySpend;
use crate::rng::GaussianStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Real(f64),
    Label(i64),
}

impl Outcome {
    /// Numeric view used by the two-sample tests.
    pub fn value(self) -> f64 {
        match self {
            Outcome::Real(x) => x,
            Outcome::Label(k) => k as f64,
        }
    }
}

/// A (possibly randomized) map from the Gaussian answer to an outcome.
///
/// Implementations must be pure functions of `x` and the draws they take
/// from `rng`.
pub trait Postprocess: Send + Sync {
    fn apply(&self, x: f64, rng: &mut dyn RngCore) -> Outcome;

    /// Whether every outcome is `Label(0)` or `Label(1)`.
    fn is_binary(&self) -> bool {
        false
    }
}

/// Deterministic maps addressable by name from configs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NamedMap {
    Identity,
    /// `1{x > tau}`
    Threshold {
        tau: f64,
    },
    /// `1{x > 0}`
    Sign,
    RoundToInteger,
}

impl NamedMap {
    pub fn label(&self) -> &'static str {
        match self {
            NamedMap::Identity => "identity",
            NamedMap::Threshold { .. } => "threshold",
            NamedMap::Sign => "sign",
            NamedMap::RoundToInteger => "round-to-integer",
        }
    }
}

impl Postprocess for NamedMap {
    fn apply(&self, x: f64, _rng: &mut dyn RngCore) -> Outcome {
        match *self {
            NamedMap::Identity => Outcome::Real(x),
            NamedMap::Threshold { tau } => Outcome::Label(i64::from(x > tau)),
            NamedMap::Sign => Outcome::Label(i64::from(x > 0.0)),
            NamedMap::RoundToInteger => Outcome::Label(x.round() as i64),
        }
    }

    fn is_binary(&self) -> bool {
        matches!(self, NamedMap::Threshold { .. } | NamedMap::Sign)
    }
}

/// Randomized response on the sign: reports `1{x > 0}`, flipped with
/// probability `flip`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisySign {
    pub flip: f64,
}

impl Postprocess for NoisySign {
    fn apply(&self, x: f64, rng: &mut dyn RngCore) -> Outcome {
        let bit = x > 0.0;
        let flipped = rng.random::<f64>() < self.flip;
        Outcome::Label(i64::from(bit ^ flipped))
    }

    fn is_binary(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessedMechanism<P> {
    pub mu: QuerySpend,
    pub post: P,
    pub description: String,
}

impl<P: Postprocess> PostprocessedMechanism<P> {
    pub fn new(mu: QuerySpend, post: P, description: impl Into<String>) -> Self {
        Self {
            mu,
            post,
            description: description.into(),
        }
    }

    /// `post(b·mu + Z)` with `Z` drawn from `noise`; the map's own randomness
    /// comes from `post_rng`.
    pub fn sample(
        &self,
        bit: SecretBit,
        noise: &mut GaussianStream,
        post_rng: &mut dyn RngCore,
    ) -> Outcome {
        let x = bit.as_f64() * self.mu.mu() + noise.standard_normal();
        self.post.apply(x, post_rng)
    }

    /// Asks `session` for spend `mu` and postprocesses the answer. `None` on
    /// refusal.
    pub fn serve(
        &self,
        session: &mut Session,
        post_rng: &mut dyn RngCore,
    ) -> Result<Option<Outcome>, SessionError> {
        Ok(match session.ask(self.mu)? {
            Response::Accepted(h) => Some(self.post.apply(h, post_rng)),
            Response::Refused => None,
        })
    }
}

/// Mechanism entry in an experiment config: a named map plus its spend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MechanismSpec {
    Identity { mu: f64 },
    Threshold { mu: f64, tau: f64 },
    Sign { mu: f64 },
    RoundToInteger { mu: f64 },
}

impl MechanismSpec {
    pub fn mu(&self) -> f64 {
        match *self {
            MechanismSpec::Identity { mu }
            | MechanismSpec::Threshold { mu, .. }
            | MechanismSpec::Sign { mu }
            | MechanismSpec::RoundToInteger { mu } => mu,
        }
    }

    pub fn map(&self) -> NamedMap {
        match *self {
            MechanismSpec::Identity { .. } => NamedMap::Identity,
            MechanismSpec::Threshold { tau, .. } => NamedMap::Threshold { tau },
            MechanismSpec::Sign { .. } => NamedMap::Sign,
            MechanismSpec::RoundToInteger { .. } => NamedMap::RoundToInteger,
        }
    }

    pub fn build(&self) -> Result<PostprocessedMechanism<NamedMap>, crate::filter::FilterError> {
        let map = self.map();
        Ok(PostprocessedMechanism::new(
            QuerySpend::new(self.mu())?,
            map,
            map.label(),
        ))
    }
}
