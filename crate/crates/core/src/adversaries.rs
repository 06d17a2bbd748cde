//! Analyst policies.
//!
//! A policy looks at the transcript so far and returns the next spend or
//! stops. Policies may react to answers arbitrarily; deciding whether a spend
//! is admissible is the filter's job, not theirs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::filter::{Decision, FilterState, PrivacyBudget, QuerySpend};
use crate::rng::derive_seed;
use crate::transcript::{Round, Transcript};

/// Policies stop once less than this much squared budget remains.
pub const STOP_REMAINING_SQ: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Spend(f64),
    Stop,
}

/// What a policy gets to see before choosing its next move.
#[derive(Debug, Clone, Copy)]
pub struct PolicyView<'a> {
    pub budget: f64,
    pub rounds: &'a [Round],
    /// Derivable from `rounds`; passed in for convenience.
    pub remaining_sq: f64,
    pub seed: u64,
}

pub trait AdversaryPolicy: Send + Sync {
    fn name(&self) -> &str;

    /// Must be a deterministic function of the view.
    fn next(&self, view: &PolicyView<'_>) -> Action;

    /// Scalar statistic of a finished transcript, compared across curators.
    fn summary(&self, t: &Transcript) -> f64 {
        t.answer_sum()
    }
}

/// The built-in policy suite, addressable by name from configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Policy {
    /// Replays a list decided in advance, then stops.
    Fixed { spends: Vec<f64> },
    /// Opens with `hi/2`; then `hi` after a positive answer and `lo` otherwise.
    SignAdaptive { hi: f64, lo: f64 },
    /// Spends `sqrt(remaining/2)` each round.
    GreedyHalving {},
    /// Alternates admissible spends with ones that must be refused.
    OverspendProber {},
    /// Spends `scale·u·sqrt(remaining)` with `u` uniform from the policy seed,
    /// for a fixed number of rounds. `scale > 1` makes refusals possible.
    RandomFraction { scale: f64, rounds: usize },
}

impl Policy {
    pub fn fixed(spends: Vec<f64>) -> Self {
        Policy::Fixed { spends }
    }

    pub fn sign_adaptive(hi: f64, lo: f64) -> Self {
        assert!(0.0 <= lo && lo <= hi, "need 0 <= lo <= hi");
        Policy::SignAdaptive { hi, lo }
    }

    pub fn greedy_halving() -> Self {
        Policy::GreedyHalving {}
    }

    pub fn overspend_prober() -> Self {
        Policy::OverspendProber {}
    }

    /// `fixed`, `sign-adaptive`, ... as used in configs and reports.
    pub fn label(&self) -> &'static str {
        match self {
            Policy::Fixed { .. } => "fixed",
            Policy::SignAdaptive { .. } => "sign-adaptive",
            Policy::GreedyHalving {} => "greedy-halving",
            Policy::OverspendProber {} => "overspend-prober",
            Policy::RandomFraction { .. } => "random-fraction",
        }
    }

    /// Parameter sanity, checked when a config is loaded.
    pub fn validate(&self) -> Result<(), String> {
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        match self {
            Policy::Fixed { spends } => match spends.iter().find(|&&s| !finite_nonneg(s)) {
                Some(s) => Err(format!("fixed: spend {s} is not finite and nonnegative")),
                None => Ok(()),
            },
            Policy::SignAdaptive { hi, lo } => {
                if finite_nonneg(*lo) && finite_nonneg(*hi) && lo <= hi {
                    Ok(())
                } else {
                    Err(format!(
                        "sign-adaptive: need 0 <= lo <= hi, got lo={lo}, hi={hi}"
                    ))
                }
            }
            Policy::RandomFraction { scale, .. } => {
                if finite_nonneg(*scale) {
                    Ok(())
                } else {
                    Err(format!(
                        "random-fraction: scale {scale} is not finite and nonnegative"
                    ))
                }
            }
            Policy::GreedyHalving {} | Policy::OverspendProber {} => Ok(()),
        }
    }
}

fn last_answer(rounds: &[Round]) -> Option<f64> {
    rounds.iter().rev().find_map(Round::answer)
}

impl AdversaryPolicy for Policy {
    fn name(&self) -> &str {
        self.label()
    }

    fn next(&self, view: &PolicyView<'_>) -> Action {
        let rem = view.remaining_sq;
        match self {
            Policy::Fixed { spends } => match spends.get(view.rounds.len()) {
                Some(&s) => Action::Spend(s),
                None => Action::Stop,
            },
            Policy::SignAdaptive { hi, lo } => {
                if rem < STOP_REMAINING_SQ {
                    return Action::Stop;
                }
                let want = match last_answer(view.rounds) {
                    None => hi / 2.0,
                    Some(a) if a > 0.0 => *hi,
                    Some(_) => *lo,
                };
                Action::Spend(want.min(rem.sqrt()))
            }
            Policy::GreedyHalving {} => {
                if rem < STOP_REMAINING_SQ {
                    Action::Stop
                } else {
                    Action::Spend((rem / 2.0).sqrt())
                }
            }
            Policy::OverspendProber {} => match view.rounds.last() {
                Some(r) if r.decision() == Decision::Accepted => {
                    // strictly more than the remaining budget, even with slack
                    Action::Spend(r.spend.max(1.5 * rem.sqrt()))
                }
                _ => {
                    let step = 0.1 * view.budget;
                    if step <= 0.0 {
                        return Action::Stop;
                    }
                    let tenths = (0.95 * rem.sqrt() / step).floor();
                    if tenths < 1.0 {
                        Action::Stop
                    } else {
                        Action::Spend(tenths / 10.0 * view.budget)
                    }
                }
            },
            Policy::RandomFraction { scale, rounds } => {
                let i = view.rounds.len();
                if i >= *rounds {
                    return Action::Stop;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    view.seed,
                    &["random-fraction"],
                    0,
                    i as u64,
                ));
                let u: f64 = rng.random();
                Action::Spend(scale * u * rem.sqrt())
            }
        }
    }
}

/// Replays the transcript's spends through a fresh filter and returns the
/// first round whose recorded decision differs from the replay, if any.
///
/// An analyst can run exactly this ledger on its own, so every refusal it
/// sees is one it could have predicted.
pub fn unpredicted_decision(t: &Transcript) -> Option<usize> {
    let budget = PrivacyBudget::new(t.budget).ok()?;
    let mut ledger = FilterState::new(budget);
    for (i, r) in t.rounds.iter().enumerate() {
        let predicted = match QuerySpend::new(r.spend) {
            Ok(q) => ledger.spend(q),
            Err(_) => return Some(i),
        };
        if predicted != r.decision() {
            return Some(i);
        }
    }
    None
}
