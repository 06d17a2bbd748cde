//! Sum-of-squares budget filter.
//!
//! A query with spend `mu` is admitted iff the squared spends already admitted
//! plus `mu²` stay within `mu0²`. The decision depends only on the sequence of
//! past spends, so an analyst can always predict it, and a refusal never closes
//! the filter: a later, smaller query may still fit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::CompensatedSum;

/// Relative slack applied to the budget comparison (2⁻⁴⁰).
pub const BUDGET_SLACK: f64 = 1.0 / (1u64 << 40) as f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("privacy budget must be finite and nonnegative, got {0}")]
    InvalidBudget(f64),
    #[error("query spend must be finite and nonnegative, got {0}")]
    MalformedSpend(f64),
}

/// Total GDP parameter `mu0` of an interaction.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PrivacyBudget(f64);

impl PrivacyBudget {
    pub fn new(mu0: f64) -> Result<Self, FilterError> {
        if mu0.is_finite() && mu0 >= 0.0 {
            Ok(Self(mu0))
        } else {
            Err(FilterError::InvalidBudget(mu0))
        }
    }

    pub fn mu0(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PrivacyBudget {
    type Error = FilterError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<PrivacyBudget> for f64 {
    fn from(b: PrivacyBudget) -> f64 {
        b.0
    }
}

/// Per-query GDP parameter `mu`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuerySpend(f64);

impl QuerySpend {
    pub const ZERO: QuerySpend = QuerySpend(0.0);

    pub fn new(mu: f64) -> Result<Self, FilterError> {
        if mu.is_finite() && mu >= 0.0 {
            Ok(Self(mu))
        } else {
            Err(FilterError::MalformedSpend(mu))
        }
    }

    pub fn mu(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuerySpend {
    type Error = FilterError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<QuerySpend> for f64 {
    fn from(q: QuerySpend) -> f64 {
        q.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accepted,
    Refused,
}

/// Outcome of [`FilterState::try_spend`]: the successor state, or a refusal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpendOutcome {
    Accepted(FilterState),
    Refused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    budget_sq: f64,
    spent: CompensatedSum,
}

impl FilterState {
    pub fn new(budget: PrivacyBudget) -> Self {
        Self {
            budget_sq: budget.mu0() * budget.mu0(),
            spent: CompensatedSum::zero(),
        }
    }

    pub fn budget_sq(&self) -> f64 {
        self.budget_sq
    }

    /// Compensated sum of the squares of every accepted spend.
    pub fn spent_sq(&self) -> f64 {
        self.spent.value()
    }

    /// Rounding carry of the running sum; `spent_sq` already includes it.
    pub fn compensation(&self) -> f64 {
        self.spent.parts().1
    }

    pub fn remaining_sq(&self) -> f64 {
        self.spent.residual_from(self.budget_sq).max(0.0)
    }

    fn limit(&self) -> f64 {
        self.budget_sq * (1.0 + BUDGET_SLACK)
    }

    pub fn try_spend(&self, q: QuerySpend) -> SpendOutcome {
        let mut next = self.spent;
        next.add_square(q.mu());
        // a positive spend whose square underflows must not fit an empty budget
        let underflow = q.mu() > 0.0 && self.limit() == 0.0;
        if !underflow && next.value() <= self.limit() {
            SpendOutcome::Accepted(FilterState {
                budget_sq: self.budget_sq,
                spent: next,
            })
        } else {
            SpendOutcome::Refused
        }
    }

    /// In-place form of [`try_spend`](Self::try_spend).
    pub fn spend(&mut self, q: QuerySpend) -> Decision {
        match self.try_spend(q) {
            SpendOutcome::Accepted(next) => {
                *self = next;
                Decision::Accepted
            }
            SpendOutcome::Refused => Decision::Refused,
        }
    }

    /// Would `q` be admitted right now?
    pub fn admits(&self, q: QuerySpend) -> bool {
        matches!(self.try_spend(q), SpendOutcome::Accepted(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn filter(mu0: f64) -> FilterState {
        FilterState::new(PrivacyBudget::new(mu0).unwrap())
    }

    fn q(mu: f64) -> QuerySpend {
        QuerySpend::new(mu).unwrap()
    }

    #[test]
    fn new_squares_the_budget() {
        for (mu0, sq) in [(1.0, 1.0), (0.0, 0.0), (2.0, 4.0)] {
            let f = filter(mu0);
            assert_eq!(f.budget_sq(), sq);
            assert_eq!(f.spent_sq(), 0.0);
        }
    }

    #[test]
    fn rejects_bad_budgets_and_spends() {
        for bad in [-1.0, f64::NAN, f64::INFINITY] {
            assert!(PrivacyBudget::new(bad).is_err());
            assert!(matches!(
                QuerySpend::new(bad),
                Err(FilterError::MalformedSpend(_))
            ));
        }
    }

    #[test]
    fn tight_pair_is_accepted_then_overflow_refused() {
        let mut f = filter(1.0);
        assert_eq!(f.spend(q(0.6)), Decision::Accepted);
        assert_eq!(f.spend(q(0.8)), Decision::Accepted);
        let before = f;
        assert_eq!(f.spend(q(0.1)), Decision::Refused);
        assert_eq!(f, before);
        // zero spends stay legal after exhaustion
        assert_eq!(f.spend(q(0.0)), Decision::Accepted);
        assert_eq!(f.spent_sq(), before.spent_sq());
    }

    #[test]
    fn remaining_sq_examples() {
        let mut f = filter(2.0);
        f.spend(q(1.2));
        f.spend(q(1.6));
        assert!(f.remaining_sq() < 1e-15);

        assert_eq!(filter(1.0).remaining_sq(), 1.0);

        let mut f = filter(1.0);
        f.spend(q(0.6));
        assert!((f.remaining_sq() - 0.64).abs() < 1e-15);
    }

    #[test]
    fn zero_budget_refuses_every_positive_spend() {
        let mut f = filter(0.0);
        assert_eq!(f.spend(q(1e-300)), Decision::Refused);
        assert_eq!(f.spend(q(0.0)), Decision::Accepted);
    }

    #[test]
    fn refusal_is_not_terminal() {
        let mut f = filter(1.0);
        f.spend(q(0.9));
        assert_eq!(f.spend(q(0.9)), Decision::Refused);
        assert_eq!(f.spend(q(0.4)), Decision::Accepted);
    }

    /// Exact oracle: spends `k·2⁻²⁶` with `k < 2²⁶`, so every square is an
    /// integer multiple of 2⁻⁵² and the running total fits in a `u128`.
    fn dyadic(k: u64) -> f64 {
        k as f64 / (1u64 << 26) as f64
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100_000))]

        #[test]
        fn matches_integer_oracle_outside_margin_band(
            budget_k in 1u64..(1 << 26),
            ks in proptest::collection::vec(0u64..(1 << 26), 1..12),
        ) {
            let mu0 = dyadic(budget_k);
            let mut f = filter(mu0);
            let budget_units = (budget_k as u128) * (budget_k as u128);
            let mut spent_units: u128 = 0;
            // 2⁻³⁰·budget_sq expressed in units of 2⁻⁵²
            let band = budget_units as f64 / (1u64 << 30) as f64;
            for &k in &ks {
                let sq = (k as u128) * (k as u128);
                let exact_accept = spent_units + sq <= budget_units;
                let margin = (budget_units as f64) - (spent_units as f64) - (sq as f64);
                let got = f.spend(q(dyadic(k)));
                if margin.abs() > band {
                    prop_assert_eq!(got == Decision::Accepted, exact_accept);
                }
                if got == Decision::Accepted {
                    spent_units += sq;
                }
                // prefix soundness on the exact total
                prop_assert!((spent_units as f64) <= budget_units as f64 * (1.0 + BUDGET_SLACK));
                prop_assert!(f.spent_sq() <= f.budget_sq() * (1.0 + BUDGET_SLACK));
            }
        }
    }

    proptest! {
        #[test]
        fn spent_is_monotone_and_sound(
            mu0 in 0.0f64..4.0,
            spends in proptest::collection::vec(0.0f64..2.0, 0..40),
        ) {
            let mut f = filter(mu0);
            let mut last = 0.0;
            for s in spends {
                f.spend(q(s));
                prop_assert!(f.spent_sq() >= last);
                prop_assert!(f.spent_sq() <= f.budget_sq() * (1.0 + BUDGET_SLACK));
                last = f.spent_sq();
            }
        }

        #[test]
        fn smaller_admissible_spend_after_refusal_is_accepted(
            first in 0.0f64..1.0,
            big in 1.0f64..3.0,
            frac in 0.0f64..0.999,
        ) {
            let mut f = filter(1.0);
            f.spend(q(first));
            prop_assume!(f.spend(q(big)) == Decision::Refused);
            let smaller = frac * f.remaining_sq().sqrt();
            prop_assert_eq!(f.spend(q(smaller)), Decision::Accepted);
        }

        #[test]
        fn full_admissibility_is_order_invariant(
            spends in proptest::collection::vec(0.0f64..0.5, 1..8),
            rotate in 0usize..8,
        ) {
            // Away from the slack band the verdict cannot depend on order.
            let exact: f64 = spends.iter().map(|s| s * s).sum();
            prop_assume!((exact - 1.0).abs() > 1e-9);
            let all_in = |xs: &[f64]| {
                let mut f = filter(1.0);
                xs.iter().all(|&s| f.spend(q(s)) == Decision::Accepted)
            };
            let mut rotated = spends.clone();
            rotated.rotate_left(rotate % spends.len());
            let mut reversed = spends.clone();
            reversed.reverse();
            prop_assert_eq!(all_in(&spends), all_in(&rotated));
            prop_assert_eq!(all_in(&spends), all_in(&reversed));
        }
    }
}
