//! Online canonical Cholesky factor of `Σᵢ = I − mᵢmᵢᵀ`.
//!
//! The normalized spend vector `m` grows by one entry per round. Because the
//! leading `i×i` block of `Σ` only involves `m₁..mᵢ`, the factor of round `i`
//! is the leading block of every later factor, and each round appends exactly
//! one row:
//!
//! ```text
//!   Lᵢ = [ Lᵢ₋₁              0  ]
//!        [ −mᵢ·yᵢ₋₁ᵀ         dᵢ ]     yᵢ₋₁ = Lᵢ₋₁⁻¹ mᵢ₋₁
//!
//!   dᵢ      = sqrt((1 − Qᵢ) / (1 − Qᵢ₋₁))           Qᵢ = ‖mᵢ‖²
//!   yᵢ,last = mᵢ / sqrt((1 − Qᵢ)(1 − Qᵢ₋₁))         (0 once Qᵢ = 1)
//! ```
//!
//! `‖yᵢ₋₁‖² = Qᵢ₋₁ / (1 − Qᵢ₋₁)`, which is what makes the new diagonal entry
//! come out as above. The simulator needs only the last entry of `Lᵢvᵢ`, which
//! is `−mᵢ·(yᵢ₋₁ᵀvᵢ₋₁) + dᵢVᵢ`; [`Mode::Streaming`] keeps the running inner
//! product `s = yᵀv` and does O(1) work per round, [`Mode::Dense`] keeps the
//! whole factor and serves as the reference.
//!
//! Once `Q` reaches 1 the last diagonal entry is zero and that column stays
//! zero forever. Later (necessarily zero) spends see an identity block and get
//! the row `(0, …, 0, 1)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::BUDGET_SLACK;
use crate::numeric::CompensatedSum;

/// `1 − Q` values at or below this are treated as exact exhaustion.
pub const EXHAUSTION_TOL: f64 = 1e-12;

/// Largest `‖m‖²` accepted by [`CholeskyState::extend`]: the filter slack plus
/// a few ulps for the `μ/μ₀` division.
const NORM_SQ_LIMIT: f64 = 1.0 + BUDGET_SLACK + 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CholeskyError {
    #[error("normalized spend vector leaves the unit ball: ‖m‖² would be {norm_sq}")]
    BudgetOverflow { norm_sq: f64 },
    #[error("non-finite normalized spend {0}")]
    NonFinite(f64),
    #[error("state desync: {0}")]
    Desync(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dense,
    Streaming,
}

/// Scalars describing the row appended in one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowStep {
    /// Spend multiplying `yᵢ₋₁` in the off-diagonal part (zero after exhaustion).
    pub coupling: f64,
    pub diagonal: f64,
    pub y_last: f64,
}

/// Full lower-triangular factor, stored row by row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DenseFactor {
    rows: Vec<Vec<f64>>,
    y: Vec<f64>,
    spends: Vec<f64>,
}

impl DenseFactor {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.rows[i][j]
        }
    }

    pub fn spends(&self) -> &[f64] {
        &self.spends
    }

    /// `L⁻¹m` for the spends seen so far.
    pub fn solved_column(&self) -> &[f64] {
        &self.y
    }

    pub fn diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().enumerate().map(|(i, r)| r[i])
    }

    pub fn zero_columns(&self) -> usize {
        (0..self.dim())
            .filter(|&j| self.rows[j..].iter().all(|r| r[j] == 0.0))
            .count()
    }

    /// `L Lᵀ` as a dense square matrix.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = self.rows[i][..=j]
                    .iter()
                    .zip(&self.rows[j][..=j])
                    .map(|(a, b)| a * b)
                    .sum();
                out[i][j] = v;
                out[j][i] = v;
            }
        }
        out
    }

    fn push(&mut self, m: f64, step: RowStep) {
        let mut row: Vec<f64> = self.y.iter().map(|&y| -step.coupling * y).collect();
        row.push(step.diagonal);
        self.rows.push(row);
        self.y.push(step.y_last);
        self.spends.push(m);
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Factor {
    Dense(DenseFactor),
    Streaming { s: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyState {
    factor: Factor,
    norm_sq: CompensatedSum,
    exhausted: bool,
    rounds: usize,
    noised: usize,
    pending: Option<RowStep>,
}

impl CholeskyState {
    pub fn new(mode: Mode) -> Self {
        let factor = match mode {
            Mode::Dense => Factor::Dense(DenseFactor::default()),
            Mode::Streaming => Factor::Streaming { s: 0.0 },
        };
        Self {
            factor,
            norm_sq: CompensatedSum::zero(),
            exhausted: false,
            rounds: 0,
            noised: 0,
            pending: None,
        }
    }

    pub fn dense() -> Self {
        Self::new(Mode::Dense)
    }

    pub fn streaming() -> Self {
        Self::new(Mode::Streaming)
    }

    pub fn mode(&self) -> Mode {
        match self.factor {
            Factor::Dense(_) => Mode::Dense,
            Factor::Streaming { .. } => Mode::Streaming,
        }
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// `‖m‖²` so far, compensated.
    pub fn norm_sq(&self) -> f64 {
        self.norm_sq.value()
    }

    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }

    pub fn dense_factor(&self) -> Option<&DenseFactor> {
        match &self.factor {
            Factor::Dense(f) => Some(f),
            Factor::Streaming { .. } => None,
        }
    }

    /// Running `yᵀv` in streaming mode.
    pub fn streaming_inner_product(&self) -> Option<f64> {
        match self.factor {
            Factor::Streaming { s } => Some(s),
            Factor::Dense(_) => None,
        }
    }

    /// Appends the row for normalized spend `m`.
    pub fn extend(&mut self, m: f64) -> Result<RowStep, CholeskyError> {
        if !m.is_finite() {
            return Err(CholeskyError::NonFinite(m));
        }
        if let Factor::Streaming { .. } = self.factor {
            if self.pending.is_some() {
                return Err(CholeskyError::Desync(format!(
                    "round {} extended twice without drawing its noise",
                    self.rounds
                )));
            }
        }

        let prev_residual = self.norm_sq.residual_from(1.0);
        let mut next = self.norm_sq;
        next.add_square(m);
        if next.value() > NORM_SQ_LIMIT {
            return Err(CholeskyError::BudgetOverflow {
                norm_sq: next.value(),
            });
        }

        let step = if self.exhausted {
            // Only spends inside the comparison slack can get here; they are
            // simulated as zero spends.
            RowStep {
                coupling: 0.0,
                diagonal: 1.0,
                y_last: 0.0,
            }
        } else {
            let residual = next.residual_from(1.0);
            if residual <= EXHAUSTION_TOL {
                self.exhausted = true;
                RowStep {
                    coupling: m,
                    diagonal: 0.0,
                    y_last: 0.0,
                }
            } else {
                RowStep {
                    coupling: m,
                    diagonal: (residual / prev_residual).sqrt(),
                    y_last: m / (residual * prev_residual).sqrt(),
                }
            }
        };

        self.norm_sq = next;
        self.rounds += 1;
        if let Factor::Dense(f) = &mut self.factor {
            f.push(m, step);
        }
        self.pending = Some(step);
        Ok(step)
    }

    /// Last entry of `Lᵢvᵢ` for the most recently extended round.
    ///
    /// `past_seeds` must hold `V₁..Vᵢ₋₁` in dense mode; streaming mode ignores
    /// it and may be given an empty slice.
    pub fn next_noise(
        &mut self,
        fresh_seed: f64,
        past_seeds: &[f64],
    ) -> Result<f64, CholeskyError> {
        if self.noised + 1 != self.rounds {
            return Err(CholeskyError::Desync(format!(
                "noise requested for round {} but factor has {} rows",
                self.noised + 1,
                self.rounds
            )));
        }
        let step = self
            .pending
            .take()
            .ok_or_else(|| CholeskyError::Desync("no pending row".into()))?;
        let u = match &mut self.factor {
            Factor::Dense(f) => {
                if past_seeds.len() != self.noised {
                    return Err(CholeskyError::Desync(format!(
                        "expected {} past seeds, got {}",
                        self.noised,
                        past_seeds.len()
                    )));
                }
                let row = f.rows.last().expect("extended at least once");
                let (off, diag) = row.split_at(row.len() - 1);
                off.iter().zip(past_seeds).map(|(l, v)| l * v).sum::<f64>() + diag[0] * fresh_seed
            }
            Factor::Streaming { s } => {
                let u = -step.coupling * *s + step.diagonal * fresh_seed;
                *s += step.y_last * fresh_seed;
                u
            }
        };
        self.noised += 1;
        Ok(u)
    }

    /// `extend` followed by `next_noise`.
    pub fn step(
        &mut self,
        m: f64,
        fresh_seed: f64,
        past_seeds: &[f64],
    ) -> Result<f64, CholeskyError> {
        self.extend(m)?;
        self.next_noise(fresh_seed, past_seeds)
    }
}

/// Dense canonical factor of `I − mmᵀ` for a whole spend vector.
pub fn canonical_factor(spends: &[f64]) -> Result<DenseFactor, CholeskyError> {
    let mut state = CholeskyState::dense();
    for &m in spends {
        state.extend(m)?;
    }
    match state.factor {
        Factor::Dense(f) => Ok(f),
        Factor::Streaming { .. } => unreachable!(),
    }
}

/// `I − mmᵀ`, formed explicitly.
pub fn target_covariance(spends: &[f64]) -> Vec<Vec<f64>> {
    let n = spends.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| f64::from(u8::from(i == j)) - spends[i] * spends[j])
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook outer-product Cholesky on an explicit PSD matrix; pivots at or
    /// below `tol` produce an all-zero column.
    fn oracle_cholesky(a: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut l = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut pivot = a[j][j];
            for k in 0..j {
                pivot -= l[j][k] * l[j][k];
            }
            if pivot <= tol {
                continue;
            }
            let d = pivot.sqrt();
            l[j][j] = d;
            for i in j + 1..n {
                let mut v = a[i][j];
                for k in 0..j {
                    v -= l[i][k] * l[j][k];
                }
                l[i][j] = v / d;
            }
        }
        l
    }

    fn max_dev(f: &DenseFactor, oracle: &[Vec<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in oracle.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                worst = worst.max((f.get(i, j) - v).abs());
            }
        }
        worst
    }

    #[test]
    fn single_half_spend() {
        let f = canonical_factor(&[0.5]).unwrap();
        assert!((f.get(0, 0) - 0.75f64.sqrt()).abs() < 1e-15);
        let oracle = oracle_cholesky(&target_covariance(&[0.5]), 1e-12);
        assert!(max_dev(&f, &oracle) < 1e-15);
    }

    #[test]
    fn zero_spend_gives_identity() {
        let f = canonical_factor(&[0.0]).unwrap();
        assert_eq!(f.get(0, 0), 1.0);
    }

    #[test]
    fn two_equal_spends() {
        let f = canonical_factor(&[0.6, 0.6]).unwrap();
        let oracle = oracle_cholesky(&target_covariance(&[0.6, 0.6]), 1e-12);
        // oracle gives (-0.45, sqrt(0.28/0.64))
        assert!((oracle[1][0] + 0.45).abs() < 1e-15);
        assert!((oracle[1][1] - (0.28f64 / 0.64).sqrt()).abs() < 1e-15);
        assert!(max_dev(&f, &oracle) < 1e-15);
        let g = f.gram();
        assert!((g[0][0] - 0.64).abs() < 1e-15);
        assert!((g[1][0] + 0.36).abs() < 1e-15);
        assert!((g[1][1] - 0.64).abs() < 1e-15);
    }

    #[test]
    fn exact_exhaustion_leaves_zero_final_column() {
        let f = canonical_factor(&[0.6, 0.8]).unwrap();
        let oracle = oracle_cholesky(&target_covariance(&[0.6, 0.8]), 1e-12);
        assert!(max_dev(&f, &oracle) < 1e-15);
        assert!((f.get(0, 0) - 0.8).abs() < 1e-15);
        assert!((f.get(1, 0) + 0.6).abs() < 1e-15);
        assert_eq!(f.get(1, 1), 0.0);
        assert_eq!(f.zero_columns(), 1);
    }

    #[test]
    fn zero_spends_after_exhaustion_append_identity_rows() {
        let f = canonical_factor(&[0.6, 0.8, 0.0, 0.0]).unwrap();
        assert_eq!(f.row(2), &[0.0, 0.0, 1.0]);
        assert_eq!(f.row(3), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(f.zero_columns(), 1);
    }

    #[test]
    fn overflow_is_rejected() {
        let mut s = CholeskyState::dense();
        s.extend(0.9).unwrap();
        assert!(matches!(
            s.extend(0.9),
            Err(CholeskyError::BudgetOverflow { .. })
        ));
        assert!(matches!(
            s.extend(f64::NAN),
            Err(CholeskyError::NonFinite(_))
        ));
    }

    #[test]
    fn noise_examples() {
        let mut s = CholeskyState::streaming();
        assert_eq!(s.step(1.0, 0.7, &[]).unwrap(), 0.0);

        let mut s = CholeskyState::streaming();
        assert_eq!(s.step(0.0, -1.3, &[]).unwrap(), -1.3);

        // row (-0.45, 0.66144) against v = (1, 1)
        let want = -0.45 + (0.28f64 / 0.64).sqrt();
        assert!((want - 0.21144).abs() < 1e-5);
        for mode in [Mode::Dense, Mode::Streaming] {
            let mut s = CholeskyState::new(mode);
            s.step(0.6, 1.0, &[]).unwrap();
            let u = s.step(0.6, 1.0, &[1.0]).unwrap();
            assert!((u - want).abs() < 1e-15, "{mode:?}: {u}");
        }
    }

    #[test]
    fn desync_is_reported() {
        let mut s = CholeskyState::streaming();
        assert!(matches!(
            s.next_noise(0.0, &[]),
            Err(CholeskyError::Desync(_))
        ));
        s.extend(0.1).unwrap();
        assert!(matches!(s.extend(0.1), Err(CholeskyError::Desync(_))));

        let mut d = CholeskyState::dense();
        d.extend(0.1).unwrap();
        d.next_noise(0.3, &[]).unwrap();
        d.extend(0.1).unwrap();
        assert!(matches!(
            d.next_noise(0.3, &[]),
            Err(CholeskyError::Desync(_))
        ));
    }

    fn spend_vector() -> impl Strategy<Value = Vec<f64>> {
        (
            proptest::collection::vec(-1.0f64..1.0, 1..24),
            0.0f64..1.0,
            any::<bool>(),
            0usize..4,
        )
            .prop_map(|(raw, radius, exhaust, zeros)| {
                let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return raw;
                }
                let scale = if exhaust { 1.0 } else { radius } / norm;
                let mut m: Vec<f64> = raw.iter().map(|x| x * scale).collect();
                if exhaust {
                    m.extend(std::iter::repeat(0.0).take(zeros));
                }
                m
            })
    }

    proptest! {
        #[test]
        fn agrees_with_textbook_factor(m in spend_vector()) {
            let f = canonical_factor(&m).unwrap();
            let oracle = oracle_cholesky(&target_covariance(&m), 1e-10);
            prop_assert!(max_dev(&f, &oracle) < 1e-7);
            let sigma = target_covariance(&m);
            let g = f.gram();
            for i in 0..m.len() {
                for j in 0..m.len() {
                    prop_assert!((g[i][j] - sigma[i][j]).abs() <= 1e-10);
                }
            }
            prop_assert!(f.diagonal().all(|d| d >= 0.0));
        }

        #[test]
        fn extending_never_rewrites_history(m in spend_vector(), cut in 0usize..24) {
            let cut = cut.min(m.len());
            let short = canonical_factor(&m[..cut]).unwrap();
            let long = canonical_factor(&m).unwrap();
            for i in 0..cut {
                prop_assert_eq!(short.row(i), long.row(i));
            }
        }

        #[test]
        fn streaming_matches_dense(
            m in spend_vector(),
            seeds in proptest::collection::vec(-4.0f64..4.0, 28),
        ) {
            let mut dense = CholeskyState::dense();
            let mut stream = CholeskyState::streaming();
            for (i, &mi) in m.iter().enumerate() {
                let a = dense.step(mi, seeds[i], &seeds[..i]).unwrap();
                let b = stream.step(mi, seeds[i], &[]).unwrap();
                prop_assert!((a - b).abs() <= 1e-9, "round {i}: {a} vs {b}");
            }
        }
    }
}
