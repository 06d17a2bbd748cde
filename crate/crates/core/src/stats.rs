//! Estimators and hypothesis tests for the equivalence experiments.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Default per-test significance level.
pub const DEFAULT_ALPHA: f64 = 1e-3;

/// Smallest sample accepted by [`normality_check`].
pub const NORMALITY_MIN_SAMPLE: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    InsufficientSample { need: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite sample value at index {0}")]
    NonFinite(usize),
}

/// `n_trials × n_cols` matrix of finite reals, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    n_cols: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn from_rows(n_cols: usize, data: Vec<f64>) -> Result<Self, StatsError> {
        if n_cols == 0 || data.len() % n_cols != 0 {
            return Err(StatsError::ShapeMismatch(format!(
                "{} values do not form rows of {n_cols}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(StatsError::NonFinite(i));
        }
        Ok(Self { n_cols, data })
    }

    pub fn n_trials(&self) -> usize {
        self.data.len() / self.n_cols
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(j)
            .step_by(self.n_cols)
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    /// Unbiased (`n − 1`) sample covariance.
    pub covariance: Vec<Vec<f64>>,
}

pub fn empirical_moments(samples: &SampleMatrix) -> Result<Moments, StatsError> {
    let n = samples.n_trials();
    if n < 2 {
        return Err(StatsError::InsufficientSample { need: 2, got: n });
    }
    let k = samples.n_cols();
    let mut mean = vec![0.0; k];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(samples.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = vec![vec![0.0; k]; k];
    for i in 0..n {
        let row = samples.row(i);
        for a in 0..k {
            let da = row[a] - mean[a];
            for b in 0..=a {
                cov[a][b] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..k {
        for b in 0..=a {
            let v = cov[a][b] / (n - 1) as f64;
            cov[a][b] = v;
            cov[b][a] = v;
        }
    }
    Ok(Moments {
        mean,
        covariance: cov,
    })
}

/// Max absolute entrywise difference.
pub fn covariance_deviation(cov: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64, StatsError> {
    if cov.len() != target.len() || cov.iter().zip(target).any(|(a, b)| a.len() != b.len()) {
        return Err(StatsError::ShapeMismatch(
            "covariance and target differ in shape".into(),
        ));
    }
    Ok(cov
        .iter()
        .zip(target)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
    pub threshold: f64,
}

impl TestReport {
    /// Passes iff `p_value > alpha`.
    pub fn from_p_value(statistic: f64, p_value: f64, alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self {
            statistic,
            p_value,
            pass: p_value > alpha,
            threshold: alpha,
        }
    }
}

/// Survival function of the Kolmogorov distribution, `P[K > λ]`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi theta form converges fast for small λ
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let c = -pi2 / (8.0 * lambda * lambda);
        let s: f64 = (1..=6)
            .map(|k| {
                let odd = (2 * k - 1) as f64;
                (odd * odd * c).exp()
            })
            .sum();
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * s;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut total = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            total += if k % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        (2.0 * total).clamp(0.0, 1.0)
    }
}

/// Asymptotic p-value for a KS statistic `d` with effective size `ne`.
fn ks_p_value(d: f64, ne: f64) -> f64 {
    let root = ne.sqrt();
    kolmogorov_survival((root + 0.12 + 0.11 / root) * d)
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Exact two-sample statistic `sup |F̂x − F̂y|`; ties are handled by stepping
/// both empirical CDFs past a shared value before comparing.
pub fn ks_statistic(x: &[f64], y: &[f64]) -> f64 {
    let (x, y) = (sorted(x), sorted(y));
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let t = if x[i] <= y[j] { x[i] } else { y[j] };
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(x: &[f64], y: &[f64], alpha: f64) -> Result<TestReport, StatsError> {
    for s in [x, y] {
        if s.is_empty() {
            return Err(StatsError::InsufficientSample { need: 1, got: 0 });
        }
        if let Some(i) = s.iter().position(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite(i));
        }
    }
    let d = ks_statistic(x, y);
    let (n, m) = (x.len() as f64, y.len() as f64);
    Ok(TestReport::from_p_value(
        d,
        ks_p_value(d, n * m / (n + m)),
        alpha,
    ))
}

/// One-sample KS against an arbitrary continuous CDF.
pub fn ks_one_sample(
    sample: &[f64],
    cdf: impl Fn(f64) -> f64,
    alpha: f64,
) -> Result<TestReport, StatsError> {
    if sample.is_empty() {
        return Err(StatsError::InsufficientSample { need: 1, got: 0 });
    }
    if let Some(i) = sample.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    let xs = sorted(sample);
    let n = xs.len() as f64;
    let d = xs.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i + 1) as f64 / n - f).max(f - i as f64 / n)
    });
    Ok(TestReport::from_p_value(d, ks_p_value(d, n), alpha))
}

/// One-sample KS against the standard normal; needs at least 10⁴ values.
pub fn normality_check(sample: &[f64], alpha: f64) -> Result<TestReport, StatsError> {
    if sample.len() < NORMALITY_MIN_SAMPLE {
        return Err(StatsError::InsufficientSample {
            need: NORMALITY_MIN_SAMPLE,
            got: sample.len(),
        });
    }
    let normal = Normal::standard();
    ks_one_sample(sample, |x| normal.cdf(x), alpha)
}

/// Pooled two-proportion z-test, two-sided. `statistic` is `|z|`.
pub fn two_proportion_z(
    k1: u64,
    n1: u64,
    k2: u64,
    n2: u64,
    alpha: f64,
) -> Result<TestReport, StatsError> {
    if n1 == 0 || n2 == 0 {
        return Err(StatsError::InsufficientSample { need: 1, got: 0 });
    }
    if k1 > n1 || k2 > n2 {
        return Err(StatsError::ShapeMismatch(
            "more successes than trials".into(),
        ));
    }
    let (p1, p2) = (k1 as f64 / n1 as f64, k2 as f64 / n2 as f64);
    let pooled = (k1 + k2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se == 0.0 {
        // both samples constant and equal
        return Ok(TestReport::from_p_value(0.0, 1.0, alpha));
    }
    let z = ((p1 - p2) / se).abs();
    let p = 2.0 * Normal::standard().sf(z);
    Ok(TestReport::from_p_value(z, p, alpha))
}

/// Sample mean and unbiased variance of one column (`None` variance for
/// fewer than two values).
pub fn mean_and_variance(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (Some(mean), None);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var))
}

/// Pearson correlation of two equally long columns.
pub fn correlation(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::ShapeMismatch(format!(
            "{} vs {} values",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(StatsError::InsufficientSample {
            need: 2,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    Ok(sxy / (sxx * syy).sqrt())
}
