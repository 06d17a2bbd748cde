//! Randomized check of the online factor against its target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cholesky::{
    canonical_factor, target_covariance, CholeskyError, CholeskyState, EXHAUSTION_TOL,
};

pub const DEFAULT_CASES: usize = 1000;
pub const GRAM_TOLERANCE: f64 = 1e-10;
pub const STREAM_TOLERANCE: f64 = 1e-9;
pub const MAX_CASE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CholeskyReport {
    pub cases: usize,
    pub exhausted_cases: usize,
    pub max_gram_deviation: f64,
    pub max_stream_deviation: f64,
    pub canonicality_failures: usize,
    pub pass: bool,
}

/// Admissible normalized spend vectors: the empty vector, `(0.6, 0.8)`, then
/// random ones of length 1..=64 with about a fifth of the entries zero. Every
/// tenth case reaches `‖m‖ = 1` exactly and continues with zeros.
pub fn sample_cases(seed: u64, cases: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(), vec![0.6, 0.8]];
    let mut i = 0usize;
    while out.len() < cases.max(2) {
        i += 1;
        let len = rng.random_range(1..=MAX_CASE_LEN);
        let mut m: Vec<f64> = (0..len)
            .map(|_| {
                if rng.random::<f64>() < 0.2 {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        if m.iter().all(|&x| x == 0.0) {
            m[0] = 1.0;
        }
        let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        if i % 10 == 0 {
            // exhaust at a random index, zeros afterwards
            let cut = rng.random_range(0..len);
            let head = m[..=cut].iter().map(|x| x * x).sum::<f64>().sqrt();
            if head == 0.0 {
                m[cut] = 1.0;
            } else {
                for x in &mut m[..=cut] {
                    *x /= head;
                }
            }
            for x in &mut m[cut + 1..] {
                *x = 0.0;
            }
        } else {
            let scale = rng.random::<f64>().sqrt() / norm;
            for x in &mut m {
                *x *= scale;
            }
        }
        out.push(m);
    }
    out.truncate(cases);
    out
}

fn gram_deviation(spends: &[f64]) -> Result<(f64, bool), CholeskyError> {
    let f = canonical_factor(spends)?;
    let target = target_covariance(spends);
    let gram = f.gram();
    let n = spends.len();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((gram[i][j] - target[i][j]).abs());
        }
    }
    let mut canonical = true;
    let mut q = 0.0;
    for i in 0..n {
        q += spends[i] * spends[i];
        let d = f.get(i, i);
        let positive_expected = 1.0 - q > EXHAUSTION_TOL;
        canonical &= d >= 0.0 && d.is_finite() && (!positive_expected || d > 0.0);
        canonical &= f.row(i).len() == i + 1;
    }
    // exhaustion leaves exactly one zero column; nothing else does
    canonical &= f.zero_columns() == usize::from(is_exhausted(spends));
    Ok((dev, canonical))
}

fn stream_deviation(spends: &[f64], rng: &mut ChaCha8Rng) -> Result<f64, CholeskyError> {
    let mut dense = CholeskyState::dense();
    let mut stream = CholeskyState::streaming();
    let mut seeds = Vec::with_capacity(spends.len());
    let mut dev = 0.0f64;
    for &m in spends {
        let v: f64 = rng.sample(StandardNormal);
        let a = dense.step(m, v, &seeds)?;
        let b = stream.step(m, v, &[])?;
        seeds.push(v);
        dev = dev.max((a - b).abs());
    }
    Ok(dev)
}

fn is_exhausted(spends: &[f64]) -> bool {
    1.0 - spends.iter().map(|x| x * x).sum::<f64>() <= EXHAUSTION_TOL
}

pub fn verify_cholesky(seed: u64, cases: usize) -> Result<CholeskyReport, CholeskyError> {
    let all = sample_cases(seed, cases);
    let mut noise = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut report = CholeskyReport {
        cases: all.len(),
        exhausted_cases: 0,
        max_gram_deviation: 0.0,
        max_stream_deviation: 0.0,
        canonicality_failures: 0,
        pass: false,
    };
    for m in &all {
        let (g, canonical) = gram_deviation(m)?;
        report.max_gram_deviation = report.max_gram_deviation.max(g);
        report.max_stream_deviation = report
            .max_stream_deviation
            .max(stream_deviation(m, &mut noise)?);
        report.canonicality_failures += usize::from(!canonical);
        report.exhausted_cases += usize::from(is_exhausted(m));
    }
    report.pass = report.max_gram_deviation <= GRAM_TOLERANCE
        && report.max_stream_deviation <= STREAM_TOLERANCE
        && report.canonicality_failures == 0;
    Ok(report)
}
