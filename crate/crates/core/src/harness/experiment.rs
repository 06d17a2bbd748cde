//! Matched direct/simulated trial batches and their comparison.
//!
//! For each `(policy, bit)` the runner plays `n_trials` interactions against
//! each curator. Trial `t` uses
//!
//! * session seed `derive_seed(master, [kind, policy_id], bit, t)` with
//!   `kind` ∈ {`direct`, `simulated`},
//! * policy seed `derive_seed(master, ["policy", policy_id], bit, t)`,
//!   shared by both arms,
//!
//! so the two batches draw from disjoint streams and results do not depend on
//! how trials are scheduled across threads. Mechanisms use the same scheme
//! with `mechanism_id` and a `post` stream for the map's own randomness.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adversaries::{unpredicted_decision, AdversaryPolicy, Policy};
use crate::curator::{run_interaction, SecretBit, Session, SessionError, SessionKind};
use crate::filter::{FilterError, PrivacyBudget};
use crate::harness::config::{ConfigError, ExperimentConfig};
use crate::mechanisms::{Outcome, Postprocess};
use crate::rng::derive_seed;
use crate::stats::{
    covariance_deviation, empirical_moments, ks_two_sample, mean_and_variance, two_proportion_z,
    SampleMatrix, TestReport,
};
use crate::transcript::Transcript;

/// Per-arm sample size below which a test is reported but not evaluated.
pub const MIN_TEST_SAMPLE: usize = 50;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Session {
        context: String,
        source: SessionError,
    },
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Records(#[from] crate::transcript::RecordError),
    #[error("cannot serialize report: {0}")]
    Serialize(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    InsufficientSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub status: CheckStatus,
    pub n_direct: usize,
    pub n_simulated: usize,
    pub report: Option<TestReport>,
}

impl Check {
    fn from_report(n_direct: usize, n_simulated: usize, report: TestReport) -> Self {
        Self {
            status: if report.pass {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            n_direct,
            n_simulated,
            report: Some(report),
        }
    }

    fn insufficient(n_direct: usize, n_simulated: usize) -> Self {
        Self {
            status: CheckStatus::InsufficientSample,
            n_direct,
            n_simulated,
            report: None,
        }
    }

    fn ks(x: &[f64], y: &[f64], alpha: f64) -> Self {
        if x.len() < MIN_TEST_SAMPLE || y.len() < MIN_TEST_SAMPLE {
            return Self::insufficient(x.len(), y.len());
        }
        let report = ks_two_sample(x, y, alpha).expect("nonempty finite samples");
        Self::from_report(x.len(), y.len(), report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub count: usize,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
}

impl ArmSummary {
    fn of(xs: &[f64]) -> Self {
        let (mean, variance) = mean_and_variance(xs);
        Self {
            count: xs.len(),
            mean,
            variance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    /// 1-based.
    pub round: usize,
    pub direct: ArmSummary,
    pub simulated: ArmSummary,
    pub ks: Check,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefusalSummary {
    pub identical: bool,
    pub direct_checksum: String,
    pub simulated_checksum: String,
    pub distinct_patterns: usize,
    /// Transcripts whose decisions a replayed ledger failed to predict.
    pub unpredicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceResult {
    pub rounds: usize,
    pub direct_deviation: f64,
    pub simulated_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: String,
    pub params: Policy,
    pub bit: SecretBit,
    pub rounds: Vec<RoundResult>,
    pub summary_statistic: Check,
    pub refusals: RefusalSummary,
    /// Present when every simulated transcript answered the same rounds.
    pub covariance: Option<CovarianceResult>,
    pub truncated: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismResult {
    pub mechanism: String,
    pub bit: SecretBit,
    pub refused_direct: usize,
    pub refused_simulated: usize,
    /// Frequency of `Label(1)`, for binary maps.
    pub frequency_direct: Option<f64>,
    pub frequency_simulated: Option<f64>,
    pub test: Check,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub master_seed: u64,
    pub policies: Vec<PolicyResult>,
    pub mechanisms: Vec<MechanismResult>,
    pub tests_evaluated: usize,
    pub tests_failed: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub wall_time_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub results: RunResults,
    /// Second run with an independent seed, made only when the first fails.
    pub retry: Option<RunResults>,
    pub pass: bool,
    /// SHA-256 over `config`, `results`, `retry` and `pass`.
    pub checksum: String,
    pub metadata: Metadata,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One row per `(policy, bit, round)`, for spreadsheets.
    pub fn write_table<W: std::io::Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "policy",
            "bit",
            "round",
            "n_direct",
            "mean_direct",
            "var_direct",
            "n_simulated",
            "mean_simulated",
            "var_simulated",
            "ks_statistic",
            "ks_p_value",
            "status",
        ])
        .map_err(csv_io)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.results.policies {
            for r in &p.rounds {
                w.write_record([
                    p.policy.clone(),
                    u8::from(p.bit).to_string(),
                    r.round.to_string(),
                    r.direct.count.to_string(),
                    opt(r.direct.mean),
                    opt(r.direct.variance),
                    r.simulated.count.to_string(),
                    opt(r.simulated.mean),
                    opt(r.simulated.variance),
                    opt(r.ks.report.map(|t| t.statistic)),
                    opt(r.ks.report.map(|t| t.p_value)),
                    status_label(r.ks.status).to_string(),
                ])
                .map_err(csv_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> HarnessError {
    HarnessError::Io(e.into())
}

fn status_label(s: CheckStatus) -> &'static str {
    match s {
        CheckStatus::Pass => "pass",
        CheckStatus::Fail => "fail",
        CheckStatus::InsufficientSample => "insufficient-sample",
    }
}

/// Session seed for one trial.
pub fn session_seed(master: u64, kind: SessionKind, id: &str, bit: SecretBit, trial: u64) -> u64 {
    derive_seed(master, &[kind.label(), id], u8::from(bit), trial)
}

/// Policy seed for one trial, shared by both curators.
pub fn policy_seed(master: u64, id: &str, bit: SecretBit, trial: u64) -> u64 {
    derive_seed(master, &["policy", id], u8::from(bit), trial)
}

fn post_seed(master: u64, id: &str, bit: SecretBit, trial: u64) -> u64 {
    derive_seed(master, &["post", id], u8::from(bit), trial)
}

/// Plays trial `trial` of policy `index` against one curator.
pub fn play_trial(
    cfg: &ExperimentConfig,
    master: u64,
    index: usize,
    kind: SessionKind,
    bit: SecretBit,
    trial: u64,
) -> Result<Transcript, HarnessError> {
    let id = cfg.policy_id(index);
    let budget = PrivacyBudget::new(cfg.budget)?;
    let mut session = Session::open_with_mode(
        kind,
        bit,
        budget,
        session_seed(master, kind, &id, bit, trial),
        cfg.simulator,
    );
    run_interaction(
        &mut session,
        &cfg.policies[index],
        policy_seed(master, &id, bit, trial),
        cfg.max_rounds,
    )
    .map_err(|source| HarnessError::Session {
        context: format!(
            "{id}, bit {}, {} trial {trial}",
            u8::from(bit),
            kind.label()
        ),
        source,
    })
}

fn pattern_histogram(ts: &[Transcript]) -> BTreeMap<Vec<usize>, usize> {
    let mut h = BTreeMap::new();
    for t in ts {
        *h.entry(t.refusals()).or_insert(0) += 1;
    }
    h
}

fn histogram_checksum(h: &BTreeMap<Vec<usize>, usize>) -> String {
    let mut sha = Sha256::new();
    for (pattern, count) in h {
        sha.update((pattern.len() as u64).to_le_bytes());
        for &i in pattern {
            sha.update((i as u64).to_le_bytes());
        }
        sha.update((*count as u64).to_le_bytes());
    }
    hex::encode(sha.finalize())
}

fn column(ts: &[Transcript], round: usize) -> Vec<f64> {
    ts.iter()
        .filter_map(|t| t.rounds.get(round).and_then(|r| r.answer()))
        .collect()
}

/// Rounds answered by every transcript, if they all answered the same ones.
fn common_answer_rounds(ts: &[Transcript]) -> Option<Vec<usize>> {
    let answered = |t: &Transcript| -> Vec<usize> {
        t.rounds
            .iter()
            .enumerate()
            .filter(|(_, r)| r.answer().is_some())
            .map(|(i, _)| i)
            .collect()
    };
    let first = answered(ts.first()?);
    ts.iter().all(|t| answered(t) == first).then_some(first)
}

fn covariance_vs_identity(ts: &[Transcript], rounds: &[usize]) -> Option<f64> {
    if rounds.is_empty() || ts.len() < 2 {
        return None;
    }
    let data: Vec<f64> = ts
        .iter()
        .flat_map(|t| {
            rounds
                .iter()
                .map(move |&r| t.rounds[r].answer().expect("answered"))
        })
        .collect();
    let m = SampleMatrix::from_rows(rounds.len(), data).ok()?;
    let moments = empirical_moments(&m).ok()?;
    let k = rounds.len();
    let identity: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    covariance_deviation(&moments.covariance, &identity).ok()
}

fn analyze_policy(
    cfg: &ExperimentConfig,
    index: usize,
    bit: SecretBit,
    direct: &[Transcript],
    simulated: &[Transcript],
) -> PolicyResult {
    let policy = &cfg.policies[index];
    let depth = direct
        .iter()
        .chain(simulated)
        .map(|t| t.rounds.len())
        .max()
        .unwrap_or(0);
    let rounds: Vec<RoundResult> = (0..depth)
        .map(|r| {
            let (x, y) = (column(direct, r), column(simulated, r));
            RoundResult {
                round: r + 1,
                direct: ArmSummary::of(&x),
                simulated: ArmSummary::of(&y),
                ks: Check::ks(&x, &y, cfg.alpha),
            }
        })
        .filter(|r| r.direct.count + r.simulated.count > 0)
        .collect();

    let sx: Vec<f64> = direct.iter().map(|t| policy.summary(t)).collect();
    let sy: Vec<f64> = simulated.iter().map(|t| policy.summary(t)).collect();
    let summary_statistic = Check::ks(&sx, &sy, cfg.alpha);

    let (hd, hs) = (pattern_histogram(direct), pattern_histogram(simulated));
    let unpredicted = direct
        .iter()
        .chain(simulated)
        .filter(|t| unpredicted_decision(t).is_some())
        .count();
    let refusals = RefusalSummary {
        identical: hd == hs,
        direct_checksum: histogram_checksum(&hd),
        simulated_checksum: histogram_checksum(&hs),
        distinct_patterns: hd.len().max(hs.len()),
        unpredicted,
    };

    let covariance = match (
        common_answer_rounds(direct),
        common_answer_rounds(simulated),
    ) {
        (Some(a), Some(b)) if a == b => {
            match (
                covariance_vs_identity(direct, &a),
                covariance_vs_identity(simulated, &b),
            ) {
                (Some(dd), Some(sd)) => Some(CovarianceResult {
                    rounds: a.len(),
                    direct_deviation: dd,
                    simulated_deviation: sd,
                    tolerance: cfg.covariance_tolerance,
                    // deviation shrinks like 1/sqrt(n); only judge large batches
                    pass: cfg.n_trials < DEFAULT_COV_MIN_TRIALS
                        || (dd <= cfg.covariance_tolerance && sd <= cfg.covariance_tolerance),
                }),
                _ => None,
            }
        }
        _ => None,
    };

    let truncated = direct
        .iter()
        .chain(simulated)
        .filter(|t| t.end == crate::transcript::Termination::Truncated)
        .count();

    let pass = rounds.iter().all(|r| r.ks.status != CheckStatus::Fail)
        && summary_statistic.status != CheckStatus::Fail
        && refusals.identical
        && refusals.unpredicted == 0
        && covariance.as_ref().map_or(true, |c| c.pass);

    PolicyResult {
        policy: cfg.policy_id(index),
        params: policy.clone(),
        bit,
        rounds,
        summary_statistic,
        refusals,
        covariance,
        truncated,
        pass,
    }
}

/// Batches smaller than this report covariance deviation without judging it.
pub const DEFAULT_COV_MIN_TRIALS: usize = 10_000;

fn run_mechanism(
    cfg: &ExperimentConfig,
    master: u64,
    index: usize,
    bit: SecretBit,
) -> Result<MechanismResult, HarnessError> {
    let spec = cfg.mechanisms[index];
    let mech = spec.build()?;
    let id = cfg.mechanism_id(index);
    let budget = PrivacyBudget::new(cfg.budget)?;
    let serve = |kind: SessionKind| -> Result<Vec<Option<Outcome>>, HarnessError> {
        (0..cfg.n_trials as u64)
            .into_par_iter()
            .map(|t| {
                let mut s = Session::open_with_mode(
                    kind,
                    bit,
                    budget,
                    session_seed(master, kind, &id, bit, t),
                    cfg.simulator,
                );
                let mut post = ChaCha8Rng::seed_from_u64(post_seed(master, &id, bit, t));
                mech.serve(&mut s, &mut post)
                    .map_err(|source| HarnessError::Session {
                        context: format!("{id}, bit {}, {} trial {t}", u8::from(bit), kind.label()),
                        source,
                    })
            })
            .collect()
    };
    let (od, os) = (serve(SessionKind::Direct)?, serve(SessionKind::Simulated)?);
    let refused = |o: &[Option<Outcome>]| o.iter().filter(|x| x.is_none()).count();
    let values =
        |o: &[Option<Outcome>]| -> Vec<f64> { o.iter().flatten().map(|x| x.value()).collect() };
    let (vd, vs) = (values(&od), values(&os));

    let (test, fd, fs) = if mech.post.is_binary() {
        let ones = |v: &[f64]| v.iter().filter(|&&x| x == 1.0).count();
        let (kd, ks) = (ones(&vd), ones(&vs));
        let freq = |k: usize, n: usize| (n > 0).then(|| k as f64 / n as f64);
        let test = if vd.len() < MIN_TEST_SAMPLE || vs.len() < MIN_TEST_SAMPLE {
            Check::insufficient(vd.len(), vs.len())
        } else {
            let r = two_proportion_z(
                kd as u64,
                vd.len() as u64,
                ks as u64,
                vs.len() as u64,
                cfg.alpha,
            )
            .expect("counts within sizes");
            Check::from_report(vd.len(), vs.len(), r)
        };
        (test, freq(kd, vd.len()), freq(ks, vs.len()))
    } else {
        (Check::ks(&vd, &vs, cfg.alpha), None, None)
    };
    let (rd, rs) = (refused(&od), refused(&os));
    let pass = test.status != CheckStatus::Fail && rd == rs;
    Ok(MechanismResult {
        mechanism: id,
        bit,
        refused_direct: rd,
        refused_simulated: rs,
        frequency_direct: fd,
        frequency_simulated: fs,
        test,
        pass,
    })
}

/// Plays both arms of one `(policy, bit)` batch.
pub fn play_batch(
    cfg: &ExperimentConfig,
    master: u64,
    index: usize,
    bit: SecretBit,
    kind: SessionKind,
) -> Result<Vec<Transcript>, HarnessError> {
    (0..cfg.n_trials as u64)
        .into_par_iter()
        .map(|t| play_trial(cfg, master, index, kind, bit, t))
        .collect()
}

fn run_once(cfg: &ExperimentConfig, master: u64) -> Result<RunResults, HarnessError> {
    let mut policies = Vec::new();
    for index in 0..cfg.policies.len() {
        for &bit in &cfg.bits {
            let direct = play_batch(cfg, master, index, bit, SessionKind::Direct)?;
            let simulated = play_batch(cfg, master, index, bit, SessionKind::Simulated)?;
            policies.push(analyze_policy(cfg, index, bit, &direct, &simulated));
        }
    }
    let mut mechanisms = Vec::new();
    for index in 0..cfg.mechanisms.len() {
        for &bit in &cfg.bits {
            mechanisms.push(run_mechanism(cfg, master, index, bit)?);
        }
    }

    let checks = policies
        .iter()
        .flat_map(|p| p.rounds.iter().map(|r| &r.ks).chain([&p.summary_statistic]))
        .chain(mechanisms.iter().map(|m| &m.test));
    let (mut evaluated, mut failed) = (0, 0);
    for c in checks {
        match c.status {
            CheckStatus::Pass => evaluated += 1,
            CheckStatus::Fail => {
                evaluated += 1;
                failed += 1;
            }
            CheckStatus::InsufficientSample => {}
        }
    }
    let pass = policies.iter().all(|p| p.pass) && mechanisms.iter().all(|m| m.pass);
    Ok(RunResults {
        master_seed: master,
        policies,
        mechanisms,
        tests_evaluated: evaluated,
        tests_failed: failed,
        pass,
    })
}

/// Seed of the confirmation run made after a failure.
pub fn retry_seed(master: u64) -> u64 {
    derive_seed(master, &["retry"], 0, 1)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let results = run_once(cfg, cfg.master_seed)?;
    let retry = if !results.pass && cfg.retry_on_failure {
        Some(run_once(cfg, retry_seed(cfg.master_seed))?)
    } else {
        None
    };
    let pass = results.pass || retry.as_ref().is_some_and(|r| r.pass);

    let mut sha = Sha256::new();
    sha.update(serde_json::to_vec(&(cfg, &results, &retry, pass))?);
    let checksum = hex::encode(sha.finalize());

    Ok(ExperimentReport {
        config: cfg.clone(),
        results,
        retry,
        pass,
        checksum,
        metadata: Metadata {
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_ms: started.elapsed().as_millis(),
        },
    })
}

/// Writes the transcripts of one curator for every `(policy, bit, trial)`.
pub fn emit_transcripts<W: std::io::Write>(
    cfg: &ExperimentConfig,
    kind: SessionKind,
    out: W,
) -> Result<(), HarnessError> {
    cfg.validate()?;
    let mut all = Vec::new();
    for index in 0..cfg.policies.len() {
        for &bit in &cfg.bits {
            let ts = play_batch(cfg, cfg.master_seed, index, bit, kind)?;
            let id = cfg.policy_id(index);
            for (trial, t) in ts.into_iter().enumerate() {
                all.push((
                    crate::transcript::TranscriptKey {
                        policy: id.clone(),
                        kind,
                        bit: u8::from(bit),
                        trial: trial as u64,
                    },
                    t,
                ));
            }
        }
    }
    crate::transcript::write_records(out, cfg.budget, all.iter().map(|(k, t)| (k, t)))?;
    Ok(())
}
