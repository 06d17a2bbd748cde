//! Interactive sessions over a secret bit.
//!
//! Two interchangeable curators answer a stream of spends `μᵢ`:
//!
//! * [`SessionKind::Direct`] returns `b·μᵢ + Zᵢ` with a fresh standard normal
//!   `Zᵢ` per accepted round.
//! * [`SessionKind::Simulated`] draws a single `W₀ = b·μ₀ + Z₀` when opened and
//!   answers every accepted round with `Wᵢ = mᵢ·W₀ + Uᵢ`, where `mᵢ = μᵢ/μ₀`
//!   and `Uᵢ` comes from the online Cholesky factor of `I − mmᵀ`. Nothing but
//!   `W₀` ever touches the bit.
//!
//! Both run the same filter, and a refused query consumes no randomness. The
//! noise seeds `Vᵢ` are drawn lazily, one per accepted round.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversaries::{Action, AdversaryPolicy, PolicyView};
use crate::cholesky::{CholeskyError, CholeskyState, Mode};
use crate::filter::{Decision, FilterError, FilterState, PrivacyBudget, QuerySpend};
use crate::rng::GaussianStream;
use crate::transcript::{Round, RoundOutcome, Termination, Transcript};

/// Default cap on rounds per interaction.
pub const DEFAULT_MAX_ROUNDS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionKind {
    Direct,
    Simulated,
}

impl SessionKind {
    pub fn label(self) -> &'static str {
        match self {
            SessionKind::Direct => "direct",
            SessionKind::Simulated => "simulated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum SecretBit {
    Zero,
    One,
}

impl SecretBit {
    pub fn as_f64(self) -> f64 {
        match self {
            SecretBit::Zero => 0.0,
            SecretBit::One => 1.0,
        }
    }
}

impl TryFrom<u8> for SecretBit {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(SecretBit::Zero),
            1 => Ok(SecretBit::One),
            other => Err(format!("secret bit must be 0 or 1, got {other}")),
        }
    }
}

impl From<SecretBit> for u8 {
    fn from(b: SecretBit) -> u8 {
        match b {
            SecretBit::Zero => 0,
            SecretBit::One => 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session is closed")]
    Closed,
    #[error("policy emitted an invalid spend: {0}")]
    Policy(#[from] FilterError),
    #[error("simulator state: {0}")]
    Cholesky(#[from] CholeskyError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Response {
    Accepted(f64),
    Refused,
}

impl Response {
    pub fn decision(self) -> Decision {
        match self {
            Response::Accepted(_) => Decision::Accepted,
            Response::Refused => Decision::Refused,
        }
    }
}

#[derive(Debug, Clone)]
struct Simulator {
    w0: f64,
    chol: CholeskyState,
    /// Past `Vᵢ`, kept only in dense mode.
    seeds: Vec<f64>,
    last_noise: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Session {
    kind: SessionKind,
    bit: SecretBit,
    budget: PrivacyBudget,
    filter: FilterState,
    rounds: usize,
    stream: GaussianStream,
    sim: Option<Simulator>,
    closed: bool,
}

impl Session {
    /// Opens a session; simulated sessions use the streaming factor.
    pub fn open(kind: SessionKind, bit: SecretBit, budget: PrivacyBudget, seed: u64) -> Self {
        Self::open_with_mode(kind, bit, budget, seed, Mode::Streaming)
    }

    /// `mode` only affects simulated sessions.
    pub fn open_with_mode(
        kind: SessionKind,
        bit: SecretBit,
        budget: PrivacyBudget,
        seed: u64,
        mode: Mode,
    ) -> Self {
        let mut stream = GaussianStream::new(seed);
        let sim = match kind {
            SessionKind::Direct => None,
            SessionKind::Simulated => {
                let z0 = stream.standard_normal();
                Some(Simulator {
                    w0: bit.as_f64() * budget.mu0() + z0,
                    chol: CholeskyState::new(mode),
                    seeds: Vec::new(),
                    last_noise: None,
                })
            }
        };
        Self {
            kind,
            bit,
            budget,
            filter: FilterState::new(budget),
            rounds: 0,
            stream,
            sim,
            closed: false,
        }
    }

    pub fn kind(&self) -> SessionKind {
        self.kind
    }

    pub fn bit(&self) -> SecretBit {
        self.bit
    }

    pub fn budget(&self) -> PrivacyBudget {
        self.budget
    }

    pub fn filter(&self) -> &FilterState {
        &self.filter
    }

    /// Number of accepted rounds.
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Gaussian draws consumed so far.
    pub fn draws(&self) -> u64 {
        self.stream.draws()
    }

    /// The simulator's single Gaussian input, `None` for direct sessions.
    pub fn w0(&self) -> Option<f64> {
        self.sim.as_ref().map(|s| s.w0)
    }

    /// `Uᵢ` of the most recent accepted round of a simulated session.
    pub fn last_noise(&self) -> Option<f64> {
        self.sim.as_ref().and_then(|s| s.last_noise)
    }

    pub fn cholesky(&self) -> Option<&CholeskyState> {
        self.sim.as_ref().map(|s| &s.chol)
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn ask(&mut self, spend: QuerySpend) -> Result<Response, SessionError> {
        if self.closed {
            return Err(SessionError::Closed);
        }
        if self.filter.spend(spend) == Decision::Refused {
            return Ok(Response::Refused);
        }
        self.rounds += 1;
        let answer = match &mut self.sim {
            None => self.bit.as_f64() * spend.mu() + self.stream.standard_normal(),
            Some(sim) => {
                let mu0 = self.budget.mu0();
                // a zero budget only ever admits zero spends
                let m = if mu0 > 0.0 { spend.mu() / mu0 } else { 0.0 };
                let v = self.stream.standard_normal();
                let u = sim.chol.step(m, v, &sim.seeds)?;
                if sim.chol.mode() == Mode::Dense {
                    sim.seeds.push(v);
                }
                sim.last_noise = Some(u);
                m * sim.w0 + u
            }
        };
        Ok(Response::Accepted(answer))
    }
}

/// Drives `session` with `policy` until it stops or `max_rounds` rounds
/// (accepted or refused) have been played.
pub fn run_interaction(
    session: &mut Session,
    policy: &dyn AdversaryPolicy,
    policy_seed: u64,
    max_rounds: usize,
) -> Result<Transcript, SessionError> {
    let budget = session.budget().mu0();
    let mut rounds: Vec<Round> = Vec::new();
    loop {
        let view = PolicyView {
            budget,
            rounds: &rounds,
            remaining_sq: session.filter().remaining_sq(),
            seed: policy_seed,
        };
        let spend = match policy.next(&view) {
            Action::Stop => {
                return Ok(Transcript {
                    budget,
                    rounds,
                    end: Termination::Stopped,
                })
            }
            Action::Spend(mu) => QuerySpend::new(mu)?,
        };
        if rounds.len() == max_rounds {
            return Ok(Transcript {
                budget,
                rounds,
                end: Termination::Truncated,
            });
        }
        let outcome = match session.ask(spend)? {
            Response::Accepted(a) => RoundOutcome::Accepted(a),
            Response::Refused => RoundOutcome::Refused,
        };
        rounds.push(Round {
            spend: spend.mu(),
            outcome,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversaries::Policy;

    fn budget(mu0: f64) -> PrivacyBudget {
        PrivacyBudget::new(mu0).unwrap()
    }

    fn q(mu: f64) -> QuerySpend {
        QuerySpend::new(mu).unwrap()
    }

    #[test]
    fn simulated_session_holds_shifted_w0() {
        let s = Session::open(SessionKind::Simulated, SecretBit::One, budget(1.0), 42);
        let z0 = GaussianStream::new(42).standard_normal();
        assert_eq!(s.w0(), Some(1.0 + z0));
        assert_eq!(s.draws(), 1);

        let s = Session::open(SessionKind::Simulated, SecretBit::Zero, budget(2.0), 7);
        assert_eq!(s.w0(), Some(GaussianStream::new(7).standard_normal()));
    }

    #[test]
    fn direct_answers_are_shifted_fresh_normals() {
        let mut s = Session::open(SessionKind::Direct, SecretBit::One, budget(1.0), 42);
        let mut g = GaussianStream::new(42);
        let a = s.ask(q(0.5)).unwrap();
        assert_eq!(a, Response::Accepted(0.5 + g.standard_normal()));
        assert_eq!(s.draws(), 1);
    }

    #[test]
    fn full_budget_query_returns_w0_bitwise() {
        for seed in 0..200 {
            for bit in [SecretBit::Zero, SecretBit::One] {
                let mut s = Session::open(SessionKind::Simulated, bit, budget(1.0), seed);
                let w0 = s.w0().unwrap();
                match s.ask(q(1.0)).unwrap() {
                    Response::Accepted(a) => assert_eq!(a.to_bits(), w0.to_bits()),
                    Response::Refused => panic!("refused full-budget query"),
                }
            }
        }
    }

    #[test]
    fn zero_spend_answer_is_the_fresh_seed() {
        let mut s = Session::open(SessionKind::Simulated, SecretBit::One, budget(1.0), 5);
        let mut g = GaussianStream::new(5);
        g.standard_normal();
        let v1 = g.standard_normal();
        assert_eq!(s.ask(q(0.0)).unwrap(), Response::Accepted(v1));
    }

    #[test]
    fn refusals_consume_no_randomness() {
        for kind in [SessionKind::Direct, SessionKind::Simulated] {
            let mut s = Session::open(kind, SecretBit::One, budget(1.0), 3);
            s.ask(q(0.9)).unwrap();
            let before = s.draws();
            assert_eq!(s.ask(q(0.9)).unwrap(), Response::Refused);
            assert_eq!(s.draws(), before);
            assert_eq!(s.rounds(), 1);
        }
    }

    #[test]
    fn simulated_draws_k_plus_one() {
        let mut s = Session::open(SessionKind::Simulated, SecretBit::Zero, budget(1.0), 11);
        for mu in [0.3, 0.3, 2.0, 0.3, 0.0] {
            s.ask(q(mu)).unwrap();
        }
        assert_eq!(s.rounds(), 4);
        assert_eq!(s.draws(), 5);
    }

    #[test]
    fn zero_budget_refuses_positive_spends() {
        let mut s = Session::open(SessionKind::Simulated, SecretBit::One, budget(0.0), 1);
        assert_eq!(s.ask(q(0.1)).unwrap(), Response::Refused);
        assert!(matches!(s.ask(q(0.0)).unwrap(), Response::Accepted(a) if a.is_finite()));
    }

    #[test]
    fn closed_session_errors() {
        let mut s = Session::open(SessionKind::Direct, SecretBit::Zero, budget(1.0), 1);
        s.close();
        assert!(matches!(s.ask(q(0.1)), Err(SessionError::Closed)));
    }

    #[test]
    fn dense_and_streaming_sessions_agree() {
        for seed in 0..50 {
            let mut a = Session::open_with_mode(
                SessionKind::Simulated,
                SecretBit::One,
                budget(1.5),
                seed,
                Mode::Dense,
            );
            let mut b = Session::open(SessionKind::Simulated, SecretBit::One, budget(1.5), seed);
            for mu in [0.4, 0.7, 0.2, 5.0, 0.9, 0.1, 0.0] {
                match (a.ask(q(mu)).unwrap(), b.ask(q(mu)).unwrap()) {
                    (Response::Accepted(x), Response::Accepted(y)) => assert!((x - y).abs() < 1e-9),
                    (Response::Refused, Response::Refused) => {}
                    other => panic!("decisions diverged: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn rescaled_budget_yields_identical_noise() {
        let mu0 = 2.5;
        let spends = [0.5, 1.1, 0.3, 1.9, 0.2];
        for seed in 0..50 {
            let mut raw = Session::open(SessionKind::Simulated, SecretBit::One, budget(mu0), seed);
            let mut unit = Session::open(SessionKind::Simulated, SecretBit::One, budget(1.0), seed);
            for mu in spends {
                let ra = raw.ask(q(mu)).unwrap();
                let ua = unit.ask(q(mu / mu0)).unwrap();
                assert_eq!(ra.decision(), ua.decision());
                if let Response::Accepted(a) = ra {
                    let m = mu / mu0;
                    assert_eq!(
                        raw.last_noise().unwrap().to_bits(),
                        unit.last_noise().unwrap().to_bits()
                    );
                    assert_eq!(
                        a.to_bits(),
                        (m * raw.w0().unwrap() + raw.last_noise().unwrap()).to_bits()
                    );
                }
            }
        }
    }

    #[test]
    fn constant_policy_exhausts_after_four() {
        let mut s = Session::open(SessionKind::Direct, SecretBit::Zero, budget(1.0), 2);
        let p = Policy::fixed(vec![0.5; 5]);
        let t = run_interaction(&mut s, &p, 0, DEFAULT_MAX_ROUNDS).unwrap();
        let d: Vec<Decision> = t.rounds.iter().map(Round::decision).collect();
        assert_eq!(
            d,
            [
                Decision::Accepted,
                Decision::Accepted,
                Decision::Accepted,
                Decision::Accepted,
                Decision::Refused
            ]
        );
        assert_eq!(t.end, Termination::Stopped);
    }

    #[test]
    fn stop_immediately_gives_empty_transcript() {
        let mut s = Session::open(SessionKind::Simulated, SecretBit::Zero, budget(1.0), 2);
        let t = run_interaction(&mut s, &Policy::fixed(vec![]), 0, DEFAULT_MAX_ROUNDS).unwrap();
        assert!(t.rounds.is_empty());
        assert_eq!(t.end, Termination::Stopped);
    }

    #[test]
    fn round_cap_truncates() {
        let mut s = Session::open(SessionKind::Direct, SecretBit::Zero, budget(1.0), 2);
        let t = run_interaction(&mut s, &Policy::fixed(vec![0.0; 10]), 0, 3).unwrap();
        assert_eq!(t.rounds.len(), 3);
        assert_eq!(t.end, Termination::Truncated);
    }
}
