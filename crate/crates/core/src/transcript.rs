//! Interaction transcripts and their record format.
//!
//! A transcript file is CSV with one record per round:
//!
//! ```text
//! # budget=1
//! policy,kind,bit,trial,round,spend,decision,answer
//! fixed,simulated,1,0,1,0.6,accepted,0.3721...
//! fixed,simulated,1,0,2,0.9,refused,
//! ```
//!
//! `round` is 1-based; refused rounds leave `answer` empty. Floats are written
//! in shortest round-trip form, so parsing a written file reproduces the
//! rounds bit for bit. Interactions with no rounds produce no records.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curator::SessionKind;
use crate::filter::Decision;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RoundOutcome {
    Accepted(f64),
    Refused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub spend: f64,
    pub outcome: RoundOutcome,
}

impl Round {
    pub fn decision(&self) -> Decision {
        match self.outcome {
            RoundOutcome::Accepted(_) => Decision::Accepted,
            RoundOutcome::Refused => Decision::Refused,
        }
    }

    pub fn answer(&self) -> Option<f64> {
        match self.outcome {
            RoundOutcome::Accepted(a) => Some(a),
            RoundOutcome::Refused => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    /// The policy chose to stop.
    Stopped,
    /// The round cap was reached first.
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub budget: f64,
    pub rounds: Vec<Round>,
    pub end: Termination,
}

impl Transcript {
    pub fn answers(&self) -> impl Iterator<Item = f64> + '_ {
        self.rounds.iter().filter_map(Round::answer)
    }

    pub fn answer_sum(&self) -> f64 {
        self.answers().sum()
    }

    /// 0-based indices of refused rounds.
    pub fn refusals(&self) -> Vec<usize> {
        self.rounds
            .iter()
            .enumerate()
            .filter(|(_, r)| r.decision() == Decision::Refused)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn accepted_spends(&self) -> impl Iterator<Item = f64> + '_ {
        self.rounds
            .iter()
            .filter(|r| r.decision() == Decision::Accepted)
            .map(|r| r.spend)
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },
}

/// Identifies one transcript inside a record file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TranscriptKey {
    pub policy: String,
    pub kind: SessionKind,
    pub bit: u8,
    pub trial: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    policy: String,
    kind: SessionKind,
    bit: u8,
    trial: u64,
    round: usize,
    spend: f64,
    decision: Decision,
    answer: Option<f64>,
}

pub fn write_records<'a, W, I>(out: W, budget: f64, transcripts: I) -> Result<(), RecordError>
where
    W: Write,
    I: IntoIterator<Item = (&'a TranscriptKey, &'a Transcript)>,
{
    let mut out = out;
    writeln!(out, "# budget={budget}")?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    // written unconditionally so that an empty file still carries the header
    w.write_record([
        "policy", "kind", "bit", "trial", "round", "spend", "decision", "answer",
    ])?;
    for (key, t) in transcripts {
        for (i, r) in t.rounds.iter().enumerate() {
            w.serialize(Record {
                policy: key.policy.clone(),
                kind: key.kind,
                bit: key.bit,
                trial: key.trial,
                round: i + 1,
                spend: r.spend,
                decision: r.decision(),
                answer: r.answer(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a record file back into `(budget, transcripts)` in file order.
///
/// Termination markers are not part of the format; parsed transcripts are
/// marked [`Termination::Stopped`].
pub fn read_records<R: Read>(
    input: R,
) -> Result<(f64, Vec<(TranscriptKey, Transcript)>), RecordError> {
    let mut input = BufReader::new(input);
    let mut first = String::new();
    input.read_line(&mut first)?;
    let budget = first
        .trim()
        .strip_prefix("# budget=")
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| RecordError::Malformed {
            line: 1,
            msg: format!("expected `# budget=<mu0>`, found {:?}", first.trim()),
        })?;

    let mut rdr = csv::Reader::from_reader(input);
    let mut out: Vec<(TranscriptKey, Transcript)> = Vec::new();
    // header sits on line 2, first record on line 3
    for (line, rec) in (3u64..).zip(rdr.deserialize::<Record>()) {
        let rec = rec?;
        let key = TranscriptKey {
            policy: rec.policy,
            kind: rec.kind,
            bit: rec.bit,
            trial: rec.trial,
        };
        let outcome = match (rec.decision, rec.answer) {
            (Decision::Accepted, Some(a)) => RoundOutcome::Accepted(a),
            (Decision::Refused, None) => RoundOutcome::Refused,
            (d, a) => {
                return Err(RecordError::Malformed {
                    line,
                    msg: format!("decision {d:?} inconsistent with answer {a:?}"),
                })
            }
        };
        let round = Round {
            spend: rec.spend,
            outcome,
        };
        match out.last_mut() {
            Some((k, t)) if *k == key => {
                if rec.round != t.rounds.len() + 1 {
                    return Err(RecordError::Malformed {
                        line,
                        msg: format!("round {} follows round {}", rec.round, t.rounds.len()),
                    });
                }
                t.rounds.push(round);
            }
            _ => {
                if rec.round != 1 {
                    return Err(RecordError::Malformed {
                        line,
                        msg: format!("transcript starts at round {}", rec.round),
                    });
                }
                out.push((
                    key,
                    Transcript {
                        budget,
                        rounds: vec![round],
                        end: Termination::Stopped,
                    },
                ));
            }
        }
    }
    Ok((budget, out))
}
