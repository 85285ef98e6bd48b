//! Generation backends and the parser that turns their raw text into
//! validated relation instances.

mod oracle;
mod remote;

use std::collections::BTreeSet;
use std::fmt;
use std::ops::RangeInclusive;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Sample;
use crate::graph::{parse_token, RelationInstance};
use crate::taxonomy::Taxonomy;

pub use oracle::{NoisyOracleBackend, OracleBackend};
pub use remote::{ApiKind, RemoteBackend, RemoteConfig};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("service returned status {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, attempts: u32, body: String },
    #[error("malformed service response: {0}")]
    Response(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("no gold structure for dialogue {0:?}")]
    UnknownDialogue(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
}

impl GenerationRequest {
    pub fn new(prompt: String, max_new_tokens: u32, temperature: f64, stop: Vec<String>) -> Result<Self, BackendError> {
        if max_new_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_new_tokens must be at least 1".into()));
        }
        if !(temperature >= 0.0) {
            return Err(BackendError::InvalidRequest("temperature must be non-negative".into()));
        }
        Ok(GenerationRequest {
            prompt,
            max_new_tokens,
            temperature,
            stop,
        })
    }
}

/// Identifies the step a request belongs to. Oracles answer from it; the
/// remote backend ignores it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepKey {
    pub dialogue_id: String,
    pub turn_id: usize,
    /// Visible units of the current turn.
    pub turn_units: RangeInclusive<usize>,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn generate(&self, request: &GenerationRequest, step: &StepKey) -> Result<String, BackendError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    BadSyntax,
    UnknownLabel,
    OutOfWindow,
    BadOrder,
    TargetNotInTurn,
    Duplicate,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::BadSyntax => "bad_syntax",
            RejectReason::UnknownLabel => "unknown_label",
            RejectReason::OutOfWindow => "out_of_window",
            RejectReason::BadOrder => "bad_order",
            RejectReason::TargetNotInTurn => "target_not_in_turn",
            RejectReason::Duplicate => "duplicate",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub token: String,
    pub reason: RejectReason,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub accepted: Vec<RelationInstance>,
    pub rejected: Vec<Rejection>,
}

/// Anything shaped like `word(...)` on one line. Candidates that are not
/// exact `CODE(i,j)` tokens are reported as bad syntax rather than skipped.
fn candidate_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"[A-Za-z][A-Za-z-]*\([^()\n]*\)").expect("valid pattern"))
}

/// Extracts relation tokens from free text and keeps those that are legal
/// for `sample`. Surrounding prose is ignored. Never fails.
pub fn parse_output(raw: &str, sample: &Sample, taxonomy: &Taxonomy) -> ParsedOutput {
    let (l, m) = (sample.window_start(), sample.window_end());
    let turn = sample.turn_range();
    let mut out = ParsedOutput::default();
    let mut seen = BTreeSet::new();
    for found in candidate_pattern().find_iter(raw) {
        let token = found.as_str();
        let reject = |reason| Rejection {
            token: token.to_string(),
            reason,
        };
        let Some((label, i, j)) = parse_token(token) else {
            out.rejected.push(reject(RejectReason::BadSyntax));
            continue;
        };
        let reason = if !taxonomy.contains(&label) {
            Some(RejectReason::UnknownLabel)
        } else if i >= j {
            Some(RejectReason::BadOrder)
        } else if i < l || j > m {
            Some(RejectReason::OutOfWindow)
        } else if !turn.contains(&j) {
            Some(RejectReason::TargetNotInTurn)
        } else if !seen.insert((label.clone(), i, j)) {
            Some(RejectReason::Duplicate)
        } else {
            None
        };
        match reason {
            Some(r) => out.rejected.push(reject(r)),
            None => out.accepted.push(RelationInstance::unchecked(label, i, j)),
        }
    }
    out
}
