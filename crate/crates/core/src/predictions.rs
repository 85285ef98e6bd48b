//! Predictions and step-log files.
//!
//! A predictions file is JSON lines: a header record, then one record per
//! dialogue with its relations as a space-separated token string. A step log
//! is JSON lines of [`StepRecord`]s and doubles as the samples file read by
//! the ablations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusError;
use crate::engine::{CorpusRun, Sample, StepRecord};
use crate::graph::{format_tokens, DiscourseGraph, RelationInstance};

pub const PREDICTIONS_FORMAT: &str = "dialparse-predictions";
pub const PREDICTIONS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictedDialogue {
    pub graph: DiscourseGraph,
    /// Edges contributed by the Narration second pass, also present in
    /// `graph`.
    pub second_pass: Vec<RelationInstance>,
    pub failure: Option<String>,
}

impl PredictedDialogue {
    pub fn new(graph: DiscourseGraph) -> Self {
        PredictedDialogue {
            graph,
            second_pass: Vec::new(),
            failure: None,
        }
    }
}

pub type Predictions = BTreeMap<String, PredictedDialogue>;

pub fn from_run(run: &CorpusRun) -> Predictions {
    run.runs
        .iter()
        .map(|(id, r)| {
            let p = PredictedDialogue {
                graph: r.graph.clone(),
                second_pass: Vec::new(),
                failure: r.failure.clone(),
            };
            (id.clone(), p)
        })
        .collect()
}

pub fn graphs(predictions: &Predictions) -> BTreeMap<String, DiscourseGraph> {
    predictions.iter().map(|(id, p)| (id.clone(), p.graph.clone())).collect()
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    unit_count: usize,
    relations: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    second_pass: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
}

fn write_jsonl<T: Serialize>(path: &Path, header: Option<&Header>, records: impl IntoIterator<Item = T>) -> Result<(), CorpusError> {
    let io = |e| CorpusError::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    if let Some(h) = header {
        crate::corpus::write_line(&mut out, h).map_err(io)?;
    }
    for r in records {
        crate::corpus::write_line(&mut out, &r).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_predictions(path: &Path, predictions: &Predictions) -> Result<(), CorpusError> {
    let header = Header {
        format: PREDICTIONS_FORMAT.into(),
        version: PREDICTIONS_VERSION,
    };
    let records = predictions.iter().map(|(id, p)| Record {
        id: id.clone(),
        unit_count: p.graph.unit_count(),
        relations: format_tokens(&p.graph),
        second_pass: format_tokens(&p.second_pass),
        failure: p.failure.clone(),
    });
    write_jsonl(path, Some(&header), records)
}

fn parse_tokens(id: &str, tokens: &str) -> Result<Vec<RelationInstance>, CorpusError> {
    tokens
        .split_whitespace()
        .map(|t| t.parse().map_err(|e| CorpusError::schema(id, format!("{e}"))))
        .collect()
}

/// Reads a predictions file. Relations must be in range and forward.
pub fn read_predictions(path: &Path) -> Result<Predictions, CorpusError> {
    let lines = read_lines(path)?;
    let parse_err = |line: usize, detail: String| CorpusError::Parse {
        path: path.display().to_string(),
        line,
        detail,
    };
    let mut lines = lines.into_iter();
    let (n, first) = lines.next().ok_or_else(|| parse_err(1, "missing header record".into()))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| parse_err(n, format!("bad header: {e}")))?;
    if header.format != PREDICTIONS_FORMAT || header.version != PREDICTIONS_VERSION {
        return Err(parse_err(n, format!("not a predictions file ({} v{})", header.format, header.version)));
    }
    let mut out = Predictions::new();
    for (n, line) in lines {
        let r: Record = serde_json::from_str(&line).map_err(|e| parse_err(n, e.to_string()))?;
        let graph = DiscourseGraph::from_relations(r.id.as_str(), r.unit_count, parse_tokens(&r.id, &r.relations)?)
            .map_err(|e| CorpusError::schema(&r.id, e.to_string()))?;
        let p = PredictedDialogue {
            graph,
            second_pass: parse_tokens(&r.id, &r.second_pass)?,
            failure: r.failure,
        };
        if out.insert(r.id.clone(), p).is_some() {
            return Err(CorpusError::DuplicateDialogue(r.id));
        }
    }
    Ok(out)
}

/// Non-blank lines with 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((n + 1, line));
        }
    }
    Ok(out)
}

pub fn write_step_log<'a>(path: &Path, steps: impl IntoIterator<Item = &'a StepRecord>) -> Result<(), CorpusError> {
    write_jsonl(path, None, steps)
}

pub fn read_step_log(path: &Path) -> Result<Vec<StepRecord>, CorpusError> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                path: path.display().to_string(),
                line: n,
                detail: e.to_string(),
            })
        })
        .collect()
}

/// JSON lines of bare samples, as produced by the ablations.
pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<(), CorpusError> {
    write_jsonl(path, None, samples)
}

/// Reads either bare samples or step records, keeping only the samples.
pub fn read_samples(path: &Path) -> Result<Vec<Sample>, CorpusError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Line {
        Step(Box<StepRecord>),
        Sample(Box<Sample>),
    }
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| match serde_json::from_str(&line) {
            Ok(Line::Step(s)) => Ok(s.sample),
            Ok(Line::Sample(s)) => Ok(*s),
            Err(e) => Err(CorpusError::Parse {
                path: path.display().to_string(),
                line: n,
                detail: e.to_string(),
            }),
        })
        .collect()
}
