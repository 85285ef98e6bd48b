//! Incremental parsing: one generation step per dialogue turn, each seeing a
//! bounded window of units and the structure accumulated so far.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{parse_output, Backend, BackendError, GenerationRequest, Rejection, StepKey};
use crate::corpus::Dialogue;
use crate::graph::{format_tokens, DiscourseGraph, ElementaryUnit, RelationInstance};
use crate::taxonomy::Taxonomy;

pub const DEFAULT_WINDOW: usize = 15;
pub const DEFAULT_MAX_NEW_TOKENS: u32 = 256;

/// Bumped whenever `template.txt` changes; recorded in run manifests.
pub const PROMPT_TEMPLATE_VERSION: u32 = 1;
const PROMPT_TEMPLATE: &str = include_str!("template.txt");

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("dialogue {dialogue_id:?} has no turn {turn_id}")]
    EmptyTurn { dialogue_id: String, turn_id: usize },
    #[error("dialogue {dialogue_id:?}: turn {turn_id} is past the last turn")]
    TurnOutOfRange { dialogue_id: String, turn_id: usize },
    #[error("invalid engine configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Source of the structure shown to the backend at each step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    Gold,
    #[default]
    Predicted,
}

impl FromStr for ContextMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gold" => Ok(ContextMode::Gold),
            "predicted" => Ok(ContextMode::Predicted),
            other => Err(format!("unknown context mode {other:?}")),
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextMode::Gold => "gold",
            ContextMode::Predicted => "predicted",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    /// Largest index span `m - l` of a window.
    pub window: usize,
    pub mode: ContextMode,
    pub taxonomy: Taxonomy,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
}

impl EngineConfig {
    pub fn new(mode: ContextMode, taxonomy: Taxonomy) -> Self {
        EngineConfig {
            window: DEFAULT_WINDOW,
            mode,
            taxonomy,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            temperature: 0.0,
            stop: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.window == 0 {
            return Err(EngineError::Config("window must be positive".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(EngineError::Config("temperature must be non-negative".into()));
        }
        GenerationRequest::new(String::new(), self.max_new_tokens, self.temperature, self.stop.clone())
            .map(|_| ())
            .map_err(|e| EngineError::Config(e.to_string()))
    }
}

/// One step's input: the visible units `l..=m`, the structure among units
/// before the current turn, and which units form the current turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub dialogue_id: String,
    pub turn_id: usize,
    pub mode: ContextMode,
    pub window_units: Vec<ElementaryUnit>,
    pub context: Vec<RelationInstance>,
    /// Index of the first current-turn unit inside the window.
    pub turn_start: usize,
}

impl Sample {
    /// `l`, the lowest visible unit index.
    pub fn window_start(&self) -> usize {
        self.window_units.first().map_or(0, |u| u.index)
    }

    /// `m`, the highest visible unit index.
    pub fn window_end(&self) -> usize {
        self.window_units.last().map_or(0, |u| u.index)
    }

    pub fn turn_range(&self) -> RangeInclusive<usize> {
        self.turn_start..=self.window_end()
    }

    pub fn current_turn_units(&self) -> &[ElementaryUnit] {
        &self.window_units[self.turn_start - self.window_start()..]
    }

    pub fn step_key(&self) -> StepKey {
        StepKey {
            dialogue_id: self.dialogue_id.clone(),
            turn_id: self.turn_id,
            turn_units: self.turn_range(),
        }
    }

    /// Checks the structural invariants against window size `window`.
    pub fn check(&self, window: usize) -> Result<(), String> {
        let (l, m) = (self.window_start(), self.window_end());
        if self.window_units.is_empty() {
            return Err("empty window".into());
        }
        if m - l > window {
            return Err(format!("window span {} exceeds {window}", m - l));
        }
        if self.window_units.iter().enumerate().any(|(n, u)| u.index != l + n) {
            return Err("window units are not contiguous".into());
        }
        if !(l..=m).contains(&self.turn_start) {
            return Err("turn start outside window".into());
        }
        if self.current_turn_units().iter().any(|u| u.turn_id != self.turn_id) {
            return Err("current turn units disagree on turn id".into());
        }
        for rel in &self.context {
            if rel.source < l || rel.target > m || rel.source >= rel.target {
                return Err(format!("context relation {rel} outside window {l}..={m}"));
            }
        }
        Ok(())
    }
}

/// Builds the sample for `turn_id`. Context comes from `gold` or from
/// `accumulated` according to `cfg.mode`, restricted to relations whose two
/// endpoints are visible and precede the current turn.
pub fn build_sample(
    dialogue: &Dialogue,
    turn_id: usize,
    accumulated: &DiscourseGraph,
    cfg: &EngineConfig,
) -> Result<Sample, EngineError> {
    let turns = dialogue.turns();
    let Some((_, range)) = turns.iter().find(|(t, _)| *t == turn_id) else {
        let past_end = turns.last().is_none_or(|(t, _)| turn_id > *t);
        let dialogue_id = dialogue.id().to_string();
        return Err(if past_end {
            EngineError::TurnOutOfRange { dialogue_id, turn_id }
        } else {
            EngineError::EmptyTurn { dialogue_id, turn_id }
        });
    };
    let m = *range.end();
    let l = m.saturating_sub(cfg.window);
    // A turn longer than the window only shows its visible tail.
    let turn_start = (*range.start()).max(l);
    let source = match cfg.mode {
        ContextMode::Gold => &dialogue.graph,
        ContextMode::Predicted => accumulated,
    };
    let context = source
        .iter()
        .filter(|r| r.source >= l && r.target < turn_start)
        .cloned()
        .collect();
    Ok(Sample {
        dialogue_id: dialogue.id().to_string(),
        turn_id,
        mode: cfg.mode,
        window_units: dialogue.units[l..=m].to_vec(),
        context,
        turn_start,
    })
}

fn one_line(text: &str) -> String {
    text.split(['\r', '\n']).filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ")
}

/// Fills `{name}` placeholders in one left-to-right pass, so substituted
/// text is never rescanned.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = values.iter().find(|(name, _)| {
            tail[1..].starts_with(name) && tail[1 + name.len()..].starts_with('}')
        });
        match hit {
            Some((name, value)) => {
                out.push_str(value);
                rest = &tail[name.len() + 2..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Renders a sample as prompt text. Equal samples give identical bytes.
pub fn serialize_sample(sample: &Sample) -> String {
    let units = sample
        .window_units
        .iter()
        .map(|u| format!("{} [{}] {}: {}", u.index, u.kind, one_line(&u.speaker), one_line(&u.text)))
        .collect::<Vec<_>>()
        .join("\n");
    let mut context = sample.context.clone();
    context.sort();
    let structure = if context.is_empty() {
        String::new()
    } else {
        format!(" {}", format_tokens(&context))
    };
    let new = sample
        .current_turn_units()
        .iter()
        .map(|u| u.index.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    fill(
        PROMPT_TEMPLATE,
        &[("units", &units), ("structure", &structure), ("new", &new)],
    )
}

/// Everything that happened at one step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub sample: Sample,
    pub raw_output: String,
    pub accepted: Vec<RelationInstance>,
    pub rejected: Vec<Rejection>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueRun {
    pub dialogue_id: String,
    pub graph: DiscourseGraph,
    pub steps: Vec<StepRecord>,
    /// Set when the backend gave up; `steps` holds what completed before.
    pub failure: Option<String>,
}

/// Rewrites each sample before it is serialized; used by the ablations.
pub type SampleHook<'a> = &'a (dyn Fn(Sample) -> Sample + Sync);

/// Runs the backend on one prepared sample.
pub fn run_step(
    step: usize,
    sample: Sample,
    backend: &dyn Backend,
    cfg: &EngineConfig,
) -> Result<StepRecord, BackendError> {
    let request = GenerationRequest::new(
        serialize_sample(&sample),
        cfg.max_new_tokens,
        cfg.temperature,
        cfg.stop.clone(),
    )?;
    let raw_output = backend.generate(&request, &sample.step_key())?;
    let parsed = parse_output(&raw_output, &sample, &cfg.taxonomy);
    Ok(StepRecord {
        step,
        sample,
        raw_output,
        accepted: parsed.accepted,
        rejected: parsed.rejected,
    })
}

/// Walks the turns of `dialogue` in order; the dialogue's own graph is the
/// gold structure.
pub fn run_dialogue(
    dialogue: &Dialogue,
    backend: &dyn Backend,
    cfg: &EngineConfig,
    hook: Option<SampleHook<'_>>,
) -> DialogueRun {
    let mut graph = DiscourseGraph::new(dialogue.id(), dialogue.len());
    let mut steps = Vec::new();
    let mut failure = None;
    for (step, (turn_id, _)) in dialogue.turns().into_iter().enumerate() {
        let sample = build_sample(dialogue, turn_id, &graph, cfg).expect("turn taken from the dialogue");
        let sample = match hook {
            Some(h) => h(sample),
            None => sample,
        };
        match run_step(step, sample, backend, cfg) {
            Ok(record) => {
                for rel in &record.accepted {
                    graph.insert(rel.clone()).expect("accepted relations are in range and ordered");
                }
                steps.push(record);
            }
            Err(e) => {
                tracing::warn!(dialogue = dialogue.id(), step, error = %e, "dialogue aborted");
                failure = Some(e.to_string());
                break;
            }
        }
    }
    DialogueRun {
        dialogue_id: dialogue.id().to_string(),
        graph,
        steps,
        failure,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusRun {
    pub runs: BTreeMap<String, DialogueRun>,
}

impl CorpusRun {
    pub fn graphs(&self) -> BTreeMap<String, DiscourseGraph> {
        self.runs.iter().map(|(id, r)| (id.clone(), r.graph.clone())).collect()
    }

    pub fn failures(&self) -> Vec<(&str, &str)> {
        self.runs
            .values()
            .filter_map(|r| r.failure.as_deref().map(|f| (r.dialogue_id.as_str(), f)))
            .collect()
    }

    /// All step records, ordered by dialogue id then step.
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.runs.values().flat_map(|r| r.steps.iter())
    }
}

/// Runs every dialogue on a pool of `parallelism` threads. The result does
/// not depend on `parallelism`.
pub fn run_corpus(
    dialogues: &[Dialogue],
    backend: &dyn Backend,
    cfg: &EngineConfig,
    parallelism: usize,
    hook: Option<SampleHook<'_>>,
) -> Result<CorpusRun, EngineError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| EngineError::Config(e.to_string()))?;
    let runs = pool.install(|| {
        dialogues
            .par_iter()
            .map(|d| (d.id().to_string(), run_dialogue(d, backend, cfg, hook)))
            .collect()
    });
    Ok(CorpusRun { runs })
}
