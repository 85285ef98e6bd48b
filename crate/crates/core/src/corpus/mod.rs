//! Corpus loading, persistence and statistics.
//!
//! All external annotation formats are converted into [`RawDialogue`]s, which
//! mirror the canonical line-delimited JSON interchange format one to one.

mod canonical;
mod glozz;
mod msdc;
mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DiscourseGraph, ElementaryUnit, GraphError, RelationInstance, UnitKind};
use crate::taxonomy::{Label, Taxonomy, TaxonomyError};

pub use canonical::{read_canonical, write_canonical, CORPUS_FORMAT, CORPUS_VERSION};
pub(crate) use canonical::write_line;
pub use stats::{corpus_stats, dialogue_stats, CorpusStats};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation in dialogue {dialogue_id:?}: {detail}")]
    Schema { dialogue_id: String, detail: String },
    #[error("dialogue {dialogue_id:?}: unknown relation label {label:?} for taxonomy {taxonomy}")]
    UnknownLabel {
        dialogue_id: String,
        label: String,
        taxonomy: String,
    },
    #[error("{path}: line {line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("duplicate dialogue id {0:?}")]
    DuplicateDialogue(String),
    #[error("dialogue {0:?} still contains CDUs; flatten it first")]
    CdusPresent(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

impl CorpusError {
    pub(crate) fn schema(dialogue_id: &str, detail: impl Into<String>) -> Self {
        CorpusError::Schema {
            dialogue_id: dialogue_id.to_string(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// A relation endpoint in raw data: either a unit index or a CDU id.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Endpoint {
    Unit(usize),
    Cdu(String),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Unit(i) => write!(f, "{i}"),
            Endpoint::Cdu(id) => f.write_str(id),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RawRelation {
    pub label: Label,
    pub src: Endpoint,
    pub tgt: Endpoint,
}

impl RawRelation {
    pub fn units(label: Label, src: usize, tgt: usize) -> Self {
        RawRelation {
            label,
            src: Endpoint::Unit(src),
            tgt: Endpoint::Unit(tgt),
        }
    }
}

impl fmt::Display for RawRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({},{})", self.label, self.src, self.tgt)
    }
}

impl From<&RelationInstance> for RawRelation {
    fn from(rel: &RelationInstance) -> Self {
        RawRelation::units(rel.label.clone(), rel.source, rel.target)
    }
}

/// Complex discourse unit: a group of units and/or nested CDUs acting as a
/// single relation argument.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cdu {
    pub id: String,
    pub members: Vec<Endpoint>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDialogue {
    pub id: String,
    pub units: Vec<ElementaryUnit>,
    pub relations: Vec<RawRelation>,
    #[serde(default)]
    pub cdus: Vec<Cdu>,
}

/// A dialogue with no CDUs left: units plus their discourse graph. This is
/// the input of the engine and of the flattened preprocessing stages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dialogue {
    pub units: Vec<ElementaryUnit>,
    pub graph: DiscourseGraph,
}

impl Dialogue {
    pub fn id(&self) -> &str {
        self.graph.dialogue_id()
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Turns in dialogue order, each as `(turn_id, first_unit..=last_unit)`.
    pub fn turns(&self) -> Vec<(usize, std::ops::RangeInclusive<usize>)> {
        let mut turns: Vec<(usize, std::ops::RangeInclusive<usize>)> = Vec::new();
        for unit in &self.units {
            match turns.last_mut() {
                Some((turn, range)) if *turn == unit.turn_id => {
                    *range = *range.start()..=unit.index;
                }
                _ => turns.push((unit.turn_id, unit.index..=unit.index)),
            }
        }
        turns
    }

    pub fn to_raw(&self) -> RawDialogue {
        RawDialogue {
            id: self.id().to_string(),
            units: self.units.clone(),
            relations: self.graph.iter().map(RawRelation::from).collect(),
            cdus: Vec::new(),
        }
    }
}

impl RawDialogue {
    /// Checks the structural invariants of a raw dialogue and that every
    /// label belongs to `taxonomy`.
    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), CorpusError> {
        let id = self.id.as_str();
        let mut last_turn = 0;
        for (n, unit) in self.units.iter().enumerate() {
            if unit.index != n {
                return Err(CorpusError::schema(
                    id,
                    format!("unit at position {n} has idx {}, expected {n}", unit.index),
                ));
            }
            if unit.turn_id < last_turn {
                return Err(CorpusError::schema(
                    id,
                    format!("unit {n} has turn {} after turn {last_turn}", unit.turn_id),
                ));
            }
            last_turn = unit.turn_id;
            if unit.text.is_empty() {
                return Err(CorpusError::schema(id, format!("unit {n} has empty text")));
            }
        }

        let cdus = self.cdu_index()?;
        for (cdu_id, cdu) in &cdus {
            if cdu.members.is_empty() {
                return Err(CorpusError::schema(id, format!("CDU {cdu_id} has no members")));
            }
            for m in &cdu.members {
                self.check_endpoint(m, &cdus, &format!("CDU {cdu_id}"))?;
            }
        }
        if let Some(cyclic) = cdu_cycle(&cdus) {
            return Err(CorpusError::schema(
                id,
                format!("CDU {cyclic} contains itself"),
            ));
        }

        for rel in &self.relations {
            if !taxonomy.contains(&rel.label) {
                return Err(CorpusError::UnknownLabel {
                    dialogue_id: self.id.clone(),
                    label: rel.label.to_string(),
                    taxonomy: taxonomy.id().to_string(),
                });
            }
            let what = format!("relation {rel}");
            self.check_endpoint(&rel.src, &cdus, &what)?;
            self.check_endpoint(&rel.tgt, &cdus, &what)?;
            if let (Endpoint::Unit(s), Endpoint::Unit(t)) = (&rel.src, &rel.tgt) {
                if s >= t {
                    return Err(CorpusError::schema(
                        id,
                        format!("{what} does not point forward"),
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_endpoint(
        &self,
        e: &Endpoint,
        cdus: &BTreeMap<&str, &Cdu>,
        what: &str,
    ) -> Result<(), CorpusError> {
        match e {
            Endpoint::Unit(i) if *i >= self.units.len() => Err(CorpusError::schema(
                &self.id,
                format!("{what} references missing unit {i}"),
            )),
            Endpoint::Cdu(c) if !cdus.contains_key(c.as_str()) => Err(CorpusError::schema(
                &self.id,
                format!("{what} references missing CDU {c}"),
            )),
            _ => Ok(()),
        }
    }

    pub(crate) fn cdu_index(&self) -> Result<BTreeMap<&str, &Cdu>, CorpusError> {
        let mut index = BTreeMap::new();
        for cdu in &self.cdus {
            if cdu.id.is_empty() || cdu.id.bytes().all(|b| b.is_ascii_digit()) {
                return Err(CorpusError::schema(
                    &self.id,
                    format!("CDU id {:?} collides with unit indices", cdu.id),
                ));
            }
            if index.insert(cdu.id.as_str(), cdu).is_some() {
                return Err(CorpusError::schema(
                    &self.id,
                    format!("duplicate CDU id {}", cdu.id),
                ));
            }
        }
        Ok(index)
    }

    /// Converts to a [`Dialogue`]. Fails if any CDU or CDU reference remains
    /// or a relation is malformed.
    pub fn to_dialogue(&self) -> Result<Dialogue, CorpusError> {
        if !self.cdus.is_empty() {
            return Err(CorpusError::CdusPresent(self.id.clone()));
        }
        let mut graph = DiscourseGraph::new(self.id.clone(), self.units.len());
        for rel in &self.relations {
            match (&rel.src, &rel.tgt) {
                (Endpoint::Unit(s), Endpoint::Unit(t)) => {
                    let inst = RelationInstance::unchecked(rel.label.clone(), *s, *t);
                    graph.insert(inst).map_err(|e: GraphError| {
                        CorpusError::schema(&self.id, e.to_string())
                    })?;
                }
                _ => return Err(CorpusError::CdusPresent(self.id.clone())),
            }
        }
        Ok(Dialogue {
            units: self.units.clone(),
            graph,
        })
    }

    pub fn count_kind(&self, kind: UnitKind) -> usize {
        self.units.iter().filter(|u| u.kind == kind).count()
    }
}

fn cdu_cycle(cdus: &BTreeMap<&str, &Cdu>) -> Option<String> {
    // 0 = unvisited, 1 = on stack, 2 = done
    fn visit<'a>(
        id: &'a str,
        cdus: &BTreeMap<&'a str, &'a Cdu>,
        state: &mut BTreeMap<&'a str, u8>,
    ) -> Option<String> {
        match state.get(id) {
            Some(1) => return Some(id.to_string()),
            Some(2) => return None,
            _ => {}
        }
        state.insert(id, 1);
        if let Some(cdu) = cdus.get(id) {
            for m in &cdu.members {
                if let Endpoint::Cdu(child) = m {
                    if let Some((k, _)) = cdus.get_key_value(child.as_str()) {
                        if let Some(c) = visit(k, cdus, state) {
                            return Some(c);
                        }
                    }
                }
            }
        }
        state.insert(id, 2);
        None
    }
    let mut state = BTreeMap::new();
    cdus.keys().find_map(|id| visit(id, cdus, &mut state))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub split: Split,
    pub taxonomy: Taxonomy,
    pub dialogues: Vec<RawDialogue>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, split: Split, taxonomy: Taxonomy) -> Self {
        Corpus {
            name: name.into(),
            split,
            taxonomy,
            dialogues: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut ids = BTreeSet::new();
        for d in &self.dialogues {
            if !ids.insert(d.id.as_str()) {
                return Err(CorpusError::DuplicateDialogue(d.id.clone()));
            }
            d.validate(&self.taxonomy)?;
        }
        Ok(())
    }

    /// All dialogues as CDU-free [`Dialogue`]s.
    pub fn flat_dialogues(&self) -> Result<Vec<Dialogue>, CorpusError> {
        self.dialogues.iter().map(RawDialogue::to_dialogue).collect()
    }

    /// Gold graphs keyed by dialogue id.
    pub fn gold_graphs(&self) -> Result<BTreeMap<String, DiscourseGraph>, CorpusError> {
        self.dialogues
            .iter()
            .map(|d| Ok((d.id.clone(), d.to_dialogue()?.graph)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    Canonical,
    StacGlozz,
    Msdc,
    Molweni,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical" => Ok(CorpusFormat::Canonical),
            "stac_glozz" | "stac-glozz" | "glozz" => Ok(CorpusFormat::StacGlozz),
            "msdc" => Ok(CorpusFormat::Msdc),
            "molweni" => Ok(CorpusFormat::Molweni),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

/// Why an adapter or preprocessing stage dropped an annotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    UnknownLabel,
    DanglingEndpoint,
    BackwardRelation,
    SelfLoop,
    Duplicate,
    IsolatedEeu,
    EmptyUnit,
    UnsupportedAnnotation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discard {
    pub dialogue_id: String,
    pub stage: String,
    pub reason: DiscardReason,
    pub detail: String,
}

impl Discard {
    pub fn new(
        dialogue_id: &str,
        stage: &str,
        reason: DiscardReason,
        detail: impl Into<String>,
    ) -> Self {
        let d = Discard {
            dialogue_id: dialogue_id.to_string(),
            stage: stage.to_string(),
            reason,
            detail: detail.into(),
        };
        tracing::debug!(dialogue = %d.dialogue_id, stage = %d.stage, reason = ?d.reason, detail = %d.detail, "discarded annotation");
        d
    }
}

/// Per-reason discard counts.
pub fn summarize_discards(discards: &[Discard]) -> BTreeMap<DiscardReason, usize> {
    let mut out = BTreeMap::new();
    for d in discards {
        *out.entry(d.reason).or_insert(0) += 1;
    }
    out
}

/// Options for adapters of non-canonical formats, which carry no header.
#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub name: Option<String>,
    pub split: Split,
    pub taxonomy: Option<Taxonomy>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            name: None,
            split: Split::Test,
            taxonomy: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoadOutcome {
    pub corpus: Corpus,
    /// Every annotation the adapter could not carry over.
    pub discards: Vec<Discard>,
}

/// Loads a corpus from `path` in the given format. The result always
/// satisfies [`Corpus::validate`].
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    options: &LoadOptions,
) -> Result<LoadOutcome, CorpusError> {
    let outcome = match format {
        CorpusFormat::Canonical => LoadOutcome {
            corpus: read_canonical(path)?,
            discards: Vec::new(),
        },
        CorpusFormat::Molweni => {
            let mut corpus = read_canonical(path)?;
            if options.taxonomy.is_some() || corpus.taxonomy.id() != "molweni" {
                tracing::warn!(taxonomy = corpus.taxonomy.id(), "molweni input carries a non-molweni taxonomy");
            }
            if let Some(name) = &options.name {
                corpus.name = name.clone();
            }
            LoadOutcome {
                corpus,
                discards: Vec::new(),
            }
        }
        CorpusFormat::Msdc => msdc::load(path, options)?,
        CorpusFormat::StacGlozz => glozz::load(path, options)?,
    };
    outcome.corpus.validate()?;
    Ok(outcome)
}

/// Writes `corpus` in the canonical format.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    write_canonical(corpus, path)
}

/// Speaker-change turn segmentation for sources that carry no turn ids.
pub(crate) fn turns_from_speakers<'a>(speakers: impl IntoIterator<Item = &'a str>) -> Vec<usize> {
    let mut turns = Vec::new();
    let mut turn = 0;
    let mut last: Option<&str> = None;
    for s in speakers {
        if let Some(prev) = last {
            if prev != s {
                turn += 1;
            }
        }
        turns.push(turn);
        last = Some(s);
    }
    turns
}
