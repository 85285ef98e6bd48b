//! Corpus preprocessing: CDU flattening, EEU-run compression and isolated
//! EEU pruning.
//!
//! Every stage is a pure function of one dialogue. Stages that renumber
//! units return a [`Remap`] from old to new indices; dropped annotations are
//! returned as [`Discard`] records rather than vanishing.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Dialogue, Discard, DiscardReason, Endpoint, RawDialogue};
use crate::graph::{DiscourseGraph, ElementaryUnit, RelationInstance, UnitKind};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("dialogue {dialogue_id:?}: CDU {cdu} has no members")]
    EmptyCdu { dialogue_id: String, cdu: String },
    #[error("dialogue {dialogue_id:?}: reference to undefined CDU {cdu}")]
    DanglingCdu { dialogue_id: String, cdu: String },
    #[error("dialogue {dialogue_id:?}: CDU {cdu} contains itself")]
    CduCycle { dialogue_id: String, cdu: String },
    #[error("dialogue {dialogue_id:?}: reference to missing unit {index}")]
    DanglingUnit { dialogue_id: String, index: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Old-to-new unit index mapping produced by a renumbering stage. `None`
/// marks a unit that was removed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Remap {
    map: Vec<Option<usize>>,
    new_len: usize,
}

impl Remap {
    pub fn identity(len: usize) -> Self {
        Remap {
            map: (0..len).map(Some).collect(),
            new_len: len,
        }
    }

    pub fn from_map(map: Vec<Option<usize>>) -> Self {
        let new_len = map.iter().flatten().max().map_or(0, |m| m + 1);
        Remap { map, new_len }
    }

    pub fn get(&self, old: usize) -> Option<usize> {
        self.map.get(old).copied().flatten()
    }

    pub fn old_len(&self) -> usize {
        self.map.len()
    }

    pub fn new_len(&self) -> usize {
        self.new_len
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.map
    }

    pub fn is_identity(&self) -> bool {
        self.new_len == self.map.len() && self.map.iter().enumerate().all(|(i, m)| *m == Some(i))
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Remap) -> Remap {
        Remap {
            map: self.map.iter().map(|m| m.and_then(|i| next.get(i))).collect(),
            new_len: next.new_len,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StageOutput {
    pub dialogue: Dialogue,
    pub remap: Remap,
    pub discards: Vec<Discard>,
}

/// Rewrites relations through `remap`, dropping those that collapse onto one
/// unit or repeat an existing triple.
fn rewire(
    graph: &DiscourseGraph,
    remap: &Remap,
    stage: &str,
    discards: &mut Vec<Discard>,
) -> DiscourseGraph {
    let id = graph.dialogue_id();
    let mut out = DiscourseGraph::new(id, remap.new_len());
    for rel in graph {
        let (Some(s), Some(t)) = (remap.get(rel.source), remap.get(rel.target)) else {
            discards.push(Discard::new(id, stage, DiscardReason::IsolatedEeu, format!("relation {rel} lost an endpoint")));
            continue;
        };
        if s == t {
            discards.push(Discard::new(id, stage, DiscardReason::SelfLoop, format!("{rel} collapses onto unit {s}")));
            continue;
        }
        let moved = RelationInstance::unchecked(rel.label.clone(), s, t);
        match out.insert(moved) {
            Ok(crate::graph::Inserted::New) => {}
            Ok(crate::graph::Inserted::Duplicate) => {
                discards.push(Discard::new(id, stage, DiscardReason::Duplicate, format!("{rel} duplicates an existing relation after rewiring")));
            }
            Err(e) => {
                // Remaps used here are monotone, so order violations cannot arise.
                discards.push(Discard::new(id, stage, DiscardReason::BackwardRelation, e.to_string()));
            }
        }
    }
    out
}

/// Replaces every CDU endpoint by its head, the lowest-index unit among its
/// recursive members.
pub fn flatten_cdus(raw: &RawDialogue) -> Result<(Dialogue, Vec<Discard>), PreprocessError> {
    const STAGE: &str = "flatten_cdus";
    let id = raw.id.as_str();
    let cdus: BTreeMap<&str, &[Endpoint]> =
        raw.cdus.iter().map(|c| (c.id.as_str(), c.members.as_slice())).collect();

    fn head(
        dialogue_id: &str,
        cdu: &str,
        cdus: &BTreeMap<&str, &[Endpoint]>,
        heads: &mut BTreeMap<String, usize>,
        stack: &mut BTreeSet<String>,
        unit_count: usize,
    ) -> Result<usize, PreprocessError> {
        if let Some(&h) = heads.get(cdu) {
            return Ok(h);
        }
        let members = cdus.get(cdu).ok_or_else(|| PreprocessError::DanglingCdu {
            dialogue_id: dialogue_id.to_string(),
            cdu: cdu.to_string(),
        })?;
        if members.is_empty() {
            return Err(PreprocessError::EmptyCdu {
                dialogue_id: dialogue_id.to_string(),
                cdu: cdu.to_string(),
            });
        }
        if !stack.insert(cdu.to_string()) {
            return Err(PreprocessError::CduCycle {
                dialogue_id: dialogue_id.to_string(),
                cdu: cdu.to_string(),
            });
        }
        let mut best = usize::MAX;
        for m in members.iter() {
            let h = match m {
                Endpoint::Unit(i) if *i < unit_count => *i,
                Endpoint::Unit(i) => {
                    return Err(PreprocessError::DanglingUnit {
                        dialogue_id: dialogue_id.to_string(),
                        index: *i,
                    })
                }
                Endpoint::Cdu(c) => head(dialogue_id, c, cdus, heads, stack, unit_count)?,
            };
            best = best.min(h);
        }
        stack.remove(cdu);
        heads.insert(cdu.to_string(), best);
        Ok(best)
    }

    let n = raw.units.len();
    let mut heads = BTreeMap::new();
    let mut resolve = |e: &Endpoint| -> Result<usize, PreprocessError> {
        match e {
            Endpoint::Unit(i) if *i < n => Ok(*i),
            Endpoint::Unit(i) => Err(PreprocessError::DanglingUnit {
                dialogue_id: id.to_string(),
                index: *i,
            }),
            Endpoint::Cdu(c) => head(id, c, &cdus, &mut heads, &mut BTreeSet::new(), n),
        }
    };

    let mut discards = Vec::new();
    let mut graph = DiscourseGraph::new(id, n);
    for rel in &raw.relations {
        let (s, t) = (resolve(&rel.src)?, resolve(&rel.tgt)?);
        let flat = RelationInstance::unchecked(rel.label.clone(), s, t);
        if s == t {
            discards.push(Discard::new(id, STAGE, DiscardReason::SelfLoop, format!("{rel} -> {flat}")));
        } else if s > t {
            discards.push(Discard::new(id, STAGE, DiscardReason::BackwardRelation, format!("{rel} -> {flat}")));
        } else if graph.insert(flat.clone()).expect("endpoints checked") == crate::graph::Inserted::Duplicate {
            discards.push(Discard::new(id, STAGE, DiscardReason::Duplicate, format!("{rel} -> {flat}")));
        }
    }
    // Every CDU must resolve, even those no relation mentions.
    for c in raw.cdus.iter() {
        resolve(&Endpoint::Cdu(c.id.clone()))?;
    }
    Ok((
        Dialogue {
            units: raw.units.clone(),
            graph,
        },
        discards,
    ))
}

/// Merges each maximal run of consecutive EEUs by the same agent within one
/// turn into a single EEU whose text joins the members with `"; "`.
pub fn compress_eeu_sequences(dialogue: &Dialogue) -> StageOutput {
    const STAGE: &str = "compress_eeu_sequences";
    let mut map = Vec::with_capacity(dialogue.units.len());
    let mut units: Vec<ElementaryUnit> = Vec::new();
    let mut prev: Option<&ElementaryUnit> = None;
    for unit in &dialogue.units {
        let extends_run = matches!(prev, Some(p) if p.is_eeu()
            && unit.is_eeu()
            && p.speaker == unit.speaker
            && p.turn_id == unit.turn_id);
        if extends_run {
            let merged = units.last_mut().expect("run has a head");
            merged.text.push_str("; ");
            merged.text.push_str(&unit.text);
        } else {
            let mut u = unit.clone();
            u.index = units.len();
            units.push(u);
        }
        map.push(Some(units.len() - 1));
        prev = Some(unit);
    }
    let remap = Remap::from_map(map);
    let mut discards = Vec::new();
    let graph = rewire(&dialogue.graph, &remap, STAGE, &mut discards);
    StageOutput {
        dialogue: Dialogue { units, graph },
        remap,
        discards,
    }
}

/// Removes EEUs with no undirected relation path to any EDU.
pub fn prune_isolated_eeus(dialogue: &Dialogue) -> StageOutput {
    const STAGE: &str = "prune_isolated_eeus";
    let n = dialogue.units.len();
    let mut adjacent = vec![Vec::new(); n];
    for rel in &dialogue.graph {
        adjacent[rel.source].push(rel.target);
        adjacent[rel.target].push(rel.source);
    }
    let mut reached = vec![false; n];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for u in &dialogue.units {
        if u.kind == UnitKind::Edu {
            reached[u.index] = true;
            queue.push_back(u.index);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &v in &adjacent[u] {
            if !reached[v] {
                reached[v] = true;
                queue.push_back(v);
            }
        }
    }

    let id = dialogue.id();
    let mut discards = Vec::new();
    let mut units = Vec::new();
    let mut map = Vec::with_capacity(n);
    for unit in &dialogue.units {
        if reached[unit.index] {
            let mut u = unit.clone();
            u.index = units.len();
            map.push(Some(u.index));
            units.push(u);
        } else {
            discards.push(Discard::new(id, STAGE, DiscardReason::IsolatedEeu, format!("unit {} {:?}", unit.index, unit.text)));
            map.push(None);
        }
    }
    let remap = Remap {
        new_len: units.len(),
        map,
    };
    let graph = rewire(&dialogue.graph, &remap, STAGE, &mut discards);
    StageOutput {
        dialogue: Dialogue { units, graph },
        remap,
        discards,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Msdc,
    StacSit,
    StacL,
    Molweni,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "msdc" => Ok(Profile::Msdc),
            "stac_sit" => Ok(Profile::StacSit),
            "stac_l" => Ok(Profile::StacL),
            "molweni" => Ok(Profile::Molweni),
            other => Err(format!("unknown profile {other:?}")),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Msdc => "msdc",
            Profile::StacSit => "stac_sit",
            Profile::StacL => "stac_l",
            Profile::Molweni => "molweni",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Compress,
    Prune,
}

#[derive(Clone, Debug)]
pub struct PipelineOptions {
    pub profile: Profile,
    /// Prune isolated EEUs before compressing runs (stac_sit only).
    pub prune_before_compress: bool,
}

impl PipelineOptions {
    pub fn new(profile: Profile) -> Self {
        PipelineOptions {
            profile,
            prune_before_compress: false,
        }
    }

    /// Renumbering stages applied after flattening.
    pub fn stages(&self) -> Vec<Stage> {
        match self.profile {
            Profile::Msdc => vec![Stage::Compress],
            Profile::StacSit if self.prune_before_compress => vec![Stage::Prune, Stage::Compress],
            Profile::StacSit => vec![Stage::Compress, Stage::Prune],
            Profile::StacL | Profile::Molweni => vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueRemap {
    pub id: String,
    /// Per stage, in application order.
    pub stages: Vec<(String, Remap)>,
    /// Composition of all stages.
    pub total: Remap,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub corpus: Corpus,
    pub remaps: Vec<DialogueRemap>,
    pub discards: Vec<Discard>,
}

pub fn preprocess_dialogue(
    raw: &RawDialogue,
    options: &PipelineOptions,
) -> Result<(Dialogue, DialogueRemap, Vec<Discard>), PreprocessError> {
    let (mut dialogue, mut discards) = flatten_cdus(raw)?;
    let mut total = Remap::identity(dialogue.len());
    let mut stages = Vec::new();
    for stage in options.stages() {
        let (name, out) = match stage {
            Stage::Compress => ("compress_eeu_sequences", compress_eeu_sequences(&dialogue)),
            Stage::Prune => ("prune_isolated_eeus", prune_isolated_eeus(&dialogue)),
        };
        total = total.then(&out.remap);
        stages.push((name.to_string(), out.remap));
        discards.extend(out.discards);
        dialogue = out.dialogue;
    }
    let remap = DialogueRemap {
        id: raw.id.clone(),
        stages,
        total,
    };
    Ok((dialogue, remap, discards))
}

/// Applies the profile's stages to every dialogue. Output order and content
/// do not depend on thread scheduling.
pub fn preprocess_pipeline(
    corpus: &Corpus,
    options: &PipelineOptions,
) -> Result<PipelineOutput, PreprocessError> {
    let results: Vec<_> = corpus
        .dialogues
        .par_iter()
        .map(|d| preprocess_dialogue(d, options))
        .collect::<Result<_, _>>()?;

    let mut out = Corpus::new(corpus.name.clone(), corpus.split, corpus.taxonomy.clone());
    let mut remaps = Vec::with_capacity(results.len());
    let mut discards = Vec::new();
    for (dialogue, remap, d) in results {
        out.dialogues.push(dialogue.to_raw());
        remaps.push(remap);
        discards.extend(d);
    }
    Ok(PipelineOutput {
        corpus: out,
        remaps,
        discards,
    })
}

#[derive(Serialize)]
struct RemapRecord<'a> {
    id: &'a str,
    pairs: Vec<(usize, Option<usize>)>,
}

/// Writes one JSON line per dialogue with its `[old, new]` index pairs;
/// removed units map to `null`.
pub fn write_remaps(path: &Path, remaps: &[DialogueRemap]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in remaps {
        let record = RemapRecord {
            id: &r.id,
            pairs: r.total.as_slice().iter().copied().enumerate().collect(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
