//! Context perturbations for probing how much the parser relies on the
//! structure it is shown, and the Narration second pass.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Sample;
use crate::graph::{DiscourseGraph, ElementaryUnit, RelationInstance, UnitKind};
use crate::metrics::Graphs;
use crate::seeding::step_rng;
use crate::taxonomy::{Label, Taxonomy, QUESTION_CODES};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AblationError {
    #[error("sample for dialogue {0:?} has no matching {1} graph")]
    Missing(String, &'static str),
}

fn label(code: &str) -> Label {
    Label::new(code).expect("built-in code")
}

/// Replaces every context relation by one with a uniform label and uniform
/// endpoints `i < j` among the units before the current turn. The number of
/// relations is kept; the draw depends only on `seed`, the dialogue and the
/// turn.
pub fn perturb_random(sample: &Sample, taxonomy: &Taxonomy, seed: u64) -> Sample {
    let mut out = sample.clone();
    let l = sample.window_start();
    let span = sample.turn_start - l;
    let labels: Vec<&Label> = taxonomy.codes().collect();
    if span < 2 || labels.is_empty() {
        // Nothing can legally sit here; context is necessarily empty.
        return out;
    }
    let mut rng = step_rng(seed, &sample.dialogue_id, sample.turn_id as u64);
    for rel in &mut out.context {
        let a = rng.gen_range(0..span);
        let mut b = rng.gen_range(0..span - 1);
        if b >= a {
            b += 1;
        }
        let code = *labels.choose(&mut rng).expect("non-empty");
        *rel = RelationInstance::unchecked(code.clone(), l + a.min(b), l + a.max(b));
    }
    out
}

pub fn strip_structure(sample: &Sample) -> Sample {
    Sample {
        context: Vec::new(),
        ..sample.clone()
    }
}

/// Gold relations predicted for the sample's current turn.
fn correct_in_turn<'a>(
    sample: &Sample,
    predicted: &'a Graphs,
    gold: &Graphs,
) -> Result<Vec<&'a RelationInstance>, AblationError> {
    let id = &sample.dialogue_id;
    let pred = predicted.get(id).ok_or_else(|| AblationError::Missing(id.clone(), "predicted"))?;
    let gold = gold.get(id).ok_or_else(|| AblationError::Missing(id.clone(), "gold"))?;
    let turn = sample.turn_range();
    Ok(pred.iter().filter(|r| turn.contains(&r.target) && gold.contains(r)).collect())
}

/// Samples whose turn received a correct QAP prediction, with every
/// question relation removed from their context.
pub fn ablate_qap(samples: &[Sample], predicted: &Graphs, gold: &Graphs) -> Result<Vec<Sample>, AblationError> {
    let qap = label("QAP");
    let questions: Vec<Label> = QUESTION_CODES.iter().map(|c| label(c)).collect();
    let mut out = Vec::new();
    for sample in samples {
        if correct_in_turn(sample, predicted, gold)?.iter().any(|r| r.label == qap) {
            let mut edited = sample.clone();
            edited.context.retain(|r| !questions.contains(&r.label));
            out.push(edited);
        }
    }
    Ok(out)
}

/// A correction triangle `CORR(x,y)`, `RES(y,z)`, `CORR(x,z)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triangle {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

/// Triangles closed by a correct `CORR(x,z)` in the sample's turn, whose
/// `CORR(x,y)` is in the context and whose `RES(y,z)` is gold.
pub fn correction_triangles(
    sample: &Sample,
    predicted: &Graphs,
    gold: &Graphs,
) -> Result<Vec<Triangle>, AblationError> {
    let (corr, res) = (label("CORR"), label("RES"));
    let closings = correct_in_turn(sample, predicted, gold)?;
    let gold_graph = &gold[&sample.dialogue_id];
    let mut found = Vec::new();
    for closing in closings {
        if closing.label != corr {
            continue;
        }
        let (x, z) = closing.pair();
        for opening in &sample.context {
            let y = opening.target;
            if opening.label == corr
                && opening.source == x
                && gold_graph.contains(&RelationInstance::unchecked(res.clone(), y, z))
            {
                found.push(Triangle { x, y, z });
            }
        }
    }
    found.sort();
    found.dedup();
    Ok(found)
}

/// Samples containing a correction triangle, with the context `CORR(x,y)`
/// relabeled to `ACK(x,y)`. When several triangles qualify, the one with the
/// latest `y` (then `x`, then `z`) is edited, so exactly one label changes.
pub fn ablate_correction_triangle(
    samples: &[Sample],
    predicted: &Graphs,
    gold: &Graphs,
) -> Result<Vec<Sample>, AblationError> {
    let (corr, ack) = (label("CORR"), label("ACK"));
    let mut out = Vec::new();
    for sample in samples {
        let triangles = correction_triangles(sample, predicted, gold)?;
        let Some(t) = triangles.iter().max_by_key(|t| (t.y, t.x, t.z)) else {
            continue;
        };
        let mut edited = sample.clone();
        let target = RelationInstance::unchecked(corr.clone(), t.x, t.y);
        let slot = edited.context.iter_mut().find(|r| **r == target).expect("triangle came from the context");
        slot.label = ack.clone();
        out.push(edited);
    }
    Ok(out)
}

/// Units that open a new instruction segment: EDUs with an outgoing RES to
/// an EEU and no incoming NARR.
pub fn instruction_heads(graph: &DiscourseGraph, units: &[ElementaryUnit]) -> Vec<usize> {
    let (res, narr) = (label("RES"), label("NARR"));
    let narrated: BTreeSet<usize> = graph.iter().filter(|r| r.label == narr).map(|r| r.target).collect();
    let heads: BTreeSet<usize> = graph
        .iter()
        .filter(|r| {
            r.label == res
                && units.get(r.source).is_some_and(|u| u.kind == UnitKind::Edu)
                && units.get(r.target).is_some_and(|u| u.kind == UnitKind::Eeu)
                && !narrated.contains(&r.source)
        })
        .map(|r| r.source)
        .collect();
    heads.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecondPass {
    pub graph: DiscourseGraph,
    /// Edges added by the pass, in order.
    pub added: Vec<RelationInstance>,
}

/// Links consecutive instruction heads with NARR using the default head
/// rule.
pub fn second_pass_narration(graph: &DiscourseGraph, units: &[ElementaryUnit]) -> SecondPass {
    second_pass_with(graph, units, instruction_heads)
}

/// As [`second_pass_narration`] with a caller-supplied head rule.
pub fn second_pass_with(
    graph: &DiscourseGraph,
    units: &[ElementaryUnit],
    heads: impl Fn(&DiscourseGraph, &[ElementaryUnit]) -> Vec<usize>,
) -> SecondPass {
    let narr = label("NARR");
    let mut out = graph.clone();
    let mut added = Vec::new();
    let heads = heads(graph, units);
    for pair in heads.windows(2) {
        let rel = RelationInstance::unchecked(narr.clone(), pair[0], pair[1]);
        if out.insert(rel.clone()) == Ok(crate::graph::Inserted::New) {
            added.push(rel);
        }
    }
    SecondPass { graph: out, added }
}
