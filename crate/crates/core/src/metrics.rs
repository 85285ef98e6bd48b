//! Scoring of predicted graphs against gold.
//!
//! Counts are pooled over all dialogues before any ratio is taken. Link
//! scoring compares unit pairs and ignores labels; link+relation scoring
//! compares full triples and reports a gold-support weighted F1 over types.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DiscourseGraph, RelationInstance};
use crate::taxonomy::{Label, Taxonomy};

/// Pooling strategy named in every report header.
pub const POOLING: &str = "corpus-micro";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("gold and predictions cover different dialogues (missing from predictions: {missing:?}; not in gold: {extra:?})")]
    MismatchedDialogues { missing: Vec<String>, extra: Vec<String> },
    #[error("label {0} is not in the taxonomy")]
    UnknownLabel(String),
    #[error("max_distance must be at least 1")]
    BadMaxDistance,
}

pub type Graphs = BTreeMap<String, DiscourseGraph>;

/// Precision, recall and F1 with the counts behind them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// No gold instances survived filtering, so recall is undefined and
    /// reported as 0.
    pub vacuous: bool,
}

pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Score {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Score {
            precision,
            recall,
            f1: harmonic(precision, recall),
            tp,
            fp,
            fn_,
            vacuous: tp + fn_ == 0,
        }
    }

    pub fn gold_support(&self) -> usize {
        self.tp + self.fn_
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    #[serde(flatten)]
    pub score: Score,
    pub gold_support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkRelScore {
    /// Pooled precision and recall; `f1` is the support-weighted mean of the
    /// per-type F1 values.
    #[serde(flatten)]
    pub score: Score,
    /// Harmonic mean of the pooled precision and recall.
    pub micro_f1: f64,
    pub per_type: BTreeMap<Label, TypeScore>,
}

fn check_same_dialogues(gold: &Graphs, pred: &Graphs) -> Result<(), MetricsError> {
    let missing: Vec<String> = gold.keys().filter(|k| !pred.contains_key(*k)).cloned().collect();
    let extra: Vec<String> = pred.keys().filter(|k| !gold.contains_key(*k)).cloned().collect();
    if missing.is_empty() && extra.is_empty() {
        Ok(())
    } else {
        Err(MetricsError::MismatchedDialogues { missing, extra })
    }
}

/// `usize::MAX` is treated as no cutoff.
fn keep(cutoff: Option<usize>) -> impl Fn(&&RelationInstance) -> bool {
    move |r| cutoff.is_none_or(|c| r.distance() <= c)
}

fn pairs(graph: &DiscourseGraph, cutoff: Option<usize>) -> BTreeSet<(usize, usize)> {
    graph.iter().filter(keep(cutoff)).map(RelationInstance::pair).collect()
}

fn triples(graph: &DiscourseGraph, cutoff: Option<usize>) -> BTreeSet<&RelationInstance> {
    graph.iter().filter(keep(cutoff)).collect()
}

/// Micro-averaged link score. A pair counts once however many labels it
/// carries.
pub fn link_f1(gold: &Graphs, pred: &Graphs, cutoff: Option<usize>) -> Result<Score, MetricsError> {
    check_same_dialogues(gold, pred)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (id, g) in gold {
        let g = pairs(g, cutoff);
        let p = pairs(&pred[id], cutoff);
        let hits = g.intersection(&p).count();
        tp += hits;
        fp += p.len() - hits;
        fn_ += g.len() - hits;
    }
    Ok(Score::from_counts(tp, fp, fn_))
}

/// Link+relation score over `(label, i, j)` triples with a per-type table.
pub fn link_rel_f1(gold: &Graphs, pred: &Graphs, cutoff: Option<usize>) -> Result<LinkRelScore, MetricsError> {
    check_same_dialogues(gold, pred)?;
    let mut counts: BTreeMap<Label, (usize, usize, usize)> = BTreeMap::new();
    for (id, g) in gold {
        let g = triples(g, cutoff);
        let p = triples(&pred[id], cutoff);
        for r in &g {
            let c = counts.entry(r.label.clone()).or_default();
            if p.contains(r) {
                c.0 += 1;
            } else {
                c.2 += 1;
            }
        }
        for r in p.difference(&g) {
            counts.entry(r.label.clone()).or_default().1 += 1;
        }
    }

    let per_type: BTreeMap<Label, TypeScore> = counts
        .into_iter()
        .map(|(label, (tp, fp, fn_))| {
            let score = Score::from_counts(tp, fp, fn_);
            (
                label,
                TypeScore {
                    gold_support: score.gold_support(),
                    score,
                },
            )
        })
        .collect();
    let (tp, fp, fn_) = per_type.values().fold((0, 0, 0), |(a, b, c), t| {
        (a + t.score.tp, b + t.score.fp, c + t.score.fn_)
    });
    let pooled = Score::from_counts(tp, fp, fn_);
    let support: usize = per_type.values().map(|t| t.gold_support).sum();
    let weighted = if support == 0 {
        0.0
    } else {
        per_type
            .values()
            .map(|t| t.gold_support as f64 * t.score.f1)
            .sum::<f64>()
            / support as f64
    };
    Ok(LinkRelScore {
        micro_f1: pooled.f1,
        score: Score { f1: weighted, ..pooled },
        per_type,
    })
}

/// F1 of one label at each exact distance `1..=max_distance`. A bucket with
/// neither gold nor predicted instances is `None` (printed as n/a). No
/// cutoff applies here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceTable {
    pub label: Label,
    pub buckets: Vec<DistanceBucket>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceBucket {
    pub distance: usize,
    pub gold: usize,
    pub predicted: usize,
    pub f1: Option<f64>,
}

pub fn distance_breakdown(
    gold: &Graphs,
    pred: &Graphs,
    label: &Label,
    max_distance: usize,
    taxonomy: &Taxonomy,
) -> Result<DistanceTable, MetricsError> {
    check_same_dialogues(gold, pred)?;
    if !taxonomy.contains(label) {
        return Err(MetricsError::UnknownLabel(label.to_string()));
    }
    if max_distance == 0 {
        return Err(MetricsError::BadMaxDistance);
    }
    // (tp, gold, predicted) per distance.
    let mut counts = vec![(0usize, 0usize, 0usize); max_distance + 1];
    for (id, g) in gold {
        let of_label = |graph: &DiscourseGraph| -> BTreeSet<(usize, usize)> {
            graph
                .iter()
                .filter(|r| r.label == *label && r.distance() <= max_distance)
                .map(RelationInstance::pair)
                .collect()
        };
        let g = of_label(g);
        let p = of_label(&pred[id]);
        for &(i, j) in &g {
            counts[j - i].1 += 1;
            if p.contains(&(i, j)) {
                counts[j - i].0 += 1;
            }
        }
        for &(i, j) in &p {
            counts[j - i].2 += 1;
        }
    }
    let buckets = (1..=max_distance)
        .map(|d| {
            let (tp, g, p) = counts[d];
            let f1 = (g + p > 0).then(|| Score::from_counts(tp, p - tp, g - tp).f1);
            DistanceBucket {
                distance: d,
                gold: g,
                predicted: p,
                f1,
            }
        })
        .collect();
    Ok(DistanceTable {
        label: label.clone(),
        buckets,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub cutoff: Option<usize>,
    /// `(label, max_distance)` breakdowns to include.
    pub breakdowns: Vec<(Label, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pooling: String,
    pub taxonomy: String,
    pub cutoff: Option<usize>,
    pub dialogues: usize,
    pub link: Score,
    pub link_rel: Score,
    pub link_rel_micro_f1: f64,
    pub per_type: BTreeMap<Label, TypeScore>,
    pub per_distance: Vec<DistanceTable>,
}

pub fn evaluate(
    gold: &Graphs,
    pred: &Graphs,
    taxonomy: &Taxonomy,
    options: &EvalOptions,
) -> Result<EvalReport, MetricsError> {
    let cutoff = options.cutoff.filter(|&c| c != usize::MAX);
    let link = link_f1(gold, pred, cutoff)?;
    let rel = link_rel_f1(gold, pred, cutoff)?;
    let per_distance = options
        .breakdowns
        .iter()
        .map(|(label, max)| distance_breakdown(gold, pred, label, *max, taxonomy))
        .collect::<Result<_, _>>()?;
    Ok(EvalReport {
        pooling: POOLING.to_string(),
        taxonomy: taxonomy.id().to_string(),
        cutoff,
        dialogues: gold.len(),
        link,
        link_rel: rel.score,
        link_rel_micro_f1: rel.micro_f1,
        per_type: rel.per_type,
        per_distance,
    })
}
