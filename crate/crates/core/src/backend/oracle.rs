use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Backend, BackendError, GenerationRequest, StepKey};
use crate::graph::{format_tokens, DiscourseGraph, RelationInstance};
use crate::seeding::step_rng;
use crate::taxonomy::{Label, Taxonomy};

/// Replays the gold relations that target the current turn, ignoring the
/// prompt.
#[derive(Clone, Debug, Default)]
pub struct OracleBackend {
    gold: BTreeMap<String, DiscourseGraph>,
}

impl OracleBackend {
    pub fn new(gold: impl IntoIterator<Item = (String, DiscourseGraph)>) -> Self {
        OracleBackend {
            gold: gold.into_iter().collect(),
        }
    }

    fn targeting_turn(&self, step: &StepKey) -> Result<Vec<RelationInstance>, BackendError> {
        let graph = self
            .gold
            .get(&step.dialogue_id)
            .ok_or_else(|| BackendError::UnknownDialogue(step.dialogue_id.clone()))?;
        Ok(graph
            .iter()
            .filter(|r| step.turn_units.contains(&r.target))
            .cloned()
            .collect())
    }
}

impl Backend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn generate(&self, _: &GenerationRequest, step: &StepKey) -> Result<String, BackendError> {
        Ok(format_tokens(&self.targeting_turn(step)?))
    }
}

/// Gold replay with independent per-relation noise: each relation is dropped
/// with probability `p_drop`, and each survivor is relabeled with
/// probability `p_relabel` to a uniformly chosen different label. The
/// random stream of a step depends only on the seed, dialogue and turn.
#[derive(Clone, Debug)]
pub struct NoisyOracleBackend {
    oracle: OracleBackend,
    labels: Vec<Label>,
    p_drop: f64,
    p_relabel: f64,
    seed: u64,
}

impl NoisyOracleBackend {
    pub fn new(
        gold: impl IntoIterator<Item = (String, DiscourseGraph)>,
        taxonomy: &Taxonomy,
        p_drop: f64,
        p_relabel: f64,
        seed: u64,
    ) -> Result<Self, BackendError> {
        for (name, p) in [("p_drop", p_drop), ("p_relabel", p_relabel)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(BackendError::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(NoisyOracleBackend {
            oracle: OracleBackend::new(gold),
            labels: taxonomy.codes().cloned().collect(),
            p_drop,
            p_relabel,
            seed,
        })
    }
}

impl Backend for NoisyOracleBackend {
    fn name(&self) -> &str {
        "noisy"
    }

    fn generate(&self, _: &GenerationRequest, step: &StepKey) -> Result<String, BackendError> {
        let mut rng = step_rng(self.seed, &step.dialogue_id, step.turn_id as u64);
        let mut out = Vec::new();
        for mut rel in self.oracle.targeting_turn(step)? {
            if rng.gen_bool(self.p_drop) {
                continue;
            }
            if rng.gen_bool(self.p_relabel) {
                let others: Vec<&Label> = self.labels.iter().filter(|l| **l != rel.label).collect();
                if let Some(&label) = others.choose(&mut rng) {
                    rel.label = label.clone();
                }
            }
            out.push(rel);
        }
        out.sort();
        Ok(format_tokens(&out))
    }
}
