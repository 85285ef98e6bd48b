//! Random dialogues for testing and smoke runs.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Cdu, Corpus, Endpoint, RawDialogue, RawRelation, Split};
use crate::graph::{DiscourseGraph, ElementaryUnit, RelationInstance, UnitKind};
use crate::taxonomy::{Label, Taxonomy};

#[derive(Clone, Debug)]
pub struct SynthParams {
    pub min_units: usize,
    pub max_units: usize,
    pub max_turn_len: usize,
    pub eeu_prob: f64,
    /// Chance that a unit gets a second parent.
    pub extra_parent_prob: f64,
    /// Every relation `(i, j)` satisfies `i >= last_unit_of_turn(j) - window`,
    /// so it is visible when `j`'s turn is parsed.
    pub window: usize,
    pub taxonomy: Taxonomy,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            min_units: 8,
            max_units: 40,
            max_turn_len: 3,
            eeu_prob: 0.3,
            extra_parent_prob: 0.25,
            window: crate::engine::DEFAULT_WINDOW,
            taxonomy: Taxonomy::msdc(),
        }
    }
}

const SPEAKERS: [&str; 3] = ["Architect", "Builder", "Observer"];

fn random_units<R: Rng>(rng: &mut R, n: usize, params: &SynthParams) -> Vec<ElementaryUnit> {
    let mut units = Vec::with_capacity(n);
    let mut turn = 0;
    while units.len() < n {
        let len = rng.gen_range(1..=params.max_turn_len.max(1)).min(n - units.len());
        let speaker = SPEAKERS[rng.gen_range(0..SPEAKERS.len())];
        for _ in 0..len {
            let i = units.len();
            let (kind, text) = if rng.gen_bool(params.eeu_prob) {
                (UnitKind::Eeu, format!("place red {} {} 1", i % 5, i % 7))
            } else {
                (UnitKind::Edu, format!("message {i}"))
            };
            units.push(ElementaryUnit::new(i, kind, speaker, text, turn));
        }
        turn += 1;
    }
    units
}

fn last_unit_of_turn(units: &[ElementaryUnit]) -> Vec<usize> {
    let mut last = vec![0; units.len()];
    for i in (0..units.len()).rev() {
        last[i] = match units.get(i + 1) {
            Some(next) if next.turn_id == units[i].turn_id => last[i + 1],
            _ => i,
        };
    }
    last
}

/// A flat dialogue whose gold graph is a weakly connected DAG in which every
/// relation fits the parsing window.
pub fn random_dialogue<R: Rng>(rng: &mut R, id: &str, params: &SynthParams) -> (Vec<ElementaryUnit>, DiscourseGraph) {
    let n = rng.gen_range(params.min_units..=params.max_units.max(params.min_units));
    let units = random_units(rng, n, params);
    let last = last_unit_of_turn(&units);
    let labels: Vec<&Label> = params.taxonomy.codes().collect();
    let mut graph = DiscourseGraph::new(id, n);
    for j in 1..n {
        let lo = last[j].saturating_sub(params.window);
        let mut candidates: Vec<usize> = (lo..j).collect();
        candidates.shuffle(rng);
        let parents = if rng.gen_bool(params.extra_parent_prob) { 2 } else { 1 };
        for &i in candidates.iter().take(parents) {
            let label = (*labels.choose(rng).expect("non-empty taxonomy")).clone();
            graph.insert(RelationInstance::unchecked(label, i, j)).expect("forward and in range");
        }
    }
    (units, graph)
}

/// `count` flat dialogues named `synth-000`, `synth-001`, ...
pub fn synthetic_corpus(seed: u64, count: usize, params: &SynthParams) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Corpus::new("synthetic", Split::Test, params.taxonomy.clone());
    for n in 0..count {
        let id = format!("synth-{n:03}");
        let (units, graph) = random_dialogue(&mut rng, &id, params);
        corpus.dialogues.push(
            crate::corpus::Dialogue { units, graph }.to_raw(),
        );
    }
    corpus
}

/// A raw dialogue exercising every preprocessing stage: runs of EEUs by one
/// agent, EEUs with no relations, and nested CDUs used as endpoints.
pub fn random_raw_dialogue<R: Rng>(rng: &mut R, id: &str, params: &SynthParams) -> RawDialogue {
    let n = rng.gen_range(params.min_units.max(2)..=params.max_units.max(params.min_units.max(2)));
    let mut units = Vec::with_capacity(n);
    let mut turn = 0;
    while units.len() < n {
        let len = rng.gen_range(1..=params.max_turn_len.max(1)).min(n - units.len());
        // Some turns are a block of moves by one agent.
        let all_eeu = rng.gen_bool(params.eeu_prob);
        let speaker = if all_eeu { "Builder" } else { SPEAKERS[rng.gen_range(0..SPEAKERS.len())] };
        for _ in 0..len {
            let i = units.len();
            let eeu = all_eeu || rng.gen_bool(params.eeu_prob / 2.0);
            let kind = if eeu { UnitKind::Eeu } else { UnitKind::Edu };
            units.push(ElementaryUnit::new(i, kind, speaker, format!("u{i}"), turn));
        }
        turn += 1;
    }

    let cdu_count = rng.gen_range(0..=3.min(n / 2));
    let mut cdus: Vec<Cdu> = Vec::new();
    for k in 0..cdu_count {
        let size = rng.gen_range(1..=3);
        let mut members = Vec::new();
        for _ in 0..size {
            let m = if k > 0 && rng.gen_bool(0.3) {
                Endpoint::Cdu(format!("c{}", rng.gen_range(0..k)))
            } else {
                Endpoint::Unit(rng.gen_range(0..n))
            };
            if !members.contains(&m) {
                members.push(m);
            }
        }
        cdus.push(Cdu {
            id: format!("c{k}"),
            members,
        });
    }

    let labels: Vec<&Label> = params.taxonomy.codes().collect();
    let isolated: Vec<bool> = units.iter().map(|u| u.is_eeu() && rng.gen_bool(0.2)).collect();
    let mut relations: Vec<RawRelation> = Vec::new();
    for j in 1..n {
        if isolated[j] {
            continue;
        }
        let parents = if rng.gen_bool(params.extra_parent_prob) { 2 } else { 1 };
        for _ in 0..parents {
            let i = rng.gen_range(j.saturating_sub(params.window)..j);
            if isolated[i] {
                continue;
            }
            let label = (*labels.choose(rng).expect("non-empty taxonomy")).clone();
            let src = if !cdus.is_empty() && rng.gen_bool(0.15) {
                Endpoint::Cdu(cdus[rng.gen_range(0..cdus.len())].id.clone())
            } else {
                Endpoint::Unit(i)
            };
            let r = RawRelation {
                label,
                src,
                tgt: Endpoint::Unit(j),
            };
            if !relations.contains(&r) {
                relations.push(r);
            }
        }
    }
    RawDialogue {
        id: id.to_string(),
        units,
        relations,
        cdus,
    }
}
