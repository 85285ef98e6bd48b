//! Adapter for the JSON distribution format used by MSDC (and the STAC JSON
//! exports that share it): a list of dialogues with `edus` and `relations`
//! given as `{"type", "x", "y"}`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{
    turns_from_speakers, Cdu, Corpus, CorpusError, Discard, DiscardReason, Endpoint, LoadOptions,
    LoadOutcome, RawDialogue, RawRelation,
};
use crate::graph::{ElementaryUnit, UnitKind};
use crate::taxonomy::Taxonomy;

const STAGE: &str = "msdc_adapter";

#[derive(Deserialize)]
struct SourceDialogue {
    id: Value,
    edus: Vec<SourceUnit>,
    #[serde(default)]
    relations: Vec<SourceRelation>,
    #[serde(default)]
    cdus: Vec<SourceCdu>,
}

#[derive(Deserialize)]
struct SourceUnit {
    speaker: String,
    text: String,
    #[serde(default)]
    turn: Option<Value>,
    #[serde(default, alias = "type")]
    kind: Option<String>,
}

#[derive(Deserialize)]
struct SourceRelation {
    #[serde(rename = "type")]
    kind: String,
    x: Value,
    y: Value,
}

#[derive(Deserialize)]
struct SourceCdu {
    id: String,
    members: Vec<Value>,
}

/// Builder moves in MSDC are textualized as `place <color> x y z` and
/// `pick <color> x y z`.
fn looks_like_builder_move(unit: &SourceUnit) -> bool {
    unit.speaker.eq_ignore_ascii_case("builder")
        && (unit.text.starts_with("place ") || unit.text.starts_with("pick "))
}

fn unit_kind(unit: &SourceUnit) -> UnitKind {
    match unit.kind.as_deref().map(str::to_ascii_uppercase).as_deref() {
        Some("EEU") => UnitKind::Eeu,
        Some("EDU") => UnitKind::Edu,
        _ if looks_like_builder_move(unit) => UnitKind::Eeu,
        _ => UnitKind::Edu,
    }
}

pub(super) fn load(path: &Path, options: &LoadOptions) -> Result<LoadOutcome, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let parse_err = |line: usize, detail: String| CorpusError::Parse {
        path: path.display().to_string(),
        line,
        detail,
    };
    let trimmed = text.trim_start();
    let sources: Vec<SourceDialogue> = if trimmed.starts_with('[') {
        serde_json::from_str(&text).map_err(|e| parse_err(e.line(), e.to_string()))?
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| parse_err(n + 1, e.to_string())))
            .collect::<Result<_, _>>()?
    };

    let taxonomy = options.taxonomy.clone().unwrap_or_else(Taxonomy::msdc);
    let name = options.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "msdc".into())
    });
    let mut corpus = Corpus::new(name, options.split, taxonomy);
    let mut discards = Vec::new();
    for source in sources {
        let dialogue = convert(source, &corpus.taxonomy, &mut discards)?;
        corpus.dialogues.push(dialogue);
    }
    Ok(LoadOutcome { corpus, discards })
}

fn id_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn convert(
    source: SourceDialogue,
    taxonomy: &Taxonomy,
    discards: &mut Vec<Discard>,
) -> Result<RawDialogue, CorpusError> {
    let id = id_string(&source.id);

    // Drop empty units, remembering where the survivors went.
    let mut remap: Vec<Option<usize>> = Vec::with_capacity(source.edus.len());
    let mut kept = Vec::new();
    for (n, unit) in source.edus.iter().enumerate() {
        if unit.text.trim().is_empty() {
            discards.push(Discard::new(&id, STAGE, DiscardReason::EmptyUnit, format!("unit {n}")));
            remap.push(None);
        } else {
            remap.push(Some(kept.len()));
            kept.push(unit);
        }
    }

    let turn_keys: Vec<String> = kept
        .iter()
        .map(|u| match &u.turn {
            Some(t) => format!("turn:{}", id_string(t)),
            None => format!("speaker:{}", u.speaker),
        })
        .collect();
    let turns = turns_from_speakers(turn_keys.iter().map(String::as_str));
    let units: Vec<ElementaryUnit> = kept
        .iter()
        .enumerate()
        .map(|(n, u)| ElementaryUnit::new(n, unit_kind(u), u.speaker.clone(), u.text.clone(), turns[n]))
        .collect();

    let cdu_ids: BTreeSet<String> = source.cdus.iter().map(|c| c.id.clone()).collect();
    let endpoint = |v: &Value| -> Option<Endpoint> {
        match v {
            Value::Number(n) => {
                let old = usize::try_from(n.as_u64()?).ok()?;
                remap.get(old).copied().flatten().map(Endpoint::Unit)
            }
            Value::String(s) if cdu_ids.contains(s) => Some(Endpoint::Cdu(s.clone())),
            Value::String(s) => {
                let old: usize = s.parse().ok()?;
                remap.get(old).copied().flatten().map(Endpoint::Unit)
            }
            _ => None,
        }
    };

    let mut cdus = Vec::new();
    for cdu in &source.cdus {
        let members: Vec<Endpoint> = cdu.members.iter().filter_map(&endpoint).collect();
        if members.len() != cdu.members.len() {
            discards.push(Discard::new(
                &id,
                STAGE,
                DiscardReason::DanglingEndpoint,
                format!("CDU {} lost {} member(s)", cdu.id, cdu.members.len() - members.len()),
            ));
        }
        cdus.push(Cdu {
            id: cdu.id.clone(),
            members,
        });
    }
    // Empty CDUs cannot head anything; drop them and what points at them.
    let mut empty: BTreeSet<String> = BTreeSet::new();
    loop {
        let newly: Vec<String> = cdus
            .iter()
            .filter(|c| c.members.is_empty() && !empty.contains(&c.id))
            .map(|c| c.id.clone())
            .collect();
        if newly.is_empty() {
            break;
        }
        empty.extend(newly);
        for c in &mut cdus {
            c.members
                .retain(|m| !matches!(m, Endpoint::Cdu(id) if empty.contains(id)));
        }
    }
    cdus.retain(|c| !empty.contains(&c.id));

    let mut relations = Vec::new();
    let mut seen = BTreeSet::new();
    for rel in &source.relations {
        let what = format!("{}({},{})", rel.kind, rel.x, rel.y);
        let label = match taxonomy.resolve(&rel.kind) {
            Ok(l) => l.code.clone(),
            Err(_) => {
                discards.push(Discard::new(&id, STAGE, DiscardReason::UnknownLabel, what));
                continue;
            }
        };
        let (src, tgt) = match (endpoint(&rel.x), endpoint(&rel.y)) {
            (Some(s), Some(t)) => (s, t),
            _ => {
                discards.push(Discard::new(&id, STAGE, DiscardReason::DanglingEndpoint, what));
                continue;
            }
        };
        if [&src, &tgt]
            .iter()
            .any(|e| matches!(e, Endpoint::Cdu(c) if empty.contains(c)))
        {
            discards.push(Discard::new(&id, STAGE, DiscardReason::DanglingEndpoint, what));
            continue;
        }
        if let (Endpoint::Unit(s), Endpoint::Unit(t)) = (&src, &tgt) {
            if s == t {
                discards.push(Discard::new(&id, STAGE, DiscardReason::SelfLoop, what));
                continue;
            }
            if s > t {
                discards.push(Discard::new(&id, STAGE, DiscardReason::BackwardRelation, what));
                continue;
            }
        }
        let raw = RawRelation { label, src, tgt };
        if !seen.insert(raw.clone()) {
            discards.push(Discard::new(&id, STAGE, DiscardReason::Duplicate, what));
            continue;
        }
        relations.push(raw);
    }

    Ok(RawDialogue {
        id,
        units,
        relations,
        cdus,
    })
}
