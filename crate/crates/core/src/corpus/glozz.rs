//! Adapter for STAC Glozz exports: an `.aa` XML annotation file next to an
//! `.ac` text file whose character offsets the annotations point into.
//!
//! `Turn` units carry the emitter; elementary units are the remaining units
//! positioned inside a turn. Turns emitted by the game server become EEUs.
//! `Dialogue` units, when present, split one document into several dialogues.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use super::{
    Cdu, Corpus, CorpusError, Discard, DiscardReason, Endpoint, LoadOptions, LoadOutcome,
    RawDialogue, RawRelation,
};
use crate::graph::{ElementaryUnit, UnitKind};
use crate::taxonomy::Taxonomy;

const STAGE: &str = "glozz_adapter";

/// Unit types that annotate material below or above the discourse level.
const NON_DISCOURSE_TYPES: [&str; 7] = [
    "Turn",
    "Dialogue",
    "paragraph",
    "Resource",
    "Preference",
    "Several_resources",
    "Anaphora",
];

const SERVER_EMITTERS: [&str; 2] = ["server", "ui"];

#[derive(Debug, Clone)]
struct Span {
    id: String,
    kind: String,
    start: usize,
    end: usize,
    features: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
struct Link {
    id: String,
    kind: String,
    terms: Vec<String>,
}

#[derive(Debug, Default)]
struct Document {
    units: Vec<Span>,
    relations: Vec<Link>,
    schemas: Vec<Link>,
}

pub(super) fn load(path: &Path, options: &LoadOptions) -> Result<LoadOutcome, CorpusError> {
    let files = annotation_files(path)?;
    let taxonomy = options.taxonomy.clone().unwrap_or_else(Taxonomy::stac);
    let name = options.name.clone().unwrap_or_else(|| "stac".into());
    let mut corpus = Corpus::new(name, options.split, taxonomy);
    let mut discards = Vec::new();
    for aa in files {
        let ac = aa.with_extension("ac");
        let xml = std::fs::read_to_string(&aa).map_err(|e| CorpusError::io(&aa, e))?;
        let text = std::fs::read_to_string(&ac).map_err(|e| CorpusError::io(&ac, e))?;
        let doc = parse_document(&xml).map_err(|detail| CorpusError::Parse {
            path: aa.display().to_string(),
            line: 0,
            detail,
        })?;
        let stem = aa
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        corpus
            .dialogues
            .extend(convert(&stem, &doc, &text, &corpus.taxonomy, &mut discards));
    }
    Ok(LoadOutcome { corpus, discards })
}

fn annotation_files(path: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            CorpusError::io(path, e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk failed")))
        })?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|x| x == "aa") {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn characterisation(node: roxmltree::Node) -> (String, BTreeMap<String, String>) {
    let Some(ch) = child(node, "characterisation") else {
        return (String::new(), BTreeMap::new());
    };
    let kind = child(ch, "type")
        .and_then(|t| t.text())
        .unwrap_or_default()
        .trim()
        .to_string();
    let mut features = BTreeMap::new();
    if let Some(fs) = child(ch, "featureSet") {
        for f in fs.children().filter(|c| c.has_tag_name("feature")) {
            if let Some(name) = f.attribute("name") {
                features.insert(name.to_string(), f.text().unwrap_or_default().trim().to_string());
            }
        }
    }
    (kind, features)
}

fn position(node: roxmltree::Node, which: &str) -> Option<usize> {
    let pos = child(child(node, "positioning")?, which)?;
    child(pos, "singlePosition")?.attribute("index")?.parse().ok()
}

fn parse_document(xml: &str) -> Result<Document, String> {
    let tree = roxmltree::Document::parse(xml).map_err(|e| e.to_string())?;
    let mut doc = Document::default();
    for node in tree.root_element().descendants() {
        let Some(id) = node.attribute("id") else {
            continue;
        };
        let (kind, features) = characterisation(node);
        match node.tag_name().name() {
            "unit" => {
                let (Some(start), Some(end)) = (position(node, "start"), position(node, "end")) else {
                    return Err(format!("unit {id} has no positioning"));
                };
                doc.units.push(Span {
                    id: id.to_string(),
                    kind,
                    start,
                    end,
                    features,
                });
            }
            "relation" | "schema" => {
                let terms = child(node, "positioning")
                    .map(|p| {
                        p.children()
                            .filter(|c| {
                                c.has_tag_name("term")
                                    || c.has_tag_name("embedded-unit")
                                    || c.has_tag_name("embedded-schema")
                            })
                            .filter_map(|c| c.attribute("id").map(str::to_string))
                            .collect()
                    })
                    .unwrap_or_default();
                let link = Link {
                    id: id.to_string(),
                    kind,
                    terms,
                };
                if node.has_tag_name("relation") {
                    doc.relations.push(link);
                } else {
                    doc.schemas.push(link);
                }
            }
            _ => {}
        }
    }
    Ok(doc)
}

fn slice_chars(text: &str, start: usize, end: usize) -> String {
    text.chars()
        .skip(start)
        .take(end.saturating_sub(start))
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn contains(outer: &Span, inner: &Span) -> bool {
    outer.start <= inner.start && inner.end <= outer.end
}

fn convert(
    stem: &str,
    doc: &Document,
    text: &str,
    taxonomy: &Taxonomy,
    discards: &mut Vec<Discard>,
) -> Vec<RawDialogue> {
    let mut turns: Vec<&Span> = doc.units.iter().filter(|u| u.kind == "Turn").collect();
    turns.sort_by_key(|t| (t.start, t.end));
    let mut dialogues: Vec<&Span> = doc.units.iter().filter(|u| u.kind == "Dialogue").collect();
    dialogues.sort_by_key(|d| (d.start, d.end));

    let mut elementary: Vec<&Span> = doc
        .units
        .iter()
        .filter(|u| !NON_DISCOURSE_TYPES.contains(&u.kind.as_str()))
        .collect();
    elementary.sort_by(|a, b| (a.start, a.end, &a.id).cmp(&(b.start, b.end, &b.id)));

    // Assign each elementary span to (dialogue, turn).
    let whole_doc = Span {
        id: stem.to_string(),
        kind: "Dialogue".into(),
        start: 0,
        end: usize::MAX,
        features: BTreeMap::new(),
    };
    let dialogue_spans: Vec<&Span> = if dialogues.is_empty() {
        vec![&whole_doc]
    } else {
        dialogues
    };

    let mut out = Vec::new();
    let mut placed: BTreeMap<&str, (usize, Endpoint)> = BTreeMap::new();
    let mut built: Vec<(String, Vec<ElementaryUnit>)> = Vec::new();
    for (d_idx, dspan) in dialogue_spans.iter().enumerate() {
        let dialogue_id = if dialogue_spans.len() == 1 && dspan.id == stem {
            stem.to_string()
        } else {
            format!("{stem}_{}", dspan.id)
        };
        let mut units = Vec::new();
        for span in elementary.iter().filter(|s| contains(dspan, s)) {
            if placed.contains_key(span.id.as_str()) {
                continue;
            }
            let Some((turn_idx, turn)) = turns.iter().enumerate().find(|(_, t)| contains(t, span)) else {
                discards.push(Discard::new(
                    &dialogue_id,
                    STAGE,
                    DiscardReason::UnsupportedAnnotation,
                    format!("unit {} ({}) lies outside any turn", span.id, span.kind),
                ));
                continue;
            };
            let content = slice_chars(text, span.start, span.end);
            if content.is_empty() {
                discards.push(Discard::new(&dialogue_id, STAGE, DiscardReason::EmptyUnit, format!("unit {}", span.id)));
                continue;
            }
            let emitter = turn
                .features
                .get("Emitter")
                .cloned()
                .unwrap_or_else(|| "unknown".into());
            let kind = if SERVER_EMITTERS.contains(&emitter.to_ascii_lowercase().as_str()) {
                UnitKind::Eeu
            } else {
                UnitKind::Edu
            };
            let index = units.len();
            units.push(ElementaryUnit::new(index, kind, emitter, content, turn_idx));
            placed.insert(span.id.as_str(), (d_idx, Endpoint::Unit(index)));
        }
        // Turn ids become dense per dialogue.
        let mut dense = BTreeMap::new();
        for u in &mut units {
            let next = dense.len();
            u.turn_id = *dense.entry(u.turn_id).or_insert(next);
        }
        built.push((dialogue_id, units));
    }

    // CDUs: resolved recursively so nested schemas land in their members' dialogue.
    let schema_by_id: BTreeMap<&str, &Link> = doc.schemas.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut cdus: Vec<Vec<Cdu>> = vec![Vec::new(); built.len()];
    let mut cdu_home: BTreeMap<&str, usize> = BTreeMap::new();
    fn home<'a>(
        id: &'a str,
        schemas: &BTreeMap<&'a str, &'a Link>,
        placed: &BTreeMap<&str, (usize, Endpoint)>,
        depth: usize,
    ) -> Option<usize> {
        if let Some((d, _)) = placed.get(id) {
            return Some(*d);
        }
        if depth > 64 {
            return None;
        }
        schemas
            .get(id)?
            .terms
            .iter()
            .find_map(|t| home(t, schemas, placed, depth + 1))
    }
    for schema in &doc.schemas {
        if schema.kind != "Complex_discourse_unit" {
            continue;
        }
        if let Some(d) = home(&schema.id, &schema_by_id, &placed, 0) {
            cdu_home.insert(schema.id.as_str(), d);
        }
    }
    for schema in &doc.schemas {
        let Some(&d) = cdu_home.get(schema.id.as_str()) else {
            if let Some(first) = built.first() {
                discards.push(Discard::new(
                    &first.0,
                    STAGE,
                    DiscardReason::UnsupportedAnnotation,
                    format!("schema {} ({})", schema.id, schema.kind),
                ));
            }
            continue;
        };
        let mut members = Vec::new();
        for term in &schema.terms {
            match placed.get(term.as_str()) {
                Some((td, e)) if *td == d => members.push(e.clone()),
                _ if cdu_home.get(term.as_str()) == Some(&d) => members.push(Endpoint::Cdu(term.clone())),
                _ => discards.push(Discard::new(
                    &built[d].0,
                    STAGE,
                    DiscardReason::DanglingEndpoint,
                    format!("CDU {} member {term}", schema.id),
                )),
            }
        }
        if !members.is_empty() {
            cdus[d].push(Cdu {
                id: schema.id.clone(),
                members,
            });
        } else {
            cdu_home.remove(schema.id.as_str());
        }
    }

    let resolve = |term: &str| -> Option<(usize, Endpoint)> {
        if let Some((d, e)) = placed.get(term) {
            return Some((*d, e.clone()));
        }
        cdu_home.get(term).map(|d| (*d, Endpoint::Cdu(term.to_string())))
    };
    let mut relations: Vec<Vec<RawRelation>> = vec![Vec::new(); built.len()];
    let mut seen = BTreeSet::new();
    for rel in &doc.relations {
        let owner = rel
            .terms
            .iter()
            .find_map(|t| resolve(t).map(|(d, _)| d))
            .unwrap_or(0);
        let owner_id = built.get(owner).map(|b| b.0.clone()).unwrap_or_else(|| stem.to_string());
        let what = format!("relation {} {}({})", rel.id, rel.kind, rel.terms.join(","));
        let label = match taxonomy.resolve(&rel.kind) {
            Ok(l) => l.code.clone(),
            Err(_) => {
                discards.push(Discard::new(&owner_id, STAGE, DiscardReason::UnknownLabel, what));
                continue;
            }
        };
        let ends: Vec<_> = rel.terms.iter().map(|t| resolve(t)).collect();
        let (Some(Some((ds, src))), Some(Some((dt, tgt))), 2) = (ends.first(), ends.get(1), ends.len()) else {
            discards.push(Discard::new(&owner_id, STAGE, DiscardReason::DanglingEndpoint, what));
            continue;
        };
        if ds != dt {
            discards.push(Discard::new(&owner_id, STAGE, DiscardReason::DanglingEndpoint, what));
            continue;
        }
        if let (Endpoint::Unit(s), Endpoint::Unit(t)) = (src, tgt) {
            if s == t {
                discards.push(Discard::new(&owner_id, STAGE, DiscardReason::SelfLoop, what));
                continue;
            }
            if s > t {
                discards.push(Discard::new(&owner_id, STAGE, DiscardReason::BackwardRelation, what));
                continue;
            }
        }
        let raw = RawRelation {
            label,
            src: src.clone(),
            tgt: tgt.clone(),
        };
        if !seen.insert((*ds, raw.clone())) {
            discards.push(Discard::new(&owner_id, STAGE, DiscardReason::Duplicate, what));
            continue;
        }
        relations[*ds].push(raw);
    }

    for (n, (id, units)) in built.into_iter().enumerate() {
        if units.is_empty() {
            continue;
        }
        out.push(RawDialogue {
            id,
            units,
            relations: std::mem::take(&mut relations[n]),
            cdus: std::mem::take(&mut cdus[n]),
        });
    }
    out
}
