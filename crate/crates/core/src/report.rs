//! Aligned text tables for corpus statistics and evaluation reports, with
//! optional published reference numbers shown alongside. Reference values
//! are for display only.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusStats;
use crate::metrics::{DistanceTable, EvalReport};
use crate::taxonomy::{Label, Taxonomy};

const REFERENCE_JSON: &str = include_str!("../data/reference.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    /// System key to description.
    pub systems: BTreeMap<String, String>,
    pub corpora: BTreeMap<String, CorpusReference>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusReference {
    #[serde(default)]
    pub stats: BTreeMap<String, CorpusStats>,
    /// System key to `[link, link_rel]`.
    #[serde(default)]
    pub summary: BTreeMap<String, [f64; 2]>,
    #[serde(default)]
    pub distance: Option<DistanceReference>,
    #[serde(default)]
    pub per_type: Option<PerTypeReference>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReference {
    pub label: Label,
    /// Distance of the first value in each row.
    pub from: usize,
    pub rows: BTreeMap<String, Vec<Option<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerTypeReference {
    pub columns: Vec<String>,
    pub rows: BTreeMap<Label, Vec<f64>>,
    pub link_rel: Vec<f64>,
    pub link: Vec<f64>,
}

pub fn reference() -> &'static Reference {
    static DATA: OnceLock<Reference> = OnceLock::new();
    DATA.get_or_init(|| serde_json::from_str(REFERENCE_JSON).expect("bundled reference data parses"))
}

/// Reference block for a corpus key (`msdc`, `stac_sit`, `stac_l`, `molweni`).
pub fn corpus_reference(key: &str) -> Option<&'static CorpusReference> {
    reference().corpora.get(key)
}

fn fixed(x: f64) -> String {
    format!("{x:.4}")
}

fn short(x: f64) -> String {
    format!("{x:.2}")
}

/// First column left-aligned, the rest right-aligned.
fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for row in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        for (c, cell) in row.iter().enumerate() {
            width[c] = width[c].max(cell.chars().count());
        }
    }
    let line = |row: &[String]| {
        let mut out = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c == 0 {
                out.push_str(&format!("{cell:<w$}", w = width[0]));
            } else {
                out.push_str(&format!("  {cell:>w$}", w = width[c]));
            }
        }
        out.trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

/// Unit counts per column, in the layout of the corpus statistics table.
pub fn render_stats(columns: &[(String, CorpusStats)], reference: Option<&CorpusReference>) -> String {
    let mut cols: Vec<(String, CorpusStats)> = columns.to_vec();
    if let Some(r) = reference {
        for (split, s) in &r.stats {
            cols.push((format!("ref {split}"), *s));
        }
    }
    let mut header = vec!["DU-type".to_string()];
    header.extend(cols.iter().map(|(n, _)| n.clone()));
    let fields: [(&str, fn(&CorpusStats) -> usize); 5] = [
        ("EDU", |s| s.edu_count),
        ("EEU", |s| s.eeu_count),
        ("MPDU", |s| s.mpdu_count),
        ("MPDU=3", |s| s.mpdu3_count),
        ("MPDU>3", |s| s.mpdu_gt3_count),
    ];
    let rows: Vec<Vec<String>> = fields
        .iter()
        .map(|(name, get)| {
            let mut row = vec![name.to_string()];
            row.extend(cols.iter().map(|(_, s)| get(s).to_string()));
            row
        })
        .collect();
    table(&header, &rows)
}

fn report_header(report: &EvalReport) -> String {
    let cutoff = report.cutoff.map_or("none".to_string(), |c| c.to_string());
    format!(
        "pooling: {}  cutoff: {}  dialogues: {}\n",
        report.pooling, cutoff, report.dialogues
    )
}

/// Link and link+relation scores, one row per system.
pub fn render_summary(report: &EvalReport, reference: Option<&CorpusReference>) -> String {
    let header = ["system", "Link", "Link+Rel"].map(String::from);
    let mut rows = vec![vec!["measured".to_string(), fixed(report.link.f1), fixed(report.link_rel.f1)]];
    if let Some(r) = reference {
        for (system, [link, rel]) in &r.summary {
            rows.push(vec![format!("ref {system}"), fixed(*link), fixed(*rel)]);
        }
    }
    report_header(report) + &table(&header, &rows)
}

/// F1 per exact distance for one label; empty buckets print `n/a`.
pub fn render_distance(t: &DistanceTable, reference: Option<&CorpusReference>) -> String {
    let mut header = vec![format!("{} distance", t.label)];
    header.extend(t.buckets.iter().map(|b| b.distance.to_string()));
    let cell = |f: Option<f64>| f.map_or("n/a".to_string(), short);
    let mut rows = vec![std::iter::once("measured".to_string())
        .chain(t.buckets.iter().map(|b| cell(b.f1)))
        .collect::<Vec<_>>()];
    if let Some(d) = reference.and_then(|r| r.distance.as_ref()).filter(|d| d.label == t.label) {
        for (system, values) in &d.rows {
            let mut row = vec![format!("ref {system}")];
            for b in &t.buckets {
                let v = b.distance.checked_sub(d.from).and_then(|k| values.get(k));
                row.push(match v {
                    Some(v) => cell(*v),
                    None => "-".to_string(),
                });
            }
            rows.push(row);
        }
    }
    table(&header, &rows)
}

/// Per-type F1 in taxonomy order with gold support, then the overall rows.
pub fn render_per_type(report: &EvalReport, taxonomy: &Taxonomy, reference: Option<&CorpusReference>) -> String {
    let per_ref = reference.and_then(|r| r.per_type.as_ref());
    let mut header = ["relation", "support", "measured"].map(String::from).to_vec();
    if let Some(p) = per_ref {
        header.extend(p.columns.iter().map(|c| format!("ref {c}")));
    }
    let mut rows = Vec::new();
    for rl in taxonomy.labels() {
        let measured = report.per_type.get(&rl.code);
        let mut row = vec![
            rl.long_name.clone(),
            measured.map_or(0, |t| t.gold_support).to_string(),
            measured.map_or("-".to_string(), |t| short(t.score.f1)),
        ];
        if let Some(p) = per_ref {
            match p.rows.get(&rl.code) {
                Some(values) => row.extend(values.iter().map(|v| short(*v))),
                None => row.extend(p.columns.iter().map(|_| "-".to_string())),
            }
        }
        rows.push(row);
    }
    let support: usize = report.per_type.values().map(|t| t.gold_support).sum();
    let mut overall = |name: &str, value: f64, refs: Option<&Vec<f64>>| {
        let mut row = vec![name.to_string(), support.to_string(), short(value)];
        if let Some(values) = refs {
            row.extend(values.iter().map(|v| short(*v)));
        }
        rows.push(row);
    };
    overall("Link+Rel F1", report.link_rel.f1, per_ref.map(|p| &p.link_rel));
    overall("Link F1", report.link.f1, per_ref.map(|p| &p.link));
    report_header(report) + &table(&header, &rows)
}

/// Summary, per-type and distance tables in one document.
pub fn render_report(report: &EvalReport, taxonomy: &Taxonomy, reference: Option<&CorpusReference>) -> String {
    let mut out = render_summary(report, reference);
    out.push('\n');
    out.push_str(&render_per_type(report, taxonomy, reference));
    for t in &report.per_distance {
        out.push('\n');
        out.push_str(&render_distance(t, reference));
    }
    out
}
