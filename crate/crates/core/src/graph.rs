//! Elementary units, relation instances and dialogue-level discourse graphs.
//!
//! A discourse graph is a set of typed forward edges `CODE(i,j)` with
//! `i < j` over the units of one dialogue. Units may have several parents.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::taxonomy::{Label, Taxonomy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnitKind {
    /// A linguistic unit: one clause of a chat message.
    #[serde(rename = "EDU")]
    Edu,
    /// A nonlinguistic event such as a block placement or a game move.
    #[serde(rename = "EEU")]
    Eeu,
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitKind::Edu => f.write_str("EDU"),
            UnitKind::Eeu => f.write_str("EEU"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementaryUnit {
    #[serde(rename = "idx")]
    pub index: usize,
    pub kind: UnitKind,
    pub speaker: String,
    pub text: String,
    #[serde(rename = "turn")]
    pub turn_id: usize,
}

impl ElementaryUnit {
    pub fn new(
        index: usize,
        kind: UnitKind,
        speaker: impl Into<String>,
        text: impl Into<String>,
        turn_id: usize,
    ) -> Self {
        ElementaryUnit {
            index,
            kind,
            speaker: speaker.into(),
            text: text.into(),
            turn_id,
        }
    }

    pub fn is_eeu(&self) -> bool {
        self.kind == UnitKind::Eeu
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("relation {rel} has an endpoint outside 0..{unit_count}")]
    EndpointOutOfRange {
        rel: RelationInstance,
        unit_count: usize,
    },
    #[error("relation {0} does not point forward (source must precede target)")]
    BadOrder(RelationInstance),
    #[error("malformed relation token {0:?}")]
    BadToken(String),
}

/// A typed directed edge `label(source, target)`.
///
/// Ordering is by `(source, target, label)`, which is also the order used
/// when serializing structure into prompts.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationInstance {
    pub source: usize,
    pub target: usize,
    pub label: Label,
}

impl RelationInstance {
    pub fn new(label: Label, source: usize, target: usize) -> Result<Self, GraphError> {
        let rel = RelationInstance {
            source,
            target,
            label,
        };
        if source < target {
            Ok(rel)
        } else {
            Err(GraphError::BadOrder(rel))
        }
    }

    /// Builds a relation without checking ordering. Used for data that is
    /// validated later, and by tests that need malformed graphs.
    pub fn unchecked(label: Label, source: usize, target: usize) -> Self {
        RelationInstance {
            source,
            target,
            label,
        }
    }

    /// Index span `target - source`.
    pub fn distance(&self) -> usize {
        self.target.abs_diff(self.source)
    }

    pub fn pair(&self) -> (usize, usize) {
        (self.source, self.target)
    }
}

impl fmt::Display for RelationInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({},{})", self.label, self.source, self.target)
    }
}

/// Parses the canonical token form `CODE(i,j)` with no interior whitespace.
/// Ordering of `i` and `j` is not checked here.
pub fn parse_token(token: &str) -> Option<(Label, usize, usize)> {
    let open = token.find('(')?;
    let inner = token[open + 1..].strip_suffix(')')?;
    let label = Label::new(&token[..open]).ok()?;
    let (i, j) = inner.split_once(',')?;
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(i) || !digits(j) {
        return None;
    }
    Some((label, i.parse().ok()?, j.parse().ok()?))
}

impl FromStr for RelationInstance {
    type Err = GraphError;

    /// Accepts any well-formed token, including backward ones; graph
    /// validation reports those.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_token(s)
            .map(|(label, i, j)| RelationInstance::unchecked(label, i, j))
            .ok_or_else(|| GraphError::BadToken(s.to_string()))
    }
}

impl Serialize for RelationInstance {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RelationInstance {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Joins relations as space-separated canonical tokens.
pub fn format_tokens<'a>(rels: impl IntoIterator<Item = &'a RelationInstance>) -> String {
    let mut out = String::new();
    for (n, rel) in rels.into_iter().enumerate() {
        if n > 0 {
            out.push(' ');
        }
        out.push_str(&rel.to_string());
    }
    out
}

/// Outcome of inserting a relation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Inserted {
    New,
    /// The exact triple was already present; the graph is unchanged.
    Duplicate,
}

/// The relation instances of one dialogue.
///
/// Graphs built through [`DiscourseGraph::insert`] or
/// [`DiscourseGraph::from_relations`] are well formed. Graphs read from
/// untrusted files go through [`DiscourseGraph::from_unchecked`] and should
/// be checked with [`DiscourseGraph::validate`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscourseGraph {
    dialogue_id: String,
    unit_count: usize,
    relations: Vec<RelationInstance>,
}

/// Units with more than one parent, with counts of those having exactly
/// three and more than three.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpduSummary {
    pub units: BTreeSet<usize>,
    pub with_three_parents: usize,
    pub with_more_than_three: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnknownLabel { relation: RelationInstance },
    IndexOrder { relation: RelationInstance },
    OutOfRange { relation: RelationInstance },
    Duplicate { relation: RelationInstance },
    Cycle { units: Vec<usize> },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Unit pairs carrying more than one label. Permitted, only counted.
    pub multi_label_pairs: usize,
}

impl ValidationReport {
    pub fn is_well_formed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl DiscourseGraph {
    pub fn new(dialogue_id: impl Into<String>, unit_count: usize) -> Self {
        DiscourseGraph {
            dialogue_id: dialogue_id.into(),
            unit_count,
            relations: Vec::new(),
        }
    }

    pub fn from_relations(
        dialogue_id: impl Into<String>,
        unit_count: usize,
        relations: impl IntoIterator<Item = RelationInstance>,
    ) -> Result<Self, GraphError> {
        let mut graph = DiscourseGraph::new(dialogue_id, unit_count);
        for rel in relations {
            graph.insert(rel)?;
        }
        Ok(graph)
    }

    /// Keeps relations exactly as given, including duplicates and
    /// malformed edges.
    pub fn from_unchecked(
        dialogue_id: impl Into<String>,
        unit_count: usize,
        relations: Vec<RelationInstance>,
    ) -> Self {
        DiscourseGraph {
            dialogue_id: dialogue_id.into(),
            unit_count,
            relations,
        }
    }

    pub fn dialogue_id(&self) -> &str {
        &self.dialogue_id
    }

    pub fn unit_count(&self) -> usize {
        self.unit_count
    }

    pub fn relations(&self) -> &[RelationInstance] {
        &self.relations
    }

    pub fn iter(&self) -> std::slice::Iter<'_, RelationInstance> {
        self.relations.iter()
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn contains(&self, rel: &RelationInstance) -> bool {
        self.relations.iter().any(|r| r == rel)
    }

    /// Adds `rel`, ignoring exact duplicates.
    pub fn insert(&mut self, rel: RelationInstance) -> Result<Inserted, GraphError> {
        if rel.source >= self.unit_count || rel.target >= self.unit_count {
            return Err(GraphError::EndpointOutOfRange {
                rel,
                unit_count: self.unit_count,
            });
        }
        if rel.source >= rel.target {
            return Err(GraphError::BadOrder(rel));
        }
        match self.relations.binary_search(&rel) {
            Ok(_) => Ok(Inserted::Duplicate),
            Err(pos) => {
                self.relations.insert(pos, rel);
                Ok(Inserted::New)
            }
        }
    }

    /// Consuming variant of [`insert`](Self::insert).
    pub fn with_relation(mut self, rel: RelationInstance) -> Result<(Self, Inserted), GraphError> {
        let note = self.insert(rel)?;
        Ok((self, note))
    }

    /// Relations satisfying `keep`, as a new graph over the same units.
    pub fn filtered(&self, mut keep: impl FnMut(&RelationInstance) -> bool) -> DiscourseGraph {
        DiscourseGraph {
            dialogue_id: self.dialogue_id.clone(),
            unit_count: self.unit_count,
            relations: self.relations.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// Number of distinct parent units per unit.
    pub fn parent_counts(&self) -> BTreeMap<usize, usize> {
        let mut parents: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for rel in &self.relations {
            parents.entry(rel.target).or_default().insert(rel.source);
        }
        parents.into_iter().map(|(u, p)| (u, p.len())).collect()
    }

    /// Units with at least two distinct parents.
    pub fn mpdu(&self) -> MpduSummary {
        let mut summary = MpduSummary::default();
        for (unit, n) in self.parent_counts() {
            if n >= 2 {
                summary.units.insert(unit);
            }
            if n == 3 {
                summary.with_three_parents += 1;
            } else if n > 3 {
                summary.with_more_than_three += 1;
            }
        }
        summary
    }

    pub fn validate(&self, taxonomy: &Taxonomy) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut seen = BTreeSet::new();
        let mut labels_per_pair: BTreeMap<(usize, usize), BTreeSet<&Label>> = BTreeMap::new();

        for rel in &self.relations {
            if !taxonomy.contains(&rel.label) {
                report.violations.push(Violation::UnknownLabel {
                    relation: rel.clone(),
                });
            }
            if rel.source >= self.unit_count || rel.target >= self.unit_count {
                report.violations.push(Violation::OutOfRange {
                    relation: rel.clone(),
                });
            }
            if rel.source >= rel.target {
                report.violations.push(Violation::IndexOrder {
                    relation: rel.clone(),
                });
            }
            if !seen.insert(rel) {
                report.violations.push(Violation::Duplicate {
                    relation: rel.clone(),
                });
            }
            labels_per_pair.entry(rel.pair()).or_default().insert(&rel.label);
        }
        report.multi_label_pairs = labels_per_pair.values().filter(|l| l.len() > 1).count();

        if let Some(units) = self.cyclic_units() {
            report.violations.push(Violation::Cycle { units });
        }
        report
    }

    /// Kahn's algorithm over in-range edges, independent of index order.
    /// Returns the units left on a cycle, if any.
    fn cyclic_units(&self) -> Option<Vec<usize>> {
        let n = self.unit_count;
        let mut indegree = vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for rel in &self.relations {
            if rel.source < n && rel.target < n {
                succ[rel.source].push(rel.target);
                indegree[rel.target] += 1;
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|&u| indegree[u] == 0).collect();
        let mut visited = 0;
        while let Some(u) = queue.pop() {
            visited += 1;
            for &v in &succ[u] {
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    queue.push(v);
                }
            }
        }
        (visited < n).then(|| (0..n).filter(|&u| indegree[u] > 0).collect())
    }
}

impl<'a> IntoIterator for &'a DiscourseGraph {
    type Item = &'a RelationInstance;
    type IntoIter = std::slice::Iter<'a, RelationInstance>;

    fn into_iter(self) -> Self::IntoIter {
        self.relations.iter()
    }
}

#[cfg(test)]
pub(crate) fn rel(code: &str, source: usize, target: usize) -> RelationInstance {
    RelationInstance::unchecked(Label::new(code).unwrap(), source, target)
}
