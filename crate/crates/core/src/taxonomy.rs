//! Relation labels and per-corpus relation taxonomies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Short relation code such as `RES` or `CLARIFQ`.
///
/// Codes match `[A-Z][A-Z-]*`. Whether a code is known is a question for a
/// [`Taxonomy`], not for the label itself.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Label(String);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid relation code {0:?}: expected [A-Z][A-Z-]*")]
pub struct LabelError(pub String);

impl Label {
    pub fn new(code: impl Into<String>) -> Result<Self, LabelError> {
        let code = code.into();
        if is_valid_code(&code) {
            Ok(Label(code))
        } else {
            Err(LabelError(code))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub(crate) fn is_valid_code(code: &str) -> bool {
    let mut chars = code.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && chars.all(|c| c.is_ascii_uppercase() || c == '-')
}

impl TryFrom<String> for Label {
    type Error = LabelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Label::new(value)
    }
}

impl From<Label> for String {
    fn from(label: Label) -> Self {
        label.0
    }
}

impl FromStr for Label {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::new(s)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<str> for Label {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

impl PartialEq<&str> for Label {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

/// A relation type as defined by one corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationLabel {
    pub code: Label,
    #[serde(rename = "name")]
    pub long_name: String,
    #[serde(skip)]
    pub taxonomy_id: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("duplicate relation code {0} in taxonomy {1}")]
    DuplicateCode(Label, String),
    #[error("unknown taxonomy {0:?}")]
    UnknownTaxonomy(String),
    #[error("unknown relation {0:?} in taxonomy {1}")]
    UnknownRelation(String, String),
}

/// The set of relation types a corpus is annotated with.
///
/// Labels keep their declaration order; for the built-in taxonomies that is
/// descending corpus frequency.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyRepr", into = "TaxonomyRepr")]
pub struct Taxonomy {
    id: String,
    labels: Vec<RelationLabel>,
}

#[derive(Serialize, Deserialize)]
struct TaxonomyRepr {
    id: String,
    labels: Vec<RelationLabel>,
}

impl TryFrom<TaxonomyRepr> for Taxonomy {
    type Error = TaxonomyError;

    fn try_from(repr: TaxonomyRepr) -> Result<Self, Self::Error> {
        Taxonomy::new(repr.id, repr.labels)
    }
}

impl From<Taxonomy> for TaxonomyRepr {
    fn from(t: Taxonomy) -> Self {
        TaxonomyRepr {
            id: t.id,
            labels: t.labels,
        }
    }
}

/// Relations that pose a question about earlier material. These are the
/// context relations removed by the QAP ablation.
pub const QUESTION_CODES: [&str; 3] = ["CLARIFQ", "CONFQ", "QELAB"];

const MSDC_LABELS: [(&str, &str); 16] = [
    ("RES", "Result"),
    ("ACK", "Acknowledgement"),
    ("NARR", "Narration"),
    ("ELAB", "Elaboration"),
    ("CORR", "Correction"),
    ("CONT", "Continuation"),
    ("QAP", "Question-answer Pair"),
    ("COM", "Comment"),
    ("CONFQ", "Confirmation-Question"),
    ("CLARIFQ", "Clarification-Question"),
    ("CONTR", "Contrast"),
    ("QELAB", "Question-Elaboration"),
    ("ALT", "Alternation"),
    ("EXPL", "Explanation"),
    ("COND", "Conditional"),
    ("SEQ", "Sequence"),
];

const STAC_LABELS: [(&str, &str); 17] = [
    ("QAP", "Question-answer_pair"),
    ("COM", "Comment"),
    ("ACK", "Acknowledgement"),
    ("CONT", "Continuation"),
    ("ELAB", "Elaboration"),
    ("QELAB", "Q-Elab"),
    ("RES", "Result"),
    ("CONTR", "Contrast"),
    ("EXPL", "Explanation"),
    ("CLARIFQ", "Clarification_question"),
    ("PAR", "Parallel"),
    ("CORR", "Correction"),
    ("ALT", "Alternation"),
    ("NARR", "Narration"),
    ("COND", "Conditional"),
    ("BACK", "Background"),
    ("SEQ", "Sequence"),
];

// Molweni shares STAC's scheme minus Sequence.
const MOLWENI_LABELS: [(&str, &str); 16] = [
    ("COM", "Comment"),
    ("CLARIFQ", "Clarification_question"),
    ("ELAB", "Elaboration"),
    ("ACK", "Acknowledgement"),
    ("CONT", "Continuation"),
    ("EXPL", "Explanation"),
    ("COND", "Conditional"),
    ("QAP", "Question-answer_pair"),
    ("ALT", "Alternation"),
    ("QELAB", "Q-Elab"),
    ("RES", "Result"),
    ("BACK", "Background"),
    ("NARR", "Narration"),
    ("CORR", "Correction"),
    ("PAR", "Parallel"),
    ("CONTR", "Contrast"),
];

fn builtin(id: &str, table: &[(&str, &str)]) -> Taxonomy {
    let labels = table
        .iter()
        .map(|(code, name)| RelationLabel {
            code: Label::new(*code).expect("built-in codes are valid"),
            long_name: name.to_string(),
            taxonomy_id: id.to_string(),
        })
        .collect();
    Taxonomy::new(id, labels).expect("built-in taxonomies are collision free")
}

fn normalize_name(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

impl Taxonomy {
    pub fn new(id: impl Into<String>, labels: Vec<RelationLabel>) -> Result<Self, TaxonomyError> {
        let id = id.into();
        let mut labels = labels;
        for (n, label) in labels.iter().enumerate() {
            if labels[..n].iter().any(|l| l.code == label.code) {
                return Err(TaxonomyError::DuplicateCode(label.code.clone(), id));
            }
        }
        for label in &mut labels {
            label.taxonomy_id = id.clone();
        }
        Ok(Taxonomy { id, labels })
    }

    /// The 16 relation types of the Minecraft Structured Dialogue Corpus.
    pub fn msdc() -> Self {
        builtin("msdc", &MSDC_LABELS)
    }

    pub fn stac() -> Self {
        builtin("stac", &STAC_LABELS)
    }

    pub fn molweni() -> Self {
        builtin("molweni", &MOLWENI_LABELS)
    }

    pub fn by_id(id: &str) -> Result<Self, TaxonomyError> {
        match id {
            "msdc" => Ok(Self::msdc()),
            "stac" | "stac_sit" | "stac_l" => Ok(Self::stac()),
            "molweni" => Ok(Self::molweni()),
            other => Err(TaxonomyError::UnknownTaxonomy(other.to_string())),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn labels(&self) -> &[RelationLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn codes(&self) -> impl Iterator<Item = &Label> {
        self.labels.iter().map(|l| &l.code)
    }

    pub fn contains(&self, code: &Label) -> bool {
        self.labels.iter().any(|l| &l.code == code)
    }

    pub fn get(&self, code: &str) -> Option<&RelationLabel> {
        self.labels.iter().find(|l| l.code == code)
    }

    /// Resolves a relation given by code or by long name, ignoring case and
    /// punctuation (`Question_answer_pair`, `question-answer pair`, `QAP`).
    pub fn resolve(&self, name: &str) -> Result<&RelationLabel, TaxonomyError> {
        if let Some(label) = self.get(name) {
            return Ok(label);
        }
        let wanted = normalize_name(name);
        self.labels
            .iter()
            .find(|l| {
                normalize_name(&l.long_name) == wanted || normalize_name(l.code.as_str()) == wanted
            })
            .or_else(|| {
                // Spelling variants across corpora.
                let alias = match wanted.as_str() {
                    "qelab" | "questionelaboration" => "QELAB",
                    "questionanswerpair" | "qap" => "QAP",
                    "clarificationquestion" | "clarifq" => "CLARIFQ",
                    "confirmationquestion" | "confq" => "CONFQ",
                    _ => return None,
                };
                self.get(alias)
            })
            .ok_or_else(|| TaxonomyError::UnknownRelation(name.to_string(), self.id.clone()))
    }
}
