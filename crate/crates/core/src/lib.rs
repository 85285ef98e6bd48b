//! Harness for incremental discourse parsing of multiparty dialogue.
//!
//! The pipeline runs: load a corpus ([`corpus`]), flatten and compress it
//! ([`preprocess`]), drive a generation [`backend`] turn by turn through each
//! dialogue while accumulating a predicted graph ([`engine`]), then score the
//! result ([`metrics`]). [`ablation`] holds the context perturbations.

pub mod ablation;
pub mod backend;
pub mod corpus;
pub mod engine;
pub mod graph;
pub mod metrics;
pub mod predictions;
pub mod preprocess;
pub mod report;
pub mod seeding;
pub mod synth;
pub mod taxonomy;

pub use graph::{DiscourseGraph, ElementaryUnit, RelationInstance, UnitKind};
pub use taxonomy::{Label, RelationLabel, Taxonomy};
