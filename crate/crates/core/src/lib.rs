//! Concept-link scoring pipeline.
//!
//! Student answers (text and images) are scored 1–5 against the concept
//! links each question measures, using pluggable vision-language-model
//! backends. Per-triplet scores aggregate into per-student
//! strength-annotated concept graphs, and model scoring is evaluated
//! against human consensus with exact-match accuracy, RMSE and earth
//! mover's distance.
//!
//! Module map:
//!
//! - [`graph`] / [`dot`] — concept hierarchy, concept graph, DOT export
//! - [`dataset`] — manifest loading, validation, triplet enumeration
//! - [`prompt`] — the four scoring-scenario prompts, golden-file guard
//! - [`gateway`] — HTTP / mock / replay backends, retries, caching
//! - [`parser`] — score extraction from raw model text
//! - [`aggregate`] — per-student strengths and graph annotation
//! - [`metrics`] — accuracy, RMSE, EMD, report assembly
//! - [`ocr`] — optional text extraction pass over dataset images
//! - [`fixture`] — seeded synthetic dataset generator
//! - [`pipeline`] — end-to-end score / aggregate / evaluate runs
//!
//! All strength arithmetic is generic over [`scalar::Scalar`], so the same
//! code runs on `f64` (the wire type, [`Strength`]) and on exact rationals
//! ([`ExactStrength`]) when rounding is unacceptable.

pub mod aggregate;
pub mod dataset;
pub mod dot;
pub mod fixture;
pub mod gateway;
pub mod graph;
pub mod ids;
pub mod metrics;
pub mod ocr;
pub mod parser;
pub mod pipeline;
pub mod prompt;
pub mod scalar;

pub use aggregate::{
    aggregate_strengths, annotate_graph, ScoreRecord, ScoreSource, StrengthAssignment,
};
pub use dataset::{Dataset, Manifest, Triplet};
pub use dot::export_dot;
pub use gateway::{run_batch, Backend, BackendConfig, BackendKind, Gateway, MockRule};
pub use graph::{
    ConceptEdge, ConceptGraph, ConceptNode, Level, QuestionConceptMap, ValidationReport,
};
pub use ids::{EdgeId, NodeId, QuestionId, Score, StudentId};
pub use metrics::{emd, exact_match_accuracy, rmse, EvaluationReport, ScoreHistogram, ScorePair};
pub use parser::{parse_score, ParseOutcome, ParseRule, ParsedScore};
pub use prompt::{build_prompt, golden_check, RenderedPrompt, Scenario};

/// Default strength scalar: the wire type used by every file format.
pub type Strength = f64;

/// Exact rational strength scalar, for arithmetic without rounding.
pub type ExactStrength = num_rational::Rational64;
