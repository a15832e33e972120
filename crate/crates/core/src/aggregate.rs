//! Per-student aggregation: triplet scores → concept-link strengths → the
//! strength-annotated concept graph.
//!
//! A link's strength is the arithmetic mean of the scores the student
//! obtained on it across every mapped question they answered. Aggregation
//! works bottom-up: mapped links receive strengths directly; with
//! propagation enabled, an unassigned higher-level edge receives the mean
//! of the already-strengthened lower-level edges incident to it, in a
//! single KCL→SCA→BCA pass. Propagation is off by default.

use crate::dataset::Triplet;
use crate::graph::{ConceptGraph, Level, QuestionConceptMap};
use crate::ids::{EdgeId, QuestionId, Score, StudentId};
use crate::prompt::Scenario;
use crate::scalar::{mean, mean_of_scores, Scalar};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Where a score came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreSource {
    Human,
    Model {
        backend_id: String,
        scenario: Scenario,
    },
}

impl fmt::Display for ScoreSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreSource::Human => f.write_str("human"),
            ScoreSource::Model {
                backend_id,
                scenario,
            } => write!(f, "{backend_id}_{scenario}"),
        }
    }
}

/// One integer strength score for one triplet from one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    #[serde(flatten)]
    pub triplet: Triplet,
    pub score: Score,
    pub source: ScoreSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

/// The aggregated strength of one concept link for one student, with the
/// (question, score) pairs that support it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthAssignment<S = f64> {
    pub student_id: StudentId,
    pub concept_link_id: EdgeId,
    pub strength: S,
    pub support: Vec<(QuestionId, Score)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregateError {
    #[error("record for student {found} mixed into aggregation for {expected}")]
    MixedStudents {
        expected: StudentId,
        found: StudentId,
    },
    #[error("records from more than one source: {0} and {1}")]
    MixedSources(String, String),
    #[error("duplicate record for triplet {0}")]
    DuplicateRecord(Triplet),
    #[error("concept link {link} is not mapped to question {question}")]
    LinkNotMapped { question: QuestionId, link: EdgeId },
    #[error("assignment references unknown edge {0}")]
    UnknownEdge(EdgeId),
    #[error("duplicate assignment for edge {0}")]
    DuplicateAssignment(EdgeId),
}

/// Aggregate one student's records from one source into per-link
/// strengths. Links with no records are simply absent from the result;
/// [`uncovered_links`] lists them.
pub fn aggregate_strengths<S: Scalar>(
    records: &[ScoreRecord],
    map: &QuestionConceptMap,
    student_id: &StudentId,
) -> Result<Vec<StrengthAssignment<S>>, AggregateError> {
    let mut source: Option<&ScoreSource> = None;
    let mut seen: BTreeSet<&Triplet> = BTreeSet::new();
    let mut by_link: BTreeMap<&EdgeId, Vec<(&QuestionId, Score)>> = BTreeMap::new();

    for record in records {
        if &record.triplet.student_id != student_id {
            return Err(AggregateError::MixedStudents {
                expected: student_id.clone(),
                found: record.triplet.student_id.clone(),
            });
        }
        match source {
            None => source = Some(&record.source),
            Some(first) if first != &record.source => {
                return Err(AggregateError::MixedSources(
                    first.to_string(),
                    record.source.to_string(),
                ));
            }
            Some(_) => {}
        }
        if !seen.insert(&record.triplet) {
            return Err(AggregateError::DuplicateRecord(record.triplet.clone()));
        }
        let mapped = map.links_for(&record.triplet.question_id).map_err(|_| {
            AggregateError::LinkNotMapped {
                question: record.triplet.question_id.clone(),
                link: record.triplet.concept_link_id.clone(),
            }
        })?;
        if !mapped.contains(&record.triplet.concept_link_id) {
            return Err(AggregateError::LinkNotMapped {
                question: record.triplet.question_id.clone(),
                link: record.triplet.concept_link_id.clone(),
            });
        }
        by_link
            .entry(&record.triplet.concept_link_id)
            .or_default()
            .push((&record.triplet.question_id, record.score));
    }

    Ok(by_link
        .into_iter()
        .map(|(link, mut support)| {
            support.sort();
            let scores: Vec<u8> = support.iter().map(|(_, s)| s.get()).collect();
            StrengthAssignment {
                student_id: student_id.clone(),
                concept_link_id: link.clone(),
                strength: mean_of_scores(&scores),
                support: support.into_iter().map(|(q, s)| (q.clone(), s)).collect(),
            }
        })
        .collect())
}

/// Mapped concept links that received no assignment, in id order.
pub fn uncovered_links<S>(
    map: &QuestionConceptMap,
    assignments: &[StrengthAssignment<S>],
) -> Vec<EdgeId> {
    let covered: BTreeSet<&EdgeId> = assignments.iter().map(|a| &a.concept_link_id).collect();
    map.mapped_links()
        .into_iter()
        .filter(|link| !covered.contains(link))
        .collect()
}

/// Place assignment strengths onto the graph. With `propagate`, edges
/// without a direct assignment receive the mean of the strengthened
/// lower-level edges incident to them, one upward pass per level.
pub fn annotate_graph<S: Scalar>(
    graph: &ConceptGraph<S>,
    assignments: &[StrengthAssignment<S>],
    propagate: bool,
) -> Result<ConceptGraph<S>, AggregateError> {
    let mut strengths: BTreeMap<EdgeId, S> = BTreeMap::new();
    for assignment in assignments {
        if graph.edge(&assignment.concept_link_id).is_none() {
            return Err(AggregateError::UnknownEdge(
                assignment.concept_link_id.clone(),
            ));
        }
        if strengths
            .insert(
                assignment.concept_link_id.clone(),
                assignment.strength.clone(),
            )
            .is_some()
        {
            return Err(AggregateError::DuplicateAssignment(
                assignment.concept_link_id.clone(),
            ));
        }
    }

    if propagate {
        for level in [Level::Sca, Level::Bca] {
            let mut inferred: BTreeMap<EdgeId, S> = BTreeMap::new();
            for edge in graph.edges() {
                if graph.edge_level(edge) != Some(level) || strengths.contains_key(&edge.id) {
                    continue;
                }
                let incident: Vec<S> = graph
                    .edges()
                    .iter()
                    .filter(|other| {
                        other.id != edge.id
                            && (other.touches(&edge.endpoints.0)
                                || other.touches(&edge.endpoints.1))
                            && graph.edge_level(other) < Some(level)
                    })
                    .filter_map(|other| strengths.get(&other.id).cloned())
                    .collect();
                if !incident.is_empty() {
                    inferred.insert(edge.id.clone(), mean(&incident));
                }
            }
            strengths.extend(inferred);
        }
    }

    Ok(graph.without_strengths().with_strengths(&strengths))
}
