//! End-to-end runs: score a dataset against a backend, persist score
//! files, aggregate mental-model graphs, and evaluate against ground
//! truth.
//!
//! Score files are JSON lines in canonical triplet order, one line per
//! triplet carrying the raw model text and the parse outcome. They contain
//! no timestamps or latencies, so reruns against the same cassette are
//! byte-identical. A triplet whose transport failed has `transport_error`
//! set; at evaluation time it counts as a parse failure (there is nothing
//! to parse) and is excluded from metrics like any other failure.

use crate::aggregate::{
    aggregate_strengths, annotate_graph, uncovered_links, ScoreRecord, ScoreSource,
    StrengthAssignment,
};
use crate::dataset::{Dataset, Triplet};
use crate::gateway::{run_batch, Gateway};
use crate::graph::ConceptGraph;
use crate::ids::{EdgeId, QuestionId, Score, StudentId};
use crate::metrics::{build_report, EvaluationReport, FailurePolicy, JoinedOutcome};
use crate::parser::{
    parse_score, FailureReason, ParseFailure, ParseOutcome, ParseRule, ParsedScore,
};
use crate::prompt::Scenario;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// One line of a `scores_<backend>_<scenario>.jsonl` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub question_id: QuestionId,
    pub concept_link_id: EdgeId,
    pub student_id: StudentId,
    pub backend_id: String,
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<ParseRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excerpt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport_error: Option<String>,
}

impl ScoreLine {
    pub fn triplet(&self) -> Triplet {
        Triplet {
            question_id: self.question_id.clone(),
            concept_link_id: self.concept_link_id.clone(),
            student_id: self.student_id.clone(),
        }
    }

    /// The parse outcome this line records. Transport failures become
    /// no-score parse failures whose excerpt names the error.
    pub fn outcome(&self) -> ParseOutcome {
        if let (Some(value), Some(rule)) = (self.score, self.rule) {
            if let Ok(score) = Score::new(value) {
                return ParseOutcome::Score(ParsedScore {
                    value: score,
                    rule,
                    raw_excerpt: self.excerpt.clone().unwrap_or_default(),
                });
            }
        }
        if let Some(reason) = self.failure {
            return ParseOutcome::Failure(ParseFailure {
                reason,
                raw_excerpt: self.excerpt.clone().unwrap_or_default(),
            });
        }
        ParseOutcome::Failure(ParseFailure {
            reason: FailureReason::NoScoreFound,
            raw_excerpt: format!(
                "<transport error: {}>",
                self.transport_error.as_deref().unwrap_or("unknown")
            ),
        })
    }
}

/// File name for one (backend, scenario) score run.
pub fn score_file_name(backend_id: &str, scenario: Scenario) -> String {
    format!("scores_{backend_id}_{}.jsonl", scenario.name())
}

/// Mental-model output for one student from one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentalModel {
    pub student_id: StudentId,
    pub source: ScoreSource,
    pub assignments: Vec<StrengthAssignment<f64>>,
    pub uncovered_links: Vec<EdgeId>,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path} line {line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("score file {0} is empty")]
    EmptyScoreFile(PathBuf),
    #[error("no ground truth in the dataset; scoring requires human consensus scores")]
    NoGroundTruth,
    #[error("no ground truth for triplet {0}")]
    MissingGroundTruth(Triplet),
    #[error(transparent)]
    Aggregate(#[from] crate::aggregate::AggregateError),
}

/// Score every triplet of the dataset under one scenario. Lines come back
/// in canonical triplet order; per-triplet failures are embedded.
pub fn score_run(dataset: &Dataset, gateway: &Gateway, scenario: Scenario) -> Vec<ScoreLine> {
    let triplets = dataset.triplets();
    let items = run_batch(gateway, &triplets, scenario, dataset);
    items
        .into_iter()
        .map(|item| {
            let triplet = item.triplet;
            match item.outcome {
                Ok(result) => {
                    let outcome = parse_score(&result.raw_text);
                    let (score, rule, failure, excerpt) = match outcome {
                        ParseOutcome::Score(parsed) => (
                            Some(parsed.value.get()),
                            Some(parsed.rule),
                            None,
                            Some(parsed.raw_excerpt),
                        ),
                        ParseOutcome::Failure(failed) => {
                            (None, None, Some(failed.reason), Some(failed.raw_excerpt))
                        }
                    };
                    ScoreLine {
                        question_id: triplet.question_id,
                        concept_link_id: triplet.concept_link_id,
                        student_id: triplet.student_id,
                        backend_id: gateway.backend_id().to_owned(),
                        scenario,
                        request_hash: Some(result.request_hash),
                        raw_text: Some(result.raw_text),
                        score,
                        rule,
                        failure,
                        excerpt,
                        transport_error: None,
                    }
                }
                Err(error) => ScoreLine {
                    question_id: triplet.question_id,
                    concept_link_id: triplet.concept_link_id,
                    student_id: triplet.student_id,
                    backend_id: gateway.backend_id().to_owned(),
                    scenario,
                    request_hash: None,
                    raw_text: None,
                    score: None,
                    rule: None,
                    failure: None,
                    excerpt: None,
                    transport_error: Some(error),
                },
            }
        })
        .collect()
}

/// Write score lines as JSONL.
pub fn write_score_lines(path: &Path, lines: &[ScoreLine]) -> Result<(), PipelineError> {
    let mut out = String::new();
    for line in lines {
        out.push_str(&serde_json::to_string(line).expect("score line serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a score file back; empty files are an error.
pub fn read_score_lines(path: &Path) -> Result<Vec<ScoreLine>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        lines.push(
            serde_json::from_str(line).map_err(|source| PipelineError::Parse {
                path: path.to_path_buf(),
                line: index + 1,
                source,
            })?,
        );
    }
    if lines.is_empty() {
        return Err(PipelineError::EmptyScoreFile(path.to_path_buf()));
    }
    Ok(lines)
}

/// Score records for one student from the dataset's human ground truth.
pub fn human_records(dataset: &Dataset, student_id: &StudentId) -> Vec<ScoreRecord> {
    dataset
        .ground_truth_map()
        .iter()
        .filter(|(triplet, _)| &triplet.student_id == student_id)
        .map(|(triplet, score)| ScoreRecord {
            triplet: triplet.clone(),
            score: *score,
            source: ScoreSource::Human,
            raw_text: None,
        })
        .collect()
}

/// Score records for one student from parsed model score lines. Lines
/// without a parsed score (failures, transport errors) carry no judgment
/// and are skipped.
pub fn model_records(lines: &[ScoreLine], student_id: &StudentId) -> Vec<ScoreRecord> {
    lines
        .iter()
        .filter(|line| &line.student_id == student_id)
        .filter_map(|line| {
            let value = line.score?;
            let score = Score::new(value).ok()?;
            Some(ScoreRecord {
                triplet: line.triplet(),
                score,
                source: ScoreSource::Model {
                    backend_id: line.backend_id.clone(),
                    scenario: line.scenario,
                },
                raw_text: line.raw_text.clone(),
            })
        })
        .collect()
}

/// Aggregate one student's records into a mental model plus the annotated
/// graph.
pub fn build_mental_model(
    dataset: &Dataset,
    student_id: &StudentId,
    records: &[ScoreRecord],
    source: ScoreSource,
    propagate: bool,
) -> Result<(MentalModel, ConceptGraph<f64>), PipelineError> {
    let assignments: Vec<StrengthAssignment<f64>> =
        aggregate_strengths(records, dataset.map(), student_id)?;
    let graph = annotate_graph(dataset.graph(), &assignments, propagate)?;
    let uncovered = uncovered_links(dataset.map(), &assignments);
    Ok((
        MentalModel {
            student_id: student_id.clone(),
            source,
            assignments,
            uncovered_links: uncovered,
        },
        graph,
    ))
}

/// Join score lines with the dataset's ground truth for report building.
pub fn join_with_truth(
    dataset: &Dataset,
    lines: &[ScoreLine],
) -> Result<Vec<JoinedOutcome>, PipelineError> {
    if !dataset.has_ground_truth() {
        return Err(PipelineError::NoGroundTruth);
    }
    lines
        .iter()
        .map(|line| {
            let triplet = line.triplet();
            let truth = dataset
                .ground_truth(&triplet)
                .ok_or_else(|| PipelineError::MissingGroundTruth(triplet.clone()))?;
            Ok(JoinedOutcome {
                triplet,
                outcome: line.outcome(),
                truth,
            })
        })
        .collect()
}

/// Build the evaluation report over several score files.
pub fn evaluate_runs(
    dataset: &Dataset,
    runs: &[Vec<ScoreLine>],
    policy: FailurePolicy,
) -> Result<EvaluationReport, PipelineError> {
    let mut batches: BTreeMap<(String, Scenario), Vec<JoinedOutcome>> = BTreeMap::new();
    for lines in runs {
        for line in lines {
            let key = (line.backend_id.clone(), line.scenario);
            let triplet = line.triplet();
            let truth = if dataset.has_ground_truth() {
                dataset
                    .ground_truth(&triplet)
                    .ok_or_else(|| PipelineError::MissingGroundTruth(triplet.clone()))?
            } else {
                return Err(PipelineError::NoGroundTruth);
            };
            batches.entry(key).or_default().push(JoinedOutcome {
                triplet,
                outcome: line.outcome(),
                truth,
            });
        }
    }
    Ok(build_report(&batches, policy))
}
