//! Evaluation metrics: exact-match accuracy, RMSE and earth mover's
//! distance, plus assembly of per-(backend, scenario) report rows.
//!
//! EMD is computed between the two normalised score distributions on
//! support 1..=5 with ground distance |i − j|. In one dimension that equals
//! the sum of absolute CDF differences, which is what [`emd`] evaluates;
//! the test suite checks it against an independent minimum-cost transport
//! solver.

use crate::dataset::Triplet;
use crate::ids::Score;
use crate::parser::ParseOutcome;
use crate::prompt::Scenario;
use crate::scalar::{Real, Scalar};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// One (human, model) score pair for a triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScorePair {
    pub triplet: Triplet,
    pub human: Score,
    pub model: Score,
}

/// Counts of scores 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScoreHistogram {
    counts: [u64; 5],
}

impl ScoreHistogram {
    pub fn new(counts: [u64; 5]) -> Self {
        Self { counts }
    }

    pub fn from_scores<I: IntoIterator<Item = Score>>(scores: I) -> Self {
        let mut hist = Self::default();
        for score in scores {
            hist.add(score);
        }
        hist
    }

    pub fn add(&mut self, score: Score) {
        self.counts[(score.get() - 1) as usize] += 1;
    }

    pub fn count(&self, score: Score) -> u64 {
        self.counts[(score.get() - 1) as usize]
    }

    pub fn counts(&self) -> &[u64; 5] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("metric undefined on empty input")]
    EmptyInput,
    #[error("histogram has zero total mass")]
    ZeroTotal,
}

/// Percentage of pairs where the model score equals the human score.
/// Full precision; round only at display time.
pub fn exact_match_accuracy<S: Scalar>(pairs: &[ScorePair]) -> Result<S, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let matches = pairs.iter().filter(|p| p.human == p.model).count();
    Ok(S::from_count(100) * S::from_count(matches) / S::from_count(pairs.len()))
}

/// Root mean squared error of model scores against human scores.
pub fn rmse<F: Real>(pairs: &[ScorePair]) -> Result<F, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut sum = F::zero();
    for pair in pairs {
        let diff = F::from_score(pair.model.get()) - F::from_score(pair.human.get());
        sum = sum + diff * diff;
    }
    Ok((sum / F::from_count(pairs.len())).sqrt())
}

/// Earth mover's distance between two normalised score distributions with
/// ground distance |i − j|: the sum of absolute CDF differences over the
/// first four bins. Symmetric, nonnegative and zero exactly on equal
/// distributions.
pub fn emd<S: Scalar>(model: &ScoreHistogram, human: &ScoreHistogram) -> Result<S, MetricError> {
    if model.total() == 0 || human.total() == 0 {
        return Err(MetricError::ZeroTotal);
    }
    let total_model = S::from_count(model.total() as usize);
    let total_human = S::from_count(human.total() as usize);
    let mut cdf_model = S::zero();
    let mut cdf_human = S::zero();
    let mut distance = S::zero();
    for bin in 0..4 {
        cdf_model = cdf_model + S::from_count(model.counts[bin] as usize) / total_model.clone();
        cdf_human = cdf_human + S::from_count(human.counts[bin] as usize) / total_human.clone();
        distance = distance + (cdf_model.clone() - cdf_human.clone()).abs();
    }
    Ok(distance)
}

/// How parse failures enter the metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Failures are excluded from all metrics and counted per row.
    Exclude,
    /// Failures enter the metrics as score 3; the row is flagged.
    ImputeMidpoint,
}

/// One scored outcome joined with its ground truth.
#[derive(Debug, Clone)]
pub struct JoinedOutcome {
    pub triplet: Triplet,
    pub outcome: ParseOutcome,
    pub truth: Score,
}

/// One report row: metrics for a (backend, scenario) batch. Metric fields
/// are `None` when the batch had zero parseable scores ("n/a" in output).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub backend_id: String,
    pub scenario: Scenario,
    pub accuracy_percent: Option<f64>,
    pub rmse: Option<f64>,
    pub emd: Option<f64>,
    pub n_pairs: usize,
    pub n_parse_failures: usize,
    pub imputed: bool,
}

/// The full evaluation report, rows sorted by accuracy descending.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
}

/// Build one row from a batch of joined outcomes.
pub fn build_row(
    backend_id: &str,
    scenario: Scenario,
    batch: &[JoinedOutcome],
    policy: FailurePolicy,
) -> ReportRow {
    let mut pairs: Vec<ScorePair> = Vec::new();
    let mut n_parse_failures = 0usize;
    for joined in batch {
        match &joined.outcome {
            ParseOutcome::Score(parsed) => pairs.push(ScorePair {
                triplet: joined.triplet.clone(),
                human: joined.truth,
                model: parsed.value,
            }),
            ParseOutcome::Failure(_) => n_parse_failures += 1,
        }
    }
    let n_pairs = pairs.len();

    let mut metric_pairs = pairs;
    if policy == FailurePolicy::ImputeMidpoint {
        let midpoint = Score::new(3).expect("3 in range");
        for joined in batch {
            if joined.outcome.failure().is_some() {
                metric_pairs.push(ScorePair {
                    triplet: joined.triplet.clone(),
                    human: joined.truth,
                    model: midpoint,
                });
            }
        }
    }

    let (accuracy_percent, rmse_value, emd_value) = if metric_pairs.is_empty() {
        (None, None, None)
    } else {
        let accuracy = exact_match_accuracy::<f64>(&metric_pairs).expect("nonempty");
        let rmse_value = rmse::<f64>(&metric_pairs).expect("nonempty");
        let model_hist = ScoreHistogram::from_scores(metric_pairs.iter().map(|p| p.model));
        let human_hist = ScoreHistogram::from_scores(metric_pairs.iter().map(|p| p.human));
        let emd_value = emd::<f64>(&model_hist, &human_hist).expect("nonzero totals");
        (Some(accuracy), Some(rmse_value), Some(emd_value))
    };

    ReportRow {
        backend_id: backend_id.to_owned(),
        scenario,
        accuracy_percent,
        rmse: rmse_value,
        emd: emd_value,
        n_pairs,
        n_parse_failures,
        imputed: policy == FailurePolicy::ImputeMidpoint && n_parse_failures > 0,
    }
}

/// Assemble the report from per-(backend, scenario) batches, sorted by
/// accuracy descending (rows without metrics last, ties by key).
pub fn build_report(
    batches: &BTreeMap<(String, Scenario), Vec<JoinedOutcome>>,
    policy: FailurePolicy,
) -> EvaluationReport {
    let mut rows: Vec<ReportRow> = batches
        .iter()
        .map(|((backend_id, scenario), batch)| build_row(backend_id, *scenario, batch, policy))
        .collect();
    rows.sort_by(|a, b| {
        let key_a = a.accuracy_percent.unwrap_or(f64::NEG_INFINITY);
        let key_b = b.accuracy_percent.unwrap_or(f64::NEG_INFINITY);
        key_b
            .partial_cmp(&key_a)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| (&a.backend_id, a.scenario).cmp(&(&b.backend_id, b.scenario)))
    });
    EvaluationReport { rows }
}

fn fmt_metric(value: Option<f64>, decimals: usize) -> String {
    match value {
        Some(v) => format!("{v:.decimals$}"),
        None => "n/a".to_owned(),
    }
}

impl EvaluationReport {
    /// Plain-text table, one row per (backend, scenario).
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:<10} {:>10} {:>10} {:>10} {:>8} {:>10} {:>8}",
            "backend", "scenario", "accuracy", "rmse", "emd", "pairs", "failures", "imputed"
        );
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<20} {:<10} {:>10} {:>10} {:>10} {:>8} {:>10} {:>8}",
                row.backend_id,
                row.scenario.name(),
                fmt_metric(row.accuracy_percent, 2),
                fmt_metric(row.rmse, 4),
                fmt_metric(row.emd, 4),
                row.n_pairs,
                row.n_parse_failures,
                row.imputed
            );
        }
        out
    }

    /// CSV with a fixed header, same row order as the text table.
    pub fn render_csv(&self) -> String {
        let mut out =
            String::from("backend,scenario,accuracy,rmse,emd,n_pairs,n_parse_failures,imputed\n");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                row.backend_id,
                row.scenario.name(),
                fmt_metric(row.accuracy_percent, 2),
                fmt_metric(row.rmse, 4),
                fmt_metric(row.emd, 4),
                row.n_pairs,
                row.n_parse_failures,
                row.imputed
            );
        }
        out
    }
}
