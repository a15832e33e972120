//! `linkgrade` — score multimodal student answers against concept links,
//! build strength-annotated concept graphs, and evaluate backends against
//! human ground truth.
//!
//! Exit codes: 0 success, 1 validation or metric-domain error, 2 I/O or
//! configuration error.

mod config;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use linkgrade_core::aggregate::ScoreSource;
use linkgrade_core::dataset::{Dataset, DatasetError};
use linkgrade_core::gateway::{Gateway, GatewayError};
use linkgrade_core::metrics::FailurePolicy;
use linkgrade_core::pipeline::{self, score_file_name, PipelineError, ScoreLine};
use linkgrade_core::prompt::Scenario;
use linkgrade_core::{export_dot, fixture, StudentId};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_DOMAIN: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "linkgrade", version, about = "Concept-link scoring pipeline")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Dataset root (contains dataset.json and images/).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory for score files, mental models and reports.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load the dataset and report every invariant violation.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score all triplets with the selected backends and scenarios.
    Score {
        #[command(flatten)]
        common: CommonArgs,
        /// Backend id (repeatable); defaults to the config's backends.
        #[arg(long = "backend")]
        backends: Vec<String>,
        /// Scenario (repeatable): base, generic, detailed, cot.
        #[arg(long = "scenario")]
        scenarios: Vec<Scenario>,
        /// Cassette file for record/replay.
        #[arg(long)]
        cassette: Option<PathBuf>,
        /// Record live responses into the cassette.
        #[arg(long, conflicts_with = "replay")]
        record: bool,
        /// Replay from the cassette only (default when a cassette is given).
        #[arg(long)]
        replay: bool,
        /// Override per-backend dispatch parallelism.
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Aggregate scores into per-student mental-model files.
    Aggregate {
        #[command(flatten)]
        common: CommonArgs,
        /// Score source: "human" or "BACKEND:SCENARIO".
        #[arg(long, default_value = "human")]
        source: String,
        /// Infer strengths for higher-level edges from incident lower ones.
        #[arg(long)]
        propagate: bool,
        /// Also export an annotated DOT graph per student (needs every
        /// edge strengthened, so usually --propagate too).
        #[arg(long)]
        dot: bool,
    },
    /// Join score files with ground truth and emit the evaluation report.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Backend id (repeatable); defaults to every score file present.
        #[arg(long = "backend")]
        backends: Vec<String>,
        /// Scenario (repeatable).
        #[arg(long = "scenario")]
        scenarios: Vec<Scenario>,
        /// Impute parse failures as score 3 instead of excluding them.
        #[arg(long)]
        impute: bool,
    },
    /// Developer fixtures.
    Fixtures {
        #[command(subcommand)]
        command: FixturesCommand,
    },
}

#[derive(Subcommand)]
enum FixturesCommand {
    /// Generate the seeded synthetic dataset (895 triplets).
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

/// An error carrying its process exit code.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn domain(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DOMAIN,
            message: message.into(),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(err: DatasetError) -> Self {
        match err {
            DatasetError::Invalid(_) => CliError::domain(err.to_string()),
            _ => CliError::config(err.to_string()),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(err: GatewayError) -> Self {
        CliError::config(err.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(err: PipelineError) -> Self {
        match err {
            PipelineError::Io { .. } | PipelineError::Parse { .. } => {
                CliError::config(err.to_string())
            }
            _ => CliError::domain(err.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(config) => config,
            Err(err) => {
                eprintln!("error: {err}");
                return ExitCode::from(EXIT_CONFIG);
            }
        },
        None => RunConfig::default(),
    };
    let result = match cli.command {
        Command::Validate { common } => cmd_validate(&config, &common),
        Command::Score {
            common,
            backends,
            scenarios,
            cassette,
            record,
            replay,
            parallelism,
        } => cmd_score(
            &config,
            &common,
            backends,
            scenarios,
            cassette,
            record,
            replay,
            parallelism,
        ),
        Command::Aggregate {
            common,
            source,
            propagate,
            dot,
        } => cmd_aggregate(&config, &common, &source, propagate, dot),
        Command::Evaluate {
            common,
            backends,
            scenarios,
            impute,
        } => cmd_evaluate(&config, &common, backends, scenarios, impute),
        Command::Fixtures {
            command: FixturesCommand::Generate { out, seed },
        } => cmd_fixtures_generate(&out, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

fn dataset_root(config: &RunConfig, common: &CommonArgs) -> Result<PathBuf, CliError> {
    common
        .dataset
        .clone()
        .or_else(|| config.dataset.clone())
        .ok_or_else(|| CliError::config("no dataset given: pass --dataset or set it in the config"))
}

fn output_dir(config: &RunConfig, common: &CommonArgs) -> Result<PathBuf, CliError> {
    let dir = common
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| {
        CliError::config(format!("cannot create output dir {}: {e}", dir.display()))
    })?;
    Ok(dir)
}

fn load_dataset(root: &Path) -> Result<Dataset, CliError> {
    Dataset::load(root).map_err(CliError::from)
}

fn cmd_validate(config: &RunConfig, common: &CommonArgs) -> Result<(), CliError> {
    let root = dataset_root(config, common)?;
    match Dataset::load(&root) {
        Ok(dataset) => {
            println!(
                "valid: {} questions, {} students, {} graph edges, {} triplets",
                dataset.questions().len(),
                dataset.students().len(),
                dataset.graph().edges().len(),
                dataset.triplets().len()
            );
            Ok(())
        }
        Err(DatasetError::Invalid(report)) => {
            for violation in report.violations() {
                println!("violation: {violation}");
            }
            Err(CliError::domain(format!(
                "{} violation(s) found",
                report.violations().len()
            )))
        }
        Err(err) => Err(CliError::config(err.to_string())),
    }
}

fn selected_backends(
    config: &RunConfig,
    requested: &[String],
) -> Result<Vec<linkgrade_core::BackendConfig>, CliError> {
    if requested.is_empty() {
        let defaults = if config.backends.is_empty() {
            RunConfig::builtin_backends()
        } else {
            config.backends.clone()
        };
        return Ok(defaults);
    }
    requested
        .iter()
        .map(|id| {
            config
                .find_backend(id)
                .ok_or_else(|| CliError::config(format!("backend {id} not found in config")))
        })
        .collect()
}

fn selected_scenarios(config: &RunConfig, requested: &[Scenario]) -> Vec<Scenario> {
    if !requested.is_empty() {
        requested.to_vec()
    } else if !config.scenarios.is_empty() {
        config.scenarios.clone()
    } else {
        vec![Scenario::Generic]
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_score(
    config: &RunConfig,
    common: &CommonArgs,
    backends: Vec<String>,
    scenarios: Vec<Scenario>,
    cassette: Option<PathBuf>,
    record: bool,
    replay: bool,
    parallelism: Option<usize>,
) -> Result<(), CliError> {
    let root = dataset_root(config, common)?;
    let out = output_dir(config, common)?;
    let dataset = load_dataset(&root)?;
    let scenarios = selected_scenarios(config, &scenarios);
    let cassette = cassette.or_else(|| config.cassette.clone());
    let record = record || (config.record && !replay);

    // build every gateway first so config errors abort before any dispatch
    let mut gateways = Vec::new();
    for mut backend in selected_backends(config, &backends)? {
        if let Some(p) = parallelism.or(config.parallelism) {
            backend.parallelism = p;
        }
        let gateway = Gateway::new(
            backend,
            Some(dataset.ground_truth_map()),
            cassette.as_deref(),
            record,
        )?;
        gateways.push(gateway);
    }

    for gateway in &gateways {
        for &scenario in &scenarios {
            let lines = pipeline::score_run(&dataset, gateway, scenario);
            let failures = lines.iter().filter(|l| l.score.is_none()).count();
            let path = out.join(score_file_name(gateway.backend_id(), scenario));
            pipeline::write_score_lines(&path, &lines)?;
            println!(
                "scored {} triplets with {}/{} ({} unparsed) -> {}",
                lines.len(),
                gateway.backend_id(),
                scenario,
                failures,
                path.display()
            );
        }
    }
    Ok(())
}

fn parse_source(raw: &str) -> Result<ScoreSource, CliError> {
    if raw == "human" {
        return Ok(ScoreSource::Human);
    }
    let (backend_id, scenario) = raw.split_once(':').ok_or_else(|| {
        CliError::config(format!(
            "bad --source {raw:?}: expected \"human\" or \"<backend>:<scenario>\""
        ))
    })?;
    let scenario: Scenario = scenario.parse().map_err(|e: String| CliError::config(e))?;
    Ok(ScoreSource::Model {
        backend_id: backend_id.to_owned(),
        scenario,
    })
}

fn cmd_aggregate(
    config: &RunConfig,
    common: &CommonArgs,
    source_raw: &str,
    propagate_flag: bool,
    dot: bool,
) -> Result<(), CliError> {
    let root = dataset_root(config, common)?;
    let out = output_dir(config, common)?;
    let dataset = load_dataset(&root)?;
    let source = parse_source(source_raw)?;
    let propagate = propagate_flag || config.propagate;

    let score_lines: Option<Vec<ScoreLine>> = match &source {
        ScoreSource::Human => {
            if !dataset.has_ground_truth() {
                return Err(CliError::domain(
                    "dataset has no ground truth; aggregate a model source or add consensus scores",
                ));
            }
            None
        }
        ScoreSource::Model {
            backend_id,
            scenario,
        } => {
            let path = out.join(score_file_name(backend_id, *scenario));
            Some(pipeline::read_score_lines(&path)?)
        }
    };

    let model_dir = out.join("mentalmodels").join(source.to_string());
    std::fs::create_dir_all(&model_dir)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", model_dir.display())))?;

    let mut written = 0usize;
    for student in dataset.students() {
        let records = match &score_lines {
            None => pipeline::human_records(&dataset, &student),
            Some(lines) => pipeline::model_records(lines, &student),
        };
        if records.is_empty() {
            println!("skipping {student}: no scored triplets from this source");
            continue;
        }
        let (model, graph) =
            pipeline::build_mental_model(&dataset, &student, &records, source.clone(), propagate)?;
        let path = model_dir.join(mental_model_file_name(&student));
        write_json(&path, &model)?;
        written += 1;
        if dot {
            let dot_text = export_dot(&graph, true)
                .map_err(|e| CliError::domain(format!("{student}: {e}")))?;
            let dot_path = model_dir.join(format!("mentalmodel_{student}.dot"));
            std::fs::write(&dot_path, dot_text).map_err(|e| {
                CliError::config(format!("cannot write {}: {e}", dot_path.display()))
            })?;
        }
        println!("wrote {}", path.display());
    }
    println!("aggregated {written} mental model(s) from source {source}");
    Ok(())
}

fn mental_model_file_name(student: &StudentId) -> String {
    format!("mentalmodel_{student}.json")
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn cmd_evaluate(
    config: &RunConfig,
    common: &CommonArgs,
    backends: Vec<String>,
    scenarios: Vec<Scenario>,
    impute: bool,
) -> Result<(), CliError> {
    let root = dataset_root(config, common)?;
    let out = output_dir(config, common)?;
    let dataset = load_dataset(&root)?;
    if !dataset.has_ground_truth() {
        return Err(CliError::domain(
            "dataset has no ground truth: add consensus scores to dataset.json \
             (ground_truth entries) before evaluating",
        ));
    }

    let runs = if backends.is_empty() && scenarios.is_empty() {
        score_files_in(&out)?
    } else {
        let mut runs = Vec::new();
        let scenario_list = selected_scenarios(config, &scenarios);
        for backend in selected_backends(config, &backends)? {
            for &scenario in &scenario_list {
                let path = out.join(score_file_name(&backend.backend_id, scenario));
                runs.push(pipeline::read_score_lines(&path)?);
            }
        }
        runs
    };
    if runs.is_empty() {
        return Err(CliError::config(format!(
            "no score files found under {}; run `linkgrade score` first",
            out.display()
        )));
    }

    let policy = if impute || config.impute_failures {
        FailurePolicy::ImputeMidpoint
    } else {
        FailurePolicy::Exclude
    };
    let report = pipeline::evaluate_runs(&dataset, &runs, policy)?;

    let text = report.render_text();
    std::fs::write(out.join("report.txt"), &text)
        .map_err(|e| CliError::config(format!("cannot write report.txt: {e}")))?;
    std::fs::write(out.join("report.csv"), report.render_csv())
        .map_err(|e| CliError::config(format!("cannot write report.csv: {e}")))?;
    print!("{text}");
    println!(
        "wrote {} and {}",
        out.join("report.txt").display(),
        out.join("report.csv").display()
    );
    Ok(())
}

fn score_files_in(out: &Path) -> Result<Vec<Vec<ScoreLine>>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(out)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", out.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|path| {
            path.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("scores_") && n.ends_with(".jsonl"))
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| pipeline::read_score_lines(&path).map_err(CliError::from))
        .collect()
}

fn cmd_fixtures_generate(out: &Path, seed: u64) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", out.display())))?;
    let dataset = fixture::generate(out, seed).map_err(CliError::from)?;
    println!(
        "generated dataset at {}: {} question parts in {} questions, {} students, \
         {} concept links, {} triplets (seed {seed})",
        out.display(),
        dataset.questions().len(),
        fixture::QUESTION_GROUP_COUNT,
        dataset.students().len(),
        fixture::CONCEPT_LINK_COUNT,
        dataset.triplets().len(),
    );
    Ok(())
}
