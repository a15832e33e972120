//! Prompt rendering for the four scoring scenarios.
//!
//! The prompt wording is fixed; only three things vary per request: the
//! concept link under evaluation (injected as a labelled line right before
//! the task statement), extracted question/answer text (under "Question
//! text:" / "Answer text:" headers after the image-role sentences), and the
//! per-link scale when the Detailed scenario is selected. Question images
//! always precede answer images in the attachment list.
//!
//! Committed copies of the four templates live under `prompts/` with
//! `<<PLACEHOLDER>>` tokens; [`golden_check`] guards against drift.

use crate::dataset::{Dataset, ImageRef, Triplet};
use crate::ids::EdgeId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// The four prompting regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Bare 1–5 instruction, no scale.
    Base,
    /// Shared five-point scale.
    Generic,
    /// Concept-link-specific five-point scale.
    Detailed,
    /// Shared scale plus step-by-step reasoning instructions.
    Cot,
}

impl Scenario {
    pub fn all() -> [Scenario; 4] {
        [
            Scenario::Base,
            Scenario::Generic,
            Scenario::Detailed,
            Scenario::Cot,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Base => "base",
            Scenario::Generic => "generic",
            Scenario::Detailed => "detailed",
            Scenario::Cot => "cot",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Scenario::Base),
            "generic" => Ok(Scenario::Generic),
            "detailed" => Ok(Scenario::Detailed),
            "cot" => Ok(Scenario::Cot),
            other => Err(format!("unknown scenario: {other}")),
        }
    }
}

/// The five generic scale descriptions, indexed by score − 1. The Generic
/// and CoT scenarios always use exactly these.
pub const GENERIC_SCALE_DESCRIPTIONS: [&str; 5] = [
    "(No indication of ability to handle the link)",
    "(Very little familiarity with the skill)",
    "(Inconsistent Procedure) Trying to impose the text book understanding without any modification.",
    "(Inconsistent Concept/ Procedure- applying with some changes from a regular textbook usage)",
    "(Strong Conceptual)",
];

const INTRO_PARAGRAPHS: [&str; 4] = [
    "You are an expert evaluator of student responses.",
    "The provided questions and student answers belong to the topic of addition and resolution of vectors from 11th standard.",
    "The first image provided belongs to the question.",
    "A second image if present belongs to the student answer.",
];

const STRENGTH_DEFINITION: &str = "A strength score is a number between 1 and 5 (both inclusive) \
which is used to represent how well a concept link has been expressed in the student answer.";

const TASK_LINE: &str = "Task : Your task is to generate the strength score of the concept link \
by analyzing the question and student answer pair.";

const SCALE_HEADING: &str = "Strength Score Scale (1–5):";

const COT_INSTRUCTIONS: [&str; 6] = [
    "Task Instructions:",
    "1. Review the question carefully.",
    "2. Evaluate the student’s answer.",
    "3. Consider the scoring guide, which maps scores to descriptions.",
    "4. Choose the score (1–5) that best reflects how effectively the student’s answer demonstrates the concept link.",
    "5. Return only the selected score in the specified output format.",
];

const COT_GUIDE_HEADING: &str = "Scoring Guide (1–5):";

const COT_GUIDE_NOTE: &str =
    "Each line can be read as \"score : general description – concept-link specific description\"";

/// The strict output-format block every prompt ends with.
pub const OUTPUT_FORMAT_SUFFIX: &str = "Output Format (strict):\n\n<Score>an integer between 1 \
and 5</Score>\n\nExamples:\n\n<Score>1</Score>\n\n<Score>5</Score>\n";

/// Everything that varies between rendered prompts.
#[derive(Debug, Clone)]
pub struct PromptInputs<'a> {
    pub concept_link: &'a str,
    pub question_text: Option<&'a str>,
    pub answer_text: Option<&'a str>,
    /// Required for [`Scenario::Detailed`], ignored otherwise.
    pub detailed_scale: Option<&'a BTreeMap<u8, String>>,
}

/// A prompt ready for dispatch: full text plus ordered image attachments
/// (question images first, then answer images).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub attachments: Vec<ImageRef>,
    pub scenario: Scenario,
    pub triplet: Triplet,
}

/// Render the prompt text for `scenario`. Deterministic in its inputs.
pub fn render_text(scenario: Scenario, inputs: &PromptInputs<'_>) -> Result<String, PromptError> {
    let mut paragraphs: Vec<String> = INTRO_PARAGRAPHS.iter().map(|p| (*p).to_owned()).collect();
    if let Some(question) = inputs.question_text {
        paragraphs.push(format!("Question text:\n{question}"));
    }
    if let Some(answer) = inputs.answer_text {
        paragraphs.push(format!("Answer text:\n{answer}"));
    }
    paragraphs.push(STRENGTH_DEFINITION.to_owned());
    paragraphs.push(format!("Concept link: {}", inputs.concept_link));

    match scenario {
        Scenario::Base => {
            paragraphs.push(TASK_LINE.to_owned());
        }
        Scenario::Generic => {
            paragraphs.push(TASK_LINE.to_owned());
            paragraphs.push(SCALE_HEADING.to_owned());
            for (i, description) in GENERIC_SCALE_DESCRIPTIONS.iter().enumerate() {
                paragraphs.push(format!("{} : {description}", i + 1));
            }
        }
        Scenario::Detailed => {
            let scale = inputs
                .detailed_scale
                .ok_or(PromptError::MissingDetailedScale)?;
            paragraphs.push(TASK_LINE.to_owned());
            paragraphs.push(SCALE_HEADING.to_owned());
            for score in 1..=5u8 {
                let description = scale.get(&score).ok_or(PromptError::MissingDetailedScale)?;
                paragraphs.push(format!("{score} : {description}"));
            }
        }
        Scenario::Cot => {
            paragraphs.extend(COT_INSTRUCTIONS.iter().map(|p| (*p).to_owned()));
            paragraphs.push(COT_GUIDE_HEADING.to_owned());
            paragraphs.push(COT_GUIDE_NOTE.to_owned());
            for (i, description) in GENERIC_SCALE_DESCRIPTIONS.iter().enumerate() {
                paragraphs.push(format!("{} : {description}", i + 1));
            }
        }
    }

    let mut text = paragraphs.join("\n\n");
    text.push_str("\n\n");
    text.push_str(OUTPUT_FORMAT_SUFFIX);
    Ok(text)
}

/// Display name of a concept link: the labels of its endpoints, the more
/// specific level first.
pub fn concept_link_name(dataset: &Dataset, link: &EdgeId) -> Result<String, PromptError> {
    let graph = dataset.graph();
    let edge = graph
        .edge(link)
        .ok_or_else(|| PromptError::UnknownConceptLink(link.clone()))?;
    let a = graph
        .node(&edge.endpoints.0)
        .ok_or_else(|| PromptError::UnknownConceptLink(link.clone()))?;
    let b = graph
        .node(&edge.endpoints.1)
        .ok_or_else(|| PromptError::UnknownConceptLink(link.clone()))?;
    let (first, second) = if a.level <= b.level { (a, b) } else { (b, a) };
    Ok(format!("{} – {}", first.label, second.label))
}

/// Build the full prompt for one triplet against a dataset.
pub fn build_prompt(
    scenario: Scenario,
    triplet: &Triplet,
    dataset: &Dataset,
) -> Result<RenderedPrompt, PromptError> {
    let question = dataset
        .question(&triplet.question_id)
        .ok_or_else(|| PromptError::UnknownQuestion(triplet.question_id.clone()))?;
    let answer = dataset
        .answer(&triplet.question_id, &triplet.student_id)
        .ok_or_else(|| {
            PromptError::MissingAnswer(triplet.question_id.clone(), triplet.student_id.0.clone())
        })?;
    let concept_link = concept_link_name(dataset, &triplet.concept_link_id)?;

    let detailed_rubric = if scenario == Scenario::Detailed {
        Some(
            dataset
                .detailed_rubric(&triplet.concept_link_id)
                .ok_or_else(|| {
                    PromptError::MissingDetailedRubric(triplet.concept_link_id.clone())
                })?,
        )
    } else {
        None
    };

    let inputs = PromptInputs {
        concept_link: &concept_link,
        question_text: question.text.as_deref().filter(|t| !t.is_empty()),
        answer_text: answer.text.as_deref().filter(|t| !t.is_empty()),
        detailed_scale: detailed_rubric.map(|r| &r.scale),
    };
    let text = render_text(scenario, &inputs)?;

    let mut attachments = question.image_refs.clone();
    attachments.extend(answer.image_refs.iter().cloned());

    Ok(RenderedPrompt {
        text,
        attachments,
        scenario,
        triplet: triplet.clone(),
    })
}

/// Render `scenario` with placeholder tokens, as committed to `prompts/`.
pub fn render_template(scenario: Scenario) -> String {
    let placeholder_scale: BTreeMap<u8, String> =
        (1..=5u8).map(|k| (k, format!("<<RUBRIC_{k}>>"))).collect();
    let inputs = PromptInputs {
        concept_link: "<<CONCEPT_LINK>>",
        question_text: Some("<<QUESTION_TEXT>>"),
        answer_text: Some("<<ANSWER_TEXT>>"),
        detailed_scale: Some(&placeholder_scale),
    };
    render_text(scenario, &inputs).expect("placeholder render cannot fail")
}

/// True iff the placeholder template for `scenario` is byte-identical to
/// the golden file committed under `prompts_dir`.
pub fn golden_check(scenario: Scenario, prompts_dir: &Path) -> Result<bool, PromptError> {
    let path = prompts_dir.join(format!("{}.txt", scenario.name()));
    let committed = std::fs::read(&path).map_err(|_| PromptError::MissingGolden(path))?;
    Ok(committed == render_template(scenario).into_bytes())
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("unknown question: {0}")]
    UnknownQuestion(crate::ids::QuestionId),
    #[error("no answer by student {1} to question {0}")]
    MissingAnswer(crate::ids::QuestionId, String),
    #[error("unknown concept link: {0}")]
    UnknownConceptLink(EdgeId),
    #[error("detailed scenario requires a per-link scale")]
    MissingDetailedScale,
    #[error("no detailed rubric committed for concept link {0}")]
    MissingDetailedRubric(EdgeId),
    #[error("missing golden template file: {0}")]
    MissingGolden(std::path::PathBuf),
}
