//! Seeded synthetic dataset generator.
//!
//! Builds a vectors-topic dataset shaped like the reference assessment: 10
//! questions (each with three scored parts, so 30 answerable units), 6
//! students, 12 scoreable concept links, and exactly 895 triplets — every
//! part maps 5 links, all parts are answered by all students except one
//! missing answer (6 × 30 × 5 − 5 = 895). Ground truth covers every
//! triplet. Images are tiny opaque placeholder files; the pipeline never
//! decodes them.

use crate::dataset::{
    sha256_hex, Dataset, DatasetError, GroundTruthEntry, ImageRef, Manifest, Question, Rubric,
    StudentAnswer,
};
use crate::graph::{ConceptEdge, ConceptGraph, ConceptNode, Level, QuestionConceptMap};
use crate::ids::{EdgeId, QuestionId, StudentId};
use crate::prompt::{Scenario, GENERIC_SCALE_DESCRIPTIONS};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const STUDENT_COUNT: usize = 6;
pub const QUESTION_GROUP_COUNT: usize = 10;
pub const PARTS_PER_QUESTION: usize = 3;
pub const CONCEPT_LINK_COUNT: usize = 12;
pub const LINKS_PER_PART: usize = 5;
/// 6 students × 30 parts × 5 links, minus the one missing answer.
pub const TRIPLET_COUNT: usize =
    STUDENT_COUNT * QUESTION_GROUP_COUNT * PARTS_PER_QUESTION * LINKS_PER_PART - LINKS_PER_PART;

/// The concept graph for the vectors topic: 2 BCAs, 4 SCAs, 6 KCLs, the 12
/// scoreable KCL–SCA concept links and 4 structural SCA–BCA edges.
pub fn vectors_topic_graph() -> ConceptGraph<f64> {
    let node = |id: &str, label: &str, level| ConceptNode {
        id: id.into(),
        label: label.into(),
        level,
    };
    let nodes = vec![
        node("bca_addition", "Addition of Vectors", Level::Bca),
        node("bca_resolution", "Resolution of Vectors", Level::Bca),
        node("sca_triangle", "Triangle Law", Level::Sca),
        node("sca_parallelogram", "Parallelogram Law", Level::Sca),
        node("sca_components", "Components of a Vector", Level::Sca),
        node("sca_unit", "Unit Vector Representation", Level::Sca),
        node("kcl_direction", "Direction of Vectors", Level::Kcl),
        node("kcl_magnitude", "Magnitude of Vectors", Level::Kcl),
        node("kcl_scaling", "Scalar Multiplication", Level::Kcl),
        node("kcl_axes", "Choice of Axes", Level::Kcl),
        node("kcl_projection", "Projection onto Axes", Level::Kcl),
        node("kcl_resultant", "Resultant Construction", Level::Kcl),
    ];
    let edges = vec![
        ConceptEdge::new("cl01", "kcl_direction", "sca_triangle"),
        ConceptEdge::new("cl02", "kcl_magnitude", "sca_triangle"),
        ConceptEdge::new("cl03", "kcl_direction", "sca_parallelogram"),
        ConceptEdge::new("cl04", "kcl_magnitude", "sca_parallelogram"),
        ConceptEdge::new("cl05", "kcl_resultant", "sca_triangle"),
        ConceptEdge::new("cl06", "kcl_resultant", "sca_parallelogram"),
        ConceptEdge::new("cl07", "kcl_projection", "sca_components"),
        ConceptEdge::new("cl08", "kcl_axes", "sca_components"),
        ConceptEdge::new("cl09", "kcl_magnitude", "sca_components"),
        ConceptEdge::new("cl10", "kcl_direction", "sca_unit"),
        ConceptEdge::new("cl11", "kcl_scaling", "sca_unit"),
        ConceptEdge::new("cl12", "kcl_projection", "sca_unit"),
        ConceptEdge::new("sl01", "sca_triangle", "bca_addition"),
        ConceptEdge::new("sl02", "sca_parallelogram", "bca_addition"),
        ConceptEdge::new("sl03", "sca_components", "bca_resolution"),
        ConceptEdge::new("sl04", "sca_unit", "bca_resolution"),
    ];
    ConceptGraph::new(nodes, edges)
}

/// Ids of the 12 scoreable concept links, ascending.
pub fn concept_link_ids() -> Vec<EdgeId> {
    (1..=CONCEPT_LINK_COUNT)
        .map(|i| EdgeId::from(format!("cl{i:02}")))
        .collect()
}

/// The question group of a part id: `Q03b` belongs to group `Q03`.
pub fn question_group(id: &QuestionId) -> &str {
    id.as_str()
        .strip_suffix(|c: char| c.is_ascii_lowercase())
        .unwrap_or(id.as_str())
}

fn placeholder_image(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut bytes = vec![0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
    let mut payload = [0u8; 24];
    rng.fill(&mut payload);
    bytes.extend_from_slice(&payload);
    bytes
}

fn truth_score(rng: &mut ChaCha8Rng) -> i64 {
    match rng.gen_range(0..100) {
        0..=9 => 1,
        10..=29 => 2,
        30..=59 => 3,
        60..=84 => 4,
        _ => 5,
    }
}

const QUESTION_STEMS: [&str; 10] = [
    "Two forces act on a ring at a point. Construct their resultant",
    "A boat crosses a river with a steady current. Combine the velocities",
    "Resolve the given force along the incline and perpendicular to it",
    "Three coplanar vectors act at the origin as drawn. Find their sum",
    "Express the displacement in unit-vector form from the diagram",
    "A projectile's initial velocity is drawn at an angle. Split it into components",
    "Use the parallelogram construction to add the two drawn vectors",
    "Scale the drawn vector by the given factor and state the new magnitude",
    "From the drawn axes, project the vector and read off its components",
    "Two displacement vectors are drawn head to tail. Construct and measure the resultant",
];

const ANSWER_PHRASES: [&str; 6] = [
    "Drew the head-to-tail construction and measured the closing side.",
    "Split each vector into x and y parts and added the parts.",
    "Used the parallelogram diagonal for the combined vector.",
    "Scaled the components and recomputed the magnitude.",
    "Projected onto the drawn axes before combining.",
    "Measured direction with a protractor after constructing the resultant.",
];

struct ImageStore {
    files: BTreeMap<String, Vec<u8>>,
}

impl ImageStore {
    fn add(&mut self, name: String, bytes: Vec<u8>) -> ImageRef {
        let reference = ImageRef {
            path: format!("images/{name}"),
            sha256: sha256_hex(&bytes),
        };
        self.files.insert(name, bytes);
        reference
    }
}

/// Build the synthetic manifest plus its image files, deterministically
/// from `seed`.
pub fn build_manifest(seed: u64) -> (Manifest, BTreeMap<String, Vec<u8>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = vectors_topic_graph();
    let links = concept_link_ids();
    let mut images = ImageStore {
        files: BTreeMap::new(),
    };

    // question parts and their link mapping
    let mut questions = Vec::new();
    let mut map_entries: BTreeMap<QuestionId, BTreeSet<EdgeId>> = BTreeMap::new();
    for group in 1..=QUESTION_GROUP_COUNT {
        for (part_index, part) in ["a", "b", "c"].iter().enumerate() {
            let id = QuestionId::from(format!("Q{group:02}{part}"));
            let mut candidates = links.clone();
            candidates.shuffle(&mut rng);
            let mapped: BTreeSet<EdgeId> = candidates.into_iter().take(LINKS_PER_PART).collect();
            map_entries.insert(id.clone(), mapped);

            let image = images.add(
                format!("{}.png", id.as_str().to_lowercase()),
                placeholder_image(&mut rng),
            );
            questions.push(Question {
                id: id.clone(),
                text: Some(format!(
                    "{} (part {}).",
                    QUESTION_STEMS[group - 1],
                    part_index + 1
                )),
                image_refs: vec![image],
            });
        }
    }

    // answers: every (part, student) except the last part of the last
    // student, which is deliberately missing
    let students: Vec<StudentId> = (1..=STUDENT_COUNT)
        .map(|i| StudentId::from(format!("s{i:02}")))
        .collect();
    let missing = (
        QuestionId::from(format!("Q{QUESTION_GROUP_COUNT:02}c")),
        students[STUDENT_COUNT - 1].clone(),
    );
    let mut answers = Vec::new();
    for student in &students {
        for question in &questions {
            if question.id == missing.0 && student == &missing.1 {
                continue;
            }
            let modality = rng.gen_range(0..3u8);
            let text = if modality != 1 {
                Some(format!(
                    "{} ({}, {})",
                    ANSWER_PHRASES[rng.gen_range(0..ANSWER_PHRASES.len())],
                    student,
                    question.id
                ))
            } else {
                None
            };
            let image_refs = if modality != 0 {
                vec![images.add(
                    format!(
                        "ans_{}_{}.png",
                        student.as_str(),
                        question.id.as_str().to_lowercase()
                    ),
                    placeholder_image(&mut rng),
                )]
            } else {
                vec![]
            };
            answers.push(StudentAnswer {
                question_id: question.id.clone(),
                student_id: student.clone(),
                text,
                image_refs,
            });
        }
    }

    // ground truth for every triplet
    let mut ground_truth = Vec::new();
    for answer in &answers {
        for link in &map_entries[&answer.question_id] {
            ground_truth.push(GroundTruthEntry {
                question_id: answer.question_id.clone(),
                concept_link_id: link.clone(),
                student_id: answer.student_id.clone(),
                score: truth_score(&mut rng),
            });
        }
    }

    // rubrics: base, generic, cot, and one detailed rubric per link
    let generic_scale: BTreeMap<u8, String> = GENERIC_SCALE_DESCRIPTIONS
        .iter()
        .enumerate()
        .map(|(i, d)| (i as u8 + 1, (*d).to_owned()))
        .collect();
    let mut rubrics = vec![
        Rubric {
            scenario: Scenario::Base,
            concept_link_id: None,
            scale: BTreeMap::new(),
        },
        Rubric {
            scenario: Scenario::Generic,
            concept_link_id: None,
            scale: generic_scale.clone(),
        },
        Rubric {
            scenario: Scenario::Cot,
            concept_link_id: None,
            scale: generic_scale,
        },
    ];
    for link in &links {
        let name = link_label(&graph, link);
        rubrics.push(Rubric {
            scenario: Scenario::Detailed,
            concept_link_id: Some(link.clone()),
            scale: BTreeMap::from([
                (
                    1,
                    format!("No indication of understanding regarding {name}"),
                ),
                (2, format!("Very limited understanding of {name}")),
                (
                    3,
                    format!("Reproduces textbook use of {name} without adapting it"),
                ),
                (4, format!("Partial conceptual understanding of {name}")),
                (5, format!("Strong conceptual understanding of {name}")),
            ]),
        });
    }

    let manifest = Manifest {
        graph,
        question_concept_map: QuestionConceptMap::new(map_entries),
        questions,
        answers,
        rubrics,
        ground_truth: Some(ground_truth),
    };
    (manifest, images.files)
}

fn link_label(graph: &ConceptGraph<f64>, link: &EdgeId) -> String {
    let edge = graph.edge(link).expect("fixture link exists");
    let a = graph.node(&edge.endpoints.0).expect("endpoint exists");
    let b = graph.node(&edge.endpoints.1).expect("endpoint exists");
    let (first, second) = if a.level <= b.level { (a, b) } else { (b, a) };
    format!("{} – {}", first.label, second.label)
}

/// Generate the dataset under `root` (manifest plus image files) and load
/// it back through full validation.
pub fn generate(root: &Path, seed: u64) -> Result<Dataset, DatasetError> {
    let (manifest, images) = build_manifest(seed);
    let image_dir = root.join("images");
    std::fs::create_dir_all(&image_dir).map_err(|source| DatasetError::Io {
        path: image_dir.clone(),
        source,
    })?;
    for (name, bytes) in &images {
        let path = image_dir.join(name);
        std::fs::write(&path, bytes).map_err(|source| DatasetError::Io { path, source })?;
    }
    let manifest_path = root.join("dataset.json");
    std::fs::write(&manifest_path, manifest.to_canonical_json()).map_err(|source| {
        DatasetError::Io {
            path: manifest_path,
            source,
        }
    })?;
    Dataset::load(root)
}
