//! Dataset model and persistence.
//!
//! A dataset root holds a `dataset.json` manifest plus an `images/`
//! directory. The manifest carries the concept graph, the question→link
//! map, questions, student answers, rubrics and (optionally) ground-truth
//! scores. Loading validates every invariant and reports all violations at
//! once; a loaded [`Dataset`] is immutable.

use crate::graph::{ConceptGraph, QuestionConceptMap, ValidationReport, Violation};
use crate::ids::{EdgeId, QuestionId, Score, StudentId};
use crate::prompt::{Scenario, GENERIC_SCALE_DESCRIPTIONS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

/// A file reference relative to the dataset root, pinned by content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: String,
    pub sha256: String,
}

/// An assessment question (one answerable unit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub image_refs: Vec<ImageRef>,
}

/// One student's answer to one question; text, images, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentAnswer {
    pub question_id: QuestionId,
    pub student_id: StudentId,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub image_refs: Vec<ImageRef>,
}

/// Scoring-scale description for one scenario. The Detailed scenario has
/// one rubric per concept link; Base has an empty scale; Generic and CoT
/// carry the canonical five generic descriptions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rubric {
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept_link_id: Option<EdgeId>,
    #[serde(default)]
    pub scale: BTreeMap<u8, String>,
}

/// The atomic scoring unit: one concept link of one question, answered by
/// one student. Ordering is canonical: (student, question, link) ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub question_id: QuestionId,
    pub concept_link_id: EdgeId,
    pub student_id: StudentId,
}

impl Triplet {
    pub fn new(
        question_id: impl Into<QuestionId>,
        concept_link_id: impl Into<EdgeId>,
        student_id: impl Into<StudentId>,
    ) -> Self {
        Self {
            question_id: question_id.into(),
            concept_link_id: concept_link_id.into(),
            student_id: student_id.into(),
        }
    }
}

impl PartialOrd for Triplet {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Triplet {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (&self.student_id, &self.question_id, &self.concept_link_id).cmp(&(
            &other.student_id,
            &other.question_id,
            &other.concept_link_id,
        ))
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.question_id, self.concept_link_id, self.student_id
        )
    }
}

/// Raw ground-truth entry as stored in the manifest. The score is kept as a
/// plain integer so that out-of-range values surface as validation
/// violations instead of killing deserialization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub question_id: QuestionId,
    pub concept_link_id: EdgeId,
    pub student_id: StudentId,
    pub score: i64,
}

/// A validated consensus score for one triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroundTruthRecord {
    pub triplet: Triplet,
    pub score: Score,
}

/// On-disk manifest layout (`dataset.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub graph: ConceptGraph<f64>,
    pub question_concept_map: QuestionConceptMap,
    pub questions: Vec<Question>,
    pub answers: Vec<StudentAnswer>,
    #[serde(default)]
    pub rubrics: Vec<Rubric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<GroundTruthEntry>>,
}

impl Manifest {
    /// Sort every collection into canonical order. Serializing a canonical
    /// manifest is deterministic, so load → save → load round-trips to
    /// byte-identical files.
    pub fn canonicalize(&mut self) {
        self.graph = ConceptGraph::new(self.graph.nodes().to_vec(), self.graph.edges().to_vec());
        self.questions.sort_by(|a, b| a.id.cmp(&b.id));
        self.answers
            .sort_by(|a, b| (&a.student_id, &a.question_id).cmp(&(&b.student_id, &b.question_id)));
        self.rubrics.sort_by(|a, b| {
            (a.scenario, &a.concept_link_id).cmp(&(b.scenario, &b.concept_link_id))
        });
        if let Some(gt) = &mut self.ground_truth {
            gt.sort_by(|a, b| {
                (&a.student_id, &a.question_id, &a.concept_link_id).cmp(&(
                    &b.student_id,
                    &b.question_id,
                    &b.concept_link_id,
                ))
            });
        }
    }

    /// Canonical JSON bytes of this manifest.
    pub fn to_canonical_json(&self) -> String {
        let mut canonical = self.clone();
        canonical.canonicalize();
        let mut text = serde_json::to_string_pretty(&canonical).expect("manifest serializes");
        text.push('\n');
        text
    }
}

/// A fully validated dataset rooted at a directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    manifest: Manifest,
    ground_truth: BTreeMap<Triplet, Score>,
}

impl Dataset {
    /// Load and validate `root/dataset.json`. Every invariant violation is
    /// collected; a dataset is returned only when the report is empty.
    pub fn load(root: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
        let root = root.as_ref();
        let manifest_path = root.join("dataset.json");
        let text = std::fs::read_to_string(&manifest_path).map_err(|source| DatasetError::Io {
            path: manifest_path.clone(),
            source,
        })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|source| DatasetError::Parse {
                path: manifest_path,
                source,
            })?;
        Dataset::from_manifest(manifest, root)
    }

    /// Validate a manifest against the files under `root`.
    pub fn from_manifest(
        manifest: Manifest,
        root: impl AsRef<Path>,
    ) -> Result<Dataset, DatasetError> {
        let root = root.as_ref().to_path_buf();
        let report = validate_manifest(&manifest, &root);
        if !report.is_valid() {
            return Err(DatasetError::Invalid(report));
        }
        let ground_truth = manifest
            .ground_truth
            .as_deref()
            .unwrap_or(&[])
            .iter()
            .map(|e| {
                let triplet = Triplet::new(
                    e.question_id.clone(),
                    e.concept_link_id.clone(),
                    e.student_id.clone(),
                );
                let score = Score::new(e.score as u8).expect("validated in range");
                (triplet, score)
            })
            .collect();
        Ok(Dataset {
            root,
            manifest,
            ground_truth,
        })
    }

    /// Write the canonical manifest back to `root/dataset.json`.
    pub fn save(&self) -> Result<(), DatasetError> {
        let path = self.root.join("dataset.json");
        std::fs::write(&path, self.manifest.to_canonical_json())
            .map_err(|source| DatasetError::Io { path, source })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn graph(&self) -> &ConceptGraph<f64> {
        &self.manifest.graph
    }

    pub fn map(&self) -> &QuestionConceptMap {
        &self.manifest.question_concept_map
    }

    pub fn questions(&self) -> &[Question] {
        &self.manifest.questions
    }

    pub fn question(&self, id: &QuestionId) -> Option<&Question> {
        self.manifest.questions.iter().find(|q| &q.id == id)
    }

    pub fn answers(&self) -> &[StudentAnswer] {
        &self.manifest.answers
    }

    pub fn answer(
        &self,
        question_id: &QuestionId,
        student_id: &StudentId,
    ) -> Option<&StudentAnswer> {
        self.manifest
            .answers
            .iter()
            .find(|a| &a.question_id == question_id && &a.student_id == student_id)
    }

    pub fn students(&self) -> BTreeSet<StudentId> {
        self.manifest
            .answers
            .iter()
            .map(|a| a.student_id.clone())
            .collect()
    }

    pub fn rubrics(&self) -> &[Rubric] {
        &self.manifest.rubrics
    }

    /// The Detailed rubric for one concept link, if committed.
    pub fn detailed_rubric(&self, concept_link_id: &EdgeId) -> Option<&Rubric> {
        self.manifest.rubrics.iter().find(|r| {
            r.scenario == Scenario::Detailed && r.concept_link_id.as_ref() == Some(concept_link_id)
        })
    }

    /// Consensus score for a triplet, when ground truth is present.
    pub fn ground_truth(&self, triplet: &Triplet) -> Option<Score> {
        self.ground_truth.get(triplet).copied()
    }

    pub fn ground_truth_map(&self) -> &BTreeMap<Triplet, Score> {
        &self.ground_truth
    }

    pub fn has_ground_truth(&self) -> bool {
        !self.ground_truth.is_empty()
    }

    /// Every (question, concept link, student) triplet, in canonical
    /// (student, question, link) order: one triplet per mapped link of every
    /// question the student answered.
    pub fn triplets(&self) -> Vec<Triplet> {
        let mut out = Vec::new();
        for answer in &self.manifest.answers {
            if let Ok(links) = self
                .manifest
                .question_concept_map
                .links_for(&answer.question_id)
            {
                for link in links {
                    out.push(Triplet::new(
                        answer.question_id.clone(),
                        link.clone(),
                        answer.student_id.clone(),
                    ));
                }
            }
        }
        out.sort();
        out
    }

    /// Read the raw bytes of an image reference.
    pub fn image_bytes(&self, image: &ImageRef) -> Result<Vec<u8>, DatasetError> {
        let path = self.root.join(&image.path);
        std::fs::read(&path).map_err(|source| DatasetError::Io { path, source })
    }
}

/// Hex-encoded SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

fn validate_image_ref(
    subject: &str,
    image: &ImageRef,
    root: &Path,
    violations: &mut Vec<Violation>,
) {
    let rel = Path::new(&image.path);
    if rel.is_absolute() || image.path.split(['/', '\\']).any(|c| c == "..") {
        violations.push(Violation::new(
            subject,
            format!("image path {} escapes the dataset root", image.path),
        ));
        return;
    }
    let full = root.join(rel);
    match std::fs::read(&full) {
        Err(_) => violations.push(Violation::new(
            subject,
            format!("missing or unreadable image file {}", image.path),
        )),
        Ok(bytes) => {
            let actual = sha256_hex(&bytes);
            if actual != image.sha256 {
                violations.push(Violation::new(
                    subject,
                    format!(
                        "hash mismatch for {}: manifest {} actual {}",
                        image.path, image.sha256, actual
                    ),
                ));
            }
        }
    }
}

/// Check every dataset invariant; an empty report means the manifest and
/// the files under `root` are consistent.
pub fn validate_manifest(manifest: &Manifest, root: &Path) -> ValidationReport {
    let mut violations = Vec::new();

    let graph_report = manifest.graph.validate();
    violations.extend(graph_report.violations().to_vec());
    let map_report = manifest.question_concept_map.validate(&manifest.graph);
    violations.extend(map_report.violations().to_vec());

    // questions
    let mut question_ids = BTreeSet::new();
    for question in &manifest.questions {
        let subject = format!("question {}", question.id);
        if question.id.as_str().is_empty() {
            violations.push(Violation::new(&*subject, "question id is empty"));
        }
        if !question_ids.insert(question.id.clone()) {
            violations.push(Violation::new(&*subject, "duplicate question id"));
        }
        for image in &question.image_refs {
            validate_image_ref(&subject, image, root, &mut violations);
        }
        if manifest
            .question_concept_map
            .links_for(&question.id)
            .is_err()
        {
            violations.push(Violation::new(
                &*subject,
                "question missing from the question→concept-link map",
            ));
        }
    }
    for question_id in manifest.question_concept_map.entries().keys() {
        if !question_ids.contains(question_id) {
            violations.push(Violation::new(
                format!("map entry {question_id}"),
                "maps a question that does not exist",
            ));
        }
    }

    // answers
    let mut answer_keys = BTreeSet::new();
    for answer in &manifest.answers {
        let subject = format!("answer {}/{}", answer.student_id, answer.question_id);
        if !question_ids.contains(&answer.question_id) {
            violations.push(Violation::new(
                &*subject,
                format!("answer references unknown question {}", answer.question_id),
            ));
        }
        if !answer_keys.insert((answer.student_id.clone(), answer.question_id.clone())) {
            violations.push(Violation::new(
                &*subject,
                "duplicate answer for this question",
            ));
        }
        let has_text = answer.text.as_deref().is_some_and(|t| !t.is_empty());
        if !has_text && answer.image_refs.is_empty() {
            violations.push(Violation::new(
                &*subject,
                "answer has neither text nor images",
            ));
        }
        for image in &answer.image_refs {
            validate_image_ref(&subject, image, root, &mut violations);
        }
    }

    // rubrics
    let mut rubric_keys = BTreeSet::new();
    for rubric in &manifest.rubrics {
        let subject = match &rubric.concept_link_id {
            Some(link) => format!("rubric {}/{link}", rubric.scenario),
            None => format!("rubric {}", rubric.scenario),
        };
        if !rubric_keys.insert((rubric.scenario, rubric.concept_link_id.clone())) {
            violations.push(Violation::new(&*subject, "duplicate rubric"));
        }
        match rubric.scenario {
            Scenario::Base => {
                if !rubric.scale.is_empty() {
                    violations.push(Violation::new(&*subject, "base rubric must carry no scale"));
                }
                if rubric.concept_link_id.is_some() {
                    violations.push(Violation::new(
                        &*subject,
                        "base rubric must not name a concept link",
                    ));
                }
            }
            Scenario::Generic | Scenario::Cot => {
                if rubric.concept_link_id.is_some() {
                    violations.push(Violation::new(
                        &*subject,
                        "generic rubric must not name a concept link",
                    ));
                }
                let expected: BTreeMap<u8, String> = GENERIC_SCALE_DESCRIPTIONS
                    .iter()
                    .enumerate()
                    .map(|(i, d)| (i as u8 + 1, (*d).to_owned()))
                    .collect();
                if rubric.scale != expected {
                    violations.push(Violation::new(
                        &*subject,
                        "scale must be exactly the five generic descriptions",
                    ));
                }
            }
            Scenario::Detailed => {
                match &rubric.concept_link_id {
                    None => violations.push(Violation::new(
                        &*subject,
                        "detailed rubric must name a concept link",
                    )),
                    Some(link) => {
                        if manifest.graph.edge(link).is_none() {
                            violations.push(Violation::new(
                                &*subject,
                                format!("detailed rubric references unknown concept link {link}"),
                            ));
                        }
                    }
                }
                let keys: Vec<u8> = rubric.scale.keys().copied().collect();
                if keys != vec![1, 2, 3, 4, 5] || rubric.scale.values().any(|d| d.trim().is_empty())
                {
                    violations.push(Violation::new(
                        &*subject,
                        "detailed rubric must describe exactly scores 1..=5",
                    ));
                }
            }
        }
    }

    // ground truth
    if let Some(entries) = &manifest.ground_truth {
        let triplet_set: BTreeSet<(QuestionId, EdgeId, StudentId)> = manifest
            .answers
            .iter()
            .flat_map(|answer| {
                manifest
                    .question_concept_map
                    .links_for(&answer.question_id)
                    .map(|links| {
                        links
                            .iter()
                            .map(|link| {
                                (
                                    answer.question_id.clone(),
                                    link.clone(),
                                    answer.student_id.clone(),
                                )
                            })
                            .collect::<Vec<_>>()
                    })
                    .unwrap_or_default()
            })
            .collect();
        let mut seen = BTreeSet::new();
        for entry in entries {
            let subject = format!(
                "ground truth {}/{}/{}",
                entry.student_id, entry.question_id, entry.concept_link_id
            );
            if !(1..=5).contains(&entry.score) {
                violations.push(Violation::new(
                    &*subject,
                    format!("score out of range: {}", entry.score),
                ));
            }
            let key = (
                entry.question_id.clone(),
                entry.concept_link_id.clone(),
                entry.student_id.clone(),
            );
            if !triplet_set.contains(&key) {
                violations.push(Violation::new(
                    &*subject,
                    "ground truth names a triplet outside the dataset enumeration",
                ));
            }
            if !seen.insert(key) {
                violations.push(Violation::new(&*subject, "duplicate ground-truth record"));
            }
        }
    }

    ValidationReport::from_violations(violations)
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("dataset validation failed:\n{0}")]
    Invalid(ValidationReport),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ConceptEdge, ConceptNode, Level};

    fn write_image(root: &Path, name: &str, bytes: &[u8]) -> ImageRef {
        let dir = root.join("images");
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join(name), bytes).unwrap();
        ImageRef {
            path: format!("images/{name}"),
            sha256: sha256_hex(bytes),
        }
    }

    fn tiny_manifest(root: &Path) -> Manifest {
        let graph = ConceptGraph::new(
            vec![
                ConceptNode {
                    id: "k1".into(),
                    label: "K1".into(),
                    level: Level::Kcl,
                },
                ConceptNode {
                    id: "s1".into(),
                    label: "S1".into(),
                    level: Level::Sca,
                },
                ConceptNode {
                    id: "s2".into(),
                    label: "S2".into(),
                    level: Level::Sca,
                },
            ],
            vec![
                ConceptEdge::new("cl1", "k1", "s1"),
                ConceptEdge::new("cl2", "k1", "s2"),
            ],
        );
        let mut entries = BTreeMap::new();
        entries.insert(
            QuestionId::from("Q1"),
            BTreeSet::from([EdgeId::from("cl1"), EdgeId::from("cl2")]),
        );
        entries.insert(
            QuestionId::from("Q2"),
            BTreeSet::from([EdgeId::from("cl2")]),
        );
        let q1_img = write_image(root, "q1.png", b"q1 bytes");
        Manifest {
            graph,
            question_concept_map: QuestionConceptMap::new(entries),
            questions: vec![
                Question {
                    id: "Q1".into(),
                    text: Some("Add the vectors.".into()),
                    image_refs: vec![q1_img],
                },
                Question {
                    id: "Q2".into(),
                    text: Some("Resolve the vector.".into()),
                    image_refs: vec![],
                },
            ],
            answers: vec![
                StudentAnswer {
                    question_id: "Q1".into(),
                    student_id: "s01".into(),
                    text: Some("triangle law".into()),
                    image_refs: vec![],
                },
                StudentAnswer {
                    question_id: "Q2".into(),
                    student_id: "s01".into(),
                    text: Some("components".into()),
                    image_refs: vec![],
                },
            ],
            rubrics: vec![],
            ground_truth: Some(vec![GroundTruthEntry {
                question_id: "Q1".into(),
                concept_link_id: "cl1".into(),
                student_id: "s01".into(),
                score: 4,
            }]),
        }
    }

    #[test]
    fn valid_manifest_loads_and_enumerates() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_manifest(dir.path());
        let dataset = Dataset::from_manifest(manifest, dir.path()).unwrap();
        // 2 links on Q1 + 1 link on Q2, one student answering both
        let triplets = dataset.triplets();
        assert_eq!(triplets.len(), 3);
        assert_eq!(
            triplets[0],
            Triplet::new("Q1", "cl1", "s01"),
            "canonical order starts at (s01, Q1, cl1)"
        );
    }

    #[test]
    fn missing_answer_removes_triplets() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = tiny_manifest(dir.path());
        manifest.answers.retain(|a| a.question_id.as_str() != "Q2");
        manifest.ground_truth = None;
        let dataset = Dataset::from_manifest(manifest, dir.path()).unwrap();
        let triplets = dataset.triplets();
        assert_eq!(triplets.len(), 2);
        assert!(triplets.iter().all(|t| t.question_id.as_str() == "Q1"));
    }

    #[test]
    fn out_of_range_score_is_reported_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = tiny_manifest(dir.path());
        manifest.ground_truth.as_mut().unwrap()[0].score = 7;
        let err = Dataset::from_manifest(manifest, dir.path()).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("score out of range: 7"), "{text}");
        assert!(text.contains("s01/Q1/cl1"), "{text}");
    }

    #[test]
    fn missing_image_is_reported_by_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = tiny_manifest(dir.path());
        manifest.questions[0].image_refs[0].path = "images/nowhere.png".into();
        let err = Dataset::from_manifest(manifest, dir.path()).unwrap_err();
        assert!(err.to_string().contains("images/nowhere.png"));
    }

    #[test]
    fn hash_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = tiny_manifest(dir.path());
        manifest.questions[0].image_refs[0].sha256 = "0".repeat(64);
        let err = Dataset::from_manifest(manifest, dir.path()).unwrap_err();
        assert!(err.to_string().contains("hash mismatch"));
    }

    #[test]
    fn all_violations_are_collected_not_just_first() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = tiny_manifest(dir.path());
        manifest.ground_truth.as_mut().unwrap()[0].score = 9;
        manifest.questions[0].image_refs[0].path = "images/nowhere.png".into();
        manifest.answers[1].text = None;
        match Dataset::from_manifest(manifest, dir.path()) {
            Err(DatasetError::Invalid(report)) => {
                assert!(report.violations().len() >= 3, "{report}");
            }
            other => panic!("expected Invalid, got {other:?}"),
        }
    }

    #[test]
    fn canonical_save_round_trips_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_manifest(dir.path());
        let dataset = Dataset::from_manifest(manifest, dir.path()).unwrap();
        dataset.save().unwrap();
        let first = std::fs::read(dir.path().join("dataset.json")).unwrap();
        let reloaded = Dataset::load(dir.path()).unwrap();
        reloaded.save().unwrap();
        let second = std::fs::read(dir.path().join("dataset.json")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn triplet_enumeration_ignores_manifest_entry_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = tiny_manifest(dir.path());
        manifest.answers.reverse();
        manifest.questions.reverse();
        let shuffled = Dataset::from_manifest(manifest, dir.path()).unwrap();
        let ordered = Dataset::from_manifest(tiny_manifest(dir.path()), dir.path()).unwrap();
        assert_eq!(shuffled.triplets(), ordered.triplets());
    }
}
