//! Optional OCR pass: extract handwritten text from question and answer
//! images through a gateway backend.
//!
//! Transcriptions are stored in a side store keyed by image content hash
//! (so concurrent extraction merges order-independently) and applied to a
//! dataset as a new value; authored text is never overwritten unless the
//! caller passes the explicit flag.

use crate::dataset::{Dataset, ImageRef};
use crate::gateway::{CompletionRequest, Gateway, GatewayError, ImageAttachment};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Instruction sent with each image.
pub const OCR_PROMPT: &str = "Transcribe all handwritten text visible in the image. Return only \
the transcription, with no commentary.";

/// One transcription with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrRecord {
    pub image_sha256: String,
    pub backend_id: String,
    pub request_hash: String,
    pub text: String,
}

/// Outcome of one extraction; an empty transcription is stored but
/// flagged.
#[derive(Debug, Clone)]
pub struct OcrOutcome {
    pub record: OcrRecord,
    pub empty: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum OcrError {
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Transcribe one image.
pub fn ocr_extract(
    image: &ImageRef,
    dataset: &Dataset,
    gateway: &Gateway,
) -> Result<OcrOutcome, OcrError> {
    let bytes = dataset
        .image_bytes(image)
        .map_err(|e| OcrError::Input(e.to_string()))?;
    let result = gateway.complete_request(CompletionRequest {
        prompt_text: OCR_PROMPT.to_owned(),
        images: vec![ImageAttachment {
            sha256: image.sha256.clone(),
            bytes,
        }],
        scenario: None,
        triplet: None,
    })?;
    let empty = result.raw_text.trim().is_empty();
    Ok(OcrOutcome {
        record: OcrRecord {
            image_sha256: image.sha256.clone(),
            backend_id: result.backend_id,
            request_hash: result.request_hash,
            text: result.raw_text,
        },
        empty,
    })
}

/// Transcriptions keyed by image content hash.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OcrStore {
    records: BTreeMap<String, OcrRecord>,
}

impl OcrStore {
    pub fn get(&self, image_sha256: &str) -> Option<&OcrRecord> {
        self.records.get(image_sha256)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Insert a record; an existing record for the same image wins, which
    /// makes merging independent of arrival order.
    pub fn merge(&mut self, record: OcrRecord) {
        self.records
            .entry(record.image_sha256.clone())
            .or_insert(record);
    }
}

/// Extract every distinct image of the dataset concurrently, bounded by
/// the gateway's parallelism. Per-image failures are returned alongside
/// the successes.
pub fn ocr_extract_all(dataset: &Dataset, gateway: &Gateway) -> (OcrStore, Vec<(String, String)>) {
    let mut images: BTreeMap<String, ImageRef> = BTreeMap::new();
    for question in dataset.questions() {
        for image in &question.image_refs {
            images
                .entry(image.sha256.clone())
                .or_insert_with(|| image.clone());
        }
    }
    for answer in dataset.answers() {
        for image in &answer.image_refs {
            images
                .entry(image.sha256.clone())
                .or_insert_with(|| image.clone());
        }
    }
    let jobs: Vec<&ImageRef> = images.values().collect();
    let n = jobs.len();
    let outcomes: Mutex<Vec<Option<Result<OcrOutcome, String>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = gateway.config().parallelism.min(n.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= n {
                    break;
                }
                let outcome = ocr_extract(jobs[index], dataset, gateway).map_err(|e| e.to_string());
                outcomes.lock().expect("ocr lock")[index] = Some(outcome);
            });
        }
    });

    let mut store = OcrStore::default();
    let mut failures = Vec::new();
    for (job, outcome) in jobs.iter().zip(outcomes.into_inner().expect("ocr lock")) {
        match outcome.expect("every index filled") {
            Ok(result) => store.merge(result.record),
            Err(message) => failures.push((job.sha256.clone(), message)),
        }
    }
    (store, failures)
}

/// Apply transcriptions to a dataset, returning a new validated dataset.
/// Question and answer texts are filled from the store (multi-image
/// entities join their transcriptions in image order); existing text is
/// kept unless `overwrite` is set.
pub fn apply_ocr(
    dataset: &Dataset,
    store: &OcrStore,
    overwrite: bool,
) -> Result<Dataset, crate::dataset::DatasetError> {
    let mut manifest = dataset.manifest().clone();
    let joined = |refs: &[ImageRef]| -> Option<String> {
        let parts: Vec<&str> = refs
            .iter()
            .filter_map(|r| store.get(&r.sha256).map(|rec| rec.text.as_str()))
            .collect();
        if parts.is_empty() {
            None
        } else {
            Some(parts.join("\n"))
        }
    };
    for question in &mut manifest.questions {
        let has_text = question.text.as_deref().is_some_and(|t| !t.is_empty());
        if (!has_text || overwrite) && !question.image_refs.is_empty() {
            if let Some(text) = joined(&question.image_refs) {
                question.text = Some(text);
            }
        }
    }
    for answer in &mut manifest.answers {
        let has_text = answer.text.as_deref().is_some_and(|t| !t.is_empty());
        if (!has_text || overwrite) && !answer.image_refs.is_empty() {
            if let Some(text) = joined(&answer.image_refs) {
                answer.text = Some(text);
            }
        }
    }
    Dataset::from_manifest(manifest, dataset.root())
}
