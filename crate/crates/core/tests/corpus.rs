//! Golden corpus for score extraction: every committed case must produce
//! exactly its expected outcome, quickly.

use linkgrade_core::parser::{parse_score, CorpusCase};
use std::path::PathBuf;
use std::time::{Duration, Instant};

fn corpus_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../parser_corpus.jsonl")
}

fn load_corpus() -> Vec<CorpusCase> {
    let text = std::fs::read_to_string(corpus_path()).expect("parser_corpus.jsonl present");
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("corpus line parses"))
        .collect()
}

#[test]
fn corpus_has_at_least_twenty_cases() {
    assert!(load_corpus().len() >= 20);
}

#[test]
fn every_corpus_case_matches() {
    for (index, case) in load_corpus().iter().enumerate() {
        let outcome = parse_score(&case.raw_text);
        assert!(
            case.expected.matches(&outcome),
            "case {index} ({:?}): expected {:?}, got {outcome:?}",
            case.raw_text,
            case.expected
        );
    }
}

#[test]
fn every_corpus_case_parses_within_fifty_ms() {
    for case in load_corpus() {
        let start = Instant::now();
        let _ = parse_score(&case.raw_text);
        assert!(
            start.elapsed() < Duration::from_millis(50),
            "{:?}",
            case.raw_text
        );
    }
}

#[test]
fn megabyte_input_parses_within_fifty_ms() {
    let mut text = "analysis without commitment. ".repeat(36000);
    assert!(text.len() > 1_000_000);
    text.push_str("<Score>4</Score>");
    let start = Instant::now();
    let outcome = parse_score(&text);
    assert!(start.elapsed() < Duration::from_millis(50));
    assert_eq!(outcome.score().unwrap().value.get(), 4);
}
