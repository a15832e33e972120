//! Strength-score extraction from raw model output.
//!
//! Models are instructed to answer `<Score>k</Score>` but deviate in
//! practice: LaTeX `\boxed{k}`, bare integers buried in prose, repeated
//! sentences, or no number at all. Extraction runs a three-stage cascade,
//! last occurrence winning within each stage:
//!
//! 1. the last well-formed `<Score>k</Score>` tag,
//! 2. else the last well-formed `\boxed{k}`,
//! 3. else the last standalone integer token in 1..=5.
//!
//! A well-formed value outside 1..=5 at stage 1 or 2 is an out-of-range
//! failure, never clamped. A score slot (tag or box) whose content names
//! several distinct candidate scores is an ambiguous failure: the model did
//! not commit to one value, and reading the last digit out of such a slot
//! would fabricate a judgment.

use crate::ids::Score;
use serde::{Deserialize, Serialize};

const EXCERPT_LIMIT: usize = 500;

/// Which cascade stage produced a parsed score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseRule {
    /// Well-formed `<Score>k</Score>` tag.
    Tagged,
    /// LaTeX `\boxed{k}`.
    Boxed,
    /// Bare in-range integer token; the model violated the output format.
    LastInRange,
}

/// A successfully extracted score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedScore {
    pub value: Score,
    pub rule: ParseRule,
    pub raw_excerpt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// No candidate integer anywhere in the text.
    NoScoreFound,
    /// A well-formed tag or box carried an integer outside 1..=5.
    OutOfRange,
    /// A score slot named several distinct candidate values.
    Ambiguous,
}

/// A parse failure; failures are data, never panics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub reason: FailureReason,
    pub raw_excerpt: String,
}

/// Outcome of one extraction attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseOutcome {
    Score(ParsedScore),
    Failure(ParseFailure),
}

impl ParseOutcome {
    pub fn score(&self) -> Option<&ParsedScore> {
        match self {
            ParseOutcome::Score(s) => Some(s),
            ParseOutcome::Failure(_) => None,
        }
    }

    pub fn failure(&self) -> Option<&ParseFailure> {
        match self {
            ParseOutcome::Score(_) => None,
            ParseOutcome::Failure(f) => Some(f),
        }
    }
}

/// Extract a strength score from raw model text. Total: accepts any input
/// and always returns a value.
pub fn parse_score(raw_text: &str) -> ParseOutcome {
    // Stage 1: <Score> tags.
    if let Some(outcome) = scan_slots(raw_text, &tag_slots(raw_text), ParseRule::Tagged) {
        return outcome;
    }
    // Stage 2: \boxed{..}.
    if let Some(outcome) = scan_slots(raw_text, &boxed_slots(raw_text), ParseRule::Boxed) {
        return outcome;
    }
    // Stage 3: last standalone integer in range.
    if let Some(token) = standalone_tokens(raw_text)
        .into_iter()
        .rev()
        .find(|t| (1..=5).contains(&t.value))
    {
        return ParseOutcome::Score(ParsedScore {
            value: Score::new(token.value as u8).expect("range checked"),
            rule: ParseRule::LastInRange,
            raw_excerpt: token.text,
        });
    }
    ParseOutcome::Failure(ParseFailure {
        reason: FailureReason::NoScoreFound,
        raw_excerpt: truncate(raw_text),
    })
}

/// A score slot found in the text: the full span and its inner content.
struct Slot {
    span: String,
    content: String,
}

/// Resolve one cascade stage over its slots. `None` means the stage found
/// nothing decisive and the cascade continues.
fn scan_slots(_raw: &str, slots: &[Slot], rule: ParseRule) -> Option<ParseOutcome> {
    // Last slot whose content is a single well-formed integer wins outright.
    if let Some((slot, value)) = slots
        .iter()
        .filter_map(|s| well_formed_integer(&s.content).map(|v| (s, v)))
        .next_back()
    {
        return Some(if (1..=5).contains(&value) {
            ParseOutcome::Score(ParsedScore {
                value: Score::new(value as u8).expect("range checked"),
                rule,
                raw_excerpt: truncate(&slot.span),
            })
        } else {
            ParseOutcome::Failure(ParseFailure {
                reason: FailureReason::OutOfRange,
                raw_excerpt: truncate(&slot.span),
            })
        });
    }
    // No well-formed slot. If malformed slots collectively name two or more
    // distinct in-range values ("<Score>4 or 5</Score>", an echo of
    // "an integer between 1 and 5"), the model never committed: ambiguous.
    if !slots.is_empty() {
        let mut distinct: Vec<i64> = slots
            .iter()
            .flat_map(|s| standalone_tokens(&s.content))
            .map(|t| t.value)
            .filter(|v| (1..=5).contains(v))
            .collect();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() >= 2 {
            let last = slots.last().expect("nonempty");
            return Some(ParseOutcome::Failure(ParseFailure {
                reason: FailureReason::Ambiguous,
                raw_excerpt: truncate(&last.span),
            }));
        }
    }
    None
}

/// `content` trimmed must be exactly an optionally signed integer.
fn well_formed_integer(content: &str) -> Option<i64> {
    let trimmed = content.trim();
    if trimmed.is_empty() {
        return None;
    }
    let unsigned = trimmed.strip_prefix(['+', '-']).unwrap_or(trimmed);
    if unsigned.is_empty() || !unsigned.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    trimmed.parse::<i64>().ok()
}

/// All `<Score>..</Score>` spans, in text order.
fn tag_slots(text: &str) -> Vec<Slot> {
    const OPEN: &str = "<Score>";
    const CLOSE: &str = "</Score>";
    let mut slots = Vec::new();
    let mut rest = 0usize;
    while let Some(start) = text[rest..].find(OPEN) {
        let content_start = rest + start + OPEN.len();
        match text[content_start..].find(CLOSE) {
            Some(len) => {
                let content_end = content_start + len;
                slots.push(Slot {
                    span: text[rest + start..content_end + CLOSE.len()].to_owned(),
                    content: text[content_start..content_end].to_owned(),
                });
                rest = content_end + CLOSE.len();
            }
            None => break,
        }
    }
    slots
}

/// All `\boxed{..}` spans with brace matching, in text order.
fn boxed_slots(text: &str) -> Vec<Slot> {
    const OPEN: &str = "\\boxed{";
    let mut slots = Vec::new();
    let mut rest = 0usize;
    while let Some(start) = text[rest..].find(OPEN) {
        let content_start = rest + start + OPEN.len();
        let bytes = text.as_bytes();
        let mut depth = 1usize;
        let mut idx = content_start;
        while idx < bytes.len() && depth > 0 {
            match bytes[idx] {
                b'{' => depth += 1,
                b'}' => depth -= 1,
                _ => {}
            }
            idx += 1;
        }
        if depth != 0 {
            break; // unterminated box
        }
        let content_end = idx - 1;
        slots.push(Slot {
            span: text[rest + start..idx].to_owned(),
            content: text[content_start..content_end].to_owned(),
        });
        rest = idx;
    }
    slots
}

struct IntToken {
    value: i64,
    text: String,
}

/// Standalone integer tokens: maximal digit runs not glued to identifiers,
/// decimals, signs, ranges ("1-5") or ratios ("4/5").
fn standalone_tokens(text: &str) -> Vec<IntToken> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if is_standalone(text, start, i) {
            if let Ok(value) = text[start..i].parse::<i64>() {
                tokens.push(IntToken {
                    value,
                    text: text[start..i].to_owned(),
                });
            }
        }
    }
    tokens
}

fn is_standalone(text: &str, start: usize, end: usize) -> bool {
    let before = text[..start].chars().next_back();
    let after = text[end..].chars().next();
    let glue = |c: char| c.is_alphanumeric() || matches!(c, '_' | '-' | '–' | '—' | '/');
    if before.is_some_and(glue) || after.is_some_and(glue) {
        return false;
    }
    // decimal tail: "3.5" must contribute neither 3 nor 5
    if before == Some('.') {
        let mut prior = text[..start].chars().rev().skip(1);
        if prior.next().is_some_and(|c| c.is_ascii_digit()) {
            return false;
        }
    }
    if after == Some('.') {
        let mut following = text[end..].chars().skip(1);
        if following.next().is_some_and(|c| c.is_ascii_digit()) {
            return false;
        }
    }
    true
}

fn truncate(text: &str) -> String {
    text.chars().take(EXCERPT_LIMIT).collect()
}

/// One case of the committed parser corpus (`parser_corpus.jsonl`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusCase {
    pub raw_text: String,
    pub expected: ExpectedOutcome,
}

/// Expected outcome of a corpus case, without the excerpt (which is an
/// implementation diagnostic, not part of the contract).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpectedOutcome {
    Score { value: u8, rule: ParseRule },
    Failure { reason: FailureReason },
}

impl ExpectedOutcome {
    pub fn matches(&self, outcome: &ParseOutcome) -> bool {
        match (self, outcome) {
            (ExpectedOutcome::Score { value, rule }, ParseOutcome::Score(parsed)) => {
                parsed.value.get() == *value && parsed.rule == *rule
            }
            (ExpectedOutcome::Failure { reason }, ParseOutcome::Failure(failure)) => {
                failure.reason == *reason
            }
            _ => false,
        }
    }
}
