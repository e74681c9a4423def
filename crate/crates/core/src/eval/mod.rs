//! Question-bank evaluation: run categorized questions through the engine,
//! attach human ratings, and tally them per category.
//!
//! The harness never grades answers itself. Ratings come from people (or are
//! imported) and are only stored and counted here.

mod report;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{aggregate, render_table, AggregateReport, CategoryRow, LevelCounts};

use crate::pipeline::{Engine, ExplanationResult, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Input,
    Output,
    HowGlobal,
    WhyNot,
    Others,
    OthersContext,
    AgentSpecific,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Input,
        Category::Output,
        Category::HowGlobal,
        Category::WhyNot,
        Category::Others,
        Category::OthersContext,
        Category::AgentSpecific,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Input => "input",
            Category::Output => "output",
            Category::HowGlobal => "how_global",
            Category::WhyNot => "why_not",
            Category::Others => "others",
            Category::OthersContext => "others_context",
            Category::AgentSpecific => "agent_specific",
        }
    }

    /// Row label in the text report.
    pub fn label(self) -> &'static str {
        match self {
            Category::Input => "Input",
            Category::Output => "Output",
            Category::HowGlobal => "How (global)",
            Category::WhyNot => "Why not",
            Category::Others => "Others",
            Category::OthersContext => "Others (context)",
            Category::AgentSpecific => "Agent specific",
        }
    }
}

impl std::str::FromStr for Category {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL.into_iter().find(|c| c.as_str() == s).ok_or(())
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankQuestion {
    pub id: String,
    pub category: Category,
    pub example_text: String,
    pub adapted_text: String,
    /// Written to fill a category rather than taken from a published list.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub authored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    High,
    Medium,
    Low,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::High, Level::Medium, Level::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::High => "High",
            Level::Medium => "Medium",
            Level::Low => "Low",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub recall: Level,
    pub precision: Level,
    pub accuracy: Level,
    #[serde(default)]
    pub justification: String,
}

/// A pipeline failure kept on the record so the run can continue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub code: String,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question: BankQuestion,
    pub result: Option<ExplanationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RecordError>,
    pub rating: Option<Rating>,
    #[serde(default)]
    pub rater: String,
}

/// One line of a ratings file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingEntry {
    pub id: String,
    pub recall: Level,
    pub precision: Level,
    pub accuracy: Level,
    #[serde(default)]
    pub justification: String,
    #[serde(default)]
    pub rater: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("malformed bank at line {line}: {message}")]
    MalformedBank { line: usize, message: String },
    #[error("unknown category `{category}` at line {line}")]
    UnknownCategory { line: usize, category: String },
    #[error("malformed ratings at line {line}: {message}")]
    MalformedRatings { line: usize, message: String },
    #[error("rating for unknown question `{0}`")]
    UnknownQuestion(String),
    #[error("question `{0}` has no result to rate")]
    MissingResult(String),
    #[error("record `{0}` is not rated")]
    UnratedRecord(String),
    #[error("io: {0}")]
    Io(String),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::MalformedBank { .. } => "MALFORMED_BANK",
            EvalError::UnknownCategory { .. } => "UNKNOWN_CATEGORY",
            EvalError::MalformedRatings { .. } => "MALFORMED_RATINGS",
            EvalError::UnknownQuestion(_) => "UNKNOWN_QUESTION",
            EvalError::MissingResult(_) => "MISSING_RESULT",
            EvalError::UnratedRecord(_) => "UNRATED_RECORD",
            EvalError::Io(_) => "IO_ERROR",
        }
    }
}

fn non_blank_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty())
}

/// Parses a line-delimited JSON bank.
pub fn load_bank(text: &str) -> Result<Vec<BankQuestion>, EvalError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (line, raw) in non_blank_lines(text) {
        let bad = |message: String| EvalError::MalformedBank { line, message };
        let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| bad(e.to_string()))?;
        if let Some(cat) = value.get("category").and_then(|c| c.as_str()) {
            if cat.parse::<Category>().is_err() {
                return Err(EvalError::UnknownCategory { line, category: cat.to_string() });
            }
        }
        let q: BankQuestion = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        if q.adapted_text.trim().is_empty() {
            return Err(bad("adapted_text is empty".into()));
        }
        if !ids.insert(q.id.clone()) {
            return Err(bad(format!("duplicate id `{}`", q.id)));
        }
        out.push(q);
    }
    if out.is_empty() {
        return Err(EvalError::MalformedBank { line: 1, message: "bank has no questions".into() });
    }
    Ok(out)
}

pub fn load_bank_file(path: &Path) -> Result<Vec<BankQuestion>, EvalError> {
    load_bank(&std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?)
}

/// The bundled 66-question bank.
pub fn bundled_bank() -> Vec<BankQuestion> {
    load_bank(crate::fixtures::BANK_JSONL).expect("bundled bank parses")
}

pub fn load_ratings(text: &str) -> Result<BTreeMap<String, RatingEntry>, EvalError> {
    let mut out = BTreeMap::new();
    for (line, raw) in non_blank_lines(text) {
        let entry: RatingEntry = serde_json::from_str(raw)
            .map_err(|e| EvalError::MalformedRatings { line, message: e.to_string() })?;
        if out.contains_key(&entry.id) {
            return Err(EvalError::MalformedRatings { line, message: format!("duplicate id `{}`", entry.id) });
        }
        out.insert(entry.id.clone(), entry);
    }
    Ok(out)
}

pub fn load_ratings_file(path: &Path) -> Result<BTreeMap<String, RatingEntry>, EvalError> {
    load_ratings(&std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?)
}

/// Answers every question in a fresh session. Failures are stored on the
/// record and the run moves on.
pub fn run_bank(bank: &[BankQuestion], engine: &Engine) -> Vec<EvalRecord> {
    bank.iter()
        .map(|q| {
            let mut session = Session::with_bound(format!("eval-{}", q.id), engine.settings().session_bound);
            let (result, error) = match engine.ask(&q.adapted_text, &mut session, None) {
                Ok(r) => (Some(r), None),
                Err(e) => (
                    None,
                    Some(RecordError { code: e.code().to_string(), stage: e.stage().to_string(), message: e.to_string() }),
                ),
            };
            EvalRecord { question: q.clone(), result, error, rating: None, rater: String::new() }
        })
        .collect()
}

/// Attaches ratings by question id. Every rating must match a record that
/// has a result; records without a rating are left unrated.
pub fn apply_ratings(records: &mut [EvalRecord], ratings: &BTreeMap<String, RatingEntry>) -> Result<(), EvalError> {
    let known: HashSet<&str> = records.iter().map(|r| r.question.id.as_str()).collect();
    if let Some(id) = ratings.keys().find(|id| !known.contains(id.as_str())) {
        return Err(EvalError::UnknownQuestion(id.clone()));
    }
    for record in records.iter_mut() {
        let Some(entry) = ratings.get(&record.question.id) else { continue };
        if record.result.is_none() {
            return Err(EvalError::MissingResult(record.question.id.clone()));
        }
        record.rating = Some(Rating {
            recall: entry.recall,
            precision: entry.precision,
            accuracy: entry.accuracy,
            justification: entry.justification.clone(),
        });
        record.rater = entry.rater.clone();
    }
    Ok(())
}

pub fn records_to_jsonl(records: &[EvalRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
}

/// Writes `records.jsonl`, plus `report.json` and `report.txt` when every
/// record is rated. Returns the report if one was written.
pub fn write_outputs(dir: &Path, records: &[EvalRecord]) -> Result<Option<AggregateReport>, EvalError> {
    let io = |e: std::io::Error| EvalError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join("records.jsonl"), records_to_jsonl(records)).map_err(io)?;
    if records.iter().any(|r| r.rating.is_none()) {
        return Ok(None);
    }
    let report = aggregate(records)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report).expect("report serializes"))
        .map_err(io)?;
    std::fs::write(dir.join("report.txt"), render_table(&report)).map_err(io)?;
    Ok(Some(report))
}

/// Reads records written by [`write_outputs`].
pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    non_blank_lines(&text)
        .map(|(line, raw)| {
            serde_json::from_str(raw).map_err(|e| EvalError::MalformedBank { line, message: e.to_string() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_bank_counts() {
        let bank = bundled_bank();
        assert_eq!(bank.len(), 66);
        let mut counts = BTreeMap::new();
        for q in &bank {
            *counts.entry(q.category).or_insert(0) += 1;
        }
        let got: Vec<usize> = Category::ALL.iter().map(|c| counts[c]).collect();
        assert_eq!(got, [4, 22, 17, 1, 10, 3, 9]);
        assert!(bank.iter().any(|q| !q.authored));
    }

    #[test]
    fn bank_errors() {
        assert!(matches!(load_bank(""), Err(EvalError::MalformedBank { .. })));
        assert!(matches!(load_bank("not json"), Err(EvalError::MalformedBank { line: 1, .. })));
        let misc = r#"{"id":"a","category":"misc","example_text":"e","adapted_text":"q"}"#;
        assert_eq!(load_bank(misc).unwrap_err(), EvalError::UnknownCategory { line: 1, category: "misc".into() });
        let blank = r#"{"id":"a","category":"input","example_text":"e","adapted_text":"  "}"#;
        assert!(matches!(load_bank(blank), Err(EvalError::MalformedBank { .. })));
        let one = r#"{"id":"a","category":"input","example_text":"e","adapted_text":"q"}"#;
        assert!(matches!(load_bank(&format!("{one}\n{one}")), Err(EvalError::MalformedBank { line: 2, .. })));
    }

    #[test]
    fn ratings_need_known_questions_with_results() {
        let q = BankQuestion {
            id: "a".into(),
            category: Category::Input,
            example_text: "e".into(),
            adapted_text: "q".into(),
            authored: false,
        };
        let mut records = vec![EvalRecord { question: q, result: None, error: None, rating: None, rater: String::new() }];
        let entry = |id: &str| RatingEntry {
            id: id.into(),
            recall: Level::High,
            precision: Level::High,
            accuracy: Level::High,
            justification: String::new(),
            rater: "r".into(),
        };
        let unknown = BTreeMap::from([("b".to_string(), entry("b"))]);
        assert_eq!(apply_ratings(&mut records, &unknown).unwrap_err(), EvalError::UnknownQuestion("b".into()));
        let known = BTreeMap::from([("a".to_string(), entry("a"))]);
        assert_eq!(apply_ratings(&mut records, &known).unwrap_err(), EvalError::MissingResult("a".into()));
    }

    #[test]
    fn ratings_file_parses() {
        let r = load_ratings(crate::fixtures::PUBLISHED_RATINGS_JSONL).unwrap();
        assert_eq!(r.len(), 66);
        assert!(matches!(load_ratings("{}"), Err(EvalError::MalformedRatings { .. })));
    }
}
