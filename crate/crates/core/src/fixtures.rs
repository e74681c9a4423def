//! Bundled data files: the VERA model, the evaluation question bank and the
//! published rating tallies.

use crate::tmk::{parse_model, TmkModel};

pub const VERA_MODEL_JSON: &str = include_str!("../../../fixtures/vera.tmk.json");
pub const BANK_JSONL: &str = include_str!("../../../fixtures/bank.jsonl");
pub const PUBLISHED_RATINGS_JSONL: &str = include_str!("../../../fixtures/published.ratings.jsonl");

/// The question used throughout the docs and tests as the end-to-end example.
pub const WORKING_EXAMPLE_QUESTION: &str = "How can I best utilise the output of the system in VERA?";

pub fn vera_model() -> TmkModel {
    parse_model(VERA_MODEL_JSON.as_bytes()).expect("bundled fixture parses")
}
