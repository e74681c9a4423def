use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::gateway::first_sentence;

pub const DEFAULT_SESSION_BOUND: usize = 10;

const EMPTY_SUMMARY: &str = "nothing has been presented yet.";
/// Per-answer cap inside the rolling summary, in characters.
const SUMMARY_ANSWER_CHARS: usize = 160;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub question: String,
    pub answer: String,
}

/// Conversation memory: a bounded history and a one-paragraph summary of
/// what has been presented. Only the summary ever reaches a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    history: VecDeque<Exchange>,
    summary: String,
    bound: usize,
}

impl Session {
    pub fn new(id: impl Into<String>) -> Self {
        Self::with_bound(id, DEFAULT_SESSION_BOUND)
    }

    pub fn with_bound(id: impl Into<String>, bound: usize) -> Self {
        Self { id: id.into(), history: VecDeque::new(), summary: EMPTY_SUMMARY.to_string(), bound: bound.max(1) }
    }

    /// A throwaway session for single-shot questions.
    pub fn ephemeral() -> Self {
        Self::new(format!("single-{}", uuid::Uuid::new_v4()))
    }

    pub fn history(&self) -> impl ExactSizeIterator<Item = &Exchange> {
        self.history.iter()
    }

    pub fn summary(&self) -> &str {
        &self.summary
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn record(&mut self, question: &str, answer: &str) {
        self.history.push_back(Exchange { question: question.to_string(), answer: answer.to_string() });
        while self.history.len() > self.bound {
            self.history.pop_front();
        }
        self.summary = summarize(self.history.iter());
    }
}

fn summarize<'a>(history: impl Iterator<Item = &'a Exchange>) -> String {
    let parts: Vec<String> = history
        .map(|e| {
            let mut gist: String = first_sentence(&e.answer).chars().take(SUMMARY_ANSWER_CHARS).collect();
            if gist.is_empty() {
                gist = "no answer".into();
            }
            format!("asked \"{}\" and was told \"{}\"", e.question.trim(), gist)
        })
        .collect();
    if parts.is_empty() {
        EMPTY_SUMMARY.to_string()
    } else {
        format!("The user {}.", parts.join("; then "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_is_bounded() {
        let mut s = Session::with_bound("s", 3);
        for i in 0..5 {
            s.record(&format!("q{i}"), &format!("a{i}."));
        }
        let qs: Vec<_> = s.history().map(|e| e.question.clone()).collect();
        assert_eq!(qs, ["q2", "q3", "q4"]);
        assert!(s.summary().contains("q2") && !s.summary().contains("q1"));
    }

    #[test]
    fn summary_is_one_paragraph() {
        let mut s = Session::new("s");
        assert_eq!(s.summary(), "nothing has been presented yet.");
        s.record("What is VERA?", "VERA is a learning tool. It has models.\nMore.");
        assert_eq!(s.summary(), "The user asked \"What is VERA?\" and was told \"VERA is a learning tool.\".");
        assert!(!s.summary().contains('\n'));
    }
}
