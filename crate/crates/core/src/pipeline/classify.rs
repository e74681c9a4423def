use std::sync::OnceLock;

use regex::Regex;

use super::QuestionClass;
use crate::tmk::TmkModel;

fn how_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bhow\s+(do|does|did|can|could|would|should|will)\b").unwrap())
}

/// Case-insensitive match of `name` in `text`, bounded by non-alphanumeric
/// characters (or the ends of the text) on both sides.
pub fn mentions(text: &str, name: &str) -> bool {
    let name = name.trim().to_lowercase();
    if name.is_empty() {
        return false;
    }
    let text = text.to_lowercase();
    let boundary = |c: Option<char>| c.is_none_or(|c| !c.is_alphanumeric());
    text.match_indices(&name).any(|(i, m)| {
        boundary(text[..i].chars().next_back()) && boundary(text[i + m.len()..].chars().next())
    })
}

pub fn is_how_question(question: &str) -> bool {
    how_re().is_match(question)
}

/// Deterministic fallback classifier:
/// 1. no agent name and no element name mentioned: `cant_answer`;
/// 2. a how-interrogative that mentions a task or method name: `mmodel`;
/// 3. anything else: `multimodels`.
pub fn rule_classify(question: &str, model: &TmkModel) -> QuestionClass {
    let task_or_method = model
        .tasks
        .iter()
        .map(|t| t.name.as_str())
        .chain(model.methods.iter().map(|m| m.name.as_str()))
        .any(|n| mentions(question, n));
    let anything = task_or_method
        || mentions(question, &model.agent_name)
        || model.knowledge.iter().any(|c| mentions(question, &c.name));

    if !anything {
        QuestionClass::CantAnswer
    } else if task_or_method && is_how_question(question) {
        QuestionClass::Mmodel
    } else {
        QuestionClass::Multimodels
    }
}

/// Reads a class name out of free provider text. Returns `None` when no
/// class, or more than one distinct class, is named.
pub fn parse_class(text: &str) -> Option<QuestionClass> {
    let lowered = text.to_lowercase();
    let mut found: Option<QuestionClass> = None;
    for token in lowered.split(|c: char| !(c.is_alphanumeric() || c == '_')) {
        let class = match token {
            "multimodels" | "multimodel" | "multi_models" => QuestionClass::Multimodels,
            "mmodel" | "mmodels" => QuestionClass::Mmodel,
            "cant_answer" => QuestionClass::CantAnswer,
            _ => continue,
        };
        match found {
            Some(prev) if prev != class => return None,
            _ => found = Some(class),
        }
    }
    found
}
