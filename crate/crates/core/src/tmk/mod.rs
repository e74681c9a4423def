//! Task-Method-Knowledge self-model: data types, JSON interchange, validation
//! and document rendering.
//!
//! A model is immutable once parsed. Every other part of the engine reads it
//! through shared references (or an `Arc`).

mod render;
mod validate;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use render::{render_documents, Document, RenderError, RENDER_TEMPLATE_ID};
pub use validate::{validate, ErrorCode, ValidationIssue, ValidationReport};

/// Kind of a TMK element. The derived ordering (task < method < knowledge) is
/// the corpus ordering used by document rendering and retrieval tie-breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Task,
    Method,
    Knowledge,
}

impl ElementKind {
    pub const ALL: [ElementKind; 3] = [ElementKind::Task, ElementKind::Method, ElementKind::Knowledge];

    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Task => "task",
            ElementKind::Method => "method",
            ElementKind::Knowledge => "knowledge",
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ElementKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "task" => Ok(ElementKind::Task),
            "method" => Ok(ElementKind::Method),
            "knowledge" => Ok(ElementKind::Knowledge),
            other => Err(format!("unknown element kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TmkModel {
    pub agent_name: String,
    pub version: String,
    pub tasks: Vec<Task>,
    pub methods: Vec<Method>,
    pub knowledge: Vec<Concept>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub id: String,
    pub name: String,
    pub description: String,
    /// Concept ids consumed by the task.
    pub givens: Vec<String>,
    /// Concept ids produced by the task.
    pub makes: Vec<String>,
    pub subtasks: Vec<String>,
    pub by_methods: Vec<String>,
    pub top_level: bool,
}

impl Task {
    pub fn is_leaf(&self) -> bool {
        self.subtasks.is_empty()
    }
}

/// A method is a deterministic finite state machine over named states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Method {
    pub id: String,
    pub name: String,
    pub description: String,
    pub implements: String,
    pub states: Vec<State>,
    pub transitions: Vec<Transition>,
    pub start_state: String,
}

impl Method {
    pub fn state(&self, id: &str) -> Option<&State> {
        self.states.iter().find(|s| s.id == id)
    }

    /// Outgoing transitions of `state_id`, ordered by ascending condition label.
    pub fn outgoing(&self, state_id: &str) -> Vec<&Transition> {
        let mut out: Vec<&Transition> = self
            .transitions
            .iter()
            .filter(|t| t.from_state == state_id)
            .collect();
        out.sort_by(|a, b| a.condition_label.cmp(&b.condition_label));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct State {
    pub id: String,
    pub name: String,
    pub subtask: Option<String>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub from_state: String,
    pub to_state: String,
    /// Free-text guard. Opaque to the engine; never evaluated.
    pub condition_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Concept {
    pub id: String,
    pub name: String,
    pub definition: String,
    pub relations: Vec<Relation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relation {
    pub relation_name: String,
    pub target: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("malformed input at line {line}, column {column}: {message}")]
    MalformedInput { line: usize, column: usize, message: String },
    #[error("schema violation [{code}] at {path}: {message}")]
    SchemaViolation { code: ErrorCode, path: String, message: String },
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::MalformedInput { .. } => "MALFORMED_INPUT",
            ParseError::SchemaViolation { code, .. } => code.as_str(),
        }
    }
}

/// Parses the JSON interchange form. Structural checks only: field presence
/// and types, at least one task, and unique ids. Semantic integrity is left
/// to [`validate`].
pub fn parse_model(bytes: &[u8]) -> Result<TmkModel, ParseError> {
    let model: TmkModel = serde_json::from_slice(bytes).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => ParseError::SchemaViolation {
                code: ErrorCode::SchemaMismatch,
                path: format!("line {}, column {}", e.line(), e.column()),
                message: e.to_string(),
            },
            _ => ParseError::MalformedInput {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            },
        }
    })?;

    if model.tasks.is_empty() {
        return Err(ParseError::SchemaViolation {
            code: ErrorCode::NoTasks,
            path: "tasks".into(),
            message: "model declares no tasks".into(),
        });
    }
    if let Some(issue) = validate::duplicate_ids(&model).into_iter().next() {
        return Err(ParseError::SchemaViolation {
            code: issue.code,
            path: issue.path,
            message: issue.message,
        });
    }
    Ok(model)
}

/// Serializes a model to its canonical pretty-printed JSON form.
pub fn to_json(model: &TmkModel) -> String {
    serde_json::to_string_pretty(model).expect("model serialization is infallible")
}

impl TmkModel {
    pub fn task(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn method(&self, id: &str) -> Option<&Method> {
        self.methods.iter().find(|m| m.id == id)
    }

    pub fn concept(&self, id: &str) -> Option<&Concept> {
        self.knowledge.iter().find(|c| c.id == id)
    }

    pub fn top_level_task(&self) -> Option<&Task> {
        self.tasks.iter().find(|t| t.top_level)
    }

    pub fn count(&self, kind: ElementKind) -> usize {
        match kind {
            ElementKind::Task => self.tasks.len(),
            ElementKind::Method => self.methods.len(),
            ElementKind::Knowledge => self.knowledge.len(),
        }
    }

    /// Name of the element `(kind, id)`, if it exists.
    pub fn element_name(&self, kind: ElementKind, id: &str) -> Option<&str> {
        match kind {
            ElementKind::Task => self.task(id).map(|t| t.name.as_str()),
            ElementKind::Method => self.method(id).map(|m| m.name.as_str()),
            ElementKind::Knowledge => self.concept(id).map(|c| c.name.as_str()),
        }
    }

    /// Methods that implement `task_id`: the task's `by_methods` first, then any
    /// other method declaring `implements = task_id`. Sorted by id, deduplicated.
    pub fn methods_for(&self, task_id: &str) -> Vec<&Method> {
        let mut seen = HashSet::new();
        let mut out: Vec<&Method> = Vec::new();
        if let Some(task) = self.task(task_id) {
            for id in &task.by_methods {
                if let Some(m) = self.method(id) {
                    if seen.insert(m.id.as_str()) {
                        out.push(m);
                    }
                }
            }
        }
        for m in &self.methods {
            if m.implements == task_id && seen.insert(m.id.as_str()) {
                out.push(m);
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }
}
