use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ElementKind, TmkModel};

/// Identifier of the text layout used for document bodies. Bump it whenever
/// the layout below changes; it is recorded in index and answer metadata.
pub const RENDER_TEMPLATE_ID: &str = "tmk-doc/v1";

/// Retrievable text rendering of one TMK element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub element_id: String,
    pub kind: ElementKind,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("no element kinds selected")]
    EmptyKindSet,
}

/// Renders one document per element whose kind is selected, ordered by
/// `(kind, element_id)`.
pub fn render_documents(model: &TmkModel, kinds: &[ElementKind]) -> Result<Vec<Document>, RenderError> {
    let kinds: BTreeSet<ElementKind> = kinds.iter().copied().collect();
    if kinds.is_empty() {
        return Err(RenderError::EmptyKindSet);
    }
    let concept_names = |ids: &[String]| {
        join(ids.iter().map(|id| model.concept(id).map_or(id.as_str(), |c| c.name.as_str())))
    };
    let task_name = |id: &str| model.task(id).map_or(id, |t| t.name.as_str()).to_string();

    let mut docs = Vec::new();
    for kind in kinds {
        let mut batch: Vec<Document> = match kind {
            ElementKind::Task => model
                .tasks
                .iter()
                .map(|t| {
                    let body = format!(
                        "{}\nGivens: {}\nMakes: {}\nSubtasks: {}\nMethods: {}",
                        t.description.trim(),
                        concept_names(&t.givens),
                        concept_names(&t.makes),
                        join(t.subtasks.iter().map(|s| task_name(s))),
                        join(t.by_methods.iter().map(|m| model.method(m).map_or(m.as_str(), |m| m.name.as_str()))),
                    );
                    doc(&t.id, kind, &t.name, body)
                })
                .collect(),
            ElementKind::Method => model
                .methods
                .iter()
                .map(|m| {
                    let state_name = |id: &str| m.state(id).map_or(id, |s| s.name.as_str()).to_string();
                    let states = join(m.states.iter().map(|s| {
                        let mut line = s.name.clone();
                        if let Some(sub) = &s.subtask {
                            line.push_str(&format!(" (subtask: {})", task_name(sub)));
                        }
                        if s.terminal {
                            line.push_str(" (terminal)");
                        }
                        line
                    }));
                    let transitions = join(m.transitions.iter().map(|t| {
                        format!("{} -[{}]-> {}", state_name(&t.from_state), t.condition_label, state_name(&t.to_state))
                    }));
                    let body = format!(
                        "{}\nImplements: {}\nStart: {}\nStates: {}\nTransitions: {}",
                        m.description.trim(),
                        task_name(&m.implements),
                        state_name(&m.start_state),
                        states,
                        transitions,
                    );
                    doc(&m.id, kind, &m.name, body)
                })
                .collect(),
            ElementKind::Knowledge => model
                .knowledge
                .iter()
                .map(|c| {
                    let relations = join(c.relations.iter().map(|r| {
                        let target = model.concept(&r.target).map_or(r.target.as_str(), |c| c.name.as_str());
                        format!("{} {}", r.relation_name, target)
                    }));
                    doc(&c.id, kind, &c.name, format!("{}\nRelations: {}", c.definition.trim(), relations))
                })
                .collect(),
        };
        batch.sort_by(|a, b| a.element_id.cmp(&b.element_id));
        docs.extend(batch);
    }
    Ok(docs)
}

fn doc(id: &str, kind: ElementKind, title: &str, body: String) -> Document {
    Document { element_id: id.to_string(), kind, title: title.to_string(), body }
}

fn join<S: AsRef<str>>(items: impl Iterator<Item = S>) -> String {
    let parts: Vec<String> = items.map(|s| s.as_ref().to_string()).collect();
    if parts.is_empty() {
        "none".to_string()
    } else {
        parts.join("; ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::vera_model;

    #[test]
    fn all_kinds_yield_fifteen_documents() {
        let model = vera_model();
        // 5 tasks + 4 methods + 6 concepts, counted from the fixture file.
        assert_eq!((model.tasks.len(), model.methods.len(), model.knowledge.len()), (5, 4, 6));
        let docs = render_documents(&model, &ElementKind::ALL).unwrap();
        assert_eq!(docs.len(), 15);
        let keys: Vec<_> = docs.iter().map(|d| (d.kind, d.element_id.clone())).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(docs.iter().all(|d| !d.body.trim().is_empty()));
    }

    #[test]
    fn task_and_method_only() {
        let docs = render_documents(&vera_model(), &[ElementKind::Task, ElementKind::Method]).unwrap();
        assert_eq!(docs.len(), 9);
        assert!(docs.iter().all(|d| d.kind != ElementKind::Knowledge));
    }

    #[test]
    fn empty_kind_set() {
        assert_eq!(render_documents(&vera_model(), &[]), Err(RenderError::EmptyKindSet));
    }

    #[test]
    fn bodies_carry_structure() {
        let docs = render_documents(&vera_model(), &ElementKind::ALL).unwrap();
        let find = |id: &str| docs.iter().find(|d| d.element_id == id).unwrap();
        let task = find("t_experiment");
        assert!(task.body.contains("Givens: VERA Project"));
        assert!(task.body.contains("Subtasks: Edit a Model; Finish a Simulation"));
        let method = find("m_run_simulation");
        assert!(method.body.contains("Advance one step -[steps remain]-> Advance one step"));
        assert!(method.body.contains("Plot populations (terminal)"));
        let concept = find("c_asktmk");
        assert!(concept.body.starts_with("Explanation module within VERA."));
        assert!(concept.body.contains("Relations: explains VERA"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let model = vera_model();
        assert_eq!(
            render_documents(&model, &ElementKind::ALL).unwrap(),
            render_documents(&model, &[ElementKind::Knowledge, ElementKind::Task, ElementKind::Method]).unwrap()
        );
    }
}
