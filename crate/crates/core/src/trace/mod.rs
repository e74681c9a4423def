//! Derivational traces: a symbolic walk through the task/method hierarchy for
//! one instance, and explanations grounded in that walk.
//!
//! Conditions are never evaluated. Bindings ride along as labels, and every
//! choice point (which method, which transition) is settled by a selector or
//! by the default rule: first method by id, first transition by label.

mod outline;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use outline::{parse_outline, to_outline};

use crate::gateway::{
    blocks, bundled, provider_from_config, CompletionProvider, CompletionRequest, ProviderConfig, ProviderError,
    TemplateError,
};
use crate::tmk::{Method, TmkModel};

pub const DEFAULT_STEP_BOUND: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivationalTrace {
    pub root: TraceNode,
    #[serde(default)]
    pub instance_bindings: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceNode {
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default)]
    pub visited_states: Vec<VisitedState>,
    #[serde(default)]
    pub children: Vec<TraceNode>,
}

/// A state entered during the walk and the label followed out of it
/// (`None` where the walk stopped).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitedState {
    pub state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taken: Option<String>,
}

/// Choice-point overrides. Path keys are either `state_id` or
/// `method_id/state_id`; the qualified form wins.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Selectors {
    pub methods: BTreeMap<String, String>,
    pub paths: BTreeMap<String, String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown concept `{0}` in bindings")]
    UnknownConcept(String),
    #[error("walk exceeded the step bound of {bound} visited states")]
    StepBoundExceeded { bound: usize },
    #[error("unresolved choice at {at}: {message}")]
    UnresolvedChoice { at: String, message: String },
    #[error("step bound must be positive")]
    InvalidBound,
    #[error("question is empty")]
    EmptyQuestion,
    #[error("malformed trace outline at line {line}: {message}")]
    MalformedOutline { line: usize, message: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl TraceError {
    pub fn code(&self) -> &'static str {
        match self {
            TraceError::UnknownTask(_) => "UNKNOWN_TASK",
            TraceError::UnknownConcept(_) => "UNKNOWN_CONCEPT",
            TraceError::StepBoundExceeded { .. } => "STEP_BOUND_EXCEEDED",
            TraceError::UnresolvedChoice { .. } => "UNRESOLVED_CHOICE",
            TraceError::InvalidBound => "INVALID_BOUND",
            TraceError::EmptyQuestion => "EMPTY_QUESTION",
            TraceError::MalformedOutline { .. } => "MALFORMED_OUTLINE",
            TraceError::Provider(e) => e.code(),
            TraceError::Template(_) => "TEMPLATE_ERROR",
        }
    }
}

impl TraceNode {
    pub fn leaf(task: impl Into<String>) -> Self {
        Self { task: task.into(), method: None, visited_states: Vec::new(), children: Vec::new() }
    }

    /// Pre-order walk over this node and its descendants.
    pub fn iter(&self) -> impl Iterator<Item = &TraceNode> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let node = stack.pop()?;
            stack.extend(node.children.iter().rev());
            Some(node)
        })
    }
}

impl DerivationalTrace {
    pub fn node_count(&self) -> usize {
        self.root.iter().count()
    }

    pub fn visited_count(&self) -> usize {
        self.root.iter().map(|n| n.visited_states.len()).sum()
    }

    /// Distinct task ids in pre-order of first appearance.
    pub fn task_ids(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for n in self.root.iter() {
            if !out.contains(&n.task.as_str()) {
                out.push(&n.task);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

struct Walker<'a> {
    model: &'a TmkModel,
    selectors: &'a Selectors,
    bound: usize,
    visited: usize,
}

impl<'a> Walker<'a> {
    fn pick_method(&self, task_id: &str) -> Result<Option<&'a Method>, TraceError> {
        let candidates = self.model.methods_for(task_id);
        match self.selectors.methods.get(task_id) {
            Some(chosen) => candidates.into_iter().find(|m| &m.id == chosen).map(Some).ok_or_else(|| {
                TraceError::UnresolvedChoice {
                    at: format!("tasks/{task_id}"),
                    message: format!("method `{chosen}` does not implement this task"),
                }
            }),
            None => Ok(candidates.into_iter().next()),
        }
    }

    fn pick_label<'m>(&self, method: &'m Method, state_id: &str) -> Result<Option<&'m str>, TraceError> {
        let outgoing = method.outgoing(state_id);
        let wanted = self
            .selectors
            .paths
            .get(&format!("{}/{state_id}", method.id))
            .or_else(|| self.selectors.paths.get(state_id));
        match wanted {
            Some(label) => outgoing
                .iter()
                .find(|t| &t.condition_label == label)
                .map(|t| Some(t.condition_label.as_str()))
                .ok_or_else(|| TraceError::UnresolvedChoice {
                    at: format!("methods/{}/states/{state_id}", method.id),
                    message: format!("no outgoing transition labelled {label:?}"),
                }),
            None => Ok(outgoing.first().map(|t| t.condition_label.as_str())),
        }
    }

    fn walk(&mut self, task_id: &str) -> Result<TraceNode, TraceError> {
        if self.model.task(task_id).is_none() {
            return Err(TraceError::UnknownTask(task_id.to_string()));
        }
        let Some(method) = self.pick_method(task_id)? else {
            return Ok(TraceNode::leaf(task_id));
        };
        let mut node = TraceNode::leaf(task_id);
        node.method = Some(method.id.clone());

        let mut current = method.start_state.clone();
        loop {
            let state = method.state(&current).ok_or_else(|| TraceError::UnresolvedChoice {
                at: format!("methods/{}/states/{current}", method.id),
                message: "state is not declared".into(),
            })?;
            self.visited += 1;
            if self.visited > self.bound {
                return Err(TraceError::StepBoundExceeded { bound: self.bound });
            }
            if let Some(sub) = &state.subtask {
                node.children.push(self.walk(sub)?);
            }
            let label = if state.terminal { None } else { self.pick_label(method, &current)? };
            node.visited_states.push(VisitedState { state: current.clone(), taken: label.map(str::to_string) });
            let Some(label) = label else { break };
            let next = method
                .transitions
                .iter()
                .find(|t| t.from_state == current && t.condition_label == label)
                .map(|t| t.to_state.clone())
                .expect("label came from this state's transitions");
            current = next;
        }
        Ok(node)
    }
}

/// Walks `task_id` symbolically. Visited states across the whole tree are
/// capped at `step_bound`.
pub fn derive_trace(
    model: &TmkModel,
    task_id: &str,
    bindings: &BTreeMap<String, String>,
    selectors: &Selectors,
    step_bound: usize,
) -> Result<DerivationalTrace, TraceError> {
    if step_bound == 0 {
        return Err(TraceError::InvalidBound);
    }
    if let Some(unknown) = bindings.keys().find(|c| model.concept(c).is_none()) {
        return Err(TraceError::UnknownConcept(unknown.clone()));
    }
    let mut walker = Walker { model, selectors, bound: step_bound, visited: 0 };
    let root = walker.walk(task_id)?;
    Ok(DerivationalTrace { root, instance_bindings: bindings.clone() })
}

/// One context document per distinct task in the trace: the task name as the
/// title, and a body describing the walk through that task.
pub fn trace_documents(model: &TmkModel, trace: &DerivationalTrace) -> Vec<(String, String)> {
    let mut seen: Vec<&str> = Vec::new();
    let mut docs = Vec::new();
    for node in trace.root.iter() {
        if seen.contains(&node.task.as_str()) {
            continue;
        }
        seen.push(&node.task);
        let name = model.task(&node.task).map_or(node.task.as_str(), |t| t.name.as_str());
        let mut body = match &node.method {
            None => format!("{name} was performed directly with no method."),
            Some(m) => {
                let method = model.method(m);
                let method_name = method.map_or(m.as_str(), |m| m.name.as_str());
                let states: Vec<&str> = node
                    .visited_states
                    .iter()
                    .map(|v| {
                        method
                            .and_then(|m| m.state(&v.state))
                            .map_or(v.state.as_str(), |s| s.name.as_str())
                    })
                    .collect();
                format!("{name} was performed by {method_name} through {}.", states.join(", "))
            }
        };
        let subtasks: Vec<&str> = node
            .children
            .iter()
            .map(|c| model.task(&c.task).map_or(c.task.as_str(), |t| t.name.as_str()))
            .collect();
        if !subtasks.is_empty() {
            body.push_str(&format!("\nSubtasks in order: {}", subtasks.join("; ")));
        }
        docs.push((name.to_string(), body));
    }
    if !trace.instance_bindings.is_empty() {
        if let Some((_, body)) = docs.first_mut() {
            let b: Vec<String> = trace.instance_bindings.iter().map(|(k, v)| format!("{k} = {v}")).collect();
            body.push_str(&format!("\nInstance: {}", b.join(", ")));
        }
    }
    docs
}

/// Answers `question` from the trace using the multi-model answer prompt,
/// with the trace documents as context.
pub fn explain_trace_with(
    model: &TmkModel,
    trace: &DerivationalTrace,
    question: &str,
    provider: &dyn CompletionProvider,
) -> Result<String, TraceError> {
    if question.trim().is_empty() {
        return Err(TraceError::EmptyQuestion);
    }
    let docs = trace_documents(model, trace);
    let mut context = blocks::context(docs.iter().map(|(t, b)| (t.as_str(), b.as_str())));
    context.push_str(&blocks::wrap("TRACE", &to_outline(model, trace)));

    let role = model
        .top_level_task()
        .map(|t| format!("{} performs the top-level task \"{}\": {}", model.agent_name, t.name, t.description.trim()))
        .unwrap_or_default();
    let qa = bundled("software_qa_prompt")?.render(&BTreeMap::from([
        ("agent_name", model.agent_name.clone()),
        ("role_description", role),
        ("session_summary", "nothing has been presented yet.".to_string()),
    ]))?;
    let prompt = bundled("multi_models_answer_prompt")?.render(&BTreeMap::from([
        ("software_qa_prompt", qa),
        ("context_str", context),
        ("question", question.trim().to_string()),
    ]))?;
    Ok(provider.complete(&CompletionRequest::new(prompt))?)
}

pub fn explain_trace(
    model: &TmkModel,
    trace: &DerivationalTrace,
    question: &str,
    config: &ProviderConfig,
) -> Result<String, TraceError> {
    if question.trim().is_empty() {
        return Err(TraceError::EmptyQuestion);
    }
    let provider = provider_from_config(config)?;
    explain_trace_with(model, trace, question, provider.as_ref())
}
