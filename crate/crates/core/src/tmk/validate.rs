use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::TmkModel;

/// Stable validation error codes. `docs/error-codes.md` lists a minimal
/// triggering example for each one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    SchemaMismatch,
    NoTasks,
    TopLevelCount,
    InvalidId,
    DuplicateId,
    DanglingConcept,
    DanglingTask,
    DanglingMethod,
    DanglingState,
    MethodTaskMismatch,
    MissingMethod,
    CyclicHierarchy,
    NondeterministicFsm,
    UnreachableState,
    TerminalHasTransitions,
    EmptyCondition,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 16] = [
        ErrorCode::SchemaMismatch,
        ErrorCode::NoTasks,
        ErrorCode::TopLevelCount,
        ErrorCode::InvalidId,
        ErrorCode::DuplicateId,
        ErrorCode::DanglingConcept,
        ErrorCode::DanglingTask,
        ErrorCode::DanglingMethod,
        ErrorCode::DanglingState,
        ErrorCode::MethodTaskMismatch,
        ErrorCode::MissingMethod,
        ErrorCode::CyclicHierarchy,
        ErrorCode::NondeterministicFsm,
        ErrorCode::UnreachableState,
        ErrorCode::TerminalHasTransitions,
        ErrorCode::EmptyCondition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::SchemaMismatch => "SCHEMA_MISMATCH",
            ErrorCode::NoTasks => "NO_TASKS",
            ErrorCode::TopLevelCount => "TOP_LEVEL_COUNT",
            ErrorCode::InvalidId => "INVALID_ID",
            ErrorCode::DuplicateId => "DUPLICATE_ID",
            ErrorCode::DanglingConcept => "DANGLING_CONCEPT",
            ErrorCode::DanglingTask => "DANGLING_TASK",
            ErrorCode::DanglingMethod => "DANGLING_METHOD",
            ErrorCode::DanglingState => "DANGLING_STATE",
            ErrorCode::MethodTaskMismatch => "METHOD_TASK_MISMATCH",
            ErrorCode::MissingMethod => "MISSING_METHOD",
            ErrorCode::CyclicHierarchy => "CYCLIC_HIERARCHY",
            ErrorCode::NondeterministicFsm => "NONDETERMINISTIC_FSM",
            ErrorCode::UnreachableState => "UNREACHABLE_STATE",
            ErrorCode::TerminalHasTransitions => "TERMINAL_HAS_TRANSITIONS",
            ErrorCode::EmptyCondition => "EMPTY_CONDITION",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub code: ErrorCode,
    pub path: String,
    pub message: String,
}

/// Result of [`validate`]. `ok` holds exactly when `errors` is empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub errors: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn codes(&self) -> BTreeSet<ErrorCode> {
        self.errors.iter().map(|e| e.code).collect()
    }

    pub fn has(&self, code: ErrorCode) -> bool {
        self.errors.iter().any(|e| e.code == code)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return f.write_str("ok");
        }
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{} {}: {}", e.code, e.path, e.message)?;
        }
        Ok(())
    }
}

struct Issues(Vec<ValidationIssue>);

impl Issues {
    fn push(&mut self, code: ErrorCode, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ValidationIssue { code, path: path.into(), message: message.into() });
    }
}

/// Checks every semantic invariant of the model. Violations are returned as
/// data; the report is sorted so it does not depend on element order.
pub fn validate(model: &TmkModel) -> ValidationReport {
    let mut issues = Issues(Vec::new());

    if model.tasks.is_empty() {
        issues.push(ErrorCode::NoTasks, "tasks", "model declares no tasks");
    }
    let top = model.tasks.iter().filter(|t| t.top_level).count();
    if !model.tasks.is_empty() && top != 1 {
        issues.push(
            ErrorCode::TopLevelCount,
            "tasks",
            format!("expected exactly one top-level task, found {top}"),
        );
    }

    check_ids(model, &mut issues);
    issues.0.extend(duplicate_ids(model));
    check_references(model, &mut issues);
    check_hierarchy(model, &mut issues);
    for method in &model.methods {
        check_fsm(method, &mut issues);
    }

    let mut errors = issues.0;
    errors.sort();
    errors.dedup();
    ValidationReport { ok: errors.is_empty(), errors }
}

fn check_ids(model: &TmkModel, issues: &mut Issues) {
    let bad = |id: &str| id.is_empty() || id.chars().any(|c| c.is_whitespace() || c == '[' || c == ']');
    let mut report = |path: String, id: &str| {
        issues.push(ErrorCode::InvalidId, path, format!("id `{id}` is empty or contains whitespace or brackets"));
    };
    for t in &model.tasks {
        if bad(&t.id) {
            report(format!("tasks/{}", t.id), &t.id);
        }
    }
    for m in &model.methods {
        if bad(&m.id) {
            report(format!("methods/{}", m.id), &m.id);
        }
        for s in &m.states {
            if bad(&s.id) {
                report(format!("methods/{}/states/{}", m.id, s.id), &s.id);
            }
        }
    }
    for c in &model.knowledge {
        if bad(&c.id) {
            report(format!("knowledge/{}", c.id), &c.id);
        }
    }
}

pub(super) fn duplicate_ids(model: &TmkModel) -> Vec<ValidationIssue> {
    fn scan<'a>(ids: impl Iterator<Item = &'a str>, prefix: &str, out: &mut Vec<ValidationIssue>) {
        let mut seen = HashSet::new();
        let mut reported = HashSet::new();
        for id in ids {
            if !seen.insert(id) && reported.insert(id) {
                out.push(ValidationIssue {
                    code: ErrorCode::DuplicateId,
                    path: format!("{prefix}/{id}"),
                    message: format!("id `{id}` is declared more than once"),
                });
            }
        }
    }
    let mut out = Vec::new();
    scan(model.tasks.iter().map(|t| t.id.as_str()), "tasks", &mut out);
    scan(model.methods.iter().map(|m| m.id.as_str()), "methods", &mut out);
    scan(model.knowledge.iter().map(|c| c.id.as_str()), "knowledge", &mut out);
    for m in &model.methods {
        scan(m.states.iter().map(|s| s.id.as_str()), &format!("methods/{}/states", m.id), &mut out);
    }
    out
}

fn check_references(model: &TmkModel, issues: &mut Issues) {
    let concepts: HashSet<&str> = model.knowledge.iter().map(|c| c.id.as_str()).collect();
    let tasks: HashSet<&str> = model.tasks.iter().map(|t| t.id.as_str()).collect();
    let methods: HashMap<&str, &str> =
        model.methods.iter().map(|m| (m.id.as_str(), m.implements.as_str())).collect();

    for t in &model.tasks {
        for (field, refs) in [("givens", &t.givens), ("makes", &t.makes)] {
            for c in refs {
                if !concepts.contains(c.as_str()) {
                    issues.push(
                        ErrorCode::DanglingConcept,
                        format!("tasks/{}/{field}/{c}", t.id),
                        format!("concept `{c}` is not declared"),
                    );
                }
            }
        }
        for s in &t.subtasks {
            if !tasks.contains(s.as_str()) {
                issues.push(
                    ErrorCode::DanglingTask,
                    format!("tasks/{}/subtasks/{s}", t.id),
                    format!("task `{s}` is not declared"),
                );
            }
        }
        for m in &t.by_methods {
            match methods.get(m.as_str()) {
                None => issues.push(
                    ErrorCode::DanglingMethod,
                    format!("tasks/{}/by_methods/{m}", t.id),
                    format!("method `{m}` is not declared"),
                ),
                Some(implements) if *implements != t.id => issues.push(
                    ErrorCode::MethodTaskMismatch,
                    format!("tasks/{}/by_methods/{m}", t.id),
                    format!("method `{m}` implements `{implements}`, not `{}`", t.id),
                ),
                Some(_) => {}
            }
        }
        if !t.is_leaf() && model.methods_for(&t.id).is_empty() {
            issues.push(
                ErrorCode::MissingMethod,
                format!("tasks/{}", t.id),
                "task has subtasks but no method",
            );
        }
    }

    for m in &model.methods {
        if !tasks.contains(m.implements.as_str()) {
            issues.push(
                ErrorCode::DanglingTask,
                format!("methods/{}/implements", m.id),
                format!("task `{}` is not declared", m.implements),
            );
        }
        for s in &m.states {
            if let Some(sub) = &s.subtask {
                if !tasks.contains(sub.as_str()) {
                    issues.push(
                        ErrorCode::DanglingTask,
                        format!("methods/{}/states/{}/subtask", m.id, s.id),
                        format!("task `{sub}` is not declared"),
                    );
                }
            }
        }
    }

    for c in &model.knowledge {
        for r in &c.relations {
            if !concepts.contains(r.target.as_str()) {
                issues.push(
                    ErrorCode::DanglingConcept,
                    format!("knowledge/{}/relations/{}", c.id, r.relation_name),
                    format!("concept `{}` is not declared", r.target),
                );
            }
        }
    }
}

/// Reports a back edge for every cycle in the subtask graph.
fn check_hierarchy(model: &TmkModel, issues: &mut Issues) {
    let graph: BTreeMap<&str, BTreeSet<&str>> = model
        .tasks
        .iter()
        .map(|t| (t.id.as_str(), t.subtasks.iter().map(String::as_str).collect()))
        .collect();

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let mut marks: HashMap<&str, Mark> = HashMap::new();

    for &root in graph.keys() {
        if marks.contains_key(root) {
            continue;
        }
        // Iterative DFS; each frame holds the node and its remaining children.
        let mut stack: Vec<(&str, Vec<&str>)> = vec![(root, graph[root].iter().rev().copied().collect())];
        marks.insert(root, Mark::Open);
        while let Some((node, children)) = stack.last_mut() {
            let node = *node;
            match children.pop() {
                Some(child) => match marks.get(child) {
                    Some(Mark::Open) => issues.push(
                        ErrorCode::CyclicHierarchy,
                        format!("tasks/{node}/subtasks/{child}"),
                        format!("task `{child}` is an ancestor of `{node}`"),
                    ),
                    Some(Mark::Done) => {}
                    None => {
                        if let Some(grand) = graph.get(child) {
                            marks.insert(child, Mark::Open);
                            stack.push((child, grand.iter().rev().copied().collect()));
                        }
                    }
                },
                None => {
                    marks.insert(node, Mark::Done);
                    stack.pop();
                }
            }
        }
    }
}

fn check_fsm(method: &super::Method, issues: &mut Issues) {
    let states: HashMap<&str, &super::State> = method.states.iter().map(|s| (s.id.as_str(), s)).collect();
    let base = format!("methods/{}", method.id);

    let start_ok = states.contains_key(method.start_state.as_str());
    if !start_ok {
        issues.push(
            ErrorCode::DanglingState,
            format!("{base}/start_state"),
            format!("start state `{}` is not declared", method.start_state),
        );
    }

    let mut guards: HashSet<(&str, &str)> = HashSet::new();
    let mut edges: HashMap<&str, Vec<&str>> = HashMap::new();
    for t in &method.transitions {
        let path = format!("{base}/transitions/{}:{}", t.from_state, t.condition_label);
        let mut endpoints_ok = true;
        for (end, id) in [("from_state", &t.from_state), ("to_state", &t.to_state)] {
            if !states.contains_key(id.as_str()) {
                endpoints_ok = false;
                issues.push(ErrorCode::DanglingState, path.clone(), format!("{end} `{id}` is not declared"));
            }
        }
        if t.condition_label.trim().is_empty() {
            issues.push(ErrorCode::EmptyCondition, path.clone(), "condition label is empty");
        }
        if !guards.insert((t.from_state.as_str(), t.condition_label.as_str())) {
            issues.push(
                ErrorCode::NondeterministicFsm,
                path.clone(),
                format!("more than one transition leaves `{}` on `{}`", t.from_state, t.condition_label),
            );
        }
        if let Some(from) = states.get(t.from_state.as_str()) {
            if from.terminal {
                issues.push(
                    ErrorCode::TerminalHasTransitions,
                    path.clone(),
                    format!("terminal state `{}` has an outgoing transition", from.id),
                );
            }
        }
        if endpoints_ok {
            edges.entry(t.from_state.as_str()).or_default().push(t.to_state.as_str());
        }
    }

    if start_ok {
        let mut seen: HashSet<&str> = HashSet::from([method.start_state.as_str()]);
        let mut queue = VecDeque::from([method.start_state.as_str()]);
        while let Some(s) = queue.pop_front() {
            for &next in edges.get(s).map(Vec::as_slice).unwrap_or_default() {
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        for s in &method.states {
            if !seen.contains(s.id.as_str()) {
                issues.push(
                    ErrorCode::UnreachableState,
                    format!("{base}/states/{}", s.id),
                    format!("state `{}` is not reachable from `{}`", s.id, method.start_state),
                );
            }
        }
    }
}
