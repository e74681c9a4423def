use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::tmk::TmkModel;

/// One state of a linearized method.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodStep {
    pub state_id: String,
    pub state_name: String,
    /// Name of the subtask performed in this state.
    pub subtask: Option<String>,
    /// Condition label of the transition that first reached this state.
    pub entered_via: Option<String>,
    /// Labels of the outgoing transitions, ascending.
    pub outgoing: Vec<String>,
}

/// Depth-first linearization of a method's FSM from its start state. Branches
/// are explored in ascending condition-label order and each state appears once.
pub fn decompose_method(model: &TmkModel, method_id: &str) -> Result<Vec<MethodStep>, PipelineError> {
    let method = model.method(method_id).ok_or_else(|| PipelineError::UnknownMethod(method_id.to_string()))?;
    let mut visited = HashSet::new();
    let mut steps = Vec::new();
    let mut stack: Vec<(&str, Option<&str>)> = vec![(method.start_state.as_str(), None)];

    while let Some((state_id, via)) = stack.pop() {
        if !visited.insert(state_id) {
            continue;
        }
        let Some(state) = method.state(state_id) else { continue };
        let outgoing = method.outgoing(state_id);
        for t in outgoing.iter().rev() {
            if !visited.contains(t.to_state.as_str()) {
                stack.push((t.to_state.as_str(), Some(t.condition_label.as_str())));
            }
        }
        steps.push(MethodStep {
            state_id: state.id.clone(),
            state_name: state.name.clone(),
            subtask: state
                .subtask
                .as_ref()
                .map(|id| model.task(id).map_or(id.clone(), |t| t.name.clone())),
            entered_via: via.map(str::to_string),
            outgoing: outgoing.iter().map(|t| t.condition_label.clone()).collect(),
        });
    }
    Ok(steps)
}

/// Numbered outline used in chain-of-thought prompts.
pub fn steps_outline(method_name: &str, steps: &[MethodStep]) -> String {
    let mut out = format!("Method: {method_name}");
    for (i, s) in steps.iter().enumerate() {
        out.push_str(&format!("\n{}. {}", i + 1, s.state_name));
        if let Some(via) = &s.entered_via {
            out.push_str(&format!(" [when: {via}]"));
        }
        if let Some(sub) = &s.subtask {
            out.push_str(&format!(" -> subtask: {sub}"));
        }
        if s.outgoing.is_empty() {
            out.push_str(" (end)");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::vera_model;
    use crate::tmk::{Method, State, Task, Transition};

    fn fsm(states: &[(&str, bool)], transitions: &[(&str, &str, &str)]) -> TmkModel {
        TmkModel {
            agent_name: "A".into(),
            version: "1".into(),
            tasks: vec![Task {
                id: "t".into(),
                name: "T".into(),
                description: "d".into(),
                givens: vec![],
                makes: vec![],
                subtasks: vec![],
                by_methods: vec!["m".into()],
                top_level: true,
            }],
            methods: vec![Method {
                id: "m".into(),
                name: "M".into(),
                description: "d".into(),
                implements: "t".into(),
                states: states
                    .iter()
                    .map(|(id, terminal)| State { id: id.to_string(), name: id.to_uppercase(), subtask: None, terminal: *terminal })
                    .collect(),
                transitions: transitions
                    .iter()
                    .map(|(f, t, l)| Transition { from_state: f.to_string(), to_state: t.to_string(), condition_label: l.to_string() })
                    .collect(),
                start_state: states[0].0.to_string(),
            }],
            knowledge: vec![],
        }
    }

    fn ids(steps: &[MethodStep]) -> Vec<&str> {
        steps.iter().map(|s| s.state_id.as_str()).collect()
    }

    #[test]
    fn linear() {
        let m = fsm(&[("s1", false), ("s2", false), ("s3", true)], &[("s1", "s2", "go"), ("s2", "s3", "go")]);
        assert_eq!(ids(&decompose_method(&m, "m").unwrap()), ["s1", "s2", "s3"]);
    }

    #[test]
    fn branch_order_follows_labels() {
        let m = fsm(&[("s1", false), ("s3", true), ("s2", true)], &[("s1", "s3", "ok"), ("s1", "s2", "fail")]);
        let steps = decompose_method(&m, "m").unwrap();
        assert_eq!(ids(&steps), ["s1", "s2", "s3"]);
        assert_eq!(steps[1].entered_via.as_deref(), Some("fail"));
        assert_eq!(steps[2].entered_via.as_deref(), Some("ok"));
        assert_eq!(steps[0].outgoing, ["fail", "ok"]);
    }

    #[test]
    fn unknown_method() {
        assert!(matches!(decompose_method(&vera_model(), "m_nope"), Err(PipelineError::UnknownMethod(_))));
    }

    #[test]
    fn fixture_finish_simulation() {
        // Hand walk: configure -[parameters set]-> create -[simulation created]-> run;
        // run's labels sorted: "run complete" -> review, "settings changed" (create, seen).
        let steps = decompose_method(&vera_model(), "m_finish_simulation").unwrap();
        assert_eq!(ids(&steps), ["s_configure", "s_create", "s_run", "s_review"]);
        assert_eq!(steps[1].subtask.as_deref(), Some("Create Simulation"));
        assert_eq!(steps[2].subtask.as_deref(), Some("Run Simulation"));
        assert_eq!(steps[3].entered_via.as_deref(), Some("run complete"));
    }

    #[test]
    fn fixture_experiment_visits_every_state_once() {
        let model = vera_model();
        for method in &model.methods {
            let steps = decompose_method(&model, &method.id).unwrap();
            let mut seen: Vec<_> = ids(&steps);
            seen.sort();
            let mut declared: Vec<_> = method.states.iter().map(|s| s.id.as_str()).collect();
            declared.sort();
            assert_eq!(seen, declared, "{}", method.id);
        }
        let steps = decompose_method(&model, "m_experiment").unwrap();
        assert_eq!(ids(&steps), ["s_plan", "s_edit", "s_simulate", "s_done"]);
    }

    #[test]
    fn outline_text() {
        let steps = decompose_method(&vera_model(), "m_run_simulation").unwrap();
        assert_eq!(
            steps_outline("run simulation", &steps),
            "Method: run simulation\n1. Initialize agents\n2. Advance one step [when: agents placed]\n3. Plot populations [when: steps exhausted] (end)"
        );
    }
}
