//! Indented text form of a trace.
//!
//! ```text
//! bindings {"c_project":"pond study"}
//! task t_experiment :: Finish an Ecology Experiment
//!   method m_experiment :: Conduct Experiment
//!   state s_plan -> "model needs editing" :: Plan the experiment
//!   state s_edit -> "model edited" :: Edit the model
//!     task t_edit_model :: Edit a Model
//!   state s_done :: Done
//! ```
//!
//! Two spaces per level. A child task sits under the state that spawned it.
//! Labels are JSON strings. Everything after ` :: ` is a display name and is
//! ignored when parsing.

use std::collections::BTreeMap;

use super::{DerivationalTrace, TraceError, TraceNode, VisitedState};
use crate::tmk::TmkModel;

const NAME_SEP: &str = " :: ";

pub fn to_outline(model: &TmkModel, trace: &DerivationalTrace) -> String {
    let mut out = format!(
        "bindings {}\n",
        serde_json::to_string(&trace.instance_bindings).expect("string map serializes")
    );
    write_node(model, &trace.root, 0, &mut out);
    out
}

fn line(out: &mut String, depth: usize, text: &str, name: Option<&str>) {
    out.push_str(&"  ".repeat(depth));
    out.push_str(text);
    if let Some(name) = name {
        out.push_str(NAME_SEP);
        out.push_str(name);
    }
    out.push('\n');
}

fn write_node(model: &TmkModel, node: &TraceNode, depth: usize, out: &mut String) {
    line(out, depth, &format!("task {}", node.task), model.task(&node.task).map(|t| t.name.as_str()));
    let method = node.method.as_deref().and_then(|m| model.method(m));
    if let Some(m) = &node.method {
        line(out, depth + 1, &format!("method {m}"), method.map(|m| m.name.as_str()));
    }
    let mut children = node.children.iter();
    for v in &node.visited_states {
        let state = method.and_then(|m| m.state(&v.state));
        let mut text = format!("state {}", v.state);
        if let Some(label) = &v.taken {
            text.push_str(" -> ");
            text.push_str(&serde_json::to_string(label).expect("string serializes"));
        }
        line(out, depth + 1, &text, state.map(|s| s.name.as_str()));
        if state.is_some_and(|s| s.subtask.is_some()) {
            if let Some(child) = children.next() {
                write_node(model, child, depth + 2, out);
            }
        }
    }
    for child in children {
        write_node(model, child, depth + 2, out);
    }
}

struct Line<'a> {
    number: usize,
    depth: usize,
    text: &'a str,
}

fn malformed(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::MalformedOutline { line, message: message.into() }
}

fn split_lines(text: &str) -> Result<Vec<Line<'_>>, TraceError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let body = raw.trim_start_matches(' ');
        let indent = raw.len() - body.len();
        if indent % 2 != 0 {
            return Err(malformed(i + 1, "indentation must be a multiple of two spaces"));
        }
        out.push(Line { number: i + 1, depth: indent / 2, text: body.trim_end() });
    }
    Ok(out)
}

/// `keyword <id>[ :: name]` → id.
fn keyword_id<'a>(line: &Line<'a>, keyword: &str) -> Result<&'a str, TraceError> {
    let rest = line
        .text
        .strip_prefix(keyword)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| malformed(line.number, format!("expected `{keyword} <id>`")))?;
    let id = rest.split(NAME_SEP).next().unwrap_or("").trim();
    if id.is_empty() || id.contains(char::is_whitespace) {
        return Err(malformed(line.number, format!("bad {keyword} id")));
    }
    Ok(id)
}

fn parse_state(line: &Line<'_>) -> Result<VisitedState, TraceError> {
    let rest = line.text.strip_prefix("state ").ok_or_else(|| malformed(line.number, "expected `state <id>`"))?;
    let id_end = rest.find(' ').unwrap_or(rest.len());
    let (id, mut tail) = rest.split_at(id_end);
    if id.is_empty() {
        return Err(malformed(line.number, "bad state id"));
    }
    let mut taken = None;
    if let Some(after) = tail.strip_prefix(" -> ") {
        let mut stream = serde_json::Deserializer::from_str(after).into_iter::<String>();
        let label = stream
            .next()
            .ok_or_else(|| malformed(line.number, "missing label"))?
            .map_err(|e| malformed(line.number, format!("bad label: {e}")))?;
        tail = &after[stream.byte_offset()..];
        taken = Some(label);
    }
    if !(tail.is_empty() || tail.starts_with(NAME_SEP)) {
        return Err(malformed(line.number, format!("unexpected text {tail:?}")));
    }
    Ok(VisitedState { state: id.to_string(), taken })
}

fn parse_node(lines: &[Line<'_>], pos: &mut usize, depth: usize) -> Result<TraceNode, TraceError> {
    let head = &lines[*pos];
    if head.depth != depth {
        return Err(malformed(head.number, "unexpected indentation"));
    }
    let mut node = TraceNode::leaf(keyword_id(head, "task")?);
    *pos += 1;
    while let Some(l) = lines.get(*pos) {
        if l.depth <= depth {
            break;
        }
        if l.depth == depth + 1 && l.text.starts_with("method ") {
            if node.method.is_some() || !node.visited_states.is_empty() {
                return Err(malformed(l.number, "method must come once, before the states"));
            }
            node.method = Some(keyword_id(l, "method")?.to_string());
            *pos += 1;
        } else if l.depth == depth + 1 && l.text.starts_with("state ") {
            node.visited_states.push(parse_state(l)?);
            *pos += 1;
        } else if l.depth == depth + 2 && l.text.starts_with("task ") {
            node.children.push(parse_node(lines, pos, depth + 2)?);
        } else {
            return Err(malformed(l.number, "unexpected line"));
        }
    }
    Ok(node)
}

pub fn parse_outline(text: &str) -> Result<DerivationalTrace, TraceError> {
    let lines = split_lines(text)?;
    let first = lines.first().ok_or_else(|| malformed(1, "empty outline"))?;
    let json = first
        .text
        .strip_prefix("bindings ")
        .filter(|_| first.depth == 0)
        .ok_or_else(|| malformed(first.number, "expected `bindings {...}`"))?;
    let instance_bindings: BTreeMap<String, String> =
        serde_json::from_str(json).map_err(|e| malformed(first.number, format!("bad bindings: {e}")))?;
    if lines.len() < 2 {
        return Err(malformed(first.number + 1, "missing root task"));
    }
    let mut pos = 1;
    let root = parse_node(&lines, &mut pos, 0)?;
    if let Some(extra) = lines.get(pos) {
        return Err(malformed(extra.number, "text after the root task"));
    }
    Ok(DerivationalTrace { root, instance_bindings })
}
