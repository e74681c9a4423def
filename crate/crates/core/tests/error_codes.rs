//! Keeps docs/error-codes.md honest: every code the crates can emit has a
//! section, and every validation example really triggers its code.

use std::collections::BTreeSet;
use std::path::PathBuf;

use regex::Regex;
use serde_json::Value;

use asktmk::tmk::{parse_model, validate, ErrorCode};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn doc() -> String {
    std::fs::read_to_string(root().join("docs/error-codes.md")).unwrap()
}

/// SCREAMING_SNAKE string literals in the sources that are not error codes.
const NOT_CODES: &[&str] = &[
    "ASKTMK_API_KEY",
    "ASKTMK_ENDPOINT",
    "ASKTMK_K",
    "ASKTMK_PORT",
    "ASKTMK_PROVIDER_MODE",
    "CARGO_PKG_VERSION",
    "EXISTING_ANSWER",
    "METHOD_STEPS",
    "SCREAMING_SNAKE_CASE",
];

fn emitted_codes() -> BTreeSet<String> {
    let re = Regex::new(r#""([A-Z][A-Z0-9]*(?:_[A-Z0-9]+)+|INTERNAL)""#).unwrap();
    let mut out = BTreeSet::new();
    let mut stack = vec![root().join("crates/core/src"), root().join("crates/ffi/src")];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "rs") {
                let text = std::fs::read_to_string(&path).unwrap();
                for c in re.captures_iter(&text) {
                    if !NOT_CODES.contains(&&c[1]) {
                        out.insert(c[1].to_string());
                    }
                }
            }
        }
    }
    out
}

fn documented() -> BTreeSet<String> {
    doc().lines().filter_map(|l| l.strip_prefix("### ")).map(|s| s.trim().to_string()).collect()
}

#[test]
fn every_code_is_documented() {
    let documented = documented();
    let missing: Vec<_> = emitted_codes().into_iter().filter(|c| !documented.contains(c)).collect();
    assert!(missing.is_empty(), "undocumented codes: {missing:?}");
    for code in ErrorCode::ALL {
        assert!(documented.contains(code.as_str()), "{code} undocumented");
    }
}

#[test]
fn no_stale_sections() {
    let mut emitted = emitted_codes();
    emitted.extend(["PANIC", "MALFORMED_INPUT"].map(String::from));
    let stale: Vec<_> = documented().into_iter().filter(|c| !emitted.contains(c)).collect();
    assert!(stale.is_empty(), "documented but never emitted: {stale:?}");
}

/// (code, patch) for each `json patch` block, keyed by the heading above it.
fn patches(doc: &str) -> (Value, Vec<(String, Value)>) {
    let mut base = None;
    let mut out = Vec::new();
    let mut heading = String::new();
    let mut lines = doc.lines();
    while let Some(line) = lines.next() {
        if let Some(h) = line.strip_prefix("### ") {
            heading = h.trim().to_string();
        } else if line == "```json base" || line == "```json patch" {
            let body: Vec<&str> = lines.by_ref().take_while(|l| *l != "```").collect();
            let value: Value = serde_json::from_str(&body.join("\n")).unwrap();
            if line.ends_with("base") {
                base = Some(value);
            } else {
                out.push((heading.clone(), value));
            }
        }
    }
    (base.expect("base model block"), out)
}

fn apply(model: &mut Value, patch: &Value) {
    for op in patch.as_array().unwrap() {
        let target = model.pointer_mut(op["path"].as_str().unwrap()).unwrap();
        match op["op"].as_str().unwrap() {
            "set" => *target = op["value"].clone(),
            "append" => target.as_array_mut().unwrap().push(op["value"].clone()),
            other => panic!("unknown op {other}"),
        }
    }
}

fn codes(model: &Value) -> BTreeSet<String> {
    match parse_model(model.to_string().as_bytes()) {
        Err(e) => BTreeSet::from([e.code().to_string()]),
        Ok(m) => validate(&m).codes().into_iter().map(|c| c.as_str().to_string()).collect(),
    }
}

#[test]
fn validation_examples_trigger_their_code() {
    let (base, patches) = patches(&doc());
    assert!(codes(&base).is_empty(), "base model is not valid: {:?}", codes(&base));
    let covered: BTreeSet<&str> = patches.iter().map(|(c, _)| c.as_str()).collect();
    for code in ErrorCode::ALL {
        assert!(covered.contains(code.as_str()), "no example for {code}");
    }
    for (code, patch) in &patches {
        let mut m = base.clone();
        apply(&mut m, patch);
        let got = codes(&m);
        assert!(got.contains(code), "{code} example produced {got:?}");
        if code != "CYCLIC_HIERARCHY" {
            assert_eq!(got.len(), 1, "{code} example produced {got:?}");
        }
    }
}
