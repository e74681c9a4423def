use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("missing binding `{0}`")]
    MissingBinding(String),
    #[error("unknown binding `{0}`")]
    UnknownBinding(String),
    #[error("template `{id}` placeholders {found:?} do not match declared bindings {declared:?}")]
    BindingMismatch { id: String, found: BTreeSet<String>, declared: BTreeSet<String> },
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap())
}

/// Template text with `{name}` placeholders. Braces around anything that is
/// not an identifier are left alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub text: String,
    pub required_bindings: BTreeSet<String>,
}

impl PromptTemplate {
    /// Builds a template whose required bindings are exactly its placeholders.
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let required_bindings = placeholders(&text);
        Self { id: id.into(), text, required_bindings }
    }

    /// Builds a template with an explicit binding set, which must equal the
    /// set of placeholders in `text`.
    pub fn with_bindings<I, S>(id: impl Into<String>, text: impl Into<String>, bindings: I) -> Result<Self, TemplateError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let id = id.into();
        let text = text.into();
        let declared: BTreeSet<String> = bindings.into_iter().map(Into::into).collect();
        let found = placeholders(&text);
        if found != declared {
            return Err(TemplateError::BindingMismatch { id, found, declared });
        }
        Ok(Self { id, text, required_bindings: declared })
    }

    /// Substitutes every placeholder in one pass; substituted values are not
    /// re-scanned, so they may contain braces.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        if let Some(missing) = self.required_bindings.iter().find(|name| !bindings.contains_key(name.as_str())) {
            return Err(TemplateError::MissingBinding(missing.clone()));
        }
        if let Some(unknown) = bindings.keys().copied().find(|name| !self.required_bindings.contains(*name)) {
            return Err(TemplateError::UnknownBinding(unknown.to_string()));
        }
        Ok(placeholder_re()
            .replace_all(&self.text, |caps: &regex::Captures<'_>| bindings[&caps[1]].clone())
            .into_owned())
    }
}

pub fn placeholders(text: &str) -> BTreeSet<String> {
    placeholder_re().captures_iter(text).map(|c| c[1].to_string()).collect()
}

/// Version tag shared by the bundled templates.
pub const TEMPLATE_VERSION: &str = "v1";

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../templates/", $name, ".txt")))),*]
    };
}

const BUNDLED: &[(&str, &str)] = bundled!(
    "multi_models_desc",
    "mmodel_desc",
    "cant_answer_desc",
    "classify_prompt",
    "multi_models_answer_prompt",
    "cot_method_prompt",
    "refine_prompt",
    "software_qa_prompt",
    "refusal",
);

/// Returns a bundled template by id.
pub fn bundled(id: &str) -> Result<PromptTemplate, TemplateError> {
    BUNDLED
        .iter()
        .find(|(name, _)| *name == id)
        .map(|(name, text)| PromptTemplate::new(*name, text.trim_end()))
        .ok_or_else(|| TemplateError::UnknownTemplate(id.to_string()))
}

pub fn bundled_ids() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(name, _)| *name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::WORKING_EXAMPLE_QUESTION;

    fn b(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn bundled_binding_sets() {
        let expect = |id: &str, names: &[&str]| {
            let t = bundled(id).unwrap();
            assert_eq!(t.required_bindings, names.iter().map(|s| s.to_string()).collect(), "{id}");
        };
        expect("multi_models_desc", &["Knowledge_names", "Method_names", "Task_names"]);
        expect("multi_models_answer_prompt", &["context_str", "question", "software_qa_prompt"]);
        expect("mmodel_desc", &["Method_names", "Task_names"]);
        expect("cant_answer_desc", &["agent_name"]);
        expect("refine_prompt", &["context_str", "existing_answer", "question", "software_qa_prompt"]);
        expect("cot_method_prompt", &["context_str", "method_steps", "question", "software_qa_prompt"]);
        expect("software_qa_prompt", &["agent_name", "role_description", "session_summary"]);
        assert_eq!(bundled_ids().count(), 9);
        assert!(matches!(bundled("nope"), Err(TemplateError::UnknownTemplate(_))));
    }

    #[test]
    fn multi_models_desc_contains_lists() {
        let out = bundled("multi_models_desc")
            .unwrap()
            .render(&b(&[
                ("Knowledge_names", "Ecology Model, VERA"),
                ("Task_names", "finish ecology experiment, create simulation"),
                ("Method_names", "create simulation, run simulation"),
            ]))
            .unwrap();
        assert!(out.contains("concepts in a JSON file: Ecology Model, VERA."));
        assert!(out.contains("finish ecology experiment, create simulation"));
        assert!(out.contains("create simulation, run simulation"));
        assert!(placeholders(&out).is_empty());
    }

    #[test]
    fn answer_prompt_substitutes_question() {
        let out = bundled("multi_models_answer_prompt")
            .unwrap()
            .render(&b(&[
                ("software_qa_prompt", "You help"),
                ("context_str", "{\"json\": true}"),
                ("question", WORKING_EXAMPLE_QUESTION),
            ]))
            .unwrap();
        assert!(out.contains(WORKING_EXAMPLE_QUESTION));
        assert!(out.contains(&format!("Please treat each {WORKING_EXAMPLE_QUESTION} as completely new")));
        assert!(out.contains("{\"json\": true}"));
    }

    #[test]
    fn missing_and_unknown_bindings() {
        let t = bundled("multi_models_answer_prompt").unwrap();
        assert_eq!(
            t.render(&b(&[("software_qa_prompt", ""), ("context_str", "")])),
            Err(TemplateError::MissingBinding("question".into()))
        );
        assert_eq!(
            t.render(&b(&[("software_qa_prompt", ""), ("context_str", ""), ("question", "q"), ("extra", "")])),
            Err(TemplateError::UnknownBinding("extra".into()))
        );
    }

    #[test]
    fn explicit_bindings_must_match() {
        assert!(PromptTemplate::with_bindings("t", "Hi {name}", ["name"]).is_ok());
        assert!(matches!(
            PromptTemplate::with_bindings("t", "Hi {name}", ["name", "other"]),
            Err(TemplateError::BindingMismatch { .. })
        ));
        assert!(placeholders("{ not one } {1x} {ok_2}").into_iter().eq(["ok_2".to_string()]));
    }
}
