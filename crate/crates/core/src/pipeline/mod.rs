//! The three-stage question answering pipeline: classify the question,
//! localize the relevant TMK elements, then generate an answer through a
//! refine chain (one completion per retrieved document).

mod classify;
mod decompose;
mod session;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classify::{is_how_question, mentions, parse_class, rule_classify};
pub use decompose::{decompose_method, steps_outline, MethodStep};
pub use session::{Exchange, Session, DEFAULT_SESSION_BOUND};

use crate::gateway::{
    approx_tokens, blocks, bundled, CompletionProvider, CompletionRequest, ProviderError, ProviderMode,
    TemplateError, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE, TEMPLATE_VERSION,
};
use crate::retrieval::{build_index, Embedder, RetrievalError, RetrievalHit, VectorIndex};
use crate::tmk::{render_documents, validate, Document, ElementKind, TmkModel, ValidationReport, RENDER_TEMPLATE_ID};

pub const DEFAULT_K: usize = 4;
pub const REFUSAL_TEMPLATE_ID: &str = "refusal";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionClass {
    Mmodel,
    Multimodels,
    CantAnswer,
}

impl QuestionClass {
    pub fn as_str(self) -> &'static str {
        match self {
            QuestionClass::Mmodel => "mmodel",
            QuestionClass::Multimodels => "multimodels",
            QuestionClass::CantAnswer => "cant_answer",
        }
    }

    /// Element kinds loaded for localization; `None` for `cant_answer`.
    pub fn kinds(self) -> Option<&'static [ElementKind]> {
        match self {
            QuestionClass::Mmodel => Some(&[ElementKind::Task, ElementKind::Method]),
            QuestionClass::Multimodels => Some(&ElementKind::ALL),
            QuestionClass::CantAnswer => None,
        }
    }
}

impl fmt::Display for QuestionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Classify,
    Localize,
    Generate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Classify => "classify",
            Stage::Localize => "localize",
            Stage::Generate => "generate",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("localize: {0}")]
    Localize(#[from] RetrievalError),
    #[error("generate: {source}")]
    Generate { source: ProviderError, partial_steps: Vec<String> },
    #[error("template: {0}")]
    Template(#[from] TemplateError),
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            PipelineError::EmptyQuestion => Stage::Classify,
            PipelineError::Localize(_) => Stage::Localize,
            PipelineError::UnknownMethod(_)
            | PipelineError::InvalidInput(_)
            | PipelineError::Generate { .. }
            | PipelineError::Template(_) => Stage::Generate,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::EmptyQuestion => "EMPTY_QUESTION",
            PipelineError::UnknownMethod(_) => "UNKNOWN_METHOD",
            PipelineError::InvalidInput(_) => "INVALID_INPUT",
            PipelineError::Localize(e) => e.code(),
            PipelineError::Generate { source, .. } => source.code(),
            PipelineError::Template(_) => "TEMPLATE_ERROR",
        }
    }
}

/// Provenance recorded with every answer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultMetadata {
    pub k: usize,
    pub template_ids: Vec<String>,
    pub template_version: String,
    pub document_template: String,
    pub provider_mode: String,
    pub embedder_id: String,
    /// Completion calls made while answering, classification included.
    pub provider_calls: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationResult {
    pub question: String,
    pub class: QuestionClass,
    pub hits: Vec<RetrievalHit>,
    pub steps: Vec<String>,
    pub answer: String,
    pub metadata: ResultMetadata,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    pub class: QuestionClass,
    pub provider_calls: usize,
    pub warnings: Vec<String>,
    pub template_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    pub steps: Vec<String>,
    pub answer: String,
    pub provider_calls: usize,
    pub warnings: Vec<String>,
    pub template_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineSettings {
    pub k: usize,
    pub max_tokens: u32,
    pub temperature: f64,
    pub session_bound: usize,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            session_bound: DEFAULT_SESSION_BOUND,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("model failed validation:\n{0}")]
    InvalidModel(ValidationReport),
    #[error("building the index failed: {0}")]
    Index(#[from] RetrievalError),
    #[error("invalid settings: {0}")]
    Settings(String),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::InvalidModel(_) => "INVALID_MODEL",
            EngineError::Index(e) => e.code(),
            EngineError::Settings(_) => "INVALID_SETTINGS",
        }
    }
}

/// A validated model with its document indexes and a completion provider.
/// Immutable after construction and shareable across threads.
pub struct Engine {
    model: Arc<TmkModel>,
    provider: Arc<dyn CompletionProvider>,
    embedder: Arc<dyn Embedder>,
    documents: HashMap<(ElementKind, String), Document>,
    /// Index over every element (multimodels).
    full_index: VectorIndex,
    /// Index over tasks and methods only (mmodel).
    task_method_index: VectorIndex,
    settings: EngineSettings,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("agent", &self.model.agent_name)
            .field("provider", &self.provider.mode())
            .field("embedder", &self.embedder.id())
            .field("settings", &self.settings)
            .finish()
    }
}

impl Engine {
    pub fn new(
        model: TmkModel,
        provider: Arc<dyn CompletionProvider>,
        embedder: Arc<dyn Embedder>,
        settings: EngineSettings,
    ) -> Result<Self, EngineError> {
        if settings.k == 0 {
            return Err(EngineError::Settings("k must be at least 1".into()));
        }
        let report = validate(&model);
        if !report.ok {
            return Err(EngineError::InvalidModel(report));
        }
        let all = render_documents(&model, &ElementKind::ALL).expect("kind set is non-empty");
        let task_method: Vec<Document> = all.iter().filter(|d| d.kind != ElementKind::Knowledge).cloned().collect();
        let full_index = build_index(&all, embedder.as_ref())?;
        let task_method_index = build_index(&task_method, embedder.as_ref())?;
        let documents = all.into_iter().map(|d| ((d.kind, d.element_id.clone()), d)).collect();
        Ok(Self {
            model: Arc::new(model),
            provider,
            embedder,
            documents,
            full_index,
            task_method_index,
            settings,
        })
    }

    /// Engine with the mock provider and the default hashing embedder.
    pub fn mock(model: TmkModel) -> Result<Self, EngineError> {
        Self::new(
            model,
            Arc::new(crate::gateway::MockProvider::default()),
            Arc::new(crate::retrieval::HashingEmbedder::default()),
            EngineSettings::default(),
        )
    }

    pub fn model(&self) -> &TmkModel {
        &self.model
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    pub fn provider(&self) -> &dyn CompletionProvider {
        self.provider.as_ref()
    }

    pub fn embedder_id(&self) -> String {
        self.embedder.id()
    }

    pub fn index_for(&self, class: QuestionClass) -> Option<&VectorIndex> {
        match class {
            QuestionClass::Mmodel => Some(&self.task_method_index),
            QuestionClass::Multimodels => Some(&self.full_index),
            QuestionClass::CantAnswer => None,
        }
    }

    pub fn document(&self, kind: ElementKind, element_id: &str) -> Option<&Document> {
        self.documents.get(&(kind, element_id.to_string()))
    }

    /// Title of a hit's document.
    pub fn hit_title<'a>(&'a self, hit: &'a RetrievalHit) -> &'a str {
        self.document(hit.kind, &hit.element_id).map_or(hit.element_id.as_str(), |d| d.title.as_str())
    }

    fn request(&self, prompt: String) -> CompletionRequest {
        CompletionRequest::with_limits(prompt, self.settings.max_tokens, self.settings.temperature)
    }

    fn software_qa_prompt(&self, session: &Session) -> Result<String, TemplateError> {
        let role = match self.model.top_level_task() {
            Some(t) => format!(
                "{} performs the top-level task \"{}\": {}",
                self.model.agent_name,
                t.name,
                t.description.trim()
            ),
            None => String::new(),
        };
        bundled("software_qa_prompt")?.render(&BTreeMap::from([
            ("agent_name", self.model.agent_name.clone()),
            ("role_description", role),
            ("session_summary", session.summary().to_string()),
        ]))
    }

    /// Refusal returned for `cant_answer` questions.
    pub fn refusal(&self) -> String {
        bundled(REFUSAL_TEMPLATE_ID)
            .and_then(|t| t.render(&BTreeMap::from([("agent_name", self.model.agent_name.clone())])))
            .expect("bundled refusal template renders")
    }

    fn names(&self, kind: ElementKind) -> String {
        let names: Vec<&str> = match kind {
            ElementKind::Task => self.model.tasks.iter().map(|t| t.name.as_str()).collect(),
            ElementKind::Method => self.model.methods.iter().map(|m| m.name.as_str()).collect(),
            ElementKind::Knowledge => self.model.knowledge.iter().map(|c| c.name.as_str()).collect(),
        };
        names.join(", ")
    }

    /// Prompt asking the provider to pick one of the three classes.
    pub fn classification_prompt(&self, question: &str, session: &Session) -> Result<String, TemplateError> {
        let multi = bundled("multi_models_desc")?.render(&BTreeMap::from([
            ("Knowledge_names", self.names(ElementKind::Knowledge)),
            ("Task_names", self.names(ElementKind::Task)),
            ("Method_names", self.names(ElementKind::Method)),
        ]))?;
        let mmodel = bundled("mmodel_desc")?.render(&BTreeMap::from([
            ("Task_names", self.names(ElementKind::Task)),
            ("Method_names", self.names(ElementKind::Method)),
        ]))?;
        let cant = bundled("cant_answer_desc")?
            .render(&BTreeMap::from([("agent_name", self.model.agent_name.clone())]))?;
        bundled("classify_prompt")?.render(&BTreeMap::from([
            ("software_qa_prompt", self.software_qa_prompt(session)?),
            ("multi_models_desc", multi),
            ("mmodel_desc", mmodel),
            ("cant_answer_desc", cant),
            ("question", question.trim().to_string()),
        ]))
    }

    /// Stage 1. The mock provider uses the rule classifier directly; a remote
    /// provider is asked first and the rules are the fallback when the call
    /// fails or its answer names no single class.
    pub fn classify(&self, question: &str, session: &Session) -> Result<Classification, PipelineError> {
        if question.trim().is_empty() {
            return Err(PipelineError::EmptyQuestion);
        }
        let rules = || rule_classify(question, &self.model);
        if self.provider.mode() == ProviderMode::Mock {
            return Ok(Classification {
                class: rules(),
                provider_calls: 0,
                warnings: Vec::new(),
                template_ids: Vec::new(),
            });
        }

        let prompt = self.classification_prompt(question, session)?;
        let template_ids =
            ["multi_models_desc", "mmodel_desc", "cant_answer_desc", "classify_prompt"].map(String::from).to_vec();
        let (class, warnings) = match self.provider.complete(&self.request(prompt)) {
            Ok(text) => match parse_class(&text) {
                Some(class) => (class, Vec::new()),
                None => (rules(), vec![format!("unparseable classification {:?}; used rule classifier", text.trim())]),
            },
            Err(e) => (rules(), vec![format!("classification call failed ({}); used rule classifier", e.code())]),
        };
        Ok(Classification { class, provider_calls: 1, warnings, template_ids })
    }

    /// Stage 2: top-k documents among the kinds the class allows.
    pub fn localize(&self, question: &str, class: QuestionClass, k: usize) -> Result<Vec<RetrievalHit>, PipelineError> {
        let index = self
            .index_for(class)
            .ok_or_else(|| PipelineError::InvalidInput("cant_answer questions are not localized".into()))?;
        let query = self.embedder.embed(question)?;
        Ok(index.search(&query, k)?)
    }

    /// Methods whose step outlines accompany an mmodel prompt: retrieved
    /// methods, and the methods of retrieved tasks, in hit order.
    fn methods_for_hits(&self, hits: &[RetrievalHit]) -> Vec<&crate::tmk::Method> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for hit in hits {
            let candidates = match hit.kind {
                ElementKind::Method => self.model.method(&hit.element_id).into_iter().collect(),
                ElementKind::Task => self.model.methods_for(&hit.element_id),
                ElementKind::Knowledge => Vec::new(),
            };
            for m in candidates {
                if seen.insert(m.id.as_str()) {
                    out.push(m);
                }
            }
        }
        out
    }

    /// Stage 3: an initial answer from the best document, then one refine call
    /// per remaining document in descending score order.
    pub fn generate(
        &self,
        question: &str,
        class: QuestionClass,
        hits: &[RetrievalHit],
        session: &Session,
    ) -> Result<Generated, PipelineError> {
        if class == QuestionClass::CantAnswer {
            return Err(PipelineError::InvalidInput("cant_answer questions are not generated".into()));
        }
        if hits.is_empty() {
            return Err(PipelineError::InvalidInput("generation needs at least one hit".into()));
        }
        let mut ordered: Vec<&RetrievalHit> = hits.iter().collect();
        ordered.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.key().cmp(&b.key())));

        let docs: Vec<&Document> = ordered
            .iter()
            .map(|h| {
                self.document(h.kind, &h.element_id)
                    .ok_or_else(|| PipelineError::InvalidInput(format!("hit {} is not in the model", h.key())))
            })
            .collect::<Result<_, _>>()?;

        let qa = self.software_qa_prompt(session)?;
        let budget = self.provider.prompt_budget();
        let mut warnings = Vec::new();
        let mut steps: Vec<String> = Vec::with_capacity(docs.len());
        let mut calls = 0;
        let initial_id = match class {
            QuestionClass::Mmodel => "cot_method_prompt",
            _ => "multi_models_answer_prompt",
        };
        let template_ids = ["software_qa_prompt", initial_id, "refine_prompt"].map(String::from).to_vec();

        let mut outlines: Vec<String> = if class == QuestionClass::Mmodel {
            self.methods_for_hits(&ordered.iter().map(|h| (*h).clone()).collect::<Vec<_>>())
                .into_iter()
                .map(|m| decompose_method(&self.model, &m.id).map(|s| steps_outline(&m.name, &s)))
                .collect::<Result<_, _>>()?
        } else {
            Vec::new()
        };

        let initial_template = bundled(initial_id)?;
        let render_initial = |body: &str, outlines: &[String]| -> Result<String, TemplateError> {
            let mut b = BTreeMap::from([
                ("software_qa_prompt", qa.clone()),
                ("context_str", blocks::context([(docs[0].title.as_str(), body)])),
                ("question", question.trim().to_string()),
            ]);
            if class == QuestionClass::Mmodel {
                let content = if outlines.is_empty() { "none".to_string() } else { outlines.join("\n") };
                b.insert("method_steps", blocks::wrap(blocks::METHOD_STEPS, &content));
            }
            initial_template.render(&b)
        };

        let body = docs[0].body.clone();
        let mut prompt = render_initial(&body, &outlines)?;
        // Over budget: drop step outlines of the lowest-ranked methods first,
        // then shorten the document body.
        while approx_tokens(&prompt) > budget && !outlines.is_empty() {
            outlines.pop();
            warnings.push("prompt over budget: dropped the lowest-ranked method outline".to_string());
            prompt = render_initial(&body, &outlines)?;
        }
        if approx_tokens(&prompt) > budget {
            (_, prompt) = self.shrink(&body, budget, |b| render_initial(b, &outlines))?;
            warnings.push(format!("prompt over budget: truncated document {}", docs[0].title));
        }

        let run = |prompt: String, steps: &[String]| {
            self.provider.complete(&self.request(prompt)).map_err(|source| PipelineError::Generate {
                source,
                partial_steps: steps.to_vec(),
            })
        };
        calls += 1;
        let mut answer = run(prompt, &steps)?;
        steps.push(answer.clone());

        let refine = bundled("refine_prompt")?;
        for doc in &docs[1..] {
            let render = |body: &str| {
                refine.render(&BTreeMap::from([
                    ("software_qa_prompt", qa.clone()),
                    ("question", question.trim().to_string()),
                    ("existing_answer", blocks::wrap(blocks::EXISTING_ANSWER, &answer)),
                    ("context_str", blocks::context([(doc.title.as_str(), body)])),
                ]))
            };
            let mut prompt = render(&doc.body)?;
            if approx_tokens(&prompt) > budget {
                (_, prompt) = self.shrink(&doc.body, budget, render)?;
                warnings.push(format!("prompt over budget: truncated document {}", doc.title));
            }
            calls += 1;
            answer = run(prompt, &steps)?;
            steps.push(answer.clone());
        }

        Ok(Generated { steps, answer, provider_calls: calls, warnings, template_ids })
    }

    /// Longest prefix of `body` (whole characters) whose prompt fits the
    /// budget. Falls back to an empty body; the provider then reports
    /// `BudgetExceeded` if even that does not fit.
    fn shrink(
        &self,
        body: &str,
        budget: usize,
        render: impl Fn(&str) -> Result<String, TemplateError>,
    ) -> Result<(String, String), PipelineError> {
        let chars: Vec<char> = body.chars().collect();
        let (mut lo, mut hi) = (0usize, chars.len());
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            let candidate: String = chars[..mid].iter().collect();
            if approx_tokens(&render(&candidate)?) <= budget {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        let kept: String = chars[..lo].iter().collect();
        let prompt = render(&kept)?;
        Ok((kept, prompt))
    }

    /// Full pipeline for one question. `k` overrides the configured default.
    /// The session is updated with the exchange on success.
    pub fn ask(&self, question: &str, session: &mut Session, k: Option<usize>) -> Result<ExplanationResult, PipelineError> {
        let k = k.unwrap_or(self.settings.k);
        let classification = self.classify(question, session)?;
        let mut metadata = ResultMetadata {
            k,
            template_ids: classification.template_ids.clone(),
            template_version: TEMPLATE_VERSION.to_string(),
            document_template: RENDER_TEMPLATE_ID.to_string(),
            provider_mode: self.provider.mode().as_str().to_string(),
            embedder_id: self.embedder.id(),
            provider_calls: classification.provider_calls,
            warnings: classification.warnings.clone(),
        };

        let (hits, steps, answer) = if classification.class == QuestionClass::CantAnswer {
            metadata.template_ids.push(REFUSAL_TEMPLATE_ID.to_string());
            (Vec::new(), Vec::new(), self.refusal())
        } else {
            let hits = self.localize(question, classification.class, k)?;
            let generated = self.generate(question, classification.class, &hits, session)?;
            metadata.template_ids.extend(generated.template_ids);
            metadata.provider_calls += generated.provider_calls;
            metadata.warnings.extend(generated.warnings);
            (hits, generated.steps, generated.answer)
        };

        session.record(question, &answer);
        Ok(ExplanationResult {
            question: question.to_string(),
            class: classification.class,
            hits,
            steps,
            answer,
            metadata,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{vera_model, WORKING_EXAMPLE_QUESTION};
    use crate::gateway::MockProvider;
    use crate::retrieval::{document_text, HashingEmbedder};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    fn engine() -> Engine {
        Engine::mock(vera_model()).unwrap()
    }

    /// Wraps the mock and records every prompt it sees.
    struct Recording {
        inner: MockProvider,
        prompts: Mutex<Vec<String>>,
        fail_after: Option<usize>,
        calls: AtomicUsize,
    }

    impl Recording {
        fn new(fail_after: Option<usize>, budget: usize) -> Self {
            Self { inner: MockProvider::new(budget), prompts: Mutex::new(Vec::new()), fail_after, calls: AtomicUsize::new(0) }
        }
    }

    impl CompletionProvider for Recording {
        fn mode(&self) -> ProviderMode {
            ProviderMode::Mock
        }
        fn prompt_budget(&self) -> usize {
            self.inner.prompt_budget()
        }
        fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            self.prompts.lock().unwrap().push(request.prompt.clone());
            if self.fail_after.is_some_and(|f| n >= f) {
                return Err(ProviderError::ProviderUnavailable("down".into()));
            }
            self.inner.complete(request)
        }
    }

    fn engine_with(provider: Arc<dyn CompletionProvider>) -> Engine {
        Engine::new(vera_model(), provider, Arc::new(HashingEmbedder::default()), EngineSettings::default()).unwrap()
    }

    #[test]
    fn working_example_structure() {
        let e = engine();
        let r = e.ask(WORKING_EXAMPLE_QUESTION, &mut Session::new("s"), None).unwrap();
        assert_eq!(r.class, QuestionClass::Multimodels);
        assert_eq!(r.hits.len(), 4);
        assert_eq!(r.steps.len(), 4);
        assert_eq!(r.metadata.k, 4);
        assert_eq!(r.metadata.provider_calls, 4);
        assert!(r.metadata.template_ids.contains(&"multi_models_answer_prompt".to_string()));
        for hit in &r.hits {
            assert!(r.answer.contains(e.hit_title(hit)), "{} missing from {}", e.hit_title(hit), r.answer);
        }
        assert_eq!(r.answer, *r.steps.last().unwrap());
    }

    #[test]
    fn mmodel_hits_exclude_knowledge() {
        let e = engine();
        let r = e.ask("How do you run simulation?", &mut Session::new("s"), None).unwrap();
        assert_eq!(r.class, QuestionClass::Mmodel);
        assert_eq!(r.hits.len(), 4);
        assert!(r.hits.iter().all(|h| h.kind != ElementKind::Knowledge));
        assert!(r.metadata.template_ids.contains(&"cot_method_prompt".to_string()));
    }

    #[test]
    fn mmodel_prompt_carries_method_steps() {
        let rec = Arc::new(Recording::new(None, 4096));
        let e = engine_with(rec.clone());
        e.ask("How do you run simulation?", &mut Session::new("s"), None).unwrap();
        let prompts = rec.prompts.lock().unwrap();
        let steps = blocks::extract(&prompts[0], blocks::METHOD_STEPS).unwrap();
        assert!(steps.contains("Method: run simulation"), "{steps}");
        assert!(steps.contains("2. Advance one step [when: agents placed]"));
        assert!(blocks::extract(&prompts[1], blocks::METHOD_STEPS).is_none());
    }

    #[test]
    fn multimodels_prompt_has_guideline_and_no_steps() {
        let rec = Arc::new(Recording::new(None, 4096));
        let e = engine_with(rec.clone());
        e.ask(WORKING_EXAMPLE_QUESTION, &mut Session::new("s"), None).unwrap();
        let prompts = rec.prompts.lock().unwrap();
        assert_eq!(prompts.len(), 4);
        assert!(prompts[0].contains(&format!("Please treat each {WORKING_EXAMPLE_QUESTION} as completely new")));
        assert!(blocks::extract(&prompts[0], blocks::METHOD_STEPS).is_none());
        for p in &prompts[1..] {
            assert!(blocks::extract(p, blocks::EXISTING_ANSWER).is_some());
            assert_eq!(blocks::documents(blocks::extract(p, blocks::CONTEXT).unwrap()).len(), 1);
        }
    }

    #[test]
    fn cant_answer_short_circuits() {
        let rec = Arc::new(Recording::new(None, 4096));
        let e = engine_with(rec.clone());
        let r = e.ask("What is the capital of France?", &mut Session::new("s"), None).unwrap();
        assert_eq!(r.class, QuestionClass::CantAnswer);
        assert!(r.hits.is_empty() && r.steps.is_empty());
        assert_eq!(r.answer, e.refusal());
        assert!(r.answer.contains("questions related to functionality of VERA"));
        assert_eq!(rec.calls.load(Ordering::SeqCst), 0);
        assert_eq!(r.metadata.provider_calls, 0);
    }

    #[test]
    fn repeated_question_is_stable() {
        let e = engine();
        let mut s = Session::new("s");
        let a = e.ask(WORKING_EXAMPLE_QUESTION, &mut s, None).unwrap();
        let b = e.ask(WORKING_EXAMPLE_QUESTION, &mut s, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(s.history().len(), 2);
    }

    #[test]
    fn k_override_and_corpus_cap() {
        let e = engine();
        let r = e.ask(WORKING_EXAMPLE_QUESTION, &mut Session::new("s"), Some(1)).unwrap();
        assert_eq!((r.hits.len(), r.steps.len()), (1, 1));
        assert_eq!(r.answer, r.steps[0]);
        let r = e.ask("How do you run simulation?", &mut Session::new("s"), Some(50)).unwrap();
        assert_eq!(r.hits.len(), 9);
        assert!(matches!(
            e.ask(WORKING_EXAMPLE_QUESTION, &mut Session::new("s"), Some(0)),
            Err(PipelineError::Localize(RetrievalError::InvalidK))
        ));
    }

    #[test]
    fn localize_self_match() {
        let e = engine();
        let doc = e.document(ElementKind::Knowledge, "c_asktmk").unwrap().clone();
        let hits = e.localize(&document_text(&doc), QuestionClass::Multimodels, 1).unwrap();
        assert_eq!(hits[0].element_id, "c_asktmk");
        assert!((hits[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_document_corpus() {
        let json = r#"{"agent_name":"Solo","version":"1","tasks":[{"id":"t","name":"Greet","description":"Say hello.","givens":[],"makes":[],"subtasks":[],"by_methods":[],"top_level":true}],"methods":[],"knowledge":[]}"#;
        let e = Engine::mock(crate::tmk::parse_model(json.as_bytes()).unwrap()).unwrap();
        let r = e.ask("Why does Solo greet?", &mut Session::new("s"), None).unwrap();
        assert_eq!(r.hits.len(), 1);
        assert_eq!(r.steps.len(), 1);
        assert_eq!(r.answer, r.steps[0]);
        assert_eq!(r.answer, "Based on: Greet. Say hello.");
    }

    #[test]
    fn provider_failure_keeps_partial_steps() {
        let e = engine_with(Arc::new(Recording::new(Some(2), 4096)));
        match e.ask(WORKING_EXAMPLE_QUESTION, &mut Session::new("s"), None) {
            Err(PipelineError::Generate { source, partial_steps }) => {
                assert_eq!(source.code(), "PROVIDER_UNAVAILABLE");
                assert_eq!(partial_steps.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn over_budget_prompts_are_truncated() {
        // Budget a little under the largest prompt of an unconstrained run.
        let q = "How do you run simulation?";
        let free = Arc::new(Recording::new(None, 100_000));
        engine_with(free.clone()).ask(q, &mut Session::new("s"), None).unwrap();
        let largest = free.prompts.lock().unwrap().iter().map(|p| approx_tokens(p)).max().unwrap();
        let budget = largest - 30;
        let rec = Arc::new(Recording::new(None, budget));
        let e = engine_with(rec.clone());
        let r = e.ask(q, &mut Session::new("s"), None).unwrap();
        assert_eq!(r.steps.len(), 4);
        assert!(!r.metadata.warnings.is_empty(), "expected truncation warnings");
        for p in rec.prompts.lock().unwrap().iter() {
            assert!(approx_tokens(p) <= budget);
        }
    }

    #[test]
    fn empty_question() {
        let e = engine();
        assert_eq!(e.ask("  ", &mut Session::new("s"), None), Err(PipelineError::EmptyQuestion));
        assert_eq!(PipelineError::EmptyQuestion.stage(), Stage::Classify);
    }

    #[test]
    fn generate_preconditions() {
        let e = engine();
        let s = Session::new("s");
        assert!(matches!(e.generate("q", QuestionClass::Multimodels, &[], &s), Err(PipelineError::InvalidInput(_))));
        assert!(matches!(e.generate("q", QuestionClass::CantAnswer, &[], &s), Err(PipelineError::InvalidInput(_))));
    }

    #[test]
    fn invalid_model_rejected() {
        let mut m = vera_model();
        m.tasks[0].givens.push("nope".into());
        assert!(matches!(Engine::mock(m), Err(EngineError::InvalidModel(_))));
    }
}
