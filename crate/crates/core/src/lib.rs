//! Self-explanation engine for interactive agents.
//!
//! Given a Task-Method-Knowledge (TMK) model of an agent, the engine answers
//! questions about how the agent works with a three-stage pipeline
//! (classify, localize, generate) and builds derivational traces over the
//! task/method hierarchy.

pub mod config;
pub mod eval;
pub mod fixtures;
pub mod gateway;
pub mod net;
pub mod pipeline;
pub mod retrieval;
pub mod service;
pub mod tmk;
pub mod trace;

pub use config::EngineConfig;
pub use pipeline::{Engine, ExplanationResult, QuestionClass, Session};
pub use tmk::{parse_model, validate, TmkModel};
