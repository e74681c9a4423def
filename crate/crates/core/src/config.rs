//! Engine configuration. Sources, strongest first: command-line flags,
//! environment variables, a TOML file, built-in defaults.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{provider_from_config, ProviderConfig, ProviderMode, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE};
use crate::pipeline::{Engine, EngineError, EngineSettings, DEFAULT_K, DEFAULT_SESSION_BOUND};
use crate::retrieval::{Embedder, HashingEmbedder, RemoteEmbedder, DEFAULT_DIMENSION};
use crate::tmk::{parse_model, ParseError, TmkModel};

pub const DEFAULT_PORT: u16 = 8080;

pub const ENV_PROVIDER_MODE: &str = "ASKTMK_PROVIDER_MODE";
pub const ENV_ENDPOINT: &str = "ASKTMK_ENDPOINT";
pub const ENV_API_KEY: &str = "ASKTMK_API_KEY";
pub const ENV_K: &str = "ASKTMK_K";
pub const ENV_PORT: &str = "ASKTMK_PORT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Hashing,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dimension: usize,
    /// Embeddings URL, remote kind only.
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self { kind: EmbedderKind::Hashing, dimension: DEFAULT_DIMENSION, endpoint: None, model_name: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub model_path: Option<PathBuf>,
    pub k: usize,
    pub max_tokens: u32,
    pub temperature: f64,
    pub provider: ProviderConfig,
    pub embedder: EmbedderConfig,
    pub session_bound: usize,
    pub port: u16,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            model_path: None,
            k: DEFAULT_K,
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            provider: ProviderConfig::default(),
            embedder: EmbedderConfig::default(),
            session_bound: DEFAULT_SESSION_BOUND,
            port: DEFAULT_PORT,
        }
    }
}

/// Values given on the command line. `None` leaves the lower layers alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub model_path: Option<PathBuf>,
    pub mode: Option<ProviderMode>,
    pub endpoint: Option<String>,
    pub k: Option<usize>,
    pub port: Option<u16>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("bad config file {path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("bad value for {name}: {message}")]
    Env { name: &'static str, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("no model path configured")]
    NoModel,
    #[error("model: {0}")]
    Model(#[from] ParseError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Read { .. } => "IO_ERROR",
            ConfigError::File { .. } | ConfigError::Env { .. } | ConfigError::Invalid(_) | ConfigError::NoModel => {
                "INVALID_CONFIG"
            }
            ConfigError::Model(e) => e.code(),
            ConfigError::Engine(e) => e.code(),
        }
    }
}

fn env_parse<T: std::str::FromStr>(name: &'static str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::Env { name, message: e.to_string() })
}

impl EngineConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::File { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_toml(&text, path)
    }

    /// Applies environment variables read through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = var(ENV_PROVIDER_MODE) {
            self.provider.mode = v
                .trim()
                .parse()
                .map_err(|message| ConfigError::Env { name: ENV_PROVIDER_MODE, message })?;
        }
        if let Some(v) = var(ENV_ENDPOINT) {
            self.provider.endpoint = Some(v.trim().to_string());
        }
        if var(ENV_API_KEY).is_some() {
            self.provider.auth = Some(ENV_API_KEY.to_string());
        }
        if let Some(v) = var(ENV_K) {
            self.k = env_parse(ENV_K, &v)?;
        }
        if let Some(v) = var(ENV_PORT) {
            self.port = env_parse(ENV_PORT, &v)?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(p) = &o.model_path {
            self.model_path = Some(p.clone());
        }
        if let Some(m) = o.mode {
            self.provider.mode = m;
        }
        if let Some(e) = &o.endpoint {
            self.provider.endpoint = Some(e.clone());
        }
        if let Some(k) = o.k {
            self.k = k;
        }
        if let Some(p) = o.port {
            self.port = p;
        }
    }

    /// Defaults, then `file`, then the process environment, then `overrides`.
    pub fn load(file: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        Self::load_with(file, |name| std::env::var(name).ok(), overrides)
    }

    pub fn load_with(
        file: Option<&Path>,
        var: impl Fn(&str) -> Option<String>,
        overrides: &Overrides,
    ) -> Result<Self, ConfigError> {
        let mut config = match file {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        config.apply_env(var)?;
        config.apply_overrides(overrides);
        config.check()?;
        Ok(config)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be at least 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(ConfigError::Invalid("max_tokens must be positive".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ConfigError::Invalid("temperature must be a non-negative number".into()));
        }
        if self.session_bound == 0 {
            return Err(ConfigError::Invalid("session_bound must be positive".into()));
        }
        if self.embedder.dimension == 0 {
            return Err(ConfigError::Invalid("embedder dimension must be positive".into()));
        }
        if self.embedder.kind == EmbedderKind::Remote && self.embedder.endpoint.is_none() {
            return Err(ConfigError::Invalid("remote embedder requires an endpoint".into()));
        }
        self.provider.check().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn settings(&self) -> EngineSettings {
        EngineSettings {
            k: self.k,
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            session_bound: self.session_bound,
        }
    }

    pub fn build_embedder(&self) -> Arc<dyn Embedder> {
        match self.embedder.kind {
            EmbedderKind::Hashing => Arc::new(HashingEmbedder::new(self.embedder.dimension)),
            EmbedderKind::Remote => Arc::new(RemoteEmbedder {
                endpoint: self.embedder.endpoint.clone().unwrap_or_default(),
                model_name: self.embedder.model_name.clone().unwrap_or_else(|| "text-embedding-ada-002".into()),
                api_key: self.provider.auth.as_deref().and_then(|v| std::env::var(v).ok()),
                dimension: self.embedder.dimension,
                timeout: Duration::from_secs(self.provider.timeout_secs),
            }),
        }
    }

    pub fn load_model(&self) -> Result<TmkModel, ConfigError> {
        let path = self.model_path.as_deref().ok_or(ConfigError::NoModel)?;
        let bytes =
            std::fs::read(path).map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
        Ok(parse_model(&bytes)?)
    }

    pub fn build_engine(&self, model: TmkModel) -> Result<Engine, ConfigError> {
        self.check()?;
        let provider = provider_from_config(&self.provider).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Engine::new(model, provider, self.build_embedder(), self.settings())?)
    }
}
