use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use asktmk::config::{ConfigError, EngineConfig, Overrides};
use asktmk::eval::{self, aggregate, apply_ratings, render_table};
use asktmk::fixtures;
use asktmk::gateway::ProviderMode;
use asktmk::pipeline::{Engine, Session};
use asktmk::retrieval::build_index;
use asktmk::service;
use asktmk::tmk::{parse_model, render_documents, validate, ElementKind, TmkModel};
use asktmk::trace::{derive_trace, explain_trace_with, to_outline, Selectors, DEFAULT_STEP_BOUND};

// Writes to stdout, ignoring a closed pipe (`asktmk ... | head`).
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "asktmk", version, about = "Answer questions about an agent from its TMK model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file and list every problem found.
    Validate { model: PathBuf },
    /// Embed every element and print the index dump.
    Index {
        #[command(flatten)]
        engine: EngineArgs,
        /// Element kinds to include (task, method, knowledge).
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<ElementKind>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer one question.
    Ask {
        #[command(flatten)]
        engine: EngineArgs,
        /// Print the full result as JSON.
        #[arg(long)]
        json: bool,
        question: String,
    },
    /// Walk a task symbolically and print the trace.
    Trace {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long)]
        task: String,
        /// Instance binding `concept=value`.
        #[arg(long = "bind", value_parser = parse_pair)]
        bindings: Vec<(String, String)>,
        /// Method choice `task=method`.
        #[arg(long = "method", value_parser = parse_pair)]
        methods: Vec<(String, String)>,
        /// Transition choice `state=label` or `method/state=label`.
        #[arg(long = "path", value_parser = parse_pair)]
        paths: Vec<(String, String)>,
        #[arg(long, default_value_t = DEFAULT_STEP_BOUND)]
        step_bound: usize,
        #[arg(long)]
        json: bool,
        /// Also explain the trace in answer to this question.
        #[arg(long)]
        question: Option<String>,
    },
    /// Question-bank evaluation.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the HTTP service.
    Serve {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Answer every bank question, attach ratings if given, write outputs.
    Run {
        #[command(flatten)]
        engine: EngineArgs,
        /// Bank file; the bundled bank when omitted.
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        ratings: Option<PathBuf>,
        /// Output directory for records.jsonl, report.json and report.txt.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Aggregate rated records written by `eval run`.
    Report {
        /// records.jsonl, or the directory holding it.
        records: PathBuf,
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct EngineArgs {
    /// Model file; the bundled VERA model when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the offline mock provider.
    #[arg(long, conflicts_with = "endpoint")]
    mock: bool,
    /// Chat-completions endpoint; implies remote mode.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    port: Option<u16>,
}

struct CliError {
    code: String,
    message: String,
    /// Printed to stdout before the error line.
    details: Option<String>,
}

impl CliError {
    fn new(code: &str, message: impl ToString) -> Self {
        Self { code: code.to_string(), message: message.to_string(), details: None }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(e.code(), e)
    }
}

impl From<eval::EvalError> for CliError {
    fn from(e: eval::EvalError) -> Self {
        CliError::new(e.code(), e)
    }
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected key=value, got `{s}`"))
}

impl EngineArgs {
    fn config(&self) -> Result<EngineConfig, CliError> {
        let overrides = Overrides {
            model_path: self.model.clone(),
            mode: if self.mock {
                Some(ProviderMode::Mock)
            } else {
                self.endpoint.as_ref().map(|_| ProviderMode::Remote)
            },
            endpoint: self.endpoint.clone(),
            k: self.k,
            port: self.port,
        };
        Ok(EngineConfig::load(self.config.as_deref(), &overrides)?)
    }

    fn model(&self, config: &EngineConfig) -> Result<TmkModel, CliError> {
        match &config.model_path {
            Some(_) => Ok(config.load_model()?),
            None => Ok(fixtures::vera_model()),
        }
    }

    fn engine(&self) -> Result<(EngineConfig, Engine), CliError> {
        let config = self.config()?;
        let model = self.model(&config)?;
        checked(&model)?;
        let engine = config.build_engine(model)?;
        Ok((config, engine))
    }
}

fn checked(model: &TmkModel) -> Result<(), CliError> {
    let report = validate(model);
    if report.ok {
        return Ok(());
    }
    let first = report.errors[0].code.as_str();
    Err(CliError {
        code: first.to_string(),
        message: format!("model failed validation with {} issue(s)", report.errors.len()),
        details: Some(report.to_string()),
    })
}

fn read_model(path: &Path) -> Result<TmkModel, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::new("IO_ERROR", format!("{}: {e}", path.display())))?;
    parse_model(&bytes).map_err(|e| CliError::new(e.code(), e))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { model } => {
            let model = read_model(&model)?;
            checked(&model)?;
            outln!("ok");
        }
        Command::Index { engine, kinds, out } => {
            let config = engine.config()?;
            let model = engine.model(&config)?;
            checked(&model)?;
            let kinds = if kinds.is_empty() { ElementKind::ALL.to_vec() } else { kinds };
            let docs = render_documents(&model, &kinds).map_err(|e| CliError::new("INVALID_INPUT", e))?;
            let index = build_index(&docs, config.build_embedder().as_ref()).map_err(|e| CliError::new(e.code(), e))?;
            match out {
                Some(path) => std::fs::write(&path, index.dump())
                    .map_err(|e| CliError::new("IO_ERROR", format!("{}: {e}", path.display())))?,
                None => out!("{}", index.dump()),
            }
        }
        Command::Ask { engine, json, question } => {
            let (_, engine) = engine.engine()?;
            let result = engine
                .ask(&question, &mut Session::ephemeral(), None)
                .map_err(|e| CliError::new(e.code(), format!("{} stage: {e}", e.stage())))?;
            if json {
                outln!("{}", serde_json::to_string_pretty(&result).expect("result serializes"));
                return Ok(());
            }
            outln!("class: {}", result.class);
            if !result.hits.is_empty() {
                outln!("hits:");
                let width = result.hits.iter().map(|h| engine.hit_title(h).chars().count()).max().unwrap_or(0);
                for h in &result.hits {
                    outln!(
                        "  {:<9} {:<width$}  {:.4}  ({:.2}%)",
                        h.kind.as_str(),
                        engine.hit_title(h),
                        h.score,
                        h.score * 100.0
                    );
                }
            }
            if !result.steps.is_empty() {
                outln!("steps:");
                for (i, s) in result.steps.iter().enumerate() {
                    outln!("  {}. {}", i + 1, s);
                }
            }
            outln!("answer: {}", result.answer);
            for w in &result.metadata.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Trace { engine, task, bindings, methods, paths, step_bound, json, question } => {
            let config = engine.config()?;
            let model = engine.model(&config)?;
            checked(&model)?;
            let selectors =
                Selectors { methods: methods.into_iter().collect(), paths: paths.into_iter().collect() };
            let bindings: BTreeMap<String, String> = bindings.into_iter().collect();
            let trace = derive_trace(&model, &task, &bindings, &selectors, step_bound)
                .map_err(|e| CliError::new(e.code(), e))?;
            if json {
                outln!("{}", trace.to_json());
            } else {
                out!("{}", to_outline(&model, &trace));
            }
            if let Some(q) = question {
                let engine = config.build_engine(model)?;
                let answer = explain_trace_with(engine.model(), &trace, &q, engine.provider())
                    .map_err(|e| CliError::new(e.code(), e))?;
                outln!("answer: {answer}");
            }
        }
        Command::Eval(EvalCommand::Run { engine, bank, ratings, report }) => {
            let (_, engine) = engine.engine()?;
            let bank = match bank {
                Some(p) => eval::load_bank_file(&p)?,
                None => eval::bundled_bank(),
            };
            let mut records = eval::run_bank(&bank, &engine);
            if let Some(p) = ratings {
                apply_ratings(&mut records, &eval::load_ratings_file(&p)?)?;
            }
            let failures = records.iter().filter(|r| r.error.is_some()).count();
            outln!("questions: {}  failures: {}", records.len(), failures);
            let aggregated = match &report {
                Some(dir) => eval::write_outputs(dir, &records)?,
                None => aggregate(&records).ok(),
            };
            if let Some(r) = aggregated {
                out!("{}", render_table(&r));
            }
            if let Some(dir) = report {
                outln!("wrote {}", dir.display());
            }
        }
        Command::Eval(EvalCommand::Report { records, ratings, json }) => {
            let path = if records.is_dir() { records.join("records.jsonl") } else { records };
            let mut records = eval::read_records(&path)?;
            if let Some(p) = ratings {
                apply_ratings(&mut records, &eval::load_ratings_file(&p)?)?;
            }
            let report = aggregate(&records)?;
            if json {
                outln!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                out!("{}", render_table(&report));
            }
        }
        Command::Serve { engine, host } => {
            let config = engine.config()?;
            if config.model_path.is_none() {
                return Err(CliError::new("INVALID_CONFIG", "serve needs --model or model_path in the config"));
            }
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
                )
                .with_writer(std::io::stderr)
                .init();
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::new("IO_ERROR", e))?;
            rt.block_on(service::serve(&config, &host)).map_err(|e| match e {
                service::ServiceError::InvalidModel(report) => CliError {
                    code: report.errors[0].code.as_str().to_string(),
                    message: "model failed validation".into(),
                    details: Some(report.to_string()),
                },
                other => CliError::new(other.code(), other),
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(d) = e.details {
                outln!("{d}");
            }
            eprintln!("error: {}: {}", e.code, e.message.lines().next().unwrap_or(""));
            ExitCode::FAILURE
        }
    }
}
