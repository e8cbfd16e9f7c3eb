//! Command-line pipeline: config loading and one function per subcommand.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::concept_graph::{self, ConceptGraph, GraphError, SnapshotStatus};
use crate::corpus::{self, CorpusError, Label, Sample};
use crate::evaluation::{self, EvalError};
use crate::llm_gateway::{
    Gateway, GatewayError, HttpBackend, MockBackend, MockScript, ModelSettings, ResponseCache, RetryPolicy,
    DEFAULT_MAX_ATTEMPTS, DEFAULT_MAX_IN_FLIGHT,
};
use crate::path_metric::{RelationTemplates, TemplateError};
use crate::pattern::{self, PatternAssignment, PatternCache, PatternError};
use crate::reasoner::{self, Demonstration, Verdict};
use crate::retrieval::{self, CorpusIndex, Resources, Retrieval, RetrievalConfig, RetrievalError};
use crate::syntax_metric::{LabelWeights, SyntaxError};

pub const GRAPH_SNAPSHOT_FILE: &str = "graph.snapshot.json";
pub const RESPONSE_CACHE_FILE: &str = "responses.jsonl";
pub const PATTERN_CACHE_FILE: &str = "patterns.jsonl";
pub const TRACE_FILE: &str = "retrieval_trace.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_FILE: &str = "eval_report.json";

#[derive(Debug, Parser)]
#[command(name = "eci-retrieval", version, about = "Structural example retrieval for event causality identification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the concept graph from the assertion dump and snapshot it.
    BuildGraph(CommonArgs),
    /// Assign causal patterns to every corpus sample.
    ExtractPatterns(CommonArgs),
    /// Retrieve demonstrations for every query and write the trace.
    Retrieve(CommonArgs),
    /// Retrieve and ask the model for a verdict on every query.
    Infer(CommonArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Pipeline config file (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override retrieval.k_top.
    #[arg(long)]
    pub k_top: Option<usize>,
    /// Worker threads for scoring and extraction.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Use the scripted mock backend from this file.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Override paths.output_dir.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Predictions JSONL; defaults to the output directory's predictions file.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Labeled samples JSONL; defaults to paths.queries.
    #[arg(long)]
    pub gold: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Gateway(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Gateway(_) => 3,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        data(e)
    }
}
impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        data(e)
    }
}
impl From<TemplateError> for CliError {
    fn from(e: TemplateError) -> Self {
        data(e)
    }
}
impl From<SyntaxError> for CliError {
    fn from(e: SyntaxError) -> Self {
        data(e)
    }
}
impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        data(e)
    }
}
impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Config(m) => CliError::Config(m),
            GatewayError::Cache { .. } => data(e),
            other => CliError::Gateway(other.to_string()),
        }
    }
}
impl From<PatternError> for CliError {
    fn from(e: PatternError) -> Self {
        match e {
            PatternError::Gateway { .. } => CliError::Gateway(e.to_string()),
            other => data(other),
        }
    }
}
impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Config(m) => CliError::Config(m),
            other => data(other),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathsSection {
    corpus: Option<PathBuf>,
    queries: Option<PathBuf>,
    parses: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    conceptnet: Option<PathBuf>,
    relation_templates: Option<PathBuf>,
    label_weights: Option<PathBuf>,
    graph_snapshot: Option<PathBuf>,
    response_cache: Option<PathBuf>,
    pattern_cache: Option<PathBuf>,
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySettings {
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub max_attempts: u32,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub api_key_env: String,
    pub mock_script: Option<PathBuf>,
    /// Base backoff delay; tests shorten it.
    pub retry_base_ms: u64,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: "gpt-4o-mini".into(),
            temperature: 0.0,
            max_tokens: None,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            timeout_secs: 120,
            api_key_env: "OPENAI_API_KEY".into(),
            mock_script: None,
            retry_base_ms: 500,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    paths: PathsSection,
    #[serde(default)]
    retrieval: RetrievalConfig,
    #[serde(default)]
    gateway: GatewaySettings,
}

/// Resolved pipeline configuration. Relative paths are taken from the
/// config file's directory.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub parses: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub conceptnet: Option<PathBuf>,
    pub relation_templates: Option<PathBuf>,
    pub label_weights: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub graph_snapshot: PathBuf,
    pub response_cache: PathBuf,
    pub pattern_cache: PathBuf,
    pub retrieval: RetrievalConfig,
    pub gateway: GatewaySettings,
    pub jobs: Option<usize>,
}

impl PipelineConfig {
    pub fn load(args: &CommonArgs) -> Result<Self, CliError> {
        let text = fs::read_to_string(&args.config)
            .map_err(|e| CliError::Config(format!("config {}: {e}", args.config.display())))?;
        let base = args.config.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::from_toml(&text, &base, args)
    }

    pub fn from_toml(text: &str, base: &Path, args: &CommonArgs) -> Result<Self, CliError> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config {}: {e}", args.config.display())))?;
        let abs = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let p = file.paths;
        let output_dir = match &args.output_dir {
            Some(dir) => dir.clone(),
            None => abs(p.output_dir.unwrap_or_else(|| PathBuf::from("out"))),
        };
        let in_out = |given: Option<PathBuf>, name: &str| given.map(abs).unwrap_or_else(|| output_dir.join(name));
        let mut retrieval = file.retrieval;
        if let Some(k) = args.k_top {
            retrieval.k_top = k;
        }
        let mut gateway = file.gateway;
        gateway.mock_script = args.mock_script.clone().or(gateway.mock_script.map(abs));
        if args.jobs == Some(0) {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        let cfg = Self {
            corpus: p.corpus.map(abs),
            queries: p.queries.map(abs),
            parses: p.parses.map(abs),
            embeddings: p.embeddings.map(abs),
            conceptnet: p.conceptnet.map(abs),
            relation_templates: p.relation_templates.map(abs),
            label_weights: p.label_weights.map(abs),
            graph_snapshot: in_out(p.graph_snapshot, GRAPH_SNAPSHOT_FILE),
            response_cache: in_out(p.response_cache, RESPONSE_CACHE_FILE),
            pattern_cache: in_out(p.pattern_cache, PATTERN_CACHE_FILE),
            output_dir,
            retrieval,
            gateway,
            jobs: args.jobs,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.retrieval.validate()?;
        let inputs = [
            ("paths.corpus", &self.corpus),
            ("paths.queries", &self.queries),
            ("paths.parses", &self.parses),
            ("paths.embeddings", &self.embeddings),
            ("paths.conceptnet", &self.conceptnet),
            ("paths.relation_templates", &self.relation_templates),
            ("paths.label_weights", &self.label_weights),
            ("gateway.mock_script", &self.gateway.mock_script),
        ];
        for (key, path) in inputs {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(CliError::Config(format!("{key}: {} does not exist", path.display())));
                }
            }
        }
        if self.gateway.max_attempts == 0 || self.gateway.max_in_flight == 0 {
            return Err(CliError::Config("gateway.max_attempts and gateway.max_in_flight must be positive".into()));
        }
        Ok(())
    }

    fn require<'a>(&self, key: &str, path: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
        path.as_deref()
            .ok_or_else(|| CliError::Config(format!("{key} is required for this command")))
    }

    pub fn model_settings(&self) -> ModelSettings {
        ModelSettings {
            model: self.gateway.model.clone(),
            temperature: self.gateway.temperature,
            max_tokens: self.gateway.max_tokens,
        }
    }

    pub fn gateway(&self) -> Result<Gateway, CliError> {
        let g = &self.gateway;
        let backend: Box<dyn crate::llm_gateway::Backend> = match (&g.mock_script, &g.endpoint) {
            (Some(script), _) => Box::new(MockBackend::new(MockScript::load(script)?)),
            (None, Some(endpoint)) => {
                let key = std::env::var(&g.api_key_env).ok();
                Box::new(HttpBackend::new(endpoint, key, Duration::from_secs(g.timeout_secs))?)
            }
            (None, None) => {
                return Err(CliError::Config(
                    "no backend configured: set gateway.endpoint or gateway.mock_script (or pass --mock-script)".into(),
                ))
            }
        };
        let cache = ResponseCache::open(&self.response_cache)?;
        Ok(Gateway::new(backend)
            .with_cache(cache)
            .with_max_in_flight(g.max_in_flight)
            .with_retry(RetryPolicy {
                max_attempts: g.max_attempts,
                base_delay: Duration::from_millis(g.retry_base_ms),
                ..RetryPolicy::default()
            }))
    }
}

/// What a subcommand printed and how many backend requests it made.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub stdout: String,
    pub backend_calls: usize,
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    let common = match &cli.command {
        Command::BuildGraph(a) | Command::ExtractPatterns(a) | Command::Retrieve(a) | Command::Infer(a) => a,
        Command::Eval(a) => &a.common,
    };
    let cfg = PipelineConfig::load(common)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::BuildGraph(_) => cmd_build_graph(&cfg),
        Command::ExtractPatterns(_) => cmd_extract_patterns(&cfg),
        Command::Retrieve(_) => cmd_retrieve(&cfg),
        Command::Infer(_) => cmd_infer(&cfg),
        Command::Eval(a) => cmd_eval(&cfg, a.predictions.as_deref(), a.gold.as_deref()),
    })
}

fn load_graph(cfg: &PipelineConfig, out: &mut String) -> Result<ConceptGraph, CliError> {
    let dump = cfg.require("paths.conceptnet", &cfg.conceptnet)?;
    let (graph, stats, status) = concept_graph::load_or_build(dump, &cfg.graph_snapshot)?;
    let status = match status {
        SnapshotStatus::Hit => "snapshot cache hit",
        SnapshotStatus::Rebuilt => "snapshot rebuilt",
    };
    let _ = writeln!(
        out,
        "{} nodes, {} edges ({status}; {} rows, {} skipped non-English, {} malformed)",
        graph.node_count(),
        graph.edge_count(),
        stats.rows,
        stats.skipped_language,
        stats.skipped_malformed
    );
    Ok(graph)
}

pub fn cmd_build_graph(cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let mut stdout = String::new();
    load_graph(cfg, &mut stdout)?;
    Ok(Outcome {
        stdout,
        backend_calls: 0,
    })
}

fn load_labeled_corpus(cfg: &PipelineConfig) -> Result<Vec<Sample>, CliError> {
    let corpus = corpus::load_corpus(cfg.require("paths.corpus", &cfg.corpus)?)?;
    for s in &corpus {
        s.validate()?;
    }
    Ok(corpus)
}

fn assign(cfg: &PipelineConfig, corpus: &[Sample], gateway: &Gateway) -> Result<PatternAssignment, CliError> {
    let cache = PatternCache::open(&cfg.pattern_cache)?;
    Ok(pattern::assign_patterns(corpus, gateway, &cfg.model_settings(), &cache)?)
}

pub fn cmd_extract_patterns(cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let corpus = load_labeled_corpus(cfg)?;
    let gateway = cfg.gateway()?;
    let assignment = assign(cfg, &corpus, &gateway)?;
    let mut stdout = String::new();
    for (p, n) in pattern::histogram(&assignment) {
        let _ = writeln!(stdout, "{:<12}{n:>6}", p.as_str());
    }
    let _ = writeln!(stdout, "backend calls: {}", gateway.backend_calls());
    Ok(Outcome {
        stdout,
        backend_calls: gateway.backend_calls(),
    })
}

struct Pipeline {
    corpus: Vec<Sample>,
    queries: Vec<Sample>,
    graph: ConceptGraph,
    embeddings: corpus::EmbeddingStore,
    parses: corpus::ParseStore,
    templates: RelationTemplates,
    weights: LabelWeights,
    gateway: Gateway,
    assignment: PatternAssignment,
    stdout: String,
}

impl Pipeline {
    fn load(cfg: &PipelineConfig) -> Result<Self, CliError> {
        let mut stdout = String::new();
        let corpus = load_labeled_corpus(cfg)?;
        let mut queries = corpus::load_corpus(cfg.require("paths.queries", &cfg.queries)?)?;
        for q in &queries {
            q.validate()?;
        }
        queries.sort_by(|a, b| a.id.cmp(&b.id));
        let graph = load_graph(cfg, &mut stdout)?;
        let embeddings = corpus::load_embeddings(cfg.require("paths.embeddings", &cfg.embeddings)?)?;
        let parses = corpus::load_parses(cfg.require("paths.parses", &cfg.parses)?)?;
        let templates = match &cfg.relation_templates {
            Some(p) => RelationTemplates::load(p)?,
            None => RelationTemplates::default(),
        };
        let weights = match &cfg.label_weights {
            Some(p) => LabelWeights::load(p)?,
            None => LabelWeights::default(),
        };
        let gateway = cfg.gateway()?;
        let assignment = assign(cfg, &corpus, &gateway)?;
        Ok(Self {
            corpus,
            queries,
            graph,
            embeddings,
            parses,
            templates,
            weights,
            gateway,
            assignment,
            stdout,
        })
    }

    fn resources(&self) -> Resources<'_> {
        Resources {
            graph: &self.graph,
            embeddings: &self.embeddings,
            parses: &self.parses,
            templates: &self.templates,
            weights: &self.weights,
        }
    }

    /// Retrieval for every query, in query id order.
    fn retrieve_all(&self, cfg: &PipelineConfig, index: &CorpusIndex<'_>) -> Result<Vec<Retrieval>, CliError> {
        let res = self.resources();
        let settings = cfg.model_settings();
        self.queries
            .par_iter()
            .map(|q| {
                let qp = pattern::query_pattern(q, &self.gateway, &settings)
                    .map_err(|e| CliError::Gateway(format!("query {}: {e}", q.id)))?;
                Ok(retrieval::retrieve(q, qp, index, &res, &cfg.retrieval)?)
            })
            .collect()
    }
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<(), CliError> {
    let mut text = String::new();
    for line in lines {
        text.push_str(&line);
        text.push('\n');
    }
    crate::write_atomic(path, text.as_bytes()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn cmd_retrieve(cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let p = Pipeline::load(cfg)?;
    let res = p.resources();
    let index = CorpusIndex::build(&p.corpus, &p.assignment, &res, &cfg.retrieval)?;
    let results = p.retrieve_all(cfg, &index)?;
    let trace = cfg.output_dir.join(TRACE_FILE);
    write_lines(&trace, results.iter().map(|r| r.trace_line(cfg.retrieval.k_top)))?;
    let mut stdout = p.stdout.clone();
    let fallbacks = results
        .iter()
        .filter(|r| r.selection.fallback != Default::default())
        .count();
    let _ = writeln!(
        stdout,
        "{} queries retrieved, {fallbacks} with fallback; trace written to {}",
        results.len(),
        trace.display()
    );
    let _ = writeln!(stdout, "backend calls: {}", p.gateway.backend_calls());
    Ok(Outcome {
        stdout,
        backend_calls: p.gateway.backend_calls(),
    })
}

pub fn cmd_infer(cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let p = Pipeline::load(cfg)?;
    let res = p.resources();
    let index = CorpusIndex::build(&p.corpus, &p.assignment, &res, &cfg.retrieval)?;
    let results = p.retrieve_all(cfg, &index)?;
    let settings = cfg.model_settings();
    let verdicts: Vec<Verdict> = p
        .queries
        .par_iter()
        .zip(&results)
        .map(|(q, r)| {
            let demos: Vec<Demonstration<'_>> = r
                .selection
                .examples
                .iter()
                .map(|c| Demonstration {
                    sample: index.sample(c.index),
                    label: c.label,
                })
                .collect();
            reasoner::infer(q, &demos, r.selection.ids(), &p.gateway, &settings)
                .map_err(|e| CliError::Gateway(format!("query {}: {e}", q.id)))
        })
        .collect::<Result<_, _>>()?;
    write_lines(
        &cfg.output_dir.join(TRACE_FILE),
        results.iter().map(|r| r.trace_line(cfg.retrieval.k_top)),
    )?;
    let predictions = cfg.output_dir.join(PREDICTIONS_FILE);
    write_lines(&predictions, verdicts.iter().map(Verdict::to_json_line))?;
    let mut stdout = p.stdout.clone();
    let yes = verdicts.iter().filter(|v| v.answer == Label::Yes).count();
    let _ = writeln!(
        stdout,
        "{} predictions ({yes} Yes, {} No) written to {}",
        verdicts.len(),
        verdicts.len() - yes,
        predictions.display()
    );
    let _ = writeln!(stdout, "backend calls: {}", p.gateway.backend_calls());
    Ok(Outcome {
        stdout,
        backend_calls: p.gateway.backend_calls(),
    })
}

pub fn load_predictions(path: &Path) -> Result<Vec<Verdict>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn cmd_eval(cfg: &PipelineConfig, predictions: Option<&Path>, gold: Option<&Path>) -> Result<Outcome, CliError> {
    let predictions = predictions
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join(PREDICTIONS_FILE));
    let gold = match gold {
        Some(g) => g,
        None => cfg.require("paths.queries", &cfg.queries)?,
    };
    let verdicts = load_predictions(&predictions)?;
    let gold = corpus::load_corpus(gold)?;
    let report = evaluation::evaluate(verdicts.iter().map(|v| (v.id.as_str(), v.answer)), &gold)?;
    crate::write_atomic(&cfg.output_dir.join(REPORT_FILE), report.to_json().as_bytes())
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(Outcome {
        stdout: report.table(),
        backend_calls: 0,
    })
}
