//! Pipeline orchestration: plan, run (with cache and resume), parse, compare.
//!
//! A run directory is `out_dir/<run_id>/`, where the run id is a digest of the
//! elicitation-affecting configuration (questionnaire content, schema,
//! replicates, backend identity, seed, system prompt). Raw completions are
//! appended to `raw_responses.jsonl` in plan order through a single writer;
//! workers may finish out of order but the writer holds back lines until their
//! predecessors are written, so the file is always a clean prefix of the plan
//! and a resumed run continues exactly where the file ends. Re-analysis with
//! different human data or bootstrap settings reuses the same cached
//! responses.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendConfig, BackendError, CompletionBackend, LiveBackend, PriceTable};
use crate::demographics::{build_plan, DemographicSchema, PlanError, PlanTask, SamplingPlan};
use crate::human_data::{human_cell_table, ingest_csv, IngestError, RecodeSpec};
use crate::mock::{word_count, MockBackend, MockModelError, MockOpinionModel};
use crate::parsing::{classify_batch, ParseReport, ResponseRecord};
use crate::prompting::PromptTemplate;
use crate::questionnaire::{hex_string, load_questionnaire, Questionnaire, QuestionnaireError};
use crate::report::{emit_tables, render_charts, ReportError, ReportInput, RunManifest, Source};
use crate::seed;
use crate::stats::{
    cell_summary, compare, marginalize, CellSummary, ComparisonResult, Grouping, HistogramTable,
    RhoOutcome, ScoreTable,
};

/// Assumed completion length for cost previews, in tokens. Letters produced by
/// the prompt protocol run about this long.
const ASSUMED_COMPLETION_TOKENS: u64 = 90;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("failed to read config `{path}`: {source}")]
    ConfigIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config `{path}`: {source}")]
    ConfigParse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Questionnaire(#[from] QuestionnaireError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    MockModel(#[from] MockModelError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("I/O error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no raw responses at `{0}`; run the `run` subcommand first")]
    MissingRawResponses(String),
    #[error("cache at `{path}` belongs to a different run: {detail}")]
    CacheMismatch { path: String, detail: String },
    #[error("cache at `{path}` is corrupt: {detail}")]
    CacheCorrupt { path: String, detail: String },
    #[error("cached response references unknown question `{0}`")]
    UnknownQuestionInCache(String),
    #[error("comparing requires a `human` section in the config")]
    MissingHumanSection,
}

/// Which backend a run elicits from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSection {
    /// Path to the mock opinion model JSON, relative to the config file.
    pub model: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanSection {
    /// Path to the human survey CSV, relative to the config file.
    pub csv: PathBuf,
    #[serde(default = "default_fielding_year")]
    pub fielding_year: i32,
    pub recode: RecodeSpec,
}

fn default_fielding_year() -> i32 {
    2022
}

/// Price configuration in USD per 1K tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricesSection {
    pub prompt_usd_per_1k: f64,
    pub completion_usd_per_1k: f64,
}

impl PricesSection {
    fn to_table(self) -> PriceTable {
        PriceTable {
            prompt_usd_per_token: self.prompt_usd_per_1k / 1000.0,
            completion_usd_per_token: self.completion_usd_per_1k / 1000.0,
        }
    }
}

/// Run configuration document. Input paths are interpreted relative to the
/// config file's directory; `out_dir` is relative to the working directory.
/// Credentials are never part of the config — the live backend reads them from
/// the environment variable named in its section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub questionnaire: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<DemographicSchema>,
    pub replicates: u32,
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub live: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human: Option<HumanSection>,
    #[serde(default = "default_bootstrap_reps")]
    pub bootstrap_reps: u32,
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prices: Option<PricesSection>,
}

fn default_bootstrap_reps() -> u32 {
    2000
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Default, Clone)]
pub struct CliOverrides {
    pub backend: Option<BackendKind>,
    pub replicates: Option<u32>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Loads a config file and resolves its input paths against the config
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| RunError::ConfigIo {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|source| RunError::ConfigParse {
                path: path.display().to_string(),
                source,
            })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.questionnaire);
        if let Some(mock) = &mut self.mock {
            resolve(&mut mock.model);
        }
        if let Some(human) = &mut self.human {
            resolve(&mut human.csv);
        }
    }

    pub fn apply_overrides(&mut self, overrides: &CliOverrides) {
        if let Some(backend) = overrides.backend {
            self.backend = backend;
        }
        if let Some(replicates) = overrides.replicates {
            self.replicates = replicates;
        }
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(out_dir) = &overrides.out_dir {
            self.out_dir = out_dir.clone();
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.bootstrap_reps < 1 {
            return Err(RunError::InvalidConfig(
                "bootstrap_reps must be at least 1".into(),
            ));
        }
        match self.backend {
            BackendKind::Mock if self.mock.is_none() => Err(RunError::InvalidConfig(
                "backend is \"mock\" but the config has no `mock` section".into(),
            )),
            BackendKind::Live if self.live.is_none() => Err(RunError::InvalidConfig(
                "backend is \"live\" but the config has no `live` section".into(),
            )),
            _ => Ok(()),
        }
    }

    fn price_table(&self) -> PriceTable {
        self.prices.map(PricesSection::to_table).unwrap_or_default()
    }
}

/// Cache key for one elicited response. Responses are pinned to the
/// questionnaire content, the model identity and temperature, and the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    pub questionnaire_hash: String,
    pub model: String,
    pub temperature: f64,
    pub question_id: String,
    pub cell: crate::demographics::CrosstabKey,
    pub replicate: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPayload {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u64,
    pub completion: u64,
}

/// One line of `raw_responses.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponseLine {
    pub key: CacheKey,
    pub prompt: PromptPayload,
    pub text: String,
    pub tokens: TokenCounts,
    /// Wall-clock timestamp for live responses; null for mock responses so
    /// reruns are byte-identical.
    pub timestamp: Option<String>,
    /// `"ok"`, or `"failed: <reason>"` for tasks whose retries were exhausted.
    pub status: String,
}

impl RawResponseLine {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Everything resolved and loaded once per command.
struct Prepared {
    config: RunConfig,
    questionnaire: Questionnaire,
    schema: DemographicSchema,
    template: PromptTemplate,
    plan: SamplingPlan,
    run_id: String,
    run_dir: PathBuf,
    questionnaire_hash: String,
    /// (model identity string, temperature) used in cache keys.
    model: String,
    temperature: f64,
    mock_model: Option<MockOpinionModel>,
}

fn prepare(config: &RunConfig) -> Result<Prepared, RunError> {
    config.validate()?;
    let questionnaire = load_questionnaire(&config.questionnaire)?;
    let schema = config.schema.clone().unwrap_or_default();
    schema.validate().map_err(PlanError::Schema)?;
    let plan = build_plan(&questionnaire, &schema, config.replicates)?;
    let template = match &config.system_prompt {
        Some(prompt) => PromptTemplate::with_system_prompt(prompt.clone()),
        None => PromptTemplate::default(),
    };
    let questionnaire_hash = questionnaire.content_hash();

    let (model, temperature, mock_model) = match config.backend {
        BackendKind::Mock => {
            let section = config.mock.as_ref().expect("validated");
            let mock_model = MockOpinionModel::load(&section.model, config.seed)?;
            ("mock".to_string(), 0.0, Some(mock_model))
        }
        BackendKind::Live => {
            let section = config.live.as_ref().expect("validated");
            (section.model_name.clone(), section.temperature, None)
        }
    };

    let run_id = compute_run_id(
        config,
        &questionnaire_hash,
        &schema,
        &model,
        temperature,
        mock_model.as_ref(),
    );
    let run_dir = config.out_dir.join(&run_id);

    Ok(Prepared {
        config: config.clone(),
        questionnaire,
        schema,
        template,
        plan,
        run_id,
        run_dir,
        questionnaire_hash,
        model,
        temperature,
        mock_model,
    })
}

/// Digest over the elicitation-affecting configuration. Content-based (the
/// questionnaire and mock model are hashed by content, not path), so moving
/// files around does not orphan a cache.
fn compute_run_id(
    config: &RunConfig,
    questionnaire_hash: &str,
    schema: &DemographicSchema,
    model: &str,
    temperature: f64,
    mock_model: Option<&MockOpinionModel>,
) -> String {
    let identity = serde_json::json!({
        "questionnaire_hash": questionnaire_hash,
        "schema": schema,
        "replicates": config.replicates,
        "backend": config.backend,
        "model": model,
        "temperature": temperature,
        "mock_model": mock_model,
        "seed": config.seed,
        "system_prompt": config.system_prompt,
    });
    let mut hasher = Sha256::new();
    hasher.update(identity.to_string().as_bytes());
    hex_string(&hasher.finalize())[..12].to_string()
}

fn raw_responses_path(run_dir: &Path) -> PathBuf {
    run_dir.join("raw_responses.jsonl")
}

/// Formats an integer with `,` thousands separators.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Outcome of `plan`.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub run_dir: PathBuf,
    pub cells: usize,
    pub replicates: u32,
    pub questions: usize,
    pub tasks: usize,
    pub preview_cost_usd: f64,
    pub plan_path: PathBuf,
}

impl PlanOutcome {
    pub fn summary_line(&self) -> String {
        format!(
            "{} cells × {} replicates × {} questions = {} tasks",
            self.cells,
            self.replicates,
            self.questions,
            thousands(self.tasks)
        )
    }
}

/// Builds the plan, writes it to the run directory, and previews cost.
pub fn cmd_plan(config: &RunConfig) -> Result<PlanOutcome, RunError> {
    let prepared = prepare(config)?;
    let (prompt_tokens, preview_cost) = preview_cost(&prepared);
    fs::create_dir_all(&prepared.run_dir).map_err(|source| RunError::Io {
        path: prepared.run_dir.display().to_string(),
        source,
    })?;
    let plan_path = prepared.run_dir.join("plan.json");
    let mut plan_json = serde_json::to_string(&prepared.plan).expect("plan serializes");
    plan_json.push('\n');
    fs::write(&plan_path, plan_json).map_err(|source| RunError::Io {
        path: plan_path.display().to_string(),
        source,
    })?;
    let _ = prompt_tokens;
    Ok(PlanOutcome {
        run_dir: prepared.run_dir,
        cells: prepared.schema.cell_count(),
        replicates: prepared.config.replicates,
        questions: prepared.questionnaire.questions.len(),
        tasks: prepared.plan.tasks.len(),
        preview_cost_usd: preview_cost,
        plan_path,
    })
}

/// Renders every prompt and estimates run cost at the configured prices,
/// assuming a typical completion length.
fn preview_cost(prepared: &Prepared) -> (u64, f64) {
    let prices = prepared.config.price_table();
    let mut prompt_tokens = 0u64;
    for task in &prepared.plan.tasks {
        let question = prepared
            .questionnaire
            .question(&task.question_id)
            .expect("plan tasks reference questionnaire questions");
        let ctx = prepared.template.render(question, &task.cell);
        prompt_tokens += word_count(&ctx.rendered_system) + word_count(&ctx.rendered_user);
    }
    let completion_tokens = ASSUMED_COMPLETION_TOKENS * prepared.plan.tasks.len() as u64;
    let cost = prompt_tokens as f64 * prices.prompt_usd_per_token
        + completion_tokens as f64 * prices.completion_usd_per_token;
    (prompt_tokens, cost)
}

/// Outcome of `run`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub plan_size: usize,
    pub cached: usize,
    pub executed: usize,
    pub failed: usize,
    pub cost_estimate_usd: f64,
    pub dry_run: bool,
}

impl RunOutcome {
    pub fn summary_line(&self) -> String {
        if self.dry_run {
            format!(
                "dry run: {} prompts rendered, nothing sent; estimated cost ${:.2}",
                thousands(self.plan_size),
                self.cost_estimate_usd
            )
        } else {
            format!(
                "{} tasks: {} cached, {} executed, {} failed; estimated cost ${:.2}",
                thousands(self.plan_size),
                thousands(self.cached),
                thousands(self.executed),
                self.failed,
                self.cost_estimate_usd
            )
        }
    }
}

struct CacheState {
    lines: Vec<RawResponseLine>,
    keys: HashSet<(String, String, u32)>,
    /// Byte length of the valid prefix; anything past it is a torn tail from
    /// an interrupted append.
    valid_bytes: u64,
}

fn task_key(question_id: &str, cell: &crate::demographics::CrosstabKey, replicate: u32) -> (String, String, u32) {
    (question_id.to_string(), cell.to_string(), replicate)
}

fn read_cache(path: &Path, prepared: &Prepared) -> Result<CacheState, RunError> {
    let mut state = CacheState {
        lines: Vec::new(),
        keys: HashSet::new(),
        valid_bytes: 0,
    };
    let bytes = match fs::read(path) {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(state),
        Err(source) => {
            return Err(RunError::Io {
                path: path.display().to_string(),
                source,
            })
        }
    };

    let mut offset = 0usize;
    while offset < bytes.len() {
        let newline = bytes[offset..].iter().position(|&b| b == b'\n');
        let Some(newline) = newline else {
            // No trailing newline: torn tail from an interrupted write.
            break;
        };
        let line_bytes = &bytes[offset..offset + newline];
        let line: RawResponseLine = match serde_json::from_slice(line_bytes) {
            Ok(line) => line,
            Err(e) => {
                if offset + newline + 1 >= bytes.len() {
                    // Torn final line.
                    break;
                }
                return Err(RunError::CacheCorrupt {
                    path: path.display().to_string(),
                    detail: format!("unparseable line at byte {offset}: {e}"),
                });
            }
        };
        if line.key.questionnaire_hash != prepared.questionnaire_hash
            || line.key.model != prepared.model
            || line.key.temperature != prepared.temperature
        {
            return Err(RunError::CacheMismatch {
                path: path.display().to_string(),
                detail: format!(
                    "expected (questionnaire {}, model {}, temperature {}), found (questionnaire {}, model {}, temperature {})",
                    &prepared.questionnaire_hash[..12.min(prepared.questionnaire_hash.len())],
                    prepared.model,
                    prepared.temperature,
                    &line.key.questionnaire_hash[..12.min(line.key.questionnaire_hash.len())],
                    line.key.model,
                    line.key.temperature,
                ),
            });
        }
        let key = task_key(&line.key.question_id, &line.key.cell, line.key.replicate);
        if !state.keys.insert(key) {
            return Err(RunError::CacheCorrupt {
                path: path.display().to_string(),
                detail: format!(
                    "duplicate key ({}, {}, {})",
                    line.key.question_id, line.key.cell, line.key.replicate
                ),
            });
        }
        state.lines.push(line);
        offset += newline + 1;
        state.valid_bytes = offset as u64;
    }
    Ok(state)
}

fn build_backend(prepared: &Prepared) -> Result<Box<dyn CompletionBackend>, RunError> {
    match prepared.config.backend {
        BackendKind::Mock => Ok(Box::new(MockBackend::new(
            prepared.mock_model.clone().expect("mock model loaded"),
        ))),
        BackendKind::Live => {
            let config = prepared.config.live.clone().expect("validated");
            Ok(Box::new(LiveBackend::new(config)?))
        }
    }
}

/// Executes all uncached plan tasks with bounded concurrency and appends each
/// completion to `raw_responses.jsonl` in plan order. Interruption-safe:
/// re-invocation resumes from the cache and never re-queries a cached key.
pub fn cmd_run(config: &RunConfig, dry_run: bool) -> Result<RunOutcome, RunError> {
    let prepared = prepare(config)?;
    let prices = prepared.config.price_table();

    if dry_run {
        let (_, cost) = preview_cost(&prepared);
        return Ok(RunOutcome {
            run_dir: prepared.run_dir.clone(),
            plan_size: prepared.plan.tasks.len(),
            cached: 0,
            executed: 0,
            failed: 0,
            cost_estimate_usd: cost,
            dry_run: true,
        });
    }

    fs::create_dir_all(&prepared.run_dir).map_err(|source| RunError::Io {
        path: prepared.run_dir.display().to_string(),
        source,
    })?;
    let raw_path = raw_responses_path(&prepared.run_dir);
    let cache = read_cache(&raw_path, &prepared)?;

    // Drop any torn tail so the file is exactly its valid prefix.
    if raw_path.exists() {
        let current_len = fs::metadata(&raw_path)
            .map_err(|source| RunError::Io {
                path: raw_path.display().to_string(),
                source,
            })?
            .len();
        if current_len > cache.valid_bytes {
            let file = fs::OpenOptions::new().write(true).open(&raw_path).map_err(|source| {
                RunError::Io {
                    path: raw_path.display().to_string(),
                    source,
                }
            })?;
            file.set_len(cache.valid_bytes).map_err(|source| RunError::Io {
                path: raw_path.display().to_string(),
                source,
            })?;
        }
    }

    let remaining: Vec<&PlanTask> = prepared
        .plan
        .tasks
        .iter()
        .filter(|task| !cache.keys.contains(&task_key(&task.question_id, &task.cell, task.replicate)))
        .collect();
    let cached = prepared.plan.tasks.len() - remaining.len();

    let backend = build_backend(&prepared)?;
    let workers = match prepared.config.backend {
        BackendKind::Live => prepared
            .config
            .live
            .as_ref()
            .map(|l| l.max_in_flight)
            .unwrap_or(4),
        BackendKind::Mock => 4,
    }
    .max(1) as usize;

    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&raw_path)
        .map_err(|source| RunError::Io {
            path: raw_path.display().to_string(),
            source,
        })?;
    let mut writer = BufWriter::new(file);

    let timestamp_for = |backend_id: &str| -> Option<String> {
        (backend_id == "live").then(|| chrono::Utc::now().to_rfc3339())
    };

    let next_task = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<RawResponseLine, BackendError>)>();

    let mut executed = 0usize;
    let mut failed = 0usize;
    let mut fatal: Option<BackendError> = None;

    std::thread::scope(|scope| {
        for _ in 0..workers.min(remaining.len().max(1)) {
            let tx = tx.clone();
            let next_task = &next_task;
            let stop = &stop;
            let remaining = &remaining;
            let prepared = &prepared;
            let backend = backend.as_ref();
            let timestamp_for = &timestamp_for;
            scope.spawn(move || loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let index = next_task.fetch_add(1, Ordering::Relaxed);
                if index >= remaining.len() {
                    break;
                }
                let task = remaining[index];
                let question = prepared
                    .questionnaire
                    .question(&task.question_id)
                    .expect("plan tasks reference questionnaire questions");
                let ctx = prepared.template.render(question, &task.cell);
                let key = CacheKey {
                    questionnaire_hash: prepared.questionnaire_hash.clone(),
                    model: prepared.model.clone(),
                    temperature: prepared.temperature,
                    question_id: task.question_id.clone(),
                    cell: task.cell.clone(),
                    replicate: task.replicate,
                };
                let prompt = PromptPayload {
                    system: ctx.rendered_system.clone(),
                    user: ctx.rendered_user.clone(),
                };
                let message = match backend.complete(&ctx, task.replicate) {
                    Ok(completion) => Ok(RawResponseLine {
                        key,
                        prompt,
                        text: completion.text,
                        tokens: TokenCounts {
                            prompt: completion.prompt_tokens,
                            completion: completion.completion_tokens,
                        },
                        timestamp: timestamp_for(&completion.backend_id),
                        status: "ok".to_string(),
                    }),
                    Err(error) if error.is_fatal() => Err(error),
                    Err(error) => Ok(RawResponseLine {
                        key,
                        prompt,
                        text: String::new(),
                        tokens: TokenCounts {
                            prompt: 0,
                            completion: 0,
                        },
                        timestamp: timestamp_for(backend.id()),
                        status: format!("failed: {error}"),
                    }),
                };
                if tx.send((index, message)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Single writer: holds out-of-order completions back so the file stays
        // a plan-order prefix even if the process dies mid-run.
        let mut pending: BTreeMap<usize, RawResponseLine> = BTreeMap::new();
        let mut next_write = 0usize;
        for (index, message) in rx {
            match message {
                Err(error) => {
                    fatal.get_or_insert(error);
                    stop.store(true, Ordering::Relaxed);
                }
                Ok(line) => {
                    pending.insert(index, line);
                    while let Some(line) = pending.remove(&next_write) {
                        if !line.is_ok() {
                            failed += 1;
                        }
                        let mut text =
                            serde_json::to_string(&line).expect("response line serializes");
                        text.push('\n');
                        if let Err(source) = writer
                            .write_all(text.as_bytes())
                            .and_then(|()| writer.flush())
                        {
                            fatal.get_or_insert(BackendError::InvalidConfig(format!(
                                "write to {} failed: {source}",
                                raw_path.display()
                            )));
                            stop.store(true, Ordering::Relaxed);
                            break;
                        }
                        executed += 1;
                        next_write += 1;
                    }
                }
            }
        }
    });

    if let Some(error) = fatal {
        return Err(RunError::Backend(error));
    }

    // Cost over everything now in the file (cached + new).
    let cache = read_cache(&raw_path, &prepared)?;
    let cost = cache
        .lines
        .iter()
        .map(|line| {
            line.tokens.prompt as f64 * prices.prompt_usd_per_token
                + line.tokens.completion as f64 * prices.completion_usd_per_token
        })
        .sum();

    Ok(RunOutcome {
        run_dir: prepared.run_dir.clone(),
        plan_size: prepared.plan.tasks.len(),
        cached,
        executed,
        failed,
        cost_estimate_usd: cost,
        dry_run: false,
    })
}

/// Outcome of `parse`.
#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub run_dir: PathBuf,
    pub report: ParseReport,
}

fn records_from_lines(
    lines: &[RawResponseLine],
    questionnaire: &Questionnaire,
) -> Result<Vec<ResponseRecord>, RunError> {
    lines
        .iter()
        .map(|line| {
            let question = questionnaire
                .question(&line.key.question_id)
                .ok_or_else(|| RunError::UnknownQuestionInCache(line.key.question_id.clone()))?;
            Ok(ResponseRecord::from_completion(
                line.key.question_id.clone(),
                line.key.cell.clone(),
                line.key.replicate,
                line.text.clone(),
                &question.scale,
            ))
        })
        .collect()
}

fn load_raw_lines(prepared: &Prepared) -> Result<Vec<RawResponseLine>, RunError> {
    let raw_path = raw_responses_path(&prepared.run_dir);
    if !raw_path.exists() {
        return Err(RunError::MissingRawResponses(
            raw_path.display().to_string(),
        ));
    }
    Ok(read_cache(&raw_path, prepared)?.lines)
}

/// Re-parses the cached raw responses and reports per-status counts.
pub fn cmd_parse(config: &RunConfig) -> Result<ParseOutcome, RunError> {
    let prepared = prepare(config)?;
    let lines = load_raw_lines(&prepared)?;
    let records = records_from_lines(&lines, &prepared.questionnaire)?;
    Ok(ParseOutcome {
        run_dir: prepared.run_dir,
        report: classify_batch(&records),
    })
}

/// Outcome of `compare`: statistics plus the emitted files.
#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub run_dir: PathBuf,
    pub parse_report: ParseReport,
    pub comparisons: Vec<ComparisonResult>,
    pub files: Vec<PathBuf>,
}

impl CompareOutcome {
    /// One row per (question, grouping): rho and MAPE, formatted as percents.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<26} {:<14} {:>8} {:>8}  {}\n",
            "question", "grouping", "rho", "mape", "note"
        ));
        for result in &self.comparisons {
            let rho = result
                .rho
                .map(|r| format!("{:.1}%", r * 100.0))
                .unwrap_or_else(|| "—".to_string());
            let mape = result
                .mape
                .map(|m| format!("{:.1}%", m * 100.0))
                .unwrap_or_else(|| "—".to_string());
            let note = match result.rho_outcome {
                RhoOutcome::Defined => String::new(),
                RhoOutcome::NoHumanData => "no human data".to_string(),
                RhoOutcome::TooFewPairs => "fewer than 2 paired subgroups".to_string(),
                RhoOutcome::ConstantSynthetic => "constant synthetic side".to_string(),
                RhoOutcome::ConstantHuman => "constant human side".to_string(),
            };
            out.push_str(&format!(
                "{:<26} {:<14} {:>8} {:>8}  {}\n",
                result.question_id,
                result.grouping.label(),
                rho,
                mape,
                note
            ));
        }
        out
    }

    pub fn comparison(&self, question_id: &str, grouping: Grouping) -> Option<&ComparisonResult> {
        self.comparisons
            .iter()
            .find(|c| c.question_id == question_id && c.grouping == grouping)
    }
}

/// Parses cached responses, ingests the human CSV, computes all comparison
/// statistics, and emits tables, manifest, and charts into the run directory.
pub fn cmd_compare(config: &RunConfig) -> Result<CompareOutcome, RunError> {
    let prepared = prepare(config)?;
    let human_section = prepared
        .config
        .human
        .as_ref()
        .ok_or(RunError::MissingHumanSection)?;

    let lines = load_raw_lines(&prepared)?;
    let records = records_from_lines(&lines, &prepared.questionnaire)?;
    let parse_report = classify_batch(&records);

    let synthetic =
        ScoreTable::from_parsed_records(&records, &prepared.questionnaire, &prepared.schema);
    let ingested = ingest_csv(
        &human_section.csv,
        &human_section.recode,
        &prepared.schema,
        &prepared.questionnaire,
        human_section.fielding_year,
    )?;
    let human = human_cell_table(&ingested.records, &prepared.questionnaire, &prepared.schema);

    let mut comparisons = Vec::new();
    for grouping in Grouping::ALL {
        comparisons.extend(compare(
            &synthetic,
            &human,
            grouping,
            &prepared.questionnaire,
            &prepared.schema,
            prepared.config.bootstrap_reps,
            prepared.config.seed,
        ));
    }
    // Present question-major, grouping-minor.
    let question_order: BTreeMap<&str, usize> = prepared
        .questionnaire
        .questions
        .iter()
        .enumerate()
        .map(|(i, q)| (q.id.as_str(), i))
        .collect();
    let grouping_order = |g: Grouping| Grouping::ALL.iter().position(|x| *x == g).unwrap();
    comparisons.sort_by_key(|c| (question_order[c.question_id.as_str()], grouping_order(c.grouping)));

    let mut cell_summaries = Vec::new();
    for (source, table) in [(Source::Synthetic, &synthetic), (Source::Human, &human)] {
        for ((question_id, cell), scores) in table.iter() {
            let summary_seed = seed::derive_u64(
                prepared.config.seed,
                &["cell", source.label(), question_id, &cell.to_string()],
            );
            cell_summaries.push((
                source,
                CellSummary {
                    question_id: question_id.clone(),
                    cell: cell.clone(),
                    stats: cell_summary(scores, prepared.config.bootstrap_reps, summary_seed),
                },
            ));
        }
    }

    let mut histograms = Vec::new();
    for (source, table) in [(Source::Synthetic, &synthetic), (Source::Human, &human)] {
        let by_gender = marginalize(table, Grouping::Gender, &prepared.schema);
        for question in &prepared.questionnaire.questions {
            if let Some(pools) = by_gender.get(&question.id) {
                for (label, scores) in pools {
                    histograms.push((
                        source,
                        HistogramTable::build(
                            question.id.clone(),
                            label.clone(),
                            scores,
                            question.scale.cardinality,
                        ),
                    ));
                }
            }
        }
    }

    let prices = prepared.config.price_table();
    let cost = lines
        .iter()
        .map(|line| {
            line.tokens.prompt as f64 * prices.prompt_usd_per_token
                + line.tokens.completion as f64 * prices.completion_usd_per_token
        })
        .sum();

    let manifest = RunManifest {
        run_id: prepared.run_id.clone(),
        created_at: match prepared.config.backend {
            BackendKind::Mock => None,
            BackendKind::Live => Some(chrono::Utc::now().to_rfc3339()),
        },
        backend_id: match prepared.config.backend {
            BackendKind::Mock => "mock".to_string(),
            BackendKind::Live => "live".to_string(),
        },
        model_name: prepared.model.clone(),
        temperature: match prepared.config.backend {
            BackendKind::Mock => None,
            BackendKind::Live => Some(prepared.temperature),
        },
        master_seed: prepared.config.seed,
        mock_seed: prepared.mock_model.as_ref().map(|m| m.seed),
        replicates_per_cell: prepared.config.replicates,
        bootstrap_reps: prepared.config.bootstrap_reps,
        system_prompt: prepared.template.system_prompt().to_string(),
        questionnaire_hash: prepared.questionnaire_hash.clone(),
        schema: prepared.schema.clone(),
        cost_estimate_usd: cost,
        parse_report: parse_report.clone(),
        config: serde_json::to_value(&prepared.config).expect("config serializes"),
    };

    let input = ReportInput {
        cell_summaries,
        comparisons: comparisons.clone(),
        histograms,
        manifest,
    };
    let mut files = emit_tables(&input, &prepared.run_dir)?;
    files.extend(render_charts(
        &input,
        &prepared.questionnaire,
        &prepared.run_dir,
    )?);

    Ok(CompareOutcome {
        run_dir: prepared.run_dir,
        parse_report,
        comparisons,
        files,
    })
}

/// plan + run + compare in one invocation. With `dry_run` the elicitation and
/// comparison are skipped.
pub fn cmd_all(
    config: &RunConfig,
    dry_run: bool,
) -> Result<(PlanOutcome, RunOutcome, Option<CompareOutcome>), RunError> {
    let plan = cmd_plan(config)?;
    let run = cmd_run(config, dry_run)?;
    let compare = if dry_run {
        None
    } else {
        Some(cmd_compare(config)?)
    };
    Ok((plan, run, compare))
}
