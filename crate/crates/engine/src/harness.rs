//! End-to-end evaluation: load, plan, run every batch, score, report.
//!
//! Completed batches are appended to `<out>.journal.jsonl` as they finish,
//! so a crashed or interrupted run picks up where it stopped. The journal
//! is removed once the full report is written.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use bot_core::batching::{default_k, plan_none, plan_semantic, plan_sequential, BatchPlan, BatchStrategy, BatchingError, KMeansConfig};
use bot_core::refine::RoundTrace;
use bot_core::{FinalAnswer, Query, TokenUsage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{fnv1a, BackendError, ChatBackend};
use crate::dataset::{load_dataset, DatasetError, LoadOptions, Schema};
use crate::orchestrator::{parallel_map, ConfigError, Method, Pipeline, RunConfig, RunError};
use crate::report::{compare_reports, BatchRecord, DatasetInfo, EvalReport, ItemRecord, ReportError};
use crate::tools::ToolRegistry;

pub const JOURNAL_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub schema: Schema,
    pub strict: bool,
    /// Batches in flight at once.
    pub batch_parallelism: usize,
    /// Actor calls in flight within one batch.
    pub actor_parallelism: usize,
    /// Run at most this many outstanding batches, then stop with a partial
    /// report. Meant for exercising resume.
    pub stop_after: Option<usize>,
    /// Report to compare against once the run is complete.
    pub baseline: Option<EvalReport>,
}

impl EvalOptions {
    pub fn new(schema: Schema) -> Self {
        Self {
            schema,
            strict: true,
            batch_parallelism: 4,
            actor_parallelism: 4,
            stop_after: None,
            baseline: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("batch planning failed: {0}")]
    Batching(#[from] BatchingError),
    #[error("embedding failed: {0}")]
    Embedding(BackendError),
    #[error("journal {path}: {message}")]
    Journal { path: String, message: String },
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{source} (partial report written)")]
    Run { report: Box<EvalReport>, source: RunError },
    #[error("stopped after {done} of {total} batches (partial report written)")]
    Interrupted {
        report: Box<EvalReport>,
        done: usize,
        total: usize,
    },
}

impl EvalError {
    /// The partial report, when one was written.
    pub fn report(&self) -> Option<&EvalReport> {
        match self {
            EvalError::Run { report, .. } | EvalError::Interrupted { report, .. } => Some(report),
            _ => None,
        }
    }
}

pub fn journal_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".journal.jsonl");
    PathBuf::from(s)
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalHeader {
    journal: u32,
    fingerprint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JournalEntry {
    batch: usize,
    ids: Vec<String>,
    answers: Vec<FinalAnswer>,
    actor_usage: Vec<TokenUsage>,
    reflector_usage: TokenUsage,
    trace: Vec<RoundTrace>,
}

/// Hash of everything that determines the run's output.
fn fingerprint(config: &RunConfig, schema: Schema, queries: &[Query], plan: &BatchPlan) -> String {
    let doc = serde_json::json!({
        "config": config,
        "schema": schema,
        "queries": queries,
        "plan": plan,
    });
    format!("{:016x}", fnv1a(doc.to_string().as_bytes()))
}

struct Journal {
    path: PathBuf,
    file: Mutex<File>,
}

impl Journal {
    fn err(&self, message: impl ToString) -> EvalError {
        EvalError::Journal {
            path: self.path.display().to_string(),
            message: message.to_string(),
        }
    }

    /// Open for appending, returning the entries already recorded.
    fn open(path: PathBuf, fingerprint: &str, plan: &BatchPlan) -> Result<(Self, BTreeMap<usize, JournalEntry>), EvalError> {
        let err = |message: String| EvalError::Journal {
            path: path.display().to_string(),
            message,
        };
        let mut done = BTreeMap::new();
        if path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(&path).map_err(|e| err(e.to_string()))?)
                .lines()
                .collect::<Result<_, _>>()
                .map_err(|e| err(e.to_string()))?;
            let header: JournalHeader = lines
                .first()
                .and_then(|l| serde_json::from_str(l).ok())
                .ok_or_else(|| err("missing header".into()))?;
            if header.journal != JOURNAL_VERSION || header.fingerprint != fingerprint {
                return Err(err(
                    "written by a run with a different config or dataset; delete it to start over".into(),
                ));
            }
            let last = lines.len() - 1;
            for (i, line) in lines.iter().enumerate().skip(1) {
                match serde_json::from_str::<JournalEntry>(line) {
                    Ok(e) => {
                        if plan.batches.get(e.batch) != Some(&e.ids) {
                            return Err(err(format!("entry for batch {} does not match the plan", e.batch)));
                        }
                        done.insert(e.batch, e);
                    }
                    // a torn final line from a crash mid-write
                    Err(_) if i == last => log::warn!("ignoring incomplete last journal line"),
                    Err(e) => return Err(err(format!("line {}: {e}", i + 1))),
                }
            }
        } else {
            let header = JournalHeader {
                journal: JOURNAL_VERSION,
                fingerprint: fingerprint.to_string(),
            };
            fs::write(&path, format!("{}\n", serde_json::to_string(&header).expect("header serializes")))
                .map_err(|e| err(e.to_string()))?;
        }
        let file = OpenOptions::new().append(true).open(&path).map_err(|e| err(e.to_string()))?;
        // drop a torn tail so new entries start on a fresh line
        let text = fs::read_to_string(&path).map_err(|e| err(e.to_string()))?;
        if !text.ends_with('\n') {
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            file.set_len(keep as u64).map_err(|e| err(e.to_string()))?;
        }
        Ok((
            Self {
                path,
                file: Mutex::new(file),
            },
            done,
        ))
    }

    fn append(&self, entry: &JournalEntry) -> Result<(), EvalError> {
        let line = format!("{}\n", serde_json::to_string(entry).expect("entry serializes"));
        let mut f = self.file.lock().expect("journal lock poisoned");
        f.write_all(line.as_bytes()).map_err(|e| self.err(e))?;
        f.flush().map_err(|e| self.err(e))
    }
}

/// Partition the dataset as the config asks. Semantic batching embeds each
/// query's display text and clusters with `kmeans_k` (default `ceil(M/N)`).
pub fn plan_batches(queries: &[Query], config: &RunConfig, backend: &dyn ChatBackend) -> Result<BatchPlan, EvalError> {
    let ids: Vec<String> = queries.iter().map(|q| q.id.clone()).collect();
    let plan = match (config.method, config.batching) {
        (Method::React | Method::Reflect, _) | (Method::Bot, BatchStrategy::None) => plan_none(&ids),
        (Method::Bot, BatchStrategy::Sequential) => plan_sequential(&ids, config.batch_size)?,
        (Method::Bot, BatchStrategy::Semantic) => {
            let texts: Vec<String> = queries.iter().map(Query::display_text).collect();
            let vectors: Vec<Vec<f64>> = backend
                .embed(&texts)
                .map_err(EvalError::Embedding)?
                .into_iter()
                .map(|v| v.values)
                .collect();
            let k = config
                .kmeans_k
                .unwrap_or_else(|| default_k(ids.len(), config.batch_size))
                .min(ids.len());
            plan_semantic(&ids, &vectors, config.batch_size, &KMeansConfig::new(k, config.seed))?.0
        }
    };
    plan.check_partition(&ids)?;
    Ok(plan)
}

fn run_one(pipeline: &Pipeline<'_>, config: &RunConfig, index: usize, batch: &[Query]) -> Result<JournalEntry, RunError> {
    let ids = batch.iter().map(|q| q.id.clone()).collect();
    if config.method == Method::React {
        let (answers, actor_usage) = batch.iter().map(|q| pipeline.react_item(q)).unzip();
        return Ok(JournalEntry {
            batch: index,
            ids,
            answers,
            actor_usage,
            reflector_usage: TokenUsage::ZERO,
            trace: Vec::new(),
        });
    }
    let out = pipeline.run_batch(batch, config.max_rounds)?;
    Ok(JournalEntry {
        batch: index,
        ids,
        answers: out.answers,
        actor_usage: out.actor_usage,
        reflector_usage: out.reflector_usage,
        trace: out.trace,
    })
}

fn assemble(
    config: &RunConfig,
    info: DatasetInfo,
    queries: &[Query],
    plan: &BatchPlan,
    done: &BTreeMap<usize, JournalEntry>,
    failure: Option<String>,
) -> EvalReport {
    let batches = plan
        .batches
        .iter()
        .enumerate()
        .map(|(i, ids)| {
            let e = done.get(&i);
            BatchRecord {
                index: i,
                ids: ids.clone(),
                rounds: e.map_or(0, |e| e.trace.len() as u32),
                reflector_usage: e.map_or(TokenUsage::ZERO, |e| e.reflector_usage),
                trace: e.map(|e| e.trace.clone()).unwrap_or_default(),
            }
        })
        .collect();
    let mut by_id: HashMap<&str, (usize, &FinalAnswer, TokenUsage)> = HashMap::new();
    for (b, e) in done {
        for (a, u) in e.answers.iter().zip(&e.actor_usage) {
            by_id.insert(a.query_id.as_str(), (*b, a, *u));
        }
    }
    let items = queries
        .iter()
        .filter_map(|q| by_id.get(q.id.as_str()).map(|(b, a, u)| ItemRecord::new(q, *b, a, *u)))
        .collect();
    EvalReport::assemble(config.clone(), info, batches, items, failure)
}

/// Run `config` over the dataset at `dataset_path` and write the report to
/// `out` (plus CSV side files). Resumes from `<out>.journal.jsonl` when
/// present.
pub fn run_eval(
    config: &RunConfig,
    dataset_path: &Path,
    out: &Path,
    options: &EvalOptions,
    backend: &dyn ChatBackend,
    tools: &ToolRegistry,
) -> Result<EvalReport, EvalError> {
    config.validate()?;
    let queries = load_dataset(dataset_path, options.schema, LoadOptions { strict: options.strict })?;
    let plan = plan_batches(&queries, config, backend)?;
    let info = DatasetInfo {
        path: dataset_path.display().to_string(),
        schema: options.schema,
        size: queries.len(),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| EvalError::Journal {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
    }
    let (journal, mut done) = Journal::open(
        journal_path(out),
        &fingerprint(config, options.schema, &queries, &plan),
        &plan,
    )?;
    if !done.is_empty() {
        log::info!("resuming: {} of {} batches already done", done.len(), plan.len());
    }

    let by_id: HashMap<&str, &Query> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut pending: Vec<usize> = (0..plan.len()).filter(|i| !done.contains_key(i)).collect();
    let stopped_early = options.stop_after.is_some_and(|n| n < pending.len());
    if let Some(n) = options.stop_after {
        pending.truncate(n);
    }

    let mut pipeline = Pipeline::new(backend, tools).configure(config);
    pipeline.actor.prompt = options.schema.actor_prompt();
    pipeline.actor_parallelism = options.actor_parallelism;

    let results = parallel_map(&pending, options.batch_parallelism, |&i| {
        let batch: Vec<Query> = plan.batches[i].iter().map(|id| by_id[id.as_str()].clone()).collect();
        let entry = run_one(&pipeline, config, i, &batch)?;
        log::debug!("batch {i} done");
        Ok::<_, RunError>(entry)
    });
    let mut first_error = None;
    for r in results {
        match r {
            Ok(entry) => {
                journal.append(&entry)?;
                done.insert(entry.batch, entry);
            }
            Err(e) if first_error.is_none() => first_error = Some(e),
            Err(e) => log::warn!("{e}"),
        }
    }

    let failure = first_error.as_ref().map(ToString::to_string);
    let mut report = assemble(config, info, &queries, &plan, &done, failure);
    if report.complete {
        if let Some(base) = &options.baseline {
            report.comparison = Some(compare_reports(base, &report)?);
        }
    }
    report.write(out)?;

    if let Some(source) = first_error {
        return Err(EvalError::Run {
            report: Box::new(report),
            source,
        });
    }
    if stopped_early {
        return Err(EvalError::Interrupted {
            done: done.len(),
            total: plan.len(),
            report: Box::new(report),
        });
    }
    drop(journal);
    fs::remove_file(journal_path(out)).map_err(|e| EvalError::Journal {
        path: journal_path(out).display().to_string(),
        message: e.to_string(),
    })?;
    Ok(report)
}
