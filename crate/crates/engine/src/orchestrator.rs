//! Drives the refinement loop against a backend, plus the two baselines.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use bot_core::batching::BatchStrategy;
use bot_core::metrics::{PriceTable, DEFAULT_ECE_BINS};
use bot_core::refine::{LoopError, RefinementLoop, RoundTrace, DEFAULT_MAX_ROUNDS};
use bot_core::{ActorOutput, FinalAnswer, FinalizedReason, Query, TokenUsage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actor::{act, ActorError, ActorSettings, DEFAULT_MAX_TOOL_CALLS};
use crate::backend::{ChatBackend, SharedLedger};
use crate::reflector::{reflect, ReflectError, ReflectorSettings};
use crate::tools::ToolRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Single Actor pass, no reflection.
    React,
    /// Per-item reflection (batch size 1).
    Reflect,
    /// Joint batch reflection.
    Bot,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::React => "react",
            Method::Reflect => "reflect",
            Method::Bot => "bot",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    pub batch_size: usize,
    pub max_rounds: u32,
    pub max_tool_calls: usize,
    pub batching: BatchStrategy,
    /// Cluster count for semantic batching; `ceil(M / N)` when absent.
    #[serde(default)]
    pub kmeans_k: Option<usize>,
    pub temperature: f64,
    pub seed: u64,
    pub prices: PriceTable,
    pub ece_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Bot,
            batch_size: 4,
            max_rounds: DEFAULT_MAX_ROUNDS,
            max_tool_calls: DEFAULT_MAX_TOOL_CALLS,
            batching: BatchStrategy::Sequential,
            kmeans_k: None,
            temperature: 0.0,
            seed: 0,
            prices: PriceTable::default(),
            ece_bins: DEFAULT_ECE_BINS,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid run config: {0}")]
pub struct ConfigError(pub String);

impl RunConfig {
    pub fn for_method(method: Method) -> Self {
        let batch_size = if method == Method::Bot { 4 } else { 1 };
        let batching = if method == Method::Bot {
            BatchStrategy::Sequential
        } else {
            BatchStrategy::None
        };
        Self {
            method,
            batch_size,
            batching,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        if self.batch_size == 0 {
            return err("batch_size must be at least 1".into());
        }
        if self.max_rounds == 0 {
            return err("max_rounds must be at least 1".into());
        }
        if self.method != Method::Bot && self.batch_size != 1 {
            return err(format!("method {} works on single items; batch_size must be 1", self.method));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return err(format!("temperature {} must be finite and >= 0", self.temperature));
        }
        if self.ece_bins == 0 {
            return err("ece_bins must be at least 1".into());
        }
        if !(self.prices.input_per_million >= 0.0 && self.prices.output_per_million >= 0.0) {
            return err("prices must be >= 0".into());
        }
        if self.kmeans_k == Some(0) {
            return err("kmeans_k must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error("actor failed on {query_id} in round {round}: {source}")]
    Actor {
        query_id: String,
        round: u32,
        source: ActorError,
    },
    #[error("reflector failed on [{}] in round {round}: {source}", .query_ids.join(", "))]
    Reflector {
        query_ids: Vec<String>,
        round: u32,
        source: ReflectError,
    },
}

/// Map `f` over `items` on at most `limit` threads; results keep input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], limit: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = limit.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                *slots[i].lock().expect("slot lock poisoned") = Some(f(item));
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock poisoned").expect("every slot filled"))
        .collect()
}

/// Everything `run_batch` learned about one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub answers: Vec<FinalAnswer>,
    /// Actor usage per item across all of its rounds, failed calls included.
    pub actor_usage: Vec<TokenUsage>,
    pub reflector_usage: TokenUsage,
    pub trace: Vec<RoundTrace>,
    pub outputs: Vec<Option<ActorOutput>>,
}

pub struct Pipeline<'a> {
    pub backend: &'a dyn ChatBackend,
    pub tools: &'a ToolRegistry,
    pub actor: ActorSettings,
    pub reflector: ReflectorSettings,
    /// Concurrent Actor calls within a round.
    pub actor_parallelism: usize,
}

impl<'a> Pipeline<'a> {
    pub fn new(backend: &'a dyn ChatBackend, tools: &'a ToolRegistry) -> Self {
        Self {
            backend,
            tools,
            actor: ActorSettings::default(),
            reflector: ReflectorSettings::default(),
            actor_parallelism: 4,
        }
    }

    /// Copy the per-run knobs (tool budget, temperature) from `config`.
    pub fn configure(mut self, config: &RunConfig) -> Self {
        self.actor.max_tool_calls = config.max_tool_calls;
        self.actor.temperature = config.temperature;
        self.reflector.temperature = config.temperature;
        self
    }

    /// Refine one batch: act on the active set, reflect jointly over all
    /// items, repeat until nothing is flagged or `max_rounds` is spent.
    pub fn run_batch(&self, batch: &[Query], max_rounds: u32) -> Result<BatchOutcome, RunError> {
        let mut lp = RefinementLoop::new(batch.to_vec(), max_rounds)?;
        let item_ledgers: Vec<SharedLedger> = batch.iter().map(|_| SharedLedger::new()).collect();
        let reflector_ledger = SharedLedger::new();

        while !lp.is_done() {
            let results = {
                let jobs = lp.actor_jobs()?;
                parallel_map(&jobs, self.actor_parallelism, |job| {
                    let out = act(
                        job.query,
                        job.critique,
                        job.round,
                        self.tools,
                        &self.actor,
                        self.backend,
                        &item_ledgers[job.index],
                    );
                    (job.index, out.map_err(|e| e.to_string()))
                })
            };
            lp.submit_actor_results(results)?;
            if lp.is_done() {
                break;
            }
            let ctx = lp.context()?;
            let verdicts = reflect(&ctx, &self.reflector, self.backend, &reflector_ledger).map_err(|source| {
                RunError::Reflector {
                    query_ids: ctx.query_ids(),
                    round: ctx.round,
                    source,
                }
            })?;
            lp.submit_verdicts(verdicts)?;
        }

        let outputs = (0..batch.len()).map(|i| lp.latest_output(i).cloned()).collect();
        let trace = lp.trace().to_vec();
        Ok(BatchOutcome {
            answers: lp.finish()?,
            actor_usage: item_ledgers.iter().map(|l| l.snapshot().actor).collect(),
            reflector_usage: reflector_ledger.snapshot().reflector,
            trace,
            outputs,
        })
    }

    /// Per-item reflection baseline: a batch of one.
    pub fn run_reflection(&self, query: &Query, max_rounds: u32) -> Result<BatchOutcome, RunError> {
        self.run_batch(std::slice::from_ref(query), max_rounds)
    }

    /// Single Actor pass. Confidence is the model's own score, else 0.5.
    pub fn run_react(&self, query: &Query) -> Result<(FinalAnswer, ActorOutput), RunError> {
        let ledger = SharedLedger::new();
        let out = act(query, None, 1, self.tools, &self.actor, self.backend, &ledger).map_err(|source| {
            RunError::Actor {
                query_id: query.id.clone(),
                round: 1,
                source,
            }
        })?;
        let answer = FinalAnswer {
            query_id: query.id.clone(),
            answer: out.answer.clone(),
            confidence: out.verbalized_confidence.unwrap_or(0.5),
            rounds_used: 1,
            finalized_reason: FinalizedReason::Accepted,
            error: None,
        };
        Ok((answer, out))
    }

    /// [`Pipeline::run_react`] with Actor failures folded into the answer
    /// (empty, confidence 0). Usage of failed calls is still counted.
    pub fn react_item(&self, query: &Query) -> (FinalAnswer, TokenUsage) {
        let ledger = SharedLedger::new();
        let answer = match act(query, None, 1, self.tools, &self.actor, self.backend, &ledger) {
            Ok(out) => FinalAnswer {
                query_id: query.id.clone(),
                answer: out.answer,
                confidence: out.verbalized_confidence.unwrap_or(0.5),
                rounds_used: 1,
                finalized_reason: FinalizedReason::Accepted,
                error: None,
            },
            Err(e) => FinalAnswer {
                query_id: query.id.clone(),
                answer: String::new(),
                confidence: 0.0,
                rounds_used: 1,
                finalized_reason: FinalizedReason::ActorError,
                error: Some(e.to_string()),
            },
        };
        (answer, ledger.snapshot().actor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scripted::ScriptedBackend;
    use bot_core::Role;

    fn batch(n: usize) -> Vec<Query> {
        (1..=n).map(|i| Query::new(format!("q{i}"), format!("question {i}"))).collect()
    }

    #[test]
    fn parallel_map_keeps_order() {
        let xs: Vec<usize> = (0..100).collect();
        assert_eq!(parallel_map(&xs, 7, |x| x * 2), xs.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert_eq!(parallel_map(&[] as &[usize], 3, |x| *x), Vec::<usize>::new());
    }

    #[test]
    fn config_rules() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig::for_method(Method::Reflect).validate().is_ok());
        let bad = RunConfig {
            batch_size: 4,
            ..RunConfig::for_method(Method::Reflect)
        };
        assert!(bad.validate().is_err());
        let bad = RunConfig {
            max_rounds: 0,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn react_confidence() {
        let b = ScriptedBackend::from_json(
            r#"{"lanes": {"actor:a": [{"reply": "ANSWER: A\nCONFIDENCE: 0.8"}], "actor:b": [{"reply": "ANSWER: B"}]}}"#,
        )
        .unwrap();
        let tools = ToolRegistry::new();
        let p = Pipeline::new(&b, &tools);
        let (fa, _) = p.run_react(&Query::new("a", "x")).unwrap();
        assert_eq!((fa.confidence, fa.rounds_used), (0.8, 1));
        let (fb, _) = p.run_react(&Query::new("b", "x")).unwrap();
        assert_eq!(fb.confidence, 0.5);
        assert_eq!(b.call_count(Role::Reflector), 0);
    }

    #[test]
    fn reflector_failure_names_items_and_round() {
        let b = ScriptedBackend::from_json(
            r#"{"defaults": {"actor": [{"reply": "ANSWER: A"}], "reflector": [{"reply": "nope"}]}}"#,
        )
        .unwrap();
        let tools = ToolRegistry::new();
        let err = Pipeline::new(&b, &tools).run_batch(&batch(2), 5).unwrap_err();
        match err {
            RunError::Reflector { query_ids, round, .. } => {
                assert_eq!(query_ids, ["q1", "q2"]);
                assert_eq!(round, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn usage_split_by_item_and_stage() {
        let b = ScriptedBackend::from_json(
            r#"{"defaults": {"actor": [{"reply": "ANSWER: A", "usage": {"input_tokens": 5, "output_tokens": 1}}],
                             "reflector": [{"accept_all": {}, "usage": {"input_tokens": 100, "output_tokens": 20}}]}}"#,
        )
        .unwrap();
        let tools = ToolRegistry::new();
        let out = Pipeline::new(&b, &tools).run_batch(&batch(3), 5).unwrap();
        assert_eq!(out.actor_usage, vec![TokenUsage::new(5, 1); 3]);
        assert_eq!(out.reflector_usage, TokenUsage::new(100, 20));
        assert_eq!(out.trace.len(), 1);
    }
}
