//! Evaluation reports: per-item records, aggregates, comparisons and the
//! CSV side files.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use bot_core::metrics::{accuracy, ece, ks_statistic, price, reliability_bins, delta_pct, ReliabilityBin, StageCosts};
use bot_core::refine::RoundTrace;
use bot_core::types::labels_match;
use bot_core::{FinalAnswer, FinalizedReason, Query, TokenLedger, TokenUsage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Schema;
use crate::orchestrator::{Method, RunConfig};

pub const REPORT_VERSION: u32 = 1;

/// Aggregates recomputed on load must agree with the stored ones to this
/// absolute tolerance (JSON float round trips may move the last bit).
pub const VERIFY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    /// Index into [`EvalReport::batches`].
    pub batch: usize,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    pub confidence: f64,
    pub rounds_used: u32,
    pub finalized_reason: FinalizedReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Actor tokens for this item across all rounds.
    pub usage: TokenUsage,
}

impl ItemRecord {
    pub fn new(query: &Query, batch: usize, answer: &FinalAnswer, usage: TokenUsage) -> Self {
        Self {
            id: query.id.clone(),
            batch,
            answer: answer.answer.clone(),
            gold: query.gold.clone(),
            correct: query.gold.as_ref().map(|g| labels_match(&answer.answer, g)),
            confidence: answer.confidence,
            rounds_used: answer.rounds_used,
            finalized_reason: answer.finalized_reason,
            error: answer.error.clone(),
            usage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub index: usize,
    pub ids: Vec<String>,
    pub rounds: u32,
    /// Reflector tokens for the whole batch; the instruction is paid here once.
    pub reflector_usage: TokenUsage,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<RoundTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub items: usize,
    /// Items carrying a gold label.
    pub scored: usize,
    pub accuracy: Option<f64>,
    pub ks: Option<f64>,
    pub ece: Option<f64>,
    pub mean_rounds: f64,
    pub actor_errors: usize,
    pub round_capped: usize,
    pub tokens: TokenLedger,
    pub costs: StageCosts,
    pub reliability: Vec<ReliabilityBin>,
}

impl Aggregates {
    pub fn compute(items: &[ItemRecord], batches: &[BatchRecord], config: &RunConfig) -> Self {
        let scored: Vec<(f64, bool)> = items
            .iter()
            .filter_map(|r| r.correct.map(|c| (r.confidence, c)))
            .collect();
        let pairs: Vec<(&str, &str)> = items
            .iter()
            .filter_map(|r| r.gold.as_deref().map(|g| (r.answer.as_str(), g)))
            .collect();
        let (hit, miss): (Vec<_>, Vec<_>) = scored.iter().partition(|(_, ok)| *ok);
        let conf = |v: Vec<&(f64, bool)>| v.into_iter().map(|(c, _)| *c).collect::<Vec<f64>>();
        let tokens = TokenLedger {
            actor: items.iter().map(|r| r.usage).sum(),
            reflector: batches.iter().map(|b| b.reflector_usage).sum(),
        };
        Self {
            items: items.len(),
            scored: scored.len(),
            accuracy: accuracy(&pairs).ok(),
            ks: ks_statistic(&conf(hit), &conf(miss)).ok(),
            ece: ece(&scored, config.ece_bins).ok(),
            mean_rounds: if items.is_empty() {
                0.0
            } else {
                items.iter().map(|r| r.rounds_used as f64).sum::<f64>() / items.len() as f64
            },
            actor_errors: items
                .iter()
                .filter(|r| r.finalized_reason == FinalizedReason::ActorError)
                .count(),
            round_capped: items
                .iter()
                .filter(|r| r.finalized_reason == FinalizedReason::RoundCap)
                .count(),
            tokens,
            costs: price(&tokens, &config.prices),
            reliability: reliability_bins(&scored, config.ece_bins).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub path: String,
    pub schema: Schema,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub label: String,
    pub seed: u64,
    pub config: RunConfig,
    pub dataset: DatasetInfo,
    /// False when the run stopped early; items then cover completed batches only.
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub batches: Vec<BatchRecord>,
    /// Dataset order.
    pub items: Vec<ItemRecord>,
    pub aggregates: Aggregates,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
}

/// Short method tag, e.g. `bot(4)`.
pub fn method_label(config: &RunConfig) -> String {
    match config.method {
        Method::Bot => format!("bot({})", config.batch_size),
        m => m.to_string(),
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("report is not valid JSON: {0}")]
    Json(String),
    #[error("unsupported report version {0}")]
    Version(u32),
    #[error("report is inconsistent: {0}")]
    Inconsistent(String),
    #[error("reports cover different items: {missing} only in baseline, {extra} only in candidate")]
    DatasetMismatch { missing: usize, extra: usize },
    #[error("csv: {0}")]
    Csv(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ReportError + '_ {
    move |e| ReportError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= VERIFY_TOLERANCE
}

fn close_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b),
        (None, None) => true,
        _ => false,
    }
}

impl EvalReport {
    pub fn assemble(
        config: RunConfig,
        dataset: DatasetInfo,
        batches: Vec<BatchRecord>,
        items: Vec<ItemRecord>,
        failure: Option<String>,
    ) -> Self {
        let aggregates = Aggregates::compute(&items, &batches, &config);
        Self {
            version: REPORT_VERSION,
            label: method_label(&config),
            seed: config.seed,
            complete: failure.is_none() && items.len() == dataset.size,
            config,
            dataset,
            failure,
            batches,
            items,
            aggregates,
            comparison: None,
        }
    }

    /// Recompute everything derivable and compare with what is stored.
    pub fn verify(&self) -> Result<(), ReportError> {
        let bad = |what: &str| Err(ReportError::Inconsistent(what.to_string()));
        if self.version != REPORT_VERSION {
            return Err(ReportError::Version(self.version));
        }
        let mut seen = BTreeSet::new();
        for r in &self.items {
            if !seen.insert(r.id.as_str()) {
                return bad(&format!("duplicate item {}", r.id));
            }
            let Some(b) = self.batches.get(r.batch) else {
                return bad(&format!("item {} points at missing batch {}", r.id, r.batch));
            };
            if !b.ids.contains(&r.id) {
                return bad(&format!("item {} is not listed in batch {}", r.id, r.batch));
            }
            let expect = r.gold.as_ref().map(|g| labels_match(&r.answer, g));
            if r.correct != expect {
                return bad(&format!("correctness of {}", r.id));
            }
        }
        if self.batches.iter().enumerate().any(|(i, b)| b.index != i) {
            return bad("batch indices");
        }
        let want = Aggregates::compute(&self.items, &self.batches, &self.config);
        let got = &self.aggregates;
        let checks = [
            ("items", want.items == got.items),
            ("scored", want.scored == got.scored),
            ("accuracy", close_opt(want.accuracy, got.accuracy)),
            ("ks", close_opt(want.ks, got.ks)),
            ("ece", close_opt(want.ece, got.ece)),
            ("mean_rounds", close(want.mean_rounds, got.mean_rounds)),
            ("actor_errors", want.actor_errors == got.actor_errors),
            ("round_capped", want.round_capped == got.round_capped),
            ("tokens", want.tokens == got.tokens),
            (
                "costs",
                close(want.costs.actor, got.costs.actor)
                    && close(want.costs.reflector, got.costs.reflector)
                    && close(want.costs.total, got.costs.total),
            ),
            (
                "reliability",
                want.reliability.len() == got.reliability.len()
                    && want.reliability.iter().zip(&got.reliability).all(|(a, b)| {
                        a.count == b.count
                            && close(a.lower, b.lower)
                            && close(a.upper, b.upper)
                            && close(a.mean_confidence, b.mean_confidence)
                            && close(a.accuracy, b.accuracy)
                    }),
            ),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => bad(&format!("aggregate {name} does not match the item records")),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        let r: Self = serde_json::from_str(text).map_err(|e| ReportError::Json(e.to_string()))?;
        r.verify()?;
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReportError> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Write the JSON report and its CSV side files.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ReportError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        write_atomic(path, self.to_json().as_bytes())?;
        self.write_csvs(path)
    }

    fn write_csvs(&self, path: &Path) -> Result<(), ReportError> {
        let csv_err = |e: csv::Error| ReportError::Csv(e.to_string());

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bin", "lower", "upper", "count", "mean_confidence", "accuracy"])
            .map_err(csv_err)?;
        for (i, b) in self.aggregates.reliability.iter().enumerate() {
            w.write_record([
                i.to_string(),
                b.lower.to_string(),
                b.upper.to_string(),
                b.count.to_string(),
                b.mean_confidence.to_string(),
                b.accuracy.to_string(),
            ])
            .map_err(csv_err)?;
        }
        write_atomic(&side_file(path, "reliability"), &finish(w)?)?;

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["stage", "input_tokens", "output_tokens", "cost_usd"])
            .map_err(csv_err)?;
        let t = &self.aggregates.tokens;
        let c = &self.aggregates.costs;
        for (stage, usage, cost) in [
            ("actor", t.actor, c.actor),
            ("reflector", t.reflector, c.reflector),
            ("total", t.total(), c.total),
        ] {
            w.write_record([
                stage.to_string(),
                usage.input_tokens.to_string(),
                usage.output_tokens.to_string(),
                cost.to_string(),
            ])
            .map_err(csv_err)?;
        }
        write_atomic(&side_file(path, "costs"), &finish(w)?)?;

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "batch", "confidence", "correct", "rounds_used", "finalized_reason"])
            .map_err(csv_err)?;
        for r in &self.items {
            let reason = serde_json::to_value(r.finalized_reason).expect("enum serializes");
            w.write_record([
                r.id.clone(),
                r.batch.to_string(),
                r.confidence.to_string(),
                r.correct.map(|c| c.to_string()).unwrap_or_default(),
                r.rounds_used.to_string(),
                reason.as_str().unwrap_or_default().to_string(),
            ])
            .map_err(csv_err)?;
        }
        write_atomic(&side_file(path, "confidences"), &finish(w)?)?;
        Ok(())
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, ReportError> {
    w.into_inner().map_err(|e| ReportError::Csv(e.to_string()))
}

/// `out/report.json` -> `out/report.<kind>.csv`
pub fn side_file(report: &Path, kind: &str) -> PathBuf {
    report.with_extension(format!("{kind}.csv"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDelta {
    pub stage: String,
    pub baseline_tokens: TokenUsage,
    pub candidate_tokens: TokenUsage,
    pub baseline_cost: f64,
    pub candidate_cost: f64,
    /// Relative reduction in percent; absent when the baseline stage is free.
    pub delta_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub candidate: String,
    pub items: usize,
    /// Candidate minus baseline.
    pub accuracy_delta: Option<f64>,
    pub ks_delta: Option<f64>,
    pub ece_delta: Option<f64>,
    pub stages: Vec<StageDelta>,
}

impl Comparison {
    pub fn stage(&self, name: &str) -> Option<&StageDelta> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>, digits: usize| v.map_or("n/a".to_string(), |v| format!("{v:+.digits$}"));
        let mut out = format!("{} vs {} over {} items\n", self.candidate, self.baseline, self.items);
        out.push_str(&format!(
            "accuracy {}  ks {}  ece {}\n",
            opt(self.accuracy_delta, 4),
            opt(self.ks_delta, 4),
            opt(self.ece_delta, 4)
        ));
        out.push_str(&format!(
            "{:<10} {:>12} {:>12} {:>10} {:>10} {:>8}\n",
            "stage", "base_in", "base_out", "base_$", "cand_$", "delta%"
        ));
        for s in &self.stages {
            out.push_str(&format!(
                "{:<10} {:>12} {:>12} {:>10.4} {:>10.4} {:>8}\n",
                s.stage,
                s.baseline_tokens.input_tokens,
                s.baseline_tokens.output_tokens,
                s.baseline_cost,
                s.candidate_cost,
                s.delta_pct.map_or("n/a".to_string(), |d| format!("{d:.2}"))
            ));
        }
        out
    }
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

/// Per-stage cost deltas and metric deltas of `candidate` against
/// `baseline`. Both must cover the same item ids.
pub fn compare_reports(baseline: &EvalReport, candidate: &EvalReport) -> Result<Comparison, ReportError> {
    let a: BTreeSet<&str> = baseline.items.iter().map(|r| r.id.as_str()).collect();
    let b: BTreeSet<&str> = candidate.items.iter().map(|r| r.id.as_str()).collect();
    if a != b {
        return Err(ReportError::DatasetMismatch {
            missing: a.difference(&b).count(),
            extra: b.difference(&a).count(),
        });
    }
    let (ba, ca) = (&baseline.aggregates, &candidate.aggregates);
    let stage = |name: &str, bt: TokenUsage, ct: TokenUsage, bc: f64, cc: f64| StageDelta {
        stage: name.to_string(),
        baseline_tokens: bt,
        candidate_tokens: ct,
        baseline_cost: bc,
        candidate_cost: cc,
        delta_pct: delta_pct(bc, cc).ok(),
    };
    Ok(Comparison {
        baseline: baseline.label.clone(),
        candidate: candidate.label.clone(),
        items: a.len(),
        accuracy_delta: diff(ba.accuracy, ca.accuracy),
        ks_delta: diff(ba.ks, ca.ks),
        ece_delta: diff(ba.ece, ca.ece),
        stages: vec![
            stage("actor", ba.tokens.actor, ca.tokens.actor, ba.costs.actor, ca.costs.actor),
            stage(
                "reflector",
                ba.tokens.reflector,
                ca.tokens.reflector,
                ba.costs.reflector,
                ca.costs.reflector,
            ),
            stage("total", ba.tokens.total(), ca.tokens.total(), ba.costs.total, ca.costs.total),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> RunConfig {
        RunConfig::default()
    }

    fn report(answers: &[(&str, &str, f64)], actor: TokenUsage, reflector: TokenUsage) -> EvalReport {
        let items: Vec<ItemRecord> = answers
            .iter()
            .enumerate()
            .map(|(i, (answer, gold, conf))| {
                let q = Query::new(format!("q{i}"), "x").with_gold(*gold);
                let fa = FinalAnswer {
                    query_id: q.id.clone(),
                    answer: answer.to_string(),
                    confidence: *conf,
                    rounds_used: 1,
                    finalized_reason: FinalizedReason::Accepted,
                    error: None,
                };
                ItemRecord::new(&q, 0, &fa, if i == 0 { actor } else { TokenUsage::ZERO })
            })
            .collect();
        let batches = vec![BatchRecord {
            index: 0,
            ids: items.iter().map(|r| r.id.clone()).collect(),
            rounds: 1,
            reflector_usage: reflector,
            trace: vec![],
        }];
        let dataset = DatasetInfo {
            path: "d.jsonl".into(),
            schema: Schema::ChoiceQa,
            size: items.len(),
        };
        EvalReport::assemble(config(), dataset, batches, items, None)
    }

    #[test]
    fn aggregates() {
        let r = report(
            &[("A", "A", 0.9), ("B", "A", 0.4), ("C", "C", 0.8), ("D", "A", 0.3)],
            TokenUsage::new(1_000_000, 0),
            TokenUsage::new(0, 100_000),
        );
        let a = &r.aggregates;
        assert_eq!(a.accuracy, Some(0.5));
        assert_eq!(a.ks, Some(1.0));
        assert_eq!((a.costs.actor, a.costs.reflector, a.costs.total), (2.5, 1.0, 3.5));
        assert!(r.complete);
        assert_eq!(r.label, "bot(4)");
        r.verify().unwrap();
        let back = EvalReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back.to_json(), r.to_json());
    }

    #[test]
    fn tampering_is_caught() {
        let mut r = report(&[("A", "A", 0.9), ("B", "A", 0.4)], TokenUsage::ZERO, TokenUsage::ZERO);
        r.aggregates.accuracy = Some(1.0);
        assert!(matches!(r.verify(), Err(ReportError::Inconsistent(_))));
        let mut r = report(&[("A", "A", 0.9)], TokenUsage::ZERO, TokenUsage::ZERO);
        r.items[0].correct = Some(false);
        assert!(r.verify().is_err());
    }

    #[test]
    fn compare_identity_and_mismatch() {
        let r = report(&[("A", "A", 0.9), ("B", "A", 0.4)], TokenUsage::new(10, 5), TokenUsage::new(7, 3));
        let c = compare_reports(&r, &r).unwrap();
        assert_eq!(c.accuracy_delta, Some(0.0));
        assert!(c.stages.iter().all(|s| s.delta_pct == Some(0.0)));
        let other = report(&[("A", "A", 0.9)], TokenUsage::ZERO, TokenUsage::ZERO);
        assert!(matches!(
            compare_reports(&r, &other),
            Err(ReportError::DatasetMismatch { missing: 1, extra: 0 })
        ));
    }

    #[test]
    fn free_baseline_stage_has_no_delta() {
        let base = report(&[("A", "A", 0.9)], TokenUsage::new(10, 5), TokenUsage::ZERO);
        let cand = report(&[("A", "A", 0.9)], TokenUsage::new(10, 5), TokenUsage::new(1, 1));
        let c = compare_reports(&base, &cand).unwrap();
        assert_eq!(c.stage("reflector").unwrap().delta_pct, None);
        assert!(c.to_table().contains("n/a"));
    }

    #[test]
    fn side_file_names() {
        assert_eq!(side_file(Path::new("out/r.json"), "costs"), PathBuf::from("out/r.costs.csv"));
    }
}
