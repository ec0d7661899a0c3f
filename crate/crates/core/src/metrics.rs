//! Accuracy, calibration (two-sample KS and ECE) and token pricing.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{TokenLedger, TokenUsage};
use crate::types::labels_match;

/// Number of equal-width confidence bins used for ECE.
pub const DEFAULT_ECE_BINS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("no records to score")]
    EmptyInput,
    #[error("the {0} group is empty")]
    EmptyGroup(Group),
    #[error("bin count must be at least 1")]
    BadBins,
    #[error("confidence values must be finite")]
    NonFinite,
    #[error("baseline cost must be positive")]
    ZeroBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Correct,
    Incorrect,
}

impl core::fmt::Display for Group {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Group::Correct => "correct",
            Group::Incorrect => "incorrect",
        })
    }
}

/// Fraction of `(answer, gold)` pairs that match after normalization.
pub fn accuracy<A: AsRef<str>, G: AsRef<str>>(predictions: &[(A, G)]) -> Result<f64, MetricError> {
    if predictions.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let hits = predictions
        .iter()
        .filter(|(a, g)| labels_match(a.as_ref(), g.as_ref()))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

fn sorted_finite(values: &[f64]) -> Result<Vec<f64>, MetricError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Exact two-sample Kolmogorov–Smirnov statistic between the confidences
/// of correct and incorrect predictions.
///
/// Both empirical CDFs are step functions that only jump at sample points,
/// so the supremum is attained at one of the pooled points; a single merge
/// pass over the two sorted samples visits all of them.
pub fn ks_statistic(conf_correct: &[f64], conf_incorrect: &[f64]) -> Result<f64, MetricError> {
    if conf_correct.is_empty() {
        return Err(MetricError::EmptyGroup(Group::Correct));
    }
    if conf_incorrect.is_empty() {
        return Err(MetricError::EmptyGroup(Group::Incorrect));
    }
    let a = sorted_finite(conf_correct)?;
    let b = sorted_finite(conf_incorrect)?;
    Ok(ks_sorted(&a, &b))
}

/// KS statistic for two already sorted, finite, nonempty samples.
pub fn ks_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best = 0.0f64;
    while i < a.len() && j < b.len() {
        let t = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        let d = (i as f64 / na - j as f64 / nb).abs();
        if d > best {
            best = d;
        }
    }
    // after one side is exhausted its CDF is 1 and the gap only shrinks
    best
}

/// One reliability-diagram bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Bin index for equal-width, right-closed bins over `[0, 1]`; zero lands in
/// the first bin. Edges are `k / bins` as computed in f64.
pub fn bin_index(confidence: f64, bins: usize) -> usize {
    let b = bins as f64;
    let c = confidence.clamp(0.0, 1.0);
    let mut k = (libm::ceil(c * b) as usize).clamp(1, bins);
    while k > 1 && c <= (k - 1) as f64 / b {
        k -= 1;
    }
    while k < bins && c > k as f64 / b {
        k += 1;
    }
    k - 1
}

/// Per-bin counts, mean confidence and accuracy. Empty bins are included
/// with zero counts so the output always has `bins` rows.
pub fn reliability_bins(records: &[(f64, bool)], bins: usize) -> Result<Vec<ReliabilityBin>, MetricError> {
    if bins == 0 {
        return Err(MetricError::BadBins);
    }
    if records.iter().any(|(c, _)| !c.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let mut sums = alloc::vec![(0usize, 0.0f64, 0usize); bins];
    for &(c, ok) in records {
        let slot = &mut sums[bin_index(c, bins)];
        slot.0 += 1;
        slot.1 += c;
        slot.2 += ok as usize;
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(k, (count, conf, hits))| ReliabilityBin {
            lower: k as f64 / bins as f64,
            upper: (k + 1) as f64 / bins as f64,
            count,
            mean_confidence: if count > 0 { conf / count as f64 } else { 0.0 },
            accuracy: if count > 0 { hits as f64 / count as f64 } else { 0.0 },
        })
        .collect())
}

/// Expected calibration error: `Σ_b (n_b / n) · |acc_b − conf_b|`.
pub fn ece(records: &[(f64, bool)], bins: usize) -> Result<f64, MetricError> {
    if records.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let n = records.len() as f64;
    Ok(reliability_bins(records, bins)?
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| (b.count as f64 / n) * (b.accuracy - b.mean_confidence).abs())
        .sum())
}

/// Dollar prices per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

impl Default for PriceTable {
    /// GPT-4o reference pricing: $2.50 input, $10.00 output per million.
    fn default() -> Self {
        Self {
            input_per_million: 2.5,
            output_per_million: 10.0,
        }
    }
}

impl PriceTable {
    pub fn cost(&self, usage: TokenUsage) -> f64 {
        usage.input_tokens as f64 * self.input_per_million / 1e6
            + usage.output_tokens as f64 * self.output_per_million / 1e6
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCosts {
    pub actor: f64,
    pub reflector: f64,
    pub total: f64,
}

pub fn price(ledger: &TokenLedger, table: &PriceTable) -> StageCosts {
    let actor = table.cost(ledger.actor);
    let reflector = table.cost(ledger.reflector);
    StageCosts {
        actor,
        reflector,
        total: actor + reflector,
    }
}

/// Relative cost reduction of `candidate` against `baseline`, in percent.
pub fn delta_pct(baseline_cost: f64, candidate_cost: f64) -> Result<f64, MetricError> {
    if baseline_cost.is_nan() || baseline_cost <= 0.0 {
        return Err(MetricError::ZeroBaseline);
    }
    Ok(100.0 * (baseline_cost - candidate_cost) / baseline_cost)
}
