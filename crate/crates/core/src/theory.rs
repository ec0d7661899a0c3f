//! Desk-scale checks of the batch-reasoning theory: effective sample size,
//! simulated equicorrelated cohorts, scoring-rule gain, confidence
//! separation, and the token cost model.
//!
//! Every trial draws from its own ChaCha stream (`seed`, stream = trial
//! index), so results do not depend on how trials are scheduled.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ks_statistic;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("rho must be in [0, 1), got {0}")]
    BadRho(f64),
    #[error("p must be in (0, 1), got {0}")]
    BadP(f64),
    #[error("batch size must be at least 1")]
    BadN,
    #[error("need at least one trial")]
    NoTrials,
    #[error("grid is empty")]
    EmptyGrid,
    #[error("need at least two distinct batch sizes with positive token counts")]
    InsufficientPoints,
    #[error("invalid cost parameters: {0}")]
    BadCostParams(String),
    #[error("invalid confidence model: {0}")]
    BadModel(String),
}

fn check_rho(rho: f64) -> Result<(), TheoryError> {
    if (0.0..1.0).contains(&rho) {
        Ok(())
    } else {
        Err(TheoryError::BadRho(rho))
    }
}

fn check_p(p: f64) -> Result<(), TheoryError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(TheoryError::BadP(p))
    }
}

/// `N / (1 + (N - 1) rho)`
pub fn n_eff(n: usize, rho: f64) -> Result<f64, TheoryError> {
    if n == 0 {
        return Err(TheoryError::BadN);
    }
    check_rho(rho)?;
    let n = n as f64;
    Ok(n / (1.0 + (n - 1.0) * rho))
}

/// Variance of the batch mean of `n` equicorrelated Bernoulli(p) items.
pub fn var_batch_mean(p: f64, n: usize, rho: f64) -> Result<f64, TheoryError> {
    check_p(p)?;
    Ok(p * (1.0 - p) / n_eff(n, rho)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedCohortSpec {
    pub p: f64,
    pub rho: f64,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
}

impl CorrelatedCohortSpec {
    pub fn validate(&self) -> Result<(), TheoryError> {
        check_p(self.p)?;
        check_rho(self.rho)?;
        if self.n == 0 {
            return Err(TheoryError::BadN);
        }
        if self.trials == 0 {
            return Err(TheoryError::NoTrials);
        }
        Ok(())
    }

    pub fn trial_rng(&self, trial: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial);
        rng
    }
}

/// Common-shock draw: with probability `rho` every item copies one shared
/// Bernoulli(p); otherwise items are independent Bernoulli(p).
pub fn sample_cohort<R: Rng + ?Sized>(rng: &mut R, p: f64, rho: f64, out: &mut [bool]) {
    if rng.random::<f64>() < rho {
        let z = rng.random::<f64>() < p;
        out.fill(z);
    } else {
        for z in out.iter_mut() {
            *z = rng.random::<f64>() < p;
        }
    }
}

/// `trials x n` correctness matrix.
pub fn sample_equicorrelated(spec: &CorrelatedCohortSpec) -> Result<Vec<Vec<bool>>, TheoryError> {
    spec.validate()?;
    Ok((0..spec.trials as u64)
        .map(|t| {
            let mut row = vec![false; spec.n];
            sample_cohort(&mut spec.trial_rng(t), spec.p, spec.rho, &mut row);
            row
        })
        .collect())
}

/// Mean pairwise Pearson correlation between columns.
pub fn mean_pairwise_correlation(matrix: &[Vec<bool>]) -> f64 {
    let n = matrix.first().map_or(0, Vec::len);
    if n < 2 || matrix.is_empty() {
        return 0.0;
    }
    let t = matrix.len() as f64;
    let means: Vec<f64> = (0..n)
        .map(|j| matrix.iter().filter(|r| r[j]).count() as f64 / t)
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let both = matrix.iter().filter(|r| r[i] && r[j]).count() as f64 / t;
            let cov = both - means[i] * means[j];
            let sd = libm::sqrt(means[i] * (1.0 - means[i]) * means[j] * (1.0 - means[j]));
            if sd > 0.0 {
                total += cov / sd;
            }
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Seed for grid cell `cell` of an experiment seeded with `seed`.
pub fn cell_seed(seed: u64, cell: u64) -> u64 {
    seed.wrapping_add(cell.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Batch means `M_N` for the given trial indices.
pub fn batch_means(spec: &CorrelatedCohortSpec, trials: Range<u64>) -> Vec<f64> {
    let mut row = vec![false; spec.n];
    trials
        .map(|t| {
            sample_cohort(&mut spec.trial_rng(t), spec.p, spec.rho, &mut row);
            row.iter().filter(|&&z| z).count() as f64 / spec.n as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub p: f64,
    pub rho: f64,
    pub n: usize,
    pub empirical: f64,
    pub theoretical: f64,
    /// Standard error of `empirical`, `sqrt((m4 - v^2) / T)`.
    pub standard_error: f64,
}

impl VarianceCheck {
    pub fn z_score(&self) -> f64 {
        if self.standard_error == 0.0 {
            if self.empirical == self.theoretical {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.empirical - self.theoretical) / self.standard_error
        }
    }

    pub fn within(&self, k: f64) -> bool {
        libm::fabs(self.z_score()) <= k
    }
}

pub fn variance_from_means(spec: &CorrelatedCohortSpec, means: &[f64]) -> Result<VarianceCheck, TheoryError> {
    if means.is_empty() {
        return Err(TheoryError::NoTrials);
    }
    let t = means.len() as f64;
    let mean = means.iter().sum::<f64>() / t;
    let v = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / t;
    let m4 = means.iter().map(|m| libm::pow(m - mean, 4.0)).sum::<f64>() / t;
    Ok(VarianceCheck {
        p: spec.p,
        rho: spec.rho,
        n: spec.n,
        empirical: v,
        theoretical: var_batch_mean(spec.p, spec.n, spec.rho)?,
        standard_error: libm::sqrt((m4 - v * v).max(0.0) / t),
    })
}

pub fn variance_check(spec: &CorrelatedCohortSpec) -> Result<VarianceCheck, TheoryError> {
    spec.validate()?;
    variance_from_means(spec, &batch_means(spec, 0..spec.trials as u64))
}

fn binomial_pmf(m: usize, k: usize, p: f64) -> f64 {
    if k > m {
        return 0.0;
    }
    let mut coef = 1.0;
    for i in 0..k.min(m - k) {
        coef = coef * (m - i) as f64 / (i + 1) as f64;
    }
    coef * libm::pow(p, k as f64) * libm::pow(1.0 - p, (m - k) as f64)
}

/// `P(K = k | z_i)` where `K` counts correct items among the other `n - 1`.
pub fn peer_count_likelihood(p: f64, rho: f64, n: usize, k: usize, item_correct: bool) -> f64 {
    let m = n - 1;
    let shared = if item_correct { k == m } else { k == 0 };
    let shock = if shared { rho } else { 0.0 };
    shock + (1.0 - rho) * binomial_pmf(m, k, p)
}

/// Posterior `P(z_i = 1 | K = k)` under the common-shock model.
pub fn posterior_correct(p: f64, rho: f64, n: usize, k: usize) -> f64 {
    if n <= 1 || rho == 0.0 {
        // peers carry no information about item i
        return p;
    }
    let a = p * peer_count_likelihood(p, rho, n, k, true);
    let b = (1.0 - p) * peer_count_likelihood(p, rho, n, k, false);
    a / (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringGain {
    pub p: f64,
    pub rho: f64,
    pub n: usize,
    pub brier_independent: f64,
    pub brier_batch: f64,
    pub se_independent: f64,
    pub se_batch: f64,
    /// Paired standard error of `brier_batch - brier_independent`.
    pub se_difference: f64,
}

impl ScoringGain {
    pub fn gain(&self) -> f64 {
        self.brier_independent - self.brier_batch
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let t = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / t;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (t - 1.0);
    (mean, libm::sqrt(var / t))
}

/// Mean Brier score of the marginal predictor `p` versus the posterior
/// given how many peers in the cohort are correct.
pub fn scoring_gain_experiment(spec: &CorrelatedCohortSpec) -> Result<ScoringGain, TheoryError> {
    spec.validate()?;
    let n = spec.n;
    let posterior: Vec<f64> = (0..n).map(|k| posterior_correct(spec.p, spec.rho, n, k)).collect();
    let mut row = vec![false; n];
    let mut ind = Vec::with_capacity(spec.trials);
    let mut bat = Vec::with_capacity(spec.trials);
    let mut diff = Vec::with_capacity(spec.trials);
    for t in 0..spec.trials as u64 {
        sample_cohort(&mut spec.trial_rng(t), spec.p, spec.rho, &mut row);
        let correct = row.iter().filter(|&&z| z).count();
        let (mut bi, mut bb) = (0.0, 0.0);
        for &z in &row {
            let y = if z { 1.0 } else { 0.0 };
            let q = posterior[correct - usize::from(z)];
            bi += (spec.p - y) * (spec.p - y);
            bb += (q - y) * (q - y);
        }
        let (bi, bb) = (bi / n as f64, bb / n as f64);
        ind.push(bi);
        bat.push(bb);
        diff.push(bb - bi);
    }
    let (brier_independent, se_independent) = mean_and_se(&ind);
    let (brier_batch, se_batch) = mean_and_se(&bat);
    let (_, se_difference) = mean_and_se(&diff);
    Ok(ScoringGain {
        p: spec.p,
        rho: spec.rho,
        n,
        brier_independent,
        brier_batch,
        se_independent,
        se_batch,
        se_difference,
    })
}

/// How a simulated item gets its confidence. Each item has a noisy
/// signal `s = z*a + (1-z)*b + N(0, sigma^2)` and sees how many peers
/// agree with it; confidence is the posterior log-odds from the prior,
/// the signal, and `consensus_weight` times the agreement evidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceModel {
    pub signal_correct: f64,
    pub signal_incorrect: f64,
    pub noise_sd: f64,
    pub consensus_weight: f64,
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        Self {
            signal_correct: 0.8,
            signal_incorrect: 0.4,
            noise_sd: 0.3,
            consensus_weight: 1.0,
        }
    }
}

impl ConfidenceModel {
    pub fn validate(&self) -> Result<(), TheoryError> {
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(TheoryError::BadModel(format!("noise_sd {}", self.noise_sd)));
        }
        if !(self.consensus_weight >= 0.0 && self.consensus_weight.is_finite()) {
            return Err(TheoryError::BadModel(format!("consensus_weight {}", self.consensus_weight)));
        }
        if !self.signal_correct.is_finite() || !self.signal_incorrect.is_finite() {
            return Err(TheoryError::BadModel(String::from("non-finite signal mean")));
        }
        Ok(())
    }

    fn signal_llr(&self, s: f64) -> f64 {
        let (a, b) = (self.signal_correct, self.signal_incorrect);
        ((s - b) * (s - b) - (s - a) * (s - a)) / (2.0 * self.noise_sd * self.noise_sd)
    }
}

/// Log-likelihood ratio of "correct" vs "incorrect" for an item that sees
/// `agree` of its `n - 1` peers sharing its correctness.
pub fn agreement_llr(p: f64, rho: f64, n: usize, agree: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let if_correct = peer_count_likelihood(p, rho, n, agree, true);
    let if_incorrect = peer_count_likelihood(p, rho, n, n - 1 - agree, false);
    libm::log(if_correct) - libm::log(if_incorrect)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsExperiment {
    pub p: f64,
    pub rho_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub model: ConfidenceModel,
    pub trials: usize,
    pub seed: u64,
    /// Cluster-bootstrap replicates (resampling whole cohorts).
    pub bootstrap: usize,
}

impl KsExperiment {
    pub fn new(p: f64, rho_grid: Vec<f64>, n_grid: Vec<usize>, trials: usize, seed: u64) -> Self {
        Self {
            p,
            rho_grid,
            n_grid,
            model: ConfidenceModel::default(),
            trials,
            seed,
            bootstrap: 40,
        }
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        check_p(self.p)?;
        if self.rho_grid.is_empty() || self.n_grid.is_empty() {
            return Err(TheoryError::EmptyGrid);
        }
        for &rho in &self.rho_grid {
            check_rho(rho)?;
        }
        if self.n_grid.contains(&0) {
            return Err(TheoryError::BadN);
        }
        if self.trials == 0 {
            return Err(TheoryError::NoTrials);
        }
        self.model.validate()
    }

    /// Grid cells in (n, rho) order with their derived seeds.
    pub fn cells(&self) -> Vec<CorrelatedCohortSpec> {
        let mut out = Vec::new();
        for (i, &n) in self.n_grid.iter().enumerate() {
            for (j, &rho) in self.rho_grid.iter().enumerate() {
                let cell = (i * self.rho_grid.len() + j) as u64;
                out.push(CorrelatedCohortSpec {
                    p: self.p,
                    rho,
                    n,
                    trials: self.trials,
                    seed: cell_seed(self.seed, cell),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsRow {
    pub n: usize,
    pub rho: f64,
    pub n_eff: f64,
    pub ks: f64,
    /// Bootstrap standard error of `ks`.
    pub se: f64,
}

/// One grid cell: simulate, score, compute KS and its bootstrap error.
pub fn ks_cell(
    spec: &CorrelatedCohortSpec,
    model: &ConfidenceModel,
    bootstrap: usize,
) -> Result<KsRow, TheoryError> {
    spec.validate()?;
    model.validate()?;
    let n = spec.n;
    let noise = Normal::new(0.0, model.noise_sd).map_err(|e| TheoryError::BadModel(format!("{e}")))?;
    let prior = libm::log(spec.p / (1.0 - spec.p));
    let agree_llr: Vec<f64> = (0..n).map(|a| agreement_llr(spec.p, spec.rho, n, a)).collect();

    let mut correct = vec![false; spec.trials * n];
    let mut conf = vec![0.0; spec.trials * n];
    for t in 0..spec.trials {
        let mut rng = spec.trial_rng(t as u64);
        let row = &mut correct[t * n..(t + 1) * n];
        sample_cohort(&mut rng, spec.p, spec.rho, row);
        let k = row.iter().filter(|&&z| z).count();
        for i in 0..n {
            let z = row[i];
            let mean = if z { model.signal_correct } else { model.signal_incorrect };
            let s = mean + noise.sample(&mut rng);
            // peers sharing this item's correctness
            let agree = if z { k - 1 } else { n - k - 1 };
            let logit = prior + model.signal_llr(s) + model.consensus_weight * agree_llr[agree];
            conf[t * n + i] = sigmoid(logit);
        }
    }

    let split = |trials: &mut dyn Iterator<Item = usize>| -> (Vec<f64>, Vec<f64>) {
        let (mut good, mut bad) = (Vec::new(), Vec::new());
        for t in trials {
            for idx in t * n..(t + 1) * n {
                if correct[idx] {
                    good.push(conf[idx]);
                } else {
                    bad.push(conf[idx]);
                }
            }
        }
        (good, bad)
    };
    let ks_of = |(good, bad): (Vec<f64>, Vec<f64>)| ks_statistic(&good, &bad).unwrap_or(0.0);
    let ks = ks_of(split(&mut (0..spec.trials)));

    let se = if bootstrap >= 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xB007_5742_u64);
        let reps: Vec<f64> = (0..bootstrap)
            .map(|_| {
                let mut picks = (0..spec.trials).map(|_| rng.random_range(0..spec.trials));
                ks_of(split(&mut picks))
            })
            .collect();
        let (_, se_of_mean) = mean_and_se(&reps);
        se_of_mean * libm::sqrt(reps.len() as f64)
    } else {
        0.0
    };
    Ok(KsRow {
        n,
        rho: spec.rho,
        n_eff: n_eff(n, spec.rho)?,
        ks,
        se,
    })
}

/// Rows sorted by `n_eff` (ties keep grid order).
pub fn ks_separation_experiment(exp: &KsExperiment) -> Result<Vec<KsRow>, TheoryError> {
    exp.validate()?;
    let mut rows = exp
        .cells()
        .iter()
        .map(|c| ks_cell(c, &exp.model, exp.bootstrap))
        .collect::<Result<Vec<_>, _>>()?;
    sort_by_n_eff(&mut rows);
    Ok(rows)
}

pub fn sort_by_n_eff(rows: &mut [KsRow]) {
    rows.sort_by(|a, b| a.n_eff.total_cmp(&b.n_eff));
}

/// Pairs `(lower, higher)` where `higher` has at least the batch size and at
/// most the correlation of `lower`, yet its KS falls below `lower`'s by more
/// than `k` combined standard errors.
pub fn ks_trend_violations(rows: &[KsRow], k: f64) -> Vec<(KsRow, KsRow)> {
    let mut out = Vec::new();
    for lo in rows {
        for hi in rows {
            let dominates = hi.n >= lo.n && hi.rho <= lo.rho && (hi.n, hi.rho.to_bits()) != (lo.n, lo.rho.to_bits());
            if !dominates || hi.n_eff <= lo.n_eff {
                continue;
            }
            let tol = k * libm::sqrt(lo.se * lo.se + hi.se * hi.se);
            if hi.ks < lo.ks - tol {
                out.push((*lo, *hi));
            }
        }
    }
    out
}

/// Pairs ordered by `n_eff` alone whose KS decreases beyond tolerance.
pub fn ks_total_order_inversions(rows: &[KsRow], k: f64) -> Vec<(KsRow, KsRow)> {
    let mut out = Vec::new();
    for lo in rows {
        for hi in rows {
            if hi.n_eff > lo.n_eff && hi.ks < lo.ks - k * libm::sqrt(lo.se * lo.se + hi.se * hi.se) {
                out.push((*lo, *hi));
            }
        }
    }
    out
}

/// Largest pairwise KS gap measured in combined standard errors.
pub fn ks_max_spread_z(rows: &[KsRow]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            let se = libm::sqrt(a.se * a.se + b.se * b.se);
            let gap = libm::fabs(a.ks - b.ks);
            let z = if se > 0.0 {
                gap / se
            } else if gap == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModelParams {
    pub t_inst: f64,
    pub t_ctx: f64,
    pub t_out: f64,
    pub s_coeff: f64,
    pub s_exponent: f64,
}

impl CostModelParams {
    pub fn validate(&self) -> Result<(), TheoryError> {
        for (name, v) in [
            ("t_inst", self.t_inst),
            ("t_ctx", self.t_ctx),
            ("t_out", self.t_out),
            ("s_coeff", self.s_coeff),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TheoryError::BadCostParams(format!("{name} = {v}")));
            }
        }
        if !(self.s_exponent > 0.0 && self.s_exponent <= 1.0) {
            return Err(TheoryError::BadCostParams(format!("s_exponent = {}", self.s_exponent)));
        }
        Ok(())
    }

    /// Joint reflector output length `c * N^beta`.
    pub fn joint_output(&self, n: usize) -> f64 {
        self.s_coeff * libm::pow(n as f64, self.s_exponent)
    }
}

pub fn cost_ind(n: usize, params: &CostModelParams) -> f64 {
    n as f64 * (params.t_inst + params.t_ctx + params.t_out)
}

pub fn cost_bot(n: usize, params: &CostModelParams) -> f64 {
    params.t_inst + n as f64 * params.t_ctx + params.joint_output(n)
}

/// Least-squares slope of `ln S` on `ln N`.
pub fn fit_s_exponent(log: &[(usize, f64)]) -> Result<f64, TheoryError> {
    let pts: Vec<(f64, f64)> = log
        .iter()
        .filter(|(n, s)| *n >= 1 && *s > 0.0)
        .map(|&(n, s)| (libm::log(n as f64), libm::log(s)))
        .collect();
    let first = pts.first().ok_or(TheoryError::InsufficientPoints)?.0;
    if pts.iter().all(|p| p.0 == first) {
        return Err(TheoryError::InsufficientPoints);
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    /// "i" through "iv".
    pub condition: String,
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

/// Thresholds the theory leaves symbolic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectivenessThresholds {
    pub kappa_min: f64,
    pub n_min: usize,
    /// Upper end of the "moderate" correlation band.
    pub rho_max: f64,
}

impl Default for EffectivenessThresholds {
    fn default() -> Self {
        Self {
            kappa_min: 0.5,
            n_min: 4,
            rho_max: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivenessReport {
    pub kappa: f64,
    pub rho: f64,
    pub n: usize,
    pub n_eff: f64,
    pub conditions: Vec<ConditionCheck>,
}

impl EffectivenessReport {
    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.status == CheckStatus::Pass)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &ConditionCheck> {
        self.conditions.iter().filter(|c| c.status == CheckStatus::Warn)
    }
}

pub fn effectiveness_report(
    kappa_hat: f64,
    rho_hat: f64,
    n: usize,
    th: &EffectivenessThresholds,
) -> Result<EffectivenessReport, TheoryError> {
    let ne = n_eff(n, rho_hat)?;
    let check = |id: &str, name: &str, ok: bool, detail: String| ConditionCheck {
        condition: String::from(id),
        name: String::from(name),
        status: if ok { CheckStatus::Pass } else { CheckStatus::Warn },
        detail,
    };
    let coherence = if kappa_hat > th.kappa_min {
        format!("kappa {kappa_hat:.3} > {:.3}", th.kappa_min)
    } else {
        format!("low coherence: kappa {kappa_hat:.3} <= {:.3}", th.kappa_min)
    };
    let correlation = if rho_hat <= 0.0 {
        String::from("no error correlation")
    } else if rho_hat >= th.rho_max {
        format!("high correlation, N_eff\u{2192}1/\u{3c1} ({:.3})", 1.0 / rho_hat)
    } else {
        format!("rho {rho_hat:.3} in (0, {:.3})", th.rho_max)
    };
    let informative = n >= 2 && rho_hat > 0.0;
    let info_detail = if informative {
        format!("N_eff = {ne:.2} of N = {n}")
    } else if n < 2 {
        String::from("single item, no peers")
    } else {
        format!("uncorrelated errors, peers carry no signal (N_eff = {ne:.2})")
    };
    let size = if n >= th.n_min {
        format!("N = {n} >= {}", th.n_min)
    } else {
        format!("insufficient size: N = {n} < {}", th.n_min)
    };
    Ok(EffectivenessReport {
        kappa: kappa_hat,
        rho: rho_hat,
        n,
        n_eff: ne,
        conditions: vec![
            check("i", "coherence", kappa_hat > th.kappa_min, coherence),
            check(
                "ii",
                "moderate correlation",
                rho_hat > 0.0 && rho_hat < th.rho_max,
                correlation,
            ),
            check("iii", "informative batch statistics", informative, info_detail),
            check("iv", "adequate batch size", n >= th.n_min, size),
        ],
    })
}
