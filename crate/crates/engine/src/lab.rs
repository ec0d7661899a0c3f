//! Parallel drivers for the theory experiments, plus CSV output.
//!
//! Every trial draws from its own counter-seeded generator, so results are
//! identical whatever the thread count.

use std::path::Path;

use bot_core::theory::{
    cell_seed, cost_bot, cost_ind, fit_s_exponent, ks_cell, n_eff, sort_by_n_eff, variance_from_means, batch_means,
    scoring_gain_experiment, CorrelatedCohortSpec, CostModelParams, KsExperiment, KsRow, ScoringGain, TheoryError,
    VarianceCheck,
};
use bot_core::TokenUsage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Trials per work unit when one cell is split across threads.
const CHUNK: u64 = 8192;

/// Cells of a `p × rho × n` grid in that nesting order, each with its own seed.
pub fn grid(ps: &[f64], rhos: &[f64], ns: &[usize], trials: usize, seed: u64) -> Vec<CorrelatedCohortSpec> {
    let mut out = Vec::with_capacity(ps.len() * rhos.len() * ns.len());
    for &p in ps {
        for &rho in rhos {
            for &n in ns {
                out.push(CorrelatedCohortSpec {
                    p,
                    rho,
                    n,
                    trials,
                    seed: cell_seed(seed, out.len() as u64),
                });
            }
        }
    }
    out
}

/// Monte Carlo `Var(M_N)` against the closed form, one row per cell.
pub fn variance_grid(cells: &[CorrelatedCohortSpec]) -> Result<Vec<VarianceCheck>, TheoryError> {
    cells
        .par_iter()
        .map(|spec| {
            spec.validate()?;
            let t = spec.trials as u64;
            let chunks: Vec<u64> = (0..t.div_ceil(CHUNK)).collect();
            let means: Vec<f64> = chunks
                .par_iter()
                .flat_map_iter(|&c| batch_means(spec, c * CHUNK..((c + 1) * CHUNK).min(t)))
                .collect();
            variance_from_means(spec, &means)
        })
        .collect()
}

pub fn scoring_grid(cells: &[CorrelatedCohortSpec]) -> Result<Vec<ScoringGain>, TheoryError> {
    cells.par_iter().map(scoring_gain_experiment).collect()
}

/// Same rows as `ks_separation_experiment`, computed in parallel.
pub fn ks_grid(exp: &KsExperiment) -> Result<Vec<KsRow>, TheoryError> {
    exp.validate()?;
    let mut rows = exp
        .cells()
        .par_iter()
        .map(|c| ks_cell(c, &exp.model, exp.bootstrap))
        .collect::<Result<Vec<_>, _>>()?;
    sort_by_n_eff(&mut rows);
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NEffRow {
    pub n: usize,
    pub rho: f64,
    pub n_eff: f64,
}

pub fn n_eff_table(ns: &[usize], rhos: &[f64]) -> Result<Vec<NEffRow>, TheoryError> {
    let mut out = Vec::new();
    for &n in ns {
        for &rho in rhos {
            out.push(NEffRow {
                n,
                rho,
                n_eff: n_eff(n, rho)?,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub n: usize,
    pub cost_ind: f64,
    pub cost_bot: f64,
    pub ratio: f64,
}

pub fn cost_curve(params: &CostModelParams, ns: impl IntoIterator<Item = usize>) -> Result<Vec<CostRow>, TheoryError> {
    params.validate()?;
    Ok(ns
        .into_iter()
        .map(|n| {
            let (ind, bot) = (cost_ind(n, params), cost_bot(n, params));
            CostRow {
                n,
                cost_ind: ind,
                cost_bot: bot,
                ratio: bot / ind,
            }
        })
        .collect())
}

/// Reflector usage of one batch of `n` items.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectorSample {
    pub n: usize,
    pub usage: TokenUsage,
}

/// Cost-model parameters from measured reflector calls.
///
/// Input tokens are regressed on batch size (`T_inst + n*T_ctx`), output
/// tokens are fitted to `c * n^beta` in log space with `beta` capped at 1.
/// `T_out` is the mean output of single-item calls, or `S(1)` when there
/// are none.
pub fn estimate_cost_params(samples: &[ReflectorSample]) -> Result<CostModelParams, TheoryError> {
    let mut sizes: Vec<usize> = samples.iter().map(|s| s.n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 2 || sizes[0] == 0 {
        return Err(TheoryError::InsufficientPoints);
    }
    let k = samples.len() as f64;
    let mx = samples.iter().map(|s| s.n as f64).sum::<f64>() / k;
    let my = samples.iter().map(|s| s.usage.input_tokens as f64).sum::<f64>() / k;
    let sxx: f64 = samples.iter().map(|s| (s.n as f64 - mx).powi(2)).sum();
    let sxy: f64 = samples
        .iter()
        .map(|s| (s.n as f64 - mx) * (s.usage.input_tokens as f64 - my))
        .sum();
    let t_ctx = sxy / sxx;
    let t_inst = my - t_ctx * mx;

    let log: Vec<(usize, f64)> = samples.iter().map(|s| (s.n, s.usage.output_tokens as f64)).collect();
    let beta = fit_s_exponent(&log)?.min(1.0);
    let lx = log.iter().map(|(n, _)| (*n as f64).ln()).sum::<f64>() / k;
    let ly = log.iter().map(|(_, y)| y.max(1.0).ln()).sum::<f64>() / k;
    let s_coeff = (ly - beta * lx).exp();
    let singles: Vec<f64> = log.iter().filter(|(n, _)| *n == 1).map(|(_, y)| *y).collect();
    let t_out = if singles.is_empty() {
        s_coeff
    } else {
        singles.iter().sum::<f64>() / singles.len() as f64
    };
    let params = CostModelParams {
        t_inst: t_inst.max(0.0),
        t_ctx: t_ctx.max(0.0),
        t_out,
        s_coeff,
        s_exponent: beta,
    };
    params.validate()?;
    Ok(params)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
