//! Information criteria, entropy-based uncertainty, MAP classification,
//! adjusted Rand index, and the (G, model) sweep.
//!
//! BIC convention: 2*loglik - df*log(n), larger is better. ICL subtracts
//! twice the total soft-assignment entropy from BIC.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BoundsSpec, Dataset};
use crate::ecm::{fit, FitConfig, FitResult, Responsibilities};
use crate::error::{Error, Result};
use crate::mixture::ModelCode;

/// Criterion values for one fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub loglik: f64,
    pub df: usize,
    pub n: usize,
    pub bic: f64,
    pub icl: f64,
    pub entropy_total: f64,
    pub nec: f64,
}

/// 2*loglik - df*log(n); larger is better.
pub fn bic(loglik: f64, df: usize, n: usize) -> f64 {
    2.0 * loglik - df as f64 * (n as f64).ln()
}

/// Entropy-penalized BIC.
pub fn icl(bic_value: f64, entropy_total: f64) -> f64 {
    bic_value - 2.0 * entropy_total
}

/// Per-observation entropies, their total, and the normalized entropy
/// criterion E / (n log G) (zero for G = 1).
pub fn entropy_measures(z: &Responsibilities) -> (Vec<f64>, f64, f64) {
    let m = z.matrix();
    let e: Vec<f64> = (0..z.n())
        .map(|i| {
            -(0..z.g())
                .map(|k| {
                    let p = m[(i, k)];
                    if p > 0.0 {
                        p * p.ln()
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        })
        .collect();
    let total: f64 = e.iter().sum();
    let nec = if z.g() > 1 {
        total / (z.n() as f64 * (z.g() as f64).ln())
    } else {
        0.0
    };
    (e, total, nec)
}

/// MAP rule: 1-based argmax labels (ties broken by lowest component index)
/// and per-observation uncertainties 1 - max_k z_ik.
pub fn map_classify(z: &Responsibilities) -> (Vec<usize>, Vec<f64>) {
    let m = z.matrix();
    let mut labels = Vec::with_capacity(z.n());
    let mut uncertainty = Vec::with_capacity(z.n());
    for i in 0..z.n() {
        let mut best_k = 0;
        let mut best_p = f64::NEG_INFINITY;
        for k in 0..z.g() {
            if m[(i, k)] > best_p {
                best_p = m[(i, k)];
                best_k = k;
            }
        }
        labels.push(best_k + 1);
        uncertainty.push(1.0 - best_p);
    }
    (labels, uncertainty)
}

/// Adjusted Rand index between two partitions (pair-counting form).
pub fn adjusted_rand(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::DimensionMismatch(format!(
            "partitions have lengths {} and {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let n = labels_a.len();
    let relabel = |labels: &[usize]| -> Vec<usize> {
        let mut seen = Vec::new();
        labels
            .iter()
            .map(|l| {
                if let Some(p) = seen.iter().position(|s| s == l) {
                    p
                } else {
                    seen.push(*l);
                    seen.len() - 1
                }
            })
            .collect()
    };
    let a = relabel(labels_a);
    let b = relabel(labels_b);
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);

    let mut table = vec![vec![0u64; kb]; ka];
    for i in 0..n {
        table[a[i]][b[i]] += 1;
    }
    let choose2 = |x: u64| -> f64 { (x as f64) * (x as f64 - 1.0) / 2.0 };
    let sum_cells: f64 = table.iter().flatten().map(|&x| choose2(x)).sum();
    let sum_rows: f64 = table
        .iter()
        .map(|row| choose2(row.iter().sum::<u64>()))
        .sum();
    let sum_cols: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|row| row[j]).sum::<u64>()))
        .sum();
    let total = choose2(n as u64);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-300 {
        // both partitions trivial
        return Ok(0.0);
    }
    Ok((sum_cells - expected) / (max_index - expected))
}

/// One cell of the sweep grid.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub g: usize,
    pub model: ModelCode,
    pub result: std::result::Result<FitResult, String>,
}

/// Grid of fits over (G, model) with the criterion winners.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    pub best_by_bic: Option<usize>,
    pub best_by_icl: Option<usize>,
}

impl SweepResult {
    pub fn best_bic_fit(&self) -> Option<&FitResult> {
        self.best_by_bic
            .and_then(|i| self.entries[i].result.as_ref().ok())
    }

    pub fn best_icl_fit(&self) -> Option<&FitResult> {
        self.best_by_icl
            .and_then(|i| self.entries[i].result.as_ref().ok())
    }
}

/// Fits every (G, model) combination independently (failures are recorded,
/// not propagated) and identifies the BIC and ICL winners.
pub fn sweep(
    data: &Dataset,
    bounds: &BoundsSpec,
    g_range: &[usize],
    models: &[ModelCode],
    base: &FitConfig,
) -> Result<SweepResult> {
    if g_range.is_empty() || models.is_empty() {
        return Err(Error::InvalidArgument("empty sweep grid".into()));
    }
    let grid: Vec<(usize, ModelCode)> = g_range
        .iter()
        .flat_map(|&g| models.iter().map(move |&m| (g, m)))
        .collect();

    let entries: Vec<SweepEntry> = grid
        .par_iter()
        .map(|&(g, model)| {
            let config = FitConfig {
                g,
                model,
                ..base.clone()
            };
            SweepEntry {
                g,
                model,
                result: fit(data, bounds, &config).map_err(|e| e.to_string()),
            }
        })
        .collect();

    let best_by = |key: fn(&FitResult) -> f64| -> Option<usize> {
        entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.result.as_ref().ok().map(|r| (i, key(r))))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    };
    let best_by_bic = best_by(|r| r.bic);
    let best_by_icl = best_by(|r| r.icl);
    if best_by_bic.is_none() {
        return Err(Error::AllFitsFailed);
    }
    Ok(SweepResult {
        entries,
        best_by_bic,
        best_by_icl,
    })
}
