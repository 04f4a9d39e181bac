//! Aggregation of per-seed step records into per-(β, t) summaries.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fgis::StepRecord;
use crate::rng::{stream, Domain};

/// Median of a non-empty slice; mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile-bootstrap 95% interval for the median.
///
/// A single replicate gives the degenerate interval `(x, x)`.
pub fn bootstrap_median_ci(values: &[f64], resamples: usize, seed: u64, index: u64) -> Option<(f64, f64)> {
    let point = median(values)?;
    if values.len() == 1 || resamples == 0 {
        return Some((point, point));
    }
    let mut rng = stream(seed, Domain::Bootstrap, index);
    let mut buf = vec![0.0; values.len()];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[rng.random_range(0..values.len())];
            }
            median(&buf).expect("non-empty")
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    Some((quantile(&stats, 0.025), quantile(&stats, 0.975)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub beta: f64,
    pub t: usize,
    pub n_seeds: usize,
    pub tdpv_median: Option<f64>,
    pub tdpv_lo: Option<f64>,
    pub tdpv_hi: Option<f64>,
    pub acc_median: Option<f64>,
    pub acc_lo: Option<f64>,
    pub acc_hi: Option<f64>,
}

/// Groups records by (β, t) and summarises TDPV and overall accuracy across
/// seeds. Rows are ordered by β then t.
pub fn summarize(records: &[StepRecord], resamples: usize, seed: u64) -> Vec<SummaryRow> {
    type Cell = (f64, Vec<f64>, Vec<f64>, usize);
    let mut cells: BTreeMap<(u64, usize), Cell> = BTreeMap::new();
    for r in records {
        let key = (ordered_bits(r.beta), r.t);
        let cell = cells.entry(key).or_insert_with(|| (r.beta, Vec::new(), Vec::new(), 0));
        cell.3 += 1;
        if let Some(v) = r.tdpv {
            cell.1.push(v);
        }
        if let Some(v) = r.acc_overall {
            cell.2.push(v);
        }
    }
    cells
        .into_iter()
        .enumerate()
        .map(|(i, ((_, t), (beta, tdpv, acc, n)))| {
            let i = 2 * i as u64;
            let tci = bootstrap_median_ci(&tdpv, resamples, seed, i);
            let aci = bootstrap_median_ci(&acc, resamples, seed, i + 1);
            SummaryRow {
                beta,
                t,
                n_seeds: n,
                tdpv_median: median(&tdpv),
                tdpv_lo: tci.map(|c| c.0),
                tdpv_hi: tci.map(|c| c.1),
                acc_median: median(&acc),
                acc_lo: aci.map(|c| c.0),
                acc_hi: aci.map(|c| c.1),
            }
        })
        .collect()
}

/// Sort key for non-negative finite floats.
fn ordered_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if x.is_sign_negative() {
        !b
    } else {
        b | (1 << 63)
    }
}

pub fn write_summary_csv(rows: &[SummaryRow], path: impl AsRef<std::path::Path>) -> Result<(), crate::error::IoError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)
        .map_err(|source| crate::error::IoError::Csv { path: path.to_path_buf(), source })?;
    for r in rows {
        w.serialize(r).map_err(|source| crate::error::IoError::Csv { path: path.to_path_buf(), source })?;
    }
    w.flush().map_err(|source| crate::error::IoError::Io { path: path.to_path_buf(), source })
}
