//! End-to-end experiment: proxy labels, then one sampling loop per (β, seed).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::domain::{UserId, World};
use crate::error::{Error, IoError};
use crate::features::{build_user_features, FeatureMatrix};
use crate::fgis::{run_loop, FgisConfig, StepRecord};
use crate::io::{read_records, write_records};
use crate::sakm::{proxy_labels, ProxyLabels};

/// Features and proxy labels for every user of `world`.
pub fn cluster(world: &World, config: &RunConfig) -> Result<(FeatureMatrix, ProxyLabels), Error> {
    let features = build_user_features(world, config.features.dim, config.features.seed);
    let labels = proxy_labels(world, &features, config.sakm.mode, &config.sakm.params())?;
    Ok((features, labels))
}

pub fn cell_path(dir: &Path, beta: f64, seed: u64) -> PathBuf {
    dir.join(format!("beta_{beta}_seed_{seed}.jsonl"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub beta: f64,
    pub seed: u64,
    pub records: Vec<StepRecord>,
    /// Loaded from an existing results file rather than recomputed.
    pub resumed: bool,
}

/// Runs every (β, seed) cell in parallel, writing
/// `beta_<β>_seed_<seed>.jsonl` under `results_dir`. Cells whose file already
/// exists are read back instead of rerun; files are written to a temporary
/// name and renamed, so an interrupted run never leaves a partial cell.
pub fn run_experiment<L>(
    world: &World,
    label_of: L,
    config: &RunConfig,
    betas: &[f64],
    seeds: &[u64],
    results_dir: &Path,
) -> Result<Vec<CellResult>, Error>
where
    L: Fn(UserId) -> Option<usize> + Sync,
{
    fs::create_dir_all(results_dir).map_err(|source| IoError::Io { path: results_dir.to_path_buf(), source })?;
    let cells: Vec<(f64, u64)> = betas.iter().flat_map(|&b| seeds.iter().map(move |&s| (b, s))).collect();
    let results: Vec<Result<CellResult, Error>> = cells
        .par_iter()
        .map(|&(beta, seed)| {
            let path = cell_path(results_dir, beta, seed);
            if path.exists() {
                log::info!("resuming {}", path.display());
                return Ok(CellResult { beta, seed, records: read_records(&path)?, resumed: true });
            }
            let fgis = FgisConfig { beta, seed, ..config.fgis.clone() };
            let outcome = run_loop(world, &label_of, &config.predictor, &fgis, config.metric_k)?;
            if outcome.stopped_early {
                log::warn!("beta={beta} seed={seed}: stopped after {} rounds", outcome.records.len());
            }
            let tmp = path.with_extension("jsonl.tmp");
            write_records(&outcome.records, &tmp)?;
            fs::rename(&tmp, &path).map_err(|source| IoError::Io { path: path.clone(), source })?;
            Ok(CellResult { beta, seed, records: outcome.records, resumed: false })
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    write_timings(&results, results_dir)?;
    Ok(results)
}

/// Appends per-step wall-clock times of freshly computed cells.
fn write_timings(results: &[CellResult], dir: &Path) -> Result<(), IoError> {
    let path = dir.join("timings.csv");
    let existed = path.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|source| IoError::Io { path: path.clone(), source })?;
    let mut out = std::io::BufWriter::new(file);
    let io = |source| IoError::Io { path: path.clone(), source };
    if !existed {
        writeln!(out, "beta,seed,t,wall_clock_ms").map_err(io)?;
    }
    for cell in results.iter().filter(|c| !c.resumed) {
        for r in &cell.records {
            writeln!(out, "{},{},{},{}", cell.beta, cell.seed, r.t, r.wall_clock_ms).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Every `*.jsonl` record under `dir`, ordered by (β, seed, t).
pub fn load_results(dir: &Path) -> Result<Vec<StepRecord>, IoError> {
    let entries = fs::read_dir(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
    let mut records = Vec::new();
    for entry in entries {
        let path = entry.map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?.path();
        if path.extension().is_some_and(|e| e == "jsonl") {
            records.extend(read_records(&path)?);
        }
    }
    records.sort_by(|a, b| a.beta.total_cmp(&b.beta).then(a.seed.cmp(&b.seed)).then(a.t.cmp(&b.t)));
    Ok(records)
}
