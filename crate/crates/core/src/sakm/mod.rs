//! Size-Aware K-Means.
//!
//! Lloyd iterations whose assignment cost carries a per-cluster Lagrange
//! multiplier, `‖x − μ_g‖² + λ_g`, with dual ascent
//! `λ_g ← λ_g + η (n_g/N − π′_g)` after every centroid update. Because a
//! random initialisation rarely lines each centroid up with the part of the
//! data whose mass matches its target, the inner loop is run for every
//! permutation π′ of the targets and for several seeded k-means++ restarts,
//! keeping the run of lowest inertia.

mod proxy;

pub use proxy::{
    calibration_points, calibration_slope, global_targets, proxy_labels, unit_scale, ProxyLabels, ProxyMode, RegionFit,
};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SakmError;
use crate::matrix::{squared_distance, Matrix};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SakmParams {
    /// Multiplier step size η.
    pub eta: f64,
    /// Centroid-shift tolerance τ.
    pub tau: f64,
    /// Maximum inner iterations T.
    pub max_iter: usize,
    pub n_init: usize,
    pub seed: u64,
    /// Upper bound on k! permutations searched.
    pub max_permutations: u64,
}

impl Default for SakmParams {
    fn default() -> Self {
        Self { eta: 1.0, tau: 1e-4, max_iter: 50, n_init: 2, seed: 0, max_permutations: 720 }
    }
}

impl SakmParams {
    pub fn validate(&self) -> Result<(), SakmError> {
        let bad = |m: &str| Err(SakmError::InvalidConfig(m.to_string()));
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be finite and non-negative");
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return bad("tau must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if self.n_init == 0 {
            return bad("n_init must be at least 1");
        }
        Ok(())
    }
}

/// Target proportions plus hyper-parameters; `k` is `pi.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct SakmConfig {
    pub pi: Vec<f64>,
    pub params: SakmParams,
}

impl SakmConfig {
    pub fn new(pi: Vec<f64>, params: SakmParams) -> Result<Self, SakmError> {
        let config = Self { pi, params };
        config.validate()?;
        Ok(config)
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn validate(&self) -> Result<(), SakmError> {
        if self.pi.is_empty() {
            return Err(SakmError::InvalidConfig("need at least one cluster".into()));
        }
        if self.pi.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(SakmError::InvalidConfig("target proportions must be non-negative".into()));
        }
        let sum: f64 = self.pi.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SakmError::InvalidConfig(format!("target proportions sum to {sum}")));
        }
        self.params.validate()
    }
}

fn check_shapes(x: &Matrix, centroids: &Matrix, lambdas: &[f64]) -> Result<(), SakmError> {
    if centroids.rows() != lambdas.len() {
        return Err(SakmError::Dimension(format!("{} centroids but {} multipliers", centroids.rows(), lambdas.len())));
    }
    if centroids.cols() != x.cols() {
        return Err(SakmError::Dimension(format!(
            "centroids have {} columns, data has {}",
            centroids.cols(),
            x.cols()
        )));
    }
    Ok(())
}

/// Penalised nearest-centroid assignment; ties go to the lowest cluster index.
pub fn assign_step(x: &Matrix, centroids: &Matrix, lambdas: &[f64]) -> Result<Vec<usize>, SakmError> {
    check_shapes(x, centroids, lambdas)?;
    if !x.is_finite() {
        return Err(SakmError::NonFinite("features"));
    }
    if !centroids.is_finite() || lambdas.iter().any(|l| !l.is_finite()) {
        return Err(SakmError::NonFinite("centroids"));
    }
    Ok(x.iter_rows()
        .map(|row| {
            let mut best = 0;
            let mut best_cost = f64::INFINITY;
            for (j, (mu, lambda)) in centroids.iter_rows().zip(lambdas).enumerate() {
                let cost = squared_distance(row, mu) + lambda;
                if cost < best_cost {
                    best = j;
                    best_cost = cost;
                }
            }
            best
        })
        .collect())
}

/// Assignment used inside the inner loop. Identical to [`assign_step`] except
/// on exact cost ties, which go to the tied cluster with the most remaining
/// quota `π′_g N − n_g` (then lowest index). Without this, coincident points
/// can never be split across clusters.
fn assign_with_quota(x: &Matrix, centroids: &Matrix, lambdas: &[f64], pi: &[f64]) -> Vec<usize> {
    let k = centroids.rows();
    let n = x.rows() as f64;
    let mut counts = vec![0usize; k];
    let mut costs = vec![0.0; k];
    x.iter_rows()
        .map(|row| {
            for (j, (mu, lambda)) in centroids.iter_rows().zip(lambdas).enumerate() {
                costs[j] = squared_distance(row, mu) + lambda;
            }
            let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
            let mut best = usize::MAX;
            let mut best_quota = f64::NEG_INFINITY;
            for j in 0..k {
                if costs[j] == min {
                    let quota = pi[j] * n - counts[j] as f64;
                    if quota > best_quota {
                        best = j;
                        best_quota = quota;
                    }
                }
            }
            counts[best] += 1;
            best
        })
        .collect()
}

/// Cluster means; an empty cluster keeps its row from `previous`.
pub fn update_centroids(x: &Matrix, assignments: &[usize], previous: &Matrix) -> Matrix {
    let k = previous.rows();
    let mut sums = Matrix::zeros(k, x.cols());
    let mut counts = vec![0usize; k];
    for (row, &c) in x.iter_rows().zip(assignments) {
        counts[c] += 1;
        for (s, v) in sums.row_mut(c).iter_mut().zip(row) {
            *s += v;
        }
    }
    for (j, &count) in counts.iter().enumerate() {
        if count == 0 {
            sums.row_mut(j).copy_from_slice(previous.row(j));
        } else {
            let inv = count as f64;
            for s in sums.row_mut(j) {
                *s /= inv;
            }
        }
    }
    sums
}

/// Dual ascent on the size constraints.
pub fn update_multipliers(lambdas: &[f64], counts: &[usize], n: usize, pi: &[f64], eta: f64) -> Vec<f64> {
    assert!(n > 0, "multiplier update needs at least one point");
    lambdas.iter().zip(counts).zip(pi).map(|((&l, &c), &p)| l + eta * (c as f64 / n as f64 - p)).collect()
}

pub fn cluster_counts(assignments: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for &a in assignments {
        counts[a] += 1;
    }
    counts
}

pub fn inertia(x: &Matrix, assignments: &[usize], centroids: &Matrix) -> f64 {
    x.iter_rows().zip(assignments).map(|(row, &c)| squared_distance(row, centroids.row(c))).sum()
}

/// State after one inner iteration, handed to observers.
#[derive(Debug)]
pub struct Iterate<'a> {
    pub iteration: usize,
    pub assignments: &'a [usize],
    pub centroids: &'a Matrix,
    pub lambdas: &'a [f64],
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerRun {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    pub lambdas: Vec<f64>,
    pub counts: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

pub fn run_inner_loop(
    x: &Matrix,
    init_centroids: &Matrix,
    pi: &[f64],
    params: &SakmParams,
) -> Result<InnerRun, SakmError> {
    run_inner_loop_observed(x, init_centroids, pi, params, |_| {})
}

/// [`run_inner_loop`] that reports every iterate to `observer`.
pub fn run_inner_loop_observed<F>(
    x: &Matrix,
    init_centroids: &Matrix,
    pi: &[f64],
    params: &SakmParams,
    mut observer: F,
) -> Result<InnerRun, SakmError>
where
    F: FnMut(&Iterate<'_>),
{
    let k = init_centroids.rows();
    if pi.len() != k {
        return Err(SakmError::Dimension(format!("{k} centroids but {} targets", pi.len())));
    }
    if x.rows() == 0 {
        return Err(SakmError::TooFewPoints { k, n: 0 });
    }
    let mut lambdas = vec![0.0; k];
    check_shapes(x, init_centroids, &lambdas)?;
    // Checked once; later centroids are means of finite rows.
    if !x.is_finite() {
        return Err(SakmError::NonFinite("features"));
    }
    if !init_centroids.is_finite() {
        return Err(SakmError::NonFinite("centroids"));
    }
    let mut assignments = Vec::new();
    let mut centroids = init_centroids.clone();
    let mut iterations = 0;
    for t in 1..=params.max_iter {
        assignments = assign_with_quota(x, &centroids, &lambdas, pi);
        let updated = update_centroids(x, &assignments, &centroids);
        let counts = cluster_counts(&assignments, k);
        lambdas = update_multipliers(&lambdas, &counts, x.rows(), pi, params.eta);
        let shift = updated
            .iter_rows()
            .zip(centroids.iter_rows())
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        iterations = t;
        observer(&Iterate { iteration: t, assignments: &assignments, centroids: &centroids, lambdas: &lambdas, shift });
        if shift < params.tau {
            break;
        }
    }
    let counts = cluster_counts(&assignments, k);
    let inertia = inertia(x, &assignments, &centroids);
    Ok(InnerRun { assignments, centroids, lambdas, counts, inertia, iterations })
}

/// Seeded k-means++ initialisation. Falls back to a uniform pick when every
/// remaining point coincides with a chosen centroid.
pub fn kmeans_plus_plus<R: Rng>(x: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = x.rows();
    let mut centroids = Matrix::zeros(k, x.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = x.iter_rows().map(|r| squared_distance(r, x.row(first))).collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(j).copy_from_slice(x.row(pick));
        for (d, r) in d2.iter_mut().zip(x.iter_rows()) {
            *d = d.min(squared_distance(r, x.row(pick)));
        }
    }
    centroids
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..k).collect();
    let mut out = vec![current.clone()];
    loop {
        let Some(i) = (1..k).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let j = (i..k).rev().find(|&j| current[j] > current[i - 1]).expect("pivot exists");
        current.swap(i - 1, j);
        current[i..].reverse();
        out.push(current.clone());
    }
}

fn factorial(k: usize) -> u64 {
    (1..=k as u64).try_fold(1u64, |acc, v| acc.checked_mul(v)).unwrap_or(u64::MAX)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    pub lambdas: Vec<f64>,
    pub inertia: f64,
    /// `n_g / N` per cluster.
    pub achieved_proportions: Vec<f64>,
    /// Cluster `g` carries target `pi[permutation[g]]`.
    pub permutation: Vec<usize>,
    /// The permuted target vector π′.
    pub permuted_targets: Vec<f64>,
    pub iterations: usize,
    pub restart: usize,
}

impl ClusteringResult {
    /// Target index (group) of every point under the winning permutation.
    pub fn labels(&self) -> Vec<usize> {
        self.assignments.iter().map(|&c| self.permutation[c]).collect()
    }

    /// Achieved proportions re-indexed by target position.
    pub fn achieved_by_target(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.permutation.len()];
        for (c, &g) in self.permutation.iter().enumerate() {
            out[g] = self.achieved_proportions[c];
        }
        out
    }
}

/// Runs the inner loop for every (restart, permutation) pair and keeps the
/// lowest inertia, ties resolved by restart then permutation index.
pub fn sakm_fit(x: &Matrix, config: &SakmConfig) -> Result<ClusteringResult, SakmError> {
    config.validate()?;
    let k = config.k();
    if x.rows() < k {
        return Err(SakmError::TooFewPoints { k, n: x.rows() });
    }
    let count = factorial(k);
    if count > config.params.max_permutations {
        return Err(SakmError::TooManyPermutations { k, count, limit: config.params.max_permutations });
    }
    if !x.is_finite() {
        return Err(SakmError::NonFinite("features"));
    }
    let perms = permutations(k);
    let inits: Vec<Matrix> = (0..config.params.n_init)
        .map(|s| kmeans_plus_plus(x, k, &mut stream(config.params.seed, Domain::SakmInit, s as u64)))
        .collect();

    let jobs: Vec<(usize, usize)> = (0..inits.len()).flat_map(|s| (0..perms.len()).map(move |p| (s, p))).collect();
    let runs: Vec<(usize, usize, InnerRun)> = jobs
        .par_iter()
        .map(|&(s, p)| {
            let targets: Vec<f64> = perms[p].iter().map(|&g| config.pi[g]).collect();
            run_inner_loop(x, &inits[s], &targets, &config.params).map(|r| (s, p, r))
        })
        .collect::<Result<_, _>>()?;

    let n = x.rows() as f64;
    // Different permutations often converge to the same partition; among
    // equal-inertia runs prefer the one whose sizes match its own targets.
    let deviation = |p: usize, r: &InnerRun| -> f64 {
        perms[p].iter().zip(&r.counts).map(|(&g, &c)| (c as f64 / n - config.pi[g]).abs()).sum()
    };
    let (restart, p, best) = runs
        .into_iter()
        .min_by(|a, b| {
            a.2.inertia
                .total_cmp(&b.2.inertia)
                .then(deviation(a.1, &a.2).total_cmp(&deviation(b.1, &b.2)))
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        })
        .expect("at least one run");
    let permutation = perms[p].clone();
    Ok(ClusteringResult {
        achieved_proportions: best.counts.iter().map(|&c| c as f64 / n).collect(),
        permuted_targets: permutation.iter().map(|&g| config.pi[g]).collect(),
        permutation,
        assignments: best.assignments,
        centroids: best.centroids,
        lambdas: best.lambdas,
        inertia: best.inertia,
        iterations: best.iterations,
        restart,
    })
}
