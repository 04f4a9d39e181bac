//! Proxy group labels from size-constrained clustering with census targets.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sakm_fit, ClusteringResult, SakmConfig, SakmParams};
use crate::domain::{RegionId, UserId, World};
use crate::error::SakmError;
use crate::features::FeatureMatrix;
use crate::matrix::{squared_distance, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProxyMode {
    /// One fit per region with that region's census proportions as targets.
    #[default]
    PerRegion,
    /// One fit over all users with population-weighted average proportions.
    Global,
}

impl std::str::FromStr for ProxyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_region" => Ok(Self::PerRegion),
            "global" => Ok(Self::Global),
            other => Err(format!("unknown mode {other:?}, expected per_region or global")),
        }
    }
}

/// Summary of one clustering fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFit {
    /// `None` for the global fit.
    pub region: Option<RegionId>,
    pub n_users: usize,
    /// Target proportions, indexed by group.
    pub targets: Vec<f64>,
    /// Achieved proportions, indexed by group.
    pub achieved: Vec<f64>,
    pub inertia: f64,
    pub permutation: Vec<usize>,
    pub iterations: usize,
    /// Users of this region were labelled by the global fit instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyLabels {
    pub user_ids: Vec<UserId>,
    /// Cluster index within the fit that labelled the user.
    pub clusters: Vec<usize>,
    /// Group index, aligned with `World::groups`.
    pub labels: Vec<usize>,
    pub fits: Vec<RegionFit>,
    index: HashMap<UserId, usize>,
}

impl ProxyLabels {
    pub fn new(user_ids: Vec<UserId>, clusters: Vec<usize>, labels: Vec<usize>, fits: Vec<RegionFit>) -> Self {
        let index = user_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        Self { user_ids, clusters, labels, fits, index }
    }

    pub fn label_of(&self, user: UserId) -> Option<usize> {
        self.index.get(&user).map(|&i| self.labels[i])
    }

    pub fn len(&self) -> usize {
        self.user_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user_ids.is_empty()
    }

    pub fn fallback_regions(&self) -> impl Iterator<Item = RegionId> + '_ {
        self.fits.iter().filter(|f| f.fallback).filter_map(|f| f.region)
    }
}

fn fit_summary(region: Option<RegionId>, targets: &[f64], fit: &ClusteringResult) -> RegionFit {
    RegionFit {
        region,
        n_users: fit.assignments.len(),
        targets: targets.to_vec(),
        achieved: fit.achieved_by_target(),
        inertia: fit.inertia,
        permutation: fit.permutation.clone(),
        iterations: fit.iterations,
        fallback: false,
    }
}

/// Population-weighted mean of the region proportions (plain mean when all
/// weights are zero).
pub fn global_targets(world: &World) -> Vec<f64> {
    let g = world.n_groups();
    let total: f64 = world.regions().iter().map(|r| r.population_weight).sum();
    let mut out = vec![0.0; g];
    for r in world.regions() {
        let w = if total > 0.0 { r.population_weight / total } else { 1.0 / world.regions().len() as f64 };
        for (o, p) in out.iter_mut().zip(&r.group_proportions) {
            *o += w * p;
        }
    }
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|o| *o /= sum);
    out
}

/// Rescales `x` so the mean squared distance of its rows to their mean is 1,
/// putting multipliers on the same footing for every region. Constant data is
/// returned unchanged.
pub fn unit_scale(x: &Matrix) -> Matrix {
    let n = x.rows() as f64;
    let mut mean = vec![0.0; x.cols()];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let spread: f64 = x.iter_rows().map(|row| squared_distance(row, &mean)).sum::<f64>() / n;
    if spread.is_nan() || spread <= 0.0 {
        return x.clone();
    }
    let s = spread.sqrt();
    Matrix::from_vec(x.rows(), x.cols(), x.as_slice().iter().map(|v| v / s).collect())
}

/// Labels every user in `features` with a group index. Each fit runs on
/// [`unit_scale`]d features.
pub fn proxy_labels(
    world: &World,
    features: &FeatureMatrix,
    mode: ProxyMode,
    params: &SakmParams,
) -> Result<ProxyLabels, SakmError> {
    params.validate()?;
    let k = world.n_groups();
    let n = features.len();
    let mut clusters = vec![0; n];
    let mut labels = vec![0; n];

    let global_fit = |clusters: &mut [usize], labels: &mut [usize]| -> Result<RegionFit, SakmError> {
        let targets = global_targets(world);
        let fit = sakm_fit(&unit_scale(&features.data), &SakmConfig::new(targets.clone(), params.clone())?)?;
        for (i, (&c, g)) in fit.assignments.iter().zip(fit.labels()).enumerate() {
            clusters[i] = c;
            labels[i] = g;
        }
        Ok(fit_summary(None, &targets, &fit))
    };

    if mode == ProxyMode::Global {
        let fit = global_fit(&mut clusters, &mut labels)?;
        return Ok(ProxyLabels::new(features.user_ids.clone(), clusters, labels, vec![fit]));
    }

    let mut by_region: Vec<Vec<usize>> = vec![Vec::new(); world.regions().len()];
    let region_pos: HashMap<RegionId, usize> = world.regions().iter().enumerate().map(|(i, r)| (r.id, i)).collect();
    for (row, &u) in features.user_ids.iter().enumerate() {
        let t = world.trajectory(u).ok_or_else(|| SakmError::Dimension(format!("user {u} is not in the world")))?;
        by_region[region_pos[&t.home_region_id]].push(row);
    }

    let fits: Vec<Option<(usize, ClusteringResult)>> = world
        .regions()
        .par_iter()
        .enumerate()
        .map(|(r, region)| {
            let rows = &by_region[r];
            if rows.len() < k {
                return Ok(None);
            }
            let x = unit_scale(&features.data.select_rows(rows));
            let config = SakmConfig::new(region.group_proportions.clone(), params.clone())?;
            sakm_fit(&x, &config).map(|fit| Some((r, fit)))
        })
        .collect::<Result<_, SakmError>>()?;

    let mut summaries = Vec::new();
    for (r, fit) in fits.into_iter().flatten() {
        let rows = &by_region[r];
        for ((&row, &c), g) in rows.iter().zip(&fit.assignments).zip(fit.labels()) {
            clusters[row] = c;
            labels[row] = g;
        }
        let region = &world.regions()[r];
        summaries.push(fit_summary(Some(region.id), &region.group_proportions, &fit));
    }

    let small: Vec<usize> =
        (0..by_region.len()).filter(|&r| !by_region[r].is_empty() && by_region[r].len() < k).collect();
    if !small.is_empty() {
        let mut g_clusters = vec![0; n];
        let mut g_labels = vec![0; n];
        summaries.push(global_fit(&mut g_clusters, &mut g_labels)?);
        for r in small {
            let region = &world.regions()[r];
            log::warn!("region {} has {} users (< {k}); using the global fit", region.id, by_region[r].len());
            let mut counts = vec![0usize; k];
            for &row in &by_region[r] {
                clusters[row] = g_clusters[row];
                labels[row] = g_labels[row];
                counts[g_labels[row]] += 1;
            }
            let m = by_region[r].len() as f64;
            summaries.push(RegionFit {
                region: Some(region.id),
                n_users: by_region[r].len(),
                targets: region.group_proportions.clone(),
                achieved: counts.iter().map(|&c| c as f64 / m).collect(),
                inertia: f64::NAN,
                permutation: Vec::new(),
                iterations: 0,
                fallback: true,
            });
        }
    }
    Ok(ProxyLabels::new(features.user_ids.clone(), clusters, labels, summaries))
}

/// `(target, achieved)` pairs over every group of every region fit with at
/// least `min_users` users.
pub fn calibration_points(fits: &[RegionFit], min_users: usize) -> Vec<(f64, f64)> {
    fits.iter()
        .filter(|f| f.region.is_some() && f.n_users >= min_users)
        .flat_map(|f| f.targets.iter().copied().zip(f.achieved.iter().copied()))
        .collect()
}

/// Ordinary least-squares slope of achieved on target proportions.
pub fn calibration_slope(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
