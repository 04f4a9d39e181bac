//! Top-k lookahead accuracy, census-prior group accuracy and disparity.
//!
//! Group accuracy under census priors treats every region's users as a random
//! sample of its population and assumes accuracy is constant across groups
//! within a region:
//!
//! ```text
//! c_{g,r} = a_r n_r p_{g,r}    C_g = Σ_r c_{g,r}    N_g = Σ_r n_r p_{g,r}    z_g = C_g / N_g
//! ```
//!
//! Users with no visits inside the evaluation window are excluded from every
//! aggregate rather than counted as misses.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{PoiId, Region, RegionId, UserId, World};
use crate::error::MetricsError;
use crate::predictor::NextLocationModel;

/// 1 if any of the first `k` predictions is in `actual`; `None` when the user
/// has nothing to predict.
pub fn acc_at_k(predicted: &[PoiId], actual: &HashSet<PoiId>, k: usize) -> Option<bool> {
    if actual.is_empty() {
        return None;
    }
    Some(predicted.iter().take(k).any(|p| actual.contains(p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHit {
    pub user: UserId,
    pub region: RegionId,
    pub hit: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub hits: Vec<UserHit>,
    /// Users without evaluation-window visits.
    pub excluded: Vec<UserId>,
}

impl Evaluation {
    pub fn accuracy(&self) -> Option<f64> {
        if self.hits.is_empty() {
            return None;
        }
        Some(self.hits.iter().filter(|h| h.hit).count() as f64 / self.hits.len() as f64)
    }
}

/// Scores `users` against their evaluation-window visits.
pub fn evaluate_users<M>(world: &World, model: &M, users: &[UserId], k: usize) -> Evaluation
where
    M: NextLocationModel + ?Sized,
{
    let scored: Vec<(UserId, RegionId, Option<bool>)> = users
        .par_iter()
        .filter_map(|&u| {
            let t = world.trajectory(u)?;
            let actual: HashSet<PoiId> = world.eval_visits(u).iter().map(|v| v.poi_id).collect();
            let hit = if actual.is_empty() { None } else { acc_at_k(&model.predict_top_k(u, k), &actual, k) };
            Some((u, t.home_region_id, hit))
        })
        .collect();
    let mut eval = Evaluation::default();
    for (user, region, hit) in scored {
        match hit {
            Some(hit) => eval.hits.push(UserHit { user, region, hit }),
            None => eval.excluded.push(user),
        }
    }
    eval
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionAccuracy {
    pub region_id: RegionId,
    /// Mean hit rate `a_r`.
    pub accuracy: f64,
    /// Evaluated users `n_r`.
    pub n_users: usize,
}

/// Per-region mean hit, ordered by region id. Regions without hits are omitted.
pub fn region_accuracies_from_hits(hits: &[UserHit]) -> Vec<RegionAccuracy> {
    let mut acc: BTreeMap<RegionId, (usize, usize)> = BTreeMap::new();
    for h in hits {
        let e = acc.entry(h.region).or_default();
        e.0 += usize::from(h.hit);
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(region_id, (hit, n))| RegionAccuracy { region_id, accuracy: hit as f64 / n as f64, n_users: n })
        .collect()
}

/// Region accuracies of `model` over every user of `world`.
pub fn region_accuracies<M>(world: &World, model: &M, k: usize) -> Vec<RegionAccuracy>
where
    M: NextLocationModel + ?Sized,
{
    let users: Vec<UserId> = world.user_ids().collect();
    region_accuracies_from_hits(&evaluate_users(world, model, &users, k).hits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracyReport {
    /// `z_g`; `None` when the group has no (expected) members.
    pub z: Vec<Option<f64>>,
    /// `C_g`, expected correct predictions.
    pub correct: Vec<f64>,
    /// `N_g`, expected members.
    pub population: Vec<f64>,
    /// TDPV over defined groups; `None` with fewer than two.
    pub tdpv: Option<f64>,
    pub undefined_groups: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step: Option<usize>,
}

impl GroupAccuracyReport {
    fn from_totals(correct: Vec<f64>, population: Vec<f64>) -> Self {
        let z: Vec<Option<f64>> = correct.iter().zip(&population).map(|(&c, &n)| (n > 0.0).then(|| c / n)).collect();
        let undefined_groups = (0..z.len()).filter(|&g| z[g].is_none()).collect();
        let tdpv = tdpv_defined(&z);
        Self { z, correct, population, tdpv, undefined_groups, step: None }
    }
}

/// Census-prior group accuracy. Every region in `accuracies` must appear in
/// `regions`.
pub fn group_accuracy(accuracies: &[RegionAccuracy], regions: &[Region]) -> Result<GroupAccuracyReport, MetricsError> {
    let by_id: BTreeMap<RegionId, &Region> = regions.iter().map(|r| (r.id, r)).collect();
    let g = regions.first().map_or(0, |r| r.group_proportions.len());
    let mut correct = vec![0.0; g];
    let mut population = vec![0.0; g];
    for ra in accuracies {
        let region = by_id.get(&ra.region_id).ok_or(MetricsError::MissingRegion(ra.region_id))?;
        if region.group_proportions.len() != g {
            return Err(MetricsError::Arity { expected: g, found: region.group_proportions.len() });
        }
        let n = ra.n_users as f64;
        for (gi, &p) in region.group_proportions.iter().enumerate() {
            correct[gi] += ra.accuracy * n * p;
            population[gi] += n * p;
        }
    }
    Ok(GroupAccuracyReport::from_totals(correct, population))
}

/// Group accuracy from per-user labels: `z_g` is the mean hit of users
/// labelled `g`.
pub fn group_accuracy_direct<L>(
    hits: &[(UserId, bool)],
    label_of: L,
    n_groups: usize,
) -> Result<GroupAccuracyReport, MetricsError>
where
    L: Fn(UserId) -> Option<usize>,
{
    let mut correct = vec![0.0; n_groups];
    let mut population = vec![0.0; n_groups];
    for &(user, hit) in hits {
        let g = label_of(user).ok_or(MetricsError::MissingLabel(user))?;
        if g >= n_groups {
            return Err(MetricsError::LabelRange { user, label: g });
        }
        correct[g] += f64::from(u8::from(hit));
        population[g] += 1.0;
    }
    Ok(GroupAccuracyReport::from_totals(correct, population))
}

/// Total demographic parity violations: `Σ_{i<j} |z_i − z_j|`.
pub fn tdpv(z: &[f64]) -> Result<f64, MetricsError> {
    if z.len() < 2 {
        return Err(MetricsError::TooFewGroups(z.len()));
    }
    let mut total = 0.0;
    for i in 0..z.len() {
        for j in i + 1..z.len() {
            total += (z[i] - z[j]).abs();
        }
    }
    Ok(total)
}

/// TDPV over the defined entries.
pub fn tdpv_defined(z: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = z.iter().flatten().copied().collect();
    tdpv(&defined).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisparityScore {
    pub score: f64,
    /// Fewer than two defined groups; score forced to 0.
    pub flagged: bool,
}

/// Population variance of the defined group accuracies times the population.
pub fn region_disparity_score(z: &[Option<f64>], population_weight: f64) -> DisparityScore {
    let defined: Vec<f64> = z.iter().flatten().copied().collect();
    if defined.len() < 2 {
        return DisparityScore { score: 0.0, flagged: true };
    }
    let n = defined.len() as f64;
    let mean = defined.iter().sum::<f64>() / n;
    let var = defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    DisparityScore { score: var * population_weight, flagged: false }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionAudit {
    pub region_id: RegionId,
    pub accuracy: f64,
    pub n_users: usize,
    pub z: Vec<Option<f64>>,
    pub score: DisparityScore,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub regions: Vec<RegionAudit>,
    pub groups: GroupAccuracyReport,
}

/// Full audit of user hits. Within-region group accuracies come from
/// `labels` when given; otherwise every group present in the region's census
/// inherits the region's accuracy.
pub fn audit(
    hits: &[UserHit],
    regions: &[Region],
    labels: Option<&dyn Fn(UserId) -> Option<usize>>,
) -> Result<AuditReport, MetricsError> {
    let accuracies = region_accuracies_from_hits(hits);
    let groups = group_accuracy(&accuracies, regions)?;
    let by_id: BTreeMap<RegionId, &Region> = regions.iter().map(|r| (r.id, r)).collect();
    let g = groups.z.len();
    let mut rows = Vec::with_capacity(accuracies.len());
    for ra in &accuracies {
        let region = by_id[&ra.region_id];
        let z = match labels {
            Some(label_of) => {
                let in_region: Vec<(UserId, bool)> =
                    hits.iter().filter(|h| h.region == ra.region_id).map(|h| (h.user, h.hit)).collect();
                group_accuracy_direct(&in_region, label_of, g)?.z
            }
            None => region.group_proportions.iter().map(|&p| (p > 0.0).then_some(ra.accuracy)).collect(),
        };
        let score = region_disparity_score(&z, region.population_weight);
        rows.push(RegionAudit { region_id: ra.region_id, accuracy: ra.accuracy, n_users: ra.n_users, z, score });
    }
    Ok(AuditReport { regions: rows, groups })
}
