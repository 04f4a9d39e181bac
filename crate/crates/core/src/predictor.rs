//! Lightweight next-location predictors.
//!
//! Both models learn from the pooled pre-split visits of their training users,
//! so the group composition of the training set shapes who they serve well.
//! Evaluation users contribute their own pre-split history at prediction time
//! but never enter the learned statistics.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::domain::{PoiId, UserId, World};
use crate::error::PredictorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Blend of the user's own visit frequencies and global popularity.
    #[default]
    FreqBlend,
    /// Blend of Jaccard-weighted neighbour frequencies and global popularity.
    CovisitKnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorSpec {
    pub kind: PredictorKind,
    /// Weight ρ of the personal (or neighbour) term.
    pub blend_weight: f64,
    pub n_neighbors: usize,
    pub k_predictions: usize,
}

impl Default for PredictorSpec {
    fn default() -> Self {
        Self { kind: PredictorKind::FreqBlend, blend_weight: 0.5, n_neighbors: 10, k_predictions: 20 }
    }
}

impl PredictorSpec {
    pub fn validate(&self) -> Result<(), PredictorError> {
        if !(0.0..=1.0).contains(&self.blend_weight) {
            return Err(PredictorError::InvalidSpec("blend_weight must lie in [0, 1]".into()));
        }
        if self.n_neighbors == 0 {
            return Err(PredictorError::InvalidSpec("n_neighbors must be at least 1".into()));
        }
        if self.k_predictions == 0 {
            return Err(PredictorError::InvalidSpec("k_predictions must be at least 1".into()));
        }
        Ok(())
    }
}

/// Anything that ranks POIs for a user.
pub trait NextLocationModel: Sync {
    /// At most `k` distinct POIs, best first.
    fn predict_top_k(&self, user: UserId, k: usize) -> Vec<PoiId>;
}

/// Sparse visit histogram over dense POI positions.
#[derive(Debug, Clone, PartialEq)]
struct Histogram {
    positions: Vec<usize>,
    counts: Vec<u32>,
    total: u32,
}

impl Histogram {
    fn of(world: &World, user: UserId) -> Self {
        let mut positions: Vec<usize> =
            world.history(user).iter().map(|v| world.poi_position(v.poi_id).expect("validated world")).collect();
        positions.sort_unstable();
        let total = positions.len() as u32;
        let mut counts = Vec::new();
        let mut unique = Vec::new();
        for p in positions {
            if unique.last() == Some(&p) {
                *counts.last_mut().expect("paired") += 1;
            } else {
                unique.push(p);
                counts.push(1);
            }
        }
        Self { positions: unique, counts, total }
    }

    fn is_empty(&self) -> bool {
        self.total == 0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub kind: PredictorKind,
    pub training_users: usize,
    /// POIs seen at least once in training.
    pub vocab_size: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedModel<'w> {
    world: &'w World,
    spec: PredictorSpec,
    training_users: Vec<UserId>,
    global_counts: Vec<u64>,
    global_total: u64,
    /// POI positions with non-zero count, by count desc then id asc.
    global_order: Vec<usize>,
    histories: Vec<Histogram>,
    /// POI position -> indices into `histories`; covisit only.
    poi_users: Vec<Vec<u32>>,
}

pub fn train<'w>(
    spec: &PredictorSpec,
    world: &'w World,
    training_users: &[UserId],
) -> Result<TrainedModel<'w>, PredictorError> {
    spec.validate()?;
    let users: BTreeSet<UserId> = training_users.iter().copied().collect();
    let n_pois = world.pois().len();
    let mut global_counts = vec![0u64; n_pois];
    let mut histories = Vec::with_capacity(users.len());
    for &u in &users {
        if world.user_position(u).is_none() {
            return Err(PredictorError::UnknownUser(u));
        }
        let h = Histogram::of(world, u);
        for (&p, &c) in h.positions.iter().zip(&h.counts) {
            global_counts[p] += u64::from(c);
        }
        histories.push(h);
    }
    let global_total = global_counts.iter().sum();
    let mut global_order: Vec<usize> = (0..n_pois).filter(|&p| global_counts[p] > 0).collect();
    global_order
        .sort_by(|&a, &b| global_counts[b].cmp(&global_counts[a]).then(world.pois()[a].id.cmp(&world.pois()[b].id)));

    let mut poi_users = Vec::new();
    if spec.kind == PredictorKind::CovisitKnn {
        poi_users = vec![Vec::new(); n_pois];
        for (i, h) in histories.iter().enumerate() {
            for &p in &h.positions {
                poi_users[p].push(i as u32);
            }
        }
    }

    Ok(TrainedModel {
        world,
        spec: spec.clone(),
        training_users: users.into_iter().collect(),
        global_counts,
        global_total,
        global_order,
        histories,
        poi_users,
    })
}

impl TrainedModel<'_> {
    pub fn spec(&self) -> &PredictorSpec {
        &self.spec
    }

    pub fn training_users(&self) -> &[UserId] {
        &self.training_users
    }

    /// Raw training visit count of a POI.
    pub fn global_count(&self, poi: PoiId) -> u64 {
        self.world.poi_position(poi).map_or(0, |p| self.global_counts[p])
    }

    pub fn summary(&self) -> ModelSummary {
        ModelSummary {
            kind: self.spec.kind,
            training_users: self.training_users.len(),
            vocab_size: self.global_order.len(),
        }
    }

    fn global_share(&self, p: usize) -> f64 {
        self.global_counts[p] as f64 / self.global_total as f64
    }

    /// Ranks `personal` (an L1-normalised sparse score) blended with global
    /// popularity. Non-personal POIs rank in global order, so only the first
    /// `k + personal.len()` of them can make the cut.
    fn rank(&self, personal: &[(usize, f64)], k: usize) -> Vec<PoiId> {
        let rho = self.spec.blend_weight;
        let mut scores: HashMap<usize, f64> = HashMap::with_capacity(personal.len() + k);
        for &(p, s) in personal {
            *scores.entry(p).or_insert(0.0) += rho * s;
        }
        for &p in self.global_order.iter().take(k + personal.len()) {
            scores.entry(p).or_insert(0.0);
        }
        let pois = self.world.pois();
        let mut ranked: Vec<(usize, f64)> = scores
            .into_iter()
            .map(|(p, s)| (p, s + (1.0 - rho) * self.global_share(p)))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(pois[a.0].id.cmp(&pois[b.0].id)));
        ranked.into_iter().take(k).map(|(p, _)| pois[p].id).collect()
    }

    fn personal_frequencies(&self, user: UserId) -> Vec<(usize, f64)> {
        let h = Histogram::of(self.world, user);
        if h.is_empty() {
            return Vec::new();
        }
        let total = f64::from(h.total);
        h.positions.iter().zip(&h.counts).map(|(&p, &c)| (p, f64::from(c) / total)).collect()
    }

    /// Up to `n_neighbors` training users by Jaccard similarity of POI sets,
    /// best first, ties by user id.
    pub fn neighbors(&self, user: UserId) -> Vec<(UserId, f64)> {
        if self.poi_users.is_empty() {
            return Vec::new();
        }
        let h = Histogram::of(self.world, user);
        let mut overlap: HashMap<u32, u32> = HashMap::new();
        for &p in &h.positions {
            for &i in &self.poi_users[p] {
                *overlap.entry(i).or_insert(0) += 1;
            }
        }
        let mut sims: Vec<(UserId, f64)> = overlap
            .into_iter()
            .map(|(i, inter)| {
                let other = &self.histories[i as usize];
                let union = h.positions.len() + other.positions.len() - inter as usize;
                (self.training_users[i as usize], f64::from(inter) / union as f64)
            })
            .collect();
        sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        sims.truncate(self.spec.n_neighbors);
        sims
    }

    fn neighbor_frequencies(&self, user: UserId) -> Vec<(usize, f64)> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (n, sim) in self.neighbors(user) {
            let i = self.training_users.binary_search(&n).expect("neighbor is a training user");
            let h = &self.histories[i];
            let total = f64::from(h.total);
            for (&p, &c) in h.positions.iter().zip(&h.counts) {
                *acc.entry(p).or_insert(0.0) += sim * f64::from(c) / total;
            }
        }
        let mass: f64 = acc.values().sum();
        if mass <= 0.0 {
            return Vec::new();
        }
        acc.into_iter().map(|(p, s)| (p, s / mass)).collect()
    }
}

impl NextLocationModel for TrainedModel<'_> {
    fn predict_top_k(&self, user: UserId, k: usize) -> Vec<PoiId> {
        if self.training_users.is_empty() || k == 0 {
            return Vec::new();
        }
        let personal = match self.spec.kind {
            PredictorKind::FreqBlend => self.personal_frequencies(user),
            PredictorKind::CovisitKnn => self.neighbor_frequencies(user),
        };
        self.rank(&personal, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Poi, Region, RegionId, Trajectory, Visit};

    /// Users `0..` with the given pre-split POI sequences; every user also
    /// visits POI 0 after the split.
    fn world(histories: &[&[u32]]) -> World {
        let pois = (0..8).map(|i| Poi { id: PoiId(i), region_id: RegionId(0), category: 0 }).collect();
        let regions = vec![Region { id: RegionId(0), group_proportions: vec![0.5, 0.5], population_weight: 1.0 }];
        let trajectories = histories
            .iter()
            .enumerate()
            .map(|(u, h)| {
                let user_id = UserId(u as u32);
                let mut visits: Vec<Visit> = h
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| Visit { user_id, poi_id: PoiId(p), timestamp: i as i64 })
                    .collect();
                visits.push(Visit { user_id, poi_id: PoiId(0), timestamp: 100 });
                Trajectory::new(user_id, RegionId(0), visits).unwrap()
            })
            .collect();
        World::new(vec!["a".into(), "b".into()], regions, pois, trajectories, 50, 100).unwrap()
    }

    fn spec(kind: PredictorKind, rho: f64) -> PredictorSpec {
        PredictorSpec { kind, blend_weight: rho, n_neighbors: 1, k_predictions: 20 }
    }

    #[test]
    fn pure_frequency_rank() {
        let w = world(&[&[1, 1, 1, 2], &[3]]);
        let m = train(&spec(PredictorKind::FreqBlend, 1.0), &w, &[UserId(1)]).unwrap();
        assert_eq!(m.predict_top_k(UserId(0), 2), vec![PoiId(1), PoiId(2)]);
        assert_eq!(m.predict_top_k(UserId(0), 20), vec![PoiId(1), PoiId(2)]);
    }

    #[test]
    fn zero_blend_is_global_popularity_for_everyone() {
        let w = world(&[&[1, 1, 2], &[3, 3, 3, 1], &[5], &[6, 7]]);
        let m = train(&spec(PredictorKind::FreqBlend, 0.0), &w, &[UserId(0), UserId(1)]).unwrap();
        let expected = vec![PoiId(1), PoiId(3), PoiId(2)];
        for u in 0..4 {
            assert_eq!(m.predict_top_k(UserId(u), 5), expected);
        }
    }

    #[test]
    fn single_training_user_sets_global_histogram() {
        let w = world(&[&[4, 4, 2]]);
        let m = train(&PredictorSpec::default(), &w, &[UserId(0)]).unwrap();
        assert_eq!(m.global_count(PoiId(4)), 2);
        assert_eq!(m.global_count(PoiId(2)), 1);
        assert_eq!(m.global_count(PoiId(0)), 0);
        assert_eq!(m.summary().vocab_size, 2);
    }

    #[test]
    fn duplicated_training_histories_keep_rankings() {
        let w = world(&[&[1, 2, 2], &[3, 1], &[1, 2, 2], &[3, 1], &[6]]);
        let s = PredictorSpec::default();
        let once = train(&s, &w, &[UserId(0), UserId(1)]).unwrap();
        let twice = train(&s, &w, &[UserId(0), UserId(1), UserId(2), UserId(3)]).unwrap();
        for p in [1, 2, 3] {
            assert_eq!(twice.global_count(PoiId(p)), 2 * once.global_count(PoiId(p)));
        }
        assert_eq!(once.predict_top_k(UserId(4), 5), twice.predict_top_k(UserId(4), 5));
    }

    #[test]
    fn empty_training_set_predicts_nothing() {
        let w = world(&[&[1]]);
        let m = train(&PredictorSpec::default(), &w, &[]).unwrap();
        assert!(m.predict_top_k(UserId(0), 20).is_empty());
    }

    #[test]
    fn unknown_training_user_is_an_error() {
        let w = world(&[&[1]]);
        assert!(matches!(
            train(&PredictorSpec::default(), &w, &[UserId(9)]),
            Err(PredictorError::UnknownUser(UserId(9)))
        ));
    }

    #[test]
    fn empty_history_falls_back_to_global() {
        let w = world(&[&[], &[2, 2, 5]]);
        let m = train(&spec(PredictorKind::FreqBlend, 0.9), &w, &[UserId(1)]).unwrap();
        assert_eq!(m.predict_top_k(UserId(0), 3), vec![PoiId(2), PoiId(5)]);
    }

    #[test]
    fn identical_user_is_its_own_nearest_neighbor() {
        let w = world(&[&[1, 2, 3], &[1, 2, 3], &[1, 4], &[6, 7]]);
        let m = train(&spec(PredictorKind::CovisitKnn, 0.5), &w, &[UserId(1), UserId(2), UserId(3)]).unwrap();
        let n = m.neighbors(UserId(0));
        assert_eq!(n, vec![(UserId(1), 1.0)]);
        let top = m.predict_top_k(UserId(0), 3);
        assert_eq!(top.len(), 3);
        assert!(top.contains(&PoiId(1)));
    }

    #[test]
    fn covisit_without_overlap_uses_global_only() {
        let w = world(&[&[5], &[1, 1, 2]]);
        let m = train(&spec(PredictorKind::CovisitKnn, 0.5), &w, &[UserId(1)]).unwrap();
        assert!(m.neighbors(UserId(0)).is_empty());
        assert_eq!(m.predict_top_k(UserId(0), 5), vec![PoiId(1), PoiId(2)]);
    }

    #[test]
    fn outputs_are_distinct_and_bounded() {
        let w = world(&[&[1, 2, 3, 4, 5, 6, 7], &[7, 6, 5, 4, 3, 2, 1, 1]]);
        for kind in [PredictorKind::FreqBlend, PredictorKind::CovisitKnn] {
            let m = train(&spec(kind, 0.5), &w, &[UserId(1)]).unwrap();
            for k in 1..10 {
                let top = m.predict_top_k(UserId(0), k);
                assert!(top.len() <= k);
                let set: BTreeSet<_> = top.iter().collect();
                assert_eq!(set.len(), top.len());
            }
        }
    }

    #[test]
    fn rejects_invalid_spec() {
        let w = world(&[&[1]]);
        let bad = PredictorSpec { blend_weight: 1.5, ..PredictorSpec::default() };
        assert!(train(&bad, &w, &[]).is_err());
        let bad = PredictorSpec { n_neighbors: 0, ..PredictorSpec::default() };
        assert!(train(&bad, &w, &[]).is_err());
    }
}
