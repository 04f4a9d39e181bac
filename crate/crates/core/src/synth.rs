//! Synthetic mobility worlds with group-dependent visit behaviour.
//!
//! Each group owns a disjoint pool of preferred POIs. A user draws a fraction
//! `group_affinity` of visits from their group's pool and the rest from the
//! shared pool, with a Zipf popularity profile inside every pool. By default
//! all pools have the same size, so a small group's POIs collect few visits
//! and rank low in global popularity unless the group is well represented in
//! the training users. That is what produces accuracy gaps for
//! popularity-driven predictors.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::domain::{Poi, PoiId, Region, RegionId, Trajectory, UserId, Visit, World, DAY};
use crate::error::SynthError;
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub group_names: Vec<String>,
    pub n_regions: usize,
    pub n_pois: usize,
    pub n_users: usize,
    /// Explicit per-region proportions. When empty, each region draws its
    /// proportions from a Dirichlet centred on `base_proportions`.
    pub region_proportions: Vec<Vec<f64>>,
    pub base_proportions: Vec<f64>,
    pub region_concentration: f64,
    /// Per-region population weights. Empty means equal weights.
    pub region_population: Vec<f64>,
    /// Inclusive range of visits per user.
    pub visits_per_user: (usize, usize),
    pub group_affinity: f64,
    /// Fraction of visits drawn uniformly over all POIs.
    pub noise: f64,
    /// Fraction of POIs that belong to group pools; the rest are shared.
    pub pool_fraction: f64,
    /// Pool sizes follow `share^pool_size_exponent`; 0 gives equal pools.
    pub pool_size_exponent: f64,
    pub zipf_exponent: f64,
    pub period_days: i64,
    pub eval_window_days: i64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            group_names: ["hispanic", "white", "black", "asian"].map(String::from).to_vec(),
            n_regions: 20,
            n_pois: 2000,
            n_users: 12_500,
            region_proportions: Vec::new(),
            base_proportions: vec![0.42, 0.40, 0.12, 0.06],
            region_concentration: 20.0,
            region_population: Vec::new(),
            visits_per_user: (4, 12),
            group_affinity: 0.95,
            noise: 0.02,
            pool_fraction: 0.6,
            pool_size_exponent: 0.0,
            zipf_exponent: 2.0,
            period_days: 28,
            eval_window_days: 7,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_groups(&self) -> usize {
        self.group_names.len()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        let g = self.n_groups();
        if g < 2 {
            return bad("need at least two groups");
        }
        if self.n_regions == 0 || self.n_pois == 0 || self.n_users == 0 {
            return bad("region, poi and user counts must be positive");
        }
        if self.n_pois < g {
            return Err(SynthError::TooFewPois { n_pois: self.n_pois, n_groups: g });
        }
        if !(0.0..=1.0).contains(&self.group_affinity) {
            return bad("group_affinity must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad("noise must lie in [0, 1]");
        }
        if !(self.pool_size_exponent >= 0.0 && self.pool_size_exponent.is_finite()) {
            return bad("pool_size_exponent must be finite and non-negative");
        }
        if !(self.pool_fraction > 0.0 && self.pool_fraction <= 1.0) {
            return bad("pool_fraction must lie in (0, 1]");
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf_exponent must be finite and non-negative");
        }
        let (lo, hi) = self.visits_per_user;
        if lo == 0 || hi < lo {
            return bad("visits_per_user must be a non-empty range of positive counts");
        }
        if self.eval_window_days <= 0 || self.period_days <= self.eval_window_days {
            return bad("period_days must exceed a positive eval_window_days");
        }
        if self.region_proportions.is_empty() {
            check_proportions(&self.base_proportions, g, "base_proportions")?;
            if !(self.region_concentration > 0.0 && self.region_concentration.is_finite()) {
                return bad("region_concentration must be positive");
            }
        } else {
            if self.region_proportions.len() != self.n_regions {
                return bad("region_proportions needs one row per region");
            }
            for row in &self.region_proportions {
                check_proportions(row, g, "region_proportions")?;
            }
        }
        if !self.region_population.is_empty() {
            if self.region_population.len() != self.n_regions {
                return bad("region_population needs one entry per region");
            }
            if self.region_population.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
                || self.region_population.iter().sum::<f64>() <= 0.0
            {
                return bad("region_population must be non-negative with a positive total");
            }
        }
        Ok(())
    }
}

fn check_proportions(p: &[f64], g: usize, what: &str) -> Result<(), SynthError> {
    if p.len() != g {
        return Err(SynthError::InvalidConfig(format!("{what} needs {g} entries")));
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SynthError::InvalidConfig(format!("{what} must be a probability vector")));
    }
    Ok(())
}

/// True latent group of every generated user. Never part of a [`World`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnswerKey {
    labels: BTreeMap<UserId, usize>,
}

impl AnswerKey {
    pub fn from_labels(labels: BTreeMap<UserId, usize>) -> Self {
        Self { labels }
    }

    pub fn group_of(&self, user: UserId) -> Option<usize> {
        self.labels.get(&user).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (UserId, usize)> + '_ {
        self.labels.iter().map(|(&u, &g)| (u, g))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedWorld {
    pub world: World,
    pub answer_key: AnswerKey,
    /// Owning group of each POI pool entry; `None` for shared POIs.
    pub poi_owner: Vec<Option<usize>>,
}

/// Latent labels of a generated world. Loaded worlds carry no key, see
/// [`crate::io::read_answer_key`].
pub fn answer_key(generated: &GeneratedWorld) -> &AnswerKey {
    &generated.answer_key
}

fn sample_gamma<R: Rng>(rng: &mut R, shape: f64) -> f64 {
    if shape <= 0.0 {
        return 0.0;
    }
    Gamma::new(shape, 1.0).expect("positive shape").sample(rng)
}

fn region_proportions(config: &SynthConfig, seed: u64) -> Vec<Vec<f64>> {
    if !config.region_proportions.is_empty() {
        return config.region_proportions.clone();
    }
    (0..config.n_regions)
        .map(|r| {
            let mut rng = stream(seed, Domain::Regions, r as u64);
            loop {
                let draws: Vec<f64> = config
                    .base_proportions
                    .iter()
                    .map(|&b| sample_gamma(&mut rng, b * config.region_concentration))
                    .collect();
                let total: f64 = draws.iter().sum();
                if total > 0.0 {
                    return draws.into_iter().map(|d| d / total).collect();
                }
            }
        })
        .collect()
}

/// Largest-remainder apportionment of `total` items by `shares`, giving every
/// entry at least one item.
fn apportion(total: usize, shares: &[f64]) -> Vec<usize> {
    let g = shares.len();
    let spare = total - g;
    let sum: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * spare as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = spare - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes.iter().map(|s| s + 1).collect()
}

fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-exponent)).collect()
}

pub fn generate_world(config: &SynthConfig, seed: u64) -> Result<GeneratedWorld, SynthError> {
    config.validate()?;
    let g = config.n_groups();
    let proportions = region_proportions(config, seed);
    let populations = if config.region_population.is_empty() {
        vec![1000.0; config.n_regions]
    } else {
        config.region_population.clone()
    };
    let pop_total: f64 = populations.iter().sum();

    let regions: Vec<Region> = proportions
        .iter()
        .zip(&populations)
        .enumerate()
        .map(|(r, (p, &w))| Region { id: RegionId(r as u32), group_proportions: p.clone(), population_weight: w })
        .collect();

    // Overall group shares decide pool sizes.
    let mut shares = vec![0.0; g];
    for (p, w) in proportions.iter().zip(&populations) {
        for (s, v) in shares.iter_mut().zip(p) {
            *s += v * w / pop_total;
        }
    }
    let pooled = ((config.n_pois as f64 * config.pool_fraction).round() as usize).clamp(g, config.n_pois);
    let weights: Vec<f64> = shares.iter().map(|s| s.powf(config.pool_size_exponent)).collect();
    let pool_sizes = apportion(pooled, &weights);

    let mut pools: Vec<Vec<usize>> = Vec::with_capacity(g);
    let mut poi_owner = vec![None; config.n_pois];
    let mut next = 0;
    for (group, &size) in pool_sizes.iter().enumerate() {
        pools.push((next..next + size).collect());
        for owner in &mut poi_owner[next..next + size] {
            *owner = Some(group);
        }
        next += size;
    }
    let shared: Vec<usize> =
        if next < config.n_pois { (next..config.n_pois).collect() } else { (0..config.n_pois).collect() };

    let pois: Vec<Poi> = (0..config.n_pois)
        .map(|i| {
            let mut rng = stream(seed, Domain::Pois, i as u64);
            Poi {
                id: PoiId(i as u32),
                region_id: RegionId(rng.random_range(0..config.n_regions) as u32),
                category: poi_owner[i].map_or(g, |o| o) as u16,
            }
        })
        .collect();

    let pool_dists: Vec<WeightedIndex<f64>> = pools
        .iter()
        .map(|p| WeightedIndex::new(zipf_weights(p.len(), config.zipf_exponent)).expect("non-empty"))
        .collect();
    let shared_dist = WeightedIndex::new(zipf_weights(shared.len(), config.zipf_exponent)).expect("non-empty");
    let region_dist =
        WeightedIndex::new(&populations).map_err(|e| SynthError::InvalidConfig(format!("region_population: {e}")))?;
    let group_dists: Vec<Option<WeightedIndex<f64>>> = proportions.iter().map(|p| WeightedIndex::new(p).ok()).collect();

    let period = config.period_days * DAY;
    let (lo, hi) = config.visits_per_user;
    let mut trajectories = Vec::with_capacity(config.n_users);
    let mut labels = BTreeMap::new();
    for u in 0..config.n_users {
        let mut rng = stream(seed, Domain::Users, u as u64);
        let user_id = UserId(u as u32);
        let home = region_dist.sample(&mut rng);
        let group = group_dists[home]
            .as_ref()
            .ok_or_else(|| SynthError::InvalidConfig(format!("region {home} has no mass")))?
            .sample(&mut rng);
        let n_visits = rng.random_range(lo..=hi);
        let visits = (0..n_visits)
            .map(|_| {
                let r: f64 = rng.random();
                let poi = if r < config.noise {
                    rng.random_range(0..config.n_pois)
                } else if rng.random::<f64>() < config.group_affinity {
                    pools[group][pool_dists[group].sample(&mut rng)]
                } else {
                    shared[shared_dist.sample(&mut rng)]
                };
                Visit { user_id, poi_id: PoiId(poi as u32), timestamp: rng.random_range(0..period) }
            })
            .collect();
        trajectories.push(Trajectory::new(user_id, RegionId(home as u32), visits)?);
        labels.insert(user_id, group);
    }

    let world = World::new(
        config.group_names.clone(),
        regions,
        pois,
        trajectories,
        (config.period_days - config.eval_window_days) * DAY,
        config.eval_window_days * DAY,
    )?;
    Ok(GeneratedWorld { world, answer_key: AnswerKey { labels }, poi_owner })
}
