//! Fairness-guided incremental sampling.
//!
//! Each round draws a batch of `B` users in mini-batches of `m`. Before every
//! mini-batch, groups are weighted by `[z_g (x_g + 1)]^(−β)` where `z_g` is the
//! group's accuracy under the last trained model and `x_g` the number of its
//! users already sampled; every remaining candidate inherits its group's
//! weight. After each round a fresh model is trained on all sampled users and
//! evaluated on a fixed held-out pool, which refreshes `z`.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{UserId, World};
use crate::error::FgisError;
use crate::metrics::{evaluate_users, group_accuracy_direct};
use crate::predictor::{train, PredictorSpec};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FgisConfig {
    pub beta: f64,
    pub batch_size: usize,
    pub mini_batch: usize,
    pub rounds: usize,
    /// Accuracy estimate before any model exists.
    pub z_init: f64,
    /// Accuracy estimates are floored here before weighting.
    pub z_floor: f64,
    /// Fraction of users held out for evaluation.
    pub eval_fraction: f64,
    pub seed: u64,
}

impl Default for FgisConfig {
    fn default() -> Self {
        Self {
            beta: 0.0,
            batch_size: 1000,
            mini_batch: 50,
            rounds: 10,
            z_init: 0.1,
            z_floor: 0.01,
            eval_fraction: 0.2,
            seed: 0,
        }
    }
}

impl FgisConfig {
    pub fn validate(&self) -> Result<(), FgisError> {
        let bad = |m: &str| Err(FgisError::InvalidConfig(m.to_string()));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and non-negative");
        }
        if self.mini_batch == 0 || self.mini_batch > self.batch_size {
            return bad("mini_batch must satisfy 1 <= m <= B");
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if !(self.z_floor > 0.0 && self.z_floor <= 1.0) {
            return bad("z_floor must lie in (0, 1]");
        }
        if !(self.z_init > 0.0 && self.z_init <= 1.0) {
            return bad("z_init must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return bad("eval_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Max-shifted weights `exp(log w_g − max)` computed in the log domain;
/// unavailable groups get 0.
fn relative_weights(z: &[f64], x: &[usize], beta: f64, available: &[bool]) -> Result<Vec<f64>, FgisError> {
    if z.len() != x.len() || z.len() != available.len() {
        return Err(FgisError::InvalidConfig("z, x and availability must align".into()));
    }
    let mut logs = Vec::with_capacity(z.len());
    for (g, (&zg, &xg)) in z.iter().zip(x).enumerate() {
        if !(zg > 0.0 && zg.is_finite()) {
            return Err(FgisError::NonPositiveAccuracy(g));
        }
        logs.push(-beta * (zg.ln() + ((xg + 1) as f64).ln()));
    }
    let max = logs.iter().zip(available).filter(|(_, &a)| a).map(|(&l, _)| l).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(FgisError::NoCandidates);
    }
    Ok(logs.iter().zip(available).map(|(&l, &a)| if a { (l - max).exp() } else { 0.0 }).collect())
}

/// Group sampling probabilities `w_g ∝ [z_g (x_g + 1)]^(−β)`, zero for groups
/// without remaining candidates.
pub fn group_weights(z: &[f64], x: &[usize], beta: f64, available: &[bool]) -> Result<Vec<f64>, FgisError> {
    let w = relative_weights(z, x, beta, available)?;
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Fenwick tree over per-candidate weights for O(log n) draws.
struct WeightTree {
    tree: Vec<f64>,
}

impl WeightTree {
    fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0.0; n + 1];
        tree[1..].copy_from_slice(weights);
        for i in 1..=n {
            let parent = i + (i & i.wrapping_neg());
            if parent <= n {
                tree[parent] += tree[i];
            }
        }
        Self { tree }
    }

    fn len(&self) -> usize {
        self.tree.len() - 1
    }

    fn total(&self) -> f64 {
        let mut i = self.len();
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i &= i - 1;
        }
        s
    }

    fn add(&mut self, index: usize, delta: f64) {
        let mut i = index + 1;
        while i <= self.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// First index whose prefix sum exceeds `target`.
    fn find(&self, target: f64) -> usize {
        let n = self.len();
        let mut pos = 0;
        let mut rem = target;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= rem {
                pos = next;
                rem -= self.tree[next];
            }
            step >>= 1;
        }
        pos.min(n - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    /// Sampled users per group.
    pub x: Vec<usize>,
    /// Current accuracy estimates, already floored.
    pub z: Vec<f64>,
    pub sampled: Vec<UserId>,
    pub step: usize,
}

impl SamplerState {
    pub fn new(n_groups: usize, z_init: f64) -> Self {
        Self { x: vec![0; n_groups], z: vec![z_init; n_groups], sampled: Vec::new(), step: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Users in draw order.
    pub users: Vec<UserId>,
    /// Fewer than `B` candidates were available.
    pub short: bool,
    /// How many times group weights were computed.
    pub weight_updates: usize,
}

/// Draws up to `B` distinct users from `candidates` (user, group) without
/// replacement. `state` is not modified; the caller commits the batch.
pub fn sample_batch<R: Rng>(
    candidates: &[(UserId, usize)],
    state: &SamplerState,
    config: &FgisConfig,
    rng: &mut R,
) -> Result<Batch, FgisError> {
    config.validate()?;
    let g = state.x.len();
    if let Some(&(_, bad)) = candidates.iter().find(|c| c.1 >= g) {
        return Err(FgisError::InvalidConfig(format!("group label {bad} out of range")));
    }
    let target = config.batch_size.min(candidates.len());
    let short = candidates.len() < config.batch_size;
    if short {
        log::warn!("only {} candidates left for a batch of {}", candidates.len(), config.batch_size);
    }
    let z: Vec<f64> = state.z.iter().map(|&v| v.max(config.z_floor)).collect();
    let mut x = state.x.clone();
    let mut remaining = vec![0usize; g];
    for &(_, grp) in candidates {
        remaining[grp] += 1;
    }
    let mut taken = vec![false; candidates.len()];
    let mut users = Vec::with_capacity(target);
    let mut weight_updates = 0;

    while users.len() < target {
        let available: Vec<bool> = remaining.iter().map(|&r| r > 0).collect();
        let w = relative_weights(&z, &x, config.beta, &available)?;
        weight_updates += 1;
        let per_user: Vec<f64> =
            candidates.iter().zip(&taken).map(|(&(_, grp), &t)| if t { 0.0 } else { w[grp] }).collect();
        let mut tree = WeightTree::new(&per_user);
        let draws = config.mini_batch.min(target - users.len());
        let mut drawn_groups = Vec::with_capacity(draws);
        for _ in 0..draws {
            let total = tree.total();
            if total <= 0.0 {
                // Every group with non-negligible weight ran dry; reweigh.
                break;
            }
            let i = tree.find(rng.random::<f64>() * total);
            tree.add(i, -per_user[i]);
            taken[i] = true;
            let (user, grp) = candidates[i];
            users.push(user);
            remaining[grp] -= 1;
            drawn_groups.push(grp);
        }
        for grp in drawn_groups {
            x[grp] += 1;
        }
    }
    Ok(Batch { users, short, weight_updates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub beta: f64,
    pub seed: u64,
    /// Per-group accuracy on the held-out pool; `None` for empty groups.
    pub z: Vec<Option<f64>>,
    pub acc_overall: Option<f64>,
    pub tdpv: Option<f64>,
    /// Cumulative sampled users per group.
    pub counts: Vec<usize>,
    pub n_train: usize,
    pub n_eval: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub short_batch: bool,
    /// Kept out of results files so reruns are byte-identical.
    #[serde(skip)]
    pub wall_clock_ms: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub records: Vec<StepRecord>,
    pub eval_users: Vec<UserId>,
    /// Training users in the order they were drawn; `𝒟_t` is the prefix of
    /// length `records[t - 1].n_train`.
    pub sampled: Vec<UserId>,
    /// The candidate pool ran out before the configured number of rounds.
    pub stopped_early: bool,
}

/// Splits labelled users into (candidates, evaluation pool) with a seeded
/// shuffle; both keep world order.
pub fn split_users(users: &[UserId], eval_fraction: f64, seed: u64) -> (Vec<UserId>, Vec<UserId>) {
    let mut order: Vec<usize> = (0..users.len()).collect();
    order.shuffle(&mut stream(seed, Domain::Split, 0));
    let n_eval = (users.len() as f64 * eval_fraction).round() as usize;
    let mut is_eval = vec![false; users.len()];
    for &i in &order[..n_eval] {
        is_eval[i] = true;
    }
    let (eval, cand): (Vec<(usize, &UserId)>, Vec<_>) = users.iter().enumerate().partition(|(i, _)| is_eval[*i]);
    (cand.into_iter().map(|(_, &u)| u).collect(), eval.into_iter().map(|(_, &u)| u).collect())
}

/// The sampling loop: sample, retrain from scratch, evaluate, update.
pub fn run_loop<L>(
    world: &World,
    label_of: L,
    spec: &PredictorSpec,
    config: &FgisConfig,
    k: usize,
) -> Result<LoopOutcome, FgisError>
where
    L: Fn(UserId) -> Option<usize> + Sync,
{
    config.validate()?;
    spec.validate()?;
    let g = world.n_groups();
    let users: Vec<UserId> = world.user_ids().collect();
    let mut labels = Vec::with_capacity(users.len());
    for &u in &users {
        let l = label_of(u).ok_or(crate::error::MetricsError::MissingLabel(u))?;
        if l >= g {
            return Err(crate::error::MetricsError::LabelRange { user: u, label: l }.into());
        }
        labels.push(l);
    }
    let (candidates, eval_users) = split_users(&users, config.eval_fraction, config.seed);
    let mut pool: Vec<(UserId, usize)> = candidates.iter().map(|&u| (u, label_of(u).expect("checked above"))).collect();

    let mut rng: ChaCha8Rng = stream(config.seed, Domain::Sampling, 0);
    let mut state = SamplerState::new(g, config.z_init.max(config.z_floor));
    let mut records = Vec::with_capacity(config.rounds);
    let mut stopped_early = false;

    for t in 1..=config.rounds {
        if pool.is_empty() {
            stopped_early = true;
            log::warn!("candidate pool exhausted after {} rounds", t - 1);
            break;
        }
        let started = Instant::now();
        let batch = sample_batch(&pool, &state, config, &mut rng)?;
        let chosen: HashSet<UserId> = batch.users.iter().copied().collect();
        pool.retain(|(u, _)| !chosen.contains(u));
        state.sampled.extend_from_slice(&batch.users);

        let model = train(spec, world, &state.sampled)?;
        let eval = evaluate_users(world, &model, &eval_users, k);
        let pairs: Vec<(UserId, bool)> = eval.hits.iter().map(|h| (h.user, h.hit)).collect();
        let report = group_accuracy_direct(&pairs, &label_of, g)?;

        for (zg, measured) in state.z.iter_mut().zip(&report.z) {
            if let Some(m) = measured {
                *zg = m.max(config.z_floor);
            }
        }
        for u in &batch.users {
            state.x[label_of(*u).expect("checked above")] += 1;
        }
        state.step = t;

        records.push(StepRecord {
            t,
            beta: config.beta,
            seed: config.seed,
            z: report.z,
            acc_overall: eval.accuracy(),
            tdpv: report.tdpv,
            counts: state.x.clone(),
            n_train: state.sampled.len(),
            n_eval: eval.hits.len(),
            short_batch: batch.short,
            wall_clock_ms: started.elapsed().as_millis(),
        });
        if batch.short {
            stopped_early = t < config.rounds;
            break;
        }
    }
    Ok(LoopOutcome { records, eval_users, sampled: state.sampled, stopped_early })
}
