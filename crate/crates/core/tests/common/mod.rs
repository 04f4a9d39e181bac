#![allow(dead_code)]

use mobfair::{Matrix, Poi, PoiId, Region, RegionId, Trajectory, UserId, Visit, World, DAY};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Fraction of points whose label matches under the best relabelling of
/// `pred` onto `truth` (both in `0..k`).
pub fn best_permutation_agreement(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut best = 0;
    for perm in all_permutations(k) {
        let hits = pred.iter().zip(truth).filter(|(p, t)| perm[**p] == **t).count();
        best = best.max(hits);
    }
    best as f64 / pred.len() as f64
}

pub fn all_permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in all_permutations(k - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, k - 1);
            out.push(q);
        }
    }
    out
}

/// Upper-tail p-value of Pearson's chi-square statistic.
pub fn chi_square_p(observed: &[f64], expected: &[f64]) -> f64 {
    let stat: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = (observed.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Textbook Lloyd iterations; returns the assignment vector of every
/// iteration, stopping once no centroid moves by `tau` or more.
pub fn reference_lloyd(x: &Matrix, init: &Matrix, max_iter: usize, tau: f64) -> Vec<Vec<usize>> {
    let (n, d, k) = (x.rows(), x.cols(), init.rows());
    let mut c: Vec<Vec<f64>> = (0..k).map(|j| init.row(j).to_vec()).collect();
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let assign: Vec<usize> = (0..n)
            .map(|i| {
                let mut best = 0;
                for j in 1..k {
                    if sq(x.row(i), &c[j]) < sq(x.row(i), &c[best]) {
                        best = j;
                    }
                }
                best
            })
            .collect();
        let mut shift: f64 = 0.0;
        for (j, centroid) in c.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == j).collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = vec![0.0; d];
            for &i in &members {
                for (m, v) in mean.iter_mut().zip(x.row(i)) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= members.len() as f64;
            }
            shift = shift.max(sq(&mean, centroid).sqrt());
            *centroid = mean;
        }
        history.push(assign);
        if shift < tau {
            break;
        }
    }
    history
}

/// Hand-built world: `users` holds (home region, [(poi, day)]) with visits
/// before day 21 in history and days 21..28 in the evaluation window.
pub fn world(proportions: &[(f64, Vec<f64>)], n_pois: u32, users: &[(u32, Vec<(u32, i64)>)]) -> World {
    let g = proportions[0].1.len();
    let regions = proportions
        .iter()
        .enumerate()
        .map(|(r, (w, p))| Region { id: RegionId(r as u32), group_proportions: p.clone(), population_weight: *w })
        .collect();
    let pois = (0..n_pois).map(|i| Poi { id: PoiId(i), region_id: RegionId(0), category: 0 }).collect();
    let trajectories = users
        .iter()
        .enumerate()
        .map(|(u, (home, visits))| {
            let user = UserId(u as u32);
            let v = visits
                .iter()
                .map(|&(p, day)| Visit { user_id: user, poi_id: PoiId(p), timestamp: day * DAY })
                .collect();
            Trajectory::new(user, RegionId(*home), v).unwrap()
        })
        .collect();
    World::new((0..g).map(|i| format!("g{i}")).collect(), regions, pois, trajectories, 21 * DAY, 7 * DAY).unwrap()
}
