mod common;

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mobfair::fgis::{group_weights, Batch};
use mobfair::metrics::{audit, evaluate_users, UserHit};
use mobfair::report::median;
use mobfair::sakm::{calibration_slope, run_inner_loop_observed};
use mobfair::{
    pipeline, proxy_labels, sakm_fit, tdpv, train, FgisConfig, Matrix, NextLocationModel, PredictorKind, PredictorSpec,
    Region, RegionId, RunConfig, SakmConfig, SakmParams, SamplerState, UserId, World,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn c1_tdpv_anchors() -> Outcome {
    let a = tdpv(&[0.390, 0.355, 0.346, 0.335]).unwrap();
    let b = tdpv(&[0.383, 0.359, 0.353, 0.351]).unwrap();
    let pass = (a - 0.174).abs() <= 1e-9 && (b - 0.102).abs() <= 1e-9;
    outcome(pass, format!("tdpv = {a:.12}, {b:.12}"))
}

fn c2_lloyd_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = SakmParams { eta: 0.0, ..SakmParams::default() };
    let mut mismatches = 0;
    let mut iterations = 0;
    for _ in 0..20 {
        let n = rng.random_range(20..=500);
        let k = rng.random_range(2..=4);
        let d = rng.random_range(1..=5);
        let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random::<f64>()).collect());
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut rng);
        let init = x.select_rows(&rows[..k]);
        let expected = common::reference_lloyd(&x, &init, params.max_iter, params.tau);
        let mut seen = Vec::new();
        run_inner_loop_observed(&x, &init, &vec![1.0 / k as f64; k], &params, |it| seen.push(it.assignments.to_vec()))
            .unwrap();
        iterations += seen.len();
        if seen != expected {
            mismatches += 1;
        }
    }
    let elapsed = started.elapsed();
    outcome(
        mismatches == 0 && within(elapsed, 5),
        format!("{mismatches} of 20 instances differ over {iterations} iterations ({elapsed:.1?})"),
    )
}

/// Minimum-inertia labelling of 1D points whose group sizes equal `pi * n`.
fn exhaustive_partition(points: &[f64], pi: &[f64]) -> Vec<usize> {
    let n = points.len();
    let k = pi.len();
    let sizes: Vec<usize> = pi.iter().map(|p| (p * n as f64).round() as usize).collect();
    let mut best = (f64::INFINITY, Vec::new());
    for code in 0..k.pow(n as u32) {
        let labels: Vec<usize> = (0..n).map(|i| code / k.pow(i as u32) % k).collect();
        if (0..k).any(|g| labels.iter().filter(|&&l| l == g).count() != sizes[g]) {
            continue;
        }
        let mut cost = 0.0;
        for g in 0..k {
            let members: Vec<f64> = (0..n).filter(|&i| labels[i] == g).map(|i| points[i]).collect();
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            cost += members.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        }
        if cost < best.0 {
            best = (cost, labels);
        }
    }
    best.1
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

fn c3_size_oracle() -> Outcome {
    let cases: [(&[f64], &[f64]); 2] =
        [(&[0.0, 1.0, 10.0, 11.0], &[0.5, 0.5]), (&[0.0, 1.0, 2.0, 10.0], &[0.75, 0.25])];
    let mut details = Vec::new();
    let mut pass = true;
    for (points, pi) in cases {
        let x = Matrix::from_vec(points.len(), 1, points.to_vec());
        let fit = sakm_fit(&x, &SakmConfig::new(pi.to_vec(), SakmParams::default()).unwrap()).unwrap();
        let oracle = exhaustive_partition(points, pi);
        let labels = fit.labels();
        let ok = if pi[0] == pi[1] { same_partition(&labels, &oracle) } else { labels == oracle };
        pass &= ok;
        details.push(format!("{points:?} -> {labels:?} (oracle {oracle:?})"));
    }
    outcome(pass, details.join("; "))
}

/// Gaussian blobs at the corners of the unit square, `sizes[g]` points each.
fn blobs(sizes: &[usize], sd: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let noise = Normal::new(0.0, sd).unwrap();
    let mut data = Vec::new();
    for (g, &m) in sizes.iter().enumerate() {
        let (cx, cy) = ((g % 2) as f64, (g / 2) as f64);
        for _ in 0..m {
            data.push(cx + noise.sample(rng));
            data.push(cy + noise.sample(rng));
        }
    }
    Matrix::from_vec(data.len() / 2, 2, data)
}

fn c4_calibration() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pi = vec![0.4, 0.3, 0.2, 0.1];
    let x = blobs(&[800, 600, 400, 200], 0.1, &mut rng);
    let fit = sakm_fit(&x, &SakmConfig::new(pi.clone(), SakmParams::default()).unwrap()).unwrap();
    let achieved = fit.achieved_by_target();
    let max_dev = achieved.iter().zip(&pi).map(|(a, p)| (a - p).abs()).fold(0.0, f64::max);

    let mut points = Vec::new();
    for _ in 0..20 {
        let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let n = 300;
        let sizes: Vec<usize> = raw.iter().map(|r| (r / total * n as f64).round() as usize).collect();
        let m: usize = sizes.iter().sum();
        let targets: Vec<f64> = sizes.iter().map(|&s| s as f64 / m as f64).collect();
        let region = blobs(&sizes, 0.1, &mut rng);
        let fit = sakm_fit(&region, &SakmConfig::new(targets.clone(), SakmParams::default()).unwrap()).unwrap();
        points.extend(targets.into_iter().zip(fit.achieved_by_target()));
    }
    let slope = calibration_slope(&points).unwrap_or(f64::NAN);
    let elapsed = started.elapsed();
    outcome(
        max_dev <= 0.02 && (0.9..=1.1).contains(&slope) && within(elapsed, 30),
        format!(
            "achieved {achieved:.3?}, max deviation {max_dev:.4}, slope over 20 regions {slope:.4} ({elapsed:.1?})"
        ),
    )
}

/// Uniform draws without replacement: `floor(u * len)` then an
/// order-preserving removal.
fn uniform_reference(pool: &mut Vec<UserId>, draws: usize, rng: &mut ChaCha8Rng) -> Vec<UserId> {
    (0..draws.min(pool.len()))
        .map(|_| {
            let u: f64 = rng.random();
            pool.remove((u * pool.len() as f64) as usize)
        })
        .collect()
}

fn c5_uniform_oracle() -> Outcome {
    let started = Instant::now();
    let shares = [0.4, 0.3, 0.2, 0.1];
    let candidates: Vec<(UserId, usize)> = (0..5000u32)
        .map(|i| {
            let g = match i % 10 {
                0..=3 => 0,
                4..=6 => 1,
                7 | 8 => 2,
                _ => 3,
            };
            (UserId(i), g)
        })
        .collect();
    let config = FgisConfig { beta: 0.0, batch_size: 200, mini_batch: 20, ..FgisConfig::default() };

    let mut identical = true;
    for seed in 0..5 {
        let mut ours_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ref_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = candidates.clone();
        let mut ref_pool: Vec<UserId> = candidates.iter().map(|c| c.0).collect();
        let state = SamplerState { x: vec![50, 0, 3, 900], z: vec![0.9, 0.01, 0.3, 0.5], sampled: Vec::new(), step: 0 };
        for _ in 0..5 {
            let Batch { users, .. } = mobfair::sample_batch(&pool, &state, &config, &mut ours_rng).unwrap();
            let expected = uniform_reference(&mut ref_pool, config.batch_size, &mut ref_rng);
            let bytes = |v: &[UserId]| v.iter().flat_map(|u| u.0.to_le_bytes()).collect::<Vec<u8>>();
            identical &= bytes(&users) == bytes(&expected);
            let chosen: HashSet<UserId> = users.into_iter().collect();
            pool.retain(|(u, _)| !chosen.contains(u));
        }
    }

    let small = FgisConfig { batch_size: 50, mini_batch: 10, ..config };
    let state = SamplerState::new(4, 0.1);
    let mut counts = [0.0; 4];
    for b in 0..200 {
        let batch =
            mobfair::sample_batch(&candidates, &state, &small, &mut ChaCha8Rng::seed_from_u64(1000 + b)).unwrap();
        for u in batch.users {
            counts[candidates[u.0 as usize].1] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    let expected: Vec<f64> = shares.iter().map(|s| s * total).collect();
    let p = common::chi_square_p(&counts, &expected);
    let elapsed = started.elapsed();
    outcome(
        identical && p > 0.01 && within(elapsed, 10),
        format!("byte-identical: {identical}, group counts {counts:?}, chi-square p = {p:.4} ({elapsed:.1?})"),
    )
}

fn c6_weight_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = 0;
    for beta in [1.0, 10.0, 100.0] {
        for _ in 0..200 {
            let g = rng.random_range(2..=5);
            let z: Vec<f64> = (0..g).map(|_| rng.random_range(0.01..1.0)).collect();
            let x: Vec<usize> = (0..g).map(|_| rng.random_range(0..2000)).collect();
            let avail = vec![true; g];
            let p = group_weights(&z, &x, beta, &avail).unwrap();
            let target = rng.random_range(0..g);
            let mut z_up = z.clone();
            z_up[target] = (z[target] * rng.random_range(1.0..2.0)).min(1.0);
            let mut x_up = x.clone();
            x_up[target] += rng.random_range(1..100);
            for q in [group_weights(&z_up, &x, beta, &avail).unwrap(), group_weights(&z, &x_up, beta, &avail).unwrap()]
            {
                if q[target] > p[target] + 1e-15 {
                    violations += 1;
                }
                if (0..g).any(|h| h != target && q[h] + 1e-15 < p[h]) {
                    violations += 1;
                }
            }
            for a in 0..g {
                for b in 0..g {
                    if z[a] <= z[b] && x[a] <= x[b] && p[a] + 1e-15 < p[b] {
                        violations += 1;
                    }
                }
            }
        }
    }

    let floored = [0.01, 0.01, 0.35, 1.0];
    let p = group_weights(&floored, &[0, 40_000, 7, 0], 100.0, &[true; 4]).unwrap();
    let sum: f64 = p.iter().sum();
    let normalized = p.iter().all(|v| v.is_finite() && *v >= 0.0) && (sum - 1.0).abs() <= 1e-12;

    let state = SamplerState { x: vec![0, 3000], z: vec![0.0, 0.8], sampled: Vec::new(), step: 0 };
    let candidates: Vec<(UserId, usize)> = (0..100u32).map(|i| (UserId(i), (i % 2) as usize)).collect();
    let config = FgisConfig { beta: 100.0, batch_size: 60, mini_batch: 10, ..FgisConfig::default() };
    let drawn = mobfair::sample_batch(&candidates, &state, &config, &mut ChaCha8Rng::seed_from_u64(0));
    let floor_ok = drawn.is_ok_and(|b| b.users.len() == 60);

    outcome(
        violations == 0 && normalized && floor_ok,
        format!("{violations} monotonicity violations; beta=100 probabilities {p:?} sum {sum}; floored sampling ok: {floor_ok}"),
    )
}

fn c7_disparity_reduction() -> Outcome {
    let started = Instant::now();
    let config = RunConfig::default();
    let generated = mobfair::generate_world(&config.synth, config.synth.seed).unwrap();
    let world = &generated.world;
    let features = mobfair::build_user_features(world, config.features.dim, config.features.seed);
    let labels = proxy_labels(world, &features, config.sakm.mode, &config.sakm.params()).unwrap();
    let seeds: Vec<u64> = (0..10).map(|i| config.fgis.seed + i).collect();
    let dir = tempfile::tempdir().unwrap();
    let cells =
        pipeline::run_experiment(world, |u| labels.label_of(u), &config, &[0.0, 100.0], &seeds, dir.path()).unwrap();

    let at = |beta: f64, t: usize, f: &dyn Fn(&mobfair::StepRecord) -> Option<f64>| -> Vec<f64> {
        cells
            .iter()
            .filter(|c| c.beta == beta)
            .filter_map(|c| c.records.iter().find(|r| r.t == t).and_then(f))
            .collect()
    };
    let rounds = config.fgis.rounds;
    let tdpv0 = median(&at(0.0, 2, &|r| r.tdpv)).unwrap_or(f64::NAN);
    let tdpv100 = median(&at(100.0, 2, &|r| r.tdpv)).unwrap_or(f64::NAN);
    let acc0 = median(&at(0.0, rounds, &|r| r.acc_overall)).unwrap_or(f64::NAN);
    let acc100 = median(&at(100.0, rounds, &|r| r.acc_overall)).unwrap_or(f64::NAN);
    let reduction = 1.0 - tdpv100 / tdpv0;
    let elapsed = started.elapsed();
    outcome(
        reduction >= 0.2 && (acc0 - acc100).abs() <= 0.02 && within(elapsed, 15 * 60),
        format!(
            "step-2 median TDPV {tdpv0:.4} -> {tdpv100:.4} ({:.1}% lower), final Acc@{} {acc0:.4} vs {acc100:.4} ({elapsed:.1?})",
            100.0 * reduction,
            config.metric_k
        ),
    )
}

fn random_small_world(rng: &mut ChaCha8Rng) -> World {
    let n_users = rng.random_range(5..=50);
    let n_pois = rng.random_range(2..=32);
    let users: Vec<(u32, Vec<(u32, i64)>)> = (0..n_users)
        .map(|_| {
            let visits =
                (0..rng.random_range(1..12)).map(|_| (rng.random_range(0..n_pois), rng.random_range(0..28))).collect();
            (rng.random_range(0..3), visits)
        })
        .collect();
    let regions = vec![(1.0, vec![0.5, 0.5]), (2.0, vec![0.2, 0.8]), (1.0, vec![1.0, 0.0])];
    common::world(&regions, n_pois, &users)
}

fn c8_acc_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    let mut mismatches = 0;
    for _ in 0..50 {
        let world = random_small_world(&mut rng);
        let users: Vec<UserId> = world.user_ids().collect();
        let mut train_users = users.clone();
        train_users.shuffle(&mut rng);
        train_users.truncate(rng.random_range(1..=users.len()));
        let kind = if rng.random::<bool>() { PredictorKind::FreqBlend } else { PredictorKind::CovisitKnn };
        let spec = PredictorSpec { kind, ..PredictorSpec::default() };
        let model = train(&spec, &world, &train_users).unwrap();
        let k = rng.random_range(1..=20);
        let eval = evaluate_users(&world, &model, &users, k);

        let (split, window) = (world.split_time(), world.eval_window());
        for t in world.trajectories() {
            let actual: HashSet<u32> = t
                .visits()
                .iter()
                .filter(|v| v.timestamp >= split && v.timestamp < split + window)
                .map(|v| v.poi_id.0)
                .collect();
            let predicted: HashSet<u32> = model.predict_top_k(t.user_id, k).iter().map(|p| p.0).collect();
            let pipeline_hit = eval.hits.iter().find(|h| h.user == t.user_id).map(|h| h.hit);
            let expected = (!actual.is_empty()).then(|| !actual.is_disjoint(&predicted));
            checked += 1;
            if pipeline_hit != expected || (expected.is_none() != eval.excluded.contains(&t.user_id)) {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches over {checked} users in 50 worlds"))
}

fn c9_convexity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut violations = 0;
    let mut identity_failures = 0;
    for trial in 0..100 {
        let n_regions = if trial % 10 == 0 { 1 } else { rng.random_range(2..=8) };
        let g = rng.random_range(2..=5);
        let regions: Vec<Region> = (0..n_regions)
            .map(|r| {
                let raw: Vec<f64> = (0..g).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                Region {
                    id: RegionId(r),
                    group_proportions: raw.iter().map(|v| v / s).collect(),
                    population_weight: rng.random_range(1.0..1000.0),
                }
            })
            .collect();
        let mut hits = Vec::new();
        let mut user = 0;
        for region in &regions {
            for _ in 0..rng.random_range(1..40) {
                hits.push(UserHit { user: UserId(user), region: region.id, hit: rng.random::<f64>() < 0.4 });
                user += 1;
            }
        }
        let report = audit(&hits, &regions, None).unwrap();
        let acc: Vec<f64> = report.regions.iter().map(|r| r.accuracy).collect();
        let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for z in report.groups.z.iter().flatten() {
            if *z < lo - 1e-12 || *z > hi + 1e-12 {
                violations += 1;
            }
        }
        if n_regions == 1 && report.groups.z.iter().any(|z| z.is_none_or(|z| (z - acc[0]).abs() > 1e-12)) {
            identity_failures += 1;
        }
    }
    outcome(
        violations == 0 && identity_failures == 0,
        format!(
            "{violations} convexity violations, {identity_failures} single-region identity failures over 100 audits"
        ),
    )
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("TDPV anchors", c1_tdpv_anchors),
        ("size-aware k-means equals Lloyd at eta=0", c2_lloyd_equivalence),
        ("size-aware k-means exhaustive size oracle", c3_size_oracle),
        ("size-aware k-means calibration", c4_calibration),
        ("uniform sampler at beta=0", c5_uniform_oracle),
        ("group weight properties", c6_weight_properties),
        ("end-to-end disparity reduction", c7_disparity_reduction),
        ("Acc@k brute force", c8_acc_brute_force),
        ("group accuracy convexity", c9_convexity),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let Outcome { pass, detail } = run();
        failed += usize::from(!pass);
        println!("criterion {} [{}] {name}: {detail}", i + 1, if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
