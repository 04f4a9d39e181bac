mod common;

use std::collections::HashMap;

use mobfair::io::{read_answer_key, write_answer_key, write_world};
use mobfair::{generate_world, SynthConfig, UserId};

fn two_groups(alpha: f64, n_users: usize) -> SynthConfig {
    SynthConfig {
        group_names: vec!["a".into(), "b".into()],
        n_regions: 4,
        n_pois: 400,
        n_users,
        base_proportions: vec![0.5, 0.5],
        group_affinity: alpha,
        noise: 0.0,
        ..SynthConfig::default()
    }
}

/// Visit counts per (group, poi) from the answer key.
fn visit_table(config: &SynthConfig, seed: u64) -> Vec<Vec<f64>> {
    let gen = generate_world(config, seed).unwrap();
    let mut table = vec![vec![0.0; config.n_pois]; config.n_groups()];
    for t in gen.world.trajectories() {
        let g = gen.answer_key.group_of(t.user_id).unwrap();
        for v in t.visits() {
            table[g][v.poi_id.0 as usize] += 1.0;
        }
    }
    table
}

#[test]
fn zero_affinity_groups_are_indistinguishable() {
    let table = visit_table(&two_groups(0.0, 2000), 11);
    // Pool the sparse tail so every expected cell count is comfortably large.
    let mut totals: Vec<(usize, f64)> = (0..table[0].len()).map(|p| (p, table[0][p] + table[1][p])).collect();
    totals.sort_by(|a, b| b.1.total_cmp(&a.1));
    let head: Vec<usize> = totals.iter().take(15).map(|t| t.0).collect();
    let rows: Vec<Vec<f64>> = table
        .iter()
        .map(|row| {
            let mut binned: Vec<f64> = head.iter().map(|&p| row[p]).collect();
            binned.push(row.iter().sum::<f64>() - binned.iter().sum::<f64>());
            binned
        })
        .collect();
    let col: Vec<f64> = (0..rows[0].len()).map(|j| rows[0][j] + rows[1][j]).collect();
    let n: f64 = col.iter().sum();
    let mut observed = Vec::new();
    let mut expected = Vec::new();
    for row in &rows {
        let r: f64 = row.iter().sum();
        for (o, c) in row.iter().zip(&col) {
            observed.push(*o);
            expected.push(r * c / n);
        }
    }
    // Contingency table with (2-1)(16-1) degrees of freedom.
    let stat: f64 = observed.iter().zip(&expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    let p = 1.0 - statrs::distribution::ContinuousCDF::cdf(&statrs::distribution::ChiSquared::new(15.0).unwrap(), stat);
    assert!(p > 0.01, "chi-square p = {p}");
}

#[test]
fn answer_key_matches_region_proportions() {
    let config = SynthConfig { n_users: 5000, n_regions: 5, ..SynthConfig::default() };
    let gen = generate_world(&config, 5).unwrap();
    let mut counts: HashMap<u32, Vec<f64>> = HashMap::new();
    for t in gen.world.trajectories() {
        let g = gen.answer_key.group_of(t.user_id).unwrap();
        counts.entry(t.home_region_id.0).or_insert_with(|| vec![0.0; 4])[g] += 1.0;
    }
    for region in gen.world.regions() {
        let c = &counts[&region.id.0];
        let n: f64 = c.iter().sum();
        for (g, &p) in region.group_proportions.iter().enumerate() {
            let sigma = (p * (1.0 - p) / n).sqrt();
            let observed = c[g] / n;
            assert!((observed - p).abs() <= 3.0 * sigma, "region {} group {g}: {observed} vs {p}", region.id);
        }
    }
}

fn separation(alpha: f64) -> f64 {
    let table = visit_table(&two_groups(alpha, 600), 2);
    let dist: Vec<Vec<f64>> = table
        .iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect();
    0.5 * dist[0].iter().zip(&dist[1]).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[test]
fn affinity_increases_separation() {
    let s: Vec<f64> = [0.0, 0.5, 1.0].iter().map(|&a| separation(a)).collect();
    assert!(s[0] < s[1] && s[1] < s[2], "{s:?}");
    assert!((s[2] - 1.0).abs() < 1e-12);
}

#[test]
fn full_affinity_pools_are_disjoint() {
    let config = two_groups(1.0, 300);
    let gen = generate_world(&config, 9).unwrap();
    let mut seen_by: HashMap<u32, usize> = HashMap::new();
    for t in gen.world.trajectories() {
        let g = gen.answer_key.group_of(t.user_id).unwrap();
        for v in t.visits() {
            assert_eq!(*seen_by.entry(v.poi_id.0).or_insert(g), g, "poi {} shared", v.poi_id);
        }
    }
}

#[test]
fn same_seed_same_world_bytes() {
    let config = SynthConfig { n_users: 400, n_pois: 200, ..SynthConfig::default() };
    let a = generate_world(&config, 3).unwrap();
    let b = generate_world(&config, 3).unwrap();
    assert_eq!(a.world, b.world);
    assert_eq!(a.answer_key, b.answer_key);

    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_world(&a.world, da.path()).unwrap();
    write_world(&b.world, db.path()).unwrap();
    for name in ["regions.csv", "pois.csv", "users.csv", "visits.csv", "meta.json"] {
        let fa = std::fs::read(da.path().join(name)).unwrap();
        let fb = std::fs::read(db.path().join(name)).unwrap();
        assert_eq!(fa, fb, "{name}");
    }

    let c = generate_world(&config, 4).unwrap();
    assert_ne!(a.world, c.world);
}

#[test]
fn answer_key_round_trips() {
    let gen = generate_world(&SynthConfig { n_users: 200, n_pois: 100, ..SynthConfig::default() }, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_answer_key(&gen.answer_key, dir.path()).unwrap();
    let back = read_answer_key(dir.path()).unwrap();
    assert_eq!(back, gen.answer_key);
    assert_eq!(back.len(), 200);
    assert!(back.group_of(UserId(10_000)).is_none());
}

#[test]
fn every_user_has_history_and_window_visits_fit() {
    let gen = generate_world(&SynthConfig { n_users: 500, n_pois: 200, ..SynthConfig::default() }, 6).unwrap();
    let w = &gen.world;
    let end = w.split_time() + w.eval_window();
    for t in w.trajectories() {
        assert!(!t.visits().is_empty());
        assert!(t.visits().iter().all(|v| v.timestamp >= 0 && v.timestamp < end));
    }
}
