//! Per-user mobility features: L1-normalised pre-split visit histograms over
//! POIs, reduced to `d` dimensions by a seeded ±1/√d random projection.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::domain::{UserId, World};
use crate::matrix::Matrix;
use crate::rng::{stream, Domain};

pub const DEFAULT_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub user_ids: Vec<UserId>,
    pub data: Matrix,
    /// Users without any pre-split visit; their rows are zero.
    pub empty_history: Vec<UserId>,
}

impl FeatureMatrix {
    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn len(&self) -> usize {
        self.user_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user_ids.is_empty()
    }

    /// Writes `user_id,f0,..,f{d-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["user_id".to_string()];
        header.extend((0..self.dim()).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for (u, row) in self.user_ids.iter().zip(self.data.iter_rows()) {
            let mut rec = vec![u.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Projection row for one POI: `d` entries of ±1/√d.
fn projection_row(seed: u64, poi_position: usize, d: usize) -> Vec<f64> {
    let scale = 1.0 / (d as f64).sqrt();
    let mut rng = stream(seed, Domain::Projection, poi_position as u64);
    (0..d).map(|_| if rng.random::<bool>() { scale } else { -scale }).collect()
}

/// Builds features for every user of `world`, in trajectory order.
///
/// Panics if `d < 2`.
pub fn build_user_features(world: &World, d: usize, seed: u64) -> FeatureMatrix {
    assert!(d >= 2, "feature dimension must be at least 2");
    let projection: Vec<Vec<f64>> =
        (0..world.pois().len()).into_par_iter().map(|p| projection_row(seed, p, d)).collect();

    let rows: Vec<(UserId, Vec<f64>, bool)> = world
        .trajectories()
        .par_iter()
        .map(|t| {
            let history = t.history(world.split_time());
            let mut counts: Vec<(usize, u32)> = Vec::with_capacity(history.len());
            for v in history {
                let p = world.poi_position(v.poi_id).expect("validated world");
                counts.push((p, 1));
            }
            counts.sort_unstable();
            counts.dedup_by(|next, acc| {
                if next.0 == acc.0 {
                    acc.1 += next.1;
                    true
                } else {
                    false
                }
            });
            let total = history.len() as f64;
            let mut row = vec![0.0; d];
            for (p, c) in &counts {
                let w = *c as f64 / total;
                for (r, proj) in row.iter_mut().zip(&projection[*p]) {
                    *r += w * proj;
                }
            }
            (t.user_id, row, history.is_empty())
        })
        .collect();

    let mut user_ids = Vec::with_capacity(rows.len());
    let mut data = Vec::with_capacity(rows.len() * d);
    let mut empty_history = Vec::new();
    for (u, row, empty) in rows {
        user_ids.push(u);
        data.extend(row);
        if empty {
            empty_history.push(u);
        }
    }
    if !empty_history.is_empty() {
        log::warn!("{} users have no pre-split visits; zero feature rows", empty_history.len());
    }
    FeatureMatrix { user_ids, data: Matrix::from_vec(world.trajectories().len(), d, data), empty_history }
}
