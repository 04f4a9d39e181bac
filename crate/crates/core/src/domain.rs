//! Core data types shared by every stage of the pipeline.
//!
//! All per-group vectors in the crate are index-aligned with [`World::groups`].

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::DomainError;

/// Tolerance on the sum of a region's group proportions.
pub const PROPORTION_TOLERANCE: f64 = 1e-9;

/// Seconds in one day.
pub const DAY: i64 = 86_400;

/// Seconds since epoch.
pub type Timestamp = i64;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    };
}

id_type!(
    /// Opaque user identifier.
    UserId
);
id_type!(
    /// Opaque point-of-interest identifier.
    PoiId
);
id_type!(
    /// Opaque region identifier.
    RegionId
);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Poi {
    pub id: PoiId,
    pub region_id: RegionId,
    pub category: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub user_id: UserId,
    pub poi_id: PoiId,
    pub timestamp: Timestamp,
}

/// A user's time-ordered visits plus their home region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub user_id: UserId,
    pub home_region_id: RegionId,
    visits: Vec<Visit>,
}

impl Trajectory {
    /// Builds a trajectory, sorting visits by timestamp (stable, so equal
    /// timestamps keep their input order).
    pub fn new(user_id: UserId, home_region_id: RegionId, mut visits: Vec<Visit>) -> Result<Self, DomainError> {
        if visits.is_empty() {
            return Err(DomainError::EmptyTrajectory(user_id));
        }
        for v in &visits {
            if v.user_id != user_id {
                return Err(DomainError::ForeignVisit { user: user_id, found: v.user_id });
            }
            if v.timestamp < 0 {
                return Err(DomainError::NegativeTimestamp(user_id));
            }
        }
        visits.sort_by_key(|v| v.timestamp);
        Ok(Self { user_id, home_region_id, visits })
    }

    pub fn visits(&self) -> &[Visit] {
        &self.visits
    }

    /// Visits strictly before `split`.
    pub fn history(&self, split: Timestamp) -> &[Visit] {
        let end = self.visits.partition_point(|v| v.timestamp < split);
        &self.visits[..end]
    }

    /// Visits in `[split, split + window)`.
    pub fn window(&self, split: Timestamp, window: i64) -> &[Visit] {
        let start = self.visits.partition_point(|v| v.timestamp < split);
        let end = self.visits.partition_point(|v| v.timestamp < split + window);
        &self.visits[start..end]
    }
}

/// A geographic unit with census group proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: RegionId,
    pub group_proportions: Vec<f64>,
    pub population_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupId {
    pub index: usize,
    pub name: String,
}

/// A complete mobility dataset. Immutable after construction.
#[derive(Debug, Clone)]
pub struct World {
    groups: Vec<GroupId>,
    regions: Vec<Region>,
    pois: Vec<Poi>,
    trajectories: Vec<Trajectory>,
    split_time: Timestamp,
    eval_window: i64,
    region_index: HashMap<RegionId, usize>,
    poi_index: HashMap<PoiId, usize>,
    user_index: HashMap<UserId, usize>,
}

impl PartialEq for World {
    fn eq(&self, other: &Self) -> bool {
        // The lookup maps are functions of the fields below.
        self.groups == other.groups
            && self.regions == other.regions
            && self.pois == other.pois
            && self.trajectories == other.trajectories
            && self.split_time == other.split_time
            && self.eval_window == other.eval_window
    }
}

impl World {
    pub fn new(
        group_names: Vec<String>,
        regions: Vec<Region>,
        pois: Vec<Poi>,
        trajectories: Vec<Trajectory>,
        split_time: Timestamp,
        eval_window: i64,
    ) -> Result<Self, DomainError> {
        if group_names.len() < 2 {
            return Err(DomainError::TooFewGroups(group_names.len()));
        }
        let groups: Vec<GroupId> =
            group_names.into_iter().enumerate().map(|(index, name)| GroupId { index, name }).collect();
        if eval_window <= 0 {
            return Err(DomainError::InvalidWindow(eval_window));
        }

        let mut region_index = HashMap::with_capacity(regions.len());
        for (i, r) in regions.iter().enumerate() {
            if region_index.insert(r.id, i).is_some() {
                return Err(DomainError::DuplicateRegion(r.id));
            }
            if r.group_proportions.len() != groups.len() {
                return Err(DomainError::ProportionArity {
                    region: r.id,
                    expected: groups.len(),
                    found: r.group_proportions.len(),
                });
            }
            if r.group_proportions.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(DomainError::ProportionRange(r.id));
            }
            let sum: f64 = r.group_proportions.iter().sum();
            if (sum - 1.0).abs() > PROPORTION_TOLERANCE {
                return Err(DomainError::ProportionSum { region: r.id, sum });
            }
            if !(r.population_weight >= 0.0 && r.population_weight.is_finite()) {
                return Err(DomainError::PopulationWeight(r.id));
            }
        }

        let mut poi_index = HashMap::with_capacity(pois.len());
        for (i, p) in pois.iter().enumerate() {
            if poi_index.insert(p.id, i).is_some() {
                return Err(DomainError::DuplicatePoi(p.id));
            }
            if !region_index.contains_key(&p.region_id) {
                return Err(DomainError::UnknownRegion(p.region_id));
            }
        }

        let mut user_index = HashMap::with_capacity(trajectories.len());
        let mut min_ts = Timestamp::MAX;
        let mut max_ts = Timestamp::MIN;
        for (i, t) in trajectories.iter().enumerate() {
            if user_index.insert(t.user_id, i).is_some() {
                return Err(DomainError::DuplicateUser(t.user_id));
            }
            if !region_index.contains_key(&t.home_region_id) {
                return Err(DomainError::UnknownRegion(t.home_region_id));
            }
            for v in &t.visits {
                if !poi_index.contains_key(&v.poi_id) {
                    return Err(DomainError::UnknownPoi(v.poi_id));
                }
                min_ts = min_ts.min(v.timestamp);
                max_ts = max_ts.max(v.timestamp);
            }
        }
        // A visit exactly at the split belongs to the evaluation window.
        if trajectories.is_empty() || !(min_ts < split_time && split_time <= max_ts) {
            return Err(DomainError::SplitOutsideSpan { split_time, min_ts, max_ts });
        }

        Ok(Self { groups, regions, pois, trajectories, split_time, eval_window, region_index, poi_index, user_index })
    }

    pub fn groups(&self) -> &[GroupId] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn pois(&self) -> &[Poi] {
        &self.pois
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn split_time(&self) -> Timestamp {
        self.split_time
    }

    pub fn eval_window(&self) -> i64 {
        self.eval_window
    }

    pub fn region(&self, id: RegionId) -> Option<&Region> {
        self.region_index.get(&id).map(|&i| &self.regions[i])
    }

    /// Dense index of a POI in [`World::pois`].
    pub fn poi_position(&self, id: PoiId) -> Option<usize> {
        self.poi_index.get(&id).copied()
    }

    pub fn user_position(&self, id: UserId) -> Option<usize> {
        self.user_index.get(&id).copied()
    }

    pub fn trajectory(&self, id: UserId) -> Option<&Trajectory> {
        self.user_position(id).map(|i| &self.trajectories[i])
    }

    pub fn user_ids(&self) -> impl Iterator<Item = UserId> + '_ {
        self.trajectories.iter().map(|t| t.user_id)
    }

    /// Pre-split visits of a user.
    pub fn history(&self, id: UserId) -> &[Visit] {
        self.trajectory(id).map_or(&[], |t| t.history(self.split_time))
    }

    /// Visits inside the evaluation window of a user.
    pub fn eval_visits(&self, id: UserId) -> &[Visit] {
        self.trajectory(id).map_or(&[], |t| t.window(self.split_time, self.eval_window))
    }
}
