//! On-disk formats.
//!
//! A world directory holds four CSV files plus `meta.json`:
//!
//! * `regions.csv`: `region_id,pop_weight,p_<group>...` (the group list is read
//!   from the `p_` columns, in order)
//! * `pois.csv`: `poi_id,region_id,category`
//! * `users.csv`: `user_id,home_region_id`
//! * `visits.csv`: `user_id,poi_id,timestamp`
//! * `meta.json`: `{"split_time": .., "eval_window": ..}` in seconds
//!
//! Generated worlds additionally carry `answer_key.csv` (`user_id,group`).

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{Poi, PoiId, Region, RegionId, Timestamp, Trajectory, UserId, Visit, World};
use crate::error::IoError;
use crate::features::FeatureMatrix;
use crate::fgis::StepRecord;
use crate::metrics::{AuditReport, UserHit};
use crate::sakm::{ProxyLabels, ProxyMode, RegionFit};
use crate::synth::AnswerKey;

/// Proportion rows off by at most this much are renormalised on load.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldPaths {
    pub regions: PathBuf,
    pub pois: PathBuf,
    pub users: PathBuf,
    pub visits: PathBuf,
    pub meta: PathBuf,
}

impl WorldPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            regions: dir.join("regions.csv"),
            pois: dir.join("pois.csv"),
            users: dir.join("users.csv"),
            visits: dir.join("visits.csv"),
            meta: dir.join("meta.json"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldMeta {
    split_time: Timestamp,
    eval_window: i64,
}

#[derive(Debug, Clone)]
pub struct LoadedWorld {
    pub world: World,
    /// Regions whose proportions were rescaled to sum to 1.
    pub renormalized: Vec<RegionId>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { path: path.to_path_buf(), source }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> IoError + '_ {
    move |source| IoError::Json { path: path.to_path_buf(), source }
}

fn reader(path: &Path) -> Result<csv::Reader<File>, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

/// Iterates data rows as (line number, record).
fn rows(path: &Path) -> Result<(csv::StringRecord, Vec<(u64, csv::StringRecord)>), IoError> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((line, rec));
    }
    Ok((header, out))
}

fn field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    rec: &csv::StringRecord,
    i: usize,
    name: &str,
) -> Result<T, IoError> {
    let raw = rec.get(i).ok_or_else(|| IoError::Malformed {
        path: path.to_path_buf(),
        line,
        message: format!("missing column {name}"),
    })?;
    raw.parse().map_err(|_| IoError::Malformed {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse {name} from {raw:?}"),
    })
}

fn malformed(path: &Path, line: u64, message: impl Into<String>) -> IoError {
    IoError::Malformed { path: path.to_path_buf(), line, message: message.into() }
}

fn expect_header(path: &Path, header: &csv::StringRecord, expected: &[&str]) -> Result<(), IoError> {
    let got: Vec<&str> = header.iter().collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(malformed(path, 1, format!("expected header {}", expected.join(","))));
    }
    Ok(())
}

pub fn load_world(paths: &WorldPaths) -> Result<LoadedWorld, IoError> {
    let meta: WorldMeta = {
        let file = File::open(&paths.meta).map_err(io_err(&paths.meta))?;
        serde_json::from_reader(BufReader::new(file)).map_err(json_err(&paths.meta))?
    };

    let (header, region_rows) = rows(&paths.regions)?;
    expect_header(&paths.regions, &header, &["region_id", "pop_weight"])?;
    let group_names: Vec<String> =
        header.iter().skip(2).map(|h| h.strip_prefix("p_").unwrap_or(h).to_string()).collect();
    let mut regions = Vec::with_capacity(region_rows.len());
    let mut renormalized = Vec::new();
    for (line, rec) in &region_rows {
        let p = &paths.regions;
        if rec.len() != header.len() {
            return Err(malformed(p, *line, format!("expected {} columns, found {}", header.len(), rec.len())));
        }
        let id = RegionId(field(p, *line, rec, 0, "region_id")?);
        let population_weight: f64 = field(p, *line, rec, 1, "pop_weight")?;
        let mut props = Vec::with_capacity(group_names.len());
        for (j, name) in group_names.iter().enumerate() {
            props.push(field::<f64>(p, *line, rec, 2 + j, name)?);
        }
        let sum: f64 = props.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > RENORMALIZE_TOLERANCE {
            return Err(IoError::ProportionSum { region: id, sum });
        }
        if (sum - 1.0).abs() > crate::domain::PROPORTION_TOLERANCE {
            props.iter_mut().for_each(|v| *v /= sum);
            renormalized.push(id);
            log::warn!("region {id}: proportions summed to {sum}; renormalised");
        }
        regions.push(Region { id, group_proportions: props, population_weight });
    }

    let (header, poi_rows) = rows(&paths.pois)?;
    expect_header(&paths.pois, &header, &["poi_id", "region_id", "category"])?;
    let region_ids: std::collections::HashSet<RegionId> = regions.iter().map(|r| r.id).collect();
    let mut pois = Vec::with_capacity(poi_rows.len());
    for (line, rec) in &poi_rows {
        let p = &paths.pois;
        let poi = Poi {
            id: PoiId(field(p, *line, rec, 0, "poi_id")?),
            region_id: RegionId(field(p, *line, rec, 1, "region_id")?),
            category: field(p, *line, rec, 2, "category")?,
        };
        if !region_ids.contains(&poi.region_id) {
            return Err(malformed(p, *line, format!("unknown region {}", poi.region_id)));
        }
        pois.push(poi);
    }
    let poi_ids: std::collections::HashSet<PoiId> = pois.iter().map(|p| p.id).collect();

    let (header, user_rows) = rows(&paths.users)?;
    expect_header(&paths.users, &header, &["user_id", "home_region_id"])?;
    let mut homes: Vec<(UserId, RegionId)> = Vec::with_capacity(user_rows.len());
    let mut user_pos: HashMap<UserId, usize> = HashMap::with_capacity(user_rows.len());
    for (line, rec) in &user_rows {
        let p = &paths.users;
        let user = UserId(field(p, *line, rec, 0, "user_id")?);
        let home = RegionId(field(p, *line, rec, 1, "home_region_id")?);
        if !region_ids.contains(&home) {
            return Err(malformed(p, *line, format!("unknown region {home}")));
        }
        if user_pos.insert(user, homes.len()).is_some() {
            return Err(malformed(p, *line, format!("duplicate user {user}")));
        }
        homes.push((user, home));
    }

    let (header, visit_rows) = rows(&paths.visits)?;
    expect_header(&paths.visits, &header, &["user_id", "poi_id", "timestamp"])?;
    let mut visits: Vec<Vec<Visit>> = vec![Vec::new(); homes.len()];
    for (line, rec) in &visit_rows {
        let p = &paths.visits;
        let visit = Visit {
            user_id: UserId(field(p, *line, rec, 0, "user_id")?),
            poi_id: PoiId(field(p, *line, rec, 1, "poi_id")?),
            timestamp: field(p, *line, rec, 2, "timestamp")?,
        };
        let Some(&u) = user_pos.get(&visit.user_id) else {
            return Err(malformed(p, *line, format!("unknown user {}", visit.user_id)));
        };
        if !poi_ids.contains(&visit.poi_id) {
            return Err(malformed(p, *line, format!("unknown poi {}", visit.poi_id)));
        }
        if visit.timestamp < 0 {
            return Err(malformed(p, *line, "negative timestamp"));
        }
        visits[u].push(visit);
    }

    let mut trajectories = Vec::with_capacity(homes.len());
    for ((user, home), v) in homes.into_iter().zip(visits) {
        if v.is_empty() {
            return Err(malformed(&paths.visits, 0, format!("user {user} has no visits")));
        }
        trajectories.push(Trajectory::new(user, home, v)?);
    }
    let world = World::new(group_names, regions, pois, trajectories, meta.split_time, meta.eval_window)?;
    Ok(LoadedWorld { world, renormalized })
}

pub fn write_world(world: &World, dir: impl AsRef<Path>) -> Result<WorldPaths, IoError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let paths = WorldPaths::in_dir(dir);

    let meta = WorldMeta { split_time: world.split_time(), eval_window: world.eval_window() };
    let text = serde_json::to_string_pretty(&meta).map_err(json_err(&paths.meta))?;
    fs::write(&paths.meta, text + "\n").map_err(io_err(&paths.meta))?;

    let mut w = writer(&paths.regions)?;
    let mut header = vec!["region_id".to_string(), "pop_weight".to_string()];
    header.extend(world.groups().iter().map(|g| format!("p_{}", g.name)));
    w.write_record(&header).map_err(csv_err(&paths.regions))?;
    for r in world.regions() {
        let mut rec = vec![r.id.to_string(), r.population_weight.to_string()];
        rec.extend(r.group_proportions.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err(&paths.regions))?;
    }
    w.flush().map_err(io_err(&paths.regions))?;

    let mut w = writer(&paths.pois)?;
    w.write_record(["poi_id", "region_id", "category"]).map_err(csv_err(&paths.pois))?;
    for p in world.pois() {
        w.write_record([p.id.to_string(), p.region_id.to_string(), p.category.to_string()])
            .map_err(csv_err(&paths.pois))?;
    }
    w.flush().map_err(io_err(&paths.pois))?;

    let mut w = writer(&paths.users)?;
    w.write_record(["user_id", "home_region_id"]).map_err(csv_err(&paths.users))?;
    for t in world.trajectories() {
        w.write_record([t.user_id.to_string(), t.home_region_id.to_string()]).map_err(csv_err(&paths.users))?;
    }
    w.flush().map_err(io_err(&paths.users))?;

    let mut w = writer(&paths.visits)?;
    w.write_record(["user_id", "poi_id", "timestamp"]).map_err(csv_err(&paths.visits))?;
    for t in world.trajectories() {
        for v in t.visits() {
            w.write_record([v.user_id.to_string(), v.poi_id.to_string(), v.timestamp.to_string()])
                .map_err(csv_err(&paths.visits))?;
        }
    }
    w.flush().map_err(io_err(&paths.visits))?;
    Ok(paths)
}

pub fn write_answer_key(key: &AnswerKey, dir: impl AsRef<Path>) -> Result<(), IoError> {
    let path = dir.as_ref().join("answer_key.csv");
    let mut w = writer(&path)?;
    w.write_record(["user_id", "group"]).map_err(csv_err(&path))?;
    for (u, g) in key.iter() {
        w.write_record([u.to_string(), g.to_string()]).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))
}

/// Latent labels of a generated world; [`IoError::NoAnswerKey`] for worlds
/// that did not come from the generator.
pub fn read_answer_key(dir: impl AsRef<Path>) -> Result<AnswerKey, IoError> {
    let path = dir.as_ref().join("answer_key.csv");
    if !path.exists() {
        return Err(IoError::NoAnswerKey);
    }
    let (header, data) = rows(&path)?;
    expect_header(&path, &header, &["user_id", "group"])?;
    let mut labels = BTreeMap::new();
    for (line, rec) in &data {
        labels.insert(UserId(field(&path, *line, rec, 0, "user_id")?), field(&path, *line, rec, 1, "group")?);
    }
    Ok(AnswerKey::from_labels(labels))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub mode: ProxyMode,
    pub n_users: usize,
    pub total_inertia: f64,
    pub fits: Vec<RegionFit>,
    pub fallback_regions: Vec<RegionId>,
}

/// Writes `labels.csv` (`user_id,cluster,group_label`) and `summary.json`.
pub fn write_proxy_labels(
    labels: &ProxyLabels,
    mode: ProxyMode,
    world: &World,
    dir: impl AsRef<Path>,
) -> Result<(), IoError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("labels.csv");
    let mut w = writer(&path)?;
    w.write_record(["user_id", "cluster", "group_label"]).map_err(csv_err(&path))?;
    for ((u, c), g) in labels.user_ids.iter().zip(&labels.clusters).zip(&labels.labels) {
        w.write_record([u.to_string(), c.to_string(), world.groups()[*g].name.clone()]).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let summary = ClusterSummary {
        mode,
        n_users: labels.len(),
        total_inertia: labels.fits.iter().filter(|f| !f.fallback).map(|f| f.inertia).sum(),
        fits: labels.fits.clone(),
        fallback_regions: labels.fallback_regions().collect(),
    };
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(json_err(&path))?;
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub fn write_features(features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    features.write_csv(BufWriter::new(file)).map_err(csv_err(path))
}

fn group_index(world: &World, raw: &str) -> Option<usize> {
    world
        .groups()
        .iter()
        .position(|g| g.name == raw)
        .or_else(|| raw.parse::<usize>().ok().filter(|&i| i < world.n_groups()))
}

/// Reads `labels.csv` written by [`write_proxy_labels`].
pub fn read_proxy_labels(path: impl AsRef<Path>, world: &World) -> Result<ProxyLabels, IoError> {
    let path = path.as_ref();
    let (header, data) = rows(path)?;
    expect_header(path, &header, &["user_id", "cluster", "group_label"])?;
    let mut users = Vec::with_capacity(data.len());
    let mut clusters = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for (line, rec) in &data {
        users.push(UserId(field(path, *line, rec, 0, "user_id")?));
        clusters.push(field(path, *line, rec, 1, "cluster")?);
        let raw = rec.get(2).unwrap_or("");
        labels.push(group_index(world, raw).ok_or_else(|| malformed(path, *line, format!("unknown group {raw:?}")))?);
    }
    Ok(ProxyLabels::new(users, clusters, labels, Vec::new()))
}

/// Group index per user, present when the hits file has a `group` column.
pub type HitLabels = Option<HashMap<UserId, usize>>;

/// Reads `user_id,hit[,group]`. Hits are 0/1; the group column may hold a
/// group name or index. Users without evaluation-window visits should be
/// left out of the file.
pub fn read_hits(path: impl AsRef<Path>, world: &World) -> Result<(Vec<UserHit>, HitLabels), IoError> {
    let path = path.as_ref();
    let (header, data) = rows(path)?;
    expect_header(path, &header, &["user_id", "hit"])?;
    let has_group = header.get(2) == Some("group");
    let mut hits = Vec::with_capacity(data.len());
    let mut labels = HashMap::new();
    for (line, rec) in &data {
        let user = UserId(field(path, *line, rec, 0, "user_id")?);
        let hit: u8 = field(path, *line, rec, 1, "hit")?;
        if hit > 1 {
            return Err(malformed(path, *line, "hit must be 0 or 1"));
        }
        let region = world
            .trajectory(user)
            .ok_or_else(|| malformed(path, *line, format!("unknown user {user}")))?
            .home_region_id;
        if has_group {
            let raw = rec.get(2).unwrap_or("");
            let g = group_index(world, raw).ok_or_else(|| malformed(path, *line, format!("unknown group {raw:?}")))?;
            labels.insert(user, g);
        }
        hits.push(UserHit { user, region, hit: hit == 1 });
    }
    Ok((hits, has_group.then_some(labels)))
}

pub fn write_hits(hits: &[UserHit], path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["user_id", "hit"]).map_err(csv_err(path))?;
    for h in hits {
        w.write_record([h.user.to_string(), u8::from(h.hit).to_string()]).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes `regions.csv` (`region_id,a_r,n_r,z_<group>..,score`) and
/// `groups.json` into `dir`.
pub fn write_audit(report: &AuditReport, world: &World, dir: impl AsRef<Path>) -> Result<(), IoError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("regions.csv");
    let mut w = writer(&path)?;
    let mut header = vec!["region_id".to_string(), "a_r".to_string(), "n_r".to_string()];
    header.extend(world.groups().iter().map(|g| format!("z_{}", g.name)));
    header.push("score".into());
    w.write_record(&header).map_err(csv_err(&path))?;
    for r in &report.regions {
        let mut rec = vec![r.region_id.to_string(), r.accuracy.to_string(), r.n_users.to_string()];
        rec.extend(r.z.iter().map(|z| opt(*z)));
        rec.push(r.score.score.to_string());
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join("groups.json");
    let text = serde_json::to_string_pretty(&report.groups).map_err(json_err(&path))?;
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

/// One JSON object per line.
pub fn write_records(records: &[StepRecord], path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(json_err(path))?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<StepRecord>, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| malformed(path, i as u64 + 1, e.to_string())))
        .collect()
}
