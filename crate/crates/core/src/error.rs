use std::path::PathBuf;

use thiserror::Error;

use crate::domain::{PoiId, RegionId, Timestamp, UserId};

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("a world needs at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("evaluation window must be positive, got {0}")]
    InvalidWindow(i64),
    #[error("trajectory of user {0} has no visits")]
    EmptyTrajectory(UserId),
    #[error("trajectory of user {user} contains a visit by user {found}")]
    ForeignVisit { user: UserId, found: UserId },
    #[error("user {0} has a negative timestamp")]
    NegativeTimestamp(UserId),
    #[error("duplicate region id {0}")]
    DuplicateRegion(RegionId),
    #[error("duplicate poi id {0}")]
    DuplicatePoi(PoiId),
    #[error("duplicate user id {0}")]
    DuplicateUser(UserId),
    #[error("unknown region id {0}")]
    UnknownRegion(RegionId),
    #[error("unknown poi id {0}")]
    UnknownPoi(PoiId),
    #[error("region {region} has {found} proportions, expected {expected}")]
    ProportionArity { region: RegionId, expected: usize, found: usize },
    #[error("region {0} has a proportion outside [0, 1]")]
    ProportionRange(RegionId),
    #[error("proportions of region {region} sum to {sum}, not 1")]
    ProportionSum { region: RegionId, sum: f64 },
    #[error("region {0} has an invalid population weight")]
    PopulationWeight(RegionId),
    #[error("split time {split_time} is not inside the data span [{min_ts}, {max_ts}]")]
    SplitOutsideSpan { split_time: Timestamp, min_ts: Timestamp, max_ts: Timestamp },
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("{n_pois} pois cannot form disjoint pools for {n_groups} groups")]
    TooFewPois { n_pois: usize, n_groups: usize },
    #[error("no answer key")]
    NoAnswerKey,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Error)]
pub enum SakmError {
    #[error("invalid SAKM config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{k}! = {count} permutations exceeds the limit of {limit}; use fewer clusters")]
    TooManyPermutations { k: usize, count: u64, limit: u64 },
    #[error("need at least k = {k} points, got {n}")]
    TooFewPoints { k: usize, n: usize },
}

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("invalid predictor spec: {0}")]
    InvalidSpec(String),
    #[error("training user {0} is not in the world")]
    UnknownUser(UserId),
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("TDPV needs at least two defined groups, got {0}")]
    TooFewGroups(usize),
    #[error("region {0} has no census proportions")]
    MissingRegion(RegionId),
    #[error("proportion vector length {found} does not match {expected} groups")]
    Arity { expected: usize, found: usize },
    #[error("user {0} has no group label")]
    MissingLabel(UserId),
    #[error("label {label} of user {user} is out of range")]
    LabelRange { user: UserId, label: usize },
}

#[derive(Debug, Error)]
pub enum FgisError {
    #[error("invalid FGIS config: {0}")]
    InvalidConfig(String),
    #[error("accuracy estimate for group {0} must be positive")]
    NonPositiveAccuracy(usize),
    #[error("no group has remaining candidates")]
    NoCandidates,
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: u64, message: String },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("region {region}: proportions sum to {sum}, outside renormalization tolerance")]
    ProportionSum { region: RegionId, sum: f64 },
    #[error("no answer key")]
    NoAnswerKey,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Umbrella error for the end-to-end pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Sakm(#[from] SakmError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Fgis(#[from] FgisError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl Error {
    /// Whether the error stems from invalid input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(IoError::Io { .. }) | Error::Config(ConfigError::Read { .. }))
    }
}
