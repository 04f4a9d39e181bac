//! Fairness-aware training-set selection for next-location prediction.
//!
//! The crate covers the full loop:
//!
//! * [`synth`] generates synthetic mobility worlds with a latent group per user;
//! * [`features`] turns visit histories into fixed-size vectors;
//! * [`sakm`] clusters users under census size targets to obtain proxy labels;
//! * [`predictor`] trains next-location models on a chosen user subset;
//! * [`metrics`] computes Acc@k, group accuracies and the TDPV disparity;
//! * [`fgis`] samples training users with accuracy-aware group weights.
//!
//! [`io`], [`config`], [`report`] and [`pipeline`] handle files and
//! orchestration.

pub mod config;
pub mod domain;
pub mod error;
pub mod features;
pub mod fgis;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod predictor;
pub mod report;
pub mod rng;
pub mod sakm;
pub mod synth;

pub use config::RunConfig;
pub use domain::{GroupId, Poi, PoiId, Region, RegionId, Timestamp, Trajectory, UserId, Visit, World, DAY};
pub use error::Error;
pub use features::{build_user_features, FeatureMatrix};
pub use fgis::{run_loop, sample_batch, FgisConfig, SamplerState, StepRecord};
pub use matrix::Matrix;
pub use metrics::{acc_at_k, group_accuracy, tdpv, GroupAccuracyReport};
pub use predictor::{train, NextLocationModel, PredictorKind, PredictorSpec, TrainedModel};
pub use sakm::{proxy_labels, sakm_fit, ClusteringResult, ProxyLabels, ProxyMode, SakmConfig, SakmParams};
pub use synth::{answer_key, generate_world, AnswerKey, GeneratedWorld, SynthConfig};
