//! Table-tennis match outcome prediction from rally-level event data.
//!
//! Matches are parsed and validated ([`match_data`]), reduced to per-player
//! feature vectors ([`features`]), and fed to four classifier families
//! ([`models`]) under a grouped split and cross-validation protocol
//! ([`evaluation`]). [`harness`] holds the synthetic match generator and the
//! experiment runners used by the `ttpredict` binary.

pub mod error;
pub mod evaluation;
pub mod features;
pub mod harness;
pub mod match_data;
pub mod models;
pub mod util;

pub use error::{Error, Result};
pub use features::{FeatureMode, FeatureSet, LabeledSample};
pub use match_data::{MatchRecord, Side};
pub use models::{Learner, ModelSpec, Predictor, TrainedModel};
