//! Coverage-guided fuzzing of image-to-stimulation encoders against
//! biophysical safety limits.

pub mod campaign;
pub mod config;
pub mod coverage;
pub mod diversity;
pub mod fixtures;
pub mod fuzzer;
pub mod image;
pub mod model;
pub mod mutation;
pub mod report;
pub mod safety;

pub use campaign::{run_campaign, write_artifacts, CampaignError, CampaignRun};
pub use config::{CampaignConfig, ConfigError};
pub use coverage::{Coverage, CoverageDims, MetricConfig, MetricKind, TestRecord};
pub use diversity::{DiversityScores, FeatureExtractor};
pub use fuzzer::{fuzz, replay, FuzzConfig, FuzzError, FuzzOutcome, Fuzzer, Target};
pub use image::ImageTensor;
pub use model::{load_model, load_model_file, ModelGraph, StimulationPattern};
pub use mutation::{MutationConfig, MutationKind, MutationParams};
pub use report::{CampaignReport, Comparison};
pub use safety::{evaluate, Constraint, SafetyLimits, ViolationReport};
