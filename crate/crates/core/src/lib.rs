//! Digital-twin workbench for a sensed truss bridge: a deterministic
//! finite-element simulator stands in for the physical asset, a synthetic
//! "world" injects per-sensor reality-gap noise, and a small inverse
//! regressor maps sensor readings back to asset configurations. On top of
//! those sit gap quantification, sim-to-real fine-tuning, real-to-sim
//! repository enrichment and the experiment harness comparing the three
//! integration levels.

pub mod config;
pub mod gap;
pub mod orchestrator;
pub mod regressor;
pub mod repository;
pub mod rga;
pub mod sampler;
pub mod seeds;
pub mod truss;

pub use config::StructureConfig;
pub use gap::{GapInjectionSpec, WorldInstance};
pub use orchestrator::{ExperimentPlan, Loi, ProtocolState};
pub use regressor::{Hyperparams, RegressionModel, TrainingRun};
pub use repository::{Provenance, Repository, RepositoryManifest, RepositoryRecord};
pub use rga::{GapDistributionSet, ResidualPool};
pub use truss::{AssetConfiguration, SensorDomain, SensorVector, TrussModel};

/// Number of deformation sensors on the instrumented truss.
pub const SENSOR_COUNT: usize = 42;

/// Number of member groups carrying an independent health factor.
pub const GROUP_COUNT: usize = 5;
