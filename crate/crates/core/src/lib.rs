//! Joint channel change detection and Thompson-Sampling link-rate
//! selection for block-fading channels.
//!
//! - [`channel`]: ground-truth scenario and Bernoulli ACK draws.
//! - [`policy`]: TS, constrained TS, UCB1 and oracle rate selection.
//! - [`detect`]: two-window mean-shift detector and sentinel rate.
//! - [`controller`]: the per-slot loop that combines a policy with the detector.
//! - [`metrics`]: regret aggregation and analytic bound evaluators.
//! - [`experiment`]: config files, multi-run orchestration, CSV/JSON output.

pub mod channel;
pub mod controller;
pub mod detect;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod parallel;
pub mod policy;

pub use channel::{delta_min, validate_scenario, RateTable, RawScenario, Scenario, ThetaMatrix};
pub use controller::{run, Controller, RunTrace, SlotRecord};
pub use detect::DetectorConfig;
pub use error::{Error, Result};
pub use experiment::{parse_config, run_experiment, ExperimentConfig};
pub use policy::{ArmStats, PolicyConfig, PolicyKind};
