//! Adaptive unscented Kalman filtering for abrupt stiffness changes in shear
//! frames with tuned mass dampers.
//!
//! The crate covers the structural model, its discretization, the UKF over a
//! joint state/stiffness vector, the innovation-triggered adaptation layer, a
//! truth simulator for synthetic measurements and a configuration-driven run
//! harness.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod config;
pub mod discretize;
pub mod error;
pub mod harness;
pub mod model;
pub mod signal;
pub mod simulation;
pub mod structure;
pub mod ukf;

pub use adaptive::{
    adapt_covariance, gamma, localize, run_identification, threshold, trigger, AdaptationConfig,
    DetectionEvent, DetectionLog, IdentificationRun, SensorSuite,
};
pub use discretize::{exact_discretize, taylor_discretize, DiscreteStateSpace, DiscretizationOrder};
pub use config::{RunConfig, StructureFile, Variant};
pub use error::{Error, Result};
pub use harness::{build_scenario, identify, identify_scenario, simulate, sweep_covariance, sweep_model, Metrics, Scenario, OUTPUT_ROOT_ENV};
pub use model::IdentificationModel;
pub use signal::{load_record, Channel, RecordFormat, SignalSeries};
pub use simulation::{
    add_noise, impulse, quake_like, simulate_truth, white_noise, derive_seed, DamageEvent, DamageSchedule,
    DamageTrigger, NoiseSpec, QuakeSpec, TruthOptions, TruthRun,
};
pub use structure::{
    assemble_matrices, build_state_space, modal_analysis, update_stiffness, warburton_tune,
    ContinuousStateSpace, MatrixTriple, ModalProperties, Sensor, SensorKind, SensorLayout,
    StructureSpec, TmdSpec, WarburtonTuning,
};
pub use ukf::{ukf_step, AugmentedState, FilterConfig, Innovation, StateLayout};

/// Library version recorded in output manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
