//! Distributed model reference adaptive control for heterogeneous
//! leader-follower platoons.
//!
//! Followers adapt feedback and coupling gains so every vehicle tracks a
//! stable reference model over a directed acyclic communication graph. A
//! sigmoidal network cancels matched input uncertainty, and each follower
//! can either receive its neighbors' inputs or estimate them.

pub mod controller;
pub mod export;
pub mod matching;
pub mod ode;
pub mod plant;
pub mod scenario;
pub mod sim;
pub mod topology;

pub use controller::{
    AgentController, ControllerSettings, CouplingRegressor, GainInit, InputMode, KmijState, NnErrorSign,
};
pub use export::{emit_plots, export_csv, write_csv};
pub use matching::{
    coupling_matching, feedback_matching, solve_lyapunov, ultimate_bound, LyapunovCertificate, MatchingError,
    MatchingGains,
};
pub use plant::{AgentPlant, ReferenceModel, ReferenceSignal, Uncertainty};
pub use scenario::{load_config, parse_config, ConfigError, PresetId, ScenarioConfig};
pub use sim::{run, step, sync_metrics, SimError, SimulationTrace, Simulator, StateLayout, SyncMetrics};
pub use topology::{GraphTopology, TopologyError, LEADER};
