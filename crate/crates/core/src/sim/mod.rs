//! Scenarios, the event engine, metrics and sweeps.

mod config;
mod engine;
mod events;
mod metrics;
mod sweep;

pub use config::{
    integrate_recharge, load_scenario, load_scenario_file, with_param, Budgets, ChannelPlan, ConfigError,
    GammaMode, MacConfig, NodeSpec, PlannerConfig, Protocol, ScenarioConfig, TrafficConfig,
};
pub use engine::{build_deployment, run_simulation, run_with_protocol, substream, Deployment, SimError, Simulation};
pub use events::{DebitCause, Event, EventLog, FrameKind, PairInfo};
pub use metrics::{compute_metrics, Counters, Metrics, NodeMetrics};
pub use sweep::{sweep, write_csv, SweepRow, SweepSpec};
