//! Backpressure priority-rule derivation on top of shortest-path routing,
//! and a slotted-time backbone simulator to evaluate it.
//!
//! The crate is organised bottom-up:
//!
//! - [`topology`]: nodes, directed capacitated links, multi-link groups, peering policy.
//! - [`routing`]: hop-count shortest-path next hops (the traffic-invariant baseline).
//! - [`engine`]: standard and foresight-enabled backpressure rule derivation.
//! - [`controller`]: periodic actuation, forecasts and per-node rule acceptance.
//! - [`traffic`]: seeded batch generation.
//! - [`sim`]: the per-slot queueing simulation.
//! - [`metrics`]: per-slot series and run aggregates.
//! - [`experiment`]: parameter sweeps and result tables.

pub mod controller;
pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod routing;
pub mod sim;
pub mod topology;
pub mod traffic;

pub use controller::{AcceptancePolicy, Controller, ControllerConfig, ForecastProvider, Mode};
pub use engine::{
    AlarmScope, EngineConfig, Forecast, HopFilter, NetworkSnapshot, PriorityRule, RuleSet,
};
pub use experiment::{run_experiment, ExperimentSpec, OutputFormat, ResultTable, SweepParam};
pub use metrics::MetricsReport;
pub use routing::NextHopTable;
pub use sim::{run, SimConfig, Simulation, TopologyConfig};
pub use topology::{build_grid, LinkId, NodeId, Topology};
pub use traffic::{TrafficConfig, TrafficSchedule};
