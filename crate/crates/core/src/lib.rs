//! Deterministic cluster simulator for comparing energy-aware ("greenness")
//! node selection against a least-allocated default scheduler.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: nodes, links, pods and the mutable [`ClusterState`].
//! * [`energy`]: power model, cumulative joule meters and the windowed
//!   `increase` query over sampled counters.
//! * [`workload`]: closed-loop request generation and per-pod servers.
//! * [`sched`]: node scorers and deterministic selection.
//! * [`engine`]: the fixed-step loop that ties the above together.
//! * [`experiment`]: the scenario matrix, the two-phase measurement
//!   workflow and report aggregation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
pub mod engine;
mod error;
pub mod experiment;
mod ids;
pub mod model;
mod rng;
pub mod sched;
pub mod workload;

pub use energy::{MeteringMode, MetricStore};
pub use engine::{Engine, Phase, PhaseTrace, SimulationConfig};
pub use error::{Error, Result};
pub use experiment::{
    energy_increase, run_experiment, summarize, ConfigId, Denominator, ExperimentReport, Protocol,
    RunResult, ScenarioConfig, StrategySummary,
};
pub use ids::{LinkId, NodeId, PodId};
pub use model::{
    ClusterSpec, ClusterState, LinkSpec, NodeRole, NodeSpec, PodRole, PodSpec, PowerModelParams,
};
pub use sched::{SchedulingDecision, StrategyKind};
pub use workload::{ArrivalProcess, Intensity, LoadLevel, WorkloadSpec};
