//! Fixed-step simulation loop.
//!
//! Every tick serves each active workload, turns the resulting CPU demand
//! plus background draw into power, and integrates it into the node
//! meters. Served bytes are charged to the hosting node's egress link.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::energy::{metered_power, MeteringMode, MetricStore};
use crate::error::{Error, Result};
use crate::ids::{NodeId, PodId};
use crate::model::{ClusterSpec, ClusterState, PodSpec};
use crate::workload::{generate_load, node_cpu_used, BackgroundNoise, PodServer, WorkloadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub dt: f64,
    pub seed: u64,
    pub sampling_interval: f64,
    pub metering: MeteringMode,
    /// Count the master node in cluster totals.
    pub include_master: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            seed: 42,
            sampling_interval: 1.0,
            metering: MeteringMode::Dynamic,
            include_master: false,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("simulation.dt", "must be > 0"));
        }
        if !(self.sampling_interval >= self.dt && self.sampling_interval.is_finite()) {
            return Err(Error::invalid(
                "simulation.sampling_interval",
                "must be >= dt",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Warmup,
    S1,
    Select,
    S2,
    Cooldown,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Warmup => "warmup",
            Phase::S1 => "S1",
            Phase::Select => "select",
            Phase::S2 => "S2",
            Phase::Cooldown => "cooldown",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrace {
    pub phase: Phase,
    pub start: f64,
    pub end: f64,
    /// Counter increase of every node over the phase.
    pub node_deltas: BTreeMap<NodeId, f64>,
    pub masters: BTreeSet<NodeId>,
}

/// Sum of per-node deltas; master nodes only when `include_master`.
pub fn total_cluster_energy(trace: &PhaseTrace, include_master: bool) -> f64 {
    trace
        .node_deltas
        .iter()
        .filter(|(id, _)| include_master || !trace.masters.contains(*id))
        .map(|(_, j)| j)
        .sum()
}

/// Hook called after every tick; used to check invariants mid-run.
pub trait StepObserver {
    fn after_step(&mut self, engine: &Engine);
}

impl<F: FnMut(&Engine)> StepObserver for F {
    fn after_step(&mut self, engine: &Engine) {
        self(engine)
    }
}

struct NoObserver;

impl StepObserver for NoObserver {
    fn after_step(&mut self, _: &Engine) {}
}

pub struct Engine {
    config: SimulationConfig,
    state: ClusterState,
    store: MetricStore,
    servers: BTreeMap<PodId, PodServer>,
    noise: BackgroundNoise,
    /// Ticks since the engine started; simulated time is `ticks * dt`.
    ticks: u64,
    /// Ticks since the last noise reset.
    epoch_ticks: u64,
    last_pod_cpu: BTreeMap<PodId, f64>,
}

impl Engine {
    pub fn new(cluster: &ClusterSpec, config: SimulationConfig) -> Result<Self> {
        config.validate()?;
        let state = ClusterState::new(cluster)?;
        let store = MetricStore::new(state.nodes(), config.sampling_interval, 0.0)?;
        Ok(Self {
            config,
            state,
            store,
            servers: BTreeMap::new(),
            noise: BackgroundNoise::new(config.seed),
            ticks: 0,
            epoch_ticks: 0,
            last_pod_cpu: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn state(&self) -> &ClusterState {
        &self.state
    }

    pub fn into_store(self) -> MetricStore {
        self.store
    }

    pub fn store(&self) -> &MetricStore {
        &self.store
    }

    pub fn time(&self) -> f64 {
        self.ticks as f64 * self.config.dt
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn servers(&self) -> impl Iterator<Item = &PodServer> {
        self.servers.values()
    }

    /// CPU (millicores) each active pod used during the last tick.
    pub fn last_pod_cpu(&self) -> &BTreeMap<PodId, f64> {
        &self.last_pod_cpu
    }

    pub fn place_pod(&mut self, pod: PodSpec, node: &NodeId) -> Result<()> {
        self.state.place_pod(pod, node)
    }

    pub fn set_background(&mut self, node: &NodeId, mean: f64, stddev: f64) -> Result<()> {
        let n = self.state.node_mut(node)?;
        n.background_cpu_mean = mean;
        n.background_cpu_stddev = stddev;
        n.validate()
    }

    /// Removes user pods and their workloads.
    pub fn drain_user_pods(&mut self) -> Vec<PodSpec> {
        let removed = self.state.drain_user_pods();
        for pod in &removed {
            self.servers.remove(&pod.pod_id);
        }
        removed
    }

    /// Attaches a workload to an already placed pod, replacing any
    /// previous workload on the same pod.
    pub fn start_workload(&mut self, spec: &WorkloadSpec) -> Result<()> {
        let schedule = generate_load(&self.state, spec, self.config.seed)?;
        self.servers
            .insert(spec.target_pod_id.clone(), PodServer::new(schedule));
        Ok(())
    }

    pub fn stop_workloads(&mut self) {
        self.servers.clear();
    }

    pub fn run_phase(&mut self, phase: Phase, duration: f64) -> Result<PhaseTrace> {
        self.run_phase_observed(phase, duration, &mut NoObserver)
    }

    pub fn run_phase_observed(
        &mut self,
        phase: Phase,
        duration: f64,
        observer: &mut dyn StepObserver,
    ) -> Result<PhaseTrace> {
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(Error::invalid(format!("{phase} duration"), "must be >= 0"));
        }
        if duration == 0.0 && phase != Phase::Select {
            return Err(Error::invalid(format!("{phase} duration"), "must be > 0"));
        }
        let start = self.time();
        let before = self.counters();
        let steps = (duration / self.config.dt).round() as u64;
        for _ in 0..steps {
            self.step()?;
            observer.after_step(self);
        }
        let after = self.counters();
        let node_deltas = after
            .into_iter()
            .map(|(id, j)| {
                let d = j - before[&id];
                (id, d)
            })
            .collect();
        Ok(PhaseTrace {
            phase,
            start,
            end: self.time(),
            node_deltas,
            masters: self
                .state
                .nodes()
                .filter(|n| !n.is_worker())
                .map(|n| n.node_id.clone())
                .collect(),
        })
    }

    /// Idle period: workloads stop and background draws restart from a
    /// fresh sequence. Counters keep accumulating.
    pub fn cooldown(&mut self, duration: f64) -> Result<PhaseTrace> {
        self.stop_workloads();
        self.noise.reset();
        self.epoch_ticks = 0;
        self.run_phase(Phase::Cooldown, duration)
    }

    fn counters(&self) -> BTreeMap<NodeId, f64> {
        self.store
            .node_meters()
            .map(|m| (m.node_id().clone(), m.cumulative_joules()))
            .collect()
    }

    fn step(&mut self) -> Result<()> {
        let dt = self.config.dt;
        let t0 = self.time();
        let t1 = (self.ticks + 1) as f64 * dt;
        let mut demand: BTreeMap<&NodeId, f64> = BTreeMap::new();
        self.last_pod_cpu.clear();
        for server in self.servers.values_mut() {
            let served = server.step(t0, dt);
            let cpu_mc = served.cpu_ms / dt;
            *demand.entry(&server.schedule().node_id).or_default() += cpu_mc;
            self.last_pod_cpu.insert(server.pod_id().clone(), cpu_mc);
            if served.megabits > 0.0 {
                let node = self.state.node(&server.schedule().node_id)?;
                if let Some(link) = node.egress_link() {
                    self.store
                        .transmit(&node.node_id, &link.link_id, served.megabits)?;
                }
            }
        }
        for node in self.state.nodes() {
            let pod_mc = demand.get(&node.node_id).copied().unwrap_or(0.0);
            let used = node_cpu_used(
                &self.state,
                &node.node_id,
                pod_mc,
                &self.noise,
                self.epoch_ticks,
            )?;
            let power = metered_power(node, used, self.config.metering)?;
            self.store.accrue_node_to(&node.node_id, power, t1)?;
        }
        self.ticks += 1;
        self.epoch_ticks += 1;
        let now = self.time();
        self.state.advance_to(now);
        self.store.sample_links(now);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::read_metric_csv;
    use crate::model::{NodeSpec, PodRole, PowerModelParams};

    fn quiet(nodes: Vec<NodeSpec>) -> ClusterSpec {
        ClusterSpec {
            nodes,
            enforce_memory: false,
        }
    }

    fn cfg() -> SimulationConfig {
        SimulationConfig::default()
    }

    fn id(s: &str) -> NodeId {
        NodeId::new(s)
    }

    #[test]
    fn constant_power_phase() {
        // 2000 mc of background on a 4000 mc node with 8 W dynamic = 4 W.
        let node = NodeSpec::worker("N1", 4000, PowerModelParams::new(1.0, 8.0))
            .with_background(2000.0, 0.0);
        let mut e = Engine::new(&quiet(vec![node]), cfg()).unwrap();
        let trace = e.run_phase(Phase::S1, 300.0).unwrap();
        assert!((trace.node_deltas[&id("N1")] - 1200.0).abs() < 1e-9);
        assert_eq!(trace.end, e.time());
        assert!((trace.end - 300.0).abs() < 1e-9);
    }

    #[test]
    fn long_runs_stay_on_the_sampling_grid() {
        let node = NodeSpec::worker("N1", 4000, PowerModelParams::new(1.0, 8.0))
            .with_background(1000.0, 0.0);
        let mut e = Engine::new(&quiet(vec![node]), cfg()).unwrap();
        e.run_phase(Phase::Warmup, 3600.0).unwrap();
        let meter = e.store().node_meter(&id("N1")).unwrap();
        assert_eq!(meter.samples().len(), 3601);
        assert_eq!(meter.samples().last().unwrap().t, 3600.0);
        let w = e.store().window_increase(&id("N1"), 60.0, 3600.0).unwrap();
        assert!((w - 120.0).abs() < 1e-9, "{w}");
    }

    #[test]
    fn idle_dynamic_cluster_is_zero() {
        let nodes = ["N1", "N2"]
            .into_iter()
            .map(|n| NodeSpec::worker(n, 4000, PowerModelParams::new(3.0, 5.0)))
            .collect();
        let mut e = Engine::new(&quiet(nodes), cfg()).unwrap();
        let trace = e.run_phase(Phase::S1, 60.0).unwrap();
        assert!(trace.node_deltas.values().all(|d| *d == 0.0));
        assert_eq!(total_cluster_energy(&trace, false), 0.0);
    }

    #[test]
    fn platform_mode_includes_idle() {
        let node = NodeSpec::worker("N1", 4000, PowerModelParams::new(3.0, 5.0));
        let config = SimulationConfig {
            metering: MeteringMode::Platform,
            ..cfg()
        };
        let mut e = Engine::new(&quiet(vec![node]), config).unwrap();
        let trace = e.run_phase(Phase::S1, 10.0).unwrap();
        assert!((trace.node_deltas[&id("N1")] - 30.0).abs() < 1e-9);
    }

    /// Step-by-step recomputation of a two-node scenario with scripted
    /// background levels and one unsaturated pod.
    #[test]
    fn scripted_two_node_matches_recomputation() {
        let nodes = vec![
            NodeSpec::worker("A", 4000, PowerModelParams::new(2.0, 4.0))
                .with_background(400.0, 0.0),
            NodeSpec::worker("B", 2000, PowerModelParams::new(1.0, 3.0))
                .with_background(100.0, 0.0),
        ];
        let mut e = Engine::new(&quiet(nodes), cfg()).unwrap();
        let mut pod = PodSpec::new("web", 500, PodRole::Test);
        pod.service_demand_ms_per_request = 20.0;
        e.place_pod(pod, &id("B")).unwrap();
        e.start_workload(&WorkloadSpec::new("web", 5.0, 0.0, 200.0))
            .unwrap();
        let first = e.run_phase(Phase::S1, 100.0).unwrap();
        e.set_background(&id("A"), 1000.0, 0.0).unwrap();
        let second = e.run_phase(Phase::S2, 100.0).unwrap();

        // A: background only. 100 s at 400/4000 * 4 W, then 100 s at 1000/4000 * 4 W.
        let a1: f64 = (0..1000).map(|_| 4.0 * 400.0 / 4000.0 * 0.1).sum();
        let a2: f64 = (0..1000).map(|_| 4.0 * 1000.0 / 4000.0 * 0.1).sum();
        // B: background plus pod work. 5 rps * 20 CPU-ms = 100 mc average;
        // energy from pod work = W_dyn / capacity * CPU-ms served.
        let b_bg: f64 = (0..1000).map(|_| 3.0 * 100.0 / 2000.0 * 0.1).sum();
        let b_pod = 3.0 / 2000.0 * (500.0 * 20.0);
        let rel = |got: f64, want: f64| (got - want).abs() <= 1e-6 * want;
        assert!(rel(first.node_deltas[&id("A")], a1));
        assert!(rel(second.node_deltas[&id("A")], a2));
        assert!(
            rel(first.node_deltas[&id("B")], b_bg + b_pod),
            "{:?}",
            first.node_deltas
        );
        assert!(rel(second.node_deltas[&id("B")], b_bg + b_pod));
    }

    #[test]
    fn halving_dt_is_exact_for_constant_demand() {
        let run = |dt: f64| {
            let mut e =
                Engine::new(&ClusterSpec::testbed(), SimulationConfig { dt, ..cfg() }).unwrap();
            for n in ["N1", "N2", "N3"] {
                e.set_background(&id(n), 300.0, 0.0).unwrap();
            }
            e.run_phase(Phase::S1, 300.0).unwrap()
        };
        let coarse = run(0.1);
        let fine = run(0.05);
        for (node, d) in &coarse.node_deltas {
            if coarse.masters.contains(node) {
                continue;
            }
            let f = fine.node_deltas[node];
            assert!((d - f).abs() <= 1e-9 * d.abs(), "{node}: {d} vs {f}");
        }
    }

    #[test]
    fn halving_dt_under_request_load() {
        let run = |dt: f64| {
            let mut e =
                Engine::new(&ClusterSpec::testbed(), SimulationConfig { dt, ..cfg() }).unwrap();
            for n in ["N1", "N2", "N3"] {
                e.set_background(&id(n), 20.0, 0.0).unwrap();
            }
            e.place_pod(PodSpec::new("t", 400, PodRole::Test), &id("N2"))
                .unwrap();
            e.start_workload(&WorkloadSpec::new("t", 10.0, 0.0, 300.0))
                .unwrap();
            e.run_phase(Phase::S2, 300.0).unwrap()
        };
        let coarse = run(0.1);
        let fine = run(0.05);
        let (c, f) = (coarse.node_deltas[&id("N2")], fine.node_deltas[&id("N2")]);
        assert!((c - f).abs() < 1e-3 * c, "{c} vs {f}");
    }

    #[test]
    fn phases_are_additive() {
        let mut e = Engine::new(&ClusterSpec::testbed(), SimulationConfig::default()).unwrap();
        let warm = e.run_phase(Phase::Warmup, 30.0).unwrap();
        let s1 = e.run_phase(Phase::S1, 30.0).unwrap();
        assert_eq!(warm.end, s1.start);
        for (node, meter) in e.store().node_meters().map(|m| (m.node_id().clone(), m)) {
            let sum = warm.node_deltas[&node] + s1.node_deltas[&node];
            assert!((meter.cumulative_joules() - sum).abs() <= 1e-9 * sum.max(1.0));
        }
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let run = |seed| {
            let mut e =
                Engine::new(&ClusterSpec::testbed(), SimulationConfig { seed, ..cfg() }).unwrap();
            e.run_phase(Phase::S1, 50.0).unwrap()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn totals_exclude_master_by_default() {
        let trace = PhaseTrace {
            phase: Phase::S1,
            start: 0.0,
            end: 1.0,
            node_deltas: [("N1", 100.0), ("N2", 50.0), ("N3", 50.0), ("master", 900.0)]
                .into_iter()
                .map(|(n, j)| (id(n), j))
                .collect(),
            masters: [id("master")].into_iter().collect(),
        };
        assert_eq!(total_cluster_energy(&trace, false), 200.0);
        assert_eq!(total_cluster_energy(&trace, true), 1100.0);
        let empty = PhaseTrace {
            node_deltas: BTreeMap::new(),
            masters: BTreeSet::new(),
            ..trace
        };
        assert_eq!(total_cluster_energy(&empty, false), 0.0);
    }

    #[test]
    fn totals_match_metric_dump() {
        let mut e = Engine::new(&ClusterSpec::testbed(), SimulationConfig::default()).unwrap();
        e.place_pod(PodSpec::new("t", 400, PodRole::Test), &id("N3"))
            .unwrap();
        e.start_workload(&WorkloadSpec::new("t", 10.0, 0.0, 200.0))
            .unwrap();
        e.run_phase(Phase::Warmup, 40.0).unwrap();
        let s1 = e.run_phase(Phase::S1, 60.0).unwrap();
        let mut buf = Vec::new();
        e.store().write_csv(&mut buf).unwrap();
        let rows = read_metric_csv(buf.as_slice()).unwrap();
        let at = |t: f64, node: &str| {
            rows.iter()
                .find(|r| {
                    (r.timestamp_s - t).abs() < 1e-9 && r.node_id == node && r.link_id.is_empty()
                })
                .map(|r| r.cumulative_joules)
                .unwrap()
        };
        let from_dump: f64 = ["N1", "N2", "N3"]
            .iter()
            .map(|n| at(100.0, n) - at(40.0, n))
            .sum();
        let total = total_cluster_energy(&s1, false);
        assert!(
            (from_dump - total).abs() <= 1e-9 * total,
            "{from_dump} vs {total}"
        );
    }

    #[test]
    fn traffic_charges_egress_link() {
        let mut e = Engine::new(&ClusterSpec::testbed(), SimulationConfig::default()).unwrap();
        let mut pod = PodSpec::new("t", 400, PodRole::Test);
        pod.service_demand_ms_per_request = 10.0;
        e.place_pod(pod, &id("N2")).unwrap();
        e.start_workload(&WorkloadSpec::new("t", 10.0, 0.0, 10.0))
            .unwrap();
        e.run_phase(Phase::S2, 12.0).unwrap();
        // 100 requests * 2000 bytes * 8 bits at 0.5 J/Mb.
        let net = e.store().network_energy(&id("N2")).unwrap();
        assert!((net - 100.0 * 0.016 * 0.5).abs() < 1e-9, "{net}");
        assert_eq!(e.store().network_energy(&id("N1")).unwrap(), 0.0);
    }

    #[test]
    fn drain_stops_workloads() {
        let mut e = Engine::new(&ClusterSpec::testbed(), SimulationConfig::default()).unwrap();
        e.place_pod(PodSpec::new("t", 400, PodRole::Test), &id("N2"))
            .unwrap();
        e.start_workload(&WorkloadSpec::new("t", 10.0, 0.0, 10.0))
            .unwrap();
        e.drain_user_pods();
        assert_eq!(e.servers().count(), 0);
        assert!(matches!(
            e.start_workload(&WorkloadSpec::new("t", 10.0, 0.0, 10.0)),
            Err(Error::PodNotPlaced(_))
        ));
    }

    #[test]
    fn rejects_bad_config_and_duration() {
        let bad = SimulationConfig {
            sampling_interval: 0.05,
            ..cfg()
        };
        assert!(Engine::new(&ClusterSpec::testbed(), bad).is_err());
        let mut e = Engine::new(&ClusterSpec::testbed(), cfg()).unwrap();
        assert!(e.run_phase(Phase::S1, 0.0).is_err());
        assert!(e.run_phase(Phase::S1, -3.0).is_err());
        let sel = e.run_phase(Phase::Select, 0.0).unwrap();
        assert_eq!(sel.start, sel.end);
    }
}
