//! Scenario matrix, the two-phase measurement workflow, and reporting.
//!
//! One run goes: drain, preload, warm-up, baseline phase S1, windowed
//! energy query, node selection, test-pod placement, phase S2, second
//! query, cool-down. Runs are independent engines seeded with
//! `base_seed + run`, so two strategies compared on the same run index
//! see identical background draws and an identical S1.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::MetricStore;
use crate::engine::{Engine, Phase, PhaseTrace, SimulationConfig, StepObserver};
use crate::error::{Error, Result};
use crate::ids::{NodeId, PodId};
use crate::model::{ClusterSpec, PodRole, PodSpec};
use crate::sched::{select_node, SchedulingContext, StrategyKind};
use crate::workload::{ArrivalProcess, Intensity, LoadLevel, WorkloadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConfigId {
    #[serde(alias = "1")]
    C1,
    #[serde(alias = "2")]
    C2,
    #[serde(alias = "3A", alias = "3.1")]
    C3A,
    #[serde(alias = "3B", alias = "3.2")]
    C3B,
    #[serde(alias = "3C", alias = "3.3")]
    C3C,
}

impl ConfigId {
    pub const ALL: [ConfigId; 5] = [
        ConfigId::C1,
        ConfigId::C2,
        ConfigId::C3A,
        ConfigId::C3B,
        ConfigId::C3C,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConfigId::C1 => "C1",
            ConfigId::C2 => "C2",
            ConfigId::C3A => "C3A",
            ConfigId::C3B => "C3B",
            ConfigId::C3C => "C3C",
        }
    }

    /// Preload level for N1, N2, N3.
    pub fn worker_levels(self) -> [Option<LoadLevel>; 3] {
        use LoadLevel::*;
        match self {
            ConfigId::C1 => [None, None, None],
            ConfigId::C2 => [Some(M), Some(M), Some(M)],
            ConfigId::C3A => [Some(L), Some(M), Some(S)],
            ConfigId::C3B => [Some(S), Some(L), Some(M)],
            ConfigId::C3C => [Some(M), Some(S), Some(L)],
        }
    }
}

/// Which phase's energy divides the increase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Denominator {
    /// `(e_s2 - e_s1) / e_s1`, the formula as usually written.
    S1,
    /// `(e_s2 - e_s1) / e_s2`, which reproduces the published table values.
    #[default]
    S2,
}

impl Denominator {
    pub fn as_str(self) -> &'static str {
        match self {
            Denominator::S1 => "s1",
            Denominator::S2 => "s2",
        }
    }

    pub fn other(self) -> Self {
        match self {
            Denominator::S1 => Denominator::S2,
            Denominator::S2 => Denominator::S1,
        }
    }
}

/// Relative energy increase from S1 to S2, in percent.
pub fn energy_increase(e_s1: f64, e_s2: f64, denominator: Denominator) -> Result<f64> {
    let d = match denominator {
        Denominator::S1 => e_s1,
        Denominator::S2 => e_s2,
    };
    if !(d > 0.0) {
        return Err(Error::ZeroDenominator(d));
    }
    Ok((e_s2 - e_s1) / d * 100.0)
}

pub const DEFAULT_PODS_PER_WORKER: u32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub config_id: ConfigId,
    pub intensity: Intensity,
    pub preloads: BTreeMap<NodeId, Vec<LoadLevel>>,
    pub test_pod_level: LoadLevel,
}

impl ScenarioConfig {
    /// Three pods per worker at moderate intensity and six at high.
    pub fn standard(config_id: ConfigId, intensity: Intensity) -> Self {
        let per_worker = match intensity {
            Intensity::Moderate => DEFAULT_PODS_PER_WORKER,
            Intensity::High => 2 * DEFAULT_PODS_PER_WORKER,
        };
        Self::with_pods_per_worker(config_id, intensity, per_worker)
    }

    pub fn with_pods_per_worker(
        config_id: ConfigId,
        intensity: Intensity,
        per_worker: u32,
    ) -> Self {
        let preloads = ["N1", "N2", "N3"]
            .into_iter()
            .zip(config_id.worker_levels())
            .filter_map(|(node, level)| {
                level.map(|l| (NodeId::new(node), vec![l; per_worker as usize]))
            })
            .collect();
        Self {
            config_id,
            intensity,
            preloads,
            test_pod_level: LoadLevel::M,
        }
    }

    /// Every configuration at both intensities.
    pub fn matrix() -> Vec<Self> {
        ConfigId::ALL
            .into_iter()
            .flat_map(|c| [Intensity::Moderate, Intensity::High].map(|i| Self::standard(c, i)))
            .collect()
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.config_id.as_str(), self.intensity.as_str())
    }

    pub fn preload_pod_count(&self) -> usize {
        self.preloads.values().map(Vec::len).sum()
    }
}

/// Phase lengths and request profile shared by every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol {
    pub warmup_s: f64,
    /// Length of each measurement phase (S1 and S2).
    pub phase_s: f64,
    pub cooldown_s: f64,
    /// Trailing window of the energy query.
    pub window_s: f64,
    pub demand_ms_per_request: f64,
    pub request_bytes: u64,
    pub response_bytes: u64,
    pub response_time_ms: f64,
    pub arrival: ArrivalProcess,
    /// Test pod rate; defaults to the test level's rate at the scenario intensity.
    pub test_rps: Option<f64>,
    /// Keep preloaded pods under load during S2 as well as S1.
    pub preload_through_s2: bool,
    pub denominator: Denominator,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            warmup_s: 300.0,
            phase_s: 300.0,
            cooldown_s: 480.0,
            window_s: 300.0,
            demand_ms_per_request: 50.0,
            request_bytes: 1000,
            response_bytes: 1000,
            response_time_ms: 250.0,
            arrival: ArrivalProcess::Uniform,
            test_rps: None,
            preload_through_s2: true,
            denominator: Denominator::S2,
        }
    }
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("protocol.phase_s", self.phase_s),
            ("protocol.window_s", self.window_s),
            ("workload.demand_ms_per_request", self.demand_ms_per_request),
            ("workload.response_time_ms", self.response_time_ms),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, "must be > 0"));
            }
        }
        for (field, v) in [
            ("protocol.warmup_s", self.warmup_s),
            ("protocol.cooldown_s", self.cooldown_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, "must be >= 0"));
            }
        }
        if let Some(r) = self.test_rps {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::invalid("workload.rps", "must be > 0"));
            }
        }
        if self.window_s > self.warmup_s + self.phase_s {
            return Err(Error::invalid(
                "protocol.window_s",
                "must not exceed warmup_s + phase_s (no metric history before the run)",
            ));
        }
        Ok(())
    }

    fn pod(&self, id: String, level: LoadLevel, role: PodRole) -> PodSpec {
        PodSpec {
            service_demand_ms_per_request: self.demand_ms_per_request,
            request_bytes: self.request_bytes,
            response_bytes: self.response_bytes,
            ..PodSpec::new(id, level.cpu_request(), role)
        }
    }

    fn workload(&self, pod: &PodId, rps: f64, start: f64, duration: f64) -> WorkloadSpec {
        WorkloadSpec {
            max_response_time_ms: self.response_time_ms,
            arrival: self.arrival,
            ..WorkloadSpec::new(pod.clone(), rps, start, duration)
        }
    }
}

/// Everything needed to execute runs of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSetup {
    pub cluster: ClusterSpec,
    pub scenario: ScenarioConfig,
    pub simulation: SimulationConfig,
    pub protocol: Protocol,
}

impl ExperimentSetup {
    pub fn new(scenario: ScenarioConfig) -> Self {
        Self {
            cluster: ClusterSpec::testbed(),
            scenario,
            simulation: SimulationConfig::default(),
            protocol: Protocol::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        self.simulation.validate()?;
        self.protocol.validate()?;
        self.check_preload_capacity()
    }

    /// Preloads plus the test pod must fit on their nodes.
    fn check_preload_capacity(&self) -> Result<()> {
        let label = self.scenario.label();
        for (node, levels) in &self.scenario.preloads {
            let spec = self.cluster.node(node.as_str()).ok_or_else(|| {
                Error::invalid(
                    format!("scenario {label}: preloads"),
                    format!("unknown node `{node}`"),
                )
            })?;
            let requested: u32 = levels.iter().map(|l| l.cpu_request()).sum();
            if requested > spec.cpu_capacity {
                return Err(Error::invalid(
                    format!("scenario {label}: preloads on {node}"),
                    format!(
                        "{} pods request {requested} mc but the node has {} mc",
                        levels.len(),
                        spec.cpu_capacity
                    ),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run: u32,
    pub seed: u64,
    pub e_s1: f64,
    pub e_s2: f64,
    /// Percent, under the protocol's denominator.
    pub ei: f64,
    pub chosen_node: NodeId,
    /// Scores the scheduler saw for every feasible node.
    pub scores: BTreeMap<NodeId, f64>,
    pub phases: Vec<PhaseTrace>,
}

pub const TEST_POD: &str = "test-pod";

fn cluster_window_energy(engine: &Engine, window: f64) -> Result<f64> {
    let at = engine.time();
    let include_master = engine.config().include_master;
    let mut total = 0.0;
    for node in engine.state().nodes() {
        if node.is_worker() || include_master {
            total += engine.store().window_increase(&node.node_id, window, at)?;
        }
    }
    Ok(total)
}

/// Executes one complete run.
pub fn run_single(
    setup: &ExperimentSetup,
    strategy: StrategyKind,
    run: u32,
    seed: u64,
    observer: &mut dyn StepObserver,
) -> Result<RunResult> {
    execute(setup, strategy, run, seed, observer).map(|(result, _)| result)
}

/// Like [`run_single`], also returning the run's metric history.
pub fn run_traced(
    setup: &ExperimentSetup,
    strategy: StrategyKind,
    run: u32,
    seed: u64,
) -> Result<(RunResult, MetricStore)> {
    execute(setup, strategy, run, seed, &mut |_: &Engine| {})
        .map(|(result, engine)| (result, engine.into_store()))
}

fn execute(
    setup: &ExperimentSetup,
    strategy: StrategyKind,
    run: u32,
    seed: u64,
    observer: &mut dyn StepObserver,
) -> Result<(RunResult, Engine)> {
    setup.validate()?;
    let p = &setup.protocol;
    let scenario = &setup.scenario;
    let mut engine = Engine::new(
        &setup.cluster,
        SimulationConfig {
            seed,
            ..setup.simulation
        },
    )?;

    engine.drain_user_pods();
    let preload_span = p.warmup_s + p.phase_s + if p.preload_through_s2 { p.phase_s } else { 0.0 };
    for (node, levels) in &scenario.preloads {
        for (i, level) in levels.iter().enumerate() {
            let pod = p.pod(format!("pre-{node}-{i}"), *level, PodRole::Preloaded);
            let id = pod.pod_id.clone();
            engine.place_pod(pod, node).map_err(|e| {
                Error::invalid(
                    format!("scenario {}: preload on {node}", scenario.label()),
                    e.to_string(),
                )
            })?;
            engine.start_workload(&p.workload(
                &id,
                level.rps(scenario.intensity),
                0.0,
                preload_span,
            ))?;
        }
    }

    let mut phases = Vec::with_capacity(5);
    if p.warmup_s > 0.0 {
        phases.push(engine.run_phase_observed(Phase::Warmup, p.warmup_s, observer)?);
    }
    phases.push(engine.run_phase_observed(Phase::S1, p.phase_s, observer)?);
    let e_s1 = cluster_window_energy(&engine, p.window_s)?;

    let test_pod = p.pod(TEST_POD.to_owned(), scenario.test_pod_level, PodRole::Test);
    let decision = {
        let ctx = SchedulingContext {
            state: engine.state(),
            store: engine.store(),
            pod: &test_pod,
            window: p.window_s,
            at: engine.time(),
        };
        select_node(&ctx, strategy)?
    };
    phases.push(engine.run_phase(Phase::Select, 0.0)?);

    let test_rps = p
        .test_rps
        .unwrap_or_else(|| scenario.test_pod_level.rps(scenario.intensity));
    let test_id = test_pod.pod_id.clone();
    engine.place_pod(test_pod, &decision.chosen_node)?;
    engine.start_workload(&p.workload(&test_id, test_rps, engine.time(), p.phase_s))?;
    phases.push(engine.run_phase_observed(Phase::S2, p.phase_s, observer)?);
    let e_s2 = cluster_window_energy(&engine, p.window_s)?;
    let ei = energy_increase(e_s1, e_s2, p.denominator)?;

    if p.cooldown_s > 0.0 {
        phases.push(engine.cooldown(p.cooldown_s)?);
    }
    let result = RunResult {
        run,
        seed,
        e_s1,
        e_s2,
        ei,
        chosen_node: decision.chosen_node,
        scores: decision.scores,
        phases,
    };
    Ok((result, engine))
}

pub fn run_seed(base_seed: u64, run: u32) -> u64 {
    base_seed.wrapping_add(u64::from(run))
}

/// `runs` independent runs in parallel, returned in run order.
pub fn run_many(
    setup: &ExperimentSetup,
    strategy: StrategyKind,
    runs: u32,
    base_seed: u64,
) -> Result<Vec<RunResult>> {
    if runs == 0 {
        return Err(Error::invalid("runs", "must be >= 1"));
    }
    setup.validate()?;
    (0..runs)
        .into_par_iter()
        .map(|r| {
            run_single(
                setup,
                strategy,
                r,
                run_seed(base_seed, r),
                &mut |_: &Engine| {},
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySummary {
    pub runs: usize,
    pub e_s1_mean: f64,
    pub e_s1_std: f64,
    pub e_s2_mean: f64,
    pub e_s2_std: f64,
    pub ei_mean: f64,
    pub chosen: BTreeMap<NodeId, u32>,
    /// A single run; standard deviations are reported as zero.
    pub degenerate: bool,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Means, sample standard deviations (n - 1) and the chosen-node histogram.
pub fn summarize(results: &[RunResult]) -> Result<StrategySummary> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let s1: Vec<f64> = results.iter().map(|r| r.e_s1).collect();
    let s2: Vec<f64> = results.iter().map(|r| r.e_s2).collect();
    let ei: Vec<f64> = results.iter().map(|r| r.ei).collect();
    let (e_s1_mean, e_s1_std) = mean_std(&s1);
    let (e_s2_mean, e_s2_std) = mean_std(&s2);
    let mut chosen = BTreeMap::new();
    for r in results {
        *chosen.entry(r.chosen_node.clone()).or_insert(0) += 1;
    }
    Ok(StrategySummary {
        runs: results.len(),
        e_s1_mean,
        e_s1_std,
        e_s2_mean,
        e_s2_std,
        ei_mean: mean_std(&ei).0,
        chosen,
        degenerate: results.len() == 1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyResults {
    pub strategy: StrategyKind,
    pub runs: Vec<RunResult>,
    pub summary: StrategySummary,
}

impl StrategyResults {
    /// Mean ei recomputed under the other denominator.
    pub fn alternate_ei_mean(&self, used: Denominator) -> Result<f64> {
        let vals = self
            .runs
            .iter()
            .map(|r| energy_increase(r.e_s1, r.e_s2, used.other()))
            .collect::<Result<Vec<_>>>()?;
        Ok(mean_std(&vals).0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub scenario: ScenarioConfig,
    pub denominator: Denominator,
    pub base_seed: u64,
    pub strategies: Vec<StrategyResults>,
}

impl ExperimentReport {
    pub fn get(&self, strategy: StrategyKind) -> Option<&StrategyResults> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }
}

pub fn run_experiment(
    setup: &ExperimentSetup,
    strategy: StrategyKind,
    runs: u32,
    base_seed: u64,
) -> Result<ExperimentReport> {
    compare_strategies(setup, &[strategy], runs, base_seed)
}

/// Runs every strategy on the same seeds.
pub fn compare_strategies(
    setup: &ExperimentSetup,
    strategies: &[StrategyKind],
    runs: u32,
    base_seed: u64,
) -> Result<ExperimentReport> {
    let mut out = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let results = run_many(setup, strategy, runs, base_seed)?;
        let summary = summarize(&results)?;
        out.push(StrategyResults {
            strategy,
            runs: results,
            summary,
        });
    }
    Ok(ExperimentReport {
        scenario: setup.scenario.clone(),
        denominator: setup.protocol.denominator,
        base_seed,
        strategies: out,
    })
}

/// One line of the per-run CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub scenario: ConfigId,
    pub intensity: Intensity,
    pub strategy: StrategyKind,
    pub run: u32,
    pub seed: u64,
    #[serde(rename = "e_s1_J")]
    pub e_s1_j: f64,
    #[serde(rename = "e_s2_J")]
    pub e_s2_j: f64,
    pub ei_pct: f64,
    pub chosen_node: String,
}

pub fn run_rows(report: &ExperimentReport) -> Vec<RunRow> {
    report
        .strategies
        .iter()
        .flat_map(|s| {
            s.runs.iter().map(|r| RunRow {
                scenario: report.scenario.config_id,
                intensity: report.scenario.intensity,
                strategy: s.strategy,
                run: r.run,
                seed: r.seed,
                e_s1_j: r.e_s1,
                e_s2_j: r.e_s2,
                ei_pct: r.ei,
                chosen_node: r.chosen_node.to_string(),
            })
        })
        .collect()
}

pub fn write_runs_csv<'a, W: io::Write>(
    reports: impl IntoIterator<Item = &'a ExperimentReport>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for report in reports {
        for row in run_rows(report) {
            w.serialize(row)?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

pub fn read_runs_csv<R: io::Read>(input: R) -> Result<Vec<RunRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)
}

/// `N3 (4), N2 (1)`: most chosen first, ties by id.
pub fn histogram_label(chosen: &BTreeMap<NodeId, u32>) -> String {
    let mut entries: Vec<_> = chosen.iter().collect();
    entries.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    entries
        .iter()
        .map(|(n, c)| format!("{n} ({c})"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Text table with one column per strategy: e_s1, e_s2 (mean and sample
/// standard deviation), ei under both denominators, and chosen nodes.
pub fn render_table(report: &ExperimentReport) -> Result<String> {
    let used = report.denominator;
    let mut rows: Vec<(String, Vec<String>)> = vec![
        ("e_s1 [J]".into(), Vec::new()),
        ("e_s2 [J]".into(), Vec::new()),
        (format!("ei [%] ({} denom.)", used.as_str()), Vec::new()),
        (
            format!("ei [%] ({} denom.)", used.other().as_str()),
            Vec::new(),
        ),
        ("Chosen Node".into(), Vec::new()),
        ("Runs".into(), Vec::new()),
    ];
    for s in &report.strategies {
        let m = &s.summary;
        rows[0]
            .1
            .push(format!("{:.3} (± {:.3})", m.e_s1_mean, m.e_s1_std));
        rows[1]
            .1
            .push(format!("{:.3} (± {:.3})", m.e_s2_mean, m.e_s2_std));
        rows[2].1.push(format!("{:.3}%", m.ei_mean));
        rows[3]
            .1
            .push(format!("{:.3}%", s.alternate_ei_mean(used)?));
        rows[4].1.push(histogram_label(&m.chosen));
        rows[5].1.push(if m.degenerate {
            format!("{} (single run, std n/a)", m.runs)
        } else {
            m.runs.to_string()
        });
    }
    let header: Vec<String> = report
        .strategies
        .iter()
        .map(|s| s.strategy.to_string())
        .collect();
    let first = format!(
        "Set {} ({})",
        report.scenario.config_id.as_str(),
        report.scenario.intensity.as_str()
    );
    let label_w = rows
        .iter()
        .map(|r| r.0.len())
        .chain([first.len()])
        .max()
        .unwrap_or(0);
    let col_w: Vec<usize> = (0..header.len())
        .map(|i| {
            rows.iter()
                .map(|r| r.1[i].chars().count())
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let mut line = |label: &str, cells: &[String]| {
        let _ = write!(out, "{label:<label_w$}");
        for (c, w) in cells.iter().zip(&col_w) {
            let pad = w.saturating_sub(c.chars().count());
            let _ = write!(out, " | {c}{}", " ".repeat(pad));
        }
        out.push('\n');
    };
    line(&first, &header);
    let rule: Vec<String> = col_w.iter().map(|w| "-".repeat(*w)).collect();
    line(&"-".repeat(label_w), &rule);
    for (label, cells) in &rows {
        line(label, cells);
    }
    Ok(out)
}

/// Side-by-side means with each strategy's difference from the first one.
pub fn render_comparison(report: &ExperimentReport) -> Result<String> {
    let Some(base) = report.strategies.first() else {
        return Ok(String::new());
    };
    let mut out = format!(
        "{} {}: deltas relative to {}\n",
        report.scenario.config_id.as_str(),
        report.scenario.intensity.as_str(),
        base.strategy
    );
    let _ = writeln!(
        out,
        "{:<24} {:>14} {:>14} {:>12} {:>14} {:>14} {:>12}",
        "strategy", "e_s1 [J]", "e_s2 [J]", "ei [%]", "d e_s1 [J]", "d e_s2 [J]", "d ei [pp]"
    );
    for s in &report.strategies {
        let (m, b) = (&s.summary, &base.summary);
        let _ = writeln!(
            out,
            "{:<24} {:>14.3} {:>14.3} {:>12.3} {:>14.3} {:>14.3} {:>12.3}",
            s.strategy.as_str(),
            m.e_s1_mean,
            m.e_s2_mean,
            m.ei_mean,
            m.e_s1_mean - b.e_s1_mean,
            m.e_s2_mean - b.e_s2_mean,
            m.ei_mean - b.ei_mean
        );
    }
    Ok(out)
}
