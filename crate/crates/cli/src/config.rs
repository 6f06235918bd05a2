//! Scenario files: one TOML document per experiment.
//!
//! Every section is optional except `[scenario]`; omitted keys take the
//! library defaults and unknown keys are rejected. `--set a.b=v` overrides
//! are applied to the parsed document before it is interpreted.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ecosched_core::experiment::ExperimentSetup;
use ecosched_core::{
    ArrivalProcess, ClusterSpec, ConfigId, Denominator, Intensity, LinkSpec, LoadLevel, NodeId,
    NodeRole, NodeSpec, PowerModelParams, Protocol, ScenarioConfig, SimulationConfig, StrategyKind,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_RUNS: u32 = 5;
pub const DEFAULT_STRATEGIES: [StrategyKind; 2] =
    [StrategyKind::GreennessEq1, StrategyKind::LeastAllocated];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheduler: Option<Schedulers>,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub workload: WorkloadSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<ClusterSection>,
}

/// `scheduler = "x"` or `scheduler = ["x", "y"]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedulers {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub config_id: ConfigId,
    pub intensity: Intensity,
    /// Preloaded pods per loaded worker; defaults to 3 (6 at high intensity).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pods_per_node: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_pod_level: Option<LoadLevel>,
    /// Replaces the configuration's preload layout entirely.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preloads: Option<BTreeMap<String, Vec<LoadLevel>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub warmup_s: f64,
    pub cooldown_s: f64,
    pub window_s: f64,
    pub preload_through_s2: bool,
    pub denominator: Denominator,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let p = Protocol::default();
        Self {
            warmup_s: p.warmup_s,
            cooldown_s: p.cooldown_s,
            window_s: p.window_s,
            preload_through_s2: p.preload_through_s2,
            denominator: p.denominator,
        }
    }
}

/// Request profile; `rps` sets the test pod rate, `duration_s` each phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rps: Option<f64>,
    pub response_time_ms: f64,
    pub duration_s: f64,
    pub demand_ms_per_request: f64,
    pub request_bytes: u64,
    pub response_bytes: u64,
    pub arrival: ArrivalProcess,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        let p = Protocol::default();
        Self {
            rps: p.test_rps,
            response_time_ms: p.response_time_ms,
            duration_s: p.phase_s,
            demand_ms_per_request: p.demand_ms_per_request,
            request_bytes: p.request_bytes,
            response_bytes: p.response_bytes,
            arrival: p.arrival,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    #[serde(default)]
    pub enforce_memory: bool,
    pub nodes: Vec<NodeEntry>,
}

/// Capacities are signed here so that negative values reach validation
/// instead of failing as a type error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub node_id: String,
    #[serde(default = "worker_role")]
    pub role: NodeRole,
    pub cpu_capacity: i64,
    #[serde(default = "default_memory")]
    pub memory_capacity: i64,
    pub idle_watts: f64,
    pub max_dynamic_watts: f64,
    #[serde(default)]
    pub background_cpu_mean: f64,
    #[serde(default)]
    pub background_cpu_stddev: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkEntry>,
}

fn worker_role() -> NodeRole {
    NodeRole::Worker
}

fn default_memory() -> i64 {
    4096
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEntry {
    pub link_id: String,
    pub peer_node_id: String,
    pub joules_per_megabit: f64,
    #[serde(default = "default_true")]
    pub active: bool,
}

impl From<&NodeSpec> for NodeEntry {
    fn from(n: &NodeSpec) -> Self {
        Self {
            node_id: n.node_id.to_string(),
            role: n.role,
            cpu_capacity: n.cpu_capacity.into(),
            memory_capacity: n.memory_capacity.into(),
            idle_watts: n.power_model.idle_watts,
            max_dynamic_watts: n.power_model.max_dynamic_watts,
            background_cpu_mean: n.background_cpu_mean,
            background_cpu_stddev: n.background_cpu_stddev,
            links: n
                .links
                .iter()
                .map(|l| LinkEntry {
                    link_id: l.link_id.to_string(),
                    peer_node_id: l.peer_node_id.to_string(),
                    joules_per_megabit: l.joules_per_megabit,
                    active: l.active,
                })
                .collect(),
        }
    }
}

impl From<&ClusterSpec> for ClusterSection {
    fn from(c: &ClusterSpec) -> Self {
        Self {
            enforce_memory: c.enforce_memory,
            nodes: c.nodes.iter().map(NodeEntry::from).collect(),
        }
    }
}

fn capacity(value: i64, field: String) -> Result<u32, CliError> {
    match u32::try_from(value) {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(CliError::Validation(format!(
            "{field}: must be a positive integer, got {value}"
        ))),
    }
}

impl ClusterSection {
    pub fn to_spec(&self) -> Result<ClusterSpec, CliError> {
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let at = |key: &str| format!("cluster.nodes[{i}].{key} (node {})", n.node_id);
                Ok(NodeSpec {
                    node_id: NodeId::new(n.node_id.as_str()),
                    role: n.role,
                    cpu_capacity: capacity(n.cpu_capacity, at("cpu_capacity"))?,
                    memory_capacity: capacity(n.memory_capacity, at("memory_capacity"))?,
                    power_model: PowerModelParams::new(n.idle_watts, n.max_dynamic_watts),
                    links: n
                        .links
                        .iter()
                        .map(|l| LinkSpec {
                            link_id: l.link_id.as_str().into(),
                            peer_node_id: l.peer_node_id.as_str().into(),
                            joules_per_megabit: l.joules_per_megabit,
                            active: l.active,
                        })
                        .collect(),
                    background_cpu_mean: n.background_cpu_mean,
                    background_cpu_stddev: n.background_cpu_stddev,
                })
            })
            .collect::<Result<_, CliError>>()?;
        Ok(ClusterSpec {
            nodes,
            enforce_memory: self.enforce_memory,
        })
    }
}

/// A fully interpreted and validated scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub setup: ExperimentSetup,
    pub strategies: Vec<StrategyKind>,
    pub runs: u32,
}

impl Scenario {
    pub fn base_seed(&self) -> u64 {
        self.setup.simulation.seed
    }

    pub fn label(&self) -> String {
        self.setup.scenario.label()
    }
}

impl ScenarioFile {
    pub fn resolve(&self) -> Result<Scenario, CliError> {
        let s = &self.scenario;
        let mut scenario = match s.pods_per_node {
            Some(0) => {
                return Err(CliError::Validation(
                    "scenario.pods_per_node: must be >= 1".into(),
                ))
            }
            Some(n) => ScenarioConfig::with_pods_per_worker(s.config_id, s.intensity, n),
            None => ScenarioConfig::standard(s.config_id, s.intensity),
        };
        if let Some(level) = s.test_pod_level {
            scenario.test_pod_level = level;
        }
        if let Some(preloads) = &s.preloads {
            scenario.preloads = preloads
                .iter()
                .filter(|(_, levels)| !levels.is_empty())
                .map(|(node, levels)| (NodeId::new(node.as_str()), levels.clone()))
                .collect();
        }

        let (p, w) = (&self.protocol, &self.workload);
        let protocol = Protocol {
            warmup_s: p.warmup_s,
            phase_s: w.duration_s,
            cooldown_s: p.cooldown_s,
            window_s: p.window_s,
            demand_ms_per_request: w.demand_ms_per_request,
            request_bytes: w.request_bytes,
            response_bytes: w.response_bytes,
            response_time_ms: w.response_time_ms,
            arrival: w.arrival,
            test_rps: w.rps,
            preload_through_s2: p.preload_through_s2,
            denominator: p.denominator,
        };
        let cluster = match &self.cluster {
            Some(c) => c.to_spec()?,
            None => ClusterSpec::testbed(),
        };
        let setup = ExperimentSetup {
            cluster,
            scenario,
            simulation: self.simulation,
            protocol,
        };
        setup
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;

        let names: Vec<&str> = match &self.scheduler {
            None => Vec::new(),
            Some(Schedulers::One(s)) => vec![s.as_str()],
            Some(Schedulers::Many(v)) => v.iter().map(String::as_str).collect(),
        };
        let mut strategies = Vec::new();
        for name in names {
            let k: StrategyKind = name
                .parse()
                .map_err(|e| CliError::Validation(format!("scheduler: {e}")))?;
            if !strategies.contains(&k) {
                strategies.push(k);
            }
        }
        if strategies.is_empty() {
            strategies = DEFAULT_STRATEGIES.to_vec();
        }

        let runs = self.runs.unwrap_or(DEFAULT_RUNS);
        if runs == 0 {
            return Err(CliError::Validation("runs: must be >= 1".into()));
        }
        Ok(Scenario {
            setup,
            strategies,
            runs,
        })
    }

    /// Fully explicit file describing `scenario`.
    pub fn from_scenario(s: &Scenario) -> Self {
        let setup = &s.setup;
        let sc = &setup.scenario;
        let p = &setup.protocol;
        let standard = ScenarioConfig::standard(sc.config_id, sc.intensity);
        Self {
            runs: Some(s.runs),
            scheduler: Some(Schedulers::Many(
                s.strategies
                    .iter()
                    .map(|k| k.short_name().to_owned())
                    .collect(),
            )),
            scenario: ScenarioSection {
                config_id: sc.config_id,
                intensity: sc.intensity,
                pods_per_node: None,
                test_pod_level: Some(sc.test_pod_level),
                preloads: (sc.preloads != standard.preloads).then(|| {
                    sc.preloads
                        .iter()
                        .map(|(n, l)| (n.to_string(), l.clone()))
                        .collect()
                }),
            },
            simulation: setup.simulation,
            protocol: ProtocolSection {
                warmup_s: p.warmup_s,
                cooldown_s: p.cooldown_s,
                window_s: p.window_s,
                preload_through_s2: p.preload_through_s2,
                denominator: p.denominator,
            },
            workload: WorkloadSection {
                rps: p.test_rps,
                response_time_ms: p.response_time_ms,
                duration_s: p.phase_s,
                demand_ms_per_request: p.demand_ms_per_request,
                request_bytes: p.request_bytes,
                response_bytes: p.response_bytes,
                arrival: p.arrival,
            },
            cluster: Some(ClusterSection::from(&setup.cluster)),
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("serializing scenario: {e}")))
    }
}

/// Applies one `dotted.key=value` override. The value is read as a TOML
/// literal when possible and as a bare string otherwise.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Parse(format!("override `{assignment}`: expected key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Parse(format!(
            "override `{assignment}`: empty key segment"
        )));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));

    let (last, parents) = path
        .split_last()
        .expect("split yields at least one segment");
    let mut table = doc;
    for part in parents {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            CliError::Parse(format!("override `{assignment}`: `{part}` is not a table"))
        })?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

pub fn parse_scenario_str(
    text: &str,
    origin: &str,
    overrides: &[String],
) -> Result<Scenario, CliError> {
    let file: ScenarioFile = if overrides.is_empty() {
        // Deserializing straight from text keeps line and column context.
        toml::from_str(text).map_err(|e| CliError::Parse(format!("{origin}: {e}")))?
    } else {
        let mut doc: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Parse(format!("{origin}: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        doc.try_into()
            .map_err(|e| CliError::Parse(format!("{origin} (after overrides): {e}")))?
    };
    file.resolve()
}

pub fn read_scenario_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io {
        path: PathBuf::from(path),
        message: e.to_string(),
    })
}

pub fn parse_scenario_file(path: &Path, overrides: &[String]) -> Result<Scenario, CliError> {
    let text = read_scenario_file(path)?;
    parse_scenario_str(&text, &path.display().to_string(), overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Scenario, CliError> {
        parse_scenario_str(text, "test", &[])
    }

    const MINIMAL: &str = "[scenario]\nconfig_id = \"C1\"\nintensity = \"moderate\"\n";

    #[test]
    fn minimal_file_takes_defaults() {
        let s = parse(MINIMAL).unwrap();
        assert_eq!(
            s.setup,
            ExperimentSetup::new(ScenarioConfig::standard(ConfigId::C1, Intensity::Moderate))
        );
        assert_eq!(s.strategies, DEFAULT_STRATEGIES);
        assert_eq!(s.runs, DEFAULT_RUNS);
        assert_eq!(s.base_seed(), SimulationConfig::default().seed);
    }

    #[test]
    fn unknown_key_is_a_parse_error_with_location() {
        let err = parse(&format!("{MINIMAL}colour = \"green\"\n")).unwrap_err();
        let CliError::Parse(msg) = err else {
            panic!("{err:?}")
        };
        assert!(msg.contains("colour") && msg.contains("line 4"), "{msg}");

        let err = parse(&format!("{MINIMAL}[protocol]\nwarmup = 3\n")).unwrap_err();
        assert!(
            matches!(&err, CliError::Parse(m) if m.contains("warmup")),
            "{err:?}"
        );
    }

    #[test]
    fn negative_capacity_names_the_field() {
        let text = format!(
            "{MINIMAL}[cluster]\n[[cluster.nodes]]\nnode_id = \"N1\"\ncpu_capacity = -4000\nidle_watts = 1.0\nmax_dynamic_watts = 1.0\n"
        );
        let err = parse(&text).unwrap_err();
        let CliError::Validation(msg) = err else {
            panic!("{err:?}")
        };
        assert!(msg.contains("cpu_capacity"), "{msg}");
    }

    #[test]
    fn invalid_values_are_validation_errors() {
        let err = parse(&format!("{MINIMAL}[workload]\ndemand_ms_per_request = 0\n")).unwrap_err();
        assert!(
            matches!(&err, CliError::Validation(m) if m.contains("demand_ms_per_request")),
            "{err:?}"
        );
        let err = parse(&format!("scheduler = \"round-robin\"\n{MINIMAL}")).unwrap_err();
        assert!(
            matches!(&err, CliError::Validation(m) if m.starts_with("scheduler")),
            "{err:?}"
        );
        let err = parse(&format!("{MINIMAL}[scenario.preloads]\nN9 = [\"S\"]\n")).unwrap_err();
        assert!(
            matches!(&err, CliError::Validation(m) if m.contains("N9")),
            "{err:?}"
        );
    }

    #[test]
    fn scheduler_accepts_string_or_list() {
        let s = parse(&format!("scheduler = \"codeco-greenness-eq2\"\n{MINIMAL}")).unwrap();
        assert_eq!(s.strategies, [StrategyKind::GreennessEq2]);
        let s = parse(&format!(
            "scheduler = [\"least_allocated\", \"greenness_eq1\"]\n{MINIMAL}"
        ))
        .unwrap();
        assert_eq!(
            s.strategies,
            [StrategyKind::LeastAllocated, StrategyKind::GreennessEq1]
        );
    }

    #[test]
    fn overrides_replace_and_create_keys() {
        let overrides = [
            "workload.rps=12".to_owned(),
            "scenario.intensity=high".to_owned(),
            "simulation.seed = 7".to_owned(),
        ];
        let s = parse_scenario_str(MINIMAL, "test", &overrides).unwrap();
        assert_eq!(s.setup.protocol.test_rps, Some(12.0));
        assert_eq!(s.setup.scenario.intensity, Intensity::High);
        assert_eq!(s.base_seed(), 7);
        let bad = parse_scenario_str(MINIMAL, "test", &["scenario.config_id.x=1".to_owned()]);
        assert!(matches!(bad, Err(CliError::Parse(_))));
        assert!(matches!(
            parse_scenario_str(MINIMAL, "test", &["novalue".to_owned()]),
            Err(CliError::Parse(_))
        ));
    }

    #[test]
    fn pods_per_node_and_preload_override() {
        let s = parse(&format!("{MINIMAL}pods_per_node = 2\n")).unwrap();
        assert!(s.setup.scenario.preloads.is_empty());
        let text = "[scenario]\nconfig_id = \"3A\"\nintensity = \"moderate\"\npods_per_node = 2\n";
        assert_eq!(parse(text).unwrap().setup.scenario.preload_pod_count(), 6);
        let text = format!("{MINIMAL}[scenario.preloads]\nN2 = [\"L\", \"S\"]\n");
        let s = parse(&text).unwrap();
        assert_eq!(
            s.setup.scenario.preloads[&NodeId::new("N2")],
            [LoadLevel::L, LoadLevel::S]
        );
    }

    #[test]
    fn explicit_form_round_trips() {
        for sc in ScenarioConfig::matrix() {
            let original = Scenario {
                setup: ExperimentSetup::new(sc),
                strategies: StrategyKind::ALL.to_vec(),
                runs: 3,
            };
            let text = ScenarioFile::from_scenario(&original).to_toml().unwrap();
            assert_eq!(parse(&text).unwrap(), original, "{text}");
        }
    }
}
