//! Static topology and mutable placement state.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{LinkId, NodeId, PodId};

/// CPU quantity in millicores.
pub type Millicores = u32;
/// Memory quantity in mebibytes.
pub type Mebibytes = u32;

/// Linear CPU-proportional power model: `idle + max_dynamic * utilization`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModelParams {
    pub idle_watts: f64,
    pub max_dynamic_watts: f64,
}

impl PowerModelParams {
    pub fn new(idle_watts: f64, max_dynamic_watts: f64) -> Self {
        Self {
            idle_watts,
            max_dynamic_watts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub link_id: LinkId,
    pub peer_node_id: NodeId,
    pub joules_per_megabit: f64,
    pub active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Master,
    Worker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: NodeId,
    pub role: NodeRole,
    pub cpu_capacity: Millicores,
    pub memory_capacity: Mebibytes,
    pub power_model: PowerModelParams,
    pub links: Vec<LinkSpec>,
    /// Mean CPU draw of system daemons (kubelet, exporters) in millicores.
    pub background_cpu_mean: f64,
    pub background_cpu_stddev: f64,
}

impl NodeSpec {
    pub fn worker(
        id: impl Into<NodeId>,
        cpu_capacity: Millicores,
        power_model: PowerModelParams,
    ) -> Self {
        Self {
            node_id: id.into(),
            role: NodeRole::Worker,
            cpu_capacity,
            memory_capacity: 3891,
            power_model,
            links: Vec::new(),
            background_cpu_mean: 0.0,
            background_cpu_stddev: 0.0,
        }
    }

    pub fn with_link(mut self, link: LinkSpec) -> Self {
        self.links.push(link);
        self
    }

    pub fn with_background(mut self, mean: f64, stddev: f64) -> Self {
        self.background_cpu_mean = mean;
        self.background_cpu_stddev = stddev;
        self
    }

    pub fn is_worker(&self) -> bool {
        self.role == NodeRole::Worker
    }

    pub fn active_links(&self) -> impl Iterator<Item = &LinkSpec> {
        self.links.iter().filter(|l| l.active)
    }

    /// First active link in declaration order; served traffic is charged here.
    pub fn egress_link(&self) -> Option<&LinkSpec> {
        self.active_links().next()
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("node {}: {}", self.node_id, name);
        if self.cpu_capacity == 0 {
            return Err(Error::invalid(field("cpu_capacity"), "must be > 0"));
        }
        if self.memory_capacity == 0 {
            return Err(Error::invalid(field("memory_capacity"), "must be > 0"));
        }
        let pm = self.power_model;
        if !(pm.idle_watts.is_finite() && pm.idle_watts >= 0.0) {
            return Err(Error::invalid(
                field("idle_watts"),
                "must be finite and >= 0",
            ));
        }
        if !(pm.max_dynamic_watts.is_finite() && pm.max_dynamic_watts >= 0.0) {
            return Err(Error::invalid(
                field("max_dynamic_watts"),
                "must be finite and >= 0",
            ));
        }
        if !(self.background_cpu_mean.is_finite() && self.background_cpu_mean >= 0.0) {
            return Err(Error::invalid(
                field("background_cpu_mean"),
                "must be finite and >= 0",
            ));
        }
        if self.background_cpu_mean > f64::from(self.cpu_capacity) {
            return Err(Error::invalid(
                field("background_cpu_mean"),
                "must not exceed cpu_capacity",
            ));
        }
        if !(self.background_cpu_stddev.is_finite() && self.background_cpu_stddev >= 0.0) {
            return Err(Error::invalid(
                field("background_cpu_stddev"),
                "must be finite and >= 0",
            ));
        }
        let mut seen = BTreeSet::new();
        for link in &self.links {
            if !seen.insert(&link.link_id) {
                return Err(Error::invalid(
                    field("links"),
                    format!("duplicate link id `{}`", link.link_id),
                ));
            }
            if !(link.joules_per_megabit.is_finite() && link.joules_per_megabit >= 0.0) {
                return Err(Error::invalid(
                    field(&format!("links.{}.joules_per_megabit", link.link_id)),
                    "must be finite and >= 0",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub nodes: Vec<NodeSpec>,
    /// Admission also checks memory when set; CPU is always checked.
    #[serde(default)]
    pub enforce_memory: bool,
}

impl ClusterSpec {
    /// One master plus three 4-core workers. N1 is the least efficient
    /// worker and N3 the most efficient.
    pub fn testbed() -> Self {
        let link = |peer: &str, jpm: f64| LinkSpec {
            link_id: LinkId::new("wlan0"),
            peer_node_id: NodeId::new(peer),
            joules_per_megabit: jpm,
            active: true,
        };
        let master = NodeSpec {
            node_id: NodeId::new("master"),
            role: NodeRole::Master,
            cpu_capacity: 8000,
            memory_capacity: 16384,
            power_model: PowerModelParams::new(10.0, 25.0),
            links: Vec::new(),
            background_cpu_mean: 200.0,
            background_cpu_stddev: 50.0,
        };
        let workers = [
            ("N1", 3.0, 5.0, 0.6),
            ("N2", 2.5, 4.0, 0.5),
            ("N3", 2.0, 3.0, 0.4),
        ]
        .into_iter()
        .map(|(id, idle, dynamic, jpm)| {
            NodeSpec::worker(id, 4000, PowerModelParams::new(idle, dynamic))
                .with_link(link("master", jpm))
                .with_background(8.0, 4.0)
        });
        Self {
            nodes: std::iter::once(master).chain(workers).collect(),
            enforce_memory: false,
        }
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.node_id.as_str() == id)
    }

    pub fn workers(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.iter().filter(|n| n.is_worker())
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::invalid(
                "cluster.nodes",
                "at least one node is required",
            ));
        }
        let mut seen = BTreeSet::new();
        for node in &self.nodes {
            node.validate()?;
            if !seen.insert(&node.node_id) {
                return Err(Error::invalid(
                    "cluster.nodes",
                    format!("duplicate node id `{}`", node.node_id),
                ));
            }
        }
        for node in &self.nodes {
            for link in &node.links {
                if !seen.contains(&link.peer_node_id) {
                    return Err(Error::invalid(
                        format!("node {}: links.{}.peer_node_id", node.node_id, link.link_id),
                        format!("unknown peer `{}`", link.peer_node_id),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PodRole {
    Preloaded,
    Test,
    Daemon,
}

impl PodRole {
    pub fn is_user(self) -> bool {
        matches!(self, PodRole::Preloaded | PodRole::Test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodSpec {
    pub pod_id: PodId,
    pub cpu_request: Millicores,
    #[serde(default)]
    pub memory_request: Mebibytes,
    pub role: PodRole,
    pub service_demand_ms_per_request: f64,
    pub request_bytes: u64,
    pub response_bytes: u64,
}

impl PodSpec {
    /// User pod with the default request profile (50 CPU-ms, 1 KB each way).
    pub fn new(id: impl Into<PodId>, cpu_request: Millicores, role: PodRole) -> Self {
        Self {
            pod_id: id.into(),
            cpu_request,
            memory_request: 0,
            role,
            service_demand_ms_per_request: 50.0,
            request_bytes: 1000,
            response_bytes: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.role.is_user() && self.cpu_request == 0 {
            return Err(Error::invalid(
                format!("pod {}: cpu_request", self.pod_id),
                "must be > 0 for preloaded and test pods",
            ));
        }
        if !(self.service_demand_ms_per_request.is_finite()
            && self.service_demand_ms_per_request > 0.0)
        {
            return Err(Error::invalid(
                format!("pod {}: service_demand_ms_per_request", self.pod_id),
                "must be > 0",
            ));
        }
        Ok(())
    }
}

/// Nodes, pods and their placements at a point in simulated time.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    nodes: BTreeMap<NodeId, NodeSpec>,
    pods: BTreeMap<PodId, PodSpec>,
    placements: BTreeMap<PodId, NodeId>,
    time: f64,
    enforce_memory: bool,
}

impl ClusterState {
    pub fn new(spec: &ClusterSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            nodes: spec
                .nodes
                .iter()
                .map(|n| (n.node_id.clone(), n.clone()))
                .collect(),
            pods: BTreeMap::new(),
            placements: BTreeMap::new(),
            time: 0.0,
            enforce_memory: spec.enforce_memory,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Moves the clock forward. Negative steps are ignored.
    pub fn advance_to(&mut self, t: f64) {
        if t > self.time {
            self.time = t;
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.values()
    }

    pub fn node(&self, id: &NodeId) -> Result<&NodeSpec> {
        self.nodes
            .get(id)
            .ok_or_else(|| Error::UnknownNode(id.clone()))
    }

    pub fn node_mut(&mut self, id: &NodeId) -> Result<&mut NodeSpec> {
        self.nodes
            .get_mut(id)
            .ok_or_else(|| Error::UnknownNode(id.clone()))
    }

    pub fn worker_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes
            .values()
            .filter(|n| n.is_worker())
            .map(|n| &n.node_id)
    }

    pub fn pod(&self, id: &PodId) -> Option<&PodSpec> {
        self.pods.get(id)
    }

    pub fn placement(&self, id: &PodId) -> Option<&NodeId> {
        self.placements.get(id)
    }

    pub fn placements(&self) -> &BTreeMap<PodId, NodeId> {
        &self.placements
    }

    pub fn pods_on<'a>(&'a self, node: &'a NodeId) -> impl Iterator<Item = &'a PodSpec> + 'a {
        self.placements
            .iter()
            .filter(move |(_, n)| *n == node)
            .map(|(p, _)| &self.pods[p])
    }

    pub fn allocated_cpu(&self, node: &NodeId) -> Result<Millicores> {
        self.node(node)?;
        Ok(self.pods_on(node).map(|p| p.cpu_request).sum())
    }

    pub fn residual_cpu(&self, node: &NodeId) -> Result<Millicores> {
        let capacity = self.node(node)?.cpu_capacity;
        Ok(capacity.saturating_sub(self.allocated_cpu(node)?))
    }

    pub fn residual_memory(&self, node: &NodeId) -> Result<Mebibytes> {
        let capacity = self.node(node)?.memory_capacity;
        let used: Mebibytes = self.pods_on(node).map(|p| p.memory_request).sum();
        Ok(capacity.saturating_sub(used))
    }

    /// Whether `pod` passes admission on `node` (CPU, plus memory when enforced).
    pub fn fits(&self, pod: &PodSpec, node: &NodeId) -> Result<bool> {
        let cpu_ok = self.residual_cpu(node)? >= pod.cpu_request;
        let mem_ok = !self.enforce_memory || self.residual_memory(node)? >= pod.memory_request;
        Ok(cpu_ok && mem_ok)
    }

    pub fn place_pod(&mut self, pod: PodSpec, node_id: &NodeId) -> Result<()> {
        pod.validate()?;
        if self.placements.contains_key(&pod.pod_id) {
            return Err(Error::DuplicatePod(pod.pod_id));
        }
        let free = self.residual_cpu(node_id)?;
        if free < pod.cpu_request {
            return Err(Error::InsufficientCapacity {
                node: node_id.clone(),
                pod: pod.pod_id,
                requested: pod.cpu_request,
                free,
            });
        }
        if self.enforce_memory {
            let free = self.residual_memory(node_id)?;
            if free < pod.memory_request {
                return Err(Error::InsufficientMemory {
                    node: node_id.clone(),
                    pod: pod.pod_id,
                    requested: pod.memory_request,
                    free,
                });
            }
        }
        self.placements.insert(pod.pod_id.clone(), node_id.clone());
        self.pods.insert(pod.pod_id.clone(), pod);
        Ok(())
    }

    pub fn remove_pod(&mut self, pod_id: &PodId) -> Result<PodSpec> {
        self.placements
            .remove(pod_id)
            .ok_or_else(|| Error::UnknownPod(pod_id.clone()))?;
        Ok(self.pods.remove(pod_id).expect("placed pod has a spec"))
    }

    /// Removes every preloaded and test pod; daemon pods stay.
    pub fn drain_user_pods(&mut self) -> Vec<PodSpec> {
        let user: Vec<PodId> = self
            .pods
            .values()
            .filter(|p| p.role.is_user())
            .map(|p| p.pod_id.clone())
            .collect();
        user.iter()
            .map(|id| self.remove_pod(id).expect("listed pod is placed"))
            .collect()
    }

    /// Admission invariant over every node.
    pub fn capacity_conserved(&self) -> bool {
        self.nodes.values().all(|n| {
            let used: u64 = self
                .pods_on(&n.node_id)
                .map(|p| u64::from(p.cpu_request))
                .sum();
            used <= u64::from(n.cpu_capacity)
        })
    }
}
