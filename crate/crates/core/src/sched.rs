//! Node scoring and selection.
//!
//! Three scorers are provided. Greenness scores are costs (lower wins),
//! the least-allocated score is a preference (higher wins). Only worker
//! nodes that can admit the pod are scored; ties go to the
//! lexicographically smallest node id.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::energy::MetricStore;
use crate::error::{Error, Result};
use crate::ids::NodeId;
use crate::model::{ClusterState, PodSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(
        rename = "k8s-least-allocated",
        alias = "least_allocated",
        alias = "least-allocated"
    )]
    LeastAllocated,
    #[serde(
        rename = "codeco-greenness-eq1",
        alias = "greenness_eq1",
        alias = "greenness-eq1"
    )]
    GreennessEq1,
    #[serde(
        rename = "codeco-greenness-eq2",
        alias = "greenness_eq2",
        alias = "greenness-eq2"
    )]
    GreennessEq2,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::LeastAllocated,
        StrategyKind::GreennessEq1,
        StrategyKind::GreennessEq2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::LeastAllocated => "k8s-least-allocated",
            StrategyKind::GreennessEq1 => "codeco-greenness-eq1",
            StrategyKind::GreennessEq2 => "codeco-greenness-eq2",
        }
    }

    /// Name without the implementation prefix, e.g. `greenness_eq1`.
    pub fn short_name(self) -> &'static str {
        match self {
            StrategyKind::LeastAllocated => "least_allocated",
            StrategyKind::GreennessEq1 => "greenness_eq1",
            StrategyKind::GreennessEq2 => "greenness_eq2",
        }
    }

    pub fn objective(self) -> Objective {
        match self {
            StrategyKind::LeastAllocated => Objective::Maximize,
            StrategyKind::GreennessEq1 | StrategyKind::GreennessEq2 => Objective::Minimize,
        }
    }

    pub fn scorer(self) -> Box<dyn NodeScorer> {
        match self {
            StrategyKind::LeastAllocated => Box::new(LeastAllocated),
            StrategyKind::GreennessEq1 => Box::new(NodeEnergyGreenness),
            StrategyKind::GreennessEq2 => Box::new(LinkEnergyGreenness),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s || k.short_name() == s.replace('-', "_"))
            .ok_or_else(|| {
                format!(
                    "unknown scheduler `{s}` (expected one of {})",
                    Self::ALL.map(|k| k.as_str()).join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreennessScore {
    pub node_id: NodeId,
    pub g: f64,
    pub window_used: f64,
}

/// Link-side inputs of the network greenness cost.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLinkProfile {
    pub node_id: NodeId,
    pub active_link_count: u32,
    pub network_energy_joules: f64,
}

impl NodeLinkProfile {
    pub fn from_cluster(state: &ClusterState, store: &MetricStore, node: &NodeId) -> Result<Self> {
        let spec = state.node(node)?;
        Ok(Self {
            node_id: node.clone(),
            active_link_count: spec.active_links().count() as u32,
            network_energy_joules: store.network_energy(node)?,
        })
    }
}

/// Node energy over the trailing window.
pub fn score_greenness_eq1(
    store: &MetricStore,
    node: &NodeId,
    window: f64,
    at: f64,
) -> Result<GreennessScore> {
    Ok(GreennessScore {
        node_id: node.clone(),
        g: store.window_increase(node, window, at)?,
        window_used: window,
    })
}

/// Active egress link count times network energy.
pub fn score_greenness_eq2(profile: &NodeLinkProfile) -> GreennessScore {
    GreennessScore {
        node_id: profile.node_id.clone(),
        g: f64::from(profile.active_link_count) * profile.network_energy_joules,
        window_used: 0.0,
    }
}

/// Fraction of CPU left after placing `pod`; `None` when it does not fit.
pub fn score_least_allocated(
    state: &ClusterState,
    node: &NodeId,
    pod: &PodSpec,
) -> Result<Option<f64>> {
    let spec = state.node(node)?;
    if !state.fits(pod, node)? {
        return Ok(None);
    }
    let capacity = f64::from(spec.cpu_capacity);
    let left = f64::from(state.residual_cpu(node)? - pod.cpu_request);
    Ok(Some(left / capacity))
}

/// Snapshot a scorer may read.
pub struct SchedulingContext<'a> {
    pub state: &'a ClusterState,
    pub store: &'a MetricStore,
    pub pod: &'a PodSpec,
    /// Length of the trailing energy window in seconds.
    pub window: f64,
    /// Query time, normally the end of the baseline phase.
    pub at: f64,
}

pub trait NodeScorer: Send + Sync {
    fn kind(&self) -> StrategyKind;

    fn score(&self, ctx: &SchedulingContext<'_>, node: &NodeId) -> Result<f64>;
}

pub struct LeastAllocated;

impl NodeScorer for LeastAllocated {
    fn kind(&self) -> StrategyKind {
        StrategyKind::LeastAllocated
    }

    fn score(&self, ctx: &SchedulingContext<'_>, node: &NodeId) -> Result<f64> {
        score_least_allocated(ctx.state, node, ctx.pod)?
            .ok_or_else(|| Error::NoFeasibleNode(ctx.pod.pod_id.clone()))
    }
}

pub struct NodeEnergyGreenness;

impl NodeScorer for NodeEnergyGreenness {
    fn kind(&self) -> StrategyKind {
        StrategyKind::GreennessEq1
    }

    fn score(&self, ctx: &SchedulingContext<'_>, node: &NodeId) -> Result<f64> {
        Ok(score_greenness_eq1(ctx.store, node, ctx.window, ctx.at)?.g)
    }
}

pub struct LinkEnergyGreenness;

impl NodeScorer for LinkEnergyGreenness {
    fn kind(&self) -> StrategyKind {
        StrategyKind::GreennessEq2
    }

    fn score(&self, ctx: &SchedulingContext<'_>, node: &NodeId) -> Result<f64> {
        let profile = NodeLinkProfile::from_cluster(ctx.state, ctx.store, node)?;
        Ok(score_greenness_eq2(&profile).g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingDecision {
    pub chosen_node: NodeId,
    pub scores: BTreeMap<NodeId, f64>,
    pub strategy: StrategyKind,
}

/// Best node under `objective`; equal scores resolve to the smallest id.
pub fn pick(scores: &BTreeMap<NodeId, f64>, objective: Objective) -> Option<&NodeId> {
    // BTreeMap iterates in id order and only a strictly better score
    // replaces the incumbent.
    let mut best: Option<(&NodeId, f64)> = None;
    for (id, &s) in scores {
        let better = match best {
            None => true,
            Some((_, b)) => match objective {
                Objective::Minimize => s < b,
                Objective::Maximize => s > b,
            },
        };
        if better {
            best = Some((id, s));
        }
    }
    best.map(|(id, _)| id)
}

/// Worker nodes that can admit the pod.
pub fn feasible_nodes(state: &ClusterState, pod: &PodSpec) -> Result<Vec<NodeId>> {
    let mut out = Vec::new();
    for id in state.worker_ids() {
        if state.fits(pod, id)? {
            out.push(id.clone());
        }
    }
    Ok(out)
}

pub fn select_node(
    ctx: &SchedulingContext<'_>,
    strategy: StrategyKind,
) -> Result<SchedulingDecision> {
    select_with(ctx, strategy.scorer().as_ref())
}

pub fn select_with(
    ctx: &SchedulingContext<'_>,
    scorer: &dyn NodeScorer,
) -> Result<SchedulingDecision> {
    let strategy = scorer.kind();
    let mut scores = BTreeMap::new();
    for node in feasible_nodes(ctx.state, ctx.pod)? {
        let s = scorer.score(ctx, &node)?;
        scores.insert(node, s);
    }
    let chosen_node = pick(&scores, strategy.objective())
        .cloned()
        .ok_or_else(|| Error::NoFeasibleNode(ctx.pod.pod_id.clone()))?;
    Ok(SchedulingDecision {
        chosen_node,
        scores,
        strategy,
    })
}
