//! Power model, cumulative joule counters, and the windowed counter query.
//!
//! Node meters integrate power stepwise and record a sample at every
//! multiple of the sampling interval, interpolated to the exact boundary.
//! [`EnergyMeter::window_increase`] reads the counter at the two ends of
//! the window by linear interpolation between samples. It never
//! extrapolates past the recorded range.

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{LinkId, NodeId};
use crate::model::NodeSpec;

/// Slack for comparing timestamps produced by repeated `f64` additions.
const TIME_EPS: f64 = 1e-9;

/// Which part of the node's power feeds the queried counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeteringMode {
    /// Only the utilization-proportional part, `max_dynamic * utilization`.
    #[default]
    Dynamic,
    /// Idle plus dynamic power.
    Platform,
}

/// `idle + max_dynamic * cpu_used / cpu_capacity`.
pub fn instantaneous_power(node: &NodeSpec, cpu_used: f64) -> Result<f64> {
    let capacity = f64::from(node.cpu_capacity);
    if !(0.0..=capacity).contains(&cpu_used) {
        return Err(Error::UtilizationOutOfRange {
            node: node.node_id.clone(),
            used: cpu_used,
            capacity: node.cpu_capacity,
        });
    }
    let pm = node.power_model;
    Ok(pm.idle_watts + pm.max_dynamic_watts * (cpu_used / capacity))
}

/// Power charged to the node's counter under `mode`.
pub fn metered_power(node: &NodeSpec, cpu_used: f64, mode: MeteringMode) -> Result<f64> {
    let total = instantaneous_power(node, cpu_used)?;
    Ok(match mode {
        MeteringMode::Platform => total,
        MeteringMode::Dynamic => total - node.power_model.idle_watts,
    })
}

pub fn bytes_to_megabits(bytes: u64) -> f64 {
    bytes as f64 * 8.0 / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub joules: f64,
}

/// Counter value at `t`, linearly interpolated. `None` outside the sampled range.
pub fn interpolate(samples: &[Sample], t: f64) -> Option<f64> {
    let first = samples.first()?;
    let last = samples.last()?;
    if t < first.t - TIME_EPS || t > last.t + TIME_EPS {
        return None;
    }
    if t <= first.t {
        return Some(first.joules);
    }
    if t >= last.t {
        return Some(last.joules);
    }
    // First sample strictly after t; guaranteed to exist and be > 0.
    let hi = samples.partition_point(|s| s.t <= t);
    let (a, b) = (samples[hi - 1], samples[hi]);
    let frac = (t - a.t) / (b.t - a.t);
    Some(a.joules + (b.joules - a.joules) * frac)
}

/// `counter(at) - counter(at - window)`, clamped at zero.
pub fn window_increase(node: &NodeId, samples: &[Sample], window: f64, at: f64) -> Result<f64> {
    if !(window > 0.0) {
        return Err(Error::NonPositiveInput("window"));
    }
    let from = at - window;
    let missing = || Error::InsufficientHistory {
        node: node.clone(),
        from,
        to: at,
    };
    if samples.len() < 2 {
        return Err(missing());
    }
    let end = interpolate(samples, at).ok_or_else(missing)?;
    let start = interpolate(samples, from).ok_or_else(missing)?;
    Ok((end - start).max(0.0))
}

/// Cumulative joule counter for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyMeter {
    node_id: NodeId,
    cumulative_joules: f64,
    now: f64,
    sampling_interval: f64,
    next_boundary: u64,
    samples: Vec<Sample>,
}

impl EnergyMeter {
    /// Starts at zero joules with one sample at `start`.
    pub fn new(node_id: NodeId, sampling_interval: f64, start: f64) -> Self {
        assert!(
            sampling_interval > 0.0,
            "sampling interval must be positive"
        );
        let next_boundary = (start / sampling_interval).floor() as u64 + 1;
        Self {
            node_id,
            cumulative_joules: 0.0,
            now: start,
            sampling_interval,
            next_boundary,
            samples: vec![Sample {
                t: start,
                joules: 0.0,
            }],
        }
    }

    pub fn node_id(&self) -> &NodeId {
        &self.node_id
    }

    pub fn cumulative_joules(&self) -> f64 {
        self.cumulative_joules
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Adds `power * dt` and records a sample at every boundary crossed.
    pub fn accrue_step(&mut self, power: f64, dt: f64) {
        self.accrue_to(power, self.now + dt);
    }

    /// Holds `power` from the meter's current time until `t1`. Callers that
    /// step repeatedly should pass absolute times so the clock cannot drift
    /// off the sampling grid.
    pub fn accrue_to(&mut self, power: f64, t1: f64) {
        let t0 = self.now;
        let dt = t1 - t0;
        debug_assert!(dt > 0.0 && power >= 0.0, "power {power} dt {dt}");
        if !(dt > 0.0) {
            return;
        }
        let power = power.max(0.0);
        loop {
            let boundary = self.next_boundary as f64 * self.sampling_interval;
            if boundary > t1 + TIME_EPS {
                break;
            }
            let elapsed = (boundary - t0).clamp(0.0, dt);
            let joules = self.cumulative_joules + power * elapsed;
            if self.samples.last().is_none_or(|s| boundary > s.t) {
                self.samples.push(Sample {
                    t: boundary,
                    joules,
                });
            }
            self.next_boundary += 1;
        }
        self.cumulative_joules += power * dt;
        self.now = t1;
    }

    pub fn value_at(&self, t: f64) -> Option<f64> {
        interpolate(&self.samples, t)
    }

    pub fn window_increase(&self, window: f64, at: f64) -> Result<f64> {
        window_increase(&self.node_id, &self.samples, window, at)
    }
}

/// Cumulative transmit energy for one egress link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkEnergyMeter {
    node_id: NodeId,
    link_id: LinkId,
    joules_per_megabit: f64,
    cumulative_joules: f64,
    samples: Vec<Sample>,
}

impl LinkEnergyMeter {
    pub fn new(node_id: NodeId, link_id: LinkId, joules_per_megabit: f64) -> Self {
        Self {
            node_id,
            link_id,
            joules_per_megabit,
            cumulative_joules: 0.0,
            samples: Vec::new(),
        }
    }

    pub fn node_id(&self) -> &NodeId {
        &self.node_id
    }

    pub fn link_id(&self) -> &LinkId {
        &self.link_id
    }

    pub fn joules_per_megabit(&self) -> f64 {
        self.joules_per_megabit
    }

    pub fn cumulative_joules(&self) -> f64 {
        self.cumulative_joules
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn accrue_link(&mut self, megabits: f64, joules_per_megabit: f64) {
        debug_assert!(megabits >= 0.0);
        self.cumulative_joules += megabits.max(0.0) * joules_per_megabit;
    }

    /// Charges `megabits` at this link's configured cost.
    pub fn transmit(&mut self, megabits: f64) {
        self.accrue_link(megabits, self.joules_per_megabit);
    }

    fn record(&mut self, t: f64) {
        if self.samples.last().is_none_or(|s| t > s.t) {
            self.samples.push(Sample {
                t,
                joules: self.cumulative_joules,
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Node,
    Link,
}

/// One row of the metric dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub timestamp_s: f64,
    pub scope: Scope,
    pub node_id: String,
    pub link_id: String,
    pub cumulative_joules: f64,
}

/// Every node and link meter of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricStore {
    sampling_interval: f64,
    nodes: BTreeMap<NodeId, EnergyMeter>,
    links: BTreeMap<(NodeId, LinkId), LinkEnergyMeter>,
    next_link_boundary: u64,
}

impl MetricStore {
    pub fn new<'a>(
        nodes: impl IntoIterator<Item = &'a NodeSpec>,
        sampling_interval: f64,
        start: f64,
    ) -> Result<Self> {
        if !(sampling_interval > 0.0) {
            return Err(Error::NonPositiveInput("sampling_interval"));
        }
        let mut store = Self {
            sampling_interval,
            nodes: BTreeMap::new(),
            links: BTreeMap::new(),
            next_link_boundary: (start / sampling_interval).floor() as u64 + 1,
        };
        for node in nodes {
            store.nodes.insert(
                node.node_id.clone(),
                EnergyMeter::new(node.node_id.clone(), sampling_interval, start),
            );
            for link in &node.links {
                let mut meter = LinkEnergyMeter::new(
                    node.node_id.clone(),
                    link.link_id.clone(),
                    link.joules_per_megabit,
                );
                meter.record(start);
                store
                    .links
                    .insert((node.node_id.clone(), link.link_id.clone()), meter);
            }
        }
        Ok(store)
    }

    pub fn sampling_interval(&self) -> f64 {
        self.sampling_interval
    }

    pub fn node_meters(&self) -> impl Iterator<Item = &EnergyMeter> {
        self.nodes.values()
    }

    pub fn link_meters(&self) -> impl Iterator<Item = &LinkEnergyMeter> {
        self.links.values()
    }

    pub fn node_meter(&self, node: &NodeId) -> Result<&EnergyMeter> {
        self.nodes
            .get(node)
            .ok_or_else(|| Error::UnknownNode(node.clone()))
    }

    pub fn link_meter(&self, node: &NodeId, link: &LinkId) -> Result<&LinkEnergyMeter> {
        self.links
            .get(&(node.clone(), link.clone()))
            .ok_or_else(|| Error::UnknownLink {
                node: node.clone(),
                link: link.clone(),
            })
    }

    pub fn accrue_node(&mut self, node: &NodeId, power: f64, dt: f64) -> Result<()> {
        self.nodes
            .get_mut(node)
            .ok_or_else(|| Error::UnknownNode(node.clone()))?
            .accrue_step(power, dt);
        Ok(())
    }

    /// Like [`MetricStore::accrue_node`] with an absolute end time.
    pub fn accrue_node_to(&mut self, node: &NodeId, power: f64, t1: f64) -> Result<()> {
        self.nodes
            .get_mut(node)
            .ok_or_else(|| Error::UnknownNode(node.clone()))?
            .accrue_to(power, t1);
        Ok(())
    }

    pub fn transmit(&mut self, node: &NodeId, link: &LinkId, megabits: f64) -> Result<()> {
        self.links
            .get_mut(&(node.clone(), link.clone()))
            .ok_or_else(|| Error::UnknownLink {
                node: node.clone(),
                link: link.clone(),
            })?
            .transmit(megabits);
        Ok(())
    }

    /// Records link samples for every sampling boundary up to `now`.
    pub fn sample_links(&mut self, now: f64) {
        loop {
            let boundary = self.next_link_boundary as f64 * self.sampling_interval;
            if boundary > now + TIME_EPS {
                break;
            }
            for meter in self.links.values_mut() {
                meter.record(boundary);
            }
            self.next_link_boundary += 1;
        }
    }

    /// Sum of the node's link counters (network energy).
    pub fn network_energy(&self, node: &NodeId) -> Result<f64> {
        self.node_meter(node)?;
        Ok(self
            .links
            .range((node.clone(), LinkId::new(""))..)
            .take_while(|((n, _), _)| n == node)
            .map(|(_, m)| m.cumulative_joules)
            .sum())
    }

    pub fn window_increase(&self, node: &NodeId, window: f64, at: f64) -> Result<f64> {
        self.node_meter(node)?.window_increase(window, at)
    }

    /// All samples as dump rows, ordered by timestamp, then nodes before
    /// links, then ids.
    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows: Vec<MetricRow> = self
            .nodes
            .values()
            .flat_map(|m| {
                m.samples.iter().map(|s| MetricRow {
                    timestamp_s: s.t,
                    scope: Scope::Node,
                    node_id: m.node_id.to_string(),
                    link_id: String::new(),
                    cumulative_joules: s.joules,
                })
            })
            .chain(self.links.values().flat_map(|m| {
                m.samples.iter().map(|s| MetricRow {
                    timestamp_s: s.t,
                    scope: Scope::Link,
                    node_id: m.node_id.to_string(),
                    link_id: m.link_id.to_string(),
                    cumulative_joules: s.joules,
                })
            }))
            .collect();
        rows.sort_by(|a, b| {
            a.timestamp_s
                .total_cmp(&b.timestamp_s)
                .then(a.scope.cmp(&b.scope))
                .then_with(|| a.node_id.cmp(&b.node_id))
                .then_with(|| a.link_id.cmp(&b.link_id))
        });
        rows
    }

    /// Writes the metric dump CSV (header row included).
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

/// Parses a metric dump produced by [`MetricStore::write_csv`].
pub fn read_metric_csv<R: io::Read>(input: R) -> Result<Vec<MetricRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)
}
