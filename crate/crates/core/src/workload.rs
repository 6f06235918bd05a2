//! Closed-loop request generation and per-pod request servers.
//!
//! A [`DemandSchedule`] lists request arrival times for one pod. A
//! [`PodServer`] replays it as a single FIFO server whose speed is the
//! pod's CPU request: a request needing `d` CPU-ms occupies a pod capped
//! at `c` millicores for `d / c` seconds. Service inside a tick is
//! computed in continuous time, so tick length does not change which
//! requests complete.

use std::collections::VecDeque;

use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::energy::bytes_to_megabits;
use crate::error::{Error, Result};
use crate::ids::{NodeId, PodId};
use crate::model::{ClusterState, Millicores, NodeSpec, PodSpec};
use crate::rng;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LoadLevel {
    S,
    M,
    L,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Moderate,
    High,
}

impl Intensity {
    pub fn as_str(self) -> &'static str {
        match self {
            Intensity::Moderate => "moderate",
            Intensity::High => "high",
        }
    }
}

/// Pod size and request rates attached to a load level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadIntensity {
    pub level: LoadLevel,
    pub moderate_rps: f64,
    pub high_rps: f64,
    pub cpu_request: Millicores,
}

impl LoadLevel {
    pub const ALL: [LoadLevel; 3] = [LoadLevel::S, LoadLevel::M, LoadLevel::L];

    pub fn profile(self) -> LoadIntensity {
        let (moderate_rps, high_rps, cpu_request) = match self {
            LoadLevel::S => (5.0, 15.0, 300),
            LoadLevel::M => (10.0, 20.0, 400),
            LoadLevel::L => (15.0, 25.0, 500),
        };
        LoadIntensity {
            level: self,
            moderate_rps,
            high_rps,
            cpu_request,
        }
    }

    pub fn cpu_request(self) -> Millicores {
        self.profile().cpu_request
    }

    pub fn rps(self, intensity: Intensity) -> f64 {
        let p = self.profile();
        match intensity {
            Intensity::Moderate => p.moderate_rps,
            Intensity::High => p.high_rps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalProcess {
    /// Evenly spaced arrivals at exactly the target rate.
    #[default]
    Uniform,
    Poisson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub target_pod_id: PodId,
    pub target_rps: f64,
    pub max_response_time_ms: f64,
    /// Simulated time at which the first request may arrive.
    pub start: f64,
    pub duration: f64,
    pub arrival: ArrivalProcess,
}

impl WorkloadSpec {
    pub fn new(
        target_pod_id: impl Into<PodId>,
        target_rps: f64,
        start: f64,
        duration: f64,
    ) -> Self {
        Self {
            target_pod_id: target_pod_id.into(),
            target_rps,
            max_response_time_ms: 250.0,
            start,
            duration,
            arrival: ArrivalProcess::Uniform,
        }
    }
}

/// Thread count needed to sustain `rps` when each response may take up to
/// `response_time_ms`: `ceil(rps * t / 1000)`, at least one.
pub fn concurrency_threads(rps: f64, response_time_ms: f64) -> Result<u32> {
    if !(rps > 0.0) {
        return Err(Error::NonPositiveInput("request rate"));
    }
    if !(response_time_ms > 0.0) {
        return Err(Error::NonPositiveInput("response time"));
    }
    let threads = (rps * response_time_ms / 1000.0).ceil();
    Ok((threads as u32).max(1))
}

/// Arrival times plus everything a [`PodServer`] needs to replay them.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandSchedule {
    pub pod_id: PodId,
    pub node_id: NodeId,
    pub concurrency: u32,
    pub cpu_cap: Millicores,
    pub service_demand_ms: f64,
    pub megabits_per_request: f64,
    /// Absolute simulated times, non-decreasing.
    pub arrivals: Vec<f64>,
}

pub fn generate_load(
    state: &ClusterState,
    spec: &WorkloadSpec,
    seed: u64,
) -> Result<DemandSchedule> {
    let pod = state
        .pod(&spec.target_pod_id)
        .ok_or_else(|| Error::PodNotPlaced(spec.target_pod_id.clone()))?;
    let node_id = state
        .placement(&spec.target_pod_id)
        .ok_or_else(|| Error::PodNotPlaced(spec.target_pod_id.clone()))?
        .clone();
    let concurrency = concurrency_threads(spec.target_rps, spec.max_response_time_ms)?;
    let arrivals = arrival_times(spec, seed);
    Ok(DemandSchedule {
        pod_id: pod.pod_id.clone(),
        node_id,
        concurrency,
        cpu_cap: pod.cpu_request,
        service_demand_ms: pod.service_demand_ms_per_request,
        megabits_per_request: request_megabits(pod),
        arrivals,
    })
}

fn request_megabits(pod: &PodSpec) -> f64 {
    bytes_to_megabits(pod.request_bytes) + bytes_to_megabits(pod.response_bytes)
}

fn arrival_times(spec: &WorkloadSpec, seed: u64) -> Vec<f64> {
    if !(spec.duration > 0.0) {
        return Vec::new();
    }
    let end = spec.start + spec.duration;
    match spec.arrival {
        ArrivalProcess::Uniform => {
            // k / r < duration  <=>  k < r * duration
            let count = (spec.target_rps * spec.duration - TIME_EPS).ceil().max(0.0) as u64;
            (0..count)
                .map(|k| spec.start + k as f64 / spec.target_rps)
                .collect()
        }
        ArrivalProcess::Poisson => {
            let mut rng = rng::stream(seed, &[rng::label_key(spec.target_pod_id.as_str()), 0x0a77]);
            let gap = Exp::new(spec.target_rps).expect("rate checked positive");
            let mut t = spec.start;
            let mut out = Vec::new();
            loop {
                t += gap.sample(&mut rng);
                if t >= end {
                    break out;
                }
                out.push(t);
            }
        }
    }
}

/// Outcome of serving one pod over one tick.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TickService {
    /// CPU time consumed, in CPU-milliseconds.
    pub cpu_ms: f64,
    pub completed: u64,
    pub megabits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodServer {
    schedule: DemandSchedule,
    next_arrival: usize,
    /// Remaining CPU-ms of each request that arrived but has not completed.
    /// At most `concurrency` of them are outstanding at the pod.
    waiting: VecDeque<f64>,
    served: u64,
    cpu_ms_total: f64,
    peak_outstanding: u32,
}

impl PodServer {
    pub fn new(schedule: DemandSchedule) -> Self {
        Self {
            schedule,
            next_arrival: 0,
            waiting: VecDeque::new(),
            served: 0,
            cpu_ms_total: 0.0,
            peak_outstanding: 0,
        }
    }

    pub fn schedule(&self) -> &DemandSchedule {
        &self.schedule
    }

    pub fn pod_id(&self) -> &PodId {
        &self.schedule.pod_id
    }

    pub fn node_id(&self) -> &NodeId {
        &self.schedule.node_id
    }

    pub fn served(&self) -> u64 {
        self.served
    }

    pub fn cpu_ms_total(&self) -> f64 {
        self.cpu_ms_total
    }

    pub fn backlog(&self) -> usize {
        self.waiting.len()
    }

    pub fn peak_outstanding(&self) -> u32 {
        self.peak_outstanding
    }

    /// True once every scheduled request has arrived and completed.
    pub fn is_finished(&self) -> bool {
        self.next_arrival == self.schedule.arrivals.len() && self.waiting.is_empty()
    }

    fn admit_until(&mut self, t: f64) {
        let arrivals = &self.schedule.arrivals;
        while self.next_arrival < arrivals.len() && arrivals[self.next_arrival] <= t + TIME_EPS {
            self.waiting.push_back(self.schedule.service_demand_ms);
            self.next_arrival += 1;
        }
        let outstanding = self.waiting.len().min(self.schedule.concurrency as usize) as u32;
        self.peak_outstanding = self.peak_outstanding.max(outstanding);
    }

    /// Serves requests over `[t0, t0 + dt)`.
    pub fn step(&mut self, t0: f64, dt: f64) -> TickService {
        let t1 = t0 + dt;
        // CPU-ms of work per second of wall time.
        let rate = f64::from(self.schedule.cpu_cap);
        let mut now = t0;
        let mut out = TickService::default();
        loop {
            self.admit_until(now);
            let Some(&remaining) = self.waiting.front() else {
                match self.schedule.arrivals.get(self.next_arrival) {
                    Some(&next) if next < t1 - TIME_EPS => {
                        now = next;
                        continue;
                    }
                    _ => break,
                }
            };
            let finish = now + remaining / rate;
            if finish <= t1 + TIME_EPS {
                out.cpu_ms += remaining;
                out.completed += 1;
                self.waiting.pop_front();
                now = finish.min(t1);
                if now >= t1 {
                    break;
                }
            } else {
                let done = ((t1 - now) * rate).min(remaining);
                out.cpu_ms += done;
                *self.waiting.front_mut().expect("head exists") -= done;
                break;
            }
        }
        // Never report more than the cap allows, even with rounding.
        out.cpu_ms = out.cpu_ms.min(rate * dt);
        out.megabits = out.completed as f64 * self.schedule.megabits_per_request;
        self.served += out.completed;
        self.cpu_ms_total += out.cpu_ms;
        out
    }
}

/// Seeded per-node background draw standing in for system daemons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackgroundNoise {
    seed: u64,
    epoch: u64,
}

impl BackgroundNoise {
    pub fn new(seed: u64) -> Self {
        Self { seed, epoch: 0 }
    }

    /// Starts a fresh draw sequence; ticks are then counted from zero again.
    pub fn reset(&mut self) {
        self.epoch += 1;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Gaussian(mean, stddev) in millicores, clipped at zero. Depends only
    /// on (seed, epoch, node, tick).
    pub fn draw(&self, node: &NodeSpec, tick: u64) -> f64 {
        if node.background_cpu_stddev == 0.0 {
            return node.background_cpu_mean.max(0.0);
        }
        let mut rng = rng::stream(
            self.seed,
            &[rng::label_key(node.node_id.as_str()), self.epoch, tick],
        );
        let normal = Normal::new(node.background_cpu_mean, node.background_cpu_stddev)
            .expect("validated stddev");
        normal.sample(&mut rng).max(0.0)
    }
}

/// `min(capacity, pod demand + background)` in millicores.
pub fn node_cpu_used(
    state: &ClusterState,
    node_id: &NodeId,
    pod_demand_mc: f64,
    noise: &BackgroundNoise,
    tick: u64,
) -> Result<f64> {
    let node = state.node(node_id)?;
    let used = pod_demand_mc.max(0.0) + noise.draw(node, tick);
    Ok(used.min(f64::from(node.cpu_capacity)))
}
