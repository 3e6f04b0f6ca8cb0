//! Fault taxonomy and the victim load model.
//!
//! Crashes are fail-stop. The two DDoS-style faults are modelled at the load
//! level rather than per packet: attack rate in Gbps maps to a processing
//! slowdown, and above the saturation rate a flooded node also loses a share
//! of its inbound traffic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Micros, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Crash,
    CpuLoad,
    NetworkFlooding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub target: NodeId,
    pub rate_gbps: f64,
    pub start_us: Micros,
    /// `None` keeps the fault active to the end of the run. Crashes are
    /// always permanent.
    pub stop_us: Option<Micros>,
}

impl FaultSpec {
    pub fn crash(target: NodeId, at: Micros) -> Self {
        Self { kind: FaultKind::Crash, target, rate_gbps: 0.0, start_us: at, stop_us: None }
    }

    pub fn load(kind: FaultKind, target: NodeId, rate_gbps: f64, start_us: Micros, stop_us: Option<Micros>) -> Self {
        Self { kind, target, rate_gbps, start_us, stop_us }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rate_gbps.is_finite() || self.rate_gbps < 0.0 {
            return Err(Error::InvalidFault(format!("attack rate {} must be a non-negative number", self.rate_gbps)));
        }
        match (self.kind, self.stop_us) {
            (FaultKind::Crash, Some(_)) => Err(Error::InvalidFault("a crash cannot be stopped".into())),
            (_, Some(stop)) if stop <= self.start_us => {
                Err(Error::InvalidFault(format!("fault window [{}, {}) is empty", self.start_us, stop)))
            }
            _ => Ok(()),
        }
    }
}

/// Maps attack rate to victim slowdown and loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadModel {
    /// Rate at which the victim collapses.
    pub saturation_gbps: f64,
    /// Slowdown slope per Gbps below saturation.
    pub base_delay_factor: f64,
    /// Inbound loss probability of a flooded victim above saturation.
    pub post_saturation_drop: f64,
    /// Extra slowdown multiplier applied from saturation upwards.
    pub post_saturation_delay_factor: f64,
    pub resources: ResourceModel,
}

impl Default for LoadModel {
    fn default() -> Self {
        Self {
            saturation_gbps: 4.25,
            base_delay_factor: 0.05,
            post_saturation_drop: 0.7,
            post_saturation_delay_factor: 1.1,
            resources: ResourceModel::default(),
        }
    }
}

impl LoadModel {
    /// Default model for an `n`-master cluster: larger clusters collapse at
    /// a lower rate (4.1 Gbps from seven masters up, 4.25 below).
    pub fn for_cluster(n: usize) -> Self {
        let saturation_gbps = if n >= 7 { 4.1 } else { 4.25 };
        Self { saturation_gbps, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::ConfigRejected(format!("load model: {what}")));
        if self.saturation_gbps.is_nan() || self.saturation_gbps <= 0.0 {
            return bad("saturation must be positive");
        }
        if !(0.0..=1.0).contains(&self.post_saturation_drop) {
            return bad("drop probability outside [0,1]");
        }
        if self.base_delay_factor.is_nan()
            || self.base_delay_factor < 0.0
            || self.post_saturation_delay_factor.is_nan()
            || self.post_saturation_delay_factor < 1.0
        {
            return bad("delay factors must keep slowdown >= 1");
        }
        self.resources.validate()
    }

    pub fn is_saturated(&self, rate_gbps: f64) -> bool {
        rate_gbps >= self.saturation_gbps
    }

    /// Inbound loss probability caused by a fault of `kind` at `rate`.
    pub fn drop_probability(&self, kind: FaultKind, rate_gbps: f64) -> f64 {
        match kind {
            FaultKind::NetworkFlooding if self.is_saturated(rate_gbps) => self.post_saturation_drop,
            _ => 0.0,
        }
    }
}

/// Processing-time multiplier at a given attack rate. Linear below
/// saturation, with a jump by `post_saturation_delay_factor` at saturation.
pub fn effective_delay_factor(model: &LoadModel, rate_gbps: f64) -> Result<f64> {
    if !rate_gbps.is_finite() || rate_gbps < 0.0 {
        return Err(Error::InvalidFault(format!("attack rate {rate_gbps} must be non-negative")));
    }
    let linear = 1.0 + model.base_delay_factor * rate_gbps;
    Ok(if model.is_saturated(rate_gbps) { model.post_saturation_delay_factor * linear } else { linear })
}

/// Parameters turning attack rate and protocol traffic into a victim
/// resource snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResourceModel {
    pub link_capacity_gbps: f64,
    pub idle_cpu_pct: f64,
    /// CPU share consumed per Gbps of attack traffic below saturation.
    pub attack_cpu_pct_per_gbps: f64,
    /// CPU share consumed per thousand protocol messages per second.
    pub cpu_pct_per_kmsg: f64,
    pub baseline_ram_mb: f64,
    /// Socket buffers held per Gbps of attack traffic.
    pub ram_mb_per_gbps: f64,
    /// Memory per queued, not yet processed, protocol message.
    pub ram_mb_per_queued_msg: f64,
    /// Nominal service time of one protocol message at the victim.
    pub service_us: f64,
}

impl Default for ResourceModel {
    fn default() -> Self {
        Self {
            link_capacity_gbps: 6.0,
            idle_cpu_pct: 5.0,
            attack_cpu_pct_per_gbps: 12.0,
            cpu_pct_per_kmsg: 1.5,
            baseline_ram_mb: 600.0,
            ram_mb_per_gbps: 40.0,
            ram_mb_per_queued_msg: 0.5,
            service_us: 150.0,
        }
    }
}

impl ResourceModel {
    fn validate(&self) -> Result<()> {
        let fields = [
            self.link_capacity_gbps,
            self.idle_cpu_pct,
            self.attack_cpu_pct_per_gbps,
            self.cpu_pct_per_kmsg,
            self.baseline_ram_mb,
            self.ram_mb_per_gbps,
            self.ram_mb_per_queued_msg,
            self.service_us,
        ];
        if fields.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::ConfigRejected("resource model parameters must be non-negative".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceSnapshot {
    pub cpu_pct: f64,
    pub ram_mb: f64,
    pub bandwidth_gbps: f64,
}

/// Victim resource use under an attack of `rate_gbps` while handling
/// `traffic_msgs_per_s` protocol messages.
///
/// CPU is idle share plus attack share plus per-message cost, clamped at
/// 100%; a saturated victim is pegged at 100% whatever its protocol does.
/// RAM is a baseline plus attack buffers plus the protocol messages queued
/// at the victim (Little's law with the slowed-down service time).
pub fn resources_under_attack(model: &LoadModel, rate_gbps: f64, traffic_msgs_per_s: f64) -> ResourceSnapshot {
    let r = &model.resources;
    let rate = rate_gbps.max(0.0);
    let traffic = traffic_msgs_per_s.max(0.0);
    let factor = effective_delay_factor(model, rate).unwrap_or(1.0);

    let cpu = if model.is_saturated(rate) {
        100.0
    } else {
        r.idle_cpu_pct + r.attack_cpu_pct_per_gbps * rate + r.cpu_pct_per_kmsg * traffic / 1000.0
    };
    let queued = traffic * r.service_us * factor / 1e6;
    ResourceSnapshot {
        cpu_pct: cpu.clamp(0.0, 100.0),
        ram_mb: r.baseline_ram_mb + r.ram_mb_per_gbps * rate + r.ram_mb_per_queued_msg * queued,
        bandwidth_gbps: (r.link_capacity_gbps - rate).clamp(0.0, r.link_capacity_gbps),
    }
}
