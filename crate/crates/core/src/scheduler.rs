//! Pod placement on minions: predicate filtering, then weighted priority
//! scoring with uniform random tie-breaking.
//!
//! Priority functions, each bounded to `[0, 10]` and evaluated as if the pod
//! were already placed on the minion:
//!
//! * least requested: `10 * mean over {cpu, ram} of (capacity - requested) / capacity`
//! * balanced allocation: `10 - 10 * |cpu_fraction - ram_fraction|`
//! * spread: `10 * (1 - same_service_pods / max_over_candidates)`, 10 when the max is 0
//! * anti-affinity: the spread formula over groups of minions sharing the
//!   value of the pod's anti-affinity label; minions without the label score 0
//! * node label: 10 if the minion carries the pod's preferred label, else 0

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Scores within this distance of the best count as tied.
pub const TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostedPod {
    pub service_id: String,
    pub pod_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinionSpec {
    pub id: String,
    pub cpu_capacity: u64,
    pub ram_capacity: u64,
    pub storage_capacity: u64,
    pub cpu_allocated: u64,
    pub ram_allocated: u64,
    pub storage_allocated: u64,
    pub open_ports: BTreeSet<u16>,
    pub labels: BTreeMap<String, String>,
    pub zone: String,
    pub hosted_pods: Vec<HostedPod>,
}

impl MinionSpec {
    pub fn new(id: impl Into<String>, cpu: u64, ram: u64, storage: u64) -> Self {
        Self { id: id.into(), cpu_capacity: cpu, ram_capacity: ram, storage_capacity: storage, ..Self::default() }
    }

    pub fn free_cpu(&self) -> u64 {
        self.cpu_capacity.saturating_sub(self.cpu_allocated)
    }

    pub fn free_ram(&self) -> u64 {
        self.ram_capacity.saturating_sub(self.ram_allocated)
    }

    pub fn free_storage(&self) -> u64 {
        self.storage_capacity.saturating_sub(self.storage_allocated)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cpu_allocated > self.cpu_capacity
            || self.ram_allocated > self.ram_capacity
            || self.storage_allocated > self.storage_capacity
        {
            return Err(Error::ConfigRejected(format!("minion {} is allocated beyond its capacity", self.id)));
        }
        Ok(())
    }

    fn service_pods(&self, service: &str) -> usize {
        self.hosted_pods.iter().filter(|p| p.service_id == service).count()
    }
}

/// A pod `(t, m, p, v)`: CPU, RAM, host port and storage demand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PodSpec {
    pub id: String,
    pub t: u64,
    pub m: u64,
    pub p: u16,
    pub v: u64,
    pub selector: BTreeMap<String, String>,
    pub service_id: String,
    pub anti_affinity_label: Option<String>,
    pub preferred_label: Option<String>,
    /// When set, the volume must live in this zone.
    pub zone: Option<String>,
}

impl Default for PodSpec {
    fn default() -> Self {
        Self {
            id: String::new(),
            t: 0,
            m: 0,
            p: 8080,
            v: 0,
            selector: BTreeMap::new(),
            service_id: String::new(),
            anti_affinity_label: None,
            preferred_label: None,
            zone: None,
        }
    }
}

impl PodSpec {
    pub fn new(id: impl Into<String>, t: u64, m: u64, p: u16, v: u64) -> Self {
        Self { id: id.into(), t, m, p, v, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::ConfigRejected(format!("pod {} needs a port in 1..=65535", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorityWeights {
    pub balanced: f64,
    pub least_requested: f64,
    pub spread: f64,
    pub anti_affinity: f64,
    pub node_label: f64,
}

impl Default for PriorityWeights {
    fn default() -> Self {
        Self { balanced: 1.0, least_requested: 1.0, spread: 1.0, anti_affinity: 1.0, node_label: 1.0 }
    }
}

impl PriorityWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.balanced, self.least_requested, self.spread, self.anti_affinity, self.node_label]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            balanced: self.balanced * k,
            least_requested: self.least_requested * k,
            spread: self.spread * k,
            anti_affinity: self.anti_affinity * k,
            node_label: self.node_label * k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().all(|x| *x == 0.0) {
            return Err(Error::ConfigRejected(format!("weights must be non-negative with one positive, got {self:?}")));
        }
        Ok(())
    }
}

pub fn fits_resources(pod: &PodSpec, m: &MinionSpec) -> bool {
    m.free_cpu() >= pod.t && m.free_ram() >= pod.m
}

pub fn fits_host_ports(pod: &PodSpec, m: &MinionSpec) -> bool {
    !m.open_ports.contains(&pod.p)
}

pub fn no_volume_zone_conflict(pod: &PodSpec, m: &MinionSpec) -> bool {
    m.free_storage() >= pod.v && pod.zone.as_ref().is_none_or(|z| *z == m.zone)
}

pub fn matches_node_selector(pod: &PodSpec, m: &MinionSpec) -> bool {
    pod.selector.iter().all(|(k, v)| m.labels.get(k) == Some(v))
}

/// Indices of the minions passing every predicate, in input order.
pub fn filter(pod: &PodSpec, minions: &[MinionSpec]) -> Vec<usize> {
    minions
        .iter()
        .enumerate()
        .filter(|(_, m)| {
            fits_resources(pod, m) && fits_host_ports(pod, m) && no_volume_zone_conflict(pod, m) && matches_node_selector(pod, m)
        })
        .map(|(i, _)| i)
        .collect()
}

fn fraction(requested: u64, capacity: u64) -> f64 {
    if capacity == 0 {
        1.0
    } else {
        (requested as f64 / capacity as f64).min(1.0)
    }
}

pub fn least_requested(pod: &PodSpec, m: &MinionSpec) -> f64 {
    let cpu = 1.0 - fraction(m.cpu_allocated + pod.t, m.cpu_capacity);
    let ram = 1.0 - fraction(m.ram_allocated + pod.m, m.ram_capacity);
    10.0 * (cpu + ram) / 2.0
}

pub fn balanced_allocation(pod: &PodSpec, m: &MinionSpec) -> f64 {
    let cpu = fraction(m.cpu_allocated + pod.t, m.cpu_capacity);
    let ram = fraction(m.ram_allocated + pod.m, m.ram_capacity);
    (10.0 - 10.0 * (cpu - ram).abs()).clamp(0.0, 10.0)
}

fn spread_score(count: usize, max: usize) -> f64 {
    if max == 0 {
        10.0
    } else {
        10.0 * (1.0 - count as f64 / max as f64)
    }
}

/// Per-candidate scores in [`PriorityWeights::as_array`] order.
pub fn priority_scores(pod: &PodSpec, minions: &[MinionSpec], candidates: &[usize]) -> Vec<[f64; 5]> {
    let same: Vec<usize> = candidates.iter().map(|&i| minions[i].service_pods(&pod.service_id)).collect();
    let max_same = same.iter().copied().max().unwrap_or(0);

    let group_of = |i: usize| pod.anti_affinity_label.as_ref().and_then(|l| minions[i].labels.get(l));
    let mut groups: BTreeMap<&String, usize> = BTreeMap::new();
    for &i in candidates {
        if let Some(g) = group_of(i) {
            *groups.entry(g).or_default() += minions[i].service_pods(&pod.service_id);
        }
    }
    let max_group = groups.values().copied().max().unwrap_or(0);

    candidates
        .iter()
        .zip(&same)
        .map(|(&i, &count)| {
            let m = &minions[i];
            let anti = match (&pod.anti_affinity_label, group_of(i)) {
                (None, _) => 10.0,
                (Some(_), None) => 0.0,
                (Some(_), Some(g)) => spread_score(groups[g], max_group),
            };
            let label = match &pod.preferred_label {
                Some(l) if m.labels.contains_key(l) => 10.0,
                _ => 0.0,
            };
            [balanced_allocation(pod, m), least_requested(pod, m), spread_score(count, max_same), anti, label]
        })
        .collect()
}

/// Weighted totals per candidate.
pub fn weighted_totals(pod: &PodSpec, minions: &[MinionSpec], candidates: &[usize], weights: &PriorityWeights) -> Vec<f64> {
    let w = weights.as_array();
    priority_scores(pod, minions, candidates).iter().map(|s| s.iter().zip(&w).map(|(a, b)| a * b).sum()).collect()
}

/// Candidates whose weighted total ties for the best.
pub fn argmax_set(pod: &PodSpec, minions: &[MinionSpec], candidates: &[usize], weights: &PriorityWeights) -> Vec<usize> {
    let totals = weighted_totals(pod, minions, candidates, weights);
    let best = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_EPSILON * best.abs().max(1.0);
    candidates.iter().zip(&totals).filter(|(_, t)| best - **t <= tol).map(|(&i, _)| i).collect()
}

/// Pick the best-scoring candidate, breaking ties uniformly at random.
pub fn rank<R: Rng + ?Sized>(
    pod: &PodSpec,
    minions: &[MinionSpec],
    candidates: &[usize],
    weights: &PriorityWeights,
    rng: &mut R,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Unschedulable(format!("no minion can host pod {}", pod.id)));
    }
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }
    let best = argmax_set(pod, minions, candidates, weights);
    Ok(best[rng.gen_range(0..best.len())])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Placement {
    Placed { pod: String, minion: String },
    Pending { pod: String, reason: String },
}

impl Placement {
    pub fn minion(&self) -> Option<&str> {
        match self {
            Placement::Placed { minion, .. } => Some(minion),
            Placement::Pending { .. } => None,
        }
    }
}

/// Filter, rank, and commit the pod's demands to the chosen minion.
pub fn place<R: Rng + ?Sized>(pod: &PodSpec, minions: &mut [MinionSpec], weights: &PriorityWeights, rng: &mut R) -> Placement {
    let candidates = filter(pod, minions);
    match rank(pod, minions, &candidates, weights, rng) {
        Ok(i) => {
            let m = &mut minions[i];
            m.cpu_allocated += pod.t;
            m.ram_allocated += pod.m;
            m.storage_allocated += pod.v;
            m.open_ports.insert(pod.p);
            m.hosted_pods.push(HostedPod { service_id: pod.service_id.clone(), pod_id: pod.id.clone() });
            Placement::Placed { pod: pod.id.clone(), minion: m.id.clone() }
        }
        Err(e) => Placement::Pending { pod: pod.id.clone(), reason: e.to_string() },
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSpec {
    pub weights: PriorityWeights,
    pub minions: Vec<MinionSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PodList {
    pub pods: Vec<PodSpec>,
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Export { path: path.to_path_buf(), source })?;
    toml::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.message().to_string() })
}

impl ClusterSpec {
    pub fn from_file(path: &Path) -> Result<Self> {
        let c: Self = load_toml(path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.minions.iter().try_for_each(MinionSpec::validate)
    }
}

impl PodList {
    pub fn from_file(path: &Path) -> Result<Self> {
        let p: Self = load_toml(path)?;
        p.pods.iter().try_for_each(PodSpec::validate)?;
        Ok(p)
    }
}

/// Place pods in order on the cluster, returning one record per pod.
pub fn schedule_all(cluster: &mut ClusterSpec, pods: &[PodSpec], seed: u64) -> Vec<Placement> {
    let mut rng = rng::stream(seed, "scheduler", 0);
    pods.iter().map(|p| place(p, &mut cluster.minions, &cluster.weights, &mut rng)).collect()
}
