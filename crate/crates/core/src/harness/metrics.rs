use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::Scenario;
use crate::error::{Error, Result};
use crate::faults::ResourceSnapshot;
use crate::quorum::Protocol;
use crate::sim::{Micros, NodeId};

/// Collapse flag threshold: a mean this many times the unattacked mean.
pub const COLLAPSE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceSample {
    pub at_us: Micros,
    pub snapshot: ResourceSnapshot,
}

/// Outcome of one (rate, repetition) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub protocol: Protocol,
    pub n: usize,
    pub scenario: Scenario,
    pub attack_rate_gbps: f64,
    pub repetition: usize,
    pub seed: u64,
    pub victim: NodeId,
    pub consensus_times_us: Vec<Micros>,
    pub requests_answered: usize,
    /// `None` when no request was answered within the horizon.
    pub mean_us: Option<f64>,
    pub median_us: Option<f64>,
    pub p99_us: Option<f64>,
    pub leader_changes: u64,
    pub msgs_sent: u64,
    pub msgs_delivered: u64,
    pub msgs_dropped: u64,
    pub resources: Vec<ResourceSample>,
    pub cpu_pct_peak: f64,
    pub ram_mb_peak: f64,
    pub bandwidth_gbps_min: f64,
}

pub fn mean(xs: &[Micros]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64)
}

pub fn median(xs: &[Micros]) -> Option<f64> {
    let mut v = xs.to_vec();
    v.sort_unstable();
    let k = v.len();
    match k {
        0 => None,
        _ if k % 2 == 1 => Some(v[k / 2] as f64),
        _ => Some((v[k / 2 - 1] + v[k / 2]) as f64 / 2.0),
    }
}

/// Nearest-rank percentile, `p` in (0, 100].
pub fn percentile(xs: &[Micros], p: f64) -> Option<f64> {
    let mut v = xs.to_vec();
    v.sort_unstable();
    if v.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1] as f64)
}

/// Per (protocol, n, scenario, rate) averages over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub protocol: Protocol,
    pub n: usize,
    pub scenario: Scenario,
    pub attack_rate_gbps: f64,
    pub repetitions: usize,
    /// Mean over every answered request of every repetition; `None` if
    /// nothing was answered.
    pub mean_us: Option<f64>,
    /// Repetitions that answered no request at all.
    pub silent_repetitions: usize,
    pub leader_changes_min: u64,
    pub leader_changes_mean: f64,
    pub cpu_pct_peak: f64,
    pub ram_mb_peak: f64,
    pub bandwidth_gbps_min: f64,
}

type GroupKey = (Protocol, usize, Scenario, u64);

fn key(r: &MetricsRecord) -> GroupKey {
    (r.protocol, r.n, r.scenario, r.attack_rate_gbps.to_bits())
}

pub fn aggregate(records: &[MetricsRecord]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<GroupKey, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(key(r)).or_default().push(r);
    }
    let mut out: Vec<Aggregate> = groups
        .into_values()
        .map(|rs| {
            let k = rs.len() as f64;
            let answered: usize = rs.iter().map(|r| r.requests_answered).sum();
            let total: f64 = rs.iter().flat_map(|r| &r.consensus_times_us).map(|&t| t as f64).sum();
            let avg = |f: fn(&MetricsRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / k;
            Aggregate {
                protocol: rs[0].protocol,
                n: rs[0].n,
                scenario: rs[0].scenario,
                attack_rate_gbps: rs[0].attack_rate_gbps,
                repetitions: rs.len(),
                mean_us: (answered > 0).then(|| total / answered as f64),
                silent_repetitions: rs.iter().filter(|r| r.requests_answered == 0).count(),
                leader_changes_min: rs.iter().map(|r| r.leader_changes).min().unwrap_or(0),
                leader_changes_mean: avg(|r| r.leader_changes as f64),
                cpu_pct_peak: avg(|r| r.cpu_pct_peak),
                ram_mb_peak: avg(|r| r.ram_mb_peak),
                bandwidth_gbps_min: avg(|r| r.bandwidth_gbps_min),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        (a.protocol, a.n, a.scenario).cmp(&(b.protocol, b.n, b.scenario)).then(a.attack_rate_gbps.total_cmp(&b.attack_rate_gbps))
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub attack_rate_gbps: f64,
    pub raft_mean_us: Option<f64>,
    pub bft_mean_us: Option<f64>,
    /// Raft mean over BFT mean; below 1 means Raft is faster.
    pub ratio: Option<f64>,
    pub raft_leader_changes: f64,
    pub bft_leader_changes: f64,
    pub raft_collapsed: bool,
    pub bft_collapsed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub points: Vec<RatePoint>,
}

fn collapsed(mean: Option<f64>, baseline: Option<f64>) -> bool {
    match (mean, baseline) {
        (None, _) => true,
        (Some(m), Some(b)) => m > COLLAPSE_FACTOR * b,
        (Some(_), None) => false,
    }
}

/// Line up Raft and BFT aggregates rate by rate. Both protocols must cover
/// the same rates for every cluster size present.
pub fn summarize(records: &[MetricsRecord]) -> Result<ComparisonReport> {
    if records.is_empty() {
        return Err(Error::ReportAlignment("no records to summarize".into()));
    }
    let aggs = aggregate(records);
    let mut by_n: BTreeMap<usize, (Vec<&Aggregate>, Vec<&Aggregate>)> = BTreeMap::new();
    for a in &aggs {
        let slot = by_n.entry(a.n).or_default();
        match a.protocol {
            Protocol::Raft => slot.0.push(a),
            Protocol::Bft => slot.1.push(a),
        }
    }
    let mut points = Vec::new();
    for (n, (raft, bft)) in by_n {
        let grid = |xs: &[&Aggregate]| xs.iter().map(|a| a.attack_rate_gbps.to_bits()).collect::<Vec<_>>();
        if raft.is_empty() || bft.is_empty() {
            return Err(Error::ReportAlignment(format!("n={n} has records for only one protocol")));
        }
        if grid(&raft) != grid(&bft) {
            return Err(Error::ReportAlignment(format!("n={n}: raft and bft were run at different attack rates")));
        }
        if raft.windows(2).any(|w| w[0].attack_rate_gbps == w[1].attack_rate_gbps)
            || bft.windows(2).any(|w| w[0].attack_rate_gbps == w[1].attack_rate_gbps)
        {
            return Err(Error::ReportAlignment(format!("n={n}: records mix several scenarios at one rate")));
        }
        let (raft_base, bft_base) = (raft[0].mean_us, bft[0].mean_us);
        for (r, b) in raft.iter().zip(&bft) {
            points.push(RatePoint {
                n,
                attack_rate_gbps: r.attack_rate_gbps,
                raft_mean_us: r.mean_us,
                bft_mean_us: b.mean_us,
                ratio: r.mean_us.zip(b.mean_us).map(|(x, y)| x / y),
                raft_leader_changes: r.leader_changes_mean,
                bft_leader_changes: b.leader_changes_mean,
                raft_collapsed: collapsed(r.mean_us, raft_base),
                bft_collapsed: collapsed(b.mean_us, bft_base),
            });
        }
    }
    Ok(ComparisonReport { points })
}
