use super::client::{ClosedLoopClient, Targeting};
use super::config::ScenarioConfig;
use super::metrics::{self, MetricsRecord, ResourceSample};
use crate::bft::{BftMsg, BftNode};
use crate::error::Result;
use crate::faults::{resources_under_attack, FaultSpec};
use crate::parallel::{self, Execution};
use crate::quorum::{self, Protocol};
use crate::raft::{RaftMsg, RaftNode, Role};
use crate::rng;
use crate::sim::{Actor, ClientId, NodeId, Payload, SimConfig, Simulation};

/// What the runner needs to know about a protocol beyond the actor
/// interface.
trait Replica<M>: Actor<M> + Sized {
    fn build(cfg: &ScenarioConfig) -> Result<Vec<Self>>;
    fn targeting(cfg: &ScenarioConfig) -> Result<Targeting>;
    /// The node currently acting as leader, if any live node claims it.
    fn leader(nodes: &[Self], alive: &dyn Fn(NodeId) -> bool) -> Option<NodeId>;
    /// Leadership epoch: the Raft term or the BFT regency.
    fn epoch(&self) -> u64;
}

impl Replica<RaftMsg> for RaftNode {
    fn build(cfg: &ScenarioConfig) -> Result<Vec<Self>> {
        (0..cfg.n).map(|i| RaftNode::new(NodeId(i), cfg.n, cfg.raft)).collect()
    }

    fn targeting(cfg: &ScenarioConfig) -> Result<Targeting> {
        Ok(Targeting::Leader { n: cfg.n, hint: NodeId(0) })
    }

    fn leader(nodes: &[Self], alive: &dyn Fn(NodeId) -> bool) -> Option<NodeId> {
        nodes.iter().filter(|r| r.role() == Role::Leader && alive(r.id())).max_by_key(|r| r.current_term()).map(RaftNode::id)
    }

    fn epoch(&self) -> u64 {
        self.current_term()
    }
}

impl Replica<BftMsg> for BftNode {
    fn build(cfg: &ScenarioConfig) -> Result<Vec<Self>> {
        (0..cfg.n).map(|i| BftNode::new(NodeId(i), cfg.n, cfg.bft)).collect()
    }

    fn targeting(cfg: &ScenarioConfig) -> Result<Targeting> {
        Ok(Targeting::Broadcast { n: cfg.n, needed: quorum::byz_tolerance(cfg.n)? + 1 })
    }

    fn leader(nodes: &[Self], alive: &dyn Fn(NodeId) -> bool) -> Option<NodeId> {
        let regency = nodes.iter().filter(|b| alive(b.id())).map(BftNode::regency).max()?;
        let leader = NodeId((regency % nodes.len() as u64) as usize);
        alive(leader).then_some(leader)
    }

    fn epoch(&self) -> u64 {
        self.regency()
    }
}

/// Seed of one repetition. The same across attack rates, so every rate
/// sees the same latency draws and election timeouts up to the attack.
pub fn repetition_seed(root: u64, repetition: usize) -> u64 {
    rng::derive_seed(root, "rep", repetition as u64)
}

/// Run every (rate, repetition) pair of the sweep.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Vec<MetricsRecord>> {
    run_scenario_with(cfg, Execution::Auto)
}

pub fn run_scenario_with(cfg: &ScenarioConfig, exec: Execution) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let jobs: Vec<(f64, usize)> = cfg.attack_rates_gbps.iter().flat_map(|&rate| (0..cfg.repetitions).map(move |rep| (rate, rep))).collect();
    let mut records = parallel::map(exec, jobs, |(rate, rep)| run_once(cfg, rate, rep)).into_iter().collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.attack_rate_gbps.total_cmp(&b.attack_rate_gbps).then(a.repetition.cmp(&b.repetition)));
    Ok(records)
}

/// One simulation: fresh cluster, pre-crashes, warmup, attack on the victim,
/// closed-loop clients until the horizon.
pub fn run_once(cfg: &ScenarioConfig, rate: f64, repetition: usize) -> Result<MetricsRecord> {
    match cfg.protocol {
        Protocol::Raft => drive::<RaftMsg, RaftNode>(cfg, rate, repetition),
        Protocol::Bft => drive::<BftMsg, BftNode>(cfg, rate, repetition),
    }
}

fn drive<M, N>(cfg: &ScenarioConfig, rate: f64, repetition: usize) -> Result<MetricsRecord>
where
    M: Payload,
    N: Replica<M>,
{
    cfg.validate()?;
    let seed = repetition_seed(cfg.seed, repetition);
    let load = cfg.load_model();
    let sim_cfg =
        SimConfig { seed, latency: cfg.latency, costs: cfg.costs, channel: cfg.channel(), load, allow_loopback: false, trace: false };
    let targeting = N::targeting(cfg)?;
    let clients = (0..cfg.clients).map(|c| ClosedLoopClient::new(ClientId(c), targeting, cfg.client_retry_us)).collect();
    let mut sim: Simulation<M, N, ClosedLoopClient> = Simulation::new(sim_cfg, N::build(cfg)?, clients)?;

    let crashed = cfg.crashed_nodes()?;
    for &node in &crashed {
        sim.apply_fault(FaultSpec::crash(node, 0))?;
    }

    let warmup = cfg.warmup_us;
    sim.run_until(warmup);
    let alive = |id: NodeId| !crashed.contains(&id);
    let max_epoch = |nodes: &[N]| nodes.iter().enumerate().filter(|(i, _)| alive(NodeId(*i))).map(|(_, r)| r.epoch()).max().unwrap_or(0);
    let epoch_at_warmup = max_epoch(sim.nodes());
    let leader = N::leader(sim.nodes(), &alive);
    let victim = cfg.victim.or(leader).unwrap_or_else(|| (0..cfg.n).map(NodeId).find(|&id| alive(id)).unwrap_or(NodeId(0)));
    if rate > 0.0 {
        sim.apply_fault(FaultSpec::load(cfg.attack_kind(), victim, rate, warmup, None))?;
    }
    sim.start_clients_at(warmup)?;

    let mut samples = Vec::new();
    let mut t = warmup;
    let mut last = sim.traffic(victim);
    while t < cfg.horizon_us {
        let next = (t + cfg.sample_interval_us).min(cfg.horizon_us);
        sim.run_until(next);
        let now = sim.traffic(victim);
        let moved = (now.received + now.sent) - (last.received + last.sent);
        let per_s = moved as f64 * 1e6 / (next - t) as f64;
        samples.push(ResourceSample { at_us: next, snapshot: resources_under_attack(&load, rate, per_s) });
        last = now;
        t = next;
    }
    let stats = sim.finish();

    // Every new term or regency means the previous leader was deposed or
    // suspected, whether or not a successor managed to get elected.
    let leader_changes = max_epoch(sim.nodes()) - epoch_at_warmup;

    let mut times = Vec::new();
    for c in sim.clients() {
        times.extend_from_slice(c.latencies());
    }
    let peak = |f: fn(&ResourceSample) -> f64| samples.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let cpu_pct_peak = peak(|s| s.snapshot.cpu_pct);
    let ram_mb_peak = peak(|s| s.snapshot.ram_mb);
    let bandwidth_gbps_min = samples.iter().map(|s| s.snapshot.bandwidth_gbps).fold(f64::INFINITY, f64::min);

    Ok(MetricsRecord {
        run_id: format!("{}-n{}-s{}-r{}-rep{}", cfg.protocol, cfg.n, cfg.scenario, rate, repetition),
        protocol: cfg.protocol,
        n: cfg.n,
        scenario: cfg.scenario,
        attack_rate_gbps: rate,
        repetition,
        seed,
        victim,
        requests_answered: times.len(),
        mean_us: metrics::mean(&times),
        median_us: metrics::median(&times),
        p99_us: metrics::percentile(&times, 99.0),
        consensus_times_us: times,
        leader_changes,
        msgs_sent: stats.sent,
        msgs_delivered: stats.delivered,
        msgs_dropped: stats.dropped,
        resources: samples,
        cpu_pct_peak,
        ram_mb_peak,
        bandwidth_gbps_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Scenario;

    fn short(protocol: Protocol, scenario: Scenario) -> ScenarioConfig {
        ScenarioConfig {
            attack_rates_gbps: vec![0.0],
            repetitions: 1,
            horizon_us: 1_500_000,
            warmup_us: 1_000_000,
            ..ScenarioConfig::new(protocol, 5, scenario)
        }
    }

    #[test]
    fn fault_free_runs_answer_requests() {
        for p in [Protocol::Raft, Protocol::Bft] {
            let r = run_once(&short(p, Scenario::UnderThreshold), 0.0, 0).unwrap();
            assert!(r.requests_answered > 50, "{p}: {} answered", r.requests_answered);
            assert_eq!(r.leader_changes, 0, "{p}");
            assert!(r.consensus_times_us.iter().all(|&t| t > 0));
            assert_eq!(r.msgs_sent, r.msgs_delivered + r.msgs_dropped);
        }
    }

    #[test]
    fn rate_zero_is_byte_identical_to_itself() {
        let cfg = short(Protocol::Bft, Scenario::AtThreshold);
        assert_eq!(run_once(&cfg, 0.0, 3).unwrap(), run_once(&cfg, 0.0, 3).unwrap());
    }

    #[test]
    fn repetitions_get_distinct_seeds() {
        assert_ne!(repetition_seed(1, 0), repetition_seed(1, 1));
    }
}
