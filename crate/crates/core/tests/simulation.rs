//! End-to-end properties of the engine with real protocols on top.

use std::collections::BTreeSet;

use replsim::bft::{BftConfig, BftMsg, BftNode};
use replsim::faults::FaultSpec;
use replsim::harness::{self, ClosedLoopClient, Scenario, ScenarioConfig, Targeting, DEFAULT_COSTS, DEFAULT_RETRANSMIT_US};
use replsim::parallel::Execution;
use replsim::raft::{RaftConfig, RaftMsg, RaftNode, Role, VoteResponse};
use replsim::rng;
use replsim::sim::{
    Actor, Addr, ChannelKind, ClientId, Env, LatencyModel, Micros, NodeId, Observation, Payload, RequestId, SimConfig, Simulation, TimerTag,
};
use replsim::Protocol;

/// Seed derivation restated from its definition: SplitMix64 over the root,
/// the FNV-1a hash of the label, and the mixed index.
fn reference_seed(root: u64, label: &str, index: u64) -> u64 {
    fn mix(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9e3779b97f4a7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
        x ^ (x >> 31)
    }
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    mix(root ^ h ^ mix(index))
}

#[test]
fn golden_first_latency_for_seed_42() {
    assert_eq!(reference_seed(42, "net-node", 0), 11_444_537_551_661_609_433);
    assert_eq!(rng::derive_seed(42, "net-node", 0), reference_seed(42, "net-node", 0));

    let cfg = SimConfig {
        seed: 42,
        latency: LatencyModel { min_latency_us: 50, max_latency_us: 200, drop_probability: 0.0 },
        trace: true,
        ..SimConfig::default()
    };
    let nodes: Vec<RaftNode> = (0..2).map(|i| RaftNode::new(NodeId(i), 2, RaftConfig::default()).unwrap()).collect();
    let mut sim: Simulation<RaftMsg, RaftNode, ClosedLoopClient> = Simulation::new(cfg, nodes, Vec::new()).unwrap();
    let vote = RaftMsg::Vote(VoteResponse { term: 0, granted: false });
    sim.send(Addr::Node(NodeId(0)), Addr::Node(NodeId(1)), vote).unwrap();
    sim.run_until(1_000);
    let first = sim.trace().unwrap().iter().find(|e| e.event == "deliver").unwrap();
    // Frozen from the first draw of node 0's network stream.
    assert_eq!(first.at, 197);
}

fn bft_sim(seed: u64, trace: bool) -> Simulation<BftMsg, BftNode, ClosedLoopClient> {
    let cfg = SimConfig {
        seed,
        trace,
        costs: DEFAULT_COSTS,
        channel: ChannelKind::Reliable { retransmit_us: DEFAULT_RETRANSMIT_US },
        ..SimConfig::default()
    };
    let nodes = (0..4).map(|i| BftNode::new(NodeId(i), 4, BftConfig::default()).unwrap()).collect();
    let clients = (0..2).map(|c| ClosedLoopClient::new(ClientId(c), Targeting::Broadcast { n: 4, needed: 2 }, 250_000)).collect();
    let mut sim = Simulation::new(cfg, nodes, clients).unwrap();
    sim.apply_fault(FaultSpec::crash(NodeId(0), 300_000)).unwrap();
    sim.start_clients_at(0).unwrap();
    sim
}

#[test]
fn identical_seeds_give_identical_traces() {
    let mut a = bft_sim(11, true);
    let mut b = bft_sim(11, true);
    a.run_until(1_000_000);
    b.run_until(1_000_000);
    assert!(a.trace().unwrap().len() > 1_000);
    assert_eq!(a.trace(), b.trace());
    assert_eq!(a.trace_digest(), b.trace_digest());
    assert_eq!(a.observations(), b.observations());

    let mut c = bft_sim(12, false);
    c.run_until(1_000_000);
    assert_ne!(a.trace_digest(), c.trace_digest());
}

#[test]
fn tracing_does_not_change_the_run() {
    let mut a = bft_sim(5, true);
    let mut b = bft_sim(5, false);
    a.run_until(800_000);
    b.run_until(800_000);
    assert_eq!(a.trace_digest(), b.trace_digest());
    assert!(b.trace().is_none());
}

#[test]
fn message_accounting_balances() {
    let mut sim = bft_sim(3, false);
    sim.run_until(2_000_000);
    let live = sim.stats();
    assert!(live.sent >= live.delivered + live.dropped);
    let done = sim.finish();
    assert_eq!(done.sent, done.delivered + done.dropped);
}

/// Wraps a client and checks, after every callback, that it never has more
/// than one unanswered request.
struct Audited<M> {
    inner: ClosedLoopClient,
    request_of: fn(&M) -> Option<RequestId>,
    issued: BTreeSet<RequestId>,
    transmissions: u64,
}

impl<M: Payload> Audited<M> {
    fn new(inner: ClosedLoopClient, request_of: fn(&M) -> Option<RequestId>) -> Self {
        Self { inner, request_of, issued: BTreeSet::new(), transmissions: 0 }
    }

    fn check(&self) {
        let answered = self.inner.latencies().len();
        assert!(self.inner.in_flight() <= 1);
        assert_eq!(self.issued.len(), answered + self.inner.in_flight(), "{} issued, {answered} answered", self.issued.len());
    }

    fn with_spy<E: Env<M>>(&mut self, env: &mut E, f: impl FnOnce(&mut ClosedLoopClient, &mut RecordingSends<'_, E, M>)) {
        let mut spy = RecordingSends { env, request_of: self.request_of, sent: Vec::new() };
        f(&mut self.inner, &mut spy);
        self.transmissions += spy.sent.len() as u64;
        self.issued.extend(spy.sent);
        self.check();
    }
}

/// An env that forwards everything and notes which requests went out.
struct RecordingSends<'a, E, M> {
    env: &'a mut E,
    request_of: fn(&M) -> Option<RequestId>,
    sent: Vec<RequestId>,
}

impl<M, E: Env<M>> Env<M> for RecordingSends<'_, E, M> {
    fn now(&self) -> Micros {
        self.env.now()
    }
    fn me(&self) -> Addr {
        self.env.me()
    }
    fn rng(&mut self) -> &mut rng::SimRng {
        self.env.rng()
    }
    fn send(&mut self, to: Addr, msg: M) {
        if let Some(id) = (self.request_of)(&msg) {
            self.sent.push(id);
        }
        self.env.send(to, msg);
    }
    fn set_timer(&mut self, tag: TimerTag, delay: Micros) {
        self.env.set_timer(tag, delay);
    }
    fn cancel_timer(&mut self, tag: TimerTag) {
        self.env.cancel_timer(tag);
    }
    fn observe(&mut self, obs: Observation) {
        self.env.observe(obs);
    }
}

impl<M: Payload> Actor<M> for Audited<M> {
    fn on_start<E: Env<M>>(&mut self, env: &mut E) {
        self.with_spy(env, |c, spy| c.on_start(spy));
    }

    fn on_message<E: Env<M>>(&mut self, env: &mut E, from: Addr, msg: M) {
        self.with_spy(env, |c, spy| c.on_message(spy, from, msg));
    }

    fn on_timer<E: Env<M>>(&mut self, env: &mut E, tag: TimerTag) {
        self.with_spy(env, |c, spy| c.on_timer(spy, tag));
    }
}

#[test]
fn clients_stay_closed_loop_through_a_leader_crash() {
    let request_of = |m: &RaftMsg| match m {
        RaftMsg::Request(r) => Some(r.id),
        _ => None,
    };
    let cfg = SimConfig { seed: 9, costs: DEFAULT_COSTS, ..SimConfig::default() };
    let nodes = (0..5).map(|i| RaftNode::new(NodeId(i), 5, RaftConfig::default()).unwrap()).collect();
    let clients = (0..3)
        .map(|c| Audited::new(ClosedLoopClient::new(ClientId(c), Targeting::Leader { n: 5, hint: NodeId(0) }, 250_000), request_of))
        .collect();
    let mut sim: Simulation<RaftMsg, RaftNode, Audited<RaftMsg>> = Simulation::new(cfg, nodes, clients).unwrap();
    sim.start_clients_at(0).unwrap();
    sim.run_until(1_000_000);
    let leader = sim.nodes().iter().find(|r| r.role() == Role::Leader).map(RaftNode::id).unwrap();
    let before: Vec<usize> = sim.clients().iter().map(|c| c.inner.latencies().len()).collect();
    sim.apply_fault(FaultSpec::crash(leader, 1_000_000)).unwrap();
    sim.run_until(4_000_000);

    for (c, before) in sim.clients().iter().zip(before) {
        assert!(c.inner.latencies().len() > before + 100, "client stalled after the crash");
        assert!(c.transmissions >= c.issued.len() as u64);
        let seqs: Vec<u64> = c.issued.iter().map(|id| id.seq).collect();
        assert_eq!(seqs, (1..=seqs.len() as u64).collect::<Vec<_>>());
    }
}

#[test]
fn broadcast_clients_stay_closed_loop() {
    let request_of = |m: &BftMsg| match m {
        BftMsg::Request(r) => Some(r.id),
        _ => None,
    };
    let cfg = SimConfig {
        seed: 4,
        costs: DEFAULT_COSTS,
        channel: ChannelKind::Reliable { retransmit_us: DEFAULT_RETRANSMIT_US },
        ..SimConfig::default()
    };
    let nodes = (0..4).map(|i| BftNode::new(NodeId(i), 4, BftConfig::default()).unwrap()).collect();
    let clients = (0..2)
        .map(|c| Audited::new(ClosedLoopClient::new(ClientId(c), Targeting::Broadcast { n: 4, needed: 2 }, 250_000), request_of))
        .collect();
    let mut sim: Simulation<BftMsg, BftNode, Audited<BftMsg>> = Simulation::new(cfg, nodes, clients).unwrap();
    sim.start_clients_at(0).unwrap();
    sim.run_until(2_000_000);
    for c in sim.clients() {
        assert!(c.inner.latencies().len() > 100);
        // Broadcast clients send each request once to every node.
        assert_eq!(c.transmissions, 4 * c.issued.len() as u64);
    }
}

#[test]
fn parallel_and_sequential_sweeps_agree() {
    let cfg = ScenarioConfig {
        attack_rates_gbps: vec![0.0, 5.0],
        repetitions: 3,
        horizon_us: 2_000_000,
        ..ScenarioConfig::new(Protocol::Raft, 5, Scenario::AtThreshold)
    };
    let a = harness::run_scenario_with(&cfg, Execution::Auto).unwrap();
    let b = harness::run_scenario_with(&cfg, Execution::Sequential).unwrap();
    assert_eq!(a, b);
    assert_eq!(harness::to_csv_string(&a), harness::to_csv_string(&b));
}

#[test]
fn rates_share_the_repetition_seed() {
    let cfg = ScenarioConfig {
        attack_rates_gbps: vec![0.0, 2.0],
        repetitions: 2,
        horizon_us: 1_500_000,
        ..ScenarioConfig::new(Protocol::Bft, 4, Scenario::UnderThreshold)
    };
    let records = harness::run_scenario(&cfg).unwrap();
    assert_eq!(records.len(), 4);
    for rep in 0..2 {
        let seeds: BTreeSet<u64> = records.iter().filter(|r| r.repetition == rep).map(|r| r.seed).collect();
        assert_eq!(seeds.len(), 1);
    }
}
