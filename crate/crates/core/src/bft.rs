//! Byzantine-fault-tolerant replication in the PROPOSE / WRITE / ACCEPT
//! style: the regency leader proposes one batch per consensus instance,
//! replicas echo its digest in WRITE messages, a WRITE quorum triggers
//! ACCEPT, and an ACCEPT quorum decides.
//!
//! Leader change is a small regency protocol. A node whose requests stall
//! votes STOP for the next regency, joins a change once `f'+1` others have,
//! and installs it at a full quorum. The new leader then gathers STOP-DATA
//! from a quorum and re-proposes the highest-regency value any of them had
//! accepted, so a decided value can never be replaced.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};
use crate::faults::{FaultKind, FaultSpec};
use crate::quorum;
use crate::sim::{Actor, Addr, ClientReply, ClientRequest, Env, Micros, NodeId, Observation, Payload, RequestId, Simulation, TimerTag};

pub const PROGRESS_TIMER: TimerTag = 1;

/// How many decided instances below its log length a node still reports in
/// STOP-DATA, to help a new leader that is slightly behind.
const STOP_DATA_LOOKBACK: u64 = 4;

pub type Digest = [u8; 32];

/// Stable digest over the canonical encoding of a batch.
pub fn batch_digest(batch: &[RequestId]) -> Digest {
    let mut h = Sha256::new();
    h.update((batch.len() as u64).to_le_bytes());
    for id in batch {
        h.update((id.client.0 as u64).to_le_bytes());
        h.update(id.seq.to_le_bytes());
    }
    h.finalize().into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BftConfig {
    pub batch_size: usize,
    pub instance_timeout_us: Micros,
    /// Upper bound on the doubled timeout after repeated failed changes.
    pub max_timeout_us: Micros,
}

impl Default for BftConfig {
    fn default() -> Self {
        Self { batch_size: 1, instance_timeout_us: 400_000, max_timeout_us: 6_400_000 }
    }
}

impl BftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.instance_timeout_us == 0 || self.max_timeout_us < self.instance_timeout_us {
            return Err(Error::ConfigRejected(format!("invalid bft config {self:?}")));
        }
        Ok(())
    }
}

/// Misbehaviour a node can be assigned in randomized suites and scenarios.
/// The engine realizes each mode; the protocol code itself stays honest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ByzantineBehavior {
    Honest,
    Crashed,
    Delayed(f64),
    Flooding(f64),
    SilentDrop,
}

impl ByzantineBehavior {
    pub fn is_honest(self) -> bool {
        self == ByzantineBehavior::Honest
    }

    /// Install this behaviour on `node`. Crashes and floods are scheduled
    /// for `at`; the engine switches `Delayed` (a processing multiplier) and
    /// `SilentDrop` (every outgoing message lost) on immediately.
    pub fn apply<N, C>(self, sim: &mut Simulation<BftMsg, N, C>, node: NodeId, at: Micros) -> Result<()>
    where
        N: Actor<BftMsg>,
        C: Actor<BftMsg>,
    {
        match self {
            ByzantineBehavior::Honest => Ok(()),
            ByzantineBehavior::Crashed => sim.apply_fault(FaultSpec::crash(node, at)),
            ByzantineBehavior::Flooding(rate) => sim.apply_fault(FaultSpec::load(FaultKind::NetworkFlooding, node, rate, at, None)),
            ByzantineBehavior::Delayed(factor) => {
                if !(factor.is_finite() && factor >= 1.0) {
                    return Err(Error::InvalidFault(format!("delay factor {factor} must be at least 1")));
                }
                sim.set_delay_factor(node, factor);
                Ok(())
            }
            ByzantineBehavior::SilentDrop => {
                sim.set_muted(node, true);
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub regency: u64,
    pub instance: u64,
    pub batch: Vec<RequestId>,
    pub digest: Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Write {
    pub regency: u64,
    pub instance: u64,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Accept {
    pub regency: u64,
    pub instance: u64,
    pub digest: Digest,
    pub batch: Vec<RequestId>,
}

/// A value a node accepted (or decided) for one instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certified {
    pub instance: u64,
    pub regency: u64,
    pub batch: Vec<RequestId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopData {
    pub regency: u64,
    pub log_len: u64,
    pub values: Vec<Certified>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BftMsg {
    Request(ClientRequest),
    Reply(ClientReply),
    Propose(Proposal),
    Write(Write),
    Accept(Accept),
    Stop { regency: u64 },
    StopData(StopData),
}

impl Payload for BftMsg {
    fn client_request(req: ClientRequest) -> Self {
        BftMsg::Request(req)
    }

    fn as_reply(&self) -> Option<&ClientReply> {
        match self {
            BftMsg::Reply(r) => Some(r),
            _ => None,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            BftMsg::Request(_) => "request",
            BftMsg::Reply(_) => "reply",
            BftMsg::Propose(_) => "propose",
            BftMsg::Write(_) => "write",
            BftMsg::Accept(_) => "accept",
            BftMsg::Stop { .. } => "stop",
            BftMsg::StopData(_) => "stop_data",
        }
    }
}

/// Per-instance voting state. Votes are keyed by `(regency, digest)` so that
/// WRITEs from different regencies never mix.
#[derive(Debug, Clone, Default)]
pub struct InstancePhase {
    proposals: BTreeMap<u64, Digest>,
    batches: BTreeMap<Digest, Vec<RequestId>>,
    write_votes: BTreeMap<(u64, Digest), BTreeSet<NodeId>>,
    writers: BTreeMap<(u64, NodeId), Digest>,
    accept_votes: BTreeMap<(u64, Digest), BTreeSet<NodeId>>,
    accepters: BTreeMap<(u64, NodeId), Digest>,
    accept_sent: BTreeSet<u64>,
    accepted: Option<(u64, Digest)>,
    decided: Option<Vec<RequestId>>,
}

impl InstancePhase {
    pub fn decided(&self) -> Option<&[RequestId]> {
        self.decided.as_deref()
    }

    pub fn write_votes(&self, regency: u64, digest: &Digest) -> usize {
        self.write_votes.get(&(regency, *digest)).map_or(0, BTreeSet::len)
    }

    pub fn accept_votes(&self, regency: u64, digest: &Digest) -> usize {
        self.accept_votes.get(&(regency, *digest)).map_or(0, BTreeSet::len)
    }

    pub fn proposed(&self, regency: u64) -> Option<&Digest> {
        self.proposals.get(&regency)
    }

    fn decided_digest(&self) -> Option<Digest> {
        self.decided.as_deref().map(batch_digest)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BftCounters {
    pub validation_failures: u64,
    pub equivocations: u64,
}

#[derive(Debug, Clone)]
pub struct BftNode {
    id: NodeId,
    n: usize,
    f: usize,
    quorum: usize,
    cfg: BftConfig,
    regency: u64,
    instances: BTreeMap<u64, InstancePhase>,
    pending: VecDeque<ClientRequest>,
    known: HashSet<RequestId>,
    decided_at: HashMap<RequestId, u64>,
    decision_log: Vec<Vec<RequestId>>,
    in_flight: Option<u64>,
    /// Highest regency this node has voted STOP for.
    stop_sent: u64,
    stop_votes: BTreeMap<u64, BTreeSet<NodeId>>,
    stop_data: BTreeMap<u64, BTreeMap<NodeId, StopData>>,
    /// Set on a new leader until it has gathered STOP-DATA from a quorum.
    syncing: bool,
    forced: BTreeMap<u64, (u64, Vec<RequestId>)>,
    /// A new leader proposes fresh batches only at or beyond this instance.
    sync_floor: u64,
    future: Vec<(NodeId, Proposal)>,
    timeout_us: Micros,
    timer_armed: bool,
    counters: BftCounters,
}

impl BftNode {
    pub fn new(id: NodeId, n: usize, cfg: BftConfig) -> Result<Self> {
        cfg.validate()?;
        if id.0 >= n {
            return Err(Error::InvalidCluster(format!("{id} outside cluster of {n}")));
        }
        Ok(Self {
            id,
            n,
            f: quorum::byz_tolerance(n)?,
            quorum: quorum::bft_write_quorum(n)?,
            cfg,
            regency: 0,
            instances: BTreeMap::new(),
            pending: VecDeque::new(),
            known: HashSet::new(),
            decided_at: HashMap::new(),
            decision_log: Vec::new(),
            in_flight: None,
            stop_sent: 0,
            stop_votes: BTreeMap::new(),
            stop_data: BTreeMap::new(),
            syncing: false,
            forced: BTreeMap::new(),
            sync_floor: 0,
            future: Vec::new(),
            timeout_us: cfg.instance_timeout_us,
            timer_armed: false,
            counters: BftCounters::default(),
        })
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn regency(&self) -> u64 {
        self.regency
    }

    pub fn leader(&self) -> NodeId {
        self.leader_of(self.regency)
    }

    fn leader_of(&self, regency: u64) -> NodeId {
        NodeId((regency % self.n as u64) as usize)
    }

    pub fn is_leader(&self) -> bool {
        self.leader() == self.id
    }

    pub fn quorum(&self) -> usize {
        self.quorum
    }

    pub fn decision_log(&self) -> &[Vec<RequestId>] {
        &self.decision_log
    }

    pub fn log_len(&self) -> u64 {
        self.decision_log.len() as u64
    }

    pub fn instance(&self, i: u64) -> Option<&InstancePhase> {
        self.instances.get(&i)
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn counters(&self) -> &BftCounters {
        &self.counters
    }

    pub fn in_flight(&self) -> Option<u64> {
        self.in_flight
    }

    fn others(&self) -> Vec<NodeId> {
        (0..self.n).map(NodeId).filter(|p| *p != self.id).collect()
    }

    fn broadcast<E: Env<BftMsg>>(&self, env: &mut E, msg: BftMsg) {
        for p in self.others() {
            env.send(Addr::Node(p), msg.clone());
        }
    }

    fn reject<E: Env<BftMsg>>(&mut self, env: &mut E) {
        self.counters.validation_failures += 1;
        env.observe(Observation::ValidationFailure);
    }

    fn equivocation<E: Env<BftMsg>>(&mut self, env: &mut E) {
        self.counters.equivocations += 1;
        env.observe(Observation::Equivocation);
    }

    fn arm_progress_timer<E: Env<BftMsg>>(&mut self, env: &mut E) {
        env.set_timer(PROGRESS_TIMER, self.timeout_us);
        self.timer_armed = true;
    }

    /// Enqueue a client request; the leader proposes it if its pipeline is
    /// empty.
    pub fn on_client_request_bft<E: Env<BftMsg>>(&mut self, env: &mut E, req: ClientRequest) {
        if !self.known.insert(req.id) {
            return;
        }
        self.pending.push_back(req);
        if !self.timer_armed {
            self.arm_progress_timer(env);
        }
        self.try_propose(env);
    }

    fn try_propose<E: Env<BftMsg>>(&mut self, env: &mut E) {
        if !self.is_leader() || self.syncing || self.in_flight.is_some() {
            return;
        }
        let i = self.log_len();
        let batch = if let Some((_, batch)) = self.forced.remove(&i) {
            batch
        } else {
            if i < self.sync_floor {
                return;
            }
            self.pending.iter().map(|r| r.id).filter(|id| !self.decided_at.contains_key(id)).take(self.cfg.batch_size).collect()
        };
        if batch.is_empty() {
            return;
        }
        let proposal = Proposal { regency: self.regency, instance: i, digest: batch_digest(&batch), batch };
        self.in_flight = Some(i);
        self.broadcast(env, BftMsg::Propose(proposal.clone()));
        self.register_proposal(env, proposal);
    }

    /// PROPOSE from the regency leader: validate, store, and echo the digest
    /// in a WRITE.
    pub fn on_propose<E: Env<BftMsg>>(&mut self, env: &mut E, from: NodeId, msg: Proposal) {
        if from != self.leader_of(msg.regency) {
            self.reject(env);
            return;
        }
        if msg.regency > self.regency {
            self.future.push((from, msg));
            return;
        }
        if msg.regency < self.regency {
            return;
        }
        if msg.batch.is_empty() || batch_digest(&msg.batch) != msg.digest {
            self.reject(env);
            return;
        }
        if msg.batch.iter().any(|id| self.decided_at.get(id).is_some_and(|&at| at != msg.instance)) {
            self.reject(env);
            return;
        }
        if let Some(phase) = self.instances.get(&msg.instance) {
            if let Some(prev) = phase.proposals.get(&msg.regency) {
                if *prev != msg.digest {
                    self.equivocation(env);
                }
                return;
            }
            if let Some(decided) = phase.decided_digest() {
                // Already decided here: help a re-proposal of the same value.
                if decided == msg.digest {
                    self.help(env, msg);
                }
                return;
            }
        }
        self.register_proposal(env, msg);
    }

    fn help<E: Env<BftMsg>>(&mut self, env: &mut E, msg: Proposal) {
        let phase = self.instances.entry(msg.instance).or_default();
        phase.proposals.insert(msg.regency, msg.digest);
        phase.accept_sent.insert(msg.regency);
        let write = Write { regency: msg.regency, instance: msg.instance, digest: msg.digest };
        let accept = Accept { regency: msg.regency, instance: msg.instance, digest: msg.digest, batch: msg.batch };
        self.broadcast(env, BftMsg::Write(write));
        self.broadcast(env, BftMsg::Accept(accept));
    }

    fn register_proposal<E: Env<BftMsg>>(&mut self, env: &mut E, msg: Proposal) {
        let me = self.id;
        let phase = self.instances.entry(msg.instance).or_default();
        phase.proposals.insert(msg.regency, msg.digest);
        phase.batches.insert(msg.digest, msg.batch);
        let write = Write { regency: msg.regency, instance: msg.instance, digest: msg.digest };
        self.broadcast(env, BftMsg::Write(write));
        self.on_write(env, me, write);
    }

    /// Record a WRITE vote; at a quorum for a digest this node proposed
    /// itself, emit ACCEPT carrying the batch.
    pub fn on_write<E: Env<BftMsg>>(&mut self, env: &mut E, from: NodeId, msg: Write) {
        let phase = self.instances.entry(msg.instance).or_default();
        if phase.decided.is_some() {
            return;
        }
        match phase.writers.get(&(msg.regency, from)) {
            Some(d) if *d == msg.digest => return,
            Some(_) => {
                self.equivocation(env);
                return;
            }
            None => {}
        }
        phase.writers.insert((msg.regency, from), msg.digest);
        phase.write_votes.entry((msg.regency, msg.digest)).or_default().insert(from);
        self.check_write_quorum(env, msg.instance, msg.regency, msg.digest);
    }

    fn check_write_quorum<E: Env<BftMsg>>(&mut self, env: &mut E, i: u64, regency: u64, digest: Digest) {
        if regency != self.regency {
            return;
        }
        let me = self.id;
        let quorum = self.quorum;
        let Some(phase) = self.instances.get_mut(&i) else { return };
        let backers = phase.write_votes.get(&(regency, digest)).map_or(0, BTreeSet::len);
        if backers < quorum || phase.accept_sent.contains(&regency) || phase.proposals.get(&regency) != Some(&digest) {
            return;
        }
        let Some(batch) = phase.batches.get(&digest).cloned() else { return };
        phase.accept_sent.insert(regency);
        phase.accepted = Some((regency, digest));
        env.observe(Observation::AcceptSent { instance: i, backers, quorum });
        let accept = Accept { regency, instance: i, digest, batch };
        self.broadcast(env, BftMsg::Accept(accept.clone()));
        self.on_accept(env, me, accept);
    }

    /// Record an ACCEPT vote; a quorum of matching ACCEPTs decides the
    /// instance. Returns the decided batch when this call decided it.
    pub fn on_accept<E: Env<BftMsg>>(&mut self, env: &mut E, from: NodeId, msg: Accept) -> Option<Vec<RequestId>> {
        // A batch identical to one already checked against this digest needs
        // no second hash.
        let verified = self.instances.get(&msg.instance).and_then(|p| p.batches.get(&msg.digest)).is_some_and(|b| *b == msg.batch);
        if !verified && batch_digest(&msg.batch) != msg.digest {
            self.reject(env);
            return None;
        }
        let quorum = self.quorum;
        let phase = self.instances.entry(msg.instance).or_default();
        if phase.decided.is_some() {
            return None;
        }
        match phase.accepters.get(&(msg.regency, from)) {
            Some(d) if *d == msg.digest => return None,
            Some(_) => {
                self.equivocation(env);
                return None;
            }
            None => {}
        }
        phase.accepters.insert((msg.regency, from), msg.digest);
        let votes = phase.accept_votes.entry((msg.regency, msg.digest)).or_default();
        votes.insert(from);
        if votes.len() < quorum {
            phase.batches.entry(msg.digest).or_insert(msg.batch);
            return None;
        }
        phase.decided = Some(msg.batch.clone());
        self.on_decided(env, msg.instance, &msg.batch);
        Some(msg.batch)
    }

    fn on_decided<E: Env<BftMsg>>(&mut self, env: &mut E, i: u64, batch: &[RequestId]) {
        for id in batch {
            self.decided_at.insert(*id, i);
            self.known.insert(*id);
        }
        self.pending.retain(|r| !self.decided_at.contains_key(&r.id));
        self.forced.remove(&i);
        let before = self.log_len();
        while let Some(b) = self.instances.get(&self.log_len()).and_then(|p| p.decided.clone()) {
            for id in &b {
                let reply = ClientReply { id: *id, from: self.id, leader_hint: Some(self.leader()) };
                env.send(Addr::Client(id.client), BftMsg::Reply(reply));
            }
            self.decision_log.push(b);
        }
        if self.in_flight.is_some_and(|f| f < self.log_len()) {
            self.in_flight = None;
        }
        if self.log_len() > before {
            self.timeout_us = self.cfg.instance_timeout_us;
            if self.pending.is_empty() {
                env.cancel_timer(PROGRESS_TIMER);
                self.timer_armed = false;
            } else {
                self.arm_progress_timer(env);
            }
        }
        self.try_propose(env);
    }

    /// Progress timer expiry: vote to move to the next regency.
    pub fn on_instance_timeout<E: Env<BftMsg>>(&mut self, env: &mut E) {
        self.timer_armed = false;
        if self.pending.is_empty() && self.in_flight.is_none() {
            return;
        }
        let target = self.regency.max(self.stop_sent) + 1;
        self.send_stop(env, target);
        self.timeout_us = (self.timeout_us * 2).min(self.cfg.max_timeout_us);
        self.arm_progress_timer(env);
    }

    fn send_stop<E: Env<BftMsg>>(&mut self, env: &mut E, target: u64) {
        if target <= self.stop_sent {
            return;
        }
        self.stop_sent = target;
        self.broadcast(env, BftMsg::Stop { regency: target });
        let me = self.id;
        self.on_stop(env, me, target);
    }

    fn on_stop<E: Env<BftMsg>>(&mut self, env: &mut E, from: NodeId, target: u64) {
        if target <= self.regency {
            return;
        }
        let votes = self.stop_votes.entry(target).or_default();
        votes.insert(from);
        let count = votes.len();
        if count > self.f && self.stop_sent < target {
            self.send_stop(env, target);
            return;
        }
        if count >= self.quorum {
            self.install(env, target);
        }
    }

    fn install<E: Env<BftMsg>>(&mut self, env: &mut E, regency: u64) {
        self.regency = regency;
        self.stop_sent = self.stop_sent.max(regency);
        self.stop_votes = self.stop_votes.split_off(&(regency + 1));
        self.in_flight = None;
        self.forced.clear();
        env.observe(Observation::EpochInstalled { epoch: regency });
        let leader = self.leader();
        if leader == self.id {
            env.observe(Observation::BecameLeader { epoch: regency });
            self.syncing = true;
        } else {
            self.syncing = false;
        }
        if !self.pending.is_empty() || self.timer_armed {
            self.arm_progress_timer(env);
        }

        let mut values = Vec::new();
        for (&i, phase) in self.instances.range(self.log_len().saturating_sub(STOP_DATA_LOOKBACK)..) {
            if let Some(batch) = &phase.decided {
                // Any regency works as a rank for decided values; use the
                // newest one so they win over stale accepted values.
                values.push(Certified { instance: i, regency: u64::MAX, batch: batch.clone() });
            } else if let Some((r, d)) = phase.accepted {
                if let Some(batch) = phase.batches.get(&d) {
                    values.push(Certified { instance: i, regency: r, batch: batch.clone() });
                }
            }
        }
        let data = StopData { regency, log_len: self.log_len(), values };
        if leader == self.id {
            let me = self.id;
            self.on_stop_data(env, me, data);
        } else {
            env.send(Addr::Node(leader), BftMsg::StopData(data));
        }

        let future = std::mem::take(&mut self.future);
        for (from, p) in future {
            if p.regency >= self.regency {
                self.on_propose(env, from, p);
            }
        }
    }

    fn on_stop_data<E: Env<BftMsg>>(&mut self, env: &mut E, from: NodeId, data: StopData) {
        if self.leader_of(data.regency) != self.id || data.regency < self.regency {
            return;
        }
        let regency = data.regency;
        self.stop_data.entry(regency).or_default().insert(from, data);
        if regency != self.regency || !self.syncing || self.stop_data[&regency].len() < self.quorum {
            return;
        }
        let collected = self.stop_data.remove(&regency).unwrap_or_default();
        self.stop_data = self.stop_data.split_off(&regency);
        let own_len = self.log_len();
        let mut floor = own_len;
        for data in collected.values() {
            floor = floor.max(data.log_len);
            for v in &data.values {
                if v.instance < own_len {
                    continue;
                }
                let better = self.forced.get(&v.instance).is_none_or(|(r, _)| v.regency > *r);
                if better {
                    self.forced.insert(v.instance, (v.regency, v.batch.clone()));
                }
            }
        }
        self.sync_floor = floor;
        self.syncing = false;
        self.try_propose(env);
    }
}

impl Actor<BftMsg> for BftNode {
    fn on_message<E: Env<BftMsg>>(&mut self, env: &mut E, from: Addr, msg: BftMsg) {
        let peer = match from {
            Addr::Node(p) => Some(p),
            Addr::Client(_) => None,
        };
        match (msg, peer) {
            (BftMsg::Request(req), _) => self.on_client_request_bft(env, req),
            (BftMsg::Propose(p), Some(s)) => self.on_propose(env, s, p),
            (BftMsg::Write(w), Some(s)) => self.on_write(env, s, w),
            (BftMsg::Accept(a), Some(s)) => {
                self.on_accept(env, s, a);
            }
            (BftMsg::Stop { regency }, Some(s)) => self.on_stop(env, s, regency),
            (BftMsg::StopData(d), Some(s)) => self.on_stop_data(env, s, d),
            _ => {}
        }
    }

    fn on_timer<E: Env<BftMsg>>(&mut self, env: &mut E, tag: TimerTag) {
        if tag == PROGRESS_TIMER {
            self.on_instance_timeout(env);
        }
    }
}
