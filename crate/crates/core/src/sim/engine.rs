use std::collections::VecDeque;

use rand::Rng;

use super::net::scaled;
use super::queue::{EventHandle, EventPayload, EventQueue, SimClock};
use super::{Actor, Addr, ChannelKind, ClientId, CostModel, Env, LatencyModel, Micros, NodeId, Observation, Payload, TimerTag};
use crate::error::{Error, Result};
use crate::faults::{effective_delay_factor, FaultKind, FaultSpec, LoadModel};
use crate::rng::{self, SimRng};

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    pub latency: LatencyModel,
    pub costs: CostModel,
    pub channel: ChannelKind,
    pub load: LoadModel,
    pub allow_loopback: bool,
    /// Keep a full event trace in memory (the digest is always computed).
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            latency: LatencyModel::default(),
            costs: CostModel::FREE,
            channel: ChannelKind::Lossy,
            load: LoadModel::default(),
            allow_loopback: false,
            trace: false,
        }
    }
}

/// Message accounting. Every transmission attempt counts as sent; at the
/// end of a run `sent == delivered + dropped + in_flight`, and
/// [`Simulation::finish`] folds whatever is still in flight into `dropped`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

/// Per-node message counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Traffic {
    pub received: u64,
    pub sent: u64,
    /// Messages waiting in the node's inbox right now.
    pub queued: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineReport {
    pub clock: Micros,
    pub dispatched: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub at: Micros,
    pub seq: u64,
    pub event: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationRecord {
    pub at: Micros,
    pub who: Addr,
    pub obs: Observation,
}

#[derive(Debug, Default)]
struct Timers {
    slots: Vec<(TimerTag, EventHandle)>,
}

impl Timers {
    fn get(&self, tag: TimerTag) -> Option<EventHandle> {
        self.slots.iter().find(|(t, _)| *t == tag).map(|(_, h)| *h)
    }

    fn set(&mut self, tag: TimerTag, h: EventHandle) -> Option<EventHandle> {
        match self.slots.iter_mut().find(|(t, _)| *t == tag) {
            Some(slot) => Some(std::mem::replace(&mut slot.1, h)),
            None => {
                self.slots.push((tag, h));
                None
            }
        }
    }

    fn remove(&mut self, tag: TimerTag) -> Option<EventHandle> {
        let i = self.slots.iter().position(|(t, _)| *t == tag)?;
        Some(self.slots.swap_remove(i).1)
    }
}

#[derive(Debug)]
enum Work<M> {
    Message { from: Addr, msg: M },
    Timer { tag: TimerTag, handle: EventHandle },
}

#[derive(Debug)]
struct NodeSlot<M> {
    inbox: VecDeque<Work<M>>,
    current: Option<Work<M>>,
    /// Earliest time the node's CPU is free for the next handle or send.
    cpu_free_at: Micros,
    crashed: bool,
    muted: bool,
    manual_factor: f64,
    delay_factor: f64,
    drop_prob: f64,
    timers: Timers,
    rng: SimRng,
    net_rng: SimRng,
    drop_rng: SimRng,
    traffic: Traffic,
}

struct ClientSlot {
    timers: Timers,
    rng: SimRng,
    net_rng: SimRng,
}

struct Core<M> {
    clock: SimClock,
    queue: EventQueue<M>,
    cfg: SimConfig,
    nodes: Vec<NodeSlot<M>>,
    clients: Vec<ClientSlot>,
    faults: Vec<(FaultSpec, bool)>,
    stats: NetStats,
    observations: Vec<ObservationRecord>,
    trace: Option<Vec<TraceEntry>>,
    digest: u64,
    dispatched: u64,
    current_seq: u64,
}

/// One simulation instance: the engine plus the node and client actors it
/// drives. Single-threaded; independent instances share nothing.
pub struct Simulation<M, N, C> {
    core: Core<M>,
    nodes: Vec<N>,
    clients: Vec<C>,
    started: bool,
}

impl<M, N, C> Simulation<M, N, C>
where
    M: Payload,
    N: Actor<M>,
    C: Actor<M>,
{
    pub fn new(cfg: SimConfig, nodes: Vec<N>, clients: Vec<C>) -> Result<Self> {
        cfg.latency.validate()?;
        cfg.load.validate()?;
        let seed = cfg.seed;
        let node_slots = (0..nodes.len() as u64)
            .map(|i| NodeSlot {
                inbox: VecDeque::new(),
                current: None,
                cpu_free_at: 0,
                crashed: false,
                muted: false,
                manual_factor: 1.0,
                delay_factor: 1.0,
                drop_prob: 0.0,
                timers: Timers::default(),
                rng: rng::stream(seed, "node", i),
                net_rng: rng::stream(seed, "net-node", i),
                drop_rng: rng::stream(seed, "drop-node", i),
                traffic: Traffic::default(),
            })
            .collect();
        let client_slots = (0..clients.len() as u64)
            .map(|i| ClientSlot {
                timers: Timers::default(),
                rng: rng::stream(seed, "client", i),
                net_rng: rng::stream(seed, "net-client", i),
            })
            .collect();
        let trace = cfg.trace.then(Vec::new);
        Ok(Self {
            core: Core {
                clock: SimClock::default(),
                queue: EventQueue::default(),
                cfg,
                nodes: node_slots,
                clients: client_slots,
                faults: Vec::new(),
                stats: NetStats::default(),
                observations: Vec::new(),
                trace,
                digest: rng::fnv1a64(b"trace"),
                dispatched: 0,
                current_seq: 0,
            },
            nodes,
            clients,
            started: false,
        })
    }

    pub fn now(&self) -> Micros {
        self.core.clock.now()
    }

    pub fn nodes(&self) -> &[N] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [N] {
        &mut self.nodes
    }

    pub fn clients(&self) -> &[C] {
        &self.clients
    }

    pub fn stats(&self) -> NetStats {
        self.core.stats
    }

    pub fn traffic(&self, node: NodeId) -> Traffic {
        let slot = &self.core.nodes[node.0];
        Traffic { queued: slot.inbox.len() as u64, ..slot.traffic }
    }

    pub fn observations(&self) -> &[ObservationRecord] {
        &self.core.observations
    }

    pub fn trace(&self) -> Option<&[TraceEntry]> {
        self.core.trace.as_deref()
    }

    /// Running digest over every dispatched event; equal digests mean equal
    /// traces.
    pub fn trace_digest(&self) -> u64 {
        self.core.digest
    }

    pub fn is_crashed(&self, node: NodeId) -> bool {
        self.core.nodes[node.0].crashed
    }

    pub fn pending_events(&self) -> usize {
        self.core.queue.len()
    }

    /// Enqueue a raw event.
    pub fn schedule(&mut self, fire_at: Micros, payload: EventPayload<M>) -> Result<EventHandle> {
        self.core.check_payload(&payload)?;
        self.core.queue.schedule(self.core.clock.now(), fire_at, payload)
    }

    pub fn cancel(&mut self, handle: EventHandle) {
        self.core.queue.cancel(handle);
    }

    /// Transmit `msg` now, outside any handler. Returns the delivery event,
    /// or `None` when the network dropped it.
    pub fn send(&mut self, from: Addr, to: Addr, msg: M) -> Result<Option<EventHandle>> {
        self.core.check_addr(from)?;
        self.core.check_addr(to)?;
        if from == to && !self.core.cfg.allow_loopback {
            return Err(Error::InvalidTarget(to));
        }
        let now = self.core.clock.now();
        Ok(self.core.transmit(from, to, msg, now))
    }

    /// Start clients at `at` (they get `on_start` then).
    pub fn start_clients_at(&mut self, at: Micros) -> Result<()> {
        for c in 0..self.clients.len() {
            self.schedule(at, EventPayload::ClientTick(ClientId(c)))?;
        }
        Ok(())
    }

    /// Register a fault; it takes effect at `spec.start_us`.
    pub fn apply_fault(&mut self, spec: FaultSpec) -> Result<()> {
        spec.validate()?;
        self.core.check_addr(Addr::Node(spec.target))?;
        effective_delay_factor(&self.core.cfg.load, spec.rate_gbps)?;
        let id = self.core.faults.len();
        self.core.faults.push((spec, false));
        let now = self.core.clock.now();
        self.core.queue.schedule(now, spec.start_us.max(now), EventPayload::FaultStart(id))?;
        if let Some(stop) = spec.stop_us {
            self.core.queue.schedule(now, stop.max(now), EventPayload::FaultStop(id))?;
        }
        Ok(())
    }

    /// Extra processing multiplier on top of any active load fault.
    pub fn set_delay_factor(&mut self, node: NodeId, factor: f64) {
        self.core.nodes[node.0].manual_factor = factor.max(1.0);
        self.core.refresh_load(node.0);
    }

    /// A muted node keeps processing but every message it emits is lost.
    pub fn set_muted(&mut self, node: NodeId, muted: bool) {
        self.core.nodes[node.0].muted = muted;
    }

    pub fn delay_factor(&self, node: NodeId) -> f64 {
        self.core.nodes[node.0].delay_factor
    }

    pub fn drop_probability(&self, node: NodeId) -> f64 {
        self.core.nodes[node.0].drop_prob
    }

    fn start(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        for i in 0..self.nodes.len() {
            let mut env = NodeEnv { core: &mut self.core, node: i };
            self.nodes[i].on_start(&mut env);
        }
    }

    /// Process events in `(fire_at, seq)` order until the queue is empty or
    /// the next event lies beyond `t_end`.
    pub fn run_until(&mut self, t_end: Micros) -> EngineReport {
        self.start();
        let before = self.core.dispatched;
        while let Some(t) = self.core.queue.peek_time() {
            if t > t_end {
                break;
            }
            let ev = self.core.queue.pop().expect("peeked event");
            self.core.clock.advance_to(ev.fire_at);
            self.core.record(ev.fire_at, ev.seq, &ev.payload);
            self.core.dispatched += 1;
            self.dispatch(ev.payload);
        }
        EngineReport { clock: self.core.clock.now(), dispatched: self.core.dispatched - before }
    }

    /// End the run: messages still in flight count as dropped.
    pub fn finish(&mut self) -> NetStats {
        let in_flight = self.core.queue.payloads().filter(|p| matches!(p, EventPayload::Deliver { .. })).count();
        let mut stats = self.core.stats;
        stats.dropped += in_flight as u64;
        stats
    }

    fn dispatch(&mut self, payload: EventPayload<M>) {
        match payload {
            EventPayload::Deliver { from, to, msg } => match to {
                Addr::Node(n) => self.arrive_at_node(n.0, from, msg),
                Addr::Client(c) => {
                    self.core.stats.delivered += 1;
                    let mut env = ClientEnv { core: &mut self.core, client: c.0 };
                    self.clients[c.0].on_message(&mut env, from, msg);
                }
            },
            EventPayload::TimerFire { owner, tag } => self.fire_timer(owner, tag),
            EventPayload::FaultStart(id) => self.core.set_fault_active(id, true),
            EventPayload::FaultStop(id) => self.core.set_fault_active(id, false),
            EventPayload::ClientTick(c) => {
                let mut env = ClientEnv { core: &mut self.core, client: c.0 };
                self.clients[c.0].on_start(&mut env);
            }
            EventPayload::Dispatch(n) => self.finish_work(n.0),
        }
    }

    fn arrive_at_node(&mut self, i: usize, from: Addr, msg: M) {
        let now = self.core.clock.now();
        let slot = &mut self.core.nodes[i];
        if slot.crashed {
            self.core.stats.dropped += 1;
            return;
        }
        if slot.drop_prob > 0.0 && slot.drop_rng.gen_bool(slot.drop_prob) {
            self.core.stats.dropped += 1;
            if let ChannelKind::Reliable { retransmit_us } = self.core.cfg.channel {
                self.core.stats.sent += 1;
                let _ = self.core.queue.schedule(now, now + retransmit_us, EventPayload::Deliver { from, to: Addr::Node(NodeId(i)), msg });
            }
            return;
        }
        self.core.stats.delivered += 1;
        slot.traffic.received += 1;
        slot.inbox.push_back(Work::Message { from, msg });
        if slot.current.is_none() {
            self.core.start_next(i);
        }
    }

    fn fire_timer(&mut self, owner: Addr, tag: TimerTag) {
        let seq = self.core.current_seq;
        match owner {
            Addr::Node(n) => {
                let slot = &mut self.core.nodes[n.0];
                if slot.crashed || slot.timers.get(tag) != Some(EventHandle(seq)) {
                    return;
                }
                slot.inbox.push_back(Work::Timer { tag, handle: EventHandle(seq) });
                if slot.current.is_none() {
                    self.core.start_next(n.0);
                }
            }
            Addr::Client(c) => {
                let slot = &mut self.core.clients[c.0];
                if slot.timers.get(tag) != Some(EventHandle(seq)) {
                    return;
                }
                slot.timers.remove(tag);
                let mut env = ClientEnv { core: &mut self.core, client: c.0 };
                self.clients[c.0].on_timer(&mut env, tag);
            }
        }
    }

    fn finish_work(&mut self, i: usize) {
        let Some(work) = self.core.nodes[i].current.take() else {
            return;
        };
        if self.core.nodes[i].crashed {
            return;
        }
        {
            let mut env = NodeEnv { core: &mut self.core, node: i };
            match work {
                Work::Message { from, msg } => self.nodes[i].on_message(&mut env, from, msg),
                Work::Timer { tag, handle } => {
                    if env.core.nodes[i].timers.get(tag) == Some(handle) {
                        env.core.nodes[i].timers.remove(tag);
                        self.nodes[i].on_timer(&mut env, tag);
                    }
                }
            }
        }
        if !self.core.nodes[i].crashed {
            self.core.start_next(i);
        }
    }
}

impl<M: Payload> Core<M> {
    fn check_addr(&self, a: Addr) -> Result<()> {
        let ok = match a {
            Addr::Node(n) => n.0 < self.nodes.len(),
            Addr::Client(c) => c.0 < self.clients.len(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidTarget(a))
        }
    }

    fn check_payload(&self, p: &EventPayload<M>) -> Result<()> {
        match p {
            EventPayload::Deliver { from, to, .. } => {
                self.check_addr(*from)?;
                self.check_addr(*to)
            }
            EventPayload::TimerFire { owner, .. } => self.check_addr(*owner),
            EventPayload::FaultStart(id) | EventPayload::FaultStop(id) => {
                if *id < self.faults.len() {
                    Ok(())
                } else {
                    Err(Error::InvalidFault(format!("no fault #{id}")))
                }
            }
            EventPayload::ClientTick(c) => self.check_addr(Addr::Client(*c)),
            EventPayload::Dispatch(n) => self.check_addr(Addr::Node(*n)),
        }
    }

    fn record(&mut self, at: Micros, seq: u64, payload: &EventPayload<M>) {
        self.current_seq = seq;
        let (a, b) = match payload {
            EventPayload::Deliver { from, to, .. } => (addr_code(*from), addr_code(*to)),
            EventPayload::TimerFire { owner, tag } => (addr_code(*owner), u64::from(*tag)),
            EventPayload::FaultStart(id) | EventPayload::FaultStop(id) => (*id as u64, 0),
            EventPayload::ClientTick(c) => (c.0 as u64, 0),
            EventPayload::Dispatch(n) => (n.0 as u64, 0),
        };
        for word in [at, seq, u64::from(payload.code()), a, b] {
            self.digest = rng::splitmix64(self.digest ^ word);
        }
        if let Some(trace) = self.trace.as_mut() {
            let (event, detail) = match payload {
                EventPayload::Deliver { from, to, msg } => ("deliver", format!("{from}->{to} {}", msg.label())),
                EventPayload::TimerFire { owner, tag } => ("timer", format!("{owner}#{tag}")),
                EventPayload::FaultStart(id) => ("fault_start", id.to_string()),
                EventPayload::FaultStop(id) => ("fault_stop", id.to_string()),
                EventPayload::ClientTick(c) => ("client_tick", c.to_string()),
                EventPayload::Dispatch(n) => ("dispatch", n.to_string()),
            };
            trace.push(TraceEntry { at, seq, event, detail });
        }
    }

    fn start_next(&mut self, i: usize) {
        let now = self.clock.now();
        let handle_us = self.cfg.costs.handle_us;
        let slot = &mut self.nodes[i];
        if slot.current.is_some() {
            return;
        }
        let Some(work) = slot.inbox.pop_front() else {
            return;
        };
        let cost = match work {
            Work::Message { .. } => scaled(handle_us, slot.delay_factor),
            Work::Timer { .. } => 0,
        };
        let done = now.max(slot.cpu_free_at) + cost;
        slot.cpu_free_at = done;
        slot.current = Some(work);
        let _ = self.queue.schedule(now, done, EventPayload::Dispatch(NodeId(i)));
    }

    /// Put a message on the wire at `depart`.
    fn transmit(&mut self, from: Addr, to: Addr, msg: M, depart: Micros) -> Option<EventHandle> {
        self.stats.sent += 1;
        let latency_model = self.cfg.latency;
        let net_rng = match from {
            Addr::Node(n) => &mut self.nodes[n.0].net_rng,
            Addr::Client(c) => &mut self.clients[c.0].net_rng,
        };
        let latency = latency_model.sample_latency(net_rng);
        let mut arrive = depart + latency;
        if latency_model.sample_drop(net_rng) {
            self.stats.dropped += 1;
            match self.cfg.channel {
                ChannelKind::Lossy => return None,
                ChannelKind::Reliable { retransmit_us } => {
                    self.stats.sent += 1;
                    arrive += retransmit_us;
                }
            }
        }
        self.queue.schedule(self.clock.now(), arrive, EventPayload::Deliver { from, to, msg }).ok()
    }

    fn set_fault_active(&mut self, id: usize, active: bool) {
        let (spec, _) = self.faults[id];
        self.faults[id].1 = active;
        let i = spec.target.0;
        if spec.kind == FaultKind::Crash {
            if active {
                let slot = &mut self.nodes[i];
                slot.crashed = true;
                slot.inbox.clear();
                slot.current = None;
                slot.timers = Timers::default();
            }
            return;
        }
        self.refresh_load(i);
    }

    /// Recompute a node's slowdown and loss from its active faults; overlapping
    /// faults compose multiplicatively.
    fn refresh_load(&mut self, i: usize) {
        let load = self.cfg.load;
        let mut factor = self.nodes[i].manual_factor;
        let mut keep = 1.0;
        for (spec, active) in &self.faults {
            if !*active || spec.target.0 != i || spec.kind == FaultKind::Crash {
                continue;
            }
            factor *= effective_delay_factor(&load, spec.rate_gbps).unwrap_or(1.0);
            keep *= 1.0 - load.drop_probability(spec.kind, spec.rate_gbps);
        }
        let slot = &mut self.nodes[i];
        slot.delay_factor = factor;
        slot.drop_prob = 1.0 - keep;
    }

    fn set_timer(&mut self, owner: Addr, tag: TimerTag, delay: Micros) {
        let now = self.clock.now();
        let Ok(h) = self.queue.schedule(now, now + delay, EventPayload::TimerFire { owner, tag }) else {
            return;
        };
        let old = match owner {
            Addr::Node(n) => self.nodes[n.0].timers.set(tag, h),
            Addr::Client(c) => self.clients[c.0].timers.set(tag, h),
        };
        if let Some(old) = old {
            self.queue.cancel(old);
        }
    }

    fn cancel_timer(&mut self, owner: Addr, tag: TimerTag) {
        let old = match owner {
            Addr::Node(n) => self.nodes[n.0].timers.remove(tag),
            Addr::Client(c) => self.clients[c.0].timers.remove(tag),
        };
        if let Some(old) = old {
            self.queue.cancel(old);
        }
    }
}

fn addr_code(a: Addr) -> u64 {
    match a {
        Addr::Node(n) => n.0 as u64,
        Addr::Client(c) => (1 << 32) | c.0 as u64,
    }
}

struct NodeEnv<'a, M> {
    core: &'a mut Core<M>,
    node: usize,
}

impl<M: Payload> Env<M> for NodeEnv<'_, M> {
    fn now(&self) -> Micros {
        self.core.clock.now()
    }

    fn me(&self) -> Addr {
        Addr::Node(NodeId(self.node))
    }

    fn rng(&mut self) -> &mut SimRng {
        &mut self.core.nodes[self.node].rng
    }

    fn send(&mut self, to: Addr, msg: M) {
        let me = self.me();
        if to == me || self.core.check_addr(to).is_err() {
            debug_assert!(false, "{me} sent {} to invalid target {to}", msg.label());
            return;
        }
        let now = self.core.clock.now();
        let send_us = self.core.cfg.costs.send_us;
        let slot = &mut self.core.nodes[self.node];
        let depart = now.max(slot.cpu_free_at) + scaled(send_us, slot.delay_factor);
        slot.cpu_free_at = depart;
        slot.traffic.sent += 1;
        if slot.muted {
            self.core.stats.sent += 1;
            self.core.stats.dropped += 1;
            return;
        }
        self.core.transmit(me, to, msg, depart);
    }

    fn set_timer(&mut self, tag: TimerTag, delay: Micros) {
        self.core.set_timer(self.me(), tag, delay);
    }

    fn cancel_timer(&mut self, tag: TimerTag) {
        self.core.cancel_timer(self.me(), tag);
    }

    fn observe(&mut self, obs: Observation) {
        let at = self.core.clock.now();
        self.core.observations.push(ObservationRecord { at, who: self.me(), obs });
    }
}

struct ClientEnv<'a, M> {
    core: &'a mut Core<M>,
    client: usize,
}

impl<M: Payload> Env<M> for ClientEnv<'_, M> {
    fn now(&self) -> Micros {
        self.core.clock.now()
    }

    fn me(&self) -> Addr {
        Addr::Client(ClientId(self.client))
    }

    fn rng(&mut self) -> &mut SimRng {
        &mut self.core.clients[self.client].rng
    }

    fn send(&mut self, to: Addr, msg: M) {
        if self.core.check_addr(to).is_err() {
            debug_assert!(false, "client sent to invalid target {to}");
            return;
        }
        let now = self.core.clock.now();
        self.core.transmit(self.me(), to, msg, now);
    }

    fn set_timer(&mut self, tag: TimerTag, delay: Micros) {
        self.core.set_timer(self.me(), tag, delay);
    }

    fn cancel_timer(&mut self, tag: TimerTag) {
        self.core.cancel_timer(self.me(), tag);
    }

    fn observe(&mut self, obs: Observation) {
        let at = self.core.clock.now();
        self.core.observations.push(ObservationRecord { at, who: self.me(), obs });
    }
}
