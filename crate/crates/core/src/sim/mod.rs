//! Discrete-event engine: virtual clock, ordered event queue, latency model,
//! and per-node processing queues.

mod engine;
mod net;
mod queue;
mod testing;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::rng::SimRng;

pub use engine::{EngineReport, NetStats, ObservationRecord, SimConfig, Simulation, TraceEntry, Traffic};
pub use net::{ChannelKind, CostModel, LatencyModel};
pub use queue::{EventHandle, EventPayload, EventQueue, SimClock, SimEvent};
pub use testing::RecordingEnv;

/// Simulated time in microseconds.
pub type Micros = u64;

/// Per-actor timer name. Setting a timer replaces any pending timer with the
/// same tag on the same actor.
pub type TimerTag = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node{}", self.0)
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "client{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Addr {
    Node(NodeId),
    Client(ClientId),
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Addr::Node(n) => n.fmt(f),
            Addr::Client(c) => c.fmt(f),
        }
    }
}

impl From<NodeId> for Addr {
    fn from(n: NodeId) -> Self {
        Addr::Node(n)
    }
}

impl From<ClientId> for Addr {
    fn from(c: ClientId) -> Self {
        Addr::Client(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RequestId {
    pub client: ClientId,
    pub seq: u64,
}

/// A 0/0 benchmark request: no payload beyond its identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClientRequest {
    pub id: RequestId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientReply {
    pub id: RequestId,
    pub from: NodeId,
    pub leader_hint: Option<NodeId>,
}

/// Protocol-level facts reported to the engine for audits and metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Observation {
    /// Node won an election (Raft term) or became leader of a regency.
    BecameLeader {
        epoch: u64,
    },
    /// A leader gave up the epoch it led.
    SteppedDown {
        epoch: u64,
    },
    /// A new regency was installed at this node.
    EpochInstalled {
        epoch: u64,
    },
    /// ACCEPT emitted for an instance, with the number of distinct WRITE
    /// senders backing it.
    AcceptSent {
        instance: u64,
        backers: usize,
        quorum: usize,
    },
    ValidationFailure,
    Equivocation,
    RequestRejected(RequestId),
}

/// What a protocol handler can do to the outside world.
pub trait Env<M> {
    fn now(&self) -> Micros;
    fn me(&self) -> Addr;
    fn rng(&mut self) -> &mut SimRng;
    fn send(&mut self, to: Addr, msg: M);
    fn set_timer(&mut self, tag: TimerTag, delay: Micros);
    fn cancel_timer(&mut self, tag: TimerTag);
    fn observe(&mut self, obs: Observation);
}

pub trait Actor<M> {
    fn on_start<E: Env<M>>(&mut self, _env: &mut E) {}
    fn on_message<E: Env<M>>(&mut self, env: &mut E, from: Addr, msg: M);
    fn on_timer<E: Env<M>>(&mut self, env: &mut E, tag: TimerTag);
}

/// Message types carried by the engine. Clients are protocol-agnostic and
/// only need to build requests and recognise replies.
pub trait Payload: Clone + fmt::Debug {
    fn client_request(req: ClientRequest) -> Self;
    fn as_reply(&self) -> Option<&ClientReply>;
    /// Short static label used in event traces.
    fn label(&self) -> &'static str;
}
