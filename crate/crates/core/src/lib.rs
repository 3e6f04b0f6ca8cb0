//! Deterministic discrete-event simulation of multi-master replication clusters.
//!
//! Two replication protocols run over the same simulated network: a
//! crash-tolerant Raft variant ([`raft`]) and a Byzantine-tolerant
//! PROPOSE/WRITE/ACCEPT protocol ([`bft`]). The [`faults`] module injects
//! crashes and DDoS-style load, [`harness`] drives closed-loop benchmark
//! scenarios and exports metrics, and [`scheduler`] implements the
//! filter-then-rank pod placement used by the orchestrator masters.

pub mod bft;
pub mod error;
pub mod faults;
pub mod harness;
pub mod parallel;
pub mod quorum;
pub mod raft;
pub mod rng;
pub mod scheduler;
pub mod sim;

pub use error::{Error, Result};
pub use quorum::{ClusterConfig, Protocol, ToleranceBounds};
pub use sim::{Addr, ClientId, Micros, NodeId, RequestId};
