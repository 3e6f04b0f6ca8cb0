//! Cluster sizing: fault-tolerance thresholds and quorum sizes for both
//! replication protocols.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::NodeId;

/// Smallest cluster for which the Byzantine protocol tolerates a fault.
pub const MIN_BFT_NODES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Raft,
    Bft,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Raft => "raft",
            Protocol::Bft => "bft",
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raft" => Ok(Protocol::Raft),
            "bft" => Ok(Protocol::Bft),
            other => Err(Error::ConfigRejected(format!("unknown protocol {other:?}"))),
        }
    }
}

/// Maximum number of crash faults a majority protocol tolerates: `floor((n-1)/2)`.
pub fn crash_tolerance(n: usize) -> Result<usize> {
    check_n(n)?;
    Ok((n - 1) / 2)
}

/// Maximum number of Byzantine faults: `floor((n-1)/3)`.
pub fn byz_tolerance(n: usize) -> Result<usize> {
    check_n(n)?;
    Ok((n - 1) / 3)
}

/// Votes a Raft candidate needs, and acknowledgements a leader needs to commit.
///
/// A strict majority, `floor(n/2) + 1`. For odd `n` this is `f + 1`; for even
/// `n`, `f + 1` would be exactly half and two such quorums could be disjoint.
pub fn raft_majority(n: usize) -> Result<usize> {
    check_n(n)?;
    Ok(n / 2 + 1)
}

/// Matching WRITE (and ACCEPT) messages needed: `ceil((n + f' + 1) / 2)`.
///
/// Still computed for `n < 4`, where `f' = 0` and the protocol offers no
/// Byzantine tolerance; see [`is_degenerate_bft`].
pub fn bft_write_quorum(n: usize) -> Result<usize> {
    let f = byz_tolerance(n)?;
    Ok((n + f + 1).div_ceil(2))
}

pub fn is_degenerate_bft(n: usize) -> bool {
    n < MIN_BFT_NODES
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidCluster("cluster must have at least one node".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToleranceBounds {
    pub f_crash: usize,
    pub f_byz: usize,
    pub raft_majority: usize,
    pub bft_write_quorum: usize,
}

impl ToleranceBounds {
    pub fn for_size(n: usize) -> Result<Self> {
        Ok(Self {
            f_crash: crash_tolerance(n)?,
            f_byz: byz_tolerance(n)?,
            raft_majority: raft_majority(n)?,
            bft_write_quorum: bft_write_quorum(n)?,
        })
    }

    /// Faults tolerated by the given protocol.
    pub fn tolerated(&self, protocol: Protocol) -> usize {
        match protocol {
            Protocol::Raft => self.f_crash,
            Protocol::Bft => self.f_byz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterConfig {
    pub n: usize,
    pub protocol: Protocol,
    pub node_ids: Vec<NodeId>,
    pub bounds: ToleranceBounds,
}

impl ClusterConfig {
    pub fn new(n: usize, protocol: Protocol) -> Result<Self> {
        Ok(Self { n, protocol, node_ids: (0..n).map(NodeId).collect(), bounds: ToleranceBounds::for_size(n)? })
    }

    /// True for a Byzantine cluster too small to tolerate any fault. Such
    /// clusters are permitted but callers may want to warn.
    pub fn is_degenerate(&self) -> bool {
        self.protocol == Protocol::Bft && is_degenerate_bft(self.n)
    }
}
