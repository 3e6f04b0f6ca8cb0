use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bft::BftConfig;
use crate::error::{Error, Result};
use crate::faults::{FaultKind, LoadModel};
use crate::quorum::{Protocol, ToleranceBounds};
use crate::raft::RaftConfig;
use crate::sim::{ChannelKind, CostModel, LatencyModel, Micros, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Fewer than the tolerated number of masters are down; the attack
    /// slows the victim without knocking it out.
    UnderThreshold,
    /// Exactly the tolerated number of masters are down, so the victim is
    /// needed for every quorum.
    AtThreshold,
    Custom,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::UnderThreshold => "1",
            Scenario::AtThreshold => "2",
            Scenario::Custom => "custom",
        }
    }

    /// Attack applied to the victim unless the config overrides it.
    pub fn default_attack(self) -> FaultKind {
        match self {
            Scenario::UnderThreshold => FaultKind::CpuLoad,
            Scenario::AtThreshold | Scenario::Custom => FaultKind::NetworkFlooding,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "under_threshold" => Ok(Scenario::UnderThreshold),
            "2" | "at_threshold" => Ok(Scenario::AtThreshold),
            "custom" => Ok(Scenario::Custom),
            other => Err(Error::ConfigRejected(format!("unknown scenario {other:?} (expected 1, 2 or custom)"))),
        }
    }
}

/// Request/response payload shape. Only the empty 0/0 micro-benchmark is
/// modelled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    #[default]
    ZeroZero,
}

pub const DEFAULT_RATES: [f64; 7] = [0.0, 2.0, 4.0, 4.5, 5.0, 5.5, 6.0];

/// Calibrated per-message CPU costs of a master.
pub const DEFAULT_COSTS: CostModel = CostModel { handle_us: 150, send_us: 40 };

pub const DEFAULT_RETRANSMIT_US: Micros = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub protocol: Protocol,
    pub n: usize,
    pub clients: usize,
    pub benchmark: Benchmark,
    pub attack_rates_gbps: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
    pub horizon_us: Micros,
    /// Time given to the cluster to settle before clients and the attack
    /// start.
    pub warmup_us: Micros,
    pub sample_interval_us: Micros,
    /// DDoS target; `None` picks the leader at the end of warmup.
    pub victim: Option<NodeId>,
    pub attack: Option<FaultKind>,
    /// Masters crashed at time zero in the custom scenario.
    pub crashed: usize,
    pub latency: LatencyModel,
    pub costs: CostModel,
    /// `None` uses the protocol's transport: lossy for Raft, retransmitting
    /// for BFT.
    pub channel: Option<ChannelKind>,
    /// `None` uses the default model for the cluster size.
    pub load: Option<LoadModel>,
    pub raft: RaftConfig,
    pub bft: BftConfig,
    pub client_retry_us: Micros,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::UnderThreshold,
            protocol: Protocol::Raft,
            n: 5,
            clients: 2,
            benchmark: Benchmark::ZeroZero,
            attack_rates_gbps: DEFAULT_RATES.to_vec(),
            repetitions: 20,
            seed: 1,
            horizon_us: 10_000_000,
            warmup_us: 1_000_000,
            sample_interval_us: 100_000,
            victim: None,
            attack: None,
            crashed: 0,
            latency: LatencyModel::default(),
            costs: DEFAULT_COSTS,
            channel: None,
            load: None,
            raft: RaftConfig::default(),
            bft: BftConfig::default(),
            client_retry_us: 250_000,
        }
    }
}

impl ScenarioConfig {
    pub fn new(protocol: Protocol, n: usize, scenario: Scenario) -> Self {
        Self { protocol, n, scenario, ..Self::default() }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigRejected(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Export { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn tolerance(&self) -> Result<usize> {
        Ok(ToleranceBounds::for_size(self.n)?.tolerated(self.protocol))
    }

    /// Number of masters crashed before the run starts. They are taken from
    /// the highest ids so that node 0 stays available as a leader.
    pub fn pre_crashed(&self) -> Result<usize> {
        let f = self.tolerance()?;
        Ok(match self.scenario {
            Scenario::UnderThreshold => f.saturating_sub(1),
            Scenario::AtThreshold => f,
            Scenario::Custom => self.crashed,
        })
    }

    pub fn crashed_nodes(&self) -> Result<Vec<NodeId>> {
        let k = self.pre_crashed()?;
        Ok((self.n - k..self.n).rev().map(NodeId).collect())
    }

    pub fn attack_kind(&self) -> FaultKind {
        self.attack.unwrap_or(self.scenario.default_attack())
    }

    pub fn channel(&self) -> ChannelKind {
        self.channel.unwrap_or(match self.protocol {
            Protocol::Raft => ChannelKind::Lossy,
            Protocol::Bft => ChannelKind::Reliable { retransmit_us: DEFAULT_RETRANSMIT_US },
        })
    }

    pub fn load_model(&self) -> LoadModel {
        self.load.unwrap_or_else(|| LoadModel::for_cluster(self.n))
    }

    pub fn validate(&self) -> Result<()> {
        let reject = |msg: String| Err(Error::ConfigRejected(msg));
        if self.n == 0 {
            return reject("a cluster needs at least one master".into());
        }
        if self.clients == 0 {
            return reject("at least one client is required".into());
        }
        if self.repetitions == 0 {
            return reject("repetitions must be at least 1".into());
        }
        if self.attack_rates_gbps.is_empty() {
            return reject("no attack rates given".into());
        }
        if let Some(r) = self.attack_rates_gbps.iter().find(|r| !r.is_finite() || **r < 0.0) {
            return reject(format!("attack rate {r} must be a non-negative number"));
        }
        if self.warmup_us >= self.horizon_us {
            return reject(format!("warmup {} µs leaves nothing of the {} µs horizon", self.warmup_us, self.horizon_us));
        }
        if self.sample_interval_us == 0 || self.client_retry_us == 0 {
            return reject("sample interval and client retry must be positive".into());
        }
        if self.attack == Some(FaultKind::Crash) {
            return reject("the attack must be cpu_load or network_flooding; use crashed for crashes".into());
        }
        self.latency.validate()?;
        self.load_model().validate()?;
        self.raft.timeouts.validate()?;
        self.bft.validate()?;

        let f = self.tolerance()?;
        let k = self.pre_crashed()?;
        match self.scenario {
            Scenario::AtThreshold if f == 0 => {
                return reject(format!(
                    "{} with n={} tolerates no faults, so the at-threshold scenario has nothing to crash",
                    self.protocol, self.n
                ));
            }
            Scenario::Custom if k >= self.n => {
                return reject(format!("cannot crash {k} of {} masters", self.n));
            }
            _ => {}
        }
        if let Some(v) = self.victim {
            if v.0 >= self.n {
                return reject(format!("victim {v} outside cluster of {}", self.n));
            }
            if v.0 >= self.n - k {
                return reject(format!("victim {v} is one of the crashed masters"));
            }
        }
        Ok(())
    }
}
