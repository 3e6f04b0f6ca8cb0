use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Micros;
use crate::error::{Error, Result};

/// Point-to-point latency: uniform on `[min, max]` microseconds, with an
/// independent drop probability per transmission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub min_latency_us: Micros,
    pub max_latency_us: Micros,
    pub drop_probability: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self { min_latency_us: 50, max_latency_us: 200, drop_probability: 0.0 }
    }
}

impl LatencyModel {
    pub fn fixed(us: Micros) -> Self {
        Self { min_latency_us: us, max_latency_us: us, drop_probability: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_latency_us > self.max_latency_us {
            return Err(Error::ConfigRejected(format!("latency min {} exceeds max {}", self.min_latency_us, self.max_latency_us)));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(Error::ConfigRejected(format!("drop probability {} outside [0,1]", self.drop_probability)));
        }
        Ok(())
    }

    pub fn sample_latency<R: Rng>(&self, rng: &mut R) -> Micros {
        rng.gen_range(self.min_latency_us..=self.max_latency_us)
    }

    /// Draws the drop decision. No randomness is consumed when the
    /// probability is zero.
    pub fn sample_drop<R: Rng>(&self, rng: &mut R) -> bool {
        self.drop_probability > 0.0 && rng.gen_bool(self.drop_probability)
    }
}

/// Delivery guarantee of the transport under a protocol.
///
/// `Lossy` channels lose dropped messages for good; the protocol must
/// recover on its own. `Reliable` channels retransmit a dropped message
/// after `retransmit_us`, and only a crashed receiver loses it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Lossy,
    Reliable { retransmit_us: Micros },
}

/// CPU time a node spends per handled message and per emitted message,
/// before any load multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub handle_us: Micros,
    pub send_us: Micros,
}

impl CostModel {
    pub const FREE: CostModel = CostModel { handle_us: 0, send_us: 0 };
}

pub(crate) fn scaled(base: Micros, factor: f64) -> Micros {
    if base == 0 {
        0
    } else {
        (base as f64 * factor).round() as Micros
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn degenerate_window_is_deterministic() {
        let m = LatencyModel::fixed(100);
        let mut r = rng::stream(1, "net", 0);
        assert!((0..100).all(|_| m.sample_latency(&mut r) == 100));
    }

    #[test]
    fn validation() {
        assert!(LatencyModel { min_latency_us: 5, max_latency_us: 4, drop_probability: 0.0 }.validate().is_err());
        assert!(LatencyModel { drop_probability: 1.5, ..Default::default() }.validate().is_err());
        assert!(LatencyModel::default().validate().is_ok());
    }

    #[test]
    fn samples_stay_in_window() {
        let m = LatencyModel::default();
        let mut r = rng::stream(9, "net", 3);
        for _ in 0..10_000 {
            let l = m.sample_latency(&mut r);
            assert!((50..=200).contains(&l));
        }
    }
}
