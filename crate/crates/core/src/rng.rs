//! Seeded random streams.
//!
//! A run has one root seed. Every consumer (each node, each client, the
//! network, the fault injector) draws from its own stream whose seed is
//!
//! ```text
//! stream_seed = splitmix64(root ^ fnv1a64(label) ^ splitmix64(index))
//! ```
//!
//! and the stream itself is `ChaCha8Rng::seed_from_u64(stream_seed)`. Adding
//! a node therefore never shifts the draws seen by the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    splitmix64(root ^ fnv1a64(label.as_bytes()) ^ splitmix64(index))
}

pub fn stream(root: u64, label: &str, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(root, label, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn streams_are_independent_of_each_other() {
        let a: u64 = stream(7, "node", 0).gen();
        let b: u64 = stream(7, "node", 1).gen();
        let c: u64 = stream(7, "client", 0).gen();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, stream(7, "node", 0).gen::<u64>());
    }
}
