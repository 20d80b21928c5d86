//! Named random substreams derived from one master seed.
//!
//! Every stochastic component draws from its own stream, keyed by a name and
//! a list of indices (pass, patient id, ...). Streams are independent of the
//! order in which they are created, so parallel rollouts stay reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type RandomStream = ChaCha8Rng;

pub const COHORT: &str = "cohort";
pub const PHYSIOLOGY: &str = "physiology";
pub const MEASUREMENT: &str = "measurement";
pub const POLICY: &str = "policy-sampling";
pub const INIT: &str = "init";

pub fn substream(master: u64, name: &str, index: &[u64]) -> RandomStream {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    for i in index {
        hasher.update(i.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = substream(7, COHORT, &[1]).random();
        let b: u64 = substream(7, COHORT, &[1]).random();
        let c: u64 = substream(7, COHORT, &[2]).random();
        let d: u64 = substream(7, MEASUREMENT, &[1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
