//! Seeded random streams. Every consumer derives its own stream from the
//! run seed and a fixed name, so changing how one stage draws numbers never
//! shifts another stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Named sub-stream of `seed`.
pub fn stream(seed: u64, name: &str) -> Rng {
    ChaCha8Rng::from_seed(digest(seed, name))
}

/// Child seed of `seed` for an independent consumer called `name`.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let d = digest(seed, name);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn digest(seed: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, "data").gen();
        let b: u64 = stream(7, "data").gen();
        let c: u64 = stream(7, "init").gen();
        let d: u64 = stream(8, "data").gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(derive_seed(7, "x"), derive_seed(7, "x"));
        assert_ne!(derive_seed(7, "x"), derive_seed(7, "y"));
    }
}
