//! Seed derivation.
//!
//! Every random draw in the crate descends from one root seed. A child seed
//! is `splitmix64(root ^ fnv1a(tag)) ^ splitmix64(counter + 1)` and feeds a
//! ChaCha8 generator, so a subsystem tag plus a counter (step index, sample
//! index, sequence index) fully identifies a stream. Nothing is carried
//! between calls, which is what makes resumed training bit-identical to an
//! uninterrupted run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Child seed for `(root, tag, counter)`.
pub fn derive(root: u64, tag: &str, counter: u64) -> u64 {
    splitmix64(root ^ fnv1a(tag)) ^ splitmix64(counter.wrapping_add(1))
}

pub fn stream(root: u64, tag: &str, counter: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive(root, tag, counter))
}

/// Root-seeded factory handed to subsystems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    pub root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn seed(&self, tag: &str, counter: u64) -> u64 {
        derive(self.root, tag, counter)
    }

    pub fn rng(&self, tag: &str, counter: u64) -> Rng {
        stream(self.root, tag, counter)
    }

    pub fn child(&self, tag: &str) -> SeedTree {
        SeedTree::new(derive(self.root, tag, 0))
    }
}
