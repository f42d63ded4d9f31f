//! Deterministic seed fan-out.
//!
//! A single root seed is split into named substreams (`"init"`, `"shuffle"`,
//! `"prior"`, ...) that are further indexed by a counter, so each component
//! draws from its own generator regardless of execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const PRIOR: &str = "prior";
pub const SOBOL_SHIFT: &str = "sobol-shift";
pub const SUBSAMPLE: &str = "subsample";
pub const VALIDATION: &str = "validation";
pub const DATA: &str = "data";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Child seed for `label`/`index`, usable as the root of a nested tree.
    pub fn derive(&self, label: &str, index: u64) -> u64 {
        splitmix64(splitmix64(self.root ^ fnv1a(label)) ^ splitmix64(index.wrapping_add(0x5851_f42d)))
    }

    pub fn subtree(&self, label: &str, index: u64) -> SeedTree {
        SeedTree::new(self.derive(label, index))
    }

    /// Generator for substream `label`, counter `index`.
    pub fn rng(&self, label: &str, index: u64) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.root ^ fnv1a(label)));
        rng.set_stream(index);
        rng
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
