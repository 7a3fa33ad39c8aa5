//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a [`RngStream`] obtained
//! from a [`StreamKey`]. The key is packed injectively into the 256-bit
//! ChaCha key, so two distinct keys always select unrelated streams and any
//! single protocol cell can be recomputed in isolation.
//!
//! Key layout (little-endian):
//!
//! | bytes  | field     |
//! |--------|-----------|
//! | 0..8   | `seed`    |
//! | 8..16  | `scope`   |
//! | 16..20 | `index`   |
//! | 20..24 | `repeat`  |
//! | 24..28 | `k`       |
//! | 28..32 | `domain`  |
//!
//! For the variance protocol `seed` is the protocol seed, `scope` the
//! checkpoint's init seed, `index` the example (or mean-estimate) index,
//! `repeat` the repeat index and `k` the chain length. Training uses `scope`
//! for the epoch and `index` for the position within the epoch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for all sampling.
pub type RngStream = ChaCha8Rng;

/// What a stream is used for. Part of the key so that, e.g., CD and baseline
/// draws for the same example never share randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Domain {
    Init = 1,
    Shuffle = 2,
    TrainExample = 3,
    /// CD-k estimates; also the positive particle and chain of I-CD-k.
    CdEstimate = 10,
    Baseline = 11,
    /// Choice and binarization of the I-CD chain start.
    IcdStart = 12,
    /// One persistent chain of the subsequent-mean protocol.
    PcdChain = 13,
    /// Independent baseline estimates compared against PCD means.
    BaselineMean = 14,
    /// Positive particle shared by all repeats in fixed-binarization mode.
    FixedBinarization = 15,
    Test = 99,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub scope: u64,
    pub index: u32,
    pub repeat: u32,
    pub k: u32,
    pub domain: Domain,
}

impl StreamKey {
    pub fn new(domain: Domain, seed: u64) -> Self {
        StreamKey {
            seed,
            scope: 0,
            index: 0,
            repeat: 0,
            k: 0,
            domain,
        }
    }

    pub fn scope(mut self, scope: u64) -> Self {
        self.scope = scope;
        self
    }

    pub fn index(mut self, index: usize) -> Self {
        self.index = u32::try_from(index).expect("stream index exceeds u32");
        self
    }

    pub fn repeat(mut self, repeat: usize) -> Self {
        self.repeat = u32::try_from(repeat).expect("repeat index exceeds u32");
        self
    }

    pub fn k(mut self, k: usize) -> Self {
        self.k = u32::try_from(k).expect("k exceeds u32");
        self
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.scope.to_le_bytes());
        key[16..20].copy_from_slice(&self.index.to_le_bytes());
        key[20..24].copy_from_slice(&self.repeat.to_le_bytes());
        key[24..28].copy_from_slice(&self.k.to_le_bytes());
        key[28..32].copy_from_slice(&(self.domain as u32).to_le_bytes());
        key
    }

    pub fn rng(&self) -> RngStream {
        ChaCha8Rng::from_seed(self.to_bytes())
    }
}

/// Convenience stream for ad-hoc seeding (tests, examples).
pub fn stream_from_seed(seed: u64) -> RngStream {
    StreamKey::new(Domain::Test, seed).rng()
}
