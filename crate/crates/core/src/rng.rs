//! Seeded randomness.
//!
//! Every random decision in the toolkit draws from [`SplitMix64`], a 64-bit
//! counter-based generator whose output is a pure function of its counter.
//! Streams are derived from a master seed with [`SeedTree`], so a value drawn
//! for (stream, epoch, step, index) never depends on how many values other
//! streams consumed.

/// Weyl increment of SplitMix64 (the golden-ratio constant).
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

/// SplitMix64 finalizer (Stafford variant 13).
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SplitMix64: `state += GOLDEN_GAMMA; return mix64(state)`.
///
/// The whole generator state is the counter, which is what checkpoints store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Unbiased integer in `0..n` (multiply-shift with rejection).
    ///
    /// Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) has no valid output");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let wide = u128::from(self.next_u64()) * u128::from(n);
            if (wide as u64) >= threshold {
                return (wide >> 64) as usize;
            }
        }
    }

    /// True with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// In-place Fisher-Yates shuffle (Durstenfeld, high index downwards).
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Named random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    DataShuffle,
    Augmentation,
    Dropout,
    Init,
    PosttrainSampling,
    PosttrainMasking,
}

impl Stream {
    pub const ALL: [Stream; 6] = [
        Stream::DataShuffle,
        Stream::Augmentation,
        Stream::Dropout,
        Stream::Init,
        Stream::PosttrainSampling,
        Stream::PosttrainMasking,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stream::DataShuffle => "data-shuffle",
            Stream::Augmentation => "augmentation",
            Stream::Dropout => "dropout",
            Stream::Init => "init",
            Stream::PosttrainSampling => "posttrain-sampling",
            Stream::PosttrainMasking => "posttrain-masking",
        }
    }
}

/// Derives independent stream seeds from one master seed.
///
/// `stream_seed = mix64(fnv1a(master_le ∥ name ∥ 0xFF ∥ epoch_le ∥ step_le ∥ index_le))`.
/// All integers are hashed as little-endian u64 so the derivation is identical
/// on every platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn seed(&self, stream: Stream, epoch: u64, step: u64, index: u64) -> u64 {
        hash64(self.master, stream.name(), epoch, step, index)
    }

    pub fn rng(&self, stream: Stream, epoch: u64, step: u64, index: u64) -> SplitMix64 {
        SplitMix64::new(self.seed(stream, epoch, step, index))
    }
}

pub fn hash64(master: u64, name: &str, epoch: u64, step: u64, index: u64) -> u64 {
    let mut h = FNV_OFFSET;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    feed(&master.to_le_bytes());
    feed(name.as_bytes());
    feed(&[0xFF]);
    feed(&epoch.to_le_bytes());
    feed(&step.to_le_bytes());
    feed(&index.to_le_bytes());
    mix64(h)
}
