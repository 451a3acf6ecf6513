//! Seeded, splittable random streams.
//!
//! Everything random in this crate (synthetic data, corruption, dropout
//! sampling, weight init, shuffles) draws from an [`RngStream`] so that a
//! `(seed, stream_id)` pair fully determines the value sequence. The
//! generator is xoshiro256++ seeded through splitmix64; the uniform integer
//! and float paths use only integer and IEEE basic operations and are
//! bit-portable. The Gaussian path goes through `f64::ln`/`cos`, which std
//! provides with at most 1 ulp of platform variance; after rounding to f32
//! the sequences are identical on every platform we target.

/// A deterministic random stream identified by `(seed, stream_id)`.
///
/// Streams are single-owner: parallel tasks must derive their own stream via
/// [`RngStream::child`] instead of sharing one.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    state: [u64; 4],
    gauss_spare: Option<f64>,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut sm = seed ^ stream_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut state = [0u64; 4];
        for slot in &mut state {
            *slot = splitmix64(&mut sm);
        }
        // xoshiro must not start from the all-zero state
        if state.iter().all(|&w| w == 0) {
            state[0] = 0x1;
        }
        RngStream {
            seed,
            stream_id,
            state,
            gauss_spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derives an independent stream; `salt` distinguishes siblings.
    pub fn child(&self, salt: u64) -> RngStream {
        let mut mix = self.stream_id;
        let mixed = splitmix64(&mut mix) ^ salt.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        RngStream::new(self.seed, mixed)
    }

    /// xoshiro256++ step.
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform f32 in [0, 1) with full 24-bit mantissa resolution.
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform f64 in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `[0, bound)`. `bound` must be nonzero.
    pub fn next_index(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        // multiply-shift; bias below 2^-53 at desk scale
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    /// Standard normal sample (Box-Muller, computed in f64).
    pub fn next_gaussian(&mut self) -> f32 {
        if let Some(z) = self.gauss_spare.take() {
            return z as f32;
        }
        // keep u1 strictly positive so ln is finite
        let u1 = ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.gauss_spare = Some(r * theta.sin());
        (r * theta.cos()) as f32
    }

    /// Uniform f32 in [lo, hi).
    pub fn next_range(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.next_f32()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }

    /// A seeded permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        self.shuffle(&mut order);
        order
    }
}
