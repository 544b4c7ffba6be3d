//! Counter-based deterministic random number generator.
//!
//! The generator is a pure function of `(seed, counter)`: draw `n` mixes the
//! seed with the counter value through the SplitMix64 finalizer. This makes
//! streams bitwise-reproducible across runs and platforms (only integer ops
//! and IEEE-754 double arithmetic are involved), makes state trivially
//! serializable, and allows O(1) forking of independent substreams.

/// Deterministic RNG addressed by `(seed, counter)`.
///
/// Identical `(seed, counter)` pairs yield identical sample streams. The
/// counter advances by one per `next_u64` call (two per [`normal`] draw,
/// one per [`gumbel`] draw).
///
/// [`normal`]: RngState::normal
/// [`gumbel`]: RngState::gumbel
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    seed: u64,
    counter: u64,
}

/// Odd constant from the SplitMix64 reference increment (golden-ratio based).
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    /// Start a stream at counter zero.
    pub fn new(seed: u64) -> Self {
        RngState { seed, counter: 0 }
    }

    /// Resume a stream at an arbitrary counter position.
    pub fn at(seed: u64, counter: u64) -> Self {
        RngState { seed, counter }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Derive an independent substream. The child's seed is a mix of this
    /// stream's seed and the current counter, so forks at different points
    /// (or from different parents) are decorrelated.
    pub fn fork(&mut self) -> RngState {
        RngState::new(self.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        splitmix64(self.seed ^ self.counter.wrapping_mul(GOLDEN_GAMMA))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) has no valid output");
        // For the small n used here (< 2^32), floating-point scaling keeps
        // bias below 2^-21 per draw, which is irrelevant for this crate.
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal via Box-Muller (two uniforms per draw, cosine
    /// branch). Deterministic: exactly two counter increments.
    pub fn normal(&mut self) -> f64 {
        let u1 = (1.0 - self.next_f64()).max(f64::MIN_POSITIVE); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Standard Gumbel draw `-ln(-ln(u))`. The uniform is clamped to
    /// `[1e-12, 1 - 1e-12]` so the result is always finite.
    pub fn gumbel(&mut self) -> f64 {
        let u = self.next_f64().clamp(1e-12, 1.0 - 1e-12);
        -(-u.ln()).ln()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// `k` distinct indices drawn uniformly from `[0, n)`, returned sorted
    /// ascending. Panics if `k > n`.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} distinct indices from {n}");
        let mut all: Vec<usize> = (0..n).collect();
        self.shuffle(&mut all);
        let mut picked = all[..k].to_vec();
        picked.sort_unstable();
        picked
    }
}
