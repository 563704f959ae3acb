//! Seeded pseudo-randomness: splitmix64 stream plus a Fisher-Yates shuffle.
//!
//! Every random choice in the pipeline (candidate shuffles, negative-subset
//! sampling, noisy mock oracles) flows through this generator so that runs
//! reproduce bit-exactly from a single 64-bit seed, on any platform.

/// splitmix64 stream (Steele, Lea & Flood 2014 mixing constants).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, bound)` by rejection, so small bounds stay unbiased.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    /// Uniform f64 in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// In-place Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Sample `k` distinct indices from `0..n`, returned in ascending order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        // partial Fisher-Yates: fix positions from the end, take the tail
        for i in ((n - k)..n).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            pool.swap(i, j);
        }
        let mut picked: Vec<usize> = pool.split_off(n - k);
        picked.sort_unstable();
        picked
    }
}

/// Derive an independent stream seed for a work item, so per-item streams
/// stay reproducible when items are processed in parallel.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut s = SplitMix64::new(seed ^ index.wrapping_mul(0x9e3779b97f4a7c15));
    s.next_u64()
}
