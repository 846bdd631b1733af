//! Deterministic counter-based random number generator.
//!
//! Every random choice in this crate — scene synthesis, parameter init,
//! epoch shuffles — flows through [`CounterRng`] so that a (seed, label)
//! pair pins down the exact byte stream on any platform or language. The
//! generator is SplitMix64 written in counter form: output `n` of stream
//! `seed` is
//!
//! ```text
//! out(seed, n) = mix(seed + (n + 1) * 0x9E3779B97F4A7C15)
//! mix(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!         z ^= z >> 27; z *= 0x94D049BB133111EB;
//!         z ^= z >> 31
//! ```
//!
//! (wrapping arithmetic throughout). This matches the published SplitMix64
//! sequence for the same seed, is trivially reimplementable, and supports
//! O(1) jumps. Independent substreams are derived by hashing a textual
//! label into the seed; see [`CounterRng::stream`].

/// Weyl increment of SplitMix64 (2^64 / golden ratio, odd).
const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a, used only to fold stream labels into seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Counter-based deterministic RNG (SplitMix64 sequence).
#[derive(Debug, Clone)]
pub struct CounterRng {
    seed: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng { seed, counter: 0 }
    }

    /// Derive an independent substream. Streams with different labels from
    /// the same parent are uncorrelated for practical purposes, and adding
    /// a new label never perturbs existing ones — scene content stays put
    /// when unrelated knobs appear.
    pub fn stream(&self, label: &str) -> CounterRng {
        CounterRng::new(mix(self.seed ^ fnv1a(label.as_bytes())))
    }

    /// Numeric variant of [`stream`](Self::stream) for per-index substreams
    /// (per scene, per layer, ...).
    pub fn stream_u64(&self, tag: u64) -> CounterRng {
        CounterRng::new(mix(self.seed ^ mix(tag.wrapping_add(GAMMA))))
    }

    pub fn next_u64(&mut self) -> u64 {
        let n = self.counter;
        self.counter += 1;
        mix(self.seed.wrapping_add(n.wrapping_add(1).wrapping_mul(GAMMA)))
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [0, 1) with 24 random bits.
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Multiply-shift bound; the bias is
    /// below 2^-53 for any n this crate uses, which is fine for shuffles
    /// and sampling (we are not doing cryptography).
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box–Muller. Consumes two outputs per call and
    /// discards the sine branch, keeping the counter advance predictable.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]: keep ln finite
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_published_splitmix64_vector() {
        // First three outputs for seed 0, as published with the reference
        // SplitMix64 implementation.
        let mut r = CounterRng::new(0);
        assert_eq!(r.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(r.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(r.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn frozen_outputs_for_other_seeds() {
        let mut r = CounterRng::new(42);
        assert_eq!(r.next_u64(), 0xBDD7_3226_2FEB_6E95);
        let mut r = CounterRng::new(0xDEAD_BEEF);
        assert_eq!(r.next_u64(), 0x4ADF_B90F_68C9_EB9B);
    }

    #[test]
    fn same_seed_same_sequence() {
        let mut a = CounterRng::new(911);
        let mut b = CounterRng::new(911);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_are_label_dependent_and_stable() {
        let root = CounterRng::new(7);
        let mut s1 = root.stream("bands");
        let mut s2 = root.stream("dem");
        let mut s1_again = root.stream("bands");
        assert_eq!(s1.next_u64(), s1_again.next_u64());
        // Not a correctness requirement, but catastrophic if it failed:
        assert_ne!(s1.next_u64(), s2.next_u64());
    }

    #[test]
    fn unit_floats_stay_in_range() {
        let mut r = CounterRng::new(123);
        for _ in 0..10_000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
            let y = r.next_f32();
            assert!((0.0..1.0).contains(&y));
        }
    }

    #[test]
    fn normal_has_sane_moments() {
        let mut r = CounterRng::new(5);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut r = CounterRng::new(99);
        let mut v: Vec<u32> = (0..257).collect();
        r.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..257).collect::<Vec<_>>());
        assert_ne!(v, (0..257).collect::<Vec<_>>(), "identity permutation is wildly improbable");
    }
}
