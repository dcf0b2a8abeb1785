//! Counter-based deterministic randomness.
//!
//! Every random decision in this crate is drawn from a [`KeyedRng`] that is
//! constructed from an explicit [`RngKey`]. Keys are derived by mixing tag
//! values into a parent key, so any part of a run (one augmentation of one
//! example at one step) can be replayed in isolation and results do not
//! depend on batch or worker scheduling. There is no global RNG state.

use rand::RngCore;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// splitmix64 finalizer; good avalanche for key mixing and stream output.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A derivable key identifying one random decision point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngKey(u64);

impl RngKey {
    pub fn new(seed: u64) -> Self {
        RngKey(mix(seed.wrapping_add(GOLDEN)))
    }

    /// Derives a child key for the given tag. Distinct tags give
    /// statistically independent children.
    pub fn child(self, tag: u64) -> Self {
        RngKey(mix(self.0 ^ tag.wrapping_mul(GOLDEN).wrapping_add(GOLDEN)))
    }

    /// Tags from short strings, for readable derivation paths like
    /// `key.child_str("aug")`.
    pub fn child_str(self, tag: &str) -> Self {
        let mut acc: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in tag.as_bytes() {
            acc = (acc ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.child(acc)
    }

    pub fn stream(self) -> KeyedRng {
        KeyedRng {
            key: self.0,
            counter: 0,
        }
    }

    /// The raw key, for seeding nested derivation roots.
    pub fn value(self) -> u64 {
        self.0
    }
}

/// Counter-based generator: output i is a hash of (key, i).
#[derive(Debug, Clone)]
pub struct KeyedRng {
    key: u64,
    counter: u64,
}

impl KeyedRng {
    pub fn next(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key ^ self.counter.wrapping_mul(GOLDEN))
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        // 53 mantissa bits
        (self.next() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). n must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // widening multiply avoids modulo bias
        ((self.next() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn int_in(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        lo + self.below((hi - lo + 1) as usize) as i64
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// +1 or -1 with equal probability.
    pub fn sign(&mut self) -> f64 {
        if self.next() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// k distinct values from 0..n, in uniformly random order.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        // partial Fisher-Yates: the first k slots are a uniform ordered sample
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

// rand_distr distributions (Normal, Beta) are sampled through the rand traits.
impl RngCore for KeyedRng {
    fn next_u32(&mut self) -> u32 {
        (self.next() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        let mut chunks = dest.chunks_exact_mut(8);
        for chunk in &mut chunks {
            chunk.copy_from_slice(&self.next().to_le_bytes());
        }
        let rem = chunks.into_remainder();
        if !rem.is_empty() {
            let bytes = self.next().to_le_bytes();
            rem.copy_from_slice(&bytes[..rem.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_stream() {
        let k = RngKey::new(7).child(3).child_str("aug");
        let a: Vec<u64> = (0..8).map(|_| k.stream().next()).collect();
        // all identical: fresh stream each time
        assert!(a.iter().all(|&x| x == a[0]));
        let mut s1 = k.stream();
        let mut s2 = k.stream();
        for _ in 0..100 {
            assert_eq!(s1.next(), s2.next());
        }
    }

    #[test]
    fn children_differ() {
        let k = RngKey::new(7);
        assert_ne!(k.child(0).stream().next(), k.child(1).stream().next());
        assert_ne!(k.child_str("a").stream().next(), k.child_str("b").stream().next());
        assert_ne!(RngKey::new(0).stream().next(), RngKey::new(1).stream().next());
    }

    #[test]
    fn uniform_bounds() {
        let mut s = RngKey::new(42).stream();
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
        }
        for _ in 0..10_000 {
            let v = s.int_in(-3, 7);
            assert!((-3..=7).contains(&v));
        }
    }

    #[test]
    fn below_is_roughly_uniform() {
        let mut s = RngKey::new(1).stream();
        let mut counts = [0usize; 10];
        for _ in 0..100_000 {
            counts[s.below(10)] += 1;
        }
        for &c in &counts {
            assert!((8_000..12_000).contains(&c), "counts {counts:?}");
        }
    }

    #[test]
    fn sample_distinct_is_distinct_and_complete() {
        let mut s = RngKey::new(5).stream();
        let sample = s.sample_distinct(50, 20);
        assert_eq!(sample.len(), 20);
        let mut sorted = sample.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 20);
        assert!(sorted.iter().all(|&i| i < 50));

        let full = s.sample_distinct(10, 10);
        let mut f = full.clone();
        f.sort_unstable();
        assert_eq!(f, (0..10).collect::<Vec<_>>());
    }
}
