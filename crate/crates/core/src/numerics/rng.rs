use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::C64;

/// Reproducible random stream keyed by `(master_seed, stream_id)`.
///
/// Backed by ChaCha8: the 256-bit key is expanded from `master_seed` with the
/// generator's documented PCG32 seeding routine and `stream_id` selects the
/// ChaCha stream (nonce). Output is platform independent and distinct stream
/// ids never overlap.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_id);
        Self { master_seed, stream_id, inner }
    }

    /// Substream derived from this stream's id and a label path.
    ///
    /// Derivation is a pure function of `(stream_id, labels)` and does not
    /// consume any draws from `self`.
    pub fn derive(&self, labels: &[u64]) -> Self {
        let id = labels.iter().fold(self.stream_id, |acc, &l| splitmix64(acc ^ splitmix64(l)));
        Self::new(self.master_seed, id)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Circularly-symmetric complex Gaussian with total variance `var`.
    pub fn complex_normal(&mut self, var: f64) -> C64 {
        let s = (0.5 * var).sqrt();
        C64::new(s * self.standard_normal(), s * self.standard_normal())
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn sign(&mut self) -> i8 {
        if self.inner.random::<bool>() {
            1
        } else {
            -1
        }
    }

    /// Fisher-Yates shuffle in place.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 8);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn derive_is_pure() {
        let root = RngStream::new(1, 0);
        let mut a = root.derive(&[3, 4]);
        let mut b = root.derive(&[3, 4]);
        let mut c = root.derive(&[4, 3]);
        let x = a.next_u64();
        assert_eq!(x, b.next_u64());
        assert_ne!(x, c.next_u64());
    }

    #[test]
    fn complex_normal_variance() {
        let mut rng = RngStream::new(3, 1);
        let n = 200_000;
        let p: f64 = (0..n).map(|_| rng.complex_normal(2.0).norm_sqr()).sum::<f64>() / n as f64;
        assert!((p - 2.0).abs() < 0.03, "{p}");
    }

    #[test]
    fn known_first_draw_is_stable() {
        // Guards against silent changes in the generator or seeding routine.
        let mut a = RngStream::new(0, 0);
        let first = a.next_u64();
        assert_eq!(first, 13080132717333068652);
        let mut b = RngStream::new(0, 0);
        assert_eq!(first, b.next_u64());
        assert_ne!(first, RngStream::new(0, 1).next_u64());
    }
}
