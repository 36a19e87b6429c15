//! Seeded random streams.
//!
//! Every replicate owns an independent xoshiro256++ generator. Its 64-bit
//! seed is `stream_seed(master, index)`, a SplitMix64-style mix of the master
//! seed and the replicate index; the generator state is then expanded from
//! that seed with SplitMix64 (the `seed_from_u64` rule of `rand_xoshiro`).
//! Bounded integers use Lemire's widening-multiply rejection method, so the
//! sequence of draws is fully determined by the seed on every platform.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Human-readable identifier embedded in reports.
pub const RNG_ALGORITHM: &str =
    "xoshiro256++ (state via splitmix64), stream seed = mix64(master ^ mix64(index + 0x9e3779b97f4a7c15)), Lemire bounded draws";

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replicate `index` under `master`.
#[inline]
pub fn stream_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_add(GOLDEN_GAMMA)))
}

/// The generator used for all simulations.
#[derive(Clone, Debug)]
pub struct UrnRng(Xoshiro256PlusPlus);

impl UrnRng {
    pub fn new(seed: u64) -> Self {
        UrnRng(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    /// Generator for replicate `index` of an experiment seeded with `master`.
    pub fn for_stream(master: u64, index: u64) -> Self {
        Self::new(stream_seed(master, index))
    }

    /// Uniform integer in `0..bound`.
    #[inline]
    pub fn below(&mut self, bound: u64) -> u64 {
        bounded_u64(&mut self.0, bound)
    }

    /// Uniform double in the open interval (0, 1).
    #[inline]
    pub fn open01(&mut self) -> f64 {
        // 52 random mantissa bits, offset by half an ulp to exclude 0.
        ((self.0.next_u64() >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
    }
}

impl RngCore for UrnRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand_core::Error> {
        self.0.try_fill_bytes(dest)
    }
}

/// Lemire's nearly divisionless bounded draw; `bound` must be positive.
#[inline]
pub fn bounded_u64<R: RngCore + ?Sized>(rng: &mut R, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let mut prod = (rng.next_u64() as u128) * (bound as u128);
    let mut low = prod as u64;
    if low < bound {
        let threshold = bound.wrapping_neg() % bound;
        while low < threshold {
            prod = (rng.next_u64() as u128) * (bound as u128);
            low = prod as u64;
        }
    }
    (prod >> 64) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = UrnRng::for_stream(7, 3);
        let mut b = UrnRng::for_stream(7, 3);
        let mut c = UrnRng::for_stream(7, 4);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn bounded_draws_cover_range_uniformly() {
        let mut rng = UrnRng::new(1);
        let mut hist = [0u64; 5];
        let reps = 200_000;
        for _ in 0..reps {
            hist[rng.below(5) as usize] += 1;
        }
        let p = 0.2;
        let sd = (reps as f64 * p * (1.0 - p)).sqrt();
        for h in hist {
            assert!((h as f64 - reps as f64 * p).abs() < 4.0 * sd, "{hist:?}");
        }
        assert_eq!(rng.below(1), 0);
    }

    #[test]
    fn open_unit_interval() {
        let mut rng = UrnRng::new(99);
        for _ in 0..10_000 {
            let u = rng.open01();
            assert!(u > 0.0 && u < 1.0);
        }
    }
}
