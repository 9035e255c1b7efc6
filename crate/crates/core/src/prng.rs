//! SplitMix64, the generator every stream in the toolkit is derived from.

/// Increment added to the state on every draw.
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// 2^-53, the spacing of the uniform doubles produced by [`to_unit`].
pub const UNIT_EPSILON: f64 = 1.0 / (1u64 << 53) as f64;

/// SplitMix64 finalizer.
#[inline]
pub fn mix(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// One step of the generator: returns `(value, new_state)`.
#[inline]
pub fn prng_next(state: u64) -> (u64, u64) {
    let next = state.wrapping_add(GOLDEN_GAMMA);
    (mix(next), next)
}

/// Maps a raw draw onto `[0, 1)` using its top 53 bits.
#[inline]
pub fn to_unit(value: u64) -> f64 {
    (value >> 11) as f64 * UNIT_EPSILON
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(state: u64) -> Self {
        Self { state }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let (value, state) = prng_next(self.state);
        self.state = state;
        value
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        to_unit(self.next_u64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_draw_from_zero_state() {
        let (value, state) = prng_next(0);
        assert_eq!(state, 0x9E37_79B9_7F4A_7C15);
        assert_eq!(value, 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn first_draw_from_state_one() {
        assert_eq!(prng_next(1).0, 0x910A_2DEC_8902_5CC1);
    }

    #[test]
    fn known_stream_from_zero() {
        // Reference values for SplitMix64 seeded with 0.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn deterministic() {
        assert_eq!(prng_next(12345), prng_next(12345));
    }

    #[test]
    fn uniform_mean_of_a_million_draws() {
        let mut rng = SplitMix64::new(2016);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        let mean = sum / n as f64;
        assert!((0.498..=0.502).contains(&mean), "mean {mean}");
    }

    #[test]
    fn unit_bounds() {
        assert_eq!(to_unit(0), 0.0);
        assert!(to_unit(u64::MAX) < 1.0);
    }
}
