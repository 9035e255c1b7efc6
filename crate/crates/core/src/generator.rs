//! Deterministic synthetic digit-like corpus.
//!
//! Each class has a mean image drawn uniformly from `[0, 255]`; a row is its
//! class mean plus isotropic Gaussian noise, clamped back into `[0, 255]`.
//! Row `i` depends only on `(seed, i, cols, num_classes, noise_sigma)`, so
//! rows can be produced in any order or partition and a smaller dataset is
//! always a prefix of a larger one with the same spec.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::prng::{mix, SplitMix64, UNIT_EPSILON};

pub const DEFAULT_COLS: usize = 784;
pub const DEFAULT_CLASSES: u32 = 10;
pub const DEFAULT_NOISE_SIGMA: f64 = 25.0;
pub const PIXEL_MAX: f64 = 255.0;

/// Offset mixed into the seed for per-class mean streams.
const CLASS_STREAM_OFFSET: u64 = 0xC1A55;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorSpec {
    pub rows: u64,
    pub cols: usize,
    pub num_classes: u32,
    pub seed: u64,
    pub noise_sigma: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            rows: 0,
            cols: DEFAULT_COLS,
            num_classes: DEFAULT_CLASSES,
            seed: 0,
            noise_sigma: DEFAULT_NOISE_SIGMA,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cols == 0 {
            return Err(Error::InvalidOption("cols must be at least 1"));
        }
        if self.num_classes == 0 || self.num_classes > 256 {
            return Err(Error::InvalidOption("num_classes must be in 1..=256"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidOption("noise_sigma must be finite and non-negative"));
        }
        Ok(())
    }

    /// Balanced labels: row `i` belongs to class `i mod num_classes`.
    #[inline]
    pub fn label(&self, row: u64) -> u8 {
        (row % u64::from(self.num_classes)) as u8
    }
}

/// Standard normal pairs from consecutive uniforms.
struct BoxMuller {
    rng: SplitMix64,
}

impl BoxMuller {
    #[inline]
    fn next_pair(&mut self) -> (f64, f64) {
        let mut u1 = self.rng.next_f64();
        if u1 == 0.0 {
            u1 = UNIT_EPSILON;
        }
        let u2 = self.rng.next_f64();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        (r * libm::cos(theta), r * libm::sin(theta))
    }
}

#[inline]
fn clamp_pixel(v: f64) -> f64 {
    v.clamp(0.0, PIXEL_MAX)
}

/// A validated spec plus its precomputed class means.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    means: Vec<f64>,
}

impl Generator {
    pub fn new(spec: GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        let cols = spec.cols;
        let mut means = vec![0.0; spec.num_classes as usize * cols];
        for (class, mean) in means.chunks_exact_mut(cols).enumerate() {
            let mut rng = SplitMix64::new(mix(spec.seed ^ (CLASS_STREAM_OFFSET + class as u64)));
            for m in mean.iter_mut() {
                *m = rng.next_f64() * PIXEL_MAX;
            }
        }
        Ok(Self { spec, means })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn class_mean(&self, class: usize) -> &[f64] {
        &self.means[class * self.spec.cols..(class + 1) * self.spec.cols]
    }

    /// Writes row `row` into `out` (length `cols`).
    pub fn fill_row(&self, row: u64, out: &mut [f64]) {
        assert_eq!(out.len(), self.spec.cols, "row buffer width");
        let mean = self.class_mean(self.spec.label(row) as usize);
        let sigma = self.spec.noise_sigma;
        let mut gauss = BoxMuller { rng: SplitMix64::new(mix(self.spec.seed ^ row)) };
        let mut pairs_out = out.chunks_exact_mut(2);
        let mut pairs_mean = mean.chunks_exact(2);
        for (o, m) in (&mut pairs_out).zip(&mut pairs_mean) {
            let (z0, z1) = gauss.next_pair();
            o[0] = clamp_pixel(m[0] + sigma * z0);
            o[1] = clamp_pixel(m[1] + sigma * z1);
        }
        if let ([o], [m]) = (pairs_out.into_remainder(), pairs_mean.remainder()) {
            let (z0, _) = gauss.next_pair();
            *o = clamp_pixel(m + sigma * z0);
        }
    }

    /// Fills consecutive rows starting at `first_row`; `out.len()` must be a
    /// multiple of `cols`.
    pub fn fill_rows(&self, first_row: u64, out: &mut [f64]) {
        assert_eq!(out.len() % self.spec.cols, 0, "buffer is not whole rows");
        for (k, row) in out.chunks_exact_mut(self.spec.cols).enumerate() {
            self.fill_row(first_row + k as u64, row);
        }
    }

    /// Labels for rows `first_row..first_row + out.len()`.
    pub fn fill_labels(&self, first_row: u64, out: &mut [u8]) {
        for (k, l) in out.iter_mut().enumerate() {
            *l = self.spec.label(first_row + k as u64);
        }
    }
}
