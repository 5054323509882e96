//! Seeding rules.
//!
//! Every random object is derived from a `u64` seed through
//! [`Xoshiro256PlusPlus`]. Independent streams are split off a seed by mixing
//! in a stream index with SplitMix64, so that stream `k` of seed `s` never
//! depends on how many values were drawn from other streams. Trial `t` of an
//! experiment with master seed `m` uses seed `m + t`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::scalar::{cast, Real};

pub type SketchRng = Xoshiro256PlusPlus;

/// Stream labels used by the library; user code may pick any other values.
pub mod stream {
    pub const CASE1_LEFT: u64 = 1;
    pub const CASE1_RIGHT: u64 = 2;
    pub const CASE2_LEFT: u64 = 3;
    pub const CASE2_RIGHT: u64 = 4;
    pub const SPHERE: u64 = 5;
    pub const ZETA: u64 = 6;
    pub const PROBLEM: u64 = 7;
    pub const NOISE: u64 = 8;
    /// Dense Gaussian rows use `DENSE_ROW_BASE + row`.
    pub const DENSE_ROW_BASE: u64 = 1 << 32;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> SketchRng {
    let mixed = splitmix64(seed ^ splitmix64(stream.wrapping_add(0x6a09_e667_f3bc_c909)));
    SketchRng::seed_from_u64(mixed)
}

/// Seed of trial `trial` under master seed `master`.
#[inline]
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    master.wrapping_add(trial as u64)
}

#[inline]
pub fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    cast(rng.sample::<f64, _>(StandardNormal))
}

pub fn fill_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, out: &mut [T]) {
    for v in out {
        *v = normal(rng);
    }
}

/// `rows × cols` matrix of i.i.d. `N(0, 1)` entries, drawn in row-major order.
pub fn gaussian_matrix<T: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<T> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = normal(rng);
        }
    }
    m
}

pub fn gaussian_vector<T: Real, R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<T> {
    DVector::from_fn(len, |_, _| normal(rng))
}

/// Uniform point on the unit sphere in `R^dim` (normalized Gaussian draw).
pub fn unit_sphere<T: Real, R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<T> {
    loop {
        let v: DVector<T> = gaussian_vector(rng, dim);
        let norm = v.norm();
        if norm > T::zero() {
            return v / norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream_rng(7, 1).gen()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let x: u64 = stream_rng(7, 1).gen();
        let y: u64 = stream_rng(7, 2).gen();
        let z: u64 = stream_rng(8, 1).gen();
        assert_ne!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn unit_sphere_has_unit_norm() {
        let mut rng = stream_rng(3, 0);
        for dim in [1, 2, 9] {
            let v: DVector<f64> = unit_sphere(&mut rng, dim);
            assert!((v.norm() - 1.0).abs() < 1e-14);
        }
    }
}
