#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Estimated 8×8 scale matrix of the daily temperature-change dataset.
pub const REFERENCE_GAMMA: [[f64; 8]; 8] = [
    [1.003, 0.716, 0.624, 0.638, 0.767, 0.616, 0.714, 0.768],
    [0.716, 0.988, 0.311, 0.507, 0.491, 0.53, 0.468, 0.635],
    [0.624, 0.311, 1.009, 0.291, 0.47, 0.369, 0.496, 0.488],
    [0.638, 0.507, 0.291, 0.979, 0.504, 0.419, 0.499, 0.422],
    [0.767, 0.491, 0.47, 0.504, 0.991, 0.486, 0.55, 0.599],
    [0.616, 0.53, 0.369, 0.419, 0.486, 0.992, 0.282, 0.486],
    [0.714, 0.468, 0.496, 0.499, 0.55, 0.282, 1.024, 0.52],
    [0.768, 0.635, 0.488, 0.422, 0.599, 0.486, 0.52, 1.007],
];

/// Sample cumulants of orders 2, 4, 6 of the row sums.
pub const REFERENCE_SUM_CUMULANTS: [f64; 3] = [37.426, 463.509, 105098.112];

/// Fitted `c₁, c₂, c₃`.
pub const REFERENCE_COEFFS: [f64; 3] = [0.999, 0.1101, 0.1332];

/// Quantile levels (percent) and observed quantiles of the row sums.
pub const OBSERVED_LEVELS_PCT: [f64; 18] = [
    0.0, 0.1, 0.5, 1.0, 5.0, 10.0, 20.0, 25.0, 50.0, 75.0, 80.0, 90.0, 95.0, 99.0, 99.5, 99.9, 99.99, 100.0,
];
pub const OBSERVED_QUANTILES: [f64; 18] = [
    -29.191, -20.72, -17.032, -14.771, -10.049, -7.774, -5.194, -4.212, -0.18, 4.013, 4.987, 7.573, 9.911, 14.293,
    16.01, 20.159, 28.542, 28.983,
];

pub const OBSERVED_N: usize = 10950;

pub fn reference_gamma() -> DMatrix<f64> {
    DMatrix::from_fn(8, 8, |i, j| REFERENCE_GAMMA[i][j])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random SPD matrix `AAᵀ + δI`.
pub fn random_spd(rng: &mut ChaCha8Rng, dim: usize, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(dim, dim) * ridge
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize, half_width: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.random_range(-half_width..half_width))
}

/// Independent Gaussian density via the Cholesky factor.
pub fn gaussian_pdf_oracle(x: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("spd");
    let z = chol.l().solve_lower_triangular(x).expect("triangular");
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let j = x.len() as f64;
    (-0.5 * z.norm_squared() - 0.5 * log_det - 0.5 * j * (2.0 * std::f64::consts::PI).ln()).exp()
}

/// Composite Gauss–Legendre rule on `[a, b]`.
pub fn composite_legendre(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (nodes, weights) = cgflab_core::numeric::gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (x, w) in nodes.iter().zip(&weights) {
            out.push((lo + 0.5 * h * (x + 1.0), 0.5 * h * w));
        }
    }
    out
}
