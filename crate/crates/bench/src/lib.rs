//! Fixtures shared by the benchmarks.

use cgflab_core::estimation::fit_gamma_mixture;
use cgflab_core::simulation::sample_model;
use cgflab_core::{EllipticalCgf, GammaMixture};
use nalgebra::{DMatrix, DVector};

pub const GAMMA: [[f64; 8]; 8] = [
    [4.29, 1.07, 0.68, 0.77, 0.25, 0.34, 0.49, 0.25],
    [1.07, 4.92, 0.81, 0.82, 0.54, 0.64, 0.94, 0.67],
    [0.68, 0.81, 3.45, 0.75, 0.50, 0.40, 0.57, 0.47],
    [0.77, 0.82, 0.75, 3.24, 0.56, 0.47, 0.65, 0.49],
    [0.25, 0.54, 0.50, 0.56, 2.10, 0.72, 0.63, 0.53],
    [0.34, 0.64, 0.40, 0.47, 0.72, 2.16, 0.66, 0.65],
    [0.49, 0.94, 0.57, 0.65, 0.63, 0.66, 3.03, 0.85],
    [0.25, 0.67, 0.47, 0.49, 0.53, 0.65, 0.85, 2.38],
];
pub const COEFFS: [f64; 3] = [0.999, 0.1101, 0.1332];

pub fn model() -> EllipticalCgf {
    let gamma = DMatrix::from_fn(8, 8, |i, j| GAMMA[i][j]);
    EllipticalCgf::new(DVector::zeros(8), gamma, COEFFS.to_vec()).expect("valid model")
}

pub fn mixture() -> GammaMixture {
    fit_gamma_mixture(&COEFFS, 5).expect("realisable coefficients").mixture
}

/// `n × 8` sample of [`model`].
pub fn data(n: usize, seed: u64) -> DMatrix<f64> {
    sample_model(&model(), &mixture(), n, seed).expect("sampling works")
}
