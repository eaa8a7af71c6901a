mod common;

use std::collections::BTreeMap;

use cgflab_core::cgf_model::sum_cumulants;
use cgflab_core::estimation::{
    estimate_covariance, fit_coefficients, fit_gamma_mixture, kendall_tau, powered_exp_cov, DEFAULT_COMPONENTS,
};
use cgflab_core::simulation::sample_model;
use cgflab_core::{CgfError, EllipticalCgf, GammaMixture, PoweredExpParams};
use nalgebra::DVector;
use proptest::prelude::*;
use statrs::function::gamma::ln_gamma;

/// Cumulants from raw moments by the standard recursion
/// `κ_n = μ_n − Σ_{m=1}^{n−1} C(n−1, m−1) κ_m μ_{n−m}`.
fn recursion_cumulants(raw: &[f64]) -> Vec<f64> {
    let mut kappa: Vec<f64> = Vec::new();
    for n in 1..=raw.len() {
        let mut k = raw[n - 1];
        for m in 1..n {
            let binom = (0..m - 1).fold(1.0, |b, i| b * (n - 1 - i) as f64 / (i + 1) as f64);
            k -= binom * kappa[m - 1] * raw[n - m - 1];
        }
        kappa.push(k);
    }
    kappa
}

#[test]
fn fitted_mixture_cumulants_recomputed_independently() {
    let targets = common::REFERENCE_COEFFS;
    let fit = fit_gamma_mixture(&targets, DEFAULT_COMPONENTS).unwrap();
    // E V^r = Σ w θ^r Γ(k + r) / Γ(k)
    let raw: Vec<f64> = (1..=3)
        .map(|r| {
            fit.mixture
                .components()
                .iter()
                .map(|c| c.weight * (r as f64 * c.scale.ln() + ln_gamma(c.shape + r as f64) - ln_gamma(c.shape)).exp())
                .sum()
        })
        .collect();
    let kappa = recursion_cumulants(&raw);
    for (k, t) in kappa.iter().zip(targets) {
        assert!((k - t).abs() / t <= fit.residual.max(1e-4) * 1.01, "{k} vs {t}");
    }
}

#[test]
fn fit_is_deterministic() {
    let a = fit_gamma_mixture(&common::REFERENCE_COEFFS, 5).unwrap();
    let b = fit_gamma_mixture(&common::REFERENCE_COEFFS, 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unrealisable_targets_fail() {
    assert!(matches!(
        fit_gamma_mixture(&[1.0, -0.5], 5),
        Err(CgfError::FitFailure { .. })
    ));
}

#[test]
fn coefficient_round_trip_on_reference() {
    let gamma = common::reference_gamma();
    let c = vec![0.999, 0.1101, 0.1332];
    let model = EllipticalCgf::new(DVector::zeros(8), gamma.clone(), c.clone()).unwrap();
    let subset: Vec<usize> = (0..8).collect();
    let kappa: BTreeMap<usize, f64> = [2, 4, 6]
        .into_iter()
        .map(|o| (o, sum_cumulants(&model, &subset, o).unwrap()))
        .collect();
    let back = fit_coefficients(&gamma, &kappa, &[2, 4, 6]).unwrap();
    for (a, b) in back.iter().zip(&c) {
        assert!((a - b).abs() <= 1e-12 * b);
    }
}

#[test]
fn tau_invariant_under_monotone_maps() {
    let model = EllipticalCgf::new(
        DVector::zeros(3),
        nalgebra::DMatrix::from_row_slice(3, 3, &[1.0, 0.4, -0.2, 0.4, 1.0, 0.1, -0.2, 0.1, 1.0]),
        vec![1.0],
    )
    .unwrap();
    let data = sample_model(&model, &GammaMixture::point_mass(1.0).unwrap(), 800, 4).unwrap();
    let mapped = data.map(|v| (0.7 * v).exp());
    let a = estimate_covariance(&data).unwrap();
    let b = estimate_covariance(&mapped).unwrap();
    assert_eq!(a.correlation, b.correlation);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tau_bounded_and_symmetric(pairs in proptest::collection::vec((-5i32..5, -5i32..5), 2..80)) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        match kendall_tau(&x, &y) {
            Ok(t) => {
                prop_assert!((-1.0..=1.0).contains(&t));
                prop_assert_eq!(t, kendall_tau(&y, &x).unwrap());
                let neg: Vec<f64> = y.iter().map(|v| -v).collect();
                prop_assert!((kendall_tau(&x, &neg).unwrap() + t).abs() < 1e-15);
            }
            Err(_) => {
                // a constant input has no τ-b
                prop_assert!(x.iter().all(|&v| v == x[0]) || y.iter().all(|&v| v == y[0]));
            }
        }
    }

    #[test]
    fn powered_exponential_non_increasing(
        theta1 in 0.1f64..10.0,
        theta2 in 0.1f64..=2.0,
        s0 in 0.0f64..2.0,
        s1 in 0.0f64..2.0,
        d in 0.001f64..20.0,
        step in 0.0f64..5.0,
    ) {
        let p = PoweredExpParams::new(theta1, theta2, s0, s1).unwrap();
        prop_assert!(powered_exp_cov(d + step, &p).unwrap() <= powered_exp_cov(d, &p).unwrap());
    }

    #[test]
    fn fit_coefficients_round_trip(c1 in 0.2f64..3.0, c2 in 0.0f64..1.0, c3 in 0.0f64..1.0, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let gamma = common::random_spd(&mut rng, 4, 0.3);
        let model = EllipticalCgf::new(DVector::zeros(4), gamma.clone(), vec![c1, c2, c3]).unwrap();
        let subset: Vec<usize> = (0..4).collect();
        let kappa: BTreeMap<usize, f64> = [2, 4, 6]
            .into_iter()
            .map(|o| (o, sum_cumulants(&model, &subset, o).unwrap()))
            .collect();
        let back = fit_coefficients(&gamma, &kappa, &[2, 4, 6]).unwrap();
        for (a, b) in back.iter().zip([c1, c2, c3]) {
            prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300) + 1e-300);
        }
    }
}
