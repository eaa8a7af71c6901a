mod common;

use cgflab_core::cgf_model::sum_cumulants;
use cgflab_core::cumulant_algebra::sample_joint_cumulant;
use cgflab_core::estimation::fit_gamma_mixture;
use cgflab_core::simulation::{
    block_maxima_bands, monte_carlo_bands, run_replicates, sample_model, ModelSampler, SimulationPlan,
};
use cgflab_core::{CgfError, EllipticalCgf, GammaMixture, MultiIndex};
use nalgebra::{DMatrix, DVector};

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn reference_model() -> (EllipticalCgf, GammaMixture) {
    let c = common::REFERENCE_COEFFS.to_vec();
    let fit = fit_gamma_mixture(&c, 5).unwrap();
    (
        EllipticalCgf::new(DVector::zeros(8), common::reference_gamma(), c).unwrap(),
        fit.mixture,
    )
}

#[test]
fn identical_across_thread_counts() {
    let (model, mix) = reference_model();
    let plan = SimulationPlan::new(500, 24, 99)
        .with_levels(vec![0.01, 0.5, 0.99])
        .with_block(50);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_replicates(&model, &mix, &plan).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn replicate_cumulants_match_model() {
    let (model, mix) = reference_model();
    let plan = SimulationPlan::new(4000, 200, 5);
    let summaries = run_replicates(&model, &mix, &plan).unwrap();
    let all: Vec<usize> = (0..8).collect();
    for order in [2, 4, 6] {
        let values: Vec<f64> = summaries.iter().map(|s| s.cumulants[order - 1]).collect();
        let (mean, se) = mean_se(&values);
        let want = sum_cumulants(&model, &all, order).unwrap();
        let z = (mean - want) / se;
        assert!(z.abs() <= 4.0, "order {order}: {mean} ± {se} vs {want}");
    }
}

#[test]
fn column_variances_match_model() {
    let (model, mix) = reference_model();
    let n = 200_000;
    let data = sample_model(&model, &mix, n, 8).unwrap();
    for j in 0..8 {
        let col = data.column(j);
        let mean = col.mean();
        let m2 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let m4 = col.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n as f64;
        let se = ((m4 - m2 * m2) / n as f64).sqrt();
        let want = 0.999 * model.gamma()[(j, j)];
        assert!((m2 - want).abs() <= 3.0 * se, "column {j}: {m2} vs {want} (se {se})");
    }
}

#[test]
fn point_mass_mixing_gives_gaussian() {
    let gamma = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 2.0, -0.4, 0.1, -0.4, 1.5]);
    let model = EllipticalCgf::gaussian(DVector::from_vec(vec![1.0, 0.0, -2.0]), gamma).unwrap();
    let sampler = ModelSampler::new(&model, &GammaMixture::point_mass(1.0).unwrap()).unwrap();
    let indices = [vec![0, 1, 2], vec![1, 1, 1], vec![0, 0, 1, 2], vec![2, 2, 2, 2]];
    let mut values = vec![Vec::new(); indices.len()];
    for r in 0..200 {
        let data = sampler.sample(2000, 31, r);
        for (k, idx) in indices.iter().enumerate() {
            values[k].push(sample_joint_cumulant(&data, &MultiIndex::new(idx.clone())).unwrap());
        }
    }
    for (idx, v) in indices.iter().zip(&values) {
        let (mean, se) = mean_se(v);
        // plug-in estimators carry an O(1/n) bias, far below the tolerance here
        assert!(mean.abs() <= 4.0 * se, "{idx:?}: {mean} ± {se}");
    }
}

#[test]
fn bands_and_block_maxima_shapes() {
    let (model, mix) = reference_model();
    let plan = SimulationPlan::new(730, 40, 3)
        .with_levels(vec![0.1, 0.5, 0.9])
        .with_block(365);
    let observed = sample_model(&model, &mix, 730, 1234).unwrap();
    let bands = monte_carlo_bands(&model, &mix, &plan, Some(&observed)).unwrap();
    assert_eq!(bands.lower.len(), 3);
    assert!(bands.lower.iter().zip(&bands.upper).all(|(l, u)| l <= u));
    assert!(bands.observed.is_some());
    let bm = block_maxima_bands(&model, &mix, &plan, Some(&observed)).unwrap();
    assert_eq!(bm.grid.len(), bm.lower.len());
    assert_eq!(bm.lower.first().copied(), Some(0.0));
    assert_eq!(bm.upper.last().copied(), Some(1.0));
    assert!(bm.lower.windows(2).all(|w| w[0] <= w[1]));

    let short = SimulationPlan::new(500, 10, 3).with_block(365);
    assert!(matches!(
        run_replicates(&model, &mix, &short),
        Err(CgfError::TooFewBlocks { .. })
    ));
}
