use std::hint::black_box;

use cgflab_bench::{data, mixture, model, COEFFS};
use cgflab_core::cumulant_algebra::cumulant_of_sum;
use cgflab_core::density_approx::{lugannani_rice_cdf, saddlepoint_density, tail_prob_marginal};
use cgflab_core::estimation::{estimate_covariance, fit_gamma_mixture, kendall_tau};
use cgflab_core::lancaster::{lancaster_measure, EmpiricalOracle};
use cgflab_core::partitions::{enumerate_partitions, mobius_weight};
use cgflab_core::simulation::run_replicates;
use cgflab_core::SimulationPlan;
use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DVector;

fn algebra(c: &mut Criterion) {
    c.bench_function("mobius_sum_d10", |b| {
        b.iter(|| {
            enumerate_partitions(black_box(10))
                .unwrap()
                .iter()
                .map(mobius_weight)
                .sum::<i64>()
        })
    });
    let x = data(10950, 1);
    let all: Vec<usize> = (0..8).collect();
    c.bench_function("cumulant_of_sum_r6_n10950", |b| {
        b.iter(|| cumulant_of_sum(black_box(&x), &all, 6).unwrap())
    });
    let oracle = EmpiricalOracle::new(x.columns(0, 4).into_owned()).unwrap();
    c.bench_function("lancaster_measure_j4_n10950", |b| {
        b.iter(|| lancaster_measure(&oracle, black_box(&[0.5, 0.5, 0.5, 0.5])).unwrap())
    });
}

fn estimation(c: &mut Criterion) {
    let x = data(10950, 2);
    let (a, b): (Vec<f64>, Vec<f64>) = x.row_iter().map(|r| (r[0], r[1])).unzip();
    c.bench_function("kendall_tau_n10950", |bn| {
        bn.iter(|| kendall_tau(black_box(&a), &b).unwrap())
    });
    c.bench_function("estimate_covariance_10950x8", |bn| {
        bn.iter(|| estimate_covariance(black_box(&x)).unwrap())
    });
    c.bench_function("fit_gamma_mixture_k5", |bn| {
        bn.iter(|| fit_gamma_mixture(black_box(&COEFFS), 5).unwrap())
    });
}

fn approximations(c: &mut Criterion) {
    let m = model();
    let point = DVector::from_element(8, 2.0);
    c.bench_function("saddlepoint_density_j8", |b| {
        b.iter(|| saddlepoint_density(&m, black_box(&point)).unwrap())
    });
    let sum = m.sum_cgf(&(0..8).collect::<Vec<_>>()).unwrap();
    c.bench_function("lugannani_rice_sum", |b| {
        b.iter(|| lugannani_rice_cdf(&sum, black_box(40.0)).unwrap())
    });
    let mut group = c.benchmark_group("tail");
    group.sample_size(10);
    group.bench_function("tail_prob_marginal_j2", |b| {
        b.iter(|| tail_prob_marginal(&m, &[0, 1], black_box(&[3.0, 3.0])).unwrap())
    });
    group.finish();
}

fn simulation(c: &mut Criterion) {
    let (m, mix) = (model(), mixture());
    let plan = SimulationPlan::new(10950, 20, 7);
    let mut group = c.benchmark_group("simulation");
    group.sample_size(10);
    group.bench_function("replicates_20x10950", |b| {
        b.iter(|| run_replicates(&m, &mix, black_box(&plan)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, algebra, estimation, approximations, simulation);
criterion_main!(benches);
