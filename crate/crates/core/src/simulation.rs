//! Sampling from the elliptical model as `Y = m + √V·X`, `X ~ N(0, Γ)`, and
//! Monte Carlo bands for quantiles and block maxima of the row sums.
//!
//! Every replicate draws from its own ChaCha8 stream keyed by
//! `(seed, replicate)`, so results do not depend on the thread count.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgf_model::EllipticalCgf;
use crate::cumulant_algebra::univariate_sample_cumulants;
use crate::error::{CgfError, Result};
use crate::estimation::GammaMixture;
use crate::numeric::{quantile_sorted, sort_floats};

/// Highest cumulant order recorded per replicate.
pub const SUMMARY_ORDER: usize = 6;

/// Default evaluation grid size for block-maxima bands.
pub const DEFAULT_GRID_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub n_per_sample: usize,
    pub n_replicates: usize,
    pub seed: u64,
    /// Quantile levels in `[0, 1]`, strictly increasing.
    #[serde(default)]
    pub levels: Vec<f64>,
    /// Block length for block maxima.
    #[serde(default)]
    pub block: Option<usize>,
    #[serde(default = "default_band_probability")]
    pub band_probability: f64,
}

fn default_band_probability() -> f64 {
    0.95
}

impl SimulationPlan {
    pub fn new(n_per_sample: usize, n_replicates: usize, seed: u64) -> Self {
        Self {
            n_per_sample,
            n_replicates,
            seed,
            levels: Vec::new(),
            block: None,
            band_probability: default_band_probability(),
        }
    }

    pub fn with_levels(mut self, levels: Vec<f64>) -> Self {
        self.levels = levels;
        self
    }

    pub fn with_block(mut self, block: usize) -> Self {
        self.block = Some(block);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_sample == 0 {
            return Err(CgfError::InvalidPlan("n_per_sample must be >= 1".into()));
        }
        if self.n_replicates == 0 {
            return Err(CgfError::InvalidPlan("n_replicates must be >= 1".into()));
        }
        if self.levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(CgfError::InvalidPlan("quantile levels must lie in [0, 1]".into()));
        }
        if self.levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CgfError::InvalidPlan(
                "quantile levels must be strictly increasing".into(),
            ));
        }
        if !(self.band_probability > 0.0 && self.band_probability < 1.0) {
            return Err(CgfError::InvalidPlan("band probability must be in (0, 1)".into()));
        }
        if let Some(block) = self.block {
            if block == 0 {
                return Err(CgfError::InvalidPlan("block size must be >= 1".into()));
            }
            if self.n_per_sample < 2 * block {
                return Err(CgfError::TooFewBlocks {
                    block,
                    needed: 2 * block,
                    found: self.n_per_sample,
                });
            }
        }
        Ok(())
    }
}

struct MixtureSampler {
    cumulative: Vec<f64>,
    gammas: Vec<Gamma<f64>>,
    constant: Option<f64>,
}

impl MixtureSampler {
    fn new(mix: &GammaMixture) -> Result<Self> {
        if let Some(v) = mix.point_mass_value() {
            return Ok(Self {
                cumulative: Vec::new(),
                gammas: Vec::new(),
                constant: Some(v),
            });
        }
        let mut acc = 0.0;
        let mut cumulative = Vec::new();
        let mut gammas = Vec::new();
        for c in mix.components() {
            acc += c.weight;
            cumulative.push(acc);
            gammas.push(Gamma::new(c.shape, c.scale).map_err(|e| CgfError::InvalidMixture(e.to_string()))?);
        }
        Ok(Self {
            cumulative,
            gammas,
            constant: None,
        })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        if let Some(v) = self.constant {
            return v;
        }
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let k = self.cumulative.partition_point(|&c| c <= u).min(self.gammas.len() - 1);
        self.gammas[k].sample(rng)
    }
}

/// `L` with `LLᵀ = Γ`: Cholesky, or a clipped eigen-factor when Γ is only
/// semidefinite.
fn covariance_factor(gamma: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = gamma.clone().cholesky() {
        return c.l();
    }
    let eig = SymmetricEigen::new(gamma.clone());
    let floor = 1e-10 * gamma.trace().abs();
    let roots = eig.eigenvalues.map(|v| if v > floor { v.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Draws rows of `m + √V·X` for one replicate stream.
pub struct ModelSampler {
    m: DVector<f64>,
    factor: DMatrix<f64>,
    mixture: MixtureSampler,
}

impl ModelSampler {
    pub fn new(model: &EllipticalCgf, mix: &GammaMixture) -> Result<Self> {
        Ok(Self {
            m: model.mean().clone(),
            factor: covariance_factor(model.gamma()),
            mixture: MixtureSampler::new(mix)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    fn rng(seed: u64, replicate: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replicate);
        rng
    }

    /// `n × J` sample for stream `replicate`.
    pub fn sample(&self, n: usize, seed: u64, replicate: u64) -> DMatrix<f64> {
        let j = self.dim();
        let mut rng = Self::rng(seed, replicate);
        let mut out = DMatrix::zeros(n, j);
        let mut z = DVector::zeros(j);
        for row in 0..n {
            let scale = self.mixture.draw(&mut rng).sqrt();
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let x = &self.factor * &z;
            for c in 0..j {
                out[(row, c)] = self.m[c] + scale * x[c];
            }
        }
        out
    }

    /// Row sums of a sample for stream `replicate`, without storing the rows.
    pub fn sample_sums(&self, n: usize, seed: u64, replicate: u64) -> Vec<f64> {
        let j = self.dim();
        let mut rng = Self::rng(seed, replicate);
        let col_sums: Vec<f64> = (0..j).map(|k| self.factor.column(k).sum()).collect();
        let m_sum = self.m.sum();
        let mut z = vec![0.0; j];
        (0..n)
            .map(|_| {
                let scale = self.mixture.draw(&mut rng).sqrt();
                for v in z.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let x: f64 = z.iter().zip(&col_sums).map(|(a, b)| a * b).sum();
                m_sum + scale * x
            })
            .collect()
    }
}

fn check_model(model: &EllipticalCgf) -> Result<()> {
    if model.coeffs()[0] <= 0.0 {
        return Err(CgfError::InvalidModel("c1 must be positive".into()));
    }
    Ok(())
}

/// `n × J` sample from the model; deterministic in `seed`.
pub fn sample_model(model: &EllipticalCgf, mix: &GammaMixture, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_model(model)?;
    if n == 0 {
        return Err(CgfError::InvalidPlan("sample size must be >= 1".into()));
    }
    Ok(ModelSampler::new(model, mix)?.sample(n, seed, 0))
}

/// Per-replicate statistics of the row sum `S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub replicate: u64,
    /// Plug-in `κ₁..κ₆` of `S`.
    pub cumulants: Vec<f64>,
    /// Type-7 quantiles of `S` at the plan levels.
    pub quantiles: Vec<f64>,
    /// Block maxima of `S` when the plan has a block size.
    pub maxima: Vec<f64>,
}

fn summarize(sums: &[f64], plan: &SimulationPlan, replicate: u64) -> Result<ReplicateSummary> {
    let cumulants = univariate_sample_cumulants(sums, SUMMARY_ORDER)?;
    let maxima = match plan.block {
        Some(block) => block_maxima(sums, block)?,
        None => Vec::new(),
    };
    let mut sorted = sums.to_vec();
    sort_floats(&mut sorted);
    let quantiles = plan.levels.iter().map(|&l| quantile_sorted(&sorted, l)).collect();
    Ok(ReplicateSummary {
        replicate,
        cumulants,
        quantiles,
        maxima,
    })
}

/// Runs every replicate of `plan` in parallel, in replicate order.
pub fn run_replicates(
    model: &EllipticalCgf,
    mix: &GammaMixture,
    plan: &SimulationPlan,
) -> Result<Vec<ReplicateSummary>> {
    plan.validate()?;
    check_model(model)?;
    let sampler = ModelSampler::new(model, mix)?;
    (0..plan.n_replicates as u64)
        .into_par_iter()
        .map(|r| summarize(&sampler.sample_sums(plan.n_per_sample, plan.seed, r), plan, r))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBands {
    pub levels: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub observed: Option<Vec<f64>>,
    pub band_probability: f64,
    pub replicates: usize,
}

impl QuantileBands {
    /// Per level, whether the observed value lies in `[lower, upper]`.
    pub fn covered(&self) -> Option<Vec<bool>> {
        self.observed.as_ref().map(|obs| {
            obs.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(o, (l, u))| l <= o && o <= u)
                .collect()
        })
    }

    pub fn coverage_count(&self) -> Option<usize> {
        self.covered().map(|c| c.iter().filter(|&&b| b).count())
    }

    /// `level,lower,upper[,observed]` with a header row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match &self.observed {
            Some(obs) => {
                writeln!(w, "level,lower,upper,observed")?;
                for ((l, lo), (up, o)) in self.levels.iter().zip(&self.lower).zip(self.upper.iter().zip(obs)) {
                    writeln!(w, "{l},{lo},{up},{o}")?;
                }
            }
            None => {
                writeln!(w, "level,lower,upper")?;
                for ((l, lo), up) in self.levels.iter().zip(&self.lower).zip(&self.upper) {
                    writeln!(w, "{l},{lo},{up}")?;
                }
            }
        }
        Ok(())
    }
}

/// Row sums of a data matrix.
pub fn row_sums(data: &DMatrix<f64>) -> Vec<f64> {
    data.row_iter().map(|r| r.sum()).collect()
}

fn band_edges(values: &mut [f64], probability: f64) -> (f64, f64) {
    sort_floats(values);
    let tail = 0.5 * (1.0 - probability);
    (quantile_sorted(values, tail), quantile_sorted(values, 1.0 - tail))
}

/// Bands from already-run replicates: per level, the central `band_probability`
/// interval of the replicate quantiles.
pub fn bands_from_replicates(
    plan: &SimulationPlan,
    summaries: &[ReplicateSummary],
    observed: Option<&DMatrix<f64>>,
) -> Result<QuantileBands> {
    if summaries.is_empty() {
        return Err(CgfError::EmptyData);
    }
    let mut lower = Vec::with_capacity(plan.levels.len());
    let mut upper = Vec::with_capacity(plan.levels.len());
    for i in 0..plan.levels.len() {
        let mut column: Vec<f64> = summaries.iter().map(|s| s.quantiles[i]).collect();
        let (lo, hi) = band_edges(&mut column, plan.band_probability);
        lower.push(lo);
        upper.push(hi);
    }
    let observed = match observed {
        Some(data) => {
            if data.nrows() == 0 {
                return Err(CgfError::EmptyData);
            }
            let mut sums = row_sums(data);
            sort_floats(&mut sums);
            Some(plan.levels.iter().map(|&l| quantile_sorted(&sums, l)).collect())
        }
        None => None,
    };
    Ok(QuantileBands {
        levels: plan.levels.clone(),
        lower,
        upper,
        observed,
        band_probability: plan.band_probability,
        replicates: summaries.len(),
    })
}

/// Monte Carlo bands for the quantiles of the row sum at `plan.levels`.
pub fn monte_carlo_bands(
    model: &EllipticalCgf,
    mix: &GammaMixture,
    plan: &SimulationPlan,
    observed: Option<&DMatrix<f64>>,
) -> Result<QuantileBands> {
    if let Some(data) = observed {
        if data.ncols() != model.dim() {
            return Err(CgfError::DimensionMismatch {
                expected: model.dim(),
                found: data.ncols(),
            });
        }
    }
    let summaries = run_replicates(model, mix, plan)?;
    bands_from_replicates(plan, &summaries, observed)
}

/// Maxima over consecutive blocks of length `block`; a trailing partial block
/// is dropped.
pub fn block_maxima(sums: &[f64], block: usize) -> Result<Vec<f64>> {
    if block == 0 {
        return Err(CgfError::InvalidPlan("block size must be >= 1".into()));
    }
    if sums.len() < 2 * block {
        return Err(CgfError::TooFewBlocks {
            block,
            needed: 2 * block,
            found: sums.len(),
        });
    }
    Ok(sums
        .chunks_exact(block)
        .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// Empirical CDF of a finite sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(CgfError::EmptyData);
        }
        sort_floats(&mut values);
        Ok(Self { sorted: values })
    }

    /// `#{v ≤ x} / n`
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }
}

pub fn block_maxima_ecdf(sums: &[f64], block: usize) -> Result<Ecdf> {
    Ecdf::new(block_maxima(sums, block)?)
}

/// Pointwise bands for the block-maxima ECDF on a fixed grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMaximaBands {
    pub block: usize,
    pub grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub observed: Option<Vec<f64>>,
    pub band_probability: f64,
}

impl BlockMaximaBands {
    /// `x,lower,upper[,observed]` with a header row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match &self.observed {
            Some(obs) => {
                writeln!(w, "x,lower,upper,observed")?;
                for ((x, lo), (up, o)) in self.grid.iter().zip(&self.lower).zip(self.upper.iter().zip(obs)) {
                    writeln!(w, "{x},{lo},{up},{o}")?;
                }
            }
            None => {
                writeln!(w, "x,lower,upper")?;
                for ((x, lo), up) in self.grid.iter().zip(&self.lower).zip(&self.upper) {
                    writeln!(w, "{x},{lo},{up}")?;
                }
            }
        }
        Ok(())
    }
}

/// Block-maxima bands from already-run replicates. The grid spans the pooled
/// replicate maxima (and the observed ones, if given) in `grid_points` steps.
pub fn block_maxima_bands_from_replicates(
    plan: &SimulationPlan,
    summaries: &[ReplicateSummary],
    observed: Option<&DMatrix<f64>>,
    grid_points: usize,
) -> Result<BlockMaximaBands> {
    let block = plan
        .block
        .ok_or_else(|| CgfError::InvalidPlan("block maxima need a block size".into()))?;
    if summaries.is_empty() {
        return Err(CgfError::EmptyData);
    }
    if grid_points < 2 {
        return Err(CgfError::InvalidPlan("grid needs at least 2 points".into()));
    }
    let observed_ecdf = match observed {
        Some(data) => Some(block_maxima_ecdf(&row_sums(data), block)?),
        None => None,
    };
    let ecdfs: Vec<Ecdf> = summaries
        .iter()
        .map(|s| Ecdf::new(s.maxima.clone()))
        .collect::<Result<_>>()?;
    let pooled = ecdfs
        .iter()
        .flat_map(|e| e.values().iter().copied())
        .chain(observed_ecdf.iter().flat_map(|e| e.values().iter().copied()));
    let (lo, hi) = pooled.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let grid: Vec<f64> = (0..grid_points)
        .map(|i| lo + (hi - lo) * i as f64 / (grid_points - 1) as f64)
        .collect();
    let mut lower = Vec::with_capacity(grid_points);
    let mut upper = Vec::with_capacity(grid_points);
    for &x in &grid {
        let mut values: Vec<f64> = ecdfs.iter().map(|e| e.eval(x)).collect();
        let (l, u) = band_edges(&mut values, plan.band_probability);
        lower.push(l);
        upper.push(u);
    }
    let observed = observed_ecdf.map(|e| grid.iter().map(|&x| e.eval(x)).collect());
    Ok(BlockMaximaBands {
        block,
        grid,
        lower,
        upper,
        observed,
        band_probability: plan.band_probability,
    })
}

pub fn block_maxima_bands(
    model: &EllipticalCgf,
    mix: &GammaMixture,
    plan: &SimulationPlan,
    observed: Option<&DMatrix<f64>>,
) -> Result<BlockMaximaBands> {
    let summaries = run_replicates(model, mix, plan)?;
    block_maxima_bands_from_replicates(plan, &summaries, observed, DEFAULT_GRID_POINTS)
}

/// One row per replicate: `replicate,k1,…,k6[,q_…]`.
pub fn write_replicate_csv<W: Write>(
    plan: &SimulationPlan,
    summaries: &[ReplicateSummary],
    mut w: W,
) -> std::io::Result<()> {
    write!(w, "replicate")?;
    for r in 1..=SUMMARY_ORDER {
        write!(w, ",k{r}")?;
    }
    for l in &plan.levels {
        write!(w, ",q{l}")?;
    }
    writeln!(w)?;
    for s in summaries {
        write!(w, "{}", s.replicate)?;
        for v in s.cumulants.iter().chain(&s.quantiles) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Headerless CSV, one row per observation.
pub fn write_matrix_csv<W: Write>(data: &DMatrix<f64>, mut w: W) -> std::io::Result<()> {
    for row in data.row_iter() {
        let mut first = true;
        for v in row.iter() {
            if !first {
                write!(w, ",")?;
            }
            write!(w, "{v}")?;
            first = false;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::GammaComponent;

    fn small_model() -> EllipticalCgf {
        let gamma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        EllipticalCgf::new(DVector::from_vec(vec![1.0, -1.0]), gamma, vec![1.0, 0.5]).unwrap()
    }

    fn mixture() -> GammaMixture {
        GammaMixture::new(vec![GammaComponent {
            weight: 1.0,
            shape: 2.0,
            scale: 0.5,
        }])
        .unwrap()
    }

    #[test]
    fn plan_validation() {
        assert!(SimulationPlan::new(10, 2, 1).validate().is_ok());
        assert!(SimulationPlan::new(0, 2, 1).validate().is_err());
        assert!(SimulationPlan::new(10, 2, 1)
            .with_levels(vec![0.5, 0.1])
            .validate()
            .is_err());
        assert!(SimulationPlan::new(10, 2, 1)
            .with_levels(vec![0.5, 1.5])
            .validate()
            .is_err());
        assert!(matches!(
            SimulationPlan::new(10, 2, 1).with_block(6).validate(),
            Err(CgfError::TooFewBlocks { .. })
        ));
    }

    #[test]
    fn same_seed_same_sample() {
        let a = sample_model(&small_model(), &mixture(), 100, 42).unwrap();
        let b = sample_model(&small_model(), &mixture(), 100, 42).unwrap();
        let c = sample_model(&small_model(), &mixture(), 100, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sums_match_full_sample() {
        let sampler = ModelSampler::new(&small_model(), &mixture()).unwrap();
        let full = sampler.sample(50, 9, 3);
        let sums = sampler.sample_sums(50, 9, 3);
        for (a, b) in row_sums(&full).iter().zip(&sums) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn semidefinite_gamma_uses_eigen_factor() {
        let gamma = DMatrix::from_element(2, 2, 1.0);
        let f = covariance_factor(&gamma);
        assert!((&f * f.transpose() - &gamma).norm() < 1e-12);
        let model = EllipticalCgf::gaussian(DVector::zeros(2), gamma).unwrap();
        let s = sample_model(&model, &GammaMixture::point_mass(1.0).unwrap(), 20, 1).unwrap();
        for r in s.row_iter() {
            assert!((r[0] - r[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn block_maxima_cases() {
        let sums: Vec<f64> = (0..10).map(|v| v as f64).collect();
        assert_eq!(block_maxima(&sums, 1).unwrap(), sums);
        assert_eq!(block_maxima(&sums, 3).unwrap(), vec![2.0, 5.0, 8.0]);
        assert!(block_maxima(&sums, 6).is_err());
        let e = block_maxima_ecdf(&[4.0; 12], 3).unwrap();
        assert_eq!(e.eval(3.999), 0.0);
        assert_eq!(e.eval(4.0), 1.0);
        let n = vec![0.0; 10950];
        assert_eq!(block_maxima(&n, 365).unwrap().len(), 30);
    }

    #[test]
    fn gaussian_bands_straddle_mean() {
        let model = EllipticalCgf::gaussian(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        let plan = SimulationPlan::new(500, 100, 5).with_levels(vec![0.01, 0.5, 0.99]);
        let bands = monte_carlo_bands(&model, &GammaMixture::point_mass(1.0).unwrap(), &plan, None).unwrap();
        assert!(bands.lower[1] < 0.0 && bands.upper[1] > 0.0);
        assert!(bands.upper[2] - bands.lower[2] > bands.upper[1] - bands.lower[1]);
        let mut buf = Vec::new();
        bands.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("level,lower,upper\n"));
    }
}
