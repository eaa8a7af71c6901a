//! Lancaster additive interaction measure and its integral link to joint
//! cumulants.
//!
//! `ΔF(x) = Σ_π (−1)^{|π|−1}(|π|−1)! F_π(x)`, where `F_π` is the product of
//! the marginal CDFs over the blocks of `π`. It vanishes identically whenever
//! some sub-vector is independent of the rest.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{CgfError, Result};
use crate::numeric::{bivariate_normal_cdf, std_normal_cdf, CompensatedSum};
use crate::partitions::{cached_partitions, mobius_weight, SetPartition};

/// Largest dimension for pointwise evaluation of `ΔF`.
pub const MAX_POINTWISE_DIM: usize = 6;

/// Access to the joint CDF of any sub-vector.
///
/// `marginal_cdf(subset, x)` evaluates `P(X_{subset[0]} ≤ x[0], …)`; `subset`
/// is sorted and `x` has one coordinate per element of `subset`.
pub trait MarginalOracle: Sync {
    fn dim(&self) -> usize;

    fn marginal_cdf(&self, subset: &[usize], x: &[f64]) -> Result<f64>;
}

impl<T: MarginalOracle + ?Sized> MarginalOracle for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn marginal_cdf(&self, subset: &[usize], x: &[f64]) -> Result<f64> {
        (**self).marginal_cdf(subset, x)
    }
}

/// Oracle backed by a closure.
pub struct FnOracle<F> {
    dim: usize,
    cdf: F,
}

impl<F> FnOracle<F>
where
    F: Fn(&[usize], &[f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, cdf: F) -> Self {
        Self { dim, cdf }
    }
}

impl<F> MarginalOracle for FnOracle<F>
where
    F: Fn(&[usize], &[f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn marginal_cdf(&self, subset: &[usize], x: &[f64]) -> Result<f64> {
        Ok((self.cdf)(subset, x))
    }
}

/// Distribution built as a product of independent blocks, each with its own
/// oracle over the block's (locally renumbered) variables.
pub struct ProductOracle {
    dim: usize,
    blocks: Vec<(Vec<usize>, Box<dyn MarginalOracle + Send>)>,
}

impl ProductOracle {
    pub fn new(blocks: Vec<(Vec<usize>, Box<dyn MarginalOracle + Send>)>) -> Result<Self> {
        let sets: Vec<Vec<usize>> = blocks.iter().map(|(b, _)| b.clone()).collect();
        let partition = SetPartition::new(sets)?;
        for (block, oracle) in &blocks {
            if oracle.dim() != block.len() {
                return Err(CgfError::DimensionMismatch {
                    expected: block.len(),
                    found: oracle.dim(),
                });
            }
        }
        let mut blocks = blocks;
        for (b, _) in &mut blocks {
            b.sort_unstable();
        }
        Ok(Self {
            dim: partition.ground_size(),
            blocks,
        })
    }
}

impl MarginalOracle for ProductOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn marginal_cdf(&self, subset: &[usize], x: &[f64]) -> Result<f64> {
        let mut value = 1.0;
        for (block, oracle) in &self.blocks {
            let mut local = Vec::new();
            let mut coords = Vec::new();
            for (k, &j) in subset.iter().enumerate() {
                if let Ok(pos) = block.binary_search(&j) {
                    local.push(pos);
                    coords.push(x[k]);
                }
            }
            if !local.is_empty() {
                value *= oracle.marginal_cdf(&local, &coords)?;
            }
        }
        Ok(value)
    }
}

/// Empirical CDF of a data matrix: `F̂(x) = (1/n) Σ 1{all coordinates ≤ x}`.
pub struct EmpiricalOracle {
    data: DMatrix<f64>,
}

impl EmpiricalOracle {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(CgfError::EmptyData);
        }
        Ok(Self { data })
    }
}

impl MarginalOracle for EmpiricalOracle {
    fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn marginal_cdf(&self, subset: &[usize], x: &[f64]) -> Result<f64> {
        let n = self.data.nrows();
        let count = (0..n)
            .filter(|&i| subset.iter().zip(x).all(|(&j, &v)| self.data[(i, j)] <= v))
            .count();
        Ok(count as f64 / n as f64)
    }
}

/// Gaussian with unit variances and correlation `rho` in one or two dimensions.
pub struct GaussianOracle {
    means: Vec<f64>,
    sds: Vec<f64>,
    rho: f64,
}

impl GaussianOracle {
    pub fn univariate(mean: f64, sd: f64) -> Self {
        Self {
            means: vec![mean],
            sds: vec![sd],
            rho: 0.0,
        }
    }

    pub fn bivariate(means: [f64; 2], sds: [f64; 2], rho: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&rho) || sds.iter().any(|&s| s <= 0.0) {
            return Err(CgfError::InvalidParams(format!("rho {rho}, sds {sds:?}")));
        }
        Ok(Self {
            means: means.to_vec(),
            sds: sds.to_vec(),
            rho,
        })
    }
}

impl MarginalOracle for GaussianOracle {
    fn dim(&self) -> usize {
        self.means.len()
    }

    fn marginal_cdf(&self, subset: &[usize], x: &[f64]) -> Result<f64> {
        let z: Vec<f64> = subset
            .iter()
            .zip(x)
            .map(|(&j, &v)| (v - self.means[j]) / self.sds[j])
            .collect();
        Ok(match z.len() {
            1 => std_normal_cdf(z[0]),
            2 => bivariate_normal_cdf(z[0], z[1], self.rho),
            k => {
                return Err(CgfError::Domain(format!(
                    "Gaussian oracle supports 1 or 2 variables, got {k}"
                )))
            }
        })
    }
}

/// Tensor-product grid for the Lancaster integral.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
    /// Allowed disagreement between the grid and its doubled refinement.
    pub tolerance: f64,
}

impl GridSpec {
    pub fn uniform(dim: usize, lower: f64, upper: f64, nodes: usize, tolerance: f64) -> Result<Self> {
        let g = Self {
            lower: vec![lower; dim],
            upper: vec![upper; dim],
            nodes: vec![nodes; dim],
            tolerance,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.lower.len();
        if self.upper.len() != d || self.nodes.len() != d {
            return Err(CgfError::InvalidParams(
                "grid bounds and node counts differ in length".into(),
            ));
        }
        for k in 0..d {
            if !(self.lower[k] < self.upper[k]) {
                return Err(CgfError::InvalidParams(format!("grid axis {k}: lower must be < upper")));
            }
            if self.nodes[k] < 8 {
                return Err(CgfError::InvalidParams(format!("grid axis {k}: need at least 8 nodes")));
            }
        }
        if !(self.tolerance > 0.0) {
            return Err(CgfError::InvalidParams("grid tolerance must be positive".into()));
        }
        Ok(())
    }
}

fn check_point<O: MarginalOracle + ?Sized>(oracle: &O, x: &[f64]) -> Result<()> {
    if x.len() != oracle.dim() {
        return Err(CgfError::DimensionMismatch {
            expected: oracle.dim(),
            found: x.len(),
        });
    }
    Ok(())
}

fn block_value<O: MarginalOracle + ?Sized>(oracle: &O, block: &[usize], x: &[f64]) -> Result<f64> {
    let coords: Vec<f64> = block.iter().map(|&j| x[j]).collect();
    oracle.marginal_cdf(block, &coords)
}

/// `F_π(x)`: product over the blocks of `p` of the block marginal CDFs.
pub fn partition_apply<O: MarginalOracle + ?Sized>(oracle: &O, p: &SetPartition, x: &[f64]) -> Result<f64> {
    check_point(oracle, x)?;
    if p.ground_size() != oracle.dim() {
        return Err(CgfError::DimensionMismatch {
            expected: oracle.dim(),
            found: p.ground_size(),
        });
    }
    p.blocks()
        .iter()
        .try_fold(1.0, |acc, block| Ok(acc * block_value(oracle, block, x)?))
}

/// Pointwise Lancaster interaction `ΔF(x)`.
pub fn lancaster_measure<O: MarginalOracle + ?Sized>(oracle: &O, x: &[f64]) -> Result<f64> {
    check_point(oracle, x)?;
    let j = oracle.dim();
    if j == 0 || j > MAX_POINTWISE_DIM {
        return Err(CgfError::Domain(format!(
            "Lancaster measure needs 1 <= J <= {MAX_POINTWISE_DIM}, got {j}"
        )));
    }
    // Blocks recur across partitions; evaluate each marginal once.
    let mut cache: HashMap<&[usize], f64> = HashMap::new();
    let mut acc = CompensatedSum::new();
    for p in cached_partitions(j)? {
        let mut term = mobius_weight(p) as f64;
        for block in p.blocks() {
            let v = match cache.get(block.as_slice()) {
                Some(&v) => v,
                None => {
                    let v = block_value(oracle, block, x)?;
                    cache.insert(block.as_slice(), v);
                    v
                }
            };
            term *= v;
        }
        acc.add(term);
    }
    Ok(acc.value())
}

fn midpoint_integral<O: MarginalOracle + ?Sized>(oracle: &O, grid: &GridSpec, scale: usize) -> Result<f64> {
    let d = grid.dim();
    let counts: Vec<usize> = grid.nodes.iter().map(|n| n * scale).collect();
    let widths: Vec<f64> = (0..d)
        .map(|k| (grid.upper[k] - grid.lower[k]) / counts[k] as f64)
        .collect();
    let cell_volume: f64 = widths.iter().product();
    let total: usize = counts.iter().product();
    let inner: usize = counts[1..].iter().product();
    // parallel over the first axis, sequential inside
    let slabs: Vec<Result<f64>> = (0..counts[0])
        .into_par_iter()
        .map(|i0| {
            let mut acc = CompensatedSum::new();
            let mut x = vec![0.0; d];
            x[0] = grid.lower[0] + (i0 as f64 + 0.5) * widths[0];
            for flat in 0..inner {
                let mut rem = flat;
                for k in (1..d).rev() {
                    let ik = rem % counts[k];
                    rem /= counts[k];
                    x[k] = grid.lower[k] + (ik as f64 + 0.5) * widths[k];
                }
                acc.add(lancaster_measure(oracle, &x)?);
            }
            Ok(acc.value())
        })
        .collect();
    debug_assert_eq!(total, counts[0] * inner);
    let mut acc = CompensatedSum::new();
    for s in slabs {
        acc.add(s?);
    }
    Ok(acc.value() * cell_volume)
}

/// Joint cumulant of all `J ∈ {2, 3}` variables from the integral of `ΔF`:
/// `(−1)^J ∫ ΔF`. For `J = 2` this is Hoeffding's covariance formula.
///
/// The midpoint rule is run on `grid` and on a grid with doubled node counts;
/// the refined value is returned when the two agree within `grid.tolerance`.
pub fn cumulant_via_lancaster_integral<O: MarginalOracle + ?Sized>(oracle: &O, grid: &GridSpec) -> Result<f64> {
    grid.validate()?;
    let j = oracle.dim();
    if !(2..=3).contains(&j) {
        return Err(CgfError::Domain(format!(
            "Lancaster integral needs J in {{2, 3}}, got {j}"
        )));
    }
    if grid.dim() != j {
        return Err(CgfError::DimensionMismatch {
            expected: j,
            found: grid.dim(),
        });
    }
    for k in 0..j {
        let lo = oracle.marginal_cdf(&[k], &[grid.lower[k]])?;
        let hi = oracle.marginal_cdf(&[k], &[grid.upper[k]])?;
        if lo > 1e-4 || hi < 1.0 - 1e-4 {
            return Err(CgfError::Domain(format!(
                "grid axis {k} misses probability mass (F(lower) = {lo:.2e}, F(upper) = {hi:.6})"
            )));
        }
    }
    let coarse = midpoint_integral(oracle, grid, 1)?;
    let fine = midpoint_integral(oracle, grid, 2)?;
    if (fine - coarse).abs() > grid.tolerance {
        return Err(CgfError::QuadratureNotConverged { coarse, fine });
    }
    let sign = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
    Ok(sign * fine)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_cdf(x: f64) -> f64 {
        x.clamp(0.0, 1.0)
    }

    /// Independent uniforms on [0,1] with a comonotone pair (2,3) when `tie` is set.
    fn four_dim(tie: bool) -> impl MarginalOracle {
        FnOracle::new(4, move |subset: &[usize], x: &[f64]| {
            let mut v = 1.0;
            let mut pair = f64::INFINITY;
            let mut pair_seen = 0;
            for (&j, &xj) in subset.iter().zip(x) {
                if tie && (j == 2 || j == 3) {
                    pair = pair.min(uniform_cdf(xj));
                    pair_seen += 1;
                } else {
                    v *= uniform_cdf(xj);
                }
            }
            if pair_seen > 0 {
                v *= pair;
            }
            v
        })
    }

    #[test]
    fn partition_operator_cases() {
        let oracle = four_dim(true);
        let x = [0.3, 0.6, 0.4, 0.7];
        let whole = partition_apply(&oracle, &SetPartition::whole(4), &x).unwrap();
        assert!((whole - 0.3 * 0.6 * 0.4).abs() < 1e-15);
        let single = partition_apply(&oracle, &SetPartition::singletons(4), &x).unwrap();
        assert!((single - 0.3 * 0.6 * 0.4 * 0.7).abs() < 1e-15);
        let p = SetPartition::new(vec![vec![0], vec![1], vec![2, 3]]).unwrap();
        let v = partition_apply(&oracle, &p, &x).unwrap();
        assert!((v - 0.3 * 0.6 * 0.4).abs() < 1e-15);
    }

    #[test]
    fn decomposable_vanishes() {
        // F = F_{0,1,3} · F_{2} with an interacting (0,1,3) block
        let block = FnOracle::new(3, |subset: &[usize], x: &[f64]| {
            // comonotone triple
            subset.iter().zip(x).map(|(_, &v)| uniform_cdf(v)).fold(1.0, f64::min)
        });
        let single = FnOracle::new(1, |_: &[usize], x: &[f64]| uniform_cdf(x[0]));
        let oracle = ProductOracle::new(vec![
            (vec![0, 1, 3], Box::new(block) as Box<dyn MarginalOracle + Send>),
            (vec![2], Box::new(single)),
        ])
        .unwrap();
        for x in [[0.2, 0.5, 0.9, 0.4], [0.7, 0.1, 0.3, 0.35], [0.5, 0.5, 0.5, 0.5]] {
            assert!(lancaster_measure(&oracle, &x).unwrap().abs() <= 1e-12);
        }
    }

    #[test]
    fn comonotone_pair() {
        let oracle = FnOracle::new(2, |subset: &[usize], x: &[f64]| {
            x.iter().take(subset.len()).map(|&v| uniform_cdf(v)).fold(1.0, f64::min)
        });
        let d = lancaster_measure(&oracle, &[0.5, 0.5]).unwrap();
        assert!((d - 0.25).abs() < 1e-15);
    }

    #[test]
    fn constant_field_vanishes() {
        for j in 2..=6 {
            let oracle = FnOracle::new(j, |_: &[usize], _: &[f64]| 1.0);
            let x = vec![0.0; j];
            assert_eq!(lancaster_measure(&oracle, &x).unwrap(), 0.0);
        }
    }

    #[test]
    fn guards() {
        let oracle = FnOracle::new(7, |_: &[usize], _: &[f64]| 1.0);
        assert!(lancaster_measure(&oracle, &[0.0; 7]).is_err());
        let two = GaussianOracle::bivariate([0.0; 2], [1.0; 2], 0.0).unwrap();
        assert!(lancaster_measure(&two, &[0.0; 3]).is_err());
        assert!(GridSpec::uniform(2, 1.0, -1.0, 16, 1e-3).is_err());
        assert!(GridSpec::uniform(2, -1.0, 1.0, 4, 1e-3).is_err());
        // grid that misses mass
        let narrow = GridSpec::uniform(2, -1.0, 1.0, 16, 1e-3).unwrap();
        assert!(cumulant_via_lancaster_integral(&two, &narrow).is_err());
    }

    #[test]
    fn hoeffding_independent_gaussian() {
        let oracle = GaussianOracle::bivariate([0.0; 2], [1.0; 2], 0.0).unwrap();
        let grid = GridSpec::uniform(2, -6.0, 6.0, 64, 1e-6).unwrap();
        let c = cumulant_via_lancaster_integral(&oracle, &grid).unwrap();
        assert!(c.abs() < 1e-6, "{c}");
    }

    #[test]
    fn hoeffding_correlated_gaussian() {
        let oracle = GaussianOracle::bivariate([0.0; 2], [1.0; 2], 0.5).unwrap();
        let grid = GridSpec::uniform(2, -7.0, 7.0, 100, 1e-3).unwrap();
        let c = cumulant_via_lancaster_integral(&oracle, &grid).unwrap();
        assert!((c - 0.5).abs() < 1e-3, "{c}");
    }

    #[test]
    fn empirical_oracle_counts() {
        let data = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 1.0, 0.0, 2.0, 2.0, 3.0, 3.0]);
        let oracle = EmpiricalOracle::new(data).unwrap();
        assert_eq!(oracle.marginal_cdf(&[0], &[1.5]).unwrap(), 0.5);
        assert_eq!(oracle.marginal_cdf(&[0, 1], &[1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(oracle.marginal_cdf(&[0, 1], &[1.0, 0.5]).unwrap(), 0.25);
    }
}
