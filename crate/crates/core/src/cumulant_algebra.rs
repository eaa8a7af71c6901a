//! Moments, joint cumulants and the partition sums that connect them.
//!
//! Sample cumulants use plug-in moments (averages of products, no bias
//! correction). Under that convention the cumulant of a column sum equals the
//! multilinear expansion over joint cumulants exactly, which is what the
//! method-of-cumulants fit relies on.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;

use crate::error::{CgfError, Result};
use crate::numeric::{compensated_sum, factorial, CompensatedSum};
use crate::partitions::{cached_partitions, mobius_weight};

/// Highest cumulant order handled by the partition-based routines.
pub const MAX_ORDER: usize = 8;

/// Sorted tuple of variable indices; repeats allowed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    /// Sorts `indices`, so any permutation yields the same key.
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        Self(indices)
    }

    pub fn repeated(index: usize, order: usize) -> Self {
        Self(vec![index; order])
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    /// Sub-multi-index picked out by positions.
    pub fn select(&self, positions: &[usize]) -> Self {
        Self::new(positions.iter().map(|&p| self.0[p]).collect())
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        if self.0.is_empty() || self.0.len() > MAX_ORDER {
            return Err(CgfError::Domain(format!(
                "multi-index order must be in 1..={MAX_ORDER}, got {}",
                self.0.len()
            )));
        }
        match self.0.iter().find(|&&i| i >= dim) {
            Some(&index) => Err(CgfError::IndexOutOfRange { index, dim }),
            None => Ok(()),
        }
    }

    /// Number of ordered tuples that sort to this multi-index.
    pub fn multiplicity(&self) -> f64 {
        let mut denom = 1.0;
        let mut run = 1;
        for w in self.0.windows(2) {
            if w[0] == w[1] {
                run += 1;
            } else {
                denom *= factorial(run);
                run = 1;
            }
        }
        if !self.0.is_empty() {
            denom *= factorial(run);
        }
        factorial(self.0.len()) / denom
    }
}

impl std::fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, ")")
    }
}

/// Raw joint moments `E(X_{j1} ⋯ X_{jd})` keyed by multi-index.
#[derive(Debug, Clone)]
pub struct MomentSet {
    dim: usize,
    values: HashMap<MultiIndex, f64>,
}

impl MomentSet {
    pub fn new(dim: usize) -> Self {
        let mut values = HashMap::new();
        values.insert(MultiIndex::empty(), 1.0);
        Self { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(&mut self, idx: MultiIndex, value: f64) {
        self.values.insert(idx, value);
    }

    pub fn get(&self, idx: &MultiIndex) -> Option<f64> {
        self.values.get(idx).copied()
    }
}

/// Symmetric array of order-`d` joint cumulants, keyed on sorted multi-indices.
/// Entries that were never set read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulantTensor {
    dim: usize,
    order: usize,
    values: BTreeMap<MultiIndex, f64>,
}

impl CumulantTensor {
    pub fn zeros(dim: usize, order: usize) -> Self {
        Self {
            dim,
            order,
            values: BTreeMap::new(),
        }
    }

    /// Tensor with every entry equal to `value`.
    pub fn constant(dim: usize, order: usize, value: f64) -> Self {
        let mut t = Self::zeros(dim, order);
        for idx in sorted_multi_indices(&(0..dim).collect::<Vec<_>>(), order) {
            t.values.insert(idx, value);
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn set(&mut self, idx: MultiIndex, value: f64) -> Result<()> {
        if idx.order() != self.order {
            return Err(CgfError::DimensionMismatch {
                expected: self.order,
                found: idx.order(),
            });
        }
        idx.check(self.dim)?;
        self.values.insert(idx, value);
        Ok(())
    }

    pub fn get(&self, idx: &MultiIndex) -> f64 {
        self.values.get(idx).copied().unwrap_or(0.0)
    }

    pub fn try_get(&self, idx: &MultiIndex) -> Option<f64> {
        self.values.get(idx).copied()
    }

    /// Stored (non-default) entries in key order.
    pub fn entries(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.values.iter().map(|(k, v)| (k, *v))
    }

    /// Order-`order` sample cumulant tensor over all `dim` columns of `data`.
    pub fn from_data(data: &DMatrix<f64>, order: usize) -> Result<Self> {
        let moments = SampleMoments::new(data, order > 1)?;
        let dim = data.ncols();
        let mut t = Self::zeros(dim, order);
        for idx in sorted_multi_indices(&(0..dim).collect::<Vec<_>>(), order) {
            idx.check(dim)?;
            let v = moments.cumulant(&idx)?;
            t.values.insert(idx, v);
        }
        Ok(t)
    }
}

/// All sorted multi-indices of length `order` drawn (with repetition) from `set`.
pub fn sorted_multi_indices(set: &[usize], order: usize) -> Vec<MultiIndex> {
    let mut set = set.to_vec();
    set.sort_unstable();
    set.dedup();
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(order);
    fn rec(set: &[usize], start: usize, order: usize, cur: &mut Vec<usize>, out: &mut Vec<MultiIndex>) {
        if cur.len() == order {
            out.push(MultiIndex(cur.clone()));
            return;
        }
        for k in start..set.len() {
            cur.push(set[k]);
            rec(set, k, order, cur, out);
            cur.pop();
        }
    }
    rec(&set, 0, order, &mut cur, &mut out);
    out
}

/// Alternating partition sum: `Σ_π w(π) Π_{v∈π} m(idx_v)`.
fn partition_sum_weighted<F>(idx: &MultiIndex, mut moment: F) -> Result<f64>
where
    F: FnMut(&MultiIndex) -> Result<f64>,
{
    let mut acc = CompensatedSum::new();
    for p in cached_partitions(idx.order())? {
        let mut term = mobius_weight(p) as f64;
        for block in p.blocks() {
            term *= moment(&idx.select(block))?;
        }
        acc.add(term);
    }
    Ok(acc.value())
}

/// Joint cumulant of order `idx.order()` from raw moments.
pub fn cumulant_from_moments(moments: &MomentSet, idx: &MultiIndex) -> Result<f64> {
    idx.check(moments.dim)?;
    partition_sum_weighted(idx, |sub| {
        moments
            .get(sub)
            .ok_or_else(|| CgfError::IncompleteInput(format!("moment E{sub}")))
    })
}

/// Raw joint moment from cumulants: `E(Π X) = Σ_π Π_{v∈π} cum(X_v)`.
///
/// `cumulants` must contain one tensor per order `1..=idx.order()`.
pub fn moments_from_cumulants(cumulants: &[CumulantTensor], idx: &MultiIndex) -> Result<f64> {
    let dim = cumulants.first().map(|t| t.dim).unwrap_or(0);
    idx.check(dim)?;
    let mut by_order: HashMap<usize, &CumulantTensor> = HashMap::new();
    for t in cumulants {
        by_order.insert(t.order, t);
    }
    for order in 1..=idx.order() {
        if !by_order.contains_key(&order) {
            return Err(CgfError::IncompleteInput(format!("cumulant tensor of order {order}")));
        }
    }
    let mut acc = CompensatedSum::new();
    for p in cached_partitions(idx.order())? {
        let mut term = 1.0;
        for block in p.blocks() {
            let sub = idx.select(block);
            term *= by_order[&sub.order()].get(&sub);
        }
        acc.add(term);
    }
    Ok(acc.value())
}

/// Plug-in moment cache over a data matrix. For orders above one the columns
/// are centred first; cumulants of order ≥ 2 are shift invariant, and centred
/// products lose far less precision.
struct SampleMoments<'a> {
    data: &'a DMatrix<f64>,
    means: Vec<f64>,
    centred: bool,
    cache: std::cell::RefCell<HashMap<MultiIndex, f64>>,
}

impl<'a> SampleMoments<'a> {
    fn new(data: &'a DMatrix<f64>, centred: bool) -> Result<Self> {
        let n = data.nrows();
        if n == 0 || data.ncols() == 0 {
            return Err(CgfError::EmptyData);
        }
        if n < 2 {
            return Err(CgfError::Domain("need at least 2 observations".into()));
        }
        let means = (0..data.ncols())
            .map(|j| compensated_sum(data.column(j).iter().copied()) / n as f64)
            .collect();
        Ok(Self {
            data,
            means,
            centred,
            cache: Default::default(),
        })
    }

    fn moment(&self, idx: &MultiIndex) -> f64 {
        if idx.order() == 0 {
            return 1.0;
        }
        if let Some(&v) = self.cache.borrow().get(idx) {
            return v;
        }
        let n = self.data.nrows();
        let shifts: Vec<f64> = idx
            .indices()
            .iter()
            .map(|&j| if self.centred { self.means[j] } else { 0.0 })
            .collect();
        let mut acc = CompensatedSum::new();
        for row in 0..n {
            let mut prod = 1.0;
            for (k, &j) in idx.indices().iter().enumerate() {
                prod *= self.data[(row, j)] - shifts[k];
            }
            acc.add(prod);
        }
        let v = acc.value() / n as f64;
        self.cache.borrow_mut().insert(idx.clone(), v);
        v
    }

    fn cumulant(&self, idx: &MultiIndex) -> Result<f64> {
        if idx.order() == 1 {
            return Ok(self.means[idx.indices()[0]]);
        }
        partition_sum_weighted(idx, |sub| Ok(self.moment(sub)))
    }
}

/// Plug-in sample joint cumulant of the columns named by `idx`.
pub fn sample_joint_cumulant(data: &DMatrix<f64>, idx: &MultiIndex) -> Result<f64> {
    if data.nrows() == 0 || data.ncols() == 0 {
        return Err(CgfError::EmptyData);
    }
    idx.check(data.ncols())?;
    SampleMoments::new(data, idx.order() > 1)?.cumulant(idx)
}

/// Order-`r` plug-in cumulant of `S = Σ_{j∈subset} X_j`, expanded by
/// multilinearity into joint cumulants of the components.
pub fn cumulant_of_sum(data: &DMatrix<f64>, subset: &[usize], r: usize) -> Result<f64> {
    if subset.is_empty() {
        return Err(CgfError::Domain("subset must be non-empty".into()));
    }
    if r == 0 || r > MAX_ORDER {
        return Err(CgfError::Domain(format!("order must be in 1..={MAX_ORDER}, got {r}")));
    }
    if data.nrows() == 0 || data.ncols() == 0 {
        return Err(CgfError::EmptyData);
    }
    if let Some(&index) = subset.iter().find(|&&j| j >= data.ncols()) {
        return Err(CgfError::IndexOutOfRange {
            index,
            dim: data.ncols(),
        });
    }
    let moments = SampleMoments::new(data, r > 1)?;
    let mut acc = CompensatedSum::new();
    for idx in sorted_multi_indices(subset, r) {
        acc.add(idx.multiplicity() * moments.cumulant(&idx)?);
    }
    Ok(acc.value())
}

/// Plug-in covariance matrix (divisor `n`).
pub fn plug_in_covariance(data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let moments = SampleMoments::new(data, true)?;
    let j = data.ncols();
    let mut cov = DMatrix::zeros(j, j);
    for a in 0..j {
        for b in a..j {
            let v = moments.moment(&MultiIndex::new(vec![a, b]));
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

/// Univariate cumulants `κ_1..κ_len` from raw moments `E X, E X², …`.
///
/// This is the partition sum grouped by the block that contains the first
/// element: `κ_n = μ'_n − Σ_{m<n} C(n−1, m−1) κ_m μ'_{n−m}`.
pub fn cumulants_from_raw_moments(raw: &[f64]) -> Vec<f64> {
    let mut kappa: Vec<f64> = Vec::with_capacity(raw.len());
    for n in 1..=raw.len() {
        let mut k = raw[n - 1];
        for m in 1..n {
            k -= crate::numeric::binomial(n - 1, m - 1) * kappa[m - 1] * raw[n - m - 1];
        }
        kappa.push(k);
    }
    kappa
}

/// Inverse of [`cumulants_from_raw_moments`].
pub fn raw_moments_from_cumulants(kappa: &[f64]) -> Vec<f64> {
    let mut raw: Vec<f64> = Vec::with_capacity(kappa.len());
    for n in 1..=kappa.len() {
        let mut mu = kappa[n - 1];
        for m in 1..n {
            mu += crate::numeric::binomial(n - 1, m - 1) * kappa[m - 1] * raw[n - m - 1];
        }
        raw.push(mu);
    }
    raw
}

/// Plug-in cumulants `κ_1..κ_max_order` of a single sample, computed from
/// central moments by the univariate recursion (no partition enumeration).
pub fn univariate_sample_cumulants(values: &[f64], max_order: usize) -> Result<Vec<f64>> {
    let n = values.len();
    if n == 0 {
        return Err(CgfError::EmptyData);
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    let mut central = Vec::with_capacity(max_order);
    for r in 1..=max_order {
        central.push(compensated_sum(values.iter().map(|&x| (x - mean).powi(r as i32))) / n as f64);
    }
    let mut kappa = cumulants_from_raw_moments(&central);
    if let Some(k1) = kappa.first_mut() {
        *k1 = mean;
    }
    Ok(kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mi(v: &[usize]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    #[test]
    fn covariance_from_moments() {
        let mut m = MomentSet::new(3);
        m.insert(mi(&[1]), 0.0);
        m.insert(mi(&[2]), 0.0);
        m.insert(mi(&[1, 2]), 0.7);
        assert!((cumulant_from_moments(&m, &mi(&[1, 2])).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn third_order_expansion() {
        let mut m = MomentSet::new(4);
        for i in 1..=3 {
            m.insert(mi(&[i]), 1.0);
        }
        for (a, b) in [(1, 2), (1, 3), (2, 3)] {
            m.insert(mi(&[a, b]), 2.0);
        }
        m.insert(mi(&[1, 2, 3]), 6.0);
        assert!((cumulant_from_moments(&m, &mi(&[1, 2, 3])).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn product_distribution_has_no_third_cumulant() {
        // independent components with means 1, 2, 3
        let mean = [0.0, 1.0, 2.0, 3.0];
        let mut m = MomentSet::new(4);
        for (i, &v) in mean.iter().enumerate().skip(1) {
            m.insert(mi(&[i]), v);
        }
        for (a, b) in [(1, 2), (1, 3), (2, 3)] {
            m.insert(mi(&[a, b]), mean[a] * mean[b]);
        }
        m.insert(mi(&[1, 2, 3]), 6.0);
        assert!(cumulant_from_moments(&m, &mi(&[1, 2, 3])).unwrap().abs() < 1e-14);
    }

    #[test]
    fn missing_moment_is_named() {
        let m = MomentSet::new(2);
        match cumulant_from_moments(&m, &mi(&[0, 1])) {
            Err(CgfError::IncompleteInput(s)) => assert!(s.contains("(0,1)") || s.contains("(0)")),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn univariate_tensors(kappa: &[f64]) -> Vec<CumulantTensor> {
        kappa
            .iter()
            .enumerate()
            .map(|(r, &k)| {
                let mut t = CumulantTensor::zeros(1, r + 1);
                t.set(MultiIndex::repeated(0, r + 1), k).unwrap();
                t
            })
            .collect()
    }

    #[test]
    fn moments_from_known_cumulants() {
        let normal = univariate_tensors(&[0.0, 1.0, 0.0, 0.0]);
        let m4 = moments_from_cumulants(&normal, &MultiIndex::repeated(0, 4)).unwrap();
        assert!((m4 - 3.0).abs() < 1e-15);

        let point = univariate_tensors(&[1.5, 0.0]);
        let m2 = moments_from_cumulants(&point, &MultiIndex::repeated(0, 2)).unwrap();
        assert!((m2 - 2.25).abs() < 1e-15);

        // gamma(k=2, θ=1): κ_r = 2 (r−1)!, E X³ = Γ(5)/Γ(2) = 24
        let gamma = univariate_tensors(&[2.0, 2.0, 4.0]);
        let m3 = moments_from_cumulants(&gamma, &MultiIndex::repeated(0, 3)).unwrap();
        assert!((m3 - 24.0).abs() < 1e-12);

        assert!(matches!(
            moments_from_cumulants(&gamma[..2], &MultiIndex::repeated(0, 3)),
            Err(CgfError::IncompleteInput(_))
        ));
    }

    #[test]
    fn small_sample_cases() {
        let constant = DMatrix::from_row_slice(3, 1, &[2.0, 2.0, 2.0]);
        assert_eq!(sample_joint_cumulant(&constant, &mi(&[0, 0])).unwrap(), 0.0);

        let two = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        assert!((sample_joint_cumulant(&two, &mi(&[0, 1])).unwrap() - 0.25).abs() < 1e-15);

        assert!(matches!(
            sample_joint_cumulant(&two, &mi(&[0, 2])),
            Err(CgfError::IndexOutOfRange { index: 2, dim: 2 })
        ));
        let empty = DMatrix::<f64>::zeros(0, 2);
        assert_eq!(sample_joint_cumulant(&empty, &mi(&[0])), Err(CgfError::EmptyData));
    }

    #[test]
    fn single_element_sum() {
        let data = DMatrix::from_fn(50, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 + 0.1 * (i as f64).sqrt());
        for r in 1..=5 {
            let a = cumulant_of_sum(&data, &[1], r).unwrap();
            let b = sample_joint_cumulant(&data, &MultiIndex::repeated(1, r)).unwrap();
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn multiplicity_counts_orderings() {
        assert_eq!(mi(&[0, 0, 1]).multiplicity(), 3.0);
        assert_eq!(mi(&[0, 1, 2]).multiplicity(), 6.0);
        assert_eq!(mi(&[2, 2, 2, 2]).multiplicity(), 1.0);
        assert_eq!(sorted_multi_indices(&[0, 1, 2], 3).len(), 10);
    }

    #[test]
    fn covariance_agrees_with_order_two_tensor() {
        let data = DMatrix::from_fn(40, 3, |i, j| ((i * (j + 2)) % 7) as f64 - (j as f64) * 0.3);
        let cov = plug_in_covariance(&data).unwrap();
        let t = CumulantTensor::from_data(&data, 2).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let v = t.get(&mi(&[a, b]));
                assert!((v - cov[(a, b)]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn raw_cumulant_recursion_matches_partitions() {
        let kappa = [0.3, 1.2, -0.4, 2.0, 0.7, -1.1];
        let raw = raw_moments_from_cumulants(&kappa);
        let tensors = univariate_tensors(&kappa);
        for r in 1..=6 {
            let via_partitions = moments_from_cumulants(&tensors, &MultiIndex::repeated(0, r)).unwrap();
            assert!((raw[r - 1] - via_partitions).abs() < 1e-12 * via_partitions.abs().max(1.0));
        }
        let back = cumulants_from_raw_moments(&raw);
        for (a, b) in back.iter().zip(&kappa) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn data_strategy() -> impl Strategy<Value = DMatrix<f64>> {
        (5usize..30, 2usize..4).prop_flat_map(|(n, j)| {
            prop::collection::vec(-3.0f64..3.0, n * j).prop_map(move |v| DMatrix::from_vec(n, j, v))
        })
    }

    proptest! {
        #[test]
        fn permutation_invariant(data in data_strategy(), seed in 0usize..1000) {
            let j = data.ncols();
            let raw = vec![seed % j, (seed / 3) % j, (seed / 7) % j, 0];
            let a = sample_joint_cumulant(&data, &MultiIndex::new(raw.clone())).unwrap();
            let mut rev = raw.clone();
            rev.reverse();
            let b = sample_joint_cumulant(&data, &MultiIndex::new(rev)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn multilinear_in_first_argument(data in data_strategy()) {
            // cum(X0 + X1, X1, X0) = cum(X0, X1, X0) + cum(X1, X1, X0)
            let n = data.nrows();
            let mut ext = data.clone().insert_column(data.ncols(), 0.0);
            let last = ext.ncols() - 1;
            for i in 0..n {
                ext[(i, last)] = data[(i, 0)] + data[(i, 1)];
            }
            let lhs = sample_joint_cumulant(&ext, &MultiIndex::new(vec![last, 1, 0])).unwrap();
            let rhs = sample_joint_cumulant(&ext, &MultiIndex::new(vec![0, 1, 0])).unwrap()
                + sample_joint_cumulant(&ext, &MultiIndex::new(vec![1, 1, 0])).unwrap();
            let scale = lhs.abs().max(rhs.abs()).max(1e-3);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * scale, "{} vs {}", lhs, rhs);
        }

        #[test]
        fn moment_cumulant_round_trip(vals in prop::collection::vec(-2.0f64..2.0, 40)) {
            // random bivariate moment set up to order 4, then back and forth
            let mut m = MomentSet::new(2);
            let mut k = 0;
            for order in 1..=4 {
                for idx in sorted_multi_indices(&[0, 1], order) {
                    m.insert(idx, vals[k % vals.len()]);
                    k += 1;
                }
            }
            let mut tensors = Vec::new();
            for order in 1..=4 {
                let mut t = CumulantTensor::zeros(2, order);
                for idx in sorted_multi_indices(&[0, 1], order) {
                    let c = cumulant_from_moments(&m, &idx).unwrap();
                    t.set(idx, c).unwrap();
                }
                tensors.push(t);
            }
            for order in 1..=4 {
                for idx in sorted_multi_indices(&[0, 1], order) {
                    let back = moments_from_cumulants(&tensors, &idx).unwrap();
                    let want = m.get(&idx).unwrap();
                    prop_assert!((back - want).abs() <= 1e-12 * want.abs().max(1.0));
                }
            }
        }
    }
}
