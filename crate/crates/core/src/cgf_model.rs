//! The elliptical CGF model `K(s) = s·m + Σ_{r=1}^{R} c_r/r! · q^r`,
//! `q = ½ sᵀΓs`, together with aggregation maps and analytic cumulants of
//! component sums.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CgfError, Result};
use crate::numeric::{check_square, factorial, is_psd, is_symmetric};

/// Relative tolerance for the PSD check on Γ.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// A cumulant generating function on `ℝ^J`.
///
/// Points outside the domain of `K` are reported as [`CgfError::Domain`].
pub trait Cgf: Sync {
    fn dim(&self) -> usize;

    fn value(&self, s: &DVector<f64>) -> Result<f64>;

    fn gradient(&self, s: &DVector<f64>) -> Result<DVector<f64>>;

    fn hessian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>>;
}

/// A univariate CGF with derivatives of any order.
///
/// `value` and `derivative` return a non-finite number outside the domain.
pub trait UnivariateCgf: Sync {
    fn value(&self, t: f64) -> f64;

    /// `d^order K / dt^order` at `t`; `order = 0` is the value.
    fn derivative(&self, t: f64, order: usize) -> f64;

    /// `κ_order`, the derivative at zero.
    fn cumulant(&self, order: usize) -> f64 {
        self.derivative(0.0, order)
    }
}

/// Wraps a [`UnivariateCgf`] as a one-dimensional [`Cgf`].
#[derive(Debug, Clone)]
pub struct Univariate<C>(pub C);

fn finite(v: f64, t: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CgfError::Domain(format!("CGF undefined at t = {t}")))
    }
}

fn one_dim(s: &DVector<f64>) -> Result<f64> {
    if s.len() != 1 {
        return Err(CgfError::DimensionMismatch {
            expected: 1,
            found: s.len(),
        });
    }
    Ok(s[0])
}

impl<C: UnivariateCgf> Cgf for Univariate<C> {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, s: &DVector<f64>) -> Result<f64> {
        let t = one_dim(s)?;
        finite(self.0.value(t), t)
    }

    fn gradient(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        let t = one_dim(s)?;
        Ok(DVector::from_element(1, finite(self.0.derivative(t, 1), t)?))
    }

    fn hessian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        let t = one_dim(s)?;
        Ok(DMatrix::from_element(1, 1, finite(self.0.derivative(t, 2), t)?))
    }
}

/// `K(t) = Σ_n κ_n tⁿ/n!` for finitely many cumulants `κ_1, κ_2, …`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialCgf {
    kappa: Vec<f64>,
}

impl PolynomialCgf {
    /// `kappa[0]` is `κ_1`.
    pub fn new(kappa: Vec<f64>) -> Self {
        Self { kappa }
    }

    pub fn gaussian(mean: f64, variance: f64) -> Self {
        Self::new(vec![mean, variance])
    }

    pub fn cumulants(&self) -> &[f64] {
        &self.kappa
    }
}

impl UnivariateCgf for PolynomialCgf {
    fn value(&self, t: f64) -> f64 {
        self.derivative(t, 0)
    }

    fn derivative(&self, t: f64, order: usize) -> f64 {
        // d^order/dt^order Σ κ_n tⁿ/n! = Σ_{n ≥ order} κ_n t^{n−order}/(n−order)!
        let mut acc = 0.0;
        for (i, &k) in self.kappa.iter().enumerate() {
            let n = i + 1;
            if n >= order {
                acc += k * t.powi((n - order) as i32) / factorial(n - order);
            }
        }
        acc
    }

    fn cumulant(&self, order: usize) -> f64 {
        if order == 0 {
            0.0
        } else {
            self.kappa.get(order - 1).copied().unwrap_or(0.0)
        }
    }
}

/// Gamma distribution with shape `k` and scale `θ`: `K(t) = −k log(1 − θt)`, `t < 1/θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaCgf {
    pub shape: f64,
    pub scale: f64,
}

impl GammaCgf {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
            return Err(CgfError::InvalidParams(format!("gamma shape {shape}, scale {scale}")));
        }
        Ok(Self { shape, scale })
    }
}

impl UnivariateCgf for GammaCgf {
    fn value(&self, t: f64) -> f64 {
        self.derivative(t, 0)
    }

    fn derivative(&self, t: f64, order: usize) -> f64 {
        let u = 1.0 - self.scale * t;
        if !(u > 0.0) {
            return f64::INFINITY;
        }
        if order == 0 {
            return -self.shape * (-self.scale * t).ln_1p();
        }
        self.shape * factorial(order - 1) * (self.scale / u).powi(order as i32)
    }
}

/// The elliptical model. Serialises as `{"m": [...], "Gamma": [[...], ...], "coeffs": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDocument", into = "ModelDocument")]
pub struct EllipticalCgf {
    m: DVector<f64>,
    gamma: DMatrix<f64>,
    coeffs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    m: Vec<f64>,
    #[serde(rename = "Gamma")]
    gamma: Vec<Vec<f64>>,
    coeffs: Vec<f64>,
}

impl TryFrom<ModelDocument> for EllipticalCgf {
    type Error = CgfError;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        let j = doc.m.len();
        if doc.gamma.len() != j {
            return Err(CgfError::DimensionMismatch {
                expected: j,
                found: doc.gamma.len(),
            });
        }
        for row in &doc.gamma {
            if row.len() != j {
                return Err(CgfError::DimensionMismatch {
                    expected: j,
                    found: row.len(),
                });
            }
        }
        let gamma = DMatrix::from_fn(j, j, |r, c| doc.gamma[r][c]);
        EllipticalCgf::new(DVector::from_vec(doc.m), gamma, doc.coeffs)
    }
}

impl From<EllipticalCgf> for ModelDocument {
    fn from(model: EllipticalCgf) -> Self {
        let j = model.dim();
        ModelDocument {
            m: model.m.iter().copied().collect(),
            gamma: (0..j).map(|r| model.gamma.row(r).iter().copied().collect()).collect(),
            coeffs: model.coeffs,
        }
    }
}

impl EllipticalCgf {
    pub fn new(m: DVector<f64>, gamma: DMatrix<f64>, coeffs: Vec<f64>) -> Result<Self> {
        let j = m.len();
        if j == 0 {
            return Err(CgfError::InvalidModel("empty mean vector".into()));
        }
        check_square(&gamma, j)?;
        if coeffs.is_empty() {
            return Err(CgfError::InvalidModel("at least one coefficient is required".into()));
        }
        if m.iter()
            .chain(gamma.iter())
            .chain(coeffs.iter())
            .any(|v| !v.is_finite())
        {
            return Err(CgfError::InvalidModel("non-finite parameter".into()));
        }
        let scale = gamma.amax().max(1.0);
        if !is_symmetric(&gamma, 1e-12 * scale) {
            return Err(CgfError::InvalidModel("Gamma is not symmetric".into()));
        }
        if !is_psd(&gamma, PSD_TOLERANCE) {
            return Err(CgfError::InvalidModel("Gamma is not positive semidefinite".into()));
        }
        Ok(Self { m, gamma, coeffs })
    }

    /// `c = (1)`: the Gaussian `N(m, Γ)`.
    pub fn gaussian(m: DVector<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        Self::new(m, gamma, vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Series truncation `R`.
    pub fn terms(&self) -> usize {
        self.coeffs.len()
    }

    fn check(&self, s: &DVector<f64>) -> Result<()> {
        if s.len() != self.dim() {
            return Err(CgfError::DimensionMismatch {
                expected: self.dim(),
                found: s.len(),
            });
        }
        Ok(())
    }

    /// `α(q) = Σ_r c_r q^{r−1}/(r−1)!`
    fn alpha(&self, q: f64) -> f64 {
        let mut acc = 0.0;
        let mut pow = 1.0;
        for (i, &c) in self.coeffs.iter().enumerate() {
            acc += c * pow / factorial(i);
            pow *= q;
        }
        acc
    }

    /// `β(q) = Σ_{r≥2} c_r q^{r−2}/(r−2)!`
    fn beta(&self, q: f64) -> f64 {
        let mut acc = 0.0;
        let mut pow = 1.0;
        for (i, &c) in self.coeffs.iter().enumerate().skip(1) {
            acc += c * pow / factorial(i - 1);
            pow *= q;
        }
        acc
    }

    /// Marginal model of the coordinates in `subset` (same coefficients).
    pub fn marginal(&self, subset: &[usize]) -> Result<Self> {
        check_subset(subset, self.dim())?;
        if subset.is_empty() {
            return Err(CgfError::Domain("empty subset".into()));
        }
        let m = DVector::from_iterator(subset.len(), subset.iter().map(|&i| self.m[i]));
        let gamma = DMatrix::from_fn(subset.len(), subset.len(), |a, b| self.gamma[(subset[a], subset[b])]);
        Ok(Self {
            m,
            gamma,
            coeffs: self.coeffs.clone(),
        })
    }

    /// Univariate CGF of `Σ_{j ∈ subset} X_j`.
    pub fn sum_cgf(&self, subset: &[usize]) -> Result<PolynomialCgf> {
        check_subset(subset, self.dim())?;
        let mut kappa = Vec::with_capacity(2 * self.terms());
        for order in 1..=2 * self.terms() {
            kappa.push(sum_cumulants(self, subset, order)?);
        }
        Ok(PolynomialCgf::new(kappa))
    }
}

impl Cgf for EllipticalCgf {
    fn dim(&self) -> usize {
        self.m.len()
    }

    fn value(&self, s: &DVector<f64>) -> Result<f64> {
        cgf_eval(self, s)
    }

    fn gradient(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        cgf_gradient(self, s)
    }

    fn hessian(&self, s: &DVector<f64>) -> Result<DMatrix<f64>> {
        cgf_hessian(self, s)
    }
}

pub fn cgf_eval(model: &EllipticalCgf, s: &DVector<f64>) -> Result<f64> {
    model.check(s)?;
    let q = 0.5 * s.dot(&(&model.gamma * s));
    let mut acc = s.dot(&model.m);
    let mut pow = q;
    for (i, &c) in model.coeffs.iter().enumerate() {
        acc += c * pow / factorial(i + 1);
        pow *= q;
    }
    Ok(acc)
}

/// `m + α(q)·Γs`
pub fn cgf_gradient(model: &EllipticalCgf, s: &DVector<f64>) -> Result<DVector<f64>> {
    model.check(s)?;
    let gs = &model.gamma * s;
    let q = 0.5 * s.dot(&gs);
    Ok(&model.m + gs * model.alpha(q))
}

/// `α(q)·Γ + β(q)·(Γs)(Γs)ᵀ`
pub fn cgf_hessian(model: &EllipticalCgf, s: &DVector<f64>) -> Result<DMatrix<f64>> {
    model.check(s)?;
    let gs = &model.gamma * s;
    let q = 0.5 * s.dot(&gs);
    Ok(&model.gamma * model.alpha(q) + &gs * gs.transpose() * model.beta(q))
}

fn check_subset(subset: &[usize], dim: usize) -> Result<()> {
    let mut seen = vec![false; dim];
    for &i in subset {
        if i >= dim {
            return Err(CgfError::IndexOutOfRange { index: i, dim });
        }
        if seen[i] {
            return Err(CgfError::OverlappingSets(i));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Non-overlapping index sets covering `{0, …, J−1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationMap {
    index_sets: Vec<Vec<usize>>,
}

impl AggregationMap {
    pub fn new(index_sets: Vec<Vec<usize>>, dim: usize) -> Result<Self> {
        let mut seen = vec![false; dim];
        for set in &index_sets {
            if set.is_empty() {
                return Err(CgfError::InvalidAggregation("empty index set".into()));
            }
            for &i in set {
                if i >= dim {
                    return Err(CgfError::InvalidAggregation(format!(
                        "index {i} out of range for dimension {dim}"
                    )));
                }
                if seen[i] {
                    return Err(CgfError::InvalidAggregation(format!("index {i} appears in two sets")));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|&s| !s) {
            return Err(CgfError::InvalidAggregation(format!("index {i} is not covered")));
        }
        Ok(Self { index_sets })
    }

    pub fn singletons(dim: usize) -> Self {
        Self {
            index_sets: (0..dim).map(|i| vec![i]).collect(),
        }
    }

    pub fn single(dim: usize) -> Self {
        Self {
            index_sets: vec![(0..dim).collect()],
        }
    }

    pub fn index_sets(&self) -> &[Vec<usize>] {
        &self.index_sets
    }

    pub fn len(&self) -> usize {
        self.index_sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_sets.is_empty()
    }

    pub fn domain_dim(&self) -> usize {
        self.index_sets.iter().map(Vec::len).sum()
    }

    /// `g(t)`: coordinate `j` of the result is `t_k` for the set `I_k ∋ j`.
    pub fn expand(&self, t: &DVector<f64>) -> Result<DVector<f64>> {
        if t.len() != self.len() {
            return Err(CgfError::DimensionMismatch {
                expected: self.len(),
                found: t.len(),
            });
        }
        let mut s = DVector::zeros(self.domain_dim());
        for (k, set) in self.index_sets.iter().enumerate() {
            for &j in set {
                s[j] = t[k];
            }
        }
        Ok(s)
    }
}

/// `t ↦ K(g(t))`: the CGF of the vector of group sums.
#[derive(Debug, Clone)]
pub struct AggregatedCgf<C> {
    inner: C,
    map: AggregationMap,
}

impl<C: Cgf> AggregatedCgf<C> {
    pub fn new(inner: C, map: AggregationMap) -> Result<Self> {
        if map.domain_dim() != inner.dim() {
            return Err(CgfError::InvalidAggregation(format!(
                "map covers {} coordinates, model has {}",
                map.domain_dim(),
                inner.dim()
            )));
        }
        Ok(Self { inner, map })
    }

    pub fn map(&self) -> &AggregationMap {
        &self.map
    }
}

impl<C: Cgf> Cgf for AggregatedCgf<C> {
    fn dim(&self) -> usize {
        self.map.len()
    }

    fn value(&self, t: &DVector<f64>) -> Result<f64> {
        self.inner.value(&self.map.expand(t)?)
    }

    fn gradient(&self, t: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.inner.gradient(&self.map.expand(t)?)?;
        Ok(DVector::from_iterator(
            self.map.len(),
            self.map
                .index_sets
                .iter()
                .map(|set| set.iter().map(|&j| g[j]).sum::<f64>()),
        ))
    }

    fn hessian(&self, t: &DVector<f64>) -> Result<DMatrix<f64>> {
        let h = self.inner.hessian(&self.map.expand(t)?)?;
        let sets = &self.map.index_sets;
        Ok(DMatrix::from_fn(sets.len(), sets.len(), |a, b| {
            sets[a]
                .iter()
                .flat_map(|&i| sets[b].iter().map(move |&j| (i, j)))
                .map(|(i, j)| h[(i, j)])
                .sum()
        }))
    }
}

pub fn aggregate_cgf(model: &EllipticalCgf, agg: &AggregationMap) -> Result<AggregatedCgf<EllipticalCgf>> {
    AggregatedCgf::new(model.clone(), agg.clone())
}

fn block_sum(gamma: &DMatrix<f64>, a: &[usize], b: &[usize]) -> f64 {
    a.iter().flat_map(|&i| b.iter().map(move |&j| gamma[(i, j)])).sum()
}

fn coefficient(model: &EllipticalCgf, order: usize) -> Result<f64> {
    let r = order / 2;
    model
        .coeffs
        .get(r - 1)
        .copied()
        .ok_or(CgfError::InsufficientCoefficients {
            order,
            needed: r,
            available: model.terms(),
        })
}

/// Cumulant of `Σ_{j ∈ subset} X_j`. Odd orders above 1 vanish; order `2r` is
/// `c_r (2r)!/(r! 2^r) T^r` with `T = Σ_{i,j ∈ subset} Γ_ij`.
pub fn sum_cumulants(model: &EllipticalCgf, subset: &[usize], order: usize) -> Result<f64> {
    check_subset(subset, model.dim())?;
    match order {
        0 => Err(CgfError::Domain("cumulant order must be >= 1".into())),
        1 => Ok(subset.iter().map(|&i| model.m[i]).sum()),
        o if o % 2 == 1 => Ok(0.0),
        o => {
            let r = o / 2;
            let c = coefficient(model, o)?;
            let t = block_sum(&model.gamma, subset, subset);
            Ok(c * factorial(2 * r) / (factorial(r) * 2f64.powi(r as i32)) * t.powi(r as i32))
        }
    }
}

/// Which version of the group formulas to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FormulaVariant {
    /// Bilinearity of covariance and the sum-cumulant formula; agrees with simulation.
    #[default]
    Corrected,
    /// `cov = (c₁/2)·ΣΣΓ_ij` and `κ_{2r} = (2r−1)!·c_r·(R/2)^r`,
    /// `R = 2Σ_i Γ_ii + 4Σ_{i<j} Γ_ij`.
    Printed,
}

/// Covariance of the group sums over disjoint sets `a` and `b`.
pub fn group_cov(model: &EllipticalCgf, a: &[usize], b: &[usize], variant: FormulaVariant) -> Result<f64> {
    check_subset(a, model.dim())?;
    check_subset(b, model.dim())?;
    if let Some(&i) = a.iter().find(|i| b.contains(i)) {
        return Err(CgfError::OverlappingSets(i));
    }
    let cross = model.coeffs[0] * block_sum(&model.gamma, a, b);
    Ok(match variant {
        FormulaVariant::Corrected => cross,
        FormulaVariant::Printed => cross / 2.0,
    })
}

/// Even-order cumulant `κ_{2r}` of the group sum over `set`.
pub fn group_cumulants(model: &EllipticalCgf, set: &[usize], order: usize, variant: FormulaVariant) -> Result<f64> {
    if order == 0 || order % 2 == 1 {
        return Err(CgfError::Domain(format!(
            "group cumulants are defined for even orders, got {order}"
        )));
    }
    match variant {
        FormulaVariant::Corrected => sum_cumulants(model, set, order),
        FormulaVariant::Printed => {
            check_subset(set, model.dim())?;
            let r = order / 2;
            let c = coefficient(model, order)?;
            let mut sorted = set.to_vec();
            sorted.sort_unstable();
            let mut big_r = 0.0;
            for (p, &i) in sorted.iter().enumerate() {
                big_r += 2.0 * model.gamma[(i, i)];
                for &j in &sorted[p + 1..] {
                    big_r += 4.0 * model.gamma[(i, j)];
                }
            }
            Ok(factorial(2 * r - 1) * c * (big_r / 2.0).powi(r as i32))
        }
    }
}

/// Outcome of [`validate_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub gamma_psd: bool,
    pub min_eigenvalue: f64,
    /// Best max-relative residual of the mixing-variable fit, when one was attempted.
    pub mixture_residual: Option<f64>,
    pub diagnostics: Vec<String>,
}

/// Checks that Γ is PSD and that `c₁…c_R` are the leading cumulants of some
/// positive random variable (by fitting a gamma mixture to them).
pub fn validate_model(model: &EllipticalCgf) -> ValidityReport {
    let mut diagnostics = Vec::new();
    let eig = nalgebra::SymmetricEigen::new(model.gamma.clone());
    let min_eigenvalue = eig.eigenvalues.min();
    let gamma_psd = is_psd(&model.gamma, PSD_TOLERANCE);
    if !gamma_psd {
        diagnostics.push(format!("Gamma has negative eigenvalue {min_eigenvalue:e}"));
    }
    let c = &model.coeffs;
    let mut mixture_residual = None;
    let mut coeffs_ok = true;
    if !(c[0] > 0.0) {
        diagnostics.push(format!("c1 = {} must be positive (mean of the mixing variable)", c[0]));
        coeffs_ok = false;
    } else if c.len() >= 2 && c[1] < 0.0 {
        diagnostics.push(format!("c2 = {} is negative; no variable has negative variance", c[1]));
        coeffs_ok = false;
    } else if c[1..].iter().all(|&v| v == 0.0) {
        diagnostics.push(format!("mixing variable is the constant {}", c[0]));
    } else {
        let components = crate::estimation::DEFAULT_COMPONENTS.max(c.len().div_ceil(2));
        match crate::estimation::fit_gamma_mixture(c, components) {
            Ok(fit) => {
                mixture_residual = Some(fit.residual);
                diagnostics.push(format!(
                    "coefficients realised by a {components}-component gamma mixture (residual {:e})",
                    fit.residual
                ));
            }
            Err(e) => {
                if let CgfError::FitFailure { residual } = e {
                    mixture_residual = Some(residual);
                }
                diagnostics.push(format!("coefficients not realisable: {e}"));
                coeffs_ok = false;
            }
        }
    }
    ValidityReport {
        valid: gamma_psd && coeffs_ok,
        gamma_psd,
        min_eigenvalue,
        mixture_residual,
        diagnostics,
    }
}
