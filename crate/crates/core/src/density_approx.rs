//! Approximations driven by cumulants and the CGF: multivariate Hermite
//! polynomials, the Edgeworth density, the saddlepoint density, the
//! Lugannani–Rice CDF, Cornish–Fisher quantiles, an entropy approximation and
//! orthant tail probabilities by quadrature.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgf_model::{Cgf, EllipticalCgf, Univariate, UnivariateCgf};
use crate::cumulant_algebra::{sorted_multi_indices, CumulantTensor, MultiIndex};
use crate::error::{CgfError, Result};
use crate::numeric::{
    check_square, gauss_legendre, spd_inverse_logdet, std_normal_cdf, std_normal_pdf, std_normal_quantile,
    CompensatedSum,
};

/// Highest Hermite order supported.
pub const MAX_HERMITE_ORDER: usize = 6;

/// Newton iteration cap for the saddlepoint solve.
pub const MAX_NEWTON_ITERATIONS: usize = 100;

/// Residual tolerance `‖∇K(λ) − x‖ ≤ tol·(1 + ‖x‖)` for the saddlepoint solve.
pub const NEWTON_TOLERANCE: f64 = 1e-10;

/// Below this `|r|` the Lugannani–Rice correction is replaced by its series.
pub const LR_SERIES_THRESHOLD: f64 = 1e-3;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Memoised `h_idx(x; Γ)` for one point.
struct Hermite {
    p: DMatrix<f64>,
    y: DVector<f64>,
    cache: HashMap<Vec<usize>, f64>,
}

impl Hermite {
    fn new(precision: DMatrix<f64>, x: &DVector<f64>) -> Self {
        let y = &precision * x;
        Self {
            p: precision,
            y,
            cache: HashMap::new(),
        }
    }

    /// `idx` must be sorted.
    fn eval(&mut self, idx: &[usize]) -> f64 {
        if idx.is_empty() {
            return 1.0;
        }
        if let Some(&v) = self.cache.get(idx) {
            return v;
        }
        // h_{rest ∪ {j}} = y_j h_rest − Σ_m P_{j, rest_m} h_{rest ∖ rest_m}
        let (&j, rest) = idx.split_last().expect("non-empty");
        let mut v = self.y[j] * self.eval(rest);
        let mut without = Vec::with_capacity(rest.len().saturating_sub(1));
        for m in 0..rest.len() {
            without.clear();
            without.extend_from_slice(&rest[..m]);
            without.extend_from_slice(&rest[m + 1..]);
            v -= self.p[(j, rest[m])] * self.eval(&without);
        }
        self.cache.insert(idx.to_vec(), v);
        v
    }
}

fn gaussian_parts(gamma: &DMatrix<f64>, dim: usize) -> Result<(DMatrix<f64>, f64)> {
    check_square(gamma, dim)?;
    spd_inverse_logdet(gamma)
}

fn check_point(x: &DVector<f64>, gamma: &DMatrix<f64>) -> Result<()> {
    if x.len() != gamma.nrows() {
        return Err(CgfError::DimensionMismatch {
            expected: gamma.nrows(),
            found: x.len(),
        });
    }
    Ok(())
}

/// Multivariate Hermite polynomial `h_idx(x; Γ)`, defined by
/// `φ_Γ(x) h_{j₁…j_k}(x; Γ) = (−1)^k ∂^k φ_Γ(x) / ∂x_{j₁}…∂x_{j_k}`.
pub fn hermite_tensor(x: &DVector<f64>, gamma: &DMatrix<f64>, idx: &MultiIndex) -> Result<f64> {
    check_point(x, gamma)?;
    if idx.order() > MAX_HERMITE_ORDER {
        return Err(CgfError::Domain(format!(
            "Hermite order {} exceeds {MAX_HERMITE_ORDER}",
            idx.order()
        )));
    }
    if idx.order() > 0 {
        idx.check(x.len())?;
    }
    let (precision, _) = gaussian_parts(gamma, x.len())?;
    Ok(Hermite::new(precision, x).eval(idx.indices()))
}

/// `N(0, Γ)` density.
pub fn gaussian_density(x: &DVector<f64>, gamma: &DMatrix<f64>) -> Result<f64> {
    check_point(x, gamma)?;
    let (precision, logdet) = gaussian_parts(gamma, x.len())?;
    Ok(gaussian_from_parts(x, &precision, logdet))
}

fn gaussian_from_parts(x: &DVector<f64>, precision: &DMatrix<f64>, logdet: f64) -> f64 {
    let quad = x.dot(&(precision * x));
    (-0.5 * quad - 0.5 * logdet - 0.5 * x.len() as f64 * LN_2PI).exp()
}

fn check_tensor(t: &CumulantTensor, dim: usize, order: usize) -> Result<()> {
    if t.dim() != dim {
        return Err(CgfError::DimensionMismatch {
            expected: dim,
            found: t.dim(),
        });
    }
    if t.order() != order {
        return Err(CgfError::DimensionMismatch {
            expected: order,
            found: t.order(),
        });
    }
    Ok(())
}

/// Edgeworth density around `N(0, Γ)`:
///
/// `φ_Γ(x){1 + Σκ³h₃/6 + Σκ⁴h₄/24 + Σκ³κ³h₆/72}`.
///
/// Without `kappa4` only the `κ³` term is applied. The value can be negative
/// in the tails.
pub fn edgeworth_density(
    x: &DVector<f64>,
    gamma: &DMatrix<f64>,
    kappa3: &CumulantTensor,
    kappa4: Option<&CumulantTensor>,
) -> Result<f64> {
    check_point(x, gamma)?;
    let j = x.len();
    check_tensor(kappa3, j, 3)?;
    if let Some(k4) = kappa4 {
        check_tensor(k4, j, 4)?;
    }
    let (precision, logdet) = gaussian_parts(gamma, j)?;
    let phi = gaussian_from_parts(x, &precision, logdet);
    let mut h = Hermite::new(precision, x);
    let all: Vec<usize> = (0..j).collect();
    let triples = sorted_multi_indices(&all, 3);

    let mut correction = CompensatedSum::new();
    correction.add(1.0);
    for idx in &triples {
        let k = kappa3.get(idx);
        if k != 0.0 {
            correction.add(idx.multiplicity() * k * h.eval(idx.indices()) / 6.0);
        }
    }
    if let Some(k4) = kappa4 {
        for idx in sorted_multi_indices(&all, 4) {
            let k = k4.get(&idx);
            if k != 0.0 {
                correction.add(idx.multiplicity() * k * h.eval(idx.indices()) / 24.0);
            }
        }
        let weighted: Vec<(f64, &MultiIndex)> = triples
            .iter()
            .map(|idx| (idx.multiplicity() * kappa3.get(idx), idx))
            .filter(|(w, _)| *w != 0.0)
            .collect();
        let mut joined = Vec::with_capacity(6);
        for &(wa, a) in &weighted {
            for &(wb, b) in &weighted {
                joined.clear();
                joined.extend_from_slice(a.indices());
                joined.extend_from_slice(b.indices());
                joined.sort_unstable();
                correction.add(wa * wb * h.eval(&joined) / 72.0);
            }
        }
    }
    Ok(phi * correction.value())
}

/// Saddlepoint `λ̂` with `∇K(λ̂) = x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddlepointSolution {
    pub lambda: DVector<f64>,
    pub k_value: f64,
    pub hessian: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn gradient_residual<C: Cgf + ?Sized>(cgf: &C, lambda: &DVector<f64>, x: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let g = cgf.gradient(lambda).ok()?;
    let r = &g - x;
    let norm = r.norm();
    norm.is_finite().then_some((r, norm))
}

/// Damped Newton solve of `∇K(λ) = x`, started from the Gaussian solution
/// `∇²K(0)⁻¹(x − ∇K(0))`.
pub fn solve_saddlepoint<C: Cgf + ?Sized>(cgf: &C, x: &DVector<f64>) -> Result<SaddlepointSolution> {
    let j = cgf.dim();
    if x.len() != j {
        return Err(CgfError::DimensionMismatch {
            expected: j,
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CgfError::Domain("non-finite point".into()));
    }
    let zero = DVector::zeros(j);
    let mean = cgf.gradient(&zero)?;
    let h0 = cgf.hessian(&zero)?;
    let mut lambda = match h0.clone().cholesky() {
        Some(c) => c.solve(&(x - &mean)),
        None => zero.clone(),
    };
    // pull the start back inside the domain if needed
    let mut state = gradient_residual(cgf, &lambda, x);
    for _ in 0..60 {
        if state.is_some() {
            break;
        }
        lambda *= 0.5;
        state = gradient_residual(cgf, &lambda, x);
    }
    let (mut res, mut norm) =
        state.ok_or_else(|| CgfError::Domain("no starting point inside the CGF domain".into()))?;
    let tol = NEWTON_TOLERANCE * (1.0 + x.norm());
    let mut iterations = 0;
    let mut polished = false;
    while iterations < MAX_NEWTON_ITERATIONS {
        if norm <= tol {
            if polished {
                break;
            }
            polished = true;
        }
        iterations += 1;
        let hess = cgf.hessian(&lambda)?;
        let Some(chol) = hess.cholesky() else {
            // not PD here; retreat toward the origin where K'' = Var > 0
            lambda *= 0.5;
            match gradient_residual(cgf, &lambda, x) {
                Some((r, n)) => {
                    res = r;
                    norm = n;
                    continue;
                }
                None => break,
            }
        };
        let step = chol.solve(&(-&res));
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let trial = &lambda + &step * alpha;
            if let Some((r, n)) = gradient_residual(cgf, &trial, x) {
                if n < norm || (polished && n <= norm) {
                    lambda = trial;
                    res = r;
                    norm = n;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !(norm <= tol) {
        return Err(CgfError::NonConvergence {
            iterations,
            residual: norm,
            last: lambda.iter().copied().collect(),
        });
    }
    let hessian = cgf.hessian(&lambda)?;
    Ok(SaddlepointSolution {
        k_value: cgf.value(&lambda)?,
        hessian,
        converged: true,
        iterations,
        lambda,
    })
}

/// `exp(K(λ̂) − xᵀλ̂) / ((2π)^{J/2} det(∇²K(λ̂))^{1/2})`.
pub fn saddlepoint_density<C: Cgf + ?Sized>(cgf: &C, x: &DVector<f64>) -> Result<(f64, SaddlepointSolution)> {
    let sol = solve_saddlepoint(cgf, x)?;
    let chol = sol
        .hessian
        .clone()
        .cholesky()
        .ok_or_else(|| CgfError::Singular("Hessian at the saddlepoint is not positive definite".into()))?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let exponent = sol.k_value - x.dot(&sol.lambda);
    let density = (exponent - 0.5 * logdet - 0.5 * x.len() as f64 * LN_2PI).exp();
    Ok((density, sol))
}

/// Lugannani–Rice approximation to `P(X ≤ x0)`:
/// `Φ(r) + φ(r)(1/r − 1/q)`, `r = sign(τ̂)√(2[τ̂x0 − K(τ̂)])`, `q = τ̂√K''(τ̂)`.
pub fn lugannani_rice_cdf<C: UnivariateCgf>(cgf: &C, x0: f64) -> Result<f64> {
    let wrapped = Univariate(cgf);
    let sol = solve_saddlepoint(&wrapped, &DVector::from_element(1, x0))?;
    let tau = sol.lambda[0];
    // r and q are both taken at the point τ̂ solves exactly; x0 itself is only
    // matched to rounding, which 1/r − 1/q would amplify near the mean
    let x_hat = cgf.derivative(tau, 1);
    let w = (2.0 * (tau * x_hat - sol.k_value)).max(0.0);
    let r = tau.signum() * w.sqrt();
    let k2 = sol.hessian[(0, 0)];
    let q = tau * k2.sqrt();
    let correction = if r.abs() < LR_SERIES_THRESHOLD {
        let s = cgf.cumulant(2).sqrt();
        let (k3, k4, k5) = (cgf.cumulant(3), cgf.cumulant(4), cgf.cumulant(5));
        let a0 = k3 / (6.0 * s.powi(3));
        let a1 = (3.0 * k4 * s * s - 5.0 * k3 * k3) / (24.0 * s.powi(5));
        let a2 = (475.0 * k3.powi(3) - 540.0 * k3 * k4 * s * s + 108.0 * k5 * s.powi(4)) / (2160.0 * s.powi(7));
        a0 + tau * (a1 + tau * a2)
    } else {
        1.0 / r - 1.0 / q
    };
    Ok((std_normal_cdf(r) + std_normal_pdf(r) * correction).clamp(0.0, 1.0))
}

impl<C: UnivariateCgf> UnivariateCgf for &C {
    fn value(&self, t: f64) -> f64 {
        (**self).value(t)
    }

    fn derivative(&self, t: f64, order: usize) -> f64 {
        (**self).derivative(t, order)
    }

    fn cumulant(&self, order: usize) -> f64 {
        (**self).cumulant(order)
    }
}

/// Fourth-order Cornish–Fisher quantile from `κ₁..κ₄`.
pub fn cornish_fisher_quantile(kappa: [f64; 4], p: f64) -> Result<f64> {
    let [k1, k2, k3, k4] = kappa;
    if !(k2 > 0.0) {
        return Err(CgfError::Domain(format!("variance must be positive, got {k2}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(CgfError::Domain(format!("probability must be in (0, 1), got {p}")));
    }
    let z = std_normal_quantile(p);
    let g1 = k3 / k2.powf(1.5);
    let g2 = k4 / (k2 * k2);
    let w =
        z + (z * z - 1.0) * g1 / 6.0 + (z.powi(3) - 3.0 * z) * g2 / 24.0 - (2.0 * z.powi(3) - 5.0 * z) * g1 * g1 / 36.0;
    Ok(k1 + k2.sqrt() * w)
}

/// Inner weights of the entropy correction, applied to the squared third
/// cumulants of the whitened variable grouped as `κ^{jjj}`, `κ^{iij}` and
/// `κ^{ijk}` (distinct indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EntropyWeights {
    /// `{1, 3, 6}`: the full symmetric tensor norm `Σ_{abc}(κ^{abc})²`.
    #[default]
    Symmetric,
    /// `{1, 3, 1/6}`.
    Printed,
}

impl EntropyWeights {
    fn distinct(self) -> f64 {
        match self {
            EntropyWeights::Symmetric => 6.0,
            EntropyWeights::Printed => 1.0 / 6.0,
        }
    }
}

/// `½ log det Γ + (J/2) log 2π + J/2`.
pub fn gaussian_entropy(gamma: &DMatrix<f64>) -> Result<f64> {
    let j = gamma.nrows();
    let (_, logdet) = gaussian_parts(gamma, j)?;
    Ok(0.5 * logdet + 0.5 * j as f64 * (LN_2PI + 1.0))
}

/// Third cumulants of `L⁻¹X` where `Γ = LLᵀ`.
fn whiten(gamma: &DMatrix<f64>, kappa3: &CumulantTensor) -> Result<CumulantTensor> {
    let j = gamma.nrows();
    let chol = gamma
        .clone()
        .cholesky()
        .ok_or_else(|| CgfError::Singular("Gamma is not positive definite".into()))?;
    let linv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| CgfError::Singular("Cholesky factor not invertible".into()))?;
    let all: Vec<usize> = (0..j).collect();
    let mut out = CumulantTensor::zeros(j, 3);
    for idx in sorted_multi_indices(&all, 3) {
        let [a, b, c] = [idx.indices()[0], idx.indices()[1], idx.indices()[2]];
        let mut acc = 0.0;
        for p in 0..j {
            for q in 0..j {
                for r in 0..j {
                    let k = kappa3.get(&MultiIndex::new(vec![p, q, r]));
                    if k != 0.0 {
                        acc += linv[(a, p)] * linv[(b, q)] * linv[(c, r)] * k;
                    }
                }
            }
        }
        out.set(idx, acc)?;
    }
    Ok(out)
}

/// `H(φ_Γ) − (1/12){Σ(κ^{jjj})² + 3Σ_{i≠j}(κ^{iij})² + w Σ_{i<j<k}(κ^{ijk})²}`
/// on the whitened third cumulants, with `w` from `weights`.
pub fn entropy_approx(gamma: &DMatrix<f64>, kappa3: &CumulantTensor, weights: EntropyWeights) -> Result<f64> {
    let j = gamma.nrows();
    check_tensor(kappa3, j, 3)?;
    let base = gaussian_entropy(gamma)?;
    let white = whiten(gamma, kappa3)?;
    let mut acc = 0.0;
    for (idx, k) in white.entries() {
        let i = idx.indices();
        let w = if i[0] == i[2] {
            1.0
        } else if i[0] == i[1] || i[1] == i[2] {
            3.0
        } else {
            weights.distinct()
        };
        acc += w * k * k;
    }
    Ok(base - acc / 12.0)
}

/// Quadrature nodes per axis for the orthant integral, by dimension.
const TAIL_NODES: [usize; 5] = [128, 64, 32, 16, 8];

/// Gauss–Legendre points per panel.
const PANEL_POINTS: usize = 8;

fn composite_rule(lo: f64, hi: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(PANEL_POINTS);
    let width = (hi - lo) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * PANEL_POINTS);
    let mut weights = Vec::with_capacity(panels * PANEL_POINTS);
    for p in 0..panels {
        let a = lo + p as f64 * width;
        for (x, w) in gx.iter().zip(&gw) {
            nodes.push(a + 0.5 * width * (x + 1.0));
            weights.push(0.5 * width * w);
        }
    }
    (nodes, weights)
}

fn orthant_integral(model: &EllipticalCgf, lower: &[f64], upper: &[f64], nodes: usize) -> Result<f64> {
    let d = lower.len();
    let rules: Vec<(Vec<f64>, Vec<f64>)> = (0..d)
        .map(|k| composite_rule(lower[k], upper[k], nodes / PANEL_POINTS))
        .collect();
    let inner: usize = rules[1..].iter().map(|r| r.0.len()).product();
    let slabs: Vec<Result<f64>> = (0..rules[0].0.len())
        .into_par_iter()
        .map(|i0| {
            let mut acc = CompensatedSum::new();
            let mut y = DVector::zeros(d);
            y[0] = rules[0].0[i0];
            for flat in 0..inner {
                let mut rem = flat;
                let mut w = rules[0].1[i0];
                for k in (1..d).rev() {
                    let n = rules[k].0.len();
                    let ik = rem % n;
                    rem /= n;
                    y[k] = rules[k].0[ik];
                    w *= rules[k].1[ik];
                }
                acc.add(w * saddlepoint_density(model, &y)?.0);
            }
            Ok(acc.value())
        })
        .collect();
    let mut acc = CompensatedSum::new();
    for s in slabs {
        acc.add(s?);
    }
    Ok(acc.value())
}

/// A point below the mean whose Lugannani–Rice lower tail is below `target`.
fn lower_bound<C: UnivariateCgf>(cgf: &C, target: f64) -> Result<f64> {
    let (mean, sd) = (cgf.cumulant(1), cgf.cumulant(2).sqrt());
    let mut step = sd;
    let mut lo = mean - step;
    while lugannani_rice_cdf(cgf, lo)? > target {
        step *= 2.0;
        lo = mean - step;
        if !lo.is_finite() {
            return Err(CgfError::Domain("tail bound search diverged".into()));
        }
    }
    Ok(lo)
}

/// Smallest `u ≥ start` (up to bracketing precision) whose Lugannani–Rice
/// upper tail is below `target`.
fn tail_bound<C: UnivariateCgf>(cgf: &C, start: f64, target: f64) -> Result<f64> {
    let sd = cgf.cumulant(2).sqrt();
    let tail = |u: f64| -> Result<f64> { Ok(1.0 - lugannani_rice_cdf(cgf, u)?) };
    let mut lo = start.max(cgf.cumulant(1));
    let mut hi = lo + sd;
    while tail(hi)? > target {
        lo = hi;
        hi += 2.0 * (hi - cgf.cumulant(1)).max(sd);
        if !hi.is_finite() {
            return Err(CgfError::Domain("tail bound search diverged".into()));
        }
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if tail(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// `P(Y ≥ thresholds)` for the sub-vector `Y = X_subset`, by tensor
/// Gauss–Legendre quadrature of the saddlepoint density of `Y` over the
/// orthant. The orthant is truncated, above and below, where the dropped
/// mass is below `1e−6` of the estimate; the rule is checked against one with doubled node counts.
pub fn tail_prob_marginal(model: &EllipticalCgf, subset: &[usize], thresholds: &[f64]) -> Result<f64> {
    let d = subset.len();
    if d == 0 || d > TAIL_NODES.len() {
        return Err(CgfError::Domain(format!(
            "tail probabilities need 1 <= |subset| <= {}, got {d}",
            TAIL_NODES.len()
        )));
    }
    if thresholds.len() != d {
        return Err(CgfError::DimensionMismatch {
            expected: d,
            found: thresholds.len(),
        });
    }
    let marginal = model.marginal(subset)?;
    let axes: Vec<_> = (0..d).map(|k| marginal.sum_cgf(&[k])).collect::<Result<_>>()?;
    let mut estimate = axes
        .iter()
        .zip(thresholds)
        .map(|(a, &t)| Ok(1.0 - lugannani_rice_cdf(a, t)?))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let nodes = TAIL_NODES[d - 1];
    let mut result = 0.0;
    for _ in 0..4 {
        let target = (1e-6 * estimate / d as f64).max(1e-300);
        let upper: Vec<f64> = axes
            .iter()
            .zip(thresholds)
            .map(|(a, &t)| tail_bound(a, t, target))
            .collect::<Result<_>>()?;
        let lower: Vec<f64> = axes
            .iter()
            .zip(thresholds)
            .map(|(a, &t)| Ok(t.max(lower_bound(a, target)?)))
            .collect::<Result<_>>()?;
        let coarse = orthant_integral(&marginal, &lower, &upper, nodes)?;
        let fine = orthant_integral(&marginal, &lower, &upper, 2 * nodes)?;
        if (fine - coarse).abs() > 1e-6 * fine.abs().max(1e-12) + 1e-12 {
            return Err(CgfError::QuadratureNotConverged { coarse, fine });
        }
        result = fine;
        if fine >= 0.5 * estimate {
            break;
        }
        estimate = fine;
    }
    Ok(result)
}
