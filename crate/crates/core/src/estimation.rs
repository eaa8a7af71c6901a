//! Fitting: rank-based covariance, method-of-cumulants coefficients, a gamma
//! mixture for the mixing variable, and the powered exponential covariance.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cumulant_algebra::cumulants_from_raw_moments;
use crate::error::{CgfError, Result};
use crate::numeric::factorial;

/// Component count used when the caller does not choose one.
pub const DEFAULT_COMPONENTS: usize = 5;

/// Number of deterministic starting points for [`fit_gamma_mixture`].
pub const FIT_STARTS: usize = 16;

/// Residual the mixture fit aims for.
pub const FIT_TARGET: f64 = 1e-4;

/// Residual above which the mixture fit is reported as failed.
pub const FIT_LIMIT: f64 = 1e-3;

/// Minimum sample size for [`estimate_covariance`].
pub const MIN_OBSERVATIONS: usize = 10;

/// Kendall's τ-b, computed in `O(n log n)` by merge-sort inversion counting.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(CgfError::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(CgfError::UndefinedTau(format!("need at least 2 observations, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(CgfError::Domain("Kendall's tau needs finite input".into()));
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let tied = |run: u64| run * (run - 1) / 2;
    let mut ties_x = 0u64;
    let mut ties_xy = 0u64;
    let mut run_x = 1u64;
    let mut run_xy = 1u64;
    for w in pairs.windows(2) {
        if w[0].0 == w[1].0 {
            run_x += 1;
            if w[0].1 == w[1].1 {
                run_xy += 1;
            } else {
                ties_xy += tied(run_xy);
                run_xy = 1;
            }
        } else {
            ties_x += tied(run_x);
            ties_xy += tied(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    ties_x += tied(run_x);
    ties_xy += tied(run_xy);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut ties_y = 0u64;
    let mut run_y = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            ties_y += tied(run_y);
            run_y = 1;
        }
    }
    ties_y += tied(run_y);

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    if ties_x == n0 || ties_y == n0 {
        return Err(CgfError::UndefinedTau("an input is constant".into()));
    }
    let s = n0 as f64 - ties_x as f64 - ties_y as f64 + ties_xy as f64 - 2.0 * swaps as f64;
    let denom = ((n0 - ties_x) as f64 * (n0 - ties_y) as f64).sqrt();
    Ok((s / denom).clamp(-1.0, 1.0))
}

/// Sorts `v` ascending and returns the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(left, bl) + merge_count(right, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Result of [`estimate_covariance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    /// Final covariance, PSD.
    pub gamma: DMatrix<f64>,
    /// `sin(πτ/2)` correlation matrix before any projection.
    pub correlation: DMatrix<f64>,
    /// Sample variances (denominator `n − 1`).
    pub variances: Vec<f64>,
    /// Whether eigenvalue clipping was needed.
    pub psd_adjusted: bool,
    /// Frobenius norm of the clipping adjustment (0 when not adjusted).
    pub adjustment_norm: f64,
}

/// `Γ̂ = Σ^{1/2} R̂ Σ^{1/2}` with `R̂_ij = sin(π τ̂_ij / 2)` and `Σ` the sample
/// variances; negative eigenvalues of `Γ̂` are clipped to zero.
pub fn estimate_covariance(data: &DMatrix<f64>) -> Result<CovarianceEstimate> {
    let (n, j) = data.shape();
    if j == 0 {
        return Err(CgfError::EmptyData);
    }
    if n < MIN_OBSERVATIONS {
        return Err(CgfError::Domain(format!(
            "covariance estimation needs at least {MIN_OBSERVATIONS} observations, got {n}"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(CgfError::Domain("data contain non-finite values".into()));
    }
    let columns: Vec<Vec<f64>> = (0..j).map(|c| data.column(c).iter().copied().collect()).collect();
    let mut variances = Vec::with_capacity(j);
    for (c, col) in columns.iter().enumerate() {
        if col.iter().all(|&v| v == col[0]) {
            return Err(CgfError::ConstantColumn { column: c });
        }
        let mean = col.iter().sum::<f64>() / n as f64;
        variances.push(col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64);
    }
    let pairs: Vec<(usize, usize)> = (0..j).flat_map(|a| (a + 1..j).map(move |b| (a, b))).collect();
    let taus: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(a, b)| kendall_tau(&columns[a], &columns[b]))
        .collect();
    let mut correlation = DMatrix::identity(j, j);
    for (&(a, b), tau) in pairs.iter().zip(taus) {
        let r = (std::f64::consts::FRAC_PI_2 * tau?).sin();
        correlation[(a, b)] = r;
        correlation[(b, a)] = r;
    }
    let sd: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
    let raw = DMatrix::from_fn(j, j, |a, b| sd[a] * correlation[(a, b)] * sd[b]);
    let eig = SymmetricEigen::new(raw.clone());
    let (gamma, psd_adjusted, adjustment_norm) = if eig.eigenvalues.min() < 0.0 {
        let clipped = eig.eigenvalues.map(|v| v.max(0.0));
        let fixed = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        let fixed = (&fixed + fixed.transpose()) * 0.5;
        let norm = (&fixed - &raw).norm();
        (fixed, true, norm)
    } else {
        (raw, false, 0.0)
    };
    Ok(CovarianceEstimate {
        gamma,
        correlation,
        variances,
        psd_adjusted,
        adjustment_norm,
    })
}

/// Inverts the sum-cumulant formula: `c_r = κ̂_{2r} r! 2^r / ((2r)! T^r)`,
/// `T = Σ_ij Γ_ij`. `orders` must be `2, 4, …, 2R`.
pub fn fit_coefficients(
    gamma: &DMatrix<f64>,
    sample_sum_cumulants: &BTreeMap<usize, f64>,
    orders: &[usize],
) -> Result<Vec<f64>> {
    if orders.is_empty() {
        return Err(CgfError::InvalidParams("no cumulant orders requested".into()));
    }
    for (i, &o) in orders.iter().enumerate() {
        if o != 2 * (i + 1) {
            return Err(CgfError::InvalidParams(format!(
                "orders must be even and consecutive from 2, got {orders:?}"
            )));
        }
    }
    let t: f64 = gamma.iter().sum();
    if !(t > 0.0) {
        return Err(CgfError::Domain(format!(
            "sum of Gamma entries must be positive, got {t}"
        )));
    }
    orders
        .iter()
        .map(|&o| {
            let r = o / 2;
            let kappa = sample_sum_cumulants
                .get(&o)
                .copied()
                .ok_or_else(|| CgfError::IncompleteInput(format!("sample cumulant of order {o}")))?;
            Ok(kappa * factorial(r) * 2f64.powi(r as i32) / (factorial(2 * r) * t.powi(r as i32)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaComponent {
    pub weight: f64,
    pub shape: f64,
    pub scale: f64,
}

/// Distribution of the mixing variable `V`: a finite mixture of gamma laws,
/// or the degenerate law at a constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureDocument", into = "MixtureDocument")]
pub struct GammaMixture {
    components: Vec<GammaComponent>,
    point_mass: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct MixtureDocument {
    #[serde(default)]
    components: Vec<GammaComponent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    point_mass: Option<f64>,
}

impl TryFrom<MixtureDocument> for GammaMixture {
    type Error = CgfError;

    fn try_from(doc: MixtureDocument) -> Result<Self> {
        match doc.point_mass {
            Some(v) if doc.components.is_empty() => GammaMixture::point_mass(v),
            Some(_) => Err(CgfError::InvalidMixture(
                "point mass cannot be combined with components".into(),
            )),
            None => GammaMixture::new(doc.components),
        }
    }
}

impl From<GammaMixture> for MixtureDocument {
    fn from(m: GammaMixture) -> Self {
        MixtureDocument {
            components: m.components,
            point_mass: m.point_mass,
        }
    }
}

impl GammaMixture {
    pub fn new(components: Vec<GammaComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(CgfError::InvalidMixture("no components".into()));
        }
        for c in &components {
            if !(c.weight > 0.0 && c.shape > 0.0 && c.scale > 0.0)
                || !(c.weight.is_finite() && c.shape.is_finite() && c.scale.is_finite())
            {
                return Err(CgfError::InvalidMixture(format!("bad component {c:?}")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CgfError::InvalidMixture(format!("weights sum to {total}")));
        }
        Ok(Self {
            components,
            point_mass: None,
        })
    }

    /// The constant `V ≡ value`, `value > 0`. With `value = 1` the model is Gaussian.
    pub fn point_mass(value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(CgfError::InvalidMixture(format!("point mass at {value}")));
        }
        Ok(Self {
            components: Vec::new(),
            point_mass: Some(value),
        })
    }

    pub fn components(&self) -> &[GammaComponent] {
        &self.components
    }

    pub fn point_mass_value(&self) -> Option<f64> {
        self.point_mass
    }

    /// `E[Vⁿ]` for `n = 0, …, max_order`.
    pub fn raw_moments(&self, max_order: usize) -> Vec<f64> {
        if let Some(v) = self.point_mass {
            return (0..=max_order).map(|n| v.powi(n as i32)).collect();
        }
        let mut out = vec![0.0; max_order + 1];
        for c in &self.components {
            // θⁿ k(k+1)…(k+n−1)
            let mut m = 1.0;
            for (n, slot) in out.iter_mut().enumerate() {
                if n > 0 {
                    m *= c.scale * (c.shape + (n - 1) as f64);
                }
                *slot += c.weight * m;
            }
        }
        out
    }

    /// `κ_1, …, κ_max_order` of `V`.
    pub fn cumulants(&self, max_order: usize) -> Vec<f64> {
        cumulants_from_raw_moments(&self.raw_moments(max_order)[1..])
    }

    pub fn mean(&self) -> f64 {
        self.raw_moments(1)[1]
    }
}

/// Result of [`fit_gamma_mixture`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub mixture: GammaMixture,
    /// Max over orders of `|κ_r − c_r| / scale_r`.
    pub residual: f64,
    pub cumulants: Vec<f64>,
}

fn residual_scales(targets: &[f64]) -> Vec<f64> {
    let c1 = targets[0].abs();
    targets
        .iter()
        .enumerate()
        .map(|(i, &c)| c.abs().max(1e-8 * c1.powi(i as i32 + 1)))
        .collect()
}

fn unpack(params: &[f64], k: usize) -> Vec<GammaComponent> {
    let logits = &params[..k];
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    (0..k)
        .map(|i| GammaComponent {
            weight: exps[i] / total,
            shape: params[k + i].exp(),
            scale: params[2 * k + i].exp(),
        })
        .collect()
}

fn mixture_residuals(params: &[f64], k: usize, targets: &[f64], scales: &[f64]) -> Vec<f64> {
    let mix = GammaMixture {
        components: unpack(params, k),
        point_mass: None,
    };
    mix.cumulants(targets.len())
        .iter()
        .zip(targets.iter().zip(scales))
        .map(|(kappa, (c, s))| (kappa - c) / s)
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

/// Levenberg–Marquardt with a forward-difference Jacobian.
fn levenberg_marquardt<F>(f: F, mut x: Vec<f64>, max_iter: usize) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let p = x.len();
    let mut r = f(&x);
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut mu = 1e-3;
    for _ in 0..max_iter {
        if !cost.is_finite() || max_abs(&r) < 1e-13 {
            break;
        }
        let m = r.len();
        let mut jac = DMatrix::zeros(m, p);
        for c in 0..p {
            let h = 1e-7 * x[c].abs().max(1.0);
            let mut xp = x.clone();
            xp[c] += h;
            let rp = f(&xp);
            for row in 0..m {
                jac[(row, c)] = (rp[row] - r[row]) / h;
            }
        }
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &rv;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for d in 0..p {
                a[(d, d)] += mu * (1.0 + jtj[(d, d)]);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&grad))) else {
                mu *= 10.0;
                continue;
            };
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rn = f(&xn);
            let cn: f64 = rn.iter().map(|v| v * v).sum();
            if cn.is_finite() && cn < cost {
                x = xn;
                r = rn;
                cost = cn;
                mu = (mu / 3.0).max(1e-15);
                improved = true;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (x, r)
}

/// Fits a `n_components` gamma mixture whose first `R = targets.len()`
/// cumulants match `targets`. Sixteen deterministic starts run in parallel;
/// the best one is kept.
pub fn fit_gamma_mixture(targets: &[f64], n_components: usize) -> Result<MixtureFit> {
    if targets.is_empty() || n_components == 0 {
        return Err(CgfError::InvalidParams(
            "need at least one target and one component".into(),
        ));
    }
    if targets.len() > 2 * n_components {
        return Err(CgfError::InvalidParams(format!(
            "{} targets exceed the 2 x {n_components} degrees of freedom",
            targets.len()
        )));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(CgfError::InvalidParams("non-finite target".into()));
    }
    let c1 = targets[0];
    if !(c1 > 0.0) || targets.get(1).is_some_and(|&c2| c2 < 0.0) {
        return Err(CgfError::FitFailure {
            residual: f64::INFINITY,
        });
    }
    if targets[1..].iter().all(|&c| c == 0.0) && targets.len() > 1 {
        let mixture = GammaMixture::point_mass(c1)?;
        let cumulants = mixture.cumulants(targets.len());
        return Ok(MixtureFit {
            mixture,
            residual: 0.0,
            cumulants,
        });
    }
    let k = n_components;
    let scales = residual_scales(targets);
    let cv2 = targets.get(1).map_or(1.0, |&c2| c2 / (c1 * c1)).max(1e-6);
    let fits: Vec<(Vec<f64>, f64)> = (0..FIT_STARTS as u64)
        .into_par_iter()
        .map(|start| {
            let mut rng = ChaCha8Rng::seed_from_u64(0x9a3e_1f00 + start);
            let mut x0 = vec![0.0; 3 * k];
            for i in 0..k {
                x0[i] = rng.random_range(-1.0..1.0);
                // spread shapes around the value matching the target dispersion
                let shape = (1.0 / cv2) * (rng.random_range(-1.5f64..1.5)).exp();
                let mean = c1 * (rng.random_range(-0.7f64..0.7)).exp();
                x0[k + i] = shape.ln();
                x0[2 * k + i] = (mean / shape).ln();
            }
            let (x, r) = levenberg_marquardt(|p| mixture_residuals(p, k, targets, &scales), x0, 400);
            let res = max_abs(&r);
            (x, if res.is_finite() { res } else { f64::INFINITY })
        })
        .collect();
    let (best, residual) = fits.into_iter().fold(
        (Vec::new(), f64::INFINITY),
        |acc, (x, r)| if r < acc.1 { (x, r) } else { acc },
    );
    if !(residual <= FIT_LIMIT) {
        return Err(CgfError::FitFailure { residual });
    }
    let mut components = unpack(&best, k);
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in &mut components {
        c.weight /= total;
    }
    let mixture = GammaMixture::new(components)?;
    let cumulants = mixture.cumulants(targets.len());
    let residual = max_abs(
        &cumulants
            .iter()
            .zip(targets.iter().zip(&scales))
            .map(|(kappa, (c, s))| (kappa - c) / s)
            .collect::<Vec<_>>(),
    );
    Ok(MixtureFit {
        mixture,
        residual,
        cumulants,
    })
}

/// Parameters of `σ₀²·1{d=0} + σ₁²·exp(−(d/θ₁)^θ₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoweredExpParams {
    pub theta1: f64,
    pub theta2: f64,
    pub sigma0_sq: f64,
    pub sigma1_sq: f64,
}

impl PoweredExpParams {
    pub fn new(theta1: f64, theta2: f64, sigma0_sq: f64, sigma1_sq: f64) -> Result<Self> {
        let p = Self {
            theta1,
            theta2,
            sigma0_sq,
            sigma1_sq,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta1 > 0.0 && self.theta1.is_finite())
            || !(self.theta2 > 0.0 && self.theta2 <= 2.0)
            || !(self.sigma0_sq >= 0.0 && self.sigma0_sq.is_finite())
            || !(self.sigma1_sq >= 0.0 && self.sigma1_sq.is_finite())
        {
            return Err(CgfError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

pub fn powered_exp_cov(d: f64, p: &PoweredExpParams) -> Result<f64> {
    p.validate()?;
    if !(d >= 0.0) {
        return Err(CgfError::Domain(format!("distance must be >= 0, got {d}")));
    }
    let nugget = if d == 0.0 { p.sigma0_sq } else { 0.0 };
    Ok(nugget + p.sigma1_sq * (-(d / p.theta1).powf(p.theta2)).exp())
}

/// Covariance matrix over planar `locations` from pairwise Euclidean distances.
pub fn build_gamma(locations: &[[f64; 2]], p: &PoweredExpParams) -> Result<DMatrix<f64>> {
    p.validate()?;
    let n = locations.len();
    let mut out = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let d = (locations[a][0] - locations[b][0]).hypot(locations[a][1] - locations[b][1]);
            let v = powered_exp_cov(d, p)?;
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    Ok(out)
}
