//! Small numerical helpers shared across modules.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{CgfError, Result};

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Empirical quantile with linear interpolation between order statistics
/// (Hyndman–Fan type 7). `sorted` must be ascending; level 0 is the minimum
/// and level 1 the maximum.
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * level.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sort_floats(values: &mut [f64]) {
    values.sort_unstable_by(|a, b| a.total_cmp(b));
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Eigenvalue range check for a symmetric matrix: min eigenvalue must be at
/// least `-rel_tol * max(|eigenvalue|)`.
pub fn is_psd(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    min >= -rel_tol * max
}

pub fn check_square(m: &DMatrix<f64>, dim: usize) -> Result<()> {
    if m.nrows() != dim {
        return Err(CgfError::DimensionMismatch {
            expected: dim,
            found: m.nrows(),
        });
    }
    if m.ncols() != dim {
        return Err(CgfError::DimensionMismatch {
            expected: dim,
            found: m.ncols(),
        });
    }
    Ok(())
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    let scale = m.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

/// Inverse and log-determinant of a symmetric positive-definite matrix.
pub fn spd_inverse_logdet(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| CgfError::Singular("Cholesky factorisation failed".into()))?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if !(min > 0.0) || max / min > 1e12 {
        return Err(CgfError::Singular(format!(
            "condition number {:.3e} too large",
            max / min
        )));
    }
    Ok((chol.inverse(), logdet))
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return if p == 0.0 {
            f64::NEG_INFINITY
        } else if p == 1.0 {
            f64::INFINITY
        } else {
            f64::NAN
        };
    }
    let mut z = -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
    // erfc_inv is only good to ~1e-10; polish against the accurate CDF
    for _ in 0..2 {
        let pdf = std_normal_pdf(z);
        if pdf < 1e-300 {
            break;
        }
        let step = (std_normal_cdf(z) - p) / pdf;
        z -= step / (1.0 + 0.5 * z * step);
    }
    z
}

/// `P(X ≤ h, Y ≤ k)` for a standard bivariate normal with correlation `rho`
/// (Drezner–Wesolowsky with Genz's refinements).
pub fn bivariate_normal_cdf(h: f64, k: f64, rho: f64) -> f64 {
    bivariate_normal_upper(-h, -k, rho)
}

/// Legendre rules of 6, 12 and 20 points, positive half mapped to (0, 2) as `1 ∓ x`.
fn drezner_points(rule: usize) -> &'static [(f64, f64)] {
    static RULES: std::sync::OnceLock<Vec<Vec<(f64, f64)>>> = std::sync::OnceLock::new();
    &RULES.get_or_init(|| {
        [6, 12, 20]
            .iter()
            .map(|&n| {
                let (gx, gw) = gauss_legendre(n);
                let half: Vec<(f64, f64)> = gx
                    .iter()
                    .zip(&gw)
                    .filter(|(x, _)| **x > 0.0)
                    .map(|(x, w)| (*x, *w))
                    .collect();
                half.iter()
                    .map(|&(x, w)| (1.0 - x, w))
                    .chain(half.iter().map(|&(x, w)| (1.0 + x, w)))
                    .collect()
            })
            .collect()
    })[rule]
}

/// `P(X > h, Y > k)` for a standard bivariate normal with correlation `rho`.
pub fn bivariate_normal_upper(h: f64, k: f64, rho: f64) -> f64 {
    use std::f64::consts::PI;
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY {
            1.0
        } else {
            std_normal_cdf(-k)
        };
    }
    if k == f64::NEG_INFINITY {
        return std_normal_cdf(-h);
    }
    if rho == 0.0 {
        return std_normal_cdf(-h) * std_normal_cdf(-k);
    }
    let points = drezner_points(if rho.abs() < 0.3 {
        0
    } else if rho.abs() < 0.75 {
        1
    } else {
        2
    });
    let tp = 2.0 * PI;
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if rho.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = rho.asin() / 2.0;
        for &(x, w) in points {
            let sn = (asr * x).sin();
            bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        bvn = bvn * asr / tp + std_normal_cdf(-h) * std_normal_cdf(-k);
    } else {
        if rho < 0.0 {
            k = -k;
            hk = -hk;
        }
        if rho.abs() < 1.0 {
            let as_ = 1.0 - rho * rho;
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let asr = -(bs / as_ + hk) / 2.0;
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 80.0;
            if asr > -100.0 {
                bvn = a * asr.exp() * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = tp.sqrt() * std_normal_cdf(-b / a);
                bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
            }
            a /= 2.0;
            let mut acc = 0.0;
            for &(x, w) in points {
                let xs = (a * x) * (a * x);
                let asr = -(bs / xs + hk) / 2.0;
                if asr > -100.0 {
                    let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
                    let rs = (1.0 - xs).sqrt();
                    let ep = (-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
                    acc += w * asr.exp() * (sp - ep);
                }
            }
            bvn = (a * acc - bvn) / tp;
        }
        if rho > 0.0 {
            bvn += std_normal_cdf(-h.max(k));
        } else if h >= k {
            bvn = -bvn;
        } else {
            let l = if h < 0.0 {
                std_normal_cdf(k) - std_normal_cdf(h)
            } else {
                std_normal_cdf(-h) - std_normal_cdf(-k)
            };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_beats_naive() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((integral - 2.0 / 15.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn quantile_type7() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn normal_helpers() {
        let e = std_normal_cdf(1.959963984540054) - 0.975;
        assert!(e.abs() < 1e-15, "{e:e}");
        assert!((std_normal_quantile(0.975) - 1.959963984540054).abs() < 1e-12);
    }

    #[test]
    fn bivariate_orthants() {
        for rho in [-0.95, -0.8, -0.5, -0.1, 0.0, 0.2, 0.5, 0.8, 0.95] {
            let want = 0.25 + f64::asin(rho) / (2.0 * std::f64::consts::PI);
            let got = bivariate_normal_cdf(0.0, 0.0, rho);
            assert!((got - want).abs() < 1e-14, "rho {rho}: {got} vs {want}");
        }
    }

    #[test]
    fn bivariate_against_quadrature() {
        // P(X<=h, Y<=k) = ∫_{-∞}^{h} φ(x) Φ((k − ρx)/√(1−ρ²)) dx
        let (nodes, weights) = gauss_legendre(20);
        for &(h, k, rho) in &[(0.3, -0.7, 0.6), (1.2, 0.4, -0.4), (-0.5, 2.0, 0.93), (0.8, 0.1, -0.97)] {
            let lo = -12.0;
            let s = (1.0f64 - rho * rho).sqrt();
            let panels = 60;
            let width = (h - lo) / panels as f64;
            let mut q = 0.0;
            for p in 0..panels {
                let a = lo + p as f64 * width;
                for (x, w) in nodes.iter().zip(&weights) {
                    let t = a + width * (x + 1.0) / 2.0;
                    q += w * width / 2.0 * std_normal_pdf(t) * std_normal_cdf((k - rho * t) / s);
                }
            }
            let got = bivariate_normal_cdf(h, k, rho);
            assert!((got - q).abs() < 1e-12, "({h},{k},{rho}): {got} vs {q}");
        }
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(6, 3), 20.0);
        assert_eq!(binomial(3, 5), 0.0);
        assert_eq!(factorial(5), 120.0);
    }
}
