//! Least-squares polynomial curves `y = f(x)` and surfaces `z = f(u, v)`.
//!
//! Inputs are shifted and scaled to unit range before building the design
//! matrix, which is then solved by SVD; a fit is refused when the scaled
//! design matrix is too ill-conditioned to trust.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const MAX_DEGREE: usize = 7;
const MAX_CONDITION: f64 = 1e12;

fn solve(design: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0) || smax / smin > MAX_CONDITION {
        return Err(Error::Fit(format!("design matrix ill-conditioned (condition {:.3e})", smax / smin)));
    }
    svd.solve(&rhs, 0.0).map_err(|e| Error::Fit(e.to_string()))
}

fn normalization(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let shift = 0.5 * (lo + hi);
    let scale = 0.5 * (hi - lo);
    (shift, if scale > 0.0 { scale } else { 1.0 })
}

/// Polynomial in one variable, stored in the normalized variable `t = (x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly1 {
    pub shift: f64,
    pub scale: f64,
    pub coeffs: Vec<f64>,
}

impl Poly1 {
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    fn horner(c: &[f64], t: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &a| acc * t + a)
    }

    pub fn eval(&self, x: f64) -> f64 {
        Self::horner(&self.coeffs, (x - self.shift) / self.scale)
    }

    /// First derivative with respect to `x`.
    pub fn deriv(&self, x: f64) -> f64 {
        let t = (x - self.shift) / self.scale;
        let d: Vec<f64> = self.coeffs.iter().enumerate().skip(1).map(|(k, &c)| k as f64 * c).collect();
        Self::horner(&d, t) / self.scale
    }

    /// Second derivative with respect to `x`.
    pub fn deriv2(&self, x: f64) -> f64 {
        let t = (x - self.shift) / self.scale;
        let d: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .skip(2)
            .map(|(k, &c)| (k * (k - 1)) as f64 * c)
            .collect();
        Self::horner(&d, t) / (self.scale * self.scale)
    }

    /// Coefficients of `x^k` in the raw power basis.
    pub fn power_coefficients(&self) -> Vec<f64> {
        let n = self.coeffs.len();
        let mut out = vec![0.0; n];
        // ((x - s) / h)^k expanded by the binomial theorem.
        for (k, &c) in self.coeffs.iter().enumerate() {
            let hk = self.scale.powi(k as i32);
            let mut binom = 1.0;
            for j in 0..=k {
                if j > 0 {
                    binom = binom * (k - j + 1) as f64 / j as f64;
                }
                out[j] += c * binom * (-self.shift).powi((k - j) as i32) / hk;
            }
        }
        out
    }
}

/// Fit `y ≈ f(x)` of the given degree; returns the polynomial and the RMS residual.
pub fn fit_poly1(xs: &[f64], ys: &[f64], degree: usize) -> Result<(Poly1, f64)> {
    if !(1..=MAX_DEGREE).contains(&degree) {
        return Err(Error::Fit(format!("degree {degree} outside 1..={MAX_DEGREE}")));
    }
    if xs.len() != ys.len() || xs.len() < degree + 1 {
        return Err(Error::Fit(format!("{} samples cannot determine a degree-{degree} curve", xs.len())));
    }
    let (shift, scale) = normalization(xs.iter().copied());
    let n = xs.len();
    let a = DMatrix::from_fn(n, degree + 1, |i, k| ((xs[i] - shift) / scale).powi(k as i32));
    let b = DVector::from_column_slice(ys);
    let c = solve(a.clone(), b.clone())?;
    let rms = ((&a * &c - b).norm_squared() / n as f64).sqrt();
    Ok((Poly1 { shift, scale, coeffs: c.iter().copied().collect() }, rms))
}

/// Polynomial in two variables of bounded total degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly2 {
    pub degree: usize,
    pub shift: [f64; 2],
    pub scale: f64,
    /// Coefficient of `s^i t^j` for the exponents listed by [`Poly2::exponents`].
    pub coeffs: Vec<f64>,
}

impl Poly2 {
    /// Exponent pairs `(i, j)` with `i + j <= degree`, ordered by total degree.
    pub fn exponents(degree: usize) -> Vec<(usize, usize)> {
        (0..=degree).flat_map(|k| (0..=k).rev().map(move |i| (i, k - i))).collect()
    }

    fn local(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.shift[0]) / self.scale, (v - self.shift[1]) / self.scale)
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let (s, t) = self.local(u, v);
        Self::exponents(self.degree)
            .iter()
            .zip(&self.coeffs)
            .map(|(&(i, j), &c)| c * s.powi(i as i32) * t.powi(j as i32))
            .sum()
    }

    /// `(f_u, f_v)`.
    pub fn gradient(&self, u: f64, v: f64) -> (f64, f64) {
        let (s, t) = self.local(u, v);
        let (mut gu, mut gv) = (0.0, 0.0);
        for (&(i, j), &c) in Self::exponents(self.degree).iter().zip(&self.coeffs) {
            if i > 0 {
                gu += c * i as f64 * s.powi(i as i32 - 1) * t.powi(j as i32);
            }
            if j > 0 {
                gv += c * j as f64 * s.powi(i as i32) * t.powi(j as i32 - 1);
            }
        }
        (gu / self.scale, gv / self.scale)
    }

    /// `(f_uu, f_uv, f_vv)`.
    pub fn hessian(&self, u: f64, v: f64) -> (f64, f64, f64) {
        let (s, t) = self.local(u, v);
        let (mut huu, mut huv, mut hvv) = (0.0, 0.0, 0.0);
        let p = |x: f64, e: i32| if e < 0 { 0.0 } else { x.powi(e) };
        for (&(i, j), &c) in Self::exponents(self.degree).iter().zip(&self.coeffs) {
            let (fi, fj) = (i as f64, j as f64);
            huu += c * fi * (fi - 1.0) * p(s, i as i32 - 2) * p(t, j as i32);
            huv += c * fi * fj * p(s, i as i32 - 1) * p(t, j as i32 - 1);
            hvv += c * fj * (fj - 1.0) * p(s, i as i32) * p(t, j as i32 - 2);
        }
        let h2 = self.scale * self.scale;
        (huu / h2, huv / h2, hvv / h2)
    }
}

/// Fit `z ≈ f(u, v)`; returns the surface and the RMS residual.
pub fn fit_poly2(points: &[[f64; 3]], degree: usize) -> Result<(Poly2, f64)> {
    if !(1..=MAX_DEGREE).contains(&degree) {
        return Err(Error::Fit(format!("degree {degree} outside 1..={MAX_DEGREE}")));
    }
    let exps = Poly2::exponents(degree);
    if points.len() < exps.len() {
        return Err(Error::Fit(format!(
            "{} samples cannot determine a degree-{degree} surface ({} terms)",
            points.len(),
            exps.len()
        )));
    }
    let (su, hu) = normalization(points.iter().map(|p| p[0]));
    let (sv, hv) = normalization(points.iter().map(|p| p[1]));
    let scale = hu.max(hv);
    let n = points.len();
    let a = DMatrix::from_fn(n, exps.len(), |r, k| {
        let (i, j) = exps[k];
        ((points[r][0] - su) / scale).powi(i as i32) * ((points[r][1] - sv) / scale).powi(j as i32)
    });
    let b = DVector::from_iterator(n, points.iter().map(|p| p[2]));
    let c = solve(a.clone(), b.clone())?;
    let rms = ((&a * &c - b).norm_squared() / n as f64).sqrt();
    Ok((Poly2 { degree, shift: [su, sv], scale, coeffs: c.iter().copied().collect() }, rms))
}
