//! The Dirichlet interval `(0, L)`, its sine eigenbasis and the norms built on it.
//!
//! Fields are stored as coefficients against the L²-orthonormal eigenfunctions
//! `e_k(x) = sqrt(2/L) sin(kπx/L)`, `k = 1..=n_modes`. Collocation values live on
//! the interior nodes `x_j = j·L/n_quad`, `j = 1..n_quad-1`, which is the grid of
//! the type-I discrete sine transform. Both transforms are computed with a single
//! complex FFT of length `2·n_quad` applied to the odd (sine) or even (cosine)
//! extension of the data.
//!
//! Quadrature is the trapezoid rule on the same grid. It integrates trigonometric
//! polynomials of degree below `2·n_quad` exactly, so with the default
//! oversampling of 4 the products formed by a cubic nonlinearity are projected
//! without aliasing.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Quadrature cells per Galerkin mode unless requested otherwise.
pub const DEFAULT_OVERSAMPLE: usize = 4;

struct DomainInner {
    length: f64,
    n_modes: usize,
    n_quad: usize,
    fft: Arc<dyn Fft<f64>>,
}

/// Interval length, Galerkin truncation and quadrature resolution.
///
/// Cloning is cheap; clones share the FFT plan.
#[derive(Clone)]
pub struct Domain {
    inner: Arc<DomainInner>,
}

impl fmt::Debug for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Domain")
            .field("length", &self.inner.length)
            .field("n_modes", &self.inner.n_modes)
            .field("n_quad", &self.inner.n_quad)
            .finish()
    }
}

impl PartialEq for Domain {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.length == other.inner.length
                && self.inner.n_modes == other.inner.n_modes
                && self.inner.n_quad == other.inner.n_quad)
    }
}

impl Domain {
    pub fn new(length: f64, n_modes: usize) -> Result<Self> {
        Self::with_oversample(length, n_modes, DEFAULT_OVERSAMPLE)
    }

    pub fn with_oversample(length: f64, n_modes: usize, oversample: usize) -> Result<Self> {
        Self::with_quadrature(length, n_modes, oversample.saturating_mul(n_modes))
    }

    /// `n_quad` is the number of quadrature cells; it must be at least `2·n_modes`.
    pub fn with_quadrature(length: f64, n_modes: usize, n_quad: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::invalid(format!("interval length must be positive, got {length}")));
        }
        if n_modes == 0 {
            return Err(Error::invalid("n_modes must be positive"));
        }
        if n_quad < 2 * n_modes {
            return Err(Error::invalid(format!(
                "n_quad = {n_quad} is below the anti-aliasing floor 2·n_modes = {}",
                2 * n_modes
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(2 * n_quad);
        Ok(Self { inner: Arc::new(DomainInner { length, n_modes, n_quad, fft }) })
    }

    pub fn length(&self) -> f64 {
        self.inner.length
    }

    pub fn n_modes(&self) -> usize {
        self.inner.n_modes
    }

    pub fn n_quad(&self) -> usize {
        self.inner.n_quad
    }

    /// Number of interior collocation nodes, `n_quad - 1`.
    pub fn n_nodes(&self) -> usize {
        self.inner.n_quad - 1
    }

    /// Spacing of the collocation grid.
    pub fn cell_width(&self) -> f64 {
        self.inner.length / self.inner.n_quad as f64
    }

    /// `x_j = j·L/n_quad`; `j = 0` and `j = n_quad` are the boundary points.
    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.cell_width()
    }

    /// Dirichlet eigenvalue `(kπ/L)²` of `-Δ` for `k ≥ 1`.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let w = k as f64 * std::f64::consts::PI / self.inner.length;
        w * w
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.n_modes()).map(|k| self.eigenvalue(k)).collect()
    }

    /// Poincaré constant, the smallest eigenvalue.
    pub fn poincare_lambda1(&self) -> f64 {
        self.eigenvalue(1)
    }

    fn basis_scale(&self) -> f64 {
        (2.0 / self.inner.length).sqrt()
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(self)
    }

    pub fn zero(&self) -> SpectralField {
        SpectralField { domain: self.clone(), coeffs: vec![0.0; self.n_modes()] }
    }

    /// Eigenfunction `e_k`, `1 ≤ k ≤ n_modes`.
    pub fn basis(&self, k: usize) -> Result<SpectralField> {
        if k == 0 || k > self.n_modes() {
            return Err(Error::invalid(format!("mode {k} outside 1..={}", self.n_modes())));
        }
        let mut f = self.zero();
        f.coeffs[k - 1] = 1.0;
        Ok(f)
    }

    pub fn field(&self, coeffs: Vec<f64>) -> Result<SpectralField> {
        SpectralField::new(self, coeffs)
    }

    /// L²-projection of a function sampled at the interior nodes.
    pub fn project_fn(&self, f: impl Fn(f64) -> f64) -> SpectralField {
        let values: Vec<f64> = (1..self.n_quad()).map(|j| f(self.node(j))).collect();
        let mut ws = self.workspace();
        let mut coeffs = vec![0.0; self.n_modes()];
        self.sine_analysis(&values, &mut coeffs, &mut ws);
        SpectralField { domain: self.clone(), coeffs }
    }

    /// Odd-extension FFT: `out[i] = Σ_{j≥1} x_j sin(π j (i+1) / n_quad)`, with `x_j = input[j-1]`.
    fn odd_transform(&self, input: &[f64], out: &mut [f64], ws: &mut Workspace) {
        let n = self.inner.n_quad;
        let p = 2 * n;
        debug_assert!(input.len() < n && out.len() <= n);
        ws.buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (j, &x) in input.iter().enumerate() {
            ws.buf[j + 1].re = x;
            ws.buf[p - j - 1].re = -x;
        }
        self.inner.fft.process_with_scratch(&mut ws.buf, &mut ws.scratch);
        for (i, o) in out.iter_mut().enumerate() {
            *o = -0.5 * ws.buf[i + 1].im;
        }
    }

    /// Even-extension FFT: `out[m] = Σ_{j≥1} x_j cos(π j m / n_quad)`, `m = 0..out.len()`.
    fn even_transform(&self, input: &[f64], out: &mut [f64], ws: &mut Workspace) {
        let n = self.inner.n_quad;
        let p = 2 * n;
        debug_assert!(input.len() < n && out.len() <= p);
        ws.buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (j, &x) in input.iter().enumerate() {
            ws.buf[j + 1].re = x;
            ws.buf[p - j - 1].re = x;
        }
        self.inner.fft.process_with_scratch(&mut ws.buf, &mut ws.scratch);
        for (m, o) in out.iter_mut().enumerate() {
            *o = 0.5 * ws.buf[m].re;
        }
    }

    /// Coefficients → values at the interior nodes (`n_nodes` outputs).
    pub fn sine_synthesis(&self, coeffs: &[f64], values: &mut [f64], ws: &mut Workspace) {
        debug_assert_eq!(values.len(), self.n_nodes());
        self.odd_transform(coeffs, values, ws);
        let s = self.basis_scale();
        values.iter_mut().for_each(|v| *v *= s);
    }

    /// Interior-node values → the first `coeffs.len()` coefficients by trapezoid quadrature.
    pub fn sine_analysis(&self, values: &[f64], coeffs: &mut [f64], ws: &mut Workspace) {
        debug_assert_eq!(values.len(), self.n_nodes());
        self.odd_transform(values, coeffs, ws);
        let s = self.basis_scale() * self.cell_width();
        coeffs.iter_mut().for_each(|c| *c *= s);
    }

    /// Values of the derivative `Σ c_k e_k'` at all nodes `j = 0..=n_quad` (boundary included).
    pub fn derivative_synthesis(&self, coeffs: &[f64], values: &mut [f64], ws: &mut Workspace) {
        debug_assert_eq!(values.len(), self.n_quad() + 1);
        let w = std::f64::consts::PI / self.length();
        let scaled: Vec<f64> =
            coeffs.iter().enumerate().map(|(i, c)| c * (i + 1) as f64 * w).collect();
        self.even_transform(&scaled, values, ws);
        let s = self.basis_scale();
        values.iter_mut().for_each(|v| *v *= s);
    }

    /// `out[m] = Σ_j values_j cos(π m j / n_quad)` over the interior nodes.
    pub fn cosine_moments(&self, values: &[f64], out: &mut [f64], ws: &mut Workspace) {
        debug_assert_eq!(values.len(), self.n_nodes());
        self.even_transform(values, out, ws);
    }

    /// Trapezoid quadrature of `|v|^q` over interior-node values (boundary values are zero).
    pub fn interior_power_integral(&self, values: &[f64], q: f64) -> f64 {
        let h = self.cell_width();
        h * power_sum(values, q)
    }

    /// Trapezoid quadrature of `|v|^q` over values at all nodes `0..=n_quad`.
    pub fn full_power_integral(&self, values: &[f64], q: f64) -> f64 {
        debug_assert_eq!(values.len(), self.n_quad() + 1);
        let h = self.cell_width();
        let n = values.len();
        let inner = power_sum(&values[1..n - 1], q);
        let ends = 0.5 * (abs_pow(values[0], q) + abs_pow(values[n - 1], q));
        h * (inner + ends)
    }
}

#[inline]
fn abs_pow(v: f64, q: f64) -> f64 {
    if q == 2.0 {
        v * v
    } else {
        v.abs().powf(q)
    }
}

fn power_sum(values: &[f64], q: f64) -> f64 {
    if q == 2.0 {
        values.iter().map(|v| v * v).sum()
    } else if q == 1.0 {
        values.iter().map(|v| v.abs()).sum()
    } else {
        values.iter().map(|v| v.abs().powf(q)).sum()
    }
}

/// FFT buffers for one worker. Not shared between threads.
pub struct Workspace {
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Workspace {
    fn new(domain: &Domain) -> Self {
        let p = 2 * domain.n_quad();
        let scratch_len = domain.inner.fft.get_inplace_scratch_len();
        Self {
            buf: vec![Complex64::new(0.0, 0.0); p],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }
}

fn check_exponent(q: f64) -> Result<()> {
    if q.is_finite() && q >= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("norm exponent must be ≥ 1, got {q}")))
    }
}

/// A function in the Galerkin space `span{e_1, …, e_n}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    domain: Domain,
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn new(domain: &Domain, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != domain.n_modes() {
            return Err(Error::invalid(format!(
                "expected {} coefficients, got {}",
                domain.n_modes(),
                coeffs.len()
            )));
        }
        Ok(Self { domain: domain.clone(), coeffs })
    }

    /// Field from coefficients of any length; extra modes are dropped, missing ones are zero.
    pub fn truncated(domain: &Domain, coeffs: &[f64]) -> Self {
        let mut c = vec![0.0; domain.n_modes()];
        let n = c.len().min(coeffs.len());
        c[..n].copy_from_slice(&coeffs[..n]);
        Self { domain: domain.clone(), coeffs: c }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// Values at the interior quadrature nodes.
    pub fn to_collocation(&self) -> Vec<f64> {
        let mut ws = self.domain.workspace();
        let mut v = vec![0.0; self.domain.n_nodes()];
        self.domain.sine_synthesis(&self.coeffs, &mut v, &mut ws);
        v
    }

    /// Inverse of [`to_collocation`](Self::to_collocation) on band-limited data.
    pub fn from_collocation(domain: &Domain, values: &[f64]) -> Result<Self> {
        if values.len() != domain.n_nodes() {
            return Err(Error::invalid(format!(
                "expected {} collocation values, got {}",
                domain.n_nodes(),
                values.len()
            )));
        }
        let mut ws = domain.workspace();
        let mut coeffs = vec![0.0; domain.n_modes()];
        domain.sine_analysis(values, &mut coeffs, &mut ws);
        Ok(Self { domain: domain.clone(), coeffs })
    }

    /// Derivative values at all nodes including both boundary points.
    pub fn derivative_values(&self) -> Vec<f64> {
        let mut ws = self.domain.workspace();
        let mut v = vec![0.0; self.domain.n_quad() + 1];
        self.domain.derivative_synthesis(&self.coeffs, &mut v, &mut ws);
        v
    }

    /// `(∫ |f|^q)^{1/q}`.
    pub fn lp_norm(&self, q: f64) -> Result<f64> {
        Ok(self.lp_norm_pow(q)?.powf(1.0 / q))
    }

    /// `∫ |f|^q`, the q-th power of [`lp_norm`](Self::lp_norm).
    pub fn lp_norm_pow(&self, q: f64) -> Result<f64> {
        check_exponent(q)?;
        Ok(self.domain.interior_power_integral(&self.to_collocation(), q))
    }

    /// Dual norm of `H₀¹`: `(Σ f_k²/λ_k)^{1/2}`.
    pub fn h_norm(&self) -> f64 {
        self.weighted_sum(|lam| 1.0 / lam).sqrt()
    }

    /// Dual norm of `u ↦ (a‖∇u‖² + ‖u‖²)^{1/2}`: `(Σ f_k²/(aλ_k + 1))^{1/2}`.
    pub fn h_a_norm(&self, a: f64) -> Result<f64> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::invalid(format!("h_a_norm needs a > 0, got {a}")));
        }
        Ok(self.weighted_sum(|lam| 1.0 / (a * lam + 1.0)).sqrt())
    }

    /// Approximating Dirichlet form `Σ nλ_k/(n+λ_k) · f_k²`.
    pub fn dirichlet_form_approx(&self, n: f64) -> Result<f64> {
        if !(n.is_finite() && n >= 1.0) {
            return Err(Error::invalid(format!("dirichlet_form_approx needs n ≥ 1, got {n}")));
        }
        Ok(self.weighted_sum(|lam| n * lam / (n + lam)))
    }

    /// `∫ |∇f|² = Σ λ_k f_k²`.
    pub fn gradient_energy(&self) -> f64 {
        self.weighted_sum(|lam| lam)
    }

    /// L^q norm of the derivative, by quadrature over all nodes.
    pub fn grad_lq_norm(&self, q: f64) -> Result<f64> {
        Ok(self.grad_lq_norm_pow(q)?.powf(1.0 / q))
    }

    pub fn grad_lq_norm_pow(&self, q: f64) -> Result<f64> {
        check_exponent(q)?;
        Ok(self.domain.full_power_integral(&self.derivative_values(), q))
    }

    /// `Σ f_k²`, equal to `‖f‖₂²` by Parseval.
    pub fn l2_norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn l2_inner(&self, other: &SpectralField) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    /// `Δf`, computed spectrally.
    pub fn laplacian(&self) -> SpectralField {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| -self.domain.eigenvalue(i + 1) * c)
            .collect();
        SpectralField { domain: self.domain.clone(), coeffs }
    }

    pub fn h_distance(&self, other: &SpectralField) -> f64 {
        (self - other).h_norm()
    }

    pub fn scaled(&self, s: f64) -> SpectralField {
        SpectralField {
            domain: self.domain.clone(),
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// `self += s·other`.
    pub fn axpy(&mut self, s: f64, other: &SpectralField) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
    }

    fn weighted_sum(&self, w: impl Fn(f64) -> f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| w(self.domain.eigenvalue(i + 1)) * c * c)
            .sum()
    }

    fn zip_with(&self, other: &SpectralField, f: impl Fn(f64, f64) -> f64) -> SpectralField {
        assert!(self.domain == other.domain, "fields live on different domains");
        SpectralField {
            domain: self.domain.clone(),
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| f(*a, *b)).collect(),
        }
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Neg for &SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self.scaled(-1.0)
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, rhs: f64) -> SpectralField {
        self.scaled(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn unit_interval(n: usize) -> Domain {
        Domain::new(PI, n).unwrap()
    }

    /// Direct O(n²) evaluation of the sine series.
    fn direct_values(f: &SpectralField) -> Vec<f64> {
        let d = f.domain();
        (1..d.n_quad())
            .map(|j| {
                let x = d.node(j);
                f.coeffs()
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * (2.0 / d.length()).sqrt() * ((i + 1) as f64 * PI * x / d.length()).sin())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Domain::new(0.0, 4).is_err());
        assert!(Domain::new(1.0, 0).is_err());
        assert!(Domain::with_quadrature(1.0, 8, 15).is_err());
        assert!(Domain::with_quadrature(1.0, 8, 16).is_ok());
    }

    #[test]
    fn eigenvalues_increase() {
        let d = Domain::new(2.5, 16).unwrap();
        let ev = d.eigenvalues();
        assert!(ev.windows(2).all(|w| w[0] < w[1]));
        assert!(d.poincare_lambda1() > 0.0);
        assert_abs_diff_eq!(unit_interval(4).poincare_lambda1(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_field_collocates_to_zero() {
        let d = unit_interval(8);
        assert!(d.zero().to_collocation().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_mode_collocation() {
        let d = unit_interval(8);
        let v = d.basis(1).unwrap().to_collocation();
        for (j, val) in v.iter().enumerate() {
            let x = d.node(j + 1);
            assert_abs_diff_eq!(*val, (2.0 / PI).sqrt() * x.sin(), epsilon = 1e-14);
        }
    }

    #[test]
    fn fft_synthesis_matches_direct_sum() {
        let d = Domain::new(1.7, 13).unwrap();
        let f = d.field((0..13).map(|i| ((i * 7 % 5) as f64 - 2.0) / (i + 1) as f64).collect()).unwrap();
        for (a, b) in f.to_collocation().iter().zip(direct_values(&f)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn derivative_matches_direct_sum() {
        let d = Domain::new(2.0, 9).unwrap();
        let f = d.field((0..9).map(|i| 1.0 / (1.0 + i as f64)).collect()).unwrap();
        let dv = f.derivative_values();
        for (j, val) in dv.iter().enumerate() {
            let x = d.node(j);
            let direct: f64 = f
                .coeffs()
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let w = (i + 1) as f64 * PI / 2.0;
                    c * (2.0 / 2.0f64).sqrt() * w * (w * x).cos()
                })
                .sum();
            assert_abs_diff_eq!(*val, direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn lp_norms_of_first_mode() {
        let d = unit_interval(8);
        let e1 = d.basis(1).unwrap();
        assert_abs_diff_eq!(e1.lp_norm(2.0).unwrap(), 1.0, epsilon = 1e-12);
        // ∫ (2/π)² sin⁴ = (2/π)²·3π/8
        let expected = ((2.0 / PI).powi(2) * 3.0 * PI / 8.0).powf(0.25);
        assert_abs_diff_eq!(e1.lp_norm(4.0).unwrap(), expected, epsilon = 1e-12);
        assert_eq!(d.zero().lp_norm(3.0).unwrap(), 0.0);
        assert!(e1.lp_norm(0.5).is_err());
    }

    #[test]
    fn dual_norms_of_basis_functions() {
        let d = unit_interval(8);
        assert_abs_diff_eq!(d.basis(1).unwrap().h_norm(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.basis(2).unwrap().h_norm(), 0.5, epsilon = 1e-15);
        assert_eq!(d.zero().h_norm(), 0.0);
        assert_abs_diff_eq!(d.basis(1).unwrap().h_a_norm(1.0).unwrap(), 0.5f64.sqrt(), epsilon = 1e-15);
        assert!(d.basis(1).unwrap().h_a_norm(0.0).is_err());
    }

    #[test]
    fn h_a_norm_increases_as_a_decreases() {
        let d = unit_interval(8);
        let f = d.field(vec![1.0, -0.5, 0.25, 0.0, 0.1, 0.0, 0.0, 0.02]).unwrap();
        let l2 = f.lp_norm(2.0).unwrap();
        let vals: Vec<f64> = [1.0, 0.1, 0.01].iter().map(|&a| f.h_a_norm(a).unwrap()).collect();
        assert!(vals[0] < vals[1] && vals[1] < vals[2] && vals[2] <= l2);
    }

    #[test]
    fn dirichlet_form_values() {
        let d = unit_interval(8);
        let e1 = d.basis(1).unwrap();
        assert_abs_diff_eq!(e1.dirichlet_form_approx(1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert!(e1.dirichlet_form_approx(0.5).is_err());
        // smooth f: limit against the quadrature of |f'|²
        let f = d.field(vec![1.0, 0.3, -0.2, 0.05, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let grad_sq = f.grad_lq_norm_pow(2.0).unwrap();
        let big = f.dirichlet_form_approx(1e6).unwrap();
        assert!((big - grad_sq).abs() / grad_sq < 0.01);
        let mut prev = 0.0;
        for n in [1.0, 2.0, 10.0, 100.0, 1e4] {
            let v = f.dirichlet_form_approx(n).unwrap();
            assert!(v >= prev && v <= f.gradient_energy());
            prev = v;
        }
    }

    #[test]
    fn gradient_norms() {
        let d = unit_interval(8);
        assert_abs_diff_eq!(d.basis(1).unwrap().grad_lq_norm(2.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.basis(2).unwrap().grad_lq_norm(2.0).unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(d.zero().grad_lq_norm(1.5).unwrap(), 0.0);
        assert!(d.zero().grad_lq_norm(0.0).is_err());
    }

    #[test]
    fn laplacian_is_spectral() {
        let d = unit_interval(4);
        let f = d.basis(2).unwrap().laplacian();
        assert_eq!(f.coeffs(), &[0.0, -4.0, 0.0, 0.0]);
    }

    #[test]
    fn projection_of_smooth_function() {
        let d = unit_interval(16);
        let f = d.project_fn(|x| 3.0 * x.sin() - (2.0 * x).sin());
        let s = (PI / 2.0).sqrt();
        assert_abs_diff_eq!(f.coeffs()[0], 3.0 * s, epsilon = 1e-12);
        assert_abs_diff_eq!(f.coeffs()[1], -s, epsilon = 1e-12);
        assert!(f.coeffs()[2..].iter().all(|c| c.abs() < 1e-12));
    }
}
