//! Two-sided Wiener paths on a fixed time grid and the finite-rank noise operator `Q`.
//!
//! The increment of channel `j` over grid cell `[k·dt, (k+1)·dt]` is a pure
//! function of `(seed, j, k)`, produced by a ChaCha8 stream keyed on the seed,
//! with the stream id set to the channel and the word position set to a
//! zig-zag encoding of `k`. Path values are cumulative sums outward from
//! `t = 0`, so enlarging the window never changes existing values.

use std::sync::Arc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, SpectralField};
use crate::error::{Error, Result};

/// Relative slack when snapping a time onto the grid.
const GRID_SNAP: f64 = 1e-9;
const MAX_PATH_VALUES: usize = 500_000_000;

/// Nearest grid index when `x` is within snapping distance of an integer.
fn snap(x: f64) -> Option<i64> {
    let r = x.round();
    ((x - r).abs() <= GRID_SNAP * r.abs().max(1.0)).then_some(r as i64)
}

fn zigzag(k: i64) -> u64 {
    ((k << 1) ^ (k >> 63)) as u64
}

/// Two standard normals per cell by Box–Muller; only the first is used.
fn cell_normal(rng: &mut ChaCha8Rng, cell: i64) -> f64 {
    // Two u64 words per cell; word positions count u32 words.
    rng.set_word_pos(zigzag(cell) as u128 * 4);
    let a = rng.next_u64();
    let b = rng.next_u64();
    let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Standard normal keyed on `(seed, channel, cell)`. Mainly for tests and diagnostics.
pub fn keyed_normal(seed: u64, channel: u64, cell: i64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel);
    cell_normal(&mut rng, cell)
}

#[derive(Debug)]
struct PathData {
    seed: u64,
    m: usize,
    dt: f64,
    k_min: i64,
    k_max: i64,
    /// Row-major `(k - k_min, channel)`.
    values: Vec<f64>,
}

impl PathData {
    fn value(&self, k: i64, j: usize) -> f64 {
        self.values[(k - self.k_min) as usize * self.m + j]
    }
}

/// Metadata recorded in artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathInfo {
    pub seed: u64,
    pub m: usize,
    pub dt_grid: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// Accumulated Wiener shift relative to the generated path.
    pub shift: f64,
}

/// An `m`-channel two-sided Brownian path, possibly Wiener-shifted.
///
/// Shifted paths share storage with the original: `W'(k) = W(k + offset) - W(offset)`.
#[derive(Debug, Clone)]
pub struct WienerPath {
    data: Arc<PathData>,
    offset: i64,
}

impl WienerPath {
    /// Generates the path on the smallest grid window covering `[t_min, t_max]`.
    pub fn new(seed: u64, m: usize, dt_grid: f64, t_min: f64, t_max: f64) -> Result<Self> {
        if !(dt_grid.is_finite() && dt_grid > 0.0) {
            return Err(Error::invalid(format!("dt_grid must be positive, got {dt_grid}")));
        }
        if !(t_min.is_finite() && t_max.is_finite() && t_min <= 0.0 && t_max >= 0.0) {
            return Err(Error::invalid(format!("window [{t_min}, {t_max}] must contain 0")));
        }
        let k_min = snap(t_min / dt_grid).unwrap_or_else(|| (t_min / dt_grid).floor() as i64);
        let k_max = snap(t_max / dt_grid).unwrap_or_else(|| (t_max / dt_grid).ceil() as i64);
        let rows = (k_max - k_min + 1) as usize;
        if rows.saturating_mul(m.max(1)) > MAX_PATH_VALUES {
            return Err(Error::invalid(format!("path with {rows} grid points × {m} channels is too large")));
        }
        let sd = dt_grid.sqrt();
        let mut values = vec![0.0; rows * m];
        let zero = (-k_min) as usize;
        for j in 0..m {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let mut w = 0.0;
            for k in 1..=k_max {
                w += sd * cell_normal(&mut rng, k - 1);
                values[(zero + k as usize) * m + j] = w;
            }
            let mut w = 0.0;
            for k in (k_min..0).rev() {
                w -= sd * cell_normal(&mut rng, k);
                values[(k - k_min) as usize * m + j] = w;
            }
        }
        let data = PathData { seed, m, dt: dt_grid, k_min, k_max, values };
        Ok(Self { data: Arc::new(data), offset: 0 })
    }

    pub fn seed(&self) -> u64 {
        self.data.seed
    }

    pub fn channels(&self) -> usize {
        self.data.m
    }

    pub fn dt_grid(&self) -> f64 {
        self.data.dt
    }

    /// Grid index range of this (possibly shifted) path.
    pub fn index_range(&self) -> (i64, i64) {
        (self.data.k_min - self.offset, self.data.k_max - self.offset)
    }

    pub fn t_min(&self) -> f64 {
        self.index_range().0 as f64 * self.data.dt
    }

    pub fn t_max(&self) -> f64 {
        self.index_range().1 as f64 * self.data.dt
    }

    pub fn shift(&self) -> f64 {
        self.offset as f64 * self.data.dt
    }

    pub fn info(&self) -> PathInfo {
        PathInfo {
            seed: self.seed(),
            m: self.channels(),
            dt_grid: self.dt_grid(),
            t_min: self.t_min(),
            t_max: self.t_max(),
            shift: self.shift(),
        }
    }

    /// `W_j` at grid index `k`.
    pub fn value_at_index(&self, k: i64, j: usize) -> Result<f64> {
        let (lo, hi) = self.index_range();
        if k < lo || k > hi {
            let dt = self.data.dt;
            return Err(Error::OutOfWindow { t: k as f64 * dt, t_min: self.t_min(), t_max: self.t_max() });
        }
        if self.offset == 0 {
            return Ok(self.data.value(k, j));
        }
        Ok(self.data.value(k + self.offset, j) - self.data.value(self.offset, j))
    }

    /// Grid index of `t` if it lies on the grid.
    pub fn grid_index(&self, t: f64) -> Option<i64> {
        snap(t / self.data.dt)
    }

    pub(crate) fn check_window(&self, t: f64) -> Result<()> {
        let dt = self.data.dt;
        let (lo, hi) = self.index_range();
        let x = t / dt;
        let slack = GRID_SNAP * x.abs().max(1.0);
        if !(x >= lo as f64 - slack && x <= hi as f64 + slack) {
            return Err(Error::OutOfWindow { t, t_min: self.t_min(), t_max: self.t_max() });
        }
        Ok(())
    }

    /// All channels at time `t`, linearly interpolated between grid points.
    pub fn values(&self, t: f64, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.data.m);
        self.check_window(t)?;
        if let Some(k) = self.grid_index(t) {
            for (j, o) in out.iter_mut().enumerate() {
                *o = self.value_at_index(k, j)?;
            }
            return Ok(());
        }
        let x = t / self.data.dt;
        let k0 = x.floor() as i64;
        let w = x - k0 as f64;
        for (j, o) in out.iter_mut().enumerate() {
            let a = self.value_at_index(k0, j)?;
            let b = self.value_at_index(k0 + 1, j)?;
            *o = (1.0 - w) * a + w * b;
        }
        Ok(())
    }

    pub fn value(&self, t: f64, j: usize) -> Result<f64> {
        let mut v = vec![0.0; self.data.m];
        self.values(t, &mut v)?;
        Ok(v[j])
    }
}

/// `θ_s ω = ω(s + ·) - ω(s)`. `s` must be a grid time inside the window.
pub fn wiener_shift(path: &WienerPath, s: f64) -> Result<WienerPath> {
    let k = path
        .grid_index(s)
        .ok_or_else(|| Error::invalid(format!("shift {s} is not a multiple of dt_grid = {}", path.dt_grid())))?;
    let (lo, hi) = path.index_range();
    if k < lo || k > hi {
        return Err(Error::OutOfWindow { t: s, t_min: path.t_min(), t_max: path.t_max() });
    }
    Ok(WienerPath { data: Arc::clone(&path.data), offset: path.offset + k })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    #[serde(rename = "C1_0")]
    C1,
    #[serde(rename = "C2_0")]
    C2,
}

/// `Qx = Σ_j amplitude_j x_j φ_j`. With no profiles, `Q = 0`.
#[derive(Debug, Clone)]
pub struct NoiseOperator {
    domain: Domain,
    profiles: Vec<SpectralField>,
    amplitudes: Vec<f64>,
    smoothness: Smoothness,
}

impl NoiseOperator {
    pub fn new(
        domain: &Domain,
        profiles: Vec<SpectralField>,
        amplitudes: Vec<f64>,
        smoothness: Smoothness,
    ) -> Result<Self> {
        if profiles.len() != amplitudes.len() {
            return Err(Error::invalid(format!(
                "{} profiles but {} amplitudes",
                profiles.len(),
                amplitudes.len()
            )));
        }
        if profiles.iter().any(|p| p.domain() != domain) {
            return Err(Error::DomainMismatch);
        }
        if let Some(a) = amplitudes.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::invalid(format!("amplitudes must be positive, got {a}")));
        }
        Ok(Self { domain: domain.clone(), profiles, amplitudes, smoothness })
    }

    pub fn zero(domain: &Domain) -> Self {
        Self { domain: domain.clone(), profiles: Vec::new(), amplitudes: Vec::new(), smoothness: Smoothness::C2 }
    }

    /// Channel `j` drives the basis function `e_{modes[j]}` with amplitude `amplitudes[j]`.
    pub fn modal(domain: &Domain, modes: &[usize], amplitudes: Vec<f64>, smoothness: Smoothness) -> Result<Self> {
        let profiles = modes.iter().map(|&k| domain.basis(k)).collect::<Result<Vec<_>>>()?;
        Self::new(domain, profiles, amplitudes, smoothness)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn channels(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_zero(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn profiles(&self) -> &[SpectralField] {
        &self.profiles
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    /// `Q w` for a vector `w ∈ ℝ^m`, written into `coeffs`.
    pub fn apply_into(&self, w: &[f64], coeffs: &mut [f64]) {
        coeffs.iter_mut().for_each(|c| *c = 0.0);
        for ((phi, a), wj) in self.profiles.iter().zip(&self.amplitudes).zip(w) {
            let s = a * wj;
            for (c, p) in coeffs.iter_mut().zip(phi.coeffs()) {
                *c += s * p;
            }
        }
    }

    pub fn apply(&self, w: &[f64]) -> SpectralField {
        let mut coeffs = vec![0.0; self.domain.n_modes()];
        self.apply_into(w, &mut coeffs);
        SpectralField::truncated(&self.domain, &coeffs)
    }

    fn check_path(&self, path: &WienerPath) -> Result<()> {
        if !self.is_zero() && path.channels() != self.channels() {
            return Err(Error::invalid(format!(
                "noise operator has {} channels, path has {}",
                self.channels(),
                path.channels()
            )));
        }
        Ok(())
    }
}

/// `QW_t` as a field. Errors outside the path window, even when `Q = 0`.
pub fn qw(path: &WienerPath, q: &NoiseOperator, t: f64) -> Result<SpectralField> {
    let mut coeffs = vec![0.0; q.domain.n_modes()];
    qw_into(path, q, t, &mut coeffs)?;
    Ok(SpectralField::truncated(&q.domain, &coeffs))
}

/// Coefficients of `QW_t` written into `coeffs`.
pub fn qw_into(path: &WienerPath, q: &NoiseOperator, t: f64, coeffs: &mut [f64]) -> Result<()> {
    q.check_path(path)?;
    path.check_window(t)?;
    if q.is_zero() {
        coeffs.iter_mut().for_each(|c| *c = 0.0);
        return Ok(());
    }
    let mut w = vec![0.0; path.channels()];
    path.values(t, &mut w)?;
    q.apply_into(&w, coeffs);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub t: f64,
    /// `‖QW_t‖_q^q`
    pub value: f64,
    /// `‖∇QW_t‖_q^q`
    pub gradient: f64,
    /// `‖ΔQW_t‖_q^q`, only for the `C²₀` class.
    pub laplacian: Option<f64>,
}

/// Polynomial-growth evidence for the noise functionals entering the estimates.
pub fn noise_growth_report(
    path: &WienerPath,
    q: &NoiseOperator,
    exponent: f64,
    times: &[f64],
    with_laplacian: bool,
) -> Result<Vec<GrowthRow>> {
    if with_laplacian && q.smoothness == Smoothness::C1 {
        return Err(Error::SmoothnessMismatch("ΔQW requested for a C¹₀ noise operator".into()));
    }
    times
        .iter()
        .map(|&t| {
            let f = qw(path, q, t)?;
            Ok(GrowthRow {
                t,
                value: f.lp_norm_pow(exponent)?,
                gradient: f.grad_lq_norm_pow(exponent)?,
                laplacian: if with_laplacian { Some(f.laplacian().lp_norm_pow(exponent)?) } else { None },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn domain() -> Domain {
        Domain::new(std::f64::consts::PI, 8).unwrap()
    }

    #[test]
    fn anchored_at_zero() {
        let p = WienerPath::new(7, 3, 0.01, -2.0, 1.0).unwrap();
        for j in 0..3 {
            assert_eq!(p.value(0.0, j).unwrap(), 0.0);
        }
        assert_eq!(p.index_range(), (-200, 100));
    }

    #[test]
    fn nesting_is_bit_exact() {
        let small = WienerPath::new(11, 2, 0.01, -10.0, 1.0).unwrap();
        let big = WienerPath::new(11, 2, 0.01, -100.0, 3.0).unwrap();
        for k in -1000..=100 {
            for j in 0..2 {
                assert_eq!(small.value_at_index(k, j).unwrap(), big.value_at_index(k, j).unwrap());
            }
        }
    }

    #[test]
    fn increments_are_keyed() {
        let p = WienerPath::new(5, 2, 0.25, -1.0, 1.0).unwrap();
        let d = p.value_at_index(3, 1).unwrap() - p.value_at_index(2, 1).unwrap();
        assert_abs_diff_eq!(d, 0.5 * keyed_normal(5, 1, 2), epsilon = 1e-15);
        let d = p.value_at_index(-2, 0).unwrap() - p.value_at_index(-1, 0).unwrap();
        assert_abs_diff_eq!(d, -0.5 * keyed_normal(5, 0, -2), epsilon = 1e-15);
    }

    #[test]
    fn increment_statistics() {
        let dt = 0.01;
        let p = WienerPath::new(3, 1, dt, -200.0, 200.0).unwrap();
        let (lo, hi) = p.index_range();
        let incs: Vec<f64> =
            (lo..hi).map(|k| p.value_at_index(k + 1, 0).unwrap() - p.value_at_index(k, 0).unwrap()).collect();
        let n = incs.len() as f64;
        let mean = incs.iter().sum::<f64>() / n;
        let var = incs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // 40 000 samples: standard errors ≈ 5e-4·√dt and 0.7 %.
        assert!(mean.abs() < 5.0 * (dt / n).sqrt(), "mean {mean}");
        assert!((var / dt - 1.0).abs() < 0.04, "variance ratio {}", var / dt);
    }

    #[test]
    fn channels_are_independent_streams() {
        let p = WienerPath::new(9, 2, 0.1, 0.0, 10.0).unwrap();
        assert_ne!(p.value(10.0, 0).unwrap(), p.value(10.0, 1).unwrap());
        let q = WienerPath::new(10, 1, 0.1, 0.0, 10.0).unwrap();
        assert_ne!(p.value(10.0, 0).unwrap(), q.value(10.0, 0).unwrap());
    }

    #[test]
    fn out_of_window_is_an_error() {
        let p = WienerPath::new(1, 1, 0.1, -1.0, 1.0).unwrap();
        assert!(matches!(p.value(1.5, 0), Err(Error::OutOfWindow { .. })));
        assert!(matches!(qw(&p, &NoiseOperator::zero(&domain()), -1.2), Err(Error::OutOfWindow { .. })));
        assert!(WienerPath::new(1, 1, 0.1, 0.5, 1.0).is_err());
    }

    #[test]
    fn interpolation_between_grid_points() {
        let p = WienerPath::new(2, 1, 0.5, -1.0, 1.0).unwrap();
        let a = p.value(0.5, 0).unwrap();
        let b = p.value(1.0, 0).unwrap();
        assert_abs_diff_eq!(p.value(0.75, 0).unwrap(), 0.5 * (a + b), epsilon = 1e-15);
    }

    #[test]
    fn qw_single_mode() {
        let d = domain();
        let p = WienerPath::new(4, 1, 0.1, -1.0, 1.0).unwrap();
        let q = NoiseOperator::modal(&d, &[1], vec![1.0], Smoothness::C2).unwrap();
        assert!(qw(&p, &q, 0.0).unwrap().coeffs().iter().all(|&c| c == 0.0));
        let w = p.value(0.7, 0).unwrap();
        let f = qw(&p, &q, 0.7).unwrap();
        assert_eq!(f.coeffs()[0], w);
        assert!(f.coeffs()[1..].iter().all(|&c| c == 0.0));
    }

    #[test]
    fn shift_identities() {
        let d = domain();
        let p = WienerPath::new(8, 2, 0.01, -5.0, 5.0).unwrap();
        let q = NoiseOperator::modal(&d, &[1, 3], vec![0.5, 0.25], Smoothness::C2).unwrap();
        let same = wiener_shift(&p, 0.0).unwrap();
        for k in -500..=500 {
            assert_eq!(same.value_at_index(k, 1).unwrap(), p.value_at_index(k, 1).unwrap());
        }
        let once = wiener_shift(&p, 1.5).unwrap();
        let twice = wiener_shift(&wiener_shift(&p, 1.0).unwrap(), 0.5).unwrap();
        for k in -600..=300 {
            assert_eq!(once.value_at_index(k, 0).unwrap(), twice.value_at_index(k, 0).unwrap());
        }
        let s = -2.0;
        let sh = wiener_shift(&p, s).unwrap();
        for t in [-1.0, 0.3, 2.5, 6.9] {
            let lhs = qw(&sh, &q, t).unwrap();
            let rhs = &qw(&p, &q, t + s).unwrap() - &qw(&p, &q, s).unwrap();
            for (a, b) in lhs.coeffs().iter().zip(rhs.coeffs()) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-14);
            }
        }
        assert!(wiener_shift(&p, 0.005).is_err());
        assert!(wiener_shift(&p, 6.0).is_err());
    }

    #[test]
    fn growth_report_values() {
        let d = domain();
        let p = WienerPath::new(12, 1, 0.1, -1.0, 2.0).unwrap();
        let q = NoiseOperator::modal(&d, &[1], vec![1.0], Smoothness::C2).unwrap();
        let rows = noise_growth_report(&p, &q, 2.0, &[0.0, 1.0, 2.0], true).unwrap();
        assert_eq!(rows[0].value, 0.0);
        assert_eq!(rows[0].laplacian, Some(0.0));
        for r in &rows[1..] {
            let w = p.value(r.t, 0).unwrap();
            assert_abs_diff_eq!(r.value, w * w, epsilon = 1e-10);
            assert_abs_diff_eq!(r.gradient, w * w, epsilon = 1e-10);
            assert_abs_diff_eq!(r.laplacian.unwrap(), w * w, epsilon = 1e-10);
        }
        let c1 = NoiseOperator::modal(&d, &[1], vec![1.0], Smoothness::C1).unwrap();
        assert!(matches!(noise_growth_report(&p, &c1, 2.0, &[0.0], true), Err(Error::SmoothnessMismatch(_))));
    }

    #[test]
    fn operator_validation() {
        let d = domain();
        assert!(NoiseOperator::modal(&d, &[1], vec![-1.0], Smoothness::C2).is_err());
        assert!(NoiseOperator::modal(&d, &[1, 2], vec![1.0], Smoothness::C2).is_err());
        let other = Domain::new(1.0, 8).unwrap();
        assert!(NoiseOperator::new(&d, vec![other.basis(1).unwrap()], vec![1.0], Smoothness::C2).is_err());
    }
}
