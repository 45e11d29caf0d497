//! Time stepping of the ω-wise Galerkin system for `Z = X - QW`:
//! `dZ/dt = P_n ΔΦ(Z + QW_t)`, equivalently `dZ_k/dt = -λ_k (PΦ(S))_k`.
//!
//! Backward Euler solves `F(y) = y - z + dt·λ∘PΦ(y + QW) = 0` each step. The
//! Newton system is solved in its symmetric form `(Λ⁻¹ + dt·B) δ = -Λ⁻¹F`,
//! where `B_jk = ∫ Φ'(S) e_j e_k` is assembled from cosine moments of `Φ'(S)`.
//! `Λ⁻¹ + dt·B` is positive definite whenever `Φ' ≥ 0`, so a Cholesky
//! factorization always applies to monotone nonlinearities.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, SpectralField, Workspace};
use crate::error::{Error, Result};
use crate::noise::{qw_into, wiener_shift, NoiseOperator, WienerPath};
use crate::nonlinearity::Nonlinearity;

/// Field magnitudes above this are reported as overflow.
const OVERFLOW_LIMIT: f64 = 1e120;
/// Armijo constant and smallest damping factor of the line search.
const ARMIJO: f64 = 1e-4;
const MIN_DAMPING: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    BackwardEuler,
    ExplicitSubstep,
}

/// Which rule makes the discrete energy identity exact for a scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Endpoint {
    Left,
    Right,
}

impl Scheme {
    /// Backward Euler evaluates the drift at the new state, forward Euler at the old one.
    pub fn endpoint(self) -> Endpoint {
        match self {
            Scheme::BackwardEuler => Endpoint::Right,
            Scheme::ExplicitSubstep => Endpoint::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearSolver {
    /// Damped Newton with a dense Cholesky solve.
    Newton,
    /// Damped fixed point preconditioned by `(1 + dt·M·λ_k)⁻¹`, `M ≥ sup Φ'`.
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    pub scheme: Scheme,
    #[serde(default = "default_solver")]
    pub solver: NonlinearSolver,
    /// Converged when `‖F‖_H ≤ nonlinear_tol·max(1, ‖Z_k‖_H)`.
    pub nonlinear_tol: f64,
    pub max_iters: usize,
    #[serde(default = "default_safety")]
    pub substep_safety: f64,
}

fn default_solver() -> NonlinearSolver {
    NonlinearSolver::Newton
}

fn default_safety() -> f64 {
    0.5
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            scheme: Scheme::BackwardEuler,
            solver: NonlinearSolver::Newton,
            nonlinear_tol: 1e-10,
            max_iters: 100,
            substep_safety: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.nonlinear_tol.is_finite() && self.nonlinear_tol > 0.0) {
            return Err(Error::invalid(format!("nonlinear_tol must be positive, got {}", self.nonlinear_tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        if !(self.substep_safety > 0.0 && self.substep_safety < 1.0) {
            return Err(Error::invalid(format!("substep_safety must lie in (0, 1), got {}", self.substep_safety)));
        }
        Ok(())
    }
}

/// The noise realization ω: a path and the operator `Q`.
#[derive(Debug, Clone, Copy)]
pub struct Forcing<'a> {
    pub path: &'a WienerPath,
    pub q: &'a NoiseOperator,
}

impl<'a> Forcing<'a> {
    pub fn new(path: &'a WienerPath, q: &'a NoiseOperator) -> Self {
        Self { path, q }
    }

    pub fn qw(&self, t: f64) -> Result<SpectralField> {
        crate::noise::qw(self.path, self.q, t)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub z_h: f64,
    pub z_l2: f64,
    /// `‖S‖_{p+1}`.
    pub s_lp: f64,
    /// `‖Z_{k+1}‖²_H - ‖Z_k‖²_H + 2dt⟨Z, Φ(S)⟩` summed over the steps since the previous entry,
    /// with `(Z, S)` taken at the scheme's endpoint.
    pub energy_residual: f64,
    /// Nonlinear iterations (backward Euler) or substeps (explicit), summed likewise.
    pub iterations: usize,
    /// Largest final nonlinear residual `‖F‖_H` since the previous entry.
    pub solver_residual: f64,
}

/// Outcome of one step before it is packaged into a trajectory.
#[derive(Debug, Clone, Copy)]
struct StepInfo {
    /// `⟨Z, Φ(S)⟩` at the scheme's endpoint.
    dissipation: f64,
    s_lp: f64,
    iterations: usize,
    residual: f64,
}

/// Solver state for one trajectory: FFT workspace and scratch buffers.
pub struct Stepper<'a> {
    cfg: &'a SolverConfig,
    nl: &'a Nonlinearity,
    forcing: Forcing<'a>,
    domain: Domain,
    ws: Workspace,
    lambda: Vec<f64>,
    q: Vec<f64>,
    vals: Vec<f64>,
    phi: Vec<f64>,
    dphi: Vec<f64>,
    pphi: Vec<f64>,
    /// Coefficients of `S = y + q`.
    sc: Vec<f64>,
    f: Vec<f64>,
    trial: Vec<f64>,
    moments: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(cfg: &'a SolverConfig, nl: &'a Nonlinearity, forcing: Forcing<'a>) -> Result<Self> {
        cfg.validate()?;
        if !nl.has_derivative() {
            return Err(Error::MissingDerivative(nl.label()));
        }
        let domain = forcing.q.domain().clone();
        let n = domain.n_modes();
        let nodes = domain.n_nodes();
        Ok(Self {
            cfg,
            nl,
            forcing,
            ws: domain.workspace(),
            lambda: domain.eigenvalues(),
            q: vec![0.0; n],
            vals: vec![0.0; nodes],
            phi: vec![0.0; nodes],
            dphi: vec![0.0; nodes],
            pphi: vec![0.0; n],
            sc: vec![0.0; n],
            f: vec![0.0; n],
            trial: vec![0.0; n],
            moments: vec![0.0; 2 * n + 1],
            domain,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    fn h_norm(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.lambda).map(|(c, l)| c * c / l).sum::<f64>().sqrt()
    }

    /// Evaluates `S = y + q` on the nodes, `Φ(S)` and its projection into `pphi`.
    fn evaluate_drift(&mut self, y: &[f64], t: f64) -> Result<()> {
        for i in 0..y.len() {
            self.sc[i] = y[i] + self.q[i];
        }
        self.domain.sine_synthesis(&self.sc, &mut self.vals, &mut self.ws);
        if self.vals.iter().any(|v| !(v.abs() <= OVERFLOW_LIMIT)) {
            return Err(Error::Overflow { t });
        }
        self.nl.phi_into(&self.vals, &mut self.phi);
        self.domain.sine_analysis(&self.phi, &mut self.pphi, &mut self.ws);
        if self.pphi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { t });
        }
        Ok(())
    }

    /// `F(y) = y - z + dt·λ∘PΦ(y + q)` into `out`; returns `‖F‖_H`.
    fn residual(&mut self, y: &[f64], z: &[f64], dt: f64, t: f64, out: &mut [f64]) -> Result<f64> {
        self.evaluate_drift(y, t)?;
        for i in 0..y.len() {
            out[i] = y[i] - z[i] + dt * self.lambda[i] * self.pphi[i];
        }
        let r = self.h_norm(out);
        if !r.is_finite() {
            return Err(Error::Overflow { t });
        }
        Ok(r)
    }

    fn lp_of_values(&self) -> f64 {
        let q = self.nl.p() + 1.0;
        self.domain.interior_power_integral(&self.vals, q).powf(1.0 / q)
    }

    /// One step from `(t, z)` to `t + dt`, overwriting `z`.
    fn advance(&mut self, z: &mut [f64], t: f64, dt: f64) -> Result<StepInfo> {
        match self.cfg.scheme {
            Scheme::BackwardEuler => self.backward_euler(z, t + dt, dt),
            Scheme::ExplicitSubstep => self.explicit(z, t, dt),
        }
    }

    fn backward_euler(&mut self, z: &mut [f64], t_next: f64, dt: f64) -> Result<StepInfo> {
        qw_into(self.forcing.path, self.forcing.q, t_next, &mut self.q)?;
        let n = z.len();
        let zprev = z.to_vec();
        let scale = self.h_norm(&zprev).max(1.0);
        let tol = self.cfg.nonlinear_tol * scale;
        let mut y = zprev.clone();
        let mut f = std::mem::take(&mut self.f);
        let mut r = self.residual(&y, &zprev, dt, t_next, &mut f)?;
        let mut iterations = 0;
        let mut delta = vec![0.0; n];
        let mut trial_f = vec![0.0; n];
        while r > tol {
            if iterations == self.cfg.max_iters {
                self.f = f;
                return Err(Error::NonConvergence { iters: iterations, residual: r });
            }
            iterations += 1;
            match self.cfg.solver {
                NonlinearSolver::Newton => self.newton_direction(&f, dt, &mut delta)?,
                NonlinearSolver::FixedPoint => self.fixed_point_direction(&f, dt, &mut delta)?,
            }
            let mut alpha = 1.0;
            loop {
                for i in 0..n {
                    self.trial[i] = y[i] + alpha * delta[i];
                }
                let trial = std::mem::take(&mut self.trial);
                let rt = self.residual(&trial, &zprev, dt, t_next, &mut trial_f);
                self.trial = trial;
                let rt = rt?;
                if rt <= (1.0 - ARMIJO * alpha) * r || alpha <= MIN_DAMPING {
                    if !(rt < r) {
                        // No further decrease is possible: the residual sits at its rounding floor.
                        self.f = f;
                        return Err(Error::NonConvergence { iters: iterations, residual: r });
                    }
                    y.copy_from_slice(&self.trial);
                    f.copy_from_slice(&trial_f);
                    r = rt;
                    break;
                }
                alpha *= 0.5;
            }
        }
        self.f = f;
        // `vals` and `pphi` hold the state at the accepted iterate.
        let dissipation: f64 = y.iter().zip(&self.pphi).map(|(a, b)| a * b).sum();
        let s_lp = self.lp_of_values();
        z.copy_from_slice(&y);
        Ok(StepInfo { dissipation, s_lp, iterations, residual: r })
    }

    /// Solves `(Λ⁻¹ + dt·B) δ = -Λ⁻¹F` at the state currently in `vals`.
    fn newton_direction(&mut self, f: &[f64], dt: f64, delta: &mut [f64]) -> Result<()> {
        let n = f.len();
        self.nl.phi_prime_into(&self.vals, &mut self.dphi)?;
        self.domain.cosine_moments(&self.dphi, &mut self.moments, &mut self.ws);
        let w = self.domain.cell_width() / self.domain.length();
        let d = |m: usize| w * self.moments[m];
        let mut a = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            for k in 0..=j {
                let b = d(j - k) - d(j + k + 2);
                let v = dt * b + if j == k { 1.0 / self.lambda[j] } else { 0.0 };
                a[(j, k)] = v;
                a[(k, j)] = v;
            }
        }
        let rhs = DVector::from_iterator(n, f.iter().zip(&self.lambda).map(|(fi, l)| -fi / l));
        match a.cholesky() {
            Some(ch) => {
                let sol = ch.solve(&rhs);
                delta.copy_from_slice(sol.as_slice());
                Ok(())
            }
            // Only reachable when Φ' < 0 somewhere.
            None => self.fixed_point_direction(f, dt, delta),
        }
    }

    fn fixed_point_direction(&mut self, f: &[f64], dt: f64, delta: &mut [f64]) -> Result<()> {
        let r = self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bound = self.nl.phi_prime_bound(r)?;
        for i in 0..f.len() {
            delta[i] = -f[i] / (1.0 + dt * bound * self.lambda[i]);
        }
        Ok(())
    }

    fn explicit(&mut self, z: &mut [f64], t: f64, dt: f64) -> Result<StepInfo> {
        let lam_max = *self.lambda.last().expect("at least one mode");
        let end = t + dt;
        let mut tau = t;
        let mut substeps = 0;
        let mut first = None;
        while tau < end {
            qw_into(self.forcing.path, self.forcing.q, tau, &mut self.q)?;
            self.evaluate_drift(z, tau)?;
            if first.is_none() {
                let dissipation: f64 = z.iter().zip(&self.pphi).map(|(a, b)| a * b).sum();
                first = Some((dissipation, self.lp_of_values()));
            }
            let r = self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let bound = self.nl.phi_prime_bound(r)?;
            let h_max = if bound > 0.0 { self.cfg.substep_safety / (lam_max * bound) } else { f64::INFINITY };
            let remaining = end - tau;
            // Snap onto the macro step end instead of leaving a sliver.
            let h = if h_max >= remaining * (1.0 - 1e-12) { remaining } else { h_max };
            for i in 0..z.len() {
                z[i] -= h * self.lambda[i] * self.pphi[i];
            }
            substeps += 1;
            if substeps > 100_000_000 {
                return Err(Error::NonConvergence { iters: substeps, residual: f64::NAN });
            }
            tau = if h == remaining { end } else { tau + h };
        }
        if z.iter().any(|v| !(v.abs() <= OVERFLOW_LIMIT)) {
            return Err(Error::Overflow { t: end });
        }
        let (dissipation, s_lp) = first.unwrap_or((0.0, 0.0));
        Ok(StepInfo { dissipation, s_lp, iterations: substeps, residual: 0.0 })
    }
}

/// Time grid `t_k = s + k·dt`, with a shorter final step if `t - s` is not a multiple of `dt`.
fn time_grid(s: f64, t: f64, dt: f64) -> Result<Vec<f64>> {
    if !(s.is_finite() && t.is_finite() && s <= t) {
        return Err(Error::invalid(format!("need s ≤ t, got s = {s}, t = {t}")));
    }
    let x = (t - s) / dt;
    let r = x.round();
    let n = if (x - r).abs() <= 1e-9 * r.max(1.0) { r as usize } else { x.ceil() as usize };
    let mut times: Vec<f64> = (0..n).map(|k| s + k as f64 * dt).collect();
    times.push(t);
    Ok(times)
}

/// Time-indexed `Z`-fields of one solve, with the forcing needed to recover `S = Z + QW`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub z: Vec<SpectralField>,
    pub diagnostics: Vec<StepDiagnostics>,
    initial: SpectralField,
    path: WienerPath,
    q: NoiseOperator,
    scheme: Scheme,
    dt: f64,
    p: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Growth exponent of the nonlinearity the trajectory was computed with.
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn path(&self) -> &WienerPath {
        &self.path
    }

    pub fn noise(&self) -> &NoiseOperator {
        &self.q
    }

    pub fn domain(&self) -> &Domain {
        self.q.domain()
    }

    pub fn initial_datum(&self) -> &SpectralField {
        &self.initial
    }

    /// `QW` at the `i`-th stored time.
    pub fn qw_at(&self, i: usize) -> Result<SpectralField> {
        crate::noise::qw(&self.path, &self.q, self.times[i])
    }

    /// `S = Z + QW` at the `i`-th stored time; the initial entry returns the datum itself.
    pub fn s_at(&self, i: usize) -> Result<SpectralField> {
        if i == 0 {
            return Ok(self.initial.clone());
        }
        Ok(&self.z[i] + &self.qw_at(i)?)
    }

    pub fn final_state(&self) -> Result<SpectralField> {
        self.s_at(self.len() - 1)
    }

    /// `max_k |energy residual_k| / (t_k - t_{k-1})` over the stored entries.
    pub fn energy_residual_rate(&self) -> f64 {
        (1..self.len())
            .map(|i| self.diagnostics[i].energy_residual.abs() / (self.times[i] - self.times[i - 1]))
            .fold(0.0, f64::max)
    }

    /// CSV with one row per stored time; floats in shortest round-trip form.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "t,z_h,z_l2,s_lp,energy_residual,iterations,solver_residual")?;
        for (t, d) in self.times.iter().zip(&self.diagnostics) {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                t, d.z_h, d.z_l2, d.s_lp, d.energy_residual, d.iterations, d.solver_residual
            )?;
        }
        Ok(())
    }

    /// Raw `S` snapshots at every `stride`-th stored time, see [`write_snapshots`].
    pub fn write_snapshots(&self, w: &mut impl Write, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        let mut frames = Vec::new();
        for i in (0..self.len()).step_by(stride) {
            frames.push((self.times[i], self.s_at(i)?));
        }
        write_snapshots(w, self.domain(), &frames).map_err(|e| Error::invalid(format!("snapshot write failed: {e}")))
    }
}

/// Binary field snapshots, all little-endian: magic `SPMSNAP1`, `n_modes: u64`, `L: f64`,
/// `count: u64`, then per frame `t: f64` followed by `n_modes` coefficients.
pub fn write_snapshots(w: &mut impl Write, domain: &Domain, frames: &[(f64, SpectralField)]) -> std::io::Result<()> {
    w.write_all(b"SPMSNAP1")?;
    w.write_all(&(domain.n_modes() as u64).to_le_bytes())?;
    w.write_all(&domain.length().to_le_bytes())?;
    w.write_all(&(frames.len() as u64).to_le_bytes())?;
    for (t, f) in frames {
        w.write_all(&t.to_le_bytes())?;
        for c in f.coeffs() {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Inverse of [`write_snapshots`]: `(n_modes, L, frames)`.
pub fn read_snapshots(bytes: &[u8]) -> Result<(usize, f64, Vec<(f64, Vec<f64>)>)> {
    let bad = || Error::invalid("malformed snapshot file");
    let word = |i: usize| -> Result<[u8; 8]> {
        bytes.get(i * 8..i * 8 + 8).and_then(|b| b.try_into().ok()).ok_or_else(bad)
    };
    if word(0)? != *b"SPMSNAP1" {
        return Err(bad());
    }
    let n = u64::from_le_bytes(word(1)?) as usize;
    let length = f64::from_le_bytes(word(2)?);
    let count = u64::from_le_bytes(word(3)?) as usize;
    let mut frames = Vec::with_capacity(count);
    let mut at = 4;
    for _ in 0..count {
        let t = f64::from_le_bytes(word(at)?);
        let coeffs = (0..n).map(|k| Ok(f64::from_le_bytes(word(at + 1 + k)?))).collect::<Result<Vec<_>>>()?;
        frames.push((t, coeffs));
        at += n + 1;
    }
    if at * 8 != bytes.len() {
        return Err(bad());
    }
    Ok((n, length, frames))
}

/// One step of the configured scheme from `Z_k` at `t_k`.
pub fn step(
    z: &SpectralField,
    t: f64,
    cfg: &SolverConfig,
    nl: &Nonlinearity,
    forcing: Forcing<'_>,
) -> Result<SpectralField> {
    check_domain(z, forcing)?;
    let mut stepper = Stepper::new(cfg, nl, forcing)?;
    let mut c = z.coeffs().to_vec();
    stepper.advance(&mut c, t, cfg.dt)?;
    Ok(SpectralField::truncated(z.domain(), &c))
}

fn check_domain(x: &SpectralField, forcing: Forcing<'_>) -> Result<()> {
    if x.domain() != forcing.q.domain() {
        return Err(Error::DomainMismatch);
    }
    Ok(())
}

/// Solves from `Z_s = x - QW_s` to time `t`, storing every step.
pub fn solve(
    x: &SpectralField,
    s: f64,
    t: f64,
    forcing: Forcing<'_>,
    cfg: &SolverConfig,
    nl: &Nonlinearity,
) -> Result<Trajectory> {
    solve_strided(x, s, t, forcing, cfg, nl, 1)
}

/// Like [`solve`] but stores only every `stride`-th step and the final one.
pub fn solve_strided(
    x: &SpectralField,
    s: f64,
    t: f64,
    forcing: Forcing<'_>,
    cfg: &SolverConfig,
    nl: &Nonlinearity,
    stride: usize,
) -> Result<Trajectory> {
    check_domain(x, forcing)?;
    let stride = stride.max(1);
    let grid = time_grid(s, t, cfg.dt)?;
    let mut stepper = Stepper::new(cfg, nl, forcing)?;
    let domain = x.domain().clone();
    let z0 = x - &forcing.qw(s)?;
    let mut z = z0.coeffs().to_vec();
    let p = nl.p();
    let initial_diag = StepDiagnostics {
        z_h: z0.h_norm(),
        z_l2: z0.l2_norm_sq().sqrt(),
        s_lp: x.lp_norm(p + 1.0)?,
        ..Default::default()
    };
    let mut traj = Trajectory {
        times: vec![s],
        z: vec![z0],
        diagnostics: vec![initial_diag],
        initial: x.clone(),
        path: forcing.path.clone(),
        q: forcing.q.clone(),
        scheme: cfg.scheme,
        dt: cfg.dt,
        p,
    };
    let endpoint = cfg.scheme.endpoint();
    let mut pending = StepDiagnostics::default();
    let mut h2 = stepper.h_norm(&z).powi(2);
    for k in 1..grid.len() {
        let (t0, t1) = (grid[k - 1], grid[k]);
        let info = stepper.advance(&mut z, t0, t1 - t0)?;
        let h2_next = stepper.h_norm(&z).powi(2);
        pending.energy_residual += h2_next - h2 + 2.0 * (t1 - t0) * info.dissipation;
        pending.iterations += info.iterations;
        pending.solver_residual = pending.solver_residual.max(info.residual);
        h2 = h2_next;
        if k % stride == 0 || k == grid.len() - 1 {
            let field = SpectralField::truncated(&domain, &z);
            pending.z_h = h2.sqrt();
            pending.z_l2 = field.l2_norm_sq().sqrt();
            pending.s_lp = match endpoint {
                Endpoint::Right => info.s_lp,
                Endpoint::Left => (&field + &forcing.qw(t1)?).lp_norm(p + 1.0)?,
            };
            traj.times.push(t1);
            traj.z.push(field);
            traj.diagnostics.push(pending);
            pending = StepDiagnostics::default();
        }
    }
    Ok(traj)
}

/// `S(t, s, ω)x`, returning `x` itself when `t = s`.
pub fn evolve(
    x: &SpectralField,
    s: f64,
    t: f64,
    forcing: Forcing<'_>,
    cfg: &SolverConfig,
    nl: &Nonlinearity,
) -> Result<SpectralField> {
    check_domain(x, forcing)?;
    let grid = time_grid(s, t, cfg.dt)?;
    if grid.len() == 1 {
        return Ok(x.clone());
    }
    let mut stepper = Stepper::new(cfg, nl, forcing)?;
    let mut z = (x - &forcing.qw(s)?).into_coeffs();
    for k in 1..grid.len() {
        stepper.advance(&mut z, grid[k - 1], grid[k] - grid[k - 1])?;
    }
    Ok(&SpectralField::truncated(x.domain(), &z) + &forcing.qw(t)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CocycleResiduals {
    /// `‖S(t,s)x - S(t,r)S(r,s)x‖_H`
    pub composition: f64,
    /// `‖S(t,s,ω)x - S(t-s,0,θ_s ω)x‖_H`
    pub shift: f64,
}

pub fn check_cocycle(
    x: &SpectralField,
    s: f64,
    r: f64,
    t: f64,
    forcing: Forcing<'_>,
    cfg: &SolverConfig,
    nl: &Nonlinearity,
) -> Result<CocycleResiduals> {
    if !(s <= r && r <= t) {
        return Err(Error::invalid(format!("need s ≤ r ≤ t, got {s}, {r}, {t}")));
    }
    let direct = evolve(x, s, t, forcing, cfg, nl)?;
    let mid = evolve(x, s, r, forcing, cfg, nl)?;
    let composed = evolve(&mid, r, t, forcing, cfg, nl)?;
    let shifted_path = wiener_shift(forcing.path, s)?;
    let shifted = evolve(x, 0.0, t - s, Forcing::new(&shifted_path, forcing.q), cfg, nl)?;
    Ok(CocycleResiduals { composition: direct.h_distance(&composed), shift: direct.h_distance(&shifted) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::Smoothness;
    use std::f64::consts::PI;

    fn setup(n: usize) -> (Domain, WienerPath) {
        (Domain::new(PI, n).unwrap(), WienerPath::new(1, 1, 1e-3, -2.0, 2.0).unwrap())
    }

    #[test]
    fn heat_step_matches_backward_euler_formula() {
        let (d, path) = setup(8);
        let q = NoiseOperator::zero(&d);
        let nl = Nonlinearity::power_law(1.0).unwrap();
        let cfg = SolverConfig { dt: 0.1, ..Default::default() };
        let z = d.basis(1).unwrap().scaled(2.0);
        let next = step(&z, 0.0, &cfg, &nl, Forcing::new(&path, &q)).unwrap();
        assert!((next.coeffs()[0] - 2.0 / 1.1).abs() < 1e-12);
        assert!(next.coeffs()[1..].iter().all(|c| c.abs() < 1e-13));
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let (d, path) = setup(8);
        let q = NoiseOperator::zero(&d);
        let nl = Nonlinearity::power_law(3.0).unwrap();
        for scheme in [Scheme::BackwardEuler, Scheme::ExplicitSubstep] {
            let cfg = SolverConfig { scheme, ..Default::default() };
            let next = step(&d.zero(), 0.0, &cfg, &nl, Forcing::new(&path, &q)).unwrap();
            assert!(next.coeffs().iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn two_half_steps_agree_to_second_order() {
        let (d, path) = setup(16);
        let q = NoiseOperator::zero(&d);
        let nl = Nonlinearity::power_law(3.0).unwrap();
        let x = d.field((1..=16).map(|k| 1.0 / (k * k) as f64).collect()).unwrap();
        let f = Forcing::new(&path, &q);
        let mut gaps = Vec::new();
        for dt in [4e-3, 2e-3, 1e-3] {
            let cfg = SolverConfig { dt, ..Default::default() };
            let half = SolverConfig { dt: dt / 2.0, ..Default::default() };
            let one = step(&x, 0.0, &cfg, &nl, f).unwrap();
            let two = step(&step(&x, 0.0, &half, &nl, f).unwrap(), dt / 2.0, &half, &nl, f).unwrap();
            gaps.push(one.h_distance(&two));
        }
        // Local error of backward Euler is O(dt²): halving dt should quarter the gap.
        for w in gaps.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 3.0 && ratio < 5.0, "gaps {gaps:?}");
        }
    }

    #[test]
    fn newton_and_fixed_point_agree() {
        let (d, path) = setup(8);
        let q = NoiseOperator::modal(&d, &[1, 2], vec![1.0, 0.5], Smoothness::C2).unwrap();
        let path2 = WienerPath::new(3, 2, 1e-3, -1.0, 1.0).unwrap();
        let _ = path;
        let nl = Nonlinearity::power_law(3.0).unwrap();
        let x = d.field(vec![1.0, -0.5, 0.25, 0.0, 0.1, 0.0, 0.0, 0.0]).unwrap();
        let newton = SolverConfig { dt: 1e-2, ..Default::default() };
        let fixed = SolverConfig { solver: NonlinearSolver::FixedPoint, max_iters: 10_000, ..newton.clone() };
        let f = Forcing::new(&path2, &q);
        let a = step(&x, 0.0, &newton, &nl, f).unwrap();
        let b = step(&x, 0.0, &fixed, &nl, f).unwrap();
        assert!(a.h_distance(&b) < 1e-9);
    }

    #[test]
    fn explicit_and_implicit_agree_on_short_runs() {
        let (d, path) = setup(8);
        let q = NoiseOperator::zero(&d);
        let nl = Nonlinearity::power_law(3.0).unwrap();
        let x = d.field(vec![1.0, 0.3, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let f = Forcing::new(&path, &q);
        let be = SolverConfig { dt: 1e-4, ..Default::default() };
        let ex = SolverConfig { scheme: Scheme::ExplicitSubstep, ..be.clone() };
        let a = evolve(&x, 0.0, 0.1, f, &be, &nl).unwrap();
        let b = evolve(&x, 0.0, 0.1, f, &ex, &nl).unwrap();
        assert!(a.h_distance(&b) < 1e-4 * x.h_norm(), "{}", a.h_distance(&b));
    }

    #[test]
    fn trivial_solve_and_cocycle_identities() {
        let (d, path) = setup(8);
        let q = NoiseOperator::modal(&d, &[1], vec![1.0], Smoothness::C2).unwrap();
        let nl = Nonlinearity::power_law(3.0).unwrap();
        let cfg = SolverConfig { dt: 1e-2, ..Default::default() };
        let f = Forcing::new(&path, &q);
        let x = d.basis(2).unwrap();
        let traj = solve(&x, 0.5, 0.5, f, &cfg, &nl).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.z[0], &x - &f.qw(0.5).unwrap());
        assert_eq!(traj.final_state().unwrap(), x);
        let res = check_cocycle(&x, -0.5, -0.5, 0.3, f, &cfg, &nl).unwrap();
        assert_eq!(res.composition, 0.0);
        let res = check_cocycle(&x, 0.0, 0.2, 0.3, f, &cfg, &nl).unwrap();
        assert_eq!(res.shift, 0.0);
    }

    #[test]
    fn energy_residual_is_second_order_for_backward_euler() {
        let (d, path) = setup(8);
        let q = NoiseOperator::zero(&d);
        let nl = Nonlinearity::power_law(3.0).unwrap();
        let x = d.field(vec![1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let f = Forcing::new(&path, &q);
        let rate = |dt: f64| {
            let cfg = SolverConfig { dt, ..Default::default() };
            solve(&x, 0.0, 0.5, f, &cfg, &nl).unwrap().energy_residual_rate()
        };
        let (a, b) = (rate(1e-2), rate(5e-3));
        assert!(a > 0.0 && b < 0.6 * a, "{a} {b}");
    }

    #[test]
    fn csv_and_snapshots_round_trip() {
        let (d, path) = setup(4);
        let q = NoiseOperator::zero(&d);
        let nl = Nonlinearity::power_law(3.0).unwrap();
        let cfg = SolverConfig { dt: 0.1, ..Default::default() };
        let x = d.basis(1).unwrap();
        let traj = solve(&x, 0.0, 0.3, Forcing::new(&path, &q), &cfg, &nl).unwrap();
        let mut csv = Vec::new();
        traj.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 5);
        let mut bin = Vec::new();
        traj.write_snapshots(&mut bin, 2).unwrap();
        let (n, l, frames) = read_snapshots(&bin).unwrap();
        assert_eq!((n, l, frames.len()), (4, PI, 2));
        assert_eq!(frames[1].1, traj.s_at(2).unwrap().coeffs());
    }

    #[test]
    fn uneven_final_step_lands_on_t() {
        let g = time_grid(0.0, 0.25, 0.1).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(*g.last().unwrap(), 0.25);
        assert!(time_grid(1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig { dt: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { substep_safety: 1.5, ..Default::default() }.validate().is_err());
        assert!(SolverConfig::default().validate().is_ok());
    }
}
