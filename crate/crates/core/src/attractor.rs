//! Pullback experiments: contraction bounds, ensemble diameters, the single-point
//! attractor `η_t(ω) = lim_{s→-∞} S(t, s, ω)x`, its law, and absorption radii.
//!
//! All ensembles run in parallel and are collected in input order, so results do
//! not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{Certificate, Hypothesis};
use crate::domain::{Domain, SpectralField};
use crate::error::{Error, Result};
use crate::integrator::{evolve, solve_strided, Forcing, SolverConfig};
use crate::noise::{keyed_normal, NoiseOperator, WienerPath};
use crate::nonlinearity::Nonlinearity;

/// RNG channel reserved for sampling initial conditions, away from noise channels.
const IC_CHANNEL: u64 = u64::MAX - 1;

/// The strong-monotonicity constant `η`, taken from a passed grid certificate for `nl`.
pub fn certified_eta(cert: &Certificate, nl: &Nonlinearity) -> Result<f64> {
    if cert.hypothesis != Hypothesis::StrongMono51 {
        return Err(Error::Uncertified(format!(
            "contraction bounds need a strong-monotonicity certificate, got {}",
            cert.hypothesis
        )));
    }
    if cert.nonlinearity != nl.info() {
        return Err(Error::Uncertified(format!(
            "certificate is for {:?}, not {}",
            cert.nonlinearity.kind,
            nl.label()
        )));
    }
    cert.require()?;
    cert.constant("eta").ok_or_else(|| Error::Uncertified("certificate has no η".into()))
}

/// Rate `η λ₁^{(p+1)/2} (p - 1)` shared by the statement and the proof (`η̃/2 · (p - 1)`).
pub fn contraction_rate(eta: f64, lambda1: f64, p: f64) -> f64 {
    eta * lambda1.powf(0.5 * (p + 1.0)) * (p - 1.0)
}

/// `{d₀^{1-p} + K τ}^{-2/(p-1)}`; with `d₀ = ∞` this is the data-free bound `(K τ)^{-2/(p-1)}`.
pub fn contraction_bound(d0: f64, rate: f64, tau: f64, p: f64) -> f64 {
    let base = if d0.is_infinite() { 0.0 } else { d0.powf(1.0 - p) };
    (base + rate * tau).powf(-2.0 / (p - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionOptions {
    pub slack: f64,
    /// Store every `stride`-th step.
    pub stride: usize,
    /// The log-log slope is fitted on `τ ≥ fit_from` with `distance² > fit_floor`.
    pub fit_from: f64,
    pub fit_floor: f64,
}

impl Default for ContractionOptions {
    fn default() -> Self {
        Self { slack: 0.05, stride: 10, fit_from: 1.0, fit_floor: 1e-20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionRow {
    pub t: f64,
    pub tau: f64,
    pub dist_sq: f64,
    pub bound_data: f64,
    pub bound_free: f64,
    pub bound_holder: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub eta: f64,
    pub lambda1: f64,
    pub p: f64,
    /// `η λ₁^{(p+1)/2}(p-1)`
    pub rate_statement: f64,
    /// `(η̃/2)(p-1)` with `η̃ = 2ηλ₁^{(p+1)/2}`
    pub rate_proof: f64,
    /// `rate_statement·|Λ|^{-(p-1)/2}`, from `‖u‖_{p+1}^{p+1} ≥ λ₁^{(p+1)/2}|Λ|^{-(p-1)/2}‖u‖_H^{p+1}` (Hölder).
    pub rate_holder: f64,
    /// `‖S(s₂, s₁)x - y‖_H`
    pub initial_distance: f64,
    pub rows: Vec<ContractionRow>,
    pub slack: f64,
    pub violations_data: usize,
    pub violations_free: usize,
    /// `max dist² / bound` over rows with `τ > 0`.
    pub worst_ratio_data: f64,
    pub worst_ratio_free: f64,
    /// Data-free bound with `rate_holder`.
    pub violations_holder: usize,
    pub worst_ratio_holder: f64,
    /// Least-squares slope of `log dist²` against `log τ`.
    pub slope: Option<f64>,
}

impl ContractionReport {
    pub fn passed(&self) -> bool {
        self.violations_data == 0 && self.violations_free == 0
    }
}

/// Distances `‖S(t, s₁)x - S(t, s₂)y‖_H²` on `[s₂, t]` against both contraction bounds.
#[allow(clippy::too_many_arguments)]
pub fn contraction_check(
    x: &SpectralField,
    y: &SpectralField,
    s1: f64,
    s2: f64,
    t: f64,
    forcing: Forcing<'_>,
    cfg: &SolverConfig,
    nl: &Nonlinearity,
    cert: &Certificate,
    opts: &ContractionOptions,
) -> Result<ContractionReport> {
    let eta = certified_eta(cert, nl)?;
    let p = nl.p();
    if p <= 1.0 {
        return Err(Error::Uncertified(format!("contraction needs p > 1, got p = {p}")));
    }
    if !(s1 <= s2 && s2 < t) {
        return Err(Error::invalid(format!("need s₁ ≤ s₂ < t, got {s1}, {s2}, {t}")));
    }
    let x2 = evolve(x, s1, s2, forcing, cfg, nl)?;
    let (a, b) = rayon::join(
        || solve_strided(&x2, s2, t, forcing, cfg, nl, opts.stride),
        || solve_strided(y, s2, t, forcing, cfg, nl, opts.stride),
    );
    let (a, b) = (a?, b?);
    let lambda1 = x.domain().poincare_lambda1();
    let rate = contraction_rate(eta, lambda1, p);
    let rate_holder = rate * x.domain().length().powf(-0.5 * (p - 1.0));
    let d0 = x2.h_distance(y);
    let mut rows = Vec::with_capacity(a.len());
    for i in 0..a.len() {
        // Z-fields share QW, so the S-difference is the Z-difference.
        let dist_sq = if i == 0 { d0 * d0 } else { a.z[i].h_distance(&b.z[i]).powi(2) };
        let tau = a.times[i] - s2;
        rows.push(ContractionRow {
            t: a.times[i],
            tau,
            dist_sq,
            bound_data: contraction_bound(d0, rate, tau, p),
            bound_free: contraction_bound(f64::INFINITY, rate, tau, p),
            bound_holder: contraction_bound(f64::INFINITY, rate_holder, tau, p),
        });
    }
    let mut report = ContractionReport {
        eta,
        lambda1,
        p,
        rate_statement: rate,
        rate_proof: (eta * lambda1.powf(0.5 * (p + 1.0))) * (p - 1.0),
        rate_holder,
        initial_distance: d0,
        rows,
        slack: opts.slack,
        violations_data: 0,
        violations_free: 0,
        worst_ratio_data: 0.0,
        worst_ratio_free: 0.0,
        violations_holder: 0,
        worst_ratio_holder: 0.0,
        slope: None,
    };
    for r in report.rows.iter().filter(|r| r.tau > 0.0) {
        let (rd, rf) = (r.dist_sq / r.bound_data, r.dist_sq / r.bound_free);
        let rd = if r.dist_sq == 0.0 { 0.0 } else { rd };
        report.worst_ratio_data = report.worst_ratio_data.max(rd);
        report.worst_ratio_free = report.worst_ratio_free.max(rf);
        if !(rd <= 1.0 + opts.slack) {
            report.violations_data += 1;
        }
        if !(rf <= 1.0 + opts.slack) {
            report.violations_free += 1;
        }
        let rh = r.dist_sq / r.bound_holder;
        report.worst_ratio_holder = report.worst_ratio_holder.max(rh);
        if !(rh <= 1.0 + opts.slack) {
            report.violations_holder += 1;
        }
    }
    let pts: Vec<(f64, f64)> = report
        .rows
        .iter()
        .filter(|r| r.tau >= opts.fit_from && r.dist_sq > opts.fit_floor)
        .map(|r| (r.tau.ln(), r.dist_sq.ln()))
        .collect();
    report.slope = least_squares_slope(&pts);
    Ok(report)
}

fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `max_{i<j} ‖a_i - a_j‖_H`.
pub fn h_diameter(states: &[SpectralField]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..states.len() {
        for j in i + 1..states.len() {
            d = d.max(states[i].h_distance(&states[j]));
        }
    }
    d
}

/// `S(t, t - T, ω)x` for every `x`, in parallel.
fn pullback_states(
    xs: &[SpectralField],
    t: f64,
    horizon: f64,
    forcing: Forcing<'_>,
    cfg: &SolverConfig,
    nl: &Nonlinearity,
) -> Result<Vec<SpectralField>> {
    xs.par_iter().map(|x| evolve(x, t - horizon, t, forcing, cfg, nl)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub horizon: f64,
    /// `max_x ‖S(0, -T)x‖₂`, the compact-absorption radius estimate.
    pub max_l2: f64,
    pub diameter: f64,
    /// Pairwise `‖·‖_H` distances in `(i, j)` order with `i < j`.
    pub pairwise: Vec<f64>,
    /// Data-free contraction bound on the squared diameter, when certified.
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullbackReport {
    pub rows: Vec<HorizonRow>,
    /// Ensemble mean at the longest horizon.
    pub eta0_estimate: Vec<f64>,
    pub eta_51: Option<f64>,
    /// Diameters nonincreasing in `T` up to `tolerance`.
    pub diameter_monotone: bool,
    pub tolerance: f64,
}

/// Runs `S(0, -T, ω)x` for every `x` and `T` on one path.
///
/// Without a certificate the contraction bound is omitted; diameters are still reported.
pub fn pullback_ensemble(
    xs: &[SpectralField],
    horizons: &[f64],
    forcing: Forcing<'_>,
    cfg: &SolverConfig,
    nl: &Nonlinearity,
    cert: Option<&Certificate>,
) -> Result<PullbackReport> {
    if xs.is_empty() || horizons.is_empty() {
        return Err(Error::invalid("need at least one initial condition and one horizon"));
    }
    if horizons.windows(2).any(|w| w[1] <= w[0]) || horizons[0] < 0.0 {
        return Err(Error::invalid("horizons must be nonnegative and increasing"));
    }
    forcing.path.check_window(-horizons[horizons.len() - 1])?;
    let eta = cert.map(|c| certified_eta(c, nl)).transpose()?;
    let p = nl.p();
    let lambda1 = xs[0].domain().poincare_lambda1();
    let jobs: Vec<(usize, usize)> = (0..horizons.len()).flat_map(|h| (0..xs.len()).map(move |i| (h, i))).collect();
    let states: Vec<SpectralField> = jobs
        .par_iter()
        .map(|&(h, i)| evolve(&xs[i], -horizons[h], 0.0, forcing, cfg, nl))
        .collect::<Result<_>>()?;
    let n = xs.len();
    let mut rows = Vec::with_capacity(horizons.len());
    for (h, &horizon) in horizons.iter().enumerate() {
        let group = &states[h * n..(h + 1) * n];
        let mut pairwise = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                pairwise.push(group[i].h_distance(&group[j]));
            }
        }
        rows.push(HorizonRow {
            horizon,
            max_l2: group.iter().map(|s| s.l2_norm_sq().sqrt()).fold(0.0, f64::max),
            diameter: pairwise.iter().copied().fold(0.0, f64::max),
            pairwise,
            bound: eta.map(|e| contraction_bound(f64::INFINITY, contraction_rate(e, lambda1, p), horizon, p)),
        });
    }
    let tolerance = 10.0 * cfg.nonlinear_tol;
    // Guaranteed only for Q = 0 or linear Φ; with noise the pullback states start from shifted paths.
    let diameter_monotone = rows.windows(2).all(|w| w[1].diameter <= w[0].diameter + tolerance);
    Ok(PullbackReport {
        eta0_estimate: mean(&states[(horizons.len() - 1) * n..]).into_coeffs(),
        rows,
        eta_51: eta,
        diameter_monotone,
        tolerance,
    })
}

fn mean(states: &[SpectralField]) -> SpectralField {
    let mut m = states[0].domain().zero();
    for s in states {
        m.axpy(1.0 / states.len() as f64, s);
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublingRow {
    pub horizon: f64,
    /// `max_x ‖S(t, t-2T)x - S(t, t-T)x‖_H`, recorded at the doubled horizon.
    pub change: f64,
    pub diameter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub t: f64,
    /// Coefficients of the ensemble mean at the final horizon.
    pub eta: Vec<f64>,
    /// Per-initial-condition states at the final horizon.
    pub per_ic: Vec<Vec<f64>>,
    pub table: Vec<DoublingRow>,
    pub horizon: f64,
    pub diameter: f64,
    pub tol: f64,
    /// `diameter < max(tol, 10·nonlinear_tol)`
    pub singleton: bool,
}

impl EtaEstimate {
    pub fn field(&self, domain: &Domain) -> Result<SpectralField> {
        domain.field(self.eta.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublingOptions {
    pub initial_horizon: f64,
    pub max_horizon: f64,
}

/// Doubles `T` until `‖S(t, t-2T)x - S(t, t-T)x‖_H < tol` for every `x`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_eta(
    t: f64,
    xs: &[SpectralField],
    forcing: Forcing<'_>,
    cfg: &SolverConfig,
    nl: &Nonlinearity,
    cert: &Certificate,
    tol: f64,
    opts: &DoublingOptions,
) -> Result<EtaEstimate> {
    certified_eta(cert, nl)?;
    if xs.is_empty() {
        return Err(Error::invalid("need at least one initial condition"));
    }
    if !(tol > 0.0) || !(opts.initial_horizon > 0.0) || opts.max_horizon < opts.initial_horizon {
        return Err(Error::invalid("need tol > 0 and 0 < initial_horizon ≤ max_horizon"));
    }
    let mut horizon = opts.initial_horizon;
    forcing.path.check_window(t - horizon)?;
    let mut prev = pullback_states(xs, t, horizon, forcing, cfg, nl)?;
    let mut table = Vec::new();
    loop {
        let next_h = 2.0 * horizon;
        if next_h > opts.max_horizon {
            return Err(Error::NonConvergence { iters: table.len(), residual: table.last().map_or(f64::INFINITY, |r: &DoublingRow| r.change) });
        }
        forcing.path.check_window(t - next_h)?;
        let next = pullback_states(xs, t, next_h, forcing, cfg, nl)?;
        let change = prev.iter().zip(&next).map(|(a, b)| a.h_distance(b)).fold(0.0, f64::max);
        let diameter = h_diameter(&next);
        table.push(DoublingRow { horizon: next_h, change, diameter });
        horizon = next_h;
        prev = next;
        if change < tol {
            break;
        }
    }
    let diameter = h_diameter(&prev);
    Ok(EtaEstimate {
        t,
        eta: mean(&prev).into_coeffs(),
        per_ic: prev.iter().map(|s| s.coeffs().to_vec()).collect(),
        table,
        horizon,
        diameter,
        tol,
        singleton: diameter < tol.max(10.0 * cfg.nonlinear_tol),
    })
}

pub fn estimate_eta0(
    xs: &[SpectralField],
    forcing: Forcing<'_>,
    cfg: &SolverConfig,
    nl: &Nonlinearity,
    cert: &Certificate,
    tol: f64,
    opts: &DoublingOptions,
) -> Result<EtaEstimate> {
    estimate_eta(0.0, xs, forcing, cfg, nl, cert, tol, opts)
}

/// `‖S(t, 0, ω)η₀ - η_t‖_H`: the attractor moves with the shift.
pub fn invariance_defect(
    eta0: &SpectralField,
    eta_t: &SpectralField,
    t: f64,
    forcing: Forcing<'_>,
    cfg: &SolverConfig,
    nl: &Nonlinearity,
) -> Result<f64> {
    Ok(evolve(eta0, 0.0, t, forcing, cfg, nl)?.h_distance(eta_t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    L2Norm,
    HNorm,
    /// Coefficient of `e_k`, 1-based.
    Coefficient(usize),
}

impl Functional {
    pub fn eval(&self, f: &SpectralField) -> Result<f64> {
        match *self {
            Functional::L2Norm => Ok(f.l2_norm_sq().sqrt()),
            Functional::HNorm => Ok(f.h_norm()),
            Functional::Coefficient(k) => f
                .coeffs()
                .get(k.wrapping_sub(1))
                .copied()
                .ok_or_else(|| Error::invalid(format!("mode {k} outside 1..={}", f.coeffs().len()))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Functional::L2Norm => "l2_norm".into(),
            Functional::HNorm => "h_norm".into(),
            Functional::Coefficient(k) => format!("coeff_{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSample {
    pub seed: u64,
    pub converged: bool,
    pub values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSample {
    pub functionals: Vec<String>,
    pub samples: Vec<SeedSample>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub failures: usize,
}

/// Which path and initial conditions to use for one seed.
pub struct SeedSetup<'a> {
    pub path: &'a (dyn Fn(u64) -> Result<WienerPath> + Sync),
    pub q: &'a NoiseOperator,
    pub xs: &'a [SpectralField],
}

/// Monte-Carlo sample of `η₀(ω)` over seeds; non-converging seeds are counted and excluded.
#[allow(clippy::too_many_arguments)]
pub fn sample_invariant_measure(
    seeds: &[u64],
    setup: &SeedSetup<'_>,
    cfg: &SolverConfig,
    nl: &Nonlinearity,
    cert: &Certificate,
    tol: f64,
    opts: &DoublingOptions,
    functionals: &[Functional],
) -> Result<MeasureSample> {
    certified_eta(cert, nl)?;
    let domain = setup.q.domain().clone();
    let samples: Vec<SeedSample> = seeds
        .par_iter()
        .map(|&seed| {
            let run = || -> Result<Vec<f64>> {
                let path = (setup.path)(seed)?;
                let est = estimate_eta0(setup.xs, Forcing::new(&path, setup.q), cfg, nl, cert, tol, opts)?;
                let f = est.field(&domain)?;
                functionals.iter().map(|g| g.eval(&f)).collect()
            };
            match run() {
                Ok(values) => SeedSample { seed, converged: true, values, error: None },
                Err(e) => SeedSample { seed, converged: false, values: Vec::new(), error: Some(e.to_string()) },
            }
        })
        .collect();
    let ok: Vec<&SeedSample> = samples.iter().filter(|s| s.converged).collect();
    let k = functionals.len();
    let mut means = vec![f64::NAN; k];
    let mut variances = vec![f64::NAN; k];
    if !ok.is_empty() {
        let n = ok.len() as f64;
        for j in 0..k {
            let m = ok.iter().map(|s| s.values[j]).sum::<f64>() / n;
            means[j] = m;
            variances[j] = ok.iter().map(|s| (s.values[j] - m).powi(2)).sum::<f64>() / n;
        }
    }
    Ok(MeasureSample {
        functionals: functionals.iter().map(Functional::name).collect(),
        failures: samples.len() - ok.len(),
        samples,
        means,
        variances,
    })
}

/// Random field `Σ_{k ≤ modes} g_k e_k / k` with keyed normals `g_k`, rescaled to `‖x‖_H = radius`.
pub fn random_low_mode_field(domain: &Domain, seed: u64, modes: usize, radius: f64) -> Result<SpectralField> {
    if modes == 0 || modes > domain.n_modes() {
        return Err(Error::invalid(format!("modes must lie in 1..={}", domain.n_modes())));
    }
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(Error::invalid(format!("radius must be nonnegative, got {radius}")));
    }
    let mut c = vec![0.0; domain.n_modes()];
    for (k, ck) in c.iter_mut().enumerate().take(modes) {
        *ck = keyed_normal(seed, IC_CHANNEL, k as i64) / (k + 1) as f64;
    }
    let f = domain.field(c)?;
    let norm = f.h_norm();
    if norm == 0.0 {
        return Ok(f);
    }
    Ok(f.scaled(radius / norm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionRow {
    pub rho: f64,
    pub seed: u64,
    /// Entry horizon of the ball `B_ρ`: the largest `ic_entry_horizon` over this seed's ICs with `‖x‖_H ≤ ρ`.
    pub entry_horizon: f64,
    /// Smallest horizon after which `‖S(0, -T)x‖₂` stays within the band around the radius, for this IC alone.
    pub ic_entry_horizon: f64,
    /// `‖S(0, -T_max)x‖₂`, the stabilized radius estimate of `κ(ω)`.
    pub radius: f64,
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionOptions {
    /// Horizons `0, T₀, 2T₀, 4T₀, …, ≤ T_max`.
    pub initial_horizon: f64,
    pub max_horizon: f64,
    /// Relative band defining "stays in the stabilized ball".
    pub band: f64,
    pub modes: usize,
}

impl AbsorptionOptions {
    pub fn horizons(&self) -> Vec<f64> {
        let mut h = vec![0.0];
        let mut t = self.initial_horizon;
        while t <= self.max_horizon * (1.0 + 1e-12) {
            h.push(t);
            t *= 2.0;
        }
        h
    }
}

/// Entry horizons and stabilized L² radii per `(ρ, seed)`; the IC direction depends on the seed only.
pub fn absorption_radius(
    rhos: &[f64],
    seeds: &[u64],
    setup_path: &(dyn Fn(u64) -> Result<WienerPath> + Sync),
    q: &NoiseOperator,
    cfg: &SolverConfig,
    nl: &Nonlinearity,
    opts: &AbsorptionOptions,
) -> Result<Vec<AbsorptionRow>> {
    if !(opts.initial_horizon > 0.0 && opts.max_horizon >= opts.initial_horizon && opts.band > 0.0) {
        return Err(Error::invalid("need 0 < initial_horizon ≤ max_horizon and band > 0"));
    }
    let horizons = opts.horizons();
    let domain = q.domain().clone();
    let jobs: Vec<(f64, u64)> = rhos.iter().flat_map(|&r| seeds.iter().map(move |&s| (r, s))).collect();
    jobs.par_iter()
        .map(|&(rho, seed)| {
            let path = setup_path(seed)?;
            let forcing = Forcing::new(&path, q);
            let x = random_low_mode_field(&domain, seed, opts.modes, rho)?;
            let radii = horizons
                .iter()
                .map(|&h| Ok(evolve(&x, -h, 0.0, forcing, cfg, nl)?.l2_norm_sq().sqrt()))
                .collect::<Result<Vec<f64>>>()?;
            let radius = *radii.last().unwrap_or(&0.0);
            let inside = |r: f64| (r - radius).abs() <= opts.band * radius + 10.0 * cfg.nonlinear_tol;
            let mut entry = horizons.len() - 1;
            while entry > 0 && inside(radii[entry - 1]) {
                entry -= 1;
            }
            Ok(AbsorptionRow { rho, seed, entry_horizon: horizons[entry], ic_entry_horizon: horizons[entry], radius, radii })
        })
        .collect::<Result<Vec<_>>>()
        .map(|mut rows| {
            let raw: Vec<(f64, u64, f64)> = rows.iter().map(|r| (r.rho, r.seed, r.ic_entry_horizon)).collect();
            for r in &mut rows {
                r.entry_horizon = raw
                    .iter()
                    .filter(|&&(rho, seed, _)| seed == r.seed && rho <= r.rho)
                    .map(|&(_, _, e)| e)
                    .fold(0.0, f64::max);
            }
            rows
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::certify;
    use crate::noise::Smoothness;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    struct Setup {
        d: Domain,
        nl: Nonlinearity,
        cert: Certificate,
        cfg: SolverConfig,
        q: NoiseOperator,
    }

    fn setup(amp: f64) -> Setup {
        let d = Domain::new(PI, 16).unwrap();
        let nl = Nonlinearity::power_law(3.0).unwrap();
        let cert = certify(&nl, Hypothesis::StrongMono51, 10.0, 1e-3).unwrap();
        let cfg = SolverConfig { dt: 2e-2, ..Default::default() };
        let q = if amp == 0.0 {
            NoiseOperator::zero(&d)
        } else {
            NoiseOperator::modal(&d, &[1, 2], vec![amp, amp / 2.0], Smoothness::C2).unwrap()
        };
        Setup { d, nl, cert, cfg, q }
    }

    #[test]
    fn bound_formula() {
        let (rate, p) = (0.7, 3.0);
        // p = 3: 1 / (d₀^{-2} + K τ).
        for (d0, tau) in [(1.0, 0.0), (2.0, 1.5), (0.3, 10.0)] {
            assert_relative_eq!(contraction_bound(d0, rate, tau, p), 1.0 / (d0.powi(-2) + rate * tau), max_relative = 1e-14);
            assert!(contraction_bound(d0, rate, tau, p) <= contraction_bound(f64::INFINITY, rate, tau, p));
        }
        assert_relative_eq!(contraction_bound(f64::INFINITY, 2.0, 4.0, 2.0), 1.0 / 64.0, max_relative = 1e-14);
        // η = 1/4 for the cube: K = λ₁² · 2 · η = 1/2.
        assert_relative_eq!(contraction_rate(0.25, 1.0, 3.0), 0.5);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (1..20).map(|i| {
            let t = i as f64;
            (t.ln(), (3.0 * t.powf(-1.5)).ln())
        }).collect();
        assert_relative_eq!(least_squares_slope(&pts).unwrap(), -1.5, epsilon = 1e-12);
        assert!(least_squares_slope(&pts[..2]).is_none());
    }

    #[test]
    fn identical_data_have_zero_distance() {
        let s = setup(1.0);
        let path = WienerPath::new(3, 2, 1e-3, -6.0, 1.0).unwrap();
        let x = random_low_mode_field(&s.d, 1, 4, 1.0).unwrap();
        let opts = ContractionOptions::default();
        let r = contraction_check(&x, &x, -5.0, -5.0, 0.0, Forcing::new(&path, &s.q), &s.cfg, &s.nl, &s.cert, &opts).unwrap();
        assert!(r.rows.iter().all(|row| row.dist_sq == 0.0));
        assert!(r.passed());
        assert!(r.slope.is_none());
    }

    #[test]
    fn stated_bound_misses_domain_factor_without_noise() {
        // u(t) = -v(t) for odd data, so the stated data-free bound is tested on the first mode directly.
        let s = setup(0.0);
        let path = WienerPath::new(0, 2, 1e-3, -21.0, 1.0).unwrap();
        let x = s.d.basis(1).unwrap().scaled(2.0);
        let opts = ContractionOptions::default();
        let r = contraction_check(&x, &x.scaled(-1.0), -20.0, -20.0, 0.0, Forcing::new(&path, &s.q), &s.cfg, &s.nl, &s.cert, &opts).unwrap();
        assert!(r.worst_ratio_free > 1.05, "worst ratio {}", r.worst_ratio_free);
        assert_eq!(r.violations_holder, 0, "worst Hölder ratio {}", r.worst_ratio_holder);
        assert_relative_eq!(r.rate_holder, r.rate_statement / PI, max_relative = 1e-14);
    }

    #[test]
    fn dead_zone_is_refused() {
        let s = setup(1.0);
        let dz = Nonlinearity::dead_zone_cubic(1.0).unwrap();
        let cert = certify(&dz, Hypothesis::StrongMono51, 10.0, 1e-3).unwrap();
        assert!(!cert.passed);
        let path = WienerPath::new(0, 2, 1e-3, -5.0, 1.0).unwrap();
        let xs = vec![s.d.basis(1).unwrap()];
        let opts = DoublingOptions { initial_horizon: 1.0, max_horizon: 4.0 };
        let err = estimate_eta0(&xs, Forcing::new(&path, &s.q), &s.cfg, &dz, &cert, 1e-3, &opts).unwrap_err();
        assert!(matches!(err, Error::Uncertified(_)));
        // A cube certificate does not transfer either.
        let err = estimate_eta0(&xs, Forcing::new(&path, &s.q), &s.cfg, &dz, &s.cert, 1e-3, &opts).unwrap_err();
        assert!(matches!(err, Error::Uncertified(_)));
        let pr = pullback_ensemble(&xs, &[0.0, 1.0], Forcing::new(&path, &s.q), &s.cfg, &dz, Some(&cert));
        assert!(matches!(pr, Err(Error::Uncertified(_))));
    }

    #[test]
    fn zero_horizon_reports_initial_diameter() {
        let s = setup(1.0);
        let path = WienerPath::new(0, 2, 1e-3, -3.0, 1.0).unwrap();
        let xs: Vec<_> = (0..3).map(|i| random_low_mode_field(&s.d, i, 4, 1.0).unwrap()).collect();
        let r = pullback_ensemble(&xs, &[0.0, 1.0, 2.0], Forcing::new(&path, &s.q), &s.cfg, &s.nl, None).unwrap();
        assert_relative_eq!(r.rows[0].diameter, h_diameter(&xs), max_relative = 1e-14);
        assert!(r.rows.iter().all(|row| row.diameter <= r.rows[0].diameter));
        assert!(r.rows[0].bound.is_none());
        assert_eq!(r.rows[0].pairwise.len(), 3);
    }

    #[test]
    fn diameter_monotone_when_autonomous_or_linear() {
        let horizons = [0.0, 0.5, 1.0, 2.0, 4.0];
        let s = setup(0.0);
        let path = WienerPath::new(0, 2, 1e-3, -5.0, 1.0).unwrap();
        let xs: Vec<_> = (0..3).map(|i| random_low_mode_field(&s.d, i, 4, 1.0).unwrap()).collect();
        let r = pullback_ensemble(&xs, &horizons, Forcing::new(&path, &s.q), &s.cfg, &s.nl, Some(&s.cert)).unwrap();
        assert!(r.diameter_monotone);
        assert!(r.rows.windows(2).all(|w| w[1].bound.unwrap() < w[0].bound.unwrap()));
        // Linear Φ with noise: differences evolve by the heat semigroup alone.
        let noisy = setup(1.0);
        let heat = Nonlinearity::power_law(1.0).unwrap();
        let r = pullback_ensemble(&xs, &horizons, Forcing::new(&path, &noisy.q), &s.cfg, &heat, None).unwrap();
        assert!(r.diameter_monotone);
    }

    #[test]
    fn singleton_with_noise_is_ic_independent() {
        let s = setup(1.0);
        let path = WienerPath::new(5, 2, 1e-3, -300.0, 2.0).unwrap();
        let f = Forcing::new(&path, &s.q);
        let xs: Vec<_> = (0..3).map(|i| random_low_mode_field(&s.d, 10 + i, 4, 1.0).unwrap()).collect();
        let opts = DoublingOptions { initial_horizon: 1.0, max_horizon: 256.0 };
        let a = estimate_eta0(&xs, f, &s.cfg, &s.nl, &s.cert, 1e-5, &opts).unwrap();
        assert!(a.singleton, "diameter {}", a.diameter);
        let b = estimate_eta0(&xs[1..], f, &s.cfg, &s.nl, &s.cert, 1e-5, &opts).unwrap();
        let (fa, fb) = (a.field(&s.d).unwrap(), b.field(&s.d).unwrap());
        assert!(fa.h_distance(&fb) < 1e-4);
        assert!(fa.h_norm() > 1e-3, "noise should keep the attractor away from 0");
        let e1 = estimate_eta(1.0, &xs, f, &s.cfg, &s.nl, &s.cert, 1e-5, &opts).unwrap();
        let defect = invariance_defect(&fa, &e1.field(&s.d).unwrap(), 1.0, f, &s.cfg, &s.nl).unwrap();
        assert!(defect < 1e-4, "defect {defect}");
        // Rerun is bitwise identical.
        let again = estimate_eta0(&xs, f, &s.cfg, &s.nl, &s.cert, 1e-5, &opts).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn without_noise_the_attractor_is_zero() {
        let mut s = setup(0.0);
        s.cfg.dt = 0.1;
        let path = WienerPath::new(0, 1, 0.1, -5000.0, 1.0).unwrap();
        let f = Forcing::new(&path, &s.q);
        let xs: Vec<_> = (0..3).map(|i| random_low_mode_field(&s.d, 20 + i, 4, 1.0).unwrap()).collect();
        let opts = DoublingOptions { initial_horizon: 1.0, max_horizon: 4096.0 };
        let e = estimate_eta0(&xs, f, &s.cfg, &s.nl, &s.cert, 2e-2, &opts).unwrap();
        let eta = e.field(&s.d).unwrap();
        // Zero is the fixed point; pullback decay is polynomial, ‖S‖²_H ≤ 2π/τ for the cube on (0, π).
        assert!(eta.h_norm().powi(2) <= 2.0 * PI / e.horizon, "{} at T = {}", eta.h_norm(), e.horizon);
        assert!(eta.h_norm() < 0.1);
    }

    #[test]
    fn doubling_respects_budget_and_window() {
        let s = setup(1.0);
        let path = WienerPath::new(5, 2, 1e-3, -10.0, 1.0).unwrap();
        let xs: Vec<_> = (0..2).map(|i| random_low_mode_field(&s.d, i, 4, 1.0).unwrap()).collect();
        let f = Forcing::new(&path, &s.q);
        let tight = DoublingOptions { initial_horizon: 1.0, max_horizon: 4.0 };
        assert!(matches!(estimate_eta0(&xs, f, &s.cfg, &s.nl, &s.cert, 1e-12, &tight), Err(Error::NonConvergence { .. })));
        let wide = DoublingOptions { initial_horizon: 1.0, max_horizon: 64.0 };
        assert!(estimate_eta0(&xs, f, &s.cfg, &s.nl, &s.cert, 1e-12, &wide).is_err());
    }

    #[test]
    fn random_fields_are_keyed_and_scaled() {
        let d = Domain::new(PI, 16).unwrap();
        let a = random_low_mode_field(&d, 4, 6, 2.5).unwrap();
        assert_relative_eq!(a.h_norm(), 2.5, max_relative = 1e-14);
        assert_eq!(a, random_low_mode_field(&d, 4, 6, 2.5).unwrap());
        assert_ne!(a, random_low_mode_field(&d, 5, 6, 2.5).unwrap());
        assert!(a.coeffs()[6..].iter().all(|&c| c == 0.0));
        assert!(random_low_mode_field(&d, 4, 17, 1.0).is_err());
        assert_eq!(random_low_mode_field(&d, 4, 6, 0.0).unwrap().h_norm(), 0.0);
    }

    #[test]
    fn absorption_radius_is_data_independent() {
        let s = setup(1.0);
        let mk = |seed: u64| WienerPath::new(seed, 2, 1e-3, -40.0, 1.0);
        let opts = AbsorptionOptions { initial_horizon: 0.5, max_horizon: 32.0, band: 0.05, modes: 4 };
        let rhos = [0.0, 1.0, 10.0];
        let rows = absorption_radius(&rhos, &[0, 1], &mk, &s.q, &s.cfg, &s.nl, &opts).unwrap();
        assert_eq!(rows.len(), 6);
        for seed in [0, 1] {
            let mine: Vec<&AbsorptionRow> = rows.iter().filter(|r| r.seed == seed).collect();
            assert_eq!(mine[0].radii[0], 0.0);
            for w in mine.windows(2) {
                assert!(w[1].entry_horizon >= w[0].entry_horizon);
                assert_relative_eq!(w[1].radius, w[0].radius, max_relative = 1e-3);
            }
            assert!(mine.iter().all(|r| r.entry_horizon >= r.ic_entry_horizon));
        }
    }
}
