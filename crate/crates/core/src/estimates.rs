//! Energy estimates checked along computed trajectories.
//!
//! Every inequality is verified on all pairs `t₁ ≤ t₂` of a subsample of the
//! stored times. Time integrals use the endpoint rule of the trajectory's
//! scheme on the full stored grid. Before any inequality the underlying energy
//! identity is recomputed from the stored fields; its per-step residual gives
//! the discretization allowance `2·rate·(t₂ - t₁)`.
//!
//! The forcing terms follow the constant chains of the a-priori bounds; the
//! constants depend on `(Φ, α, β, Λ)` only and are never fitted to data.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{CertificationPlan, Hypothesis, DEFAULT_GRID_STEP, DEFAULT_SEARCH_BOX};
use crate::domain::SpectralField;
use crate::error::{Error, Result};
use crate::integrator::{Endpoint, Trajectory};
use crate::noise::Smoothness;
use crate::nonlinearity::{Nonlinearity, NonlinearityKind};

pub const DEFAULT_SLACK: f64 = 0.05;
pub const DEFAULT_MAX_POINTS: usize = 2000;

/// Per-step identity residuals may exceed `2‖ΔZ‖²` by this much (relative to the energy scale).
const IDENTITY_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// Decay rate in the dual-norm bound; at most `a/2` when `p = 1`.
    pub beta: f64,
    /// Decay rate in the L² bound.
    pub alpha: f64,
    #[serde(default = "default_slack")]
    pub slack: f64,
    /// Pair checks use at most this many stored times.
    #[serde(default = "default_max_points")]
    pub max_points: usize,
    #[serde(default = "default_search_box")]
    pub search_box: f64,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
}

fn default_slack() -> f64 {
    DEFAULT_SLACK
}
fn default_max_points() -> usize {
    DEFAULT_MAX_POINTS
}
fn default_search_box() -> f64 {
    DEFAULT_SEARCH_BOX
}
fn default_grid_step() -> f64 {
    DEFAULT_GRID_STEP
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            beta: 0.25,
            alpha: 0.25,
            slack: DEFAULT_SLACK,
            max_points: DEFAULT_MAX_POINTS,
            search_box: DEFAULT_SEARCH_BOX,
            grid_step: DEFAULT_GRID_STEP,
        }
    }
}

impl EstimateConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("alpha", self.alpha)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.slack.is_finite() && self.slack >= 0.0) {
            return Err(Error::invalid(format!("slack must be nonnegative, got {}", self.slack)));
        }
        if self.max_points < 2 {
            return Err(Error::invalid("max_points must be at least 2"));
        }
        Ok(())
    }
}

/// Young's inequality `xy ≤ ε|x|^{(p+1)/p} + C_ε|y|^{p+1}`: returns `C_ε`.
pub fn young_constant(eps: f64, p: f64) -> f64 {
    (eps * (p + 1.0) / p).powf(-p) / (p + 1.0)
}

/// Smallest `C` with `A|y|^{p+1} ≥ 2r y² - C` for all `y`.
///
/// For `p = 1` this needs `r ≤ A/2` and then `C = 0`.
pub fn quadratic_gap(coercivity: f64, rate: f64, p: f64) -> Result<f64> {
    if p == 1.0 {
        if 2.0 * rate > coercivity * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "rate {rate} exceeds half the coercivity constant {coercivity} at p = 1"
            )));
        }
        return Ok(0.0);
    }
    let y2 = (4.0 * rate / (coercivity * (p + 1.0))).powf(2.0 / (p - 1.0));
    Ok(2.0 * rate * y2 * (p - 1.0) / (p + 1.0))
}

/// Growth and coercivity constants of `Φ` used in the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiConstants {
    pub p: f64,
    /// `sΦ(s) ≥ a|s|^{p+1} - c`
    pub a: f64,
    pub c: f64,
    /// `|Φ(s)| ≤ c₁|s|^p + c₂`
    pub c1: f64,
    pub c2: f64,
    /// `ζ(s)² ≥ a'|s|^{p+1} - c'`, when `ζ` is available.
    pub zeta: Option<(f64, f64)>,
    /// Derivative growth in terms of `ζ`, when `Φ'` is nondegenerate.
    pub gradient: Option<GradientChain>,
    /// Box on which grid-derived constants are valid; infinite for closed forms.
    pub valid_radius: f64,
}

/// Pointwise chain `|Φ'(s)|^{(p+1)/(p-1)} ≤ G₁ζ(s)² + G₂` (`p > 1`), or `Φ' ≤ sup` (`p = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GradientChain {
    Power { g1: f64, g2: f64 },
    Bounded { sup_dphi: f64 },
}

impl PhiConstants {
    /// Closed forms for the power law; grid certificates for the other catalog entries.
    pub fn derive(nl: &Nonlinearity, search_box: f64, grid_step: f64) -> Result<Self> {
        let p = nl.p();
        match nl.kind() {
            NonlinearityKind::PowerLaw => {
                let gradient = if p == 1.0 {
                    GradientChain::Bounded { sup_dphi: 1.0 }
                } else {
                    GradientChain::Power { g1: p.powf(2.0 / (p - 1.0)) * (p + 1.0).powi(2) / 4.0, g2: 0.0 }
                };
                Ok(Self {
                    p,
                    a: 1.0,
                    c: 0.0,
                    c1: 1.0,
                    c2: 0.0,
                    zeta: Some((4.0 * p / ((p + 1.0) * (p + 1.0)), 0.0)),
                    gradient: Some(gradient),
                    valid_radius: f64::INFINITY,
                })
            }
            NonlinearityKind::Custom(c) => Err(Error::UnderivedConstants(format!(
                "no constant derivation for custom nonlinearity `{}`",
                c.name
            ))),
            _ => Self::from_grid(nl, search_box, grid_step),
        }
    }

    fn from_grid(nl: &Nonlinearity, search_box: f64, grid_step: f64) -> Result<Self> {
        let p = nl.p();
        let plan = CertificationPlan::new(nl, search_box, grid_step)?;
        let growth = plan.certify(Hypothesis::A1A3);
        growth.require()?;
        let get = |k: &str| growth.constant(k).ok_or_else(|| Error::UnderivedConstants(format!("missing `{k}`")));
        let zeta_cert = plan.certify(Hypothesis::Hyp11Zeta);
        let zeta = match (zeta_cert.constant("a_zeta"), zeta_cert.constant("c_zeta")) {
            (Some(a), Some(c)) if zeta_cert.passed => Some((a, c)),
            _ => None,
        };
        let gradient = match plan.certify(Hypothesis::Hyp14).passed {
            true => Some(grid_gradient_chain(&plan, nl)?),
            false => None,
        };
        Ok(Self {
            p,
            a: get("a")?,
            c: get("c")?,
            c1: get("c1")?,
            c2: get("c2")?,
            zeta,
            gradient,
            valid_radius: search_box,
        })
    }

    /// `|Φ(s)|^{(p+1)/p} ≤ C₁|s|^{p+1} + C₂`.
    pub fn dual_growth(&self) -> (f64, f64) {
        let q = (self.p + 1.0) / self.p;
        if self.c2 == 0.0 {
            (self.c1.powf(q), 0.0)
        } else {
            let k = 2f64.powf(1.0 / self.p);
            (k * self.c1.powf(q), k * self.c2.powf(q))
        }
    }
}

fn grid_gradient_chain(plan: &CertificationPlan<'_>, nl: &Nonlinearity) -> Result<GradientChain> {
    let p = nl.p();
    let dphi = plan.phi_prime_values()?;
    if p == 1.0 {
        return Ok(GradientChain::Bounded { sup_dphi: nl.phi_prime_bound(plan.search_box())? });
    }
    let zeta = plan.zeta_values()?;
    let e = (p + 1.0) / (p - 1.0);
    let g1 = plan
        .outer_indices()
        .map(|i| dphi[i].abs().powf(e) / (zeta[i] * zeta[i]))
        .fold(0.0, f64::max);
    let g2 = (0..dphi.len()).map(|i| dphi[i].abs().powf(e) - g1 * zeta[i] * zeta[i]).fold(0.0, f64::max);
    if !(g1.is_finite() && g2.is_finite()) {
        return Err(Error::UnderivedConstants("derivative growth chain is not finite".into()));
    }
    Ok(GradientChain::Power { g1, g2 })
}

/// All derived constants for one `(Φ, config, domain)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateConstants {
    pub phi: PhiConstants,
    pub lambda1: f64,
    pub measure: f64,
    pub beta: f64,
    pub alpha: f64,
    /// Dual-norm bound: `ε = a/(2C₁)`, `C_ε`, `C₃ = εC₂`, `C_β`.
    pub dual: DualConstants,
    /// L² bound through `‖ΔQW‖` (needs `ζ`).
    pub laplacian_route: Option<L2Constants>,
    /// L² bound through `‖∇QW‖` (needs the derivative chain).
    pub gradient_route: Option<L2Constants>,
    /// `c`, `C` of the Galerkin energy bound.
    pub galerkin: Option<GalerkinConstants>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualConstants {
    pub c_big1: f64,
    pub c_big2: f64,
    pub eps: f64,
    pub c_eps: f64,
    pub c3: f64,
    pub c_beta: f64,
}

/// `p₂(r) = noise_coeff·‖D QW_r‖_{p+1}^{p+1} + constant·|Λ| + 2α‖QW_r‖₂²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Constants {
    pub eps: f64,
    pub c_eps: f64,
    pub c_tilde_alpha: f64,
    pub noise_coeff: f64,
    /// Multiplies `|Λ|`.
    pub constant: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GalerkinConstants {
    /// `‖∇Φ(u)‖_{(p+1)/p}^{(p+1)/p} ≤ k₁‖∇ζ(u)‖₂² + k₂|Λ|`
    pub k1: f64,
    pub k2: f64,
    pub eps: f64,
    pub c_eps: f64,
    pub c: f64,
    pub c_big: f64,
}

impl EstimateConstants {
    pub fn derive(nl: &Nonlinearity, cfg: &EstimateConfig, lambda1: f64, measure: f64) -> Result<Self> {
        cfg.validate()?;
        let phi = PhiConstants::derive(nl, cfg.search_box, cfg.grid_step)?;
        let p = phi.p;
        let (c_big1, c_big2) = phi.dual_growth();
        let eps = phi.a / (2.0 * c_big1);
        let c3 = eps * c_big2;
        let dual = DualConstants {
            c_big1,
            c_big2,
            eps,
            c_eps: young_constant(eps, p),
            c3,
            c_beta: quadratic_gap(phi.a, cfg.beta, p)?,
        };

        let (laplacian_route, gradient_route, galerkin) = match phi.zeta {
            None => (None, None, None),
            Some((a_z, c_z)) => {
                let coercive = a_z * lambda1;
                let c_tilde = quadratic_gap(coercive, cfg.alpha, p)?;
                let eps2 = coercive / (2.0 * c_big1);
                let c_eps2 = young_constant(eps2, p);
                let lap = L2Constants {
                    eps: eps2,
                    c_eps: c_eps2,
                    c_tilde_alpha: c_tilde,
                    noise_coeff: 2.0 * c_eps2,
                    constant: 2.0 * (lambda1 * c_z + eps2 * c_big2) + c_tilde,
                };
                let chain = phi.gradient.map(|g| gradient_split(g, p, lambda1));
                let grad = chain.map(|(k1, k2)| {
                    let eps = 1.0 / (2.0 * k1);
                    let c_eps = young_constant(eps, p);
                    L2Constants {
                        eps,
                        c_eps,
                        c_tilde_alpha: c_tilde,
                        noise_coeff: 2.0 * c_eps,
                        constant: k2 / k1 + lambda1 * c_z + c_tilde,
                    }
                });
                let galerkin = chain.map(|(k1, k2)| {
                    let eps = 1.0 / (2.0 * k1);
                    let c_eps = young_constant(eps, p);
                    GalerkinConstants {
                        k1,
                        k2,
                        eps,
                        c_eps,
                        c: 1.0 / k1,
                        c_big: (2.0 * c_eps).max(2.0 * measure * k2 / k1),
                    }
                });
                (Some(lap), grad, galerkin)
            }
        };
        Ok(Self {
            phi,
            lambda1,
            measure,
            beta: cfg.beta,
            alpha: cfg.alpha,
            dual,
            laplacian_route,
            gradient_route,
            galerkin,
        })
    }

    /// `p₁(r) = 2β‖QW‖₂² + |Λ|C_β + 2C_ε‖QW‖_{p+1}^{p+1} + 2|Λ|(c + C₃)`.
    pub fn forcing_p1(&self, qw_l2_sq: f64, qw_lp_pow: f64) -> f64 {
        let d = &self.dual;
        2.0 * self.beta * qw_l2_sq
            + self.measure * d.c_beta
            + 2.0 * d.c_eps * qw_lp_pow
            + 2.0 * self.measure * (self.phi.c + d.c3)
    }

    /// `p₂(r)` for the chosen route; `noise_pow` is `‖ΔQW‖` or `‖∇QW‖` to the power `p+1`.
    pub fn forcing_p2(&self, route: Smoothness, qw_l2_sq: f64, noise_pow: f64) -> Result<f64> {
        let k = self.route(route)?;
        Ok(k.noise_coeff * noise_pow + self.measure * k.constant + 2.0 * self.alpha * qw_l2_sq)
    }

    fn route(&self, route: Smoothness) -> Result<&L2Constants> {
        match route {
            Smoothness::C2 => self.laplacian_route.as_ref(),
            Smoothness::C1 => self.gradient_route.as_ref(),
        }
        .ok_or_else(|| Error::UnderivedConstants(format!("no L² constants for the {route:?} route")))
    }

    /// Dual-norm decay rate `β/c²` with `c = 1/√λ₁` the L² → H embedding constant.
    pub fn dual_decay_rate(&self) -> f64 {
        self.beta * self.lambda1
    }

    /// Flat `name → value` view for reports.
    pub fn table(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        let phi = &self.phi;
        for (k, v) in [
            ("p", phi.p),
            ("a", phi.a),
            ("c", phi.c),
            ("c1", phi.c1),
            ("c2", phi.c2),
            ("lambda1", self.lambda1),
            ("measure", self.measure),
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("C1", self.dual.c_big1),
            ("C2", self.dual.c_big2),
            ("eps", self.dual.eps),
            ("C_eps", self.dual.c_eps),
            ("C3", self.dual.c3),
            ("C_beta", self.dual.c_beta),
        ] {
            m.insert(k.to_string(), v);
        }
        if let Some((a, c)) = phi.zeta {
            m.insert("a_zeta".into(), a);
            m.insert("c_zeta".into(), c);
        }
        for (prefix, r) in [("lap", &self.laplacian_route), ("grad", &self.gradient_route)] {
            if let Some(r) = r {
                m.insert(format!("{prefix}.eps"), r.eps);
                m.insert(format!("{prefix}.C_eps"), r.c_eps);
                m.insert(format!("{prefix}.C_tilde_alpha"), r.c_tilde_alpha);
                m.insert(format!("{prefix}.noise_coeff"), r.noise_coeff);
                m.insert(format!("{prefix}.constant"), r.constant);
            }
        }
        if let Some(g) = &self.galerkin {
            m.insert("galerkin.k1".into(), g.k1);
            m.insert("galerkin.k2".into(), g.k2);
            m.insert("galerkin.eps".into(), g.eps);
            m.insert("galerkin.C_eps".into(), g.c_eps);
            m.insert("galerkin.c".into(), g.c);
            m.insert("galerkin.C".into(), g.c_big);
        }
        m
    }
}

/// `(k₁, k₂)` with `‖∇Φ(u)‖_{(p+1)/p}^{(p+1)/p} ≤ k₁‖∇ζ(u)‖₂² + k₂|Λ|`.
///
/// For `p > 1`, Young with exponents `2p/(p+1)` and `2p/(p-1)` followed by
/// Poincaré on `ζ(u)`; for `p = 1`, `|∇Φ(u)|² ≤ sup Φ' |∇ζ(u)|²`.
fn gradient_split(chain: GradientChain, p: f64, lambda1: f64) -> (f64, f64) {
    match chain {
        GradientChain::Bounded { sup_dphi } => (sup_dphi, 0.0),
        GradientChain::Power { g1, g2 } => {
            let r = 2.0 * p / (p + 1.0);
            let r_conj = 2.0 * p / (p - 1.0);
            (1.0 / r + g1 / (lambda1 * r_conj), g2 / r_conj)
        }
    }
}

/// Recomputed energy identity for one norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// `"H"` for `d‖Z‖_H² = -2⟨Z, Φ(S)⟩`, `"L2"` for `d‖Z‖₂² = 2⟨ΔZ, Φ(S)⟩`.
    pub norm: String,
    /// `max_k |residual_k| / Δt_k`.
    pub rate: f64,
    /// `max_k |residual_k| / (2‖Z_k - Z_{k-1}‖²)`, at most 1 for a consistent one-step scheme.
    pub worst_ratio: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub id: String,
    pub constants: BTreeMap<String, f64>,
    /// `max (LHS - RHS - slack·|RHS| - allowance)` over pairs `t₁ < t₂`; positive means violated.
    pub worst_margin: f64,
    /// The same maximum without the discretization allowance; its dt-refinement behavior shows convergence.
    pub worst_raw_margin: f64,
    /// Smallest allowance rate that would leave zero violations: `max (raw margin)_+ / (2(t₂ - t₁))`.
    pub required_allowance_rate: f64,
    /// `LHS - RHS` at the worst pair, relative to `max(1, |RHS|)`.
    pub worst_relative_gap: f64,
    pub worst_pair: [f64; 2],
    pub violations: usize,
    pub pairs_checked: usize,
    pub slack: f64,
    pub allowance_rate: f64,
    pub identity: IdentityReport,
    pub dt: f64,
    pub n_modes: usize,
    pub seed: u64,
    /// `max |S|` over the stored states; grid constants hold for `|s|` up to `valid_radius`.
    pub max_abs_s: f64,
    pub valid_radius: f64,
}

impl InequalityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.identity.passed && self.max_abs_s <= self.valid_radius
    }
}

/// Quantities at each stored time, computed once per trajectory.
struct Series {
    times: Vec<f64>,
    z_h2: Vec<f64>,
    z_l2: Vec<f64>,
    qw_l2: Vec<f64>,
    qw_lp: Vec<f64>,
    grad_qw: Vec<f64>,
    lap_qw: Vec<f64>,
    grad_phi: Vec<Option<f64>>,
    /// `⟨Z, Φ(S)⟩` and `Σ λ_k Z_k Φ(S)_k`.
    dissip_h: Vec<f64>,
    dissip_l2: Vec<f64>,
    /// `‖Z_k - Z_{k-1}‖²` in H and L²; zero at `k = 0`.
    step_h: Vec<f64>,
    step_l2: Vec<f64>,
    max_abs_s: f64,
    endpoint: Endpoint,
}

impl Series {
    fn compute(traj: &Trajectory, nl: &Nonlinearity) -> Result<Self> {
        if traj.len() < 1 {
            return Err(Error::invalid("empty trajectory"));
        }
        let dt = traj.dt();
        // The identity layer compares consecutive solver steps.
        if traj.times.windows(2).any(|w| w[1] - w[0] > dt * (1.0 + 1e-9)) {
            return Err(Error::invalid("estimate checks need every solver step stored (stride 1)"));
        }
        let p = traj.p();
        let domain = traj.domain().clone();
        let q = (p + 1.0) / p;
        let rows: Vec<Result<Row>> = (0..traj.len())
            .into_par_iter()
            .map(|i| {
                let z = &traj.z[i];
                let qw = traj.qw_at(i)?;
                let s = traj.s_at(i)?;
                let vals = s.to_collocation();
                let mut phi = vec![0.0; vals.len()];
                nl.phi_into(&vals, &mut phi);
                let pphi = SpectralField::from_collocation(&domain, &phi)?;
                let dissip_h = z.l2_inner(&pphi);
                let dissip_l2: f64 = z
                    .coeffs()
                    .iter()
                    .zip(pphi.coeffs())
                    .enumerate()
                    .map(|(k, (a, b))| domain.eigenvalue(k + 1) * a * b)
                    .sum();
                let grad_phi = if nl.has_derivative() {
                    let ds = s.derivative_values();
                    let mut full = Vec::with_capacity(domain.n_quad() + 1);
                    full.push(0.0);
                    full.extend_from_slice(&vals);
                    full.push(0.0);
                    let mut dphi = vec![0.0; full.len()];
                    nl.phi_prime_into(&full, &mut dphi)?;
                    let g: Vec<f64> = dphi.iter().zip(&ds).map(|(a, b)| a * b).collect();
                    Some(domain.full_power_integral(&g, q))
                } else {
                    None
                };
                let (step_h, step_l2) = if i == 0 {
                    (0.0, 0.0)
                } else {
                    let d = z - &traj.z[i - 1];
                    (d.h_norm().powi(2), d.l2_norm_sq())
                };
                Ok(Row {
                    z_h2: z.h_norm().powi(2),
                    z_l2: z.l2_norm_sq(),
                    qw_l2: qw.l2_norm_sq(),
                    qw_lp: qw.lp_norm_pow(p + 1.0)?,
                    grad_qw: qw.grad_lq_norm_pow(p + 1.0)?,
                    lap_qw: qw.laplacian().lp_norm_pow(p + 1.0)?,
                    grad_phi,
                    dissip_h,
                    dissip_l2,
                    step_h,
                    step_l2,
                    max_abs_s: vals.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
                })
            })
            .collect();
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Self {
            times: traj.times.clone(),
            z_h2: rows.iter().map(|r| r.z_h2).collect(),
            z_l2: rows.iter().map(|r| r.z_l2).collect(),
            qw_l2: rows.iter().map(|r| r.qw_l2).collect(),
            qw_lp: rows.iter().map(|r| r.qw_lp).collect(),
            grad_qw: rows.iter().map(|r| r.grad_qw).collect(),
            lap_qw: rows.iter().map(|r| r.lap_qw).collect(),
            grad_phi: rows.iter().map(|r| r.grad_phi).collect(),
            dissip_h: rows.iter().map(|r| r.dissip_h).collect(),
            dissip_l2: rows.iter().map(|r| r.dissip_l2).collect(),
            step_h: rows.iter().map(|r| r.step_h).collect(),
            step_l2: rows.iter().map(|r| r.step_l2).collect(),
            max_abs_s: rows.iter().map(|r| r.max_abs_s).fold(0.0, f64::max),
            endpoint: traj.scheme().endpoint(),
        })
    }

    fn len(&self) -> usize {
        self.times.len()
    }

    /// Cumulative endpoint-rule integral of `f(k)`.
    fn cumulative(&self, f: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for k in 1..self.len() {
            let e = match self.endpoint {
                Endpoint::Right => k,
                Endpoint::Left => k - 1,
            };
            out[k] = out[k - 1] + (self.times[k] - self.times[k - 1]) * f(e);
        }
        out
    }

    fn identity(&self, l2: bool) -> IdentityReport {
        let (energy, dissip, step) = if l2 {
            (&self.z_l2, &self.dissip_l2, &self.step_l2)
        } else {
            (&self.z_h2, &self.dissip_h, &self.step_h)
        };
        let scale = energy.iter().fold(1.0, |m: f64, v| m.max(v.abs()));
        let mut rate: f64 = 0.0;
        let mut worst_ratio: f64 = 0.0;
        let mut passed = true;
        for k in 1..self.len() {
            let e = match self.endpoint {
                Endpoint::Right => k,
                Endpoint::Left => k - 1,
            };
            let h = self.times[k] - self.times[k - 1];
            let res = energy[k] - energy[k - 1] + 2.0 * h * dissip[e];
            if !res.is_finite() {
                passed = false;
                rate = f64::INFINITY;
                continue;
            }
            rate = rate.max(res.abs() / h);
            if step[k] > 0.0 {
                worst_ratio = worst_ratio.max(res.abs() / (2.0 * step[k]));
            }
            if res.abs() > 2.0 * step[k] + IDENTITY_FLOOR * scale {
                passed = false;
            }
        }
        IdentityReport { norm: if l2 { "L2" } else { "H" }.into(), rate, worst_ratio, passed }
    }
}

struct Row {
    z_h2: f64,
    z_l2: f64,
    qw_l2: f64,
    qw_lp: f64,
    grad_qw: f64,
    lap_qw: f64,
    grad_phi: Option<f64>,
    dissip_h: f64,
    dissip_l2: f64,
    step_h: f64,
    step_l2: f64,
    max_abs_s: f64,
}

/// Checks `E_j + (G_j - G_i) ≤ E_i + (F_j - F_i)` over subsampled pairs `i ≤ j`.
///
/// With `weights`, `energy` and `forcing` hold `w_k E_k` and the `w`-weighted
/// integral, and both sides are divided by `w_j`.
struct PairCheck<'a> {
    times: &'a [f64],
    energy: &'a [f64],
    gain: Option<&'a [f64]>,
    forcing: &'a [f64],
    weights: Option<&'a [f64]>,
    slack: f64,
    allowance_rate: f64,
}

struct PairOutcome {
    worst_margin: f64,
    worst_raw: f64,
    required_rate: f64,
    worst_gap: f64,
    worst_pair: [f64; 2],
    violations: usize,
    pairs: usize,
}

impl PairCheck<'_> {
    /// `(margin, relative gap, margin without allowance)`
    fn margin(&self, i: usize, j: usize) -> (f64, f64, f64) {
        let gain = self.gain.map_or(0.0, |g| g[j] - g[i]);
        let w = self.weights.map_or(1.0, |w| w[j]);
        let lhs = self.energy[j] / w + gain;
        let rhs = (self.energy[i] + (self.forcing[j] - self.forcing[i])) / w;
        let allowance = 2.0 * self.allowance_rate * (self.times[j] - self.times[i]);
        let raw = lhs - rhs - self.slack * rhs.abs();
        (raw - allowance, (lhs - rhs) / rhs.abs().max(1.0), raw)
    }

    fn run(&self, max_points: usize) -> PairOutcome {
        let idx = subsample(self.times.len(), max_points);
        let rows: Vec<PairOutcome> = (0..idx.len())
            .into_par_iter()
            .map(|a| {
                let i = idx[a];
                let mut out = PairOutcome {
                    worst_margin: f64::NEG_INFINITY,
                    worst_raw: f64::NEG_INFINITY,
                    required_rate: 0.0,
                    worst_gap: 0.0,
                    worst_pair: [self.times[i]; 2],
                    violations: 0,
                    pairs: 0,
                };
                for &j in &idx[a..] {
                    let (m, gap, raw) = self.margin(i, j);
                    let m = if m.is_nan() { f64::INFINITY } else { m };
                    out.pairs += 1;
                    if m > 0.0 {
                        out.violations += 1;
                    }
                    // The diagonal is an identity; the worst pair is reported off it.
                    if (j > i || idx.len() == 1) && !(raw <= out.worst_raw) {
                        out.worst_raw = raw;
                    }
                    if j > i && !(raw <= 0.0) {
                        let need = raw / (2.0 * (self.times[j] - self.times[i]));
                        out.required_rate = out.required_rate.max(if need.is_nan() { f64::INFINITY } else { need });
                    }
                    if (j > i || idx.len() == 1) && m > out.worst_margin {
                        out.worst_margin = m;
                        out.worst_gap = gap;
                        out.worst_pair = [self.times[i], self.times[j]];
                    }
                }
                out
            })
            .collect();
        let mut total = PairOutcome {
            worst_margin: f64::NEG_INFINITY,
            worst_raw: f64::NEG_INFINITY,
            required_rate: 0.0,
            worst_gap: 0.0,
            worst_pair: [0.0; 2],
            violations: 0,
            pairs: 0,
        };
        for r in rows {
            total.violations += r.violations;
            total.pairs += r.pairs;
            total.worst_raw = total.worst_raw.max(r.worst_raw);
            total.required_rate = total.required_rate.max(r.required_rate);
            if r.worst_margin > total.worst_margin {
                total.worst_margin = r.worst_margin;
                total.worst_gap = r.worst_gap;
                total.worst_pair = r.worst_pair;
            }
        }
        total
    }
}

/// Evenly spread indices of `0..n`, always including both ends.
fn subsample(n: usize, max_points: usize) -> Vec<usize> {
    if n <= max_points {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> =
        (0..max_points).map(|k| ((k as f64) * (n - 1) as f64 / (max_points - 1) as f64).round() as usize).collect();
    idx.dedup();
    idx
}

/// Energy-estimate checks on one trajectory.
pub struct EstimateHarness<'a> {
    traj: &'a Trajectory,
    cfg: EstimateConfig,
    constants: EstimateConstants,
    series: Series,
}

impl<'a> EstimateHarness<'a> {
    pub fn new(traj: &'a Trajectory, nl: &Nonlinearity, cfg: &EstimateConfig) -> Result<Self> {
        if (traj.p() - nl.p()).abs() > 0.0 {
            return Err(Error::invalid("trajectory was computed with a different nonlinearity"));
        }
        let d = traj.domain();
        let constants = EstimateConstants::derive(nl, cfg, d.poincare_lambda1(), d.length())?;
        Self::with_constants(traj, nl, cfg, constants)
    }

    /// Reuses constants derived once for an ensemble of trajectories.
    pub fn with_constants(
        traj: &'a Trajectory,
        nl: &Nonlinearity,
        cfg: &EstimateConfig,
        constants: EstimateConstants,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = traj.domain();
        if constants.phi.p != nl.p()
            || constants.lambda1 != d.poincare_lambda1()
            || constants.measure != d.length()
            || constants.beta != cfg.beta
            || constants.alpha != cfg.alpha
        {
            return Err(Error::invalid("constants were derived for a different nonlinearity, domain or rates"));
        }
        let series = Series::compute(traj, nl)?;
        Ok(Self { traj, cfg: cfg.clone(), constants, series })
    }

    pub fn constants(&self) -> &EstimateConstants {
        &self.constants
    }

    pub fn identity(&self, l2: bool) -> IdentityReport {
        self.series.identity(l2)
    }

    fn report(&self, id: &str, check: PairCheck<'_>, identity: IdentityReport, extra: &[(&str, f64)]) -> InequalityReport {
        let out = check.run(self.cfg.max_points);
        let mut constants = self.constants.table();
        for (k, v) in extra {
            constants.insert(k.to_string(), *v);
        }
        InequalityReport {
            id: id.into(),
            constants,
            worst_margin: out.worst_margin,
            worst_raw_margin: out.worst_raw,
            required_allowance_rate: out.required_rate,
            worst_relative_gap: out.worst_gap,
            worst_pair: out.worst_pair,
            violations: out.violations,
            pairs_checked: out.pairs,
            slack: self.cfg.slack,
            allowance_rate: identity.rate,
            identity,
            dt: self.traj.dt(),
            n_modes: self.traj.domain().n_modes(),
            seed: self.traj.path().seed(),
            max_abs_s: self.series.max_abs_s,
            valid_radius: self.constants.phi.valid_radius,
        }
    }

    /// `‖Z_{t₂}‖_H² ≤ ‖Z_{t₁}‖_H² - β∫‖Z‖₂² + ∫p₁`.
    pub fn dual_energy(&self) -> InequalityReport {
        let s = &self.series;
        let k = &self.constants;
        let forcing = s.cumulative(|i| k.forcing_p1(s.qw_l2[i], s.qw_lp[i]) - k.beta * s.z_l2[i]);
        let identity = s.identity(false);
        let check = PairCheck {
            times: &s.times,
            energy: &s.z_h2,
            gain: None,
            forcing: &forcing,
            weights: None,
            slack: self.cfg.slack,
            allowance_rate: identity.rate,
        };
        self.report("dual_energy", check, identity, &[])
    }

    /// `‖Z_{t₂}‖_H² ≤ e^{-γ(t₂-t₁)}‖Z_{t₁}‖_H² + ∫ e^{-γ(t₂-r)}p₁(r) dr` with `γ = βλ₁`.
    pub fn dual_decay(&self) -> InequalityReport {
        let s = &self.series;
        let k = &self.constants;
        let gamma = k.dual_decay_rate();
        let t0 = s.times[0];
        let identity = s.identity(false);
        // Weighted forms keep the exponentials bounded: E_j e^{γ(t_j - t₀)} against the integral of e^{γ(r - t₀)}p₁.
        let w: Vec<f64> = s.times.iter().map(|t| (gamma * (t - t0)).exp()).collect();
        let forcing = s.cumulative(|i| w[i] * k.forcing_p1(s.qw_l2[i], s.qw_lp[i]));
        let energy: Vec<f64> = s.z_h2.iter().zip(&w).map(|(e, w)| e * w).collect();
        let check = PairCheck {
            times: &s.times,
            energy: &energy,
            gain: None,
            forcing: &forcing,
            weights: Some(&w),
            slack: self.cfg.slack,
            allowance_rate: identity.rate,
        };
        self.report("dual_decay", check, identity, &[("gamma", gamma)])
    }

    /// `‖Z_{t₂}‖₂² ≤ ‖Z_{t₁}‖₂² - α∫‖Z‖₂² + ∫p₂` through `‖ΔQW‖` (`C2`) or `‖∇QW‖` (`C1`).
    pub fn l2_energy(&self, route: Smoothness) -> Result<InequalityReport> {
        let noise = self.traj.noise().smoothness();
        if route == Smoothness::C2 && noise != Smoothness::C2 {
            return Err(Error::SmoothnessMismatch(
                "the Laplacian route needs twice differentiable noise profiles".into(),
            ));
        }
        let s = &self.series;
        let k = &self.constants;
        k.route(route)?;
        let noise_term = match route {
            Smoothness::C2 => &s.lap_qw,
            Smoothness::C1 => &s.grad_qw,
        };
        let forcing = s.cumulative(|i| {
            k.forcing_p2(route, s.qw_l2[i], noise_term[i]).unwrap_or(f64::NAN) - k.alpha * s.z_l2[i]
        });
        let identity = s.identity(true);
        let check = PairCheck {
            times: &s.times,
            energy: &s.z_l2,
            gain: None,
            forcing: &forcing,
            weights: None,
            slack: self.cfg.slack,
            allowance_rate: identity.rate,
        };
        let id = match route {
            Smoothness::C2 => "l2_energy_laplacian",
            Smoothness::C1 => "l2_energy_gradient",
        };
        Ok(self.report(id, check, identity, &[]))
    }

    /// `‖Z_{t₂}‖₂² + c∫‖∇Φ(S)‖_{(p+1)/p}^{(p+1)/p} ≤ ‖Z_{t₁}‖₂² + C∫(‖∇QW‖_{p+1}^{p+1} + 1)`.
    pub fn galerkin_energy(&self) -> Result<InequalityReport> {
        let s = &self.series;
        let g = self.constants.galerkin.ok_or_else(|| {
            Error::Uncertified("the Galerkin energy bound needs a nondegenerate-derivative certificate".into())
        })?;
        let grad_phi: Vec<f64> = s
            .grad_phi
            .iter()
            .map(|v| v.ok_or_else(|| Error::MissingDerivative("Φ".into())))
            .collect::<Result<_>>()?;
        let gain = s.cumulative(|i| g.c * grad_phi[i]);
        let forcing = s.cumulative(|i| g.c_big * (s.grad_qw[i] + 1.0));
        let identity = s.identity(true);
        let check = PairCheck {
            times: &s.times,
            energy: &s.z_l2,
            gain: Some(&gain),
            forcing: &forcing,
            weights: None,
            slack: self.cfg.slack,
            allowance_rate: identity.rate,
        };
        Ok(self.report("galerkin_energy", check, identity, &[]))
    }
}

pub fn check_thm21(traj: &Trajectory, nl: &Nonlinearity, cfg: &EstimateConfig) -> Result<InequalityReport> {
    Ok(EstimateHarness::new(traj, nl, cfg)?.dual_energy())
}

/// L² estimate on the route matching the noise smoothness class.
pub fn check_thm31(traj: &Trajectory, nl: &Nonlinearity, cfg: &EstimateConfig) -> Result<InequalityReport> {
    EstimateHarness::new(traj, nl, cfg)?.l2_energy(traj.noise().smoothness())
}

pub fn check_galerkin_energy(traj: &Trajectory, nl: &Nonlinearity, cfg: &EstimateConfig) -> Result<InequalityReport> {
    EstimateHarness::new(traj, nl, cfg)?.galerkin_energy()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::integrator::{solve, solve_strided, Forcing, SolverConfig};
    use crate::noise::{NoiseOperator, WienerPath};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    /// `sup_y f(y)` by a fine scan over `[0, y_max]`.
    fn scan_sup(f: impl Fn(f64) -> f64, y_max: f64) -> f64 {
        let n = 2_000_000;
        (0..=n).map(|i| f(y_max * i as f64 / n as f64)).fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn young_constant_matches_scan() {
        for (eps, p) in [(0.5, 3.0), (0.1, 1.0), (2.0, 2.0), (0.375, 3.0)] {
            let q = (p + 1.0) / p;
            // With y = 1 the optimal constant is sup_x (x - ε x^q).
            let oracle = scan_sup(|x| x - eps * x.powf(q), 50.0);
            assert_relative_eq!(young_constant(eps, p), oracle, max_relative = 1e-6);
        }
    }

    #[test]
    fn quadratic_gap_matches_scan() {
        for (a, r, p) in [(1.0, 0.25, 3.0), (0.75, 0.5, 3.0), (2.0, 1.0, 2.0), (1.0, 3.0, 5.0)] {
            let oracle = scan_sup(|y| 2.0 * r * y * y - a * y.powf(p + 1.0), 10.0);
            assert_relative_eq!(quadratic_gap(a, r, p).unwrap(), oracle, max_relative = 1e-6);
        }
    }

    #[test]
    fn linear_case_needs_rate_below_half_coercivity() {
        assert_eq!(quadratic_gap(1.0, 0.5, 1.0).unwrap(), 0.0);
        assert!(quadratic_gap(1.0, 0.51, 1.0).is_err());
        let cfg = EstimateConfig { beta: 0.75, ..Default::default() };
        let heat = Nonlinearity::power_law(1.0).unwrap();
        assert!(EstimateConstants::derive(&heat, &cfg, 1.0, PI).is_err());
    }

    #[test]
    fn power_law_closed_forms_agree_with_grid_route() {
        let nl = Nonlinearity::power_law(3.0).unwrap();
        let closed = PhiConstants::derive(&nl, 10.0, 1e-2).unwrap();
        let grid = PhiConstants::from_grid(&nl, 10.0, 1e-2).unwrap();
        assert_relative_eq!(grid.a, closed.a, epsilon = 1e-12);
        assert!(grid.c.abs() < 1e-12);
        assert_relative_eq!(grid.c1, closed.c1, epsilon = 1e-12);
        assert!(grid.c2.abs() < 1e-12);
        let ((ga, gc), (ca, _)) = (grid.zeta.unwrap(), closed.zeta.unwrap());
        assert_relative_eq!(ga, 0.75, max_relative = 1e-9);
        assert_relative_eq!(ca, 0.75, epsilon = 1e-15);
        assert!(gc.abs() < 1e-9);
        match (grid.gradient.unwrap(), closed.gradient.unwrap()) {
            (GradientChain::Power { g1, g2 }, GradientChain::Power { g1: c1, g2: c2 }) => {
                // (3s²)² = 9s⁴ = 12·(¾s⁴)
                assert_relative_eq!(c1, 12.0, epsilon = 1e-12);
                assert_eq!(c2, 0.0);
                assert_relative_eq!(g1, 12.0, max_relative = 1e-9);
                assert!(g2 < 1e-8);
            }
            other => panic!("unexpected chains {other:?}"),
        }
    }

    #[test]
    fn dead_zone_gradient_chain_is_that_of_the_cube() {
        // Φ' = 3(|s|-δ)₊², ζ² = ¾(|s|-δ)₊⁴: the same ratio 12 as the cube.
        let nl = Nonlinearity::dead_zone_cubic(1.0).unwrap();
        let plan = CertificationPlan::new(&nl, 10.0, 1e-2).unwrap();
        match grid_gradient_chain(&plan, &nl).unwrap() {
            GradientChain::Power { g1, g2 } => {
                assert_relative_eq!(g1, 12.0, max_relative = 1e-6);
                assert!(g2 < 1e-6);
            }
            other => panic!("unexpected chain {other:?}"),
        }
        // Hyp 1.4 fails on the dead zone, so the Galerkin constants are unavailable.
        let k = EstimateConstants::derive(&nl, &EstimateConfig::default(), 1.0, PI).unwrap();
        assert!(k.galerkin.is_none() && k.gradient_route.is_none());
        assert!(k.laplacian_route.is_some());
    }

    #[test]
    fn custom_nonlinearity_has_no_constants() {
        let custom = crate::nonlinearity::CustomPhi {
            name: "odd".into(),
            phi: std::sync::Arc::new(|s| s * s * s),
            phi_prime: None,
            breakpoints: vec![],
        };
        let nl = Nonlinearity::custom(custom, 3.0).unwrap();
        assert!(matches!(
            EstimateConstants::derive(&nl, &EstimateConfig::default(), 1.0, PI),
            Err(Error::UnderivedConstants(_))
        ));
    }

    #[test]
    fn noise_free_forcing_is_constant() {
        let nl = Nonlinearity::power_law(3.0).unwrap();
        let cfg = EstimateConfig::default();
        let k = EstimateConstants::derive(&nl, &cfg, 1.0, PI).unwrap();
        let expected = PI * quadratic_gap(1.0, cfg.beta, 3.0).unwrap();
        assert_relative_eq!(k.forcing_p1(0.0, 0.0), expected, max_relative = 1e-14);
        assert!(expected > 0.0);
        // c = c₂ = 0, so only C_β survives.
        assert_relative_eq!(k.dual.c3, 0.0);
    }

    fn cube_run(q_amp: Option<f64>, smoothness: Smoothness, dt: f64) -> (Trajectory, Nonlinearity) {
        let d = Domain::new(PI, 16).unwrap();
        let path = WienerPath::new(7, 1, 1e-3, 0.0, 2.0).unwrap();
        let q = match q_amp {
            Some(a) => NoiseOperator::modal(&d, &[2], vec![a], smoothness).unwrap(),
            None => NoiseOperator::zero(&d),
        };
        let nl = Nonlinearity::power_law(3.0).unwrap();
        let x = d.field((1..=16).map(|k| 1.5 / (k * k) as f64).collect()).unwrap();
        let cfg = SolverConfig { dt, ..Default::default() };
        (solve(&x, 0.0, 1.0, Forcing::new(&path, &q), &cfg, &nl).unwrap(), nl)
    }

    #[test]
    fn decaying_solution_satisfies_every_estimate() {
        let (traj, nl) = cube_run(None, Smoothness::C2, 5e-3);
        let h = EstimateHarness::new(&traj, &nl, &EstimateConfig::default()).unwrap();
        let reports = [
            h.dual_energy(),
            h.dual_decay(),
            h.l2_energy(Smoothness::C2).unwrap(),
            h.l2_energy(Smoothness::C1).unwrap(),
            h.galerkin_energy().unwrap(),
        ];
        for r in &reports {
            assert!(r.passed(), "{} failed: {r:?}", r.id);
            assert!(r.worst_margin < 0.0, "{}", r.id);
            assert!(r.pairs_checked > traj.len());
        }
    }

    #[test]
    fn single_mode_noise_functionals() {
        let (traj, nl) = cube_run(Some(0.7), Smoothness::C2, 1e-2);
        let s = Series::compute(&traj, &nl).unwrap();
        // ‖e_k‖₄⁴ = 3/(2π) on (0, π), independent of k; λ₂ = 4.
        let e4 = 3.0 / (2.0 * PI);
        for i in [3, 50, traj.len() - 1] {
            let w = traj.path().value(traj.times[i], 0).unwrap() * 0.7;
            assert_relative_eq!(s.lap_qw[i], 4f64.powi(4) * w.powi(4) * e4, max_relative = 1e-10);
            assert_relative_eq!(s.qw_lp[i], w.powi(4) * e4, max_relative = 1e-10);
            assert_relative_eq!(s.qw_l2[i], w * w, max_relative = 1e-12);
        }
    }

    #[test]
    fn noisy_run_passes_and_identity_is_first_order() {
        let cfg = EstimateConfig::default();
        let mut rates = Vec::new();
        for dt in [1e-2, 5e-3] {
            let (traj, nl) = cube_run(Some(1.0), Smoothness::C2, dt);
            let h = EstimateHarness::new(&traj, &nl, &cfg).unwrap();
            assert!(h.dual_energy().passed());
            assert!(h.l2_energy(Smoothness::C2).unwrap().passed());
            let id = h.identity(false);
            assert!(id.passed && id.worst_ratio <= 1.0 + 1e-6);
            rates.push(id.rate);
        }
        assert!(rates[1] < 0.75 * rates[0], "identity residual rate not O(dt): {rates:?}");
    }

    #[test]
    fn gradient_noise_refuses_the_laplacian_route() {
        let (traj, nl) = cube_run(Some(1.0), Smoothness::C1, 1e-2);
        let h = EstimateHarness::new(&traj, &nl, &EstimateConfig::default()).unwrap();
        assert!(matches!(h.l2_energy(Smoothness::C2), Err(Error::SmoothnessMismatch(_))));
        assert!(check_thm31(&traj, &nl, &EstimateConfig::default()).unwrap().passed());
    }

    #[test]
    fn strided_trajectories_are_rejected() {
        let d = Domain::new(PI, 8).unwrap();
        let path = WienerPath::new(1, 1, 1e-3, 0.0, 1.0).unwrap();
        let q = NoiseOperator::zero(&d);
        let nl = Nonlinearity::power_law(3.0).unwrap();
        let cfg = SolverConfig { dt: 1e-2, ..Default::default() };
        let traj = solve_strided(&d.basis(1).unwrap(), 0.0, 0.5, Forcing::new(&path, &q), &cfg, &nl, 5).unwrap();
        assert!(EstimateHarness::new(&traj, &nl, &EstimateConfig::default()).is_err());
    }

    #[test]
    fn pair_check_diagonal_and_violations() {
        let times = [0.0, 1.0, 2.0];
        // E grows by 1 per unit time with no forcing: every off-diagonal pair fails.
        let energy = [1.0, 2.0, 3.0];
        let forcing = [0.0; 3];
        let check = PairCheck {
            times: &times,
            energy: &energy,
            gain: None,
            forcing: &forcing,
            weights: None,
            slack: 0.05,
            allowance_rate: 0.0,
        };
        for i in 0..3 {
            assert_relative_eq!(check.margin(i, i).0, -0.05 * energy[i]);
        }
        let out = check.run(10);
        assert_eq!((out.pairs, out.violations), (6, 3));
        assert_eq!(out.worst_pair, [0.0, 2.0]);
        assert_relative_eq!(out.worst_margin, 3.0 - 1.0 - 0.05);
        // Enough forcing restores the inequality.
        let forcing = [0.0, 1.0, 2.0];
        let ok = PairCheck { forcing: &forcing, ..check };
        assert_eq!(ok.run(10).violations, 0);
    }

    #[test]
    fn subsample_keeps_ends() {
        assert_eq!(subsample(5, 10), vec![0, 1, 2, 3, 4]);
        let idx = subsample(10_001, 100);
        assert_eq!((idx[0], *idx.last().unwrap(), idx.len()), (0, 10_000, 100));
    }
}
