//! Experiment configuration: one TOML file per run, validated before anything is solved.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use spm_core::attractor::Functional;
use spm_core::{Domain, EstimateConfig, Hypothesis, NoiseOperator, Nonlinearity, NonlinearSolver, Scheme, Smoothness};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub domain: DomainConfig,
    pub nonlinearity: NonlinearityConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub certification: CertificationConfig,
    pub experiment: Experiment,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    #[serde(default = "default_length")]
    pub length: f64,
    pub n_modes: usize,
    #[serde(default = "default_oversample")]
    pub oversample: usize,
}

fn default_length() -> f64 {
    PI
}
fn default_oversample() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NonlinearityConfig {
    PowerLaw { p: f64 },
    DeadZoneCubic { delta: f64 },
    MollifiedExp,
}

/// `Q` as a list of driven sine modes: channel `j` drives `e_{modes[j]}` with `amplitudes[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub modes: Vec<usize>,
    #[serde(default)]
    pub amplitudes: Vec<f64>,
    #[serde(default = "default_smoothness")]
    pub smoothness: Smoothness,
    /// Defaults to the solver step.
    #[serde(default)]
    pub dt_grid: Option<f64>,
    /// Used by experiments that run on a single path.
    #[serde(default)]
    pub seed: u64,
}

fn default_smoothness() -> Smoothness {
    Smoothness::C2
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { modes: Vec::new(), amplitudes: Vec::new(), smoothness: Smoothness::C2, dt_grid: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub scheme: Scheme,
    pub solver: NonlinearSolver,
    pub dt: f64,
    pub nonlinear_tol: f64,
    pub max_iters: usize,
    pub substep_safety: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = spm_core::SolverConfig::default();
        Self {
            scheme: d.scheme,
            solver: d.solver,
            dt: d.dt,
            nonlinear_tol: d.nonlinear_tol,
            max_iters: d.max_iters,
            substep_safety: d.substep_safety,
        }
    }
}

impl SolverSection {
    pub fn build(&self) -> spm_core::SolverConfig {
        spm_core::SolverConfig {
            dt: self.dt,
            scheme: self.scheme,
            solver: self.solver,
            nonlinear_tol: self.nonlinear_tol,
            max_iters: self.max_iters,
            substep_safety: self.substep_safety,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertificationConfig {
    pub search_box: f64,
    pub grid_step: f64,
}

impl Default for CertificationConfig {
    fn default() -> Self {
        Self { search_box: 10.0, grid_step: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: Option<String>,
    /// Write raw `S` snapshots every `snapshot_stride` stored times (simulate only).
    pub snapshot_stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    Zero,
    /// `scale · e_k`.
    Basis { k: usize, #[serde(default = "one")] scale: f64 },
    Coefficients { values: Vec<f64> },
    /// Keyed random low-mode field with `‖x‖_H = radius`.
    Random { seed: u64, modes: usize, radius: f64 },
}

fn one() -> f64 {
    1.0
}

impl InitialCondition {
    pub fn build(&self, d: &Domain) -> spm_core::Result<spm_core::SpectralField> {
        match self {
            InitialCondition::Zero => Ok(d.zero()),
            InitialCondition::Basis { k, scale } => Ok(d.basis(*k)?.scaled(*scale)),
            InitialCondition::Coefficients { values } => {
                let mut c = values.clone();
                c.resize(d.n_modes().max(c.len()), 0.0);
                d.field(c)
            }
            InitialCondition::Random { seed, modes, radius } => {
                spm_core::random_low_mode_field(d, *seed, *modes, *radius)
            }
        }
    }
}

/// Random ICs for ensembles: `count` keyed fields `Σ_{k≤modes} g_k e_k/k` at H-radius `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ensemble {
    pub count: usize,
    #[serde(default = "default_ic_modes")]
    pub modes: usize,
    #[serde(default = "one")]
    pub radius: f64,
    /// IC seeds are `seed_offset + i`.
    #[serde(default)]
    pub seed_offset: u64,
}

fn default_ic_modes() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateCheck {
    Thm21,
    Thm21Decay,
    Thm31,
    Galerkin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L2Route {
    Laplacian,
    Gradient,
}

impl L2Route {
    pub fn smoothness(self) -> Smoothness {
        match self {
            L2Route::Laplacian => Smoothness::C2,
            L2Route::Gradient => Smoothness::C1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Oracle {
    /// `‖S_t‖₂ = |c| e^{-λ_k (t - t0)}` for `x = c·e_k`, `p = 1`, `Q = 0`.
    Heat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionSpec {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_slack")]
    pub slack: f64,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "one")]
    pub fit_from: f64,
    /// Pass requires the fitted log-log slope of `dist²` to be at most this.
    #[serde(default = "default_slope_max")]
    pub slope_max: f64,
    /// Also require the initial-data-dependent bound.
    #[serde(default)]
    pub require_data_bound: bool,
}

fn default_horizon() -> f64 {
    50.0
}
fn default_slack() -> f64 {
    0.05
}
fn default_stride() -> usize {
    10
}
fn default_slope_max() -> f64 {
    -0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PullbackSpec {
    pub horizons: Vec<f64>,
    pub ics: Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbsorptionSpec {
    pub rhos: Vec<f64>,
    #[serde(default = "default_abs_t0")]
    pub initial_horizon: f64,
    #[serde(default = "default_abs_tmax")]
    pub max_horizon: f64,
    #[serde(default = "default_band")]
    pub band: f64,
    #[serde(default = "default_ic_modes")]
    pub modes: usize,
    /// Pass requires `max/min` of the stabilized radii per seed to stay within `1 + radius_tol`.
    #[serde(default = "default_radius_tol")]
    pub radius_tol: f64,
}

fn default_abs_t0() -> f64 {
    0.25
}
fn default_abs_tmax() -> f64 {
    64.0
}
fn default_band() -> f64 {
    0.05
}
fn default_radius_tol() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Doubling {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "one")]
    pub initial_horizon: f64,
    #[serde(default = "default_max_horizon")]
    pub max_horizon: f64,
}

fn default_tol() -> f64 {
    1e-4
}
fn default_max_horizon() -> f64 {
    1024.0
}

impl Default for Doubling {
    fn default() -> Self {
        Self { tol: default_tol(), initial_horizon: 1.0, max_horizon: default_max_horizon() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    Simulate {
        initial: InitialCondition,
        #[serde(default)]
        t0: f64,
        t1: f64,
        #[serde(default = "one_usize")]
        stride: usize,
        #[serde(default)]
        oracle: Option<Oracle>,
        #[serde(default = "default_oracle_tol")]
        oracle_tol: f64,
    },
    VerifyHypotheses {
        #[serde(default = "all_hypotheses")]
        hypotheses: Vec<Hypothesis>,
        /// With expectations the run passes iff the classification matches them; otherwise iff all pass.
        #[serde(default)]
        expect_pass: Vec<Hypothesis>,
        #[serde(default)]
        expect_fail: Vec<Hypothesis>,
    },
    VerifyEstimates {
        seeds: Vec<u64>,
        initial: InitialCondition,
        #[serde(default)]
        t0: f64,
        t1: f64,
        #[serde(default = "all_checks")]
        checks: Vec<EstimateCheck>,
        /// Route for `thm31`; defaults to the one matching the noise class.
        #[serde(default)]
        route: Option<L2Route>,
        #[serde(default)]
        estimate: EstimateConfig,
        /// Rerun every seed at `dt/2` and `dt/4` and compare margins.
        #[serde(default)]
        refine: bool,
    },
    Pullback {
        seeds: Vec<u64>,
        #[serde(default)]
        contraction: Option<ContractionSpec>,
        #[serde(default)]
        ensemble: Option<PullbackSpec>,
        #[serde(default)]
        absorption: Option<AbsorptionSpec>,
        #[serde(default = "pair")]
        ics: Ensemble,
    },
    Attractor {
        ics: Ensemble,
        #[serde(default)]
        doubling: Doubling,
        #[serde(default = "default_diameter_tol")]
        diameter_tol: f64,
        #[serde(default = "default_agree_tol")]
        agree_tol: f64,
        #[serde(default = "one")]
        invariance_t: f64,
        #[serde(default = "default_invariance_tol")]
        invariance_tol: f64,
    },
    InvariantMeasure {
        seeds: Vec<u64>,
        ics: Ensemble,
        #[serde(default)]
        doubling: Doubling,
        #[serde(default = "default_functionals")]
        functionals: Vec<Functional>,
    },
}

fn one_usize() -> usize {
    1
}
fn default_oracle_tol() -> f64 {
    1e-3
}
fn all_hypotheses() -> Vec<Hypothesis> {
    Hypothesis::ALL.to_vec()
}
fn all_checks() -> Vec<EstimateCheck> {
    vec![EstimateCheck::Thm21, EstimateCheck::Thm21Decay, EstimateCheck::Thm31, EstimateCheck::Galerkin]
}
fn pair() -> Ensemble {
    Ensemble { count: 2, modes: default_ic_modes(), radius: 1.0, seed_offset: 0 }
}
fn default_diameter_tol() -> f64 {
    1e-3
}
fn default_agree_tol() -> f64 {
    2e-3
}
fn default_invariance_tol() -> f64 {
    5e-3
}
fn default_functionals() -> Vec<Functional> {
    vec![Functional::L2Norm, Functional::HNorm, Functional::Coefficient(1)]
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Simulate { .. } => "simulate",
            Experiment::VerifyHypotheses { .. } => "verify-hypotheses",
            Experiment::VerifyEstimates { .. } => "verify-estimates",
            Experiment::Pullback { .. } => "pullback",
            Experiment::Attractor { .. } => "attractor",
            Experiment::InvariantMeasure { .. } => "invariant-measure",
        }
    }

    /// Noise window `[t_min, t_max]` covering every time the experiment touches.
    pub fn window(&self) -> (f64, f64) {
        match self {
            Experiment::Simulate { t0, t1, .. } | Experiment::VerifyEstimates { t0, t1, .. } => {
                (t0.min(0.0) - 1.0, t1.max(0.0) + 1.0)
            }
            Experiment::VerifyHypotheses { .. } => (-1.0, 1.0),
            Experiment::Pullback { contraction, ensemble, absorption, .. } => {
                let mut h: f64 = 0.0;
                if let Some(c) = contraction {
                    h = h.max(c.horizon);
                }
                if let Some(e) = ensemble {
                    h = e.horizons.iter().copied().fold(h, f64::max);
                }
                if let Some(a) = absorption {
                    h = h.max(a.max_horizon);
                }
                (-h - 1.0, 1.0)
            }
            Experiment::Attractor { doubling, invariance_t, .. } => {
                (-doubling.max_horizon - 1.0, invariance_t.max(0.0) + 1.0)
            }
            Experiment::InvariantMeasure { doubling, .. } => (-doubling.max_horizon - 1.0, 1.0),
        }
    }
}

/// Objects built from a validated config.
pub struct Built {
    pub domain: Domain,
    pub nl: Nonlinearity,
    pub q: NoiseOperator,
    pub solver: spm_core::SolverConfig,
    pub dt_grid: f64,
    pub window: (f64, f64),
}

impl Built {
    pub fn path(&self, seed: u64) -> spm_core::Result<spm_core::WienerPath> {
        spm_core::WienerPath::new(seed, self.q.channels().max(1), self.dt_grid, self.window.0, self.window.1)
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = text.parse().map_err(|e| CliError::Config(format!("malformed config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig =
            toml::Value::Table(table).try_into().map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.noise.modes.len() != self.noise.amplitudes.len() {
            return bad(format!(
                "noise has {} modes but {} amplitudes",
                self.noise.modes.len(),
                self.noise.amplitudes.len()
            ));
        }
        match &self.experiment {
            Experiment::Simulate { t0, t1, oracle, initial, .. } => {
                if t1 < t0 {
                    return bad(format!("simulate needs t0 ≤ t1, got {t0} > {t1}"));
                }
                if oracle.is_some() {
                    let heat = matches!(self.nonlinearity, NonlinearityConfig::PowerLaw { p } if p == 1.0);
                    if !heat || !self.noise.modes.is_empty() || !matches!(initial, InitialCondition::Basis { .. }) {
                        return bad("the heat oracle needs power-law p = 1, no noise and a basis initial condition".into());
                    }
                }
            }
            Experiment::VerifyEstimates { seeds, route, checks, t0, t1, .. } => {
                if seeds.is_empty() {
                    return bad("verify-estimates needs at least one seed".into());
                }
                if t1 <= t0 {
                    return bad(format!("verify-estimates needs t0 < t1, got {t0}, {t1}"));
                }
                if checks.contains(&EstimateCheck::Thm31)
                    && *route == Some(L2Route::Laplacian)
                    && self.noise.smoothness != Smoothness::C2
                    && !self.noise.modes.is_empty()
                {
                    return bad("the Laplacian route of thm31 uses ΔQW and needs noise smoothness C2_0".into());
                }
            }
            Experiment::Pullback { seeds, contraction, ensemble, absorption, .. } => {
                if seeds.is_empty() {
                    return bad("pullback needs at least one seed".into());
                }
                if contraction.is_none() && ensemble.is_none() && absorption.is_none() {
                    return bad("pullback needs a contraction, ensemble or absorption section".into());
                }
            }
            Experiment::Attractor { ics, .. } | Experiment::InvariantMeasure { ics, .. } => {
                if ics.count == 0 {
                    return bad("ensemble needs at least one initial condition".into());
                }
            }
            Experiment::VerifyHypotheses { .. } => {}
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Built, CliError> {
        let d = &self.domain;
        let domain = Domain::with_oversample(d.length, d.n_modes, d.oversample)?;
        let nl = match self.nonlinearity {
            NonlinearityConfig::PowerLaw { p } => Nonlinearity::power_law(p)?,
            NonlinearityConfig::DeadZoneCubic { delta } => Nonlinearity::dead_zone_cubic(delta)?,
            NonlinearityConfig::MollifiedExp => Nonlinearity::mollified_exp(),
        };
        let q = if self.noise.modes.is_empty() {
            NoiseOperator::zero(&domain)
        } else {
            NoiseOperator::modal(&domain, &self.noise.modes, self.noise.amplitudes.clone(), self.noise.smoothness)?
        };
        let solver = self.solver.build();
        solver.validate()?;
        Ok(Built {
            dt_grid: self.noise.dt_grid.unwrap_or(solver.dt),
            window: self.experiment.window(),
            domain,
            nl,
            q,
            solver,
        })
    }
}

/// Applies `a.b.c=value`; the value is read as a TOML literal, or as a bare string if that fails.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
