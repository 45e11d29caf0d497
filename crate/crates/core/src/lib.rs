//! Spectral-Galerkin solver and verification harness for the stochastic porous
//! medium equation `dX = ΔΦ(X) dt + Q dW` on a Dirichlet interval.

pub mod attractor;
pub mod certify;
pub mod domain;
pub mod error;
pub mod estimates;
pub mod integrator;
pub mod noise;
pub mod nonlinearity;
pub mod quadrature;

pub use certify::{certify, certify_all, Certificate, CertificationPlan, Hypothesis};
pub use domain::{Domain, SpectralField, Workspace};
pub use error::{Error, Result};
pub use nonlinearity::{CustomPhi, Nonlinearity, NonlinearityInfo, NonlinearityKind};
pub use noise::{noise_growth_report, qw, wiener_shift, NoiseOperator, PathInfo, Smoothness, WienerPath};
pub use integrator::{check_cocycle, evolve, solve, solve_strided, step, CocycleResiduals, Forcing, NonlinearSolver, Scheme, SolverConfig, StepDiagnostics, Trajectory};
pub use estimates::{
    check_galerkin_energy, check_thm21, check_thm31, EstimateConfig, EstimateConstants, EstimateHarness, IdentityReport,
    InequalityReport,
};
pub use attractor::{
    absorption_radius, contraction_check, estimate_eta, estimate_eta0, pullback_ensemble, random_low_mode_field,
    sample_invariant_measure, ContractionReport, EtaEstimate, MeasureSample, PullbackReport,
};
