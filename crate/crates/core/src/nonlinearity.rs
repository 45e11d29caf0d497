//! The catalog of nonlinearities `Φ` with their derivative and the gauge `ζ`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{adaptive_simpson, expint};

/// Absolute tolerance for the quadrature defining `ζ`.
pub const ZETA_TOL: f64 = 1e-10;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied `Φ`, optionally with its derivative.
#[derive(Clone)]
pub struct CustomPhi {
    pub name: String,
    pub phi: ScalarFn,
    pub phi_prime: Option<ScalarFn>,
    /// Points where `Φ'` is not smooth; quadrature splits there.
    pub breakpoints: Vec<f64>,
}

#[derive(Clone)]
pub enum NonlinearityKind {
    /// `Φ(s) = s|s|^{p-1}`.
    PowerLaw,
    /// `(r+δ)³` below `-δ`, zero on `(-δ, δ)`, `(r-δ)³` above `δ`.
    DeadZoneCubic { delta: f64 },
    /// `Φ(r) = ∫₀^r exp(-1/|s|) ds`.
    MollifiedExp,
    Custom(CustomPhi),
}

impl fmt::Debug for NonlinearityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NonlinearityKind::PowerLaw => write!(f, "PowerLaw"),
            NonlinearityKind::DeadZoneCubic { delta } => write!(f, "DeadZoneCubic({delta})"),
            NonlinearityKind::MollifiedExp => write!(f, "MollifiedExp"),
            NonlinearityKind::Custom(c) => write!(f, "Custom({})", c.name),
        }
    }
}

/// Serializable description of a catalog entry, embedded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearityInfo {
    pub kind: String,
    pub p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Nonlinearity {
    kind: NonlinearityKind,
    p: f64,
}

impl Nonlinearity {
    pub fn power_law(p: f64) -> Result<Self> {
        if !(p.is_finite() && p >= 1.0) {
            return Err(Error::invalid(format!("power-law exponent must be ≥ 1, got {p}")));
        }
        Ok(Self { kind: NonlinearityKind::PowerLaw, p })
    }

    /// The piecewise cubic with a dead zone of half-width `delta`; growth exponent 3.
    pub fn dead_zone_cubic(delta: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::invalid(format!("dead-zone half-width must be positive, got {delta}")));
        }
        Ok(Self { kind: NonlinearityKind::DeadZoneCubic { delta }, p: 3.0 })
    }

    /// `∫₀^r exp(-1/|s|) ds`; growth exponent 1.
    pub fn mollified_exp() -> Self {
        Self { kind: NonlinearityKind::MollifiedExp, p: 1.0 }
    }

    pub fn custom(custom: CustomPhi, p: f64) -> Result<Self> {
        if !(p.is_finite() && p >= 1.0) {
            return Err(Error::invalid(format!("growth exponent must be ≥ 1, got {p}")));
        }
        Ok(Self { kind: NonlinearityKind::Custom(custom), p })
    }

    pub fn kind(&self) -> &NonlinearityKind {
        &self.kind
    }

    /// Growth exponent `p`.
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn label(&self) -> String {
        match &self.kind {
            NonlinearityKind::PowerLaw => format!("power-law(p={})", self.p),
            NonlinearityKind::DeadZoneCubic { delta } => format!("dead-zone-cubic(delta={delta})"),
            NonlinearityKind::MollifiedExp => "mollified-exp".to_string(),
            NonlinearityKind::Custom(c) => format!("custom({})", c.name),
        }
    }

    pub fn info(&self) -> NonlinearityInfo {
        let (kind, delta) = match &self.kind {
            NonlinearityKind::PowerLaw => ("power-law".to_string(), None),
            NonlinearityKind::DeadZoneCubic { delta } => ("dead-zone-cubic".to_string(), Some(*delta)),
            NonlinearityKind::MollifiedExp => ("mollified-exp".to_string(), None),
            NonlinearityKind::Custom(c) => (format!("custom:{}", c.name), None),
        };
        NonlinearityInfo { kind, p: self.p, delta }
    }

    /// Points where `Φ'` has a kink.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.kind {
            NonlinearityKind::PowerLaw | NonlinearityKind::MollifiedExp => vec![0.0],
            NonlinearityKind::DeadZoneCubic { delta } => vec![-delta, *delta],
            NonlinearityKind::Custom(c) => c.breakpoints.clone(),
        }
    }

    pub fn has_derivative(&self) -> bool {
        !matches!(&self.kind, NonlinearityKind::Custom(CustomPhi { phi_prime: None, .. }))
    }

    pub fn phi(&self, s: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::PowerLaw => power(s, self.p),
            NonlinearityKind::DeadZoneCubic { delta } => dead_zone(s, *delta),
            NonlinearityKind::MollifiedExp => mollified_exp(s),
            NonlinearityKind::Custom(c) => (c.phi)(s),
        }
    }

    /// `Φ'(s)`. At the kinks of the catalog entries both one-sided derivatives agree,
    /// so the returned value is the continuous extension.
    pub fn phi_prime(&self, s: f64) -> Result<f64> {
        Ok(match &self.kind {
            NonlinearityKind::PowerLaw => power_prime(s, self.p),
            NonlinearityKind::DeadZoneCubic { delta } => dead_zone_prime(s, *delta),
            NonlinearityKind::MollifiedExp => mollified_exp_prime(s),
            NonlinearityKind::Custom(c) => match &c.phi_prime {
                Some(d) => d(s),
                None => return Err(Error::MissingDerivative(c.name.clone())),
            },
        })
    }

    /// Applies `Φ` elementwise.
    pub fn phi_into(&self, s: &[f64], out: &mut [f64]) {
        debug_assert_eq!(s.len(), out.len());
        match &self.kind {
            NonlinearityKind::PowerLaw if self.p == 1.0 => out.copy_from_slice(s),
            NonlinearityKind::PowerLaw if self.p == 3.0 => {
                for (o, &x) in out.iter_mut().zip(s) {
                    *o = x * x * x;
                }
            }
            _ => {
                for (o, &x) in out.iter_mut().zip(s) {
                    *o = self.phi(x);
                }
            }
        }
    }

    /// Applies `Φ'` elementwise.
    pub fn phi_prime_into(&self, s: &[f64], out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(s.len(), out.len());
        match &self.kind {
            NonlinearityKind::PowerLaw if self.p == 1.0 => out.iter_mut().for_each(|o| *o = 1.0),
            NonlinearityKind::PowerLaw if self.p == 3.0 => {
                for (o, &x) in out.iter_mut().zip(s) {
                    *o = 3.0 * x * x;
                }
            }
            _ => {
                for (o, &x) in out.iter_mut().zip(s) {
                    *o = self.phi_prime(x)?;
                }
            }
        }
        Ok(())
    }

    /// Upper bound of `Φ'` over `[-r, r]`.
    pub fn phi_prime_bound(&self, r: f64) -> Result<f64> {
        let r = r.abs();
        match &self.kind {
            // Φ' is even and nondecreasing in |s| for every built-in entry.
            NonlinearityKind::PowerLaw
            | NonlinearityKind::DeadZoneCubic { .. }
            | NonlinearityKind::MollifiedExp => self.phi_prime(r),
            NonlinearityKind::Custom(_) => {
                const SAMPLES: usize = 256;
                let mut m: f64 = 0.0;
                for i in 0..=SAMPLES {
                    let s = -r + 2.0 * r * i as f64 / SAMPLES as f64;
                    m = m.max(self.phi_prime(s)?.abs());
                }
                Ok(m)
            }
        }
    }

    /// `ζ'(s) = sqrt(Φ'(s))`, rejecting a negative derivative.
    pub fn zeta_prime(&self, s: f64) -> Result<f64> {
        let d = self.phi_prime(s)?;
        if d < 0.0 {
            return Err(Error::NegativeDerivative { s, value: d });
        }
        Ok(d.sqrt())
    }

    /// `ζ(s) = ∫₀^s sqrt(Φ'(r)) dr`. Closed form for the power law, adaptive Simpson otherwise.
    pub fn zeta(&self, s: f64) -> Result<f64> {
        if s == 0.0 {
            return Ok(0.0);
        }
        if let NonlinearityKind::PowerLaw = self.kind {
            let p = self.p;
            return Ok(2.0 * p.sqrt() / (p + 1.0) * s * s.abs().powf(0.5 * (p - 1.0)));
        }
        let (lo, hi, sign) = if s > 0.0 { (0.0, s, 1.0) } else { (s, 0.0, -1.0) };
        Ok(sign * self.zeta_increment(lo, hi, ZETA_TOL)?)
    }

    /// `∫_a^b sqrt(Φ'(r)) dr` for `a ≤ b`, split at the breakpoints.
    pub fn zeta_increment(&self, a: f64, b: f64, tol: f64) -> Result<f64> {
        if let NonlinearityKind::PowerLaw = self.kind {
            return Ok(self.zeta(b)? - self.zeta(a)?);
        }
        let mut cuts: Vec<f64> = vec![a];
        cuts.extend(self.breakpoints().into_iter().filter(|&x| x > a && x < b));
        cuts.push(b);
        let pieces = (cuts.len() - 1) as f64;
        let mut integrand = |r: f64| self.zeta_prime(r);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            total += adaptive_simpson(&mut integrand, w[0], w[1], tol / pieces)?;
        }
        Ok(total)
    }
}

#[inline]
fn power(s: f64, p: f64) -> f64 {
    if p == 1.0 {
        s
    } else if p == 3.0 {
        s * s * s
    } else {
        s * s.abs().powf(p - 1.0)
    }
}

#[inline]
fn power_prime(s: f64, p: f64) -> f64 {
    if p == 1.0 {
        1.0
    } else if p == 3.0 {
        3.0 * s * s
    } else {
        p * s.abs().powf(p - 1.0)
    }
}

#[inline]
fn dead_zone(s: f64, delta: f64) -> f64 {
    if s <= -delta {
        (s + delta).powi(3)
    } else if s >= delta {
        (s - delta).powi(3)
    } else {
        0.0
    }
}

#[inline]
fn dead_zone_prime(s: f64, delta: f64) -> f64 {
    let e = (s.abs() - delta).max(0.0);
    3.0 * e * e
}

/// `∫₀^r e^{-1/|s|} ds = r·E₂(1/|r|)`, from the substitution `u = 1/s`.
fn mollified_exp(r: f64) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    let a = r.abs();
    r * expint(2, 1.0 / a)
}

fn mollified_exp_prime(r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else {
        (-1.0 / r.abs()).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Composite midpoint rule with many cells, independent of the adaptive scheme.
    fn midpoint(f: impl Fn(f64) -> f64, a: f64, b: f64, cells: usize) -> f64 {
        let h = (b - a) / cells as f64;
        (0..cells).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
    }

    #[test]
    fn phi_values() {
        assert_eq!(Nonlinearity::power_law(3.0).unwrap().phi(2.0), 8.0);
        let dz = Nonlinearity::dead_zone_cubic(1.0).unwrap();
        assert_eq!(dz.phi(0.5), 0.0);
        assert_eq!(dz.phi(2.0), 1.0);
        assert_eq!(dz.phi(-3.0), -8.0);
        let me = Nonlinearity::mollified_exp();
        assert_abs_diff_eq!(me.phi_prime(1.0).unwrap(), 0.367_879_441_171_442_3, epsilon = 1e-15);
    }

    #[test]
    fn phi_vanishes_at_zero() {
        for nl in [
            Nonlinearity::power_law(1.0).unwrap(),
            Nonlinearity::power_law(2.5).unwrap(),
            Nonlinearity::dead_zone_cubic(0.3).unwrap(),
            Nonlinearity::mollified_exp(),
        ] {
            assert_eq!(nl.phi(0.0), 0.0);
            assert_eq!(nl.zeta(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn mollified_exp_matches_quadrature() {
        let me = Nonlinearity::mollified_exp();
        for r in [0.05, 0.3, 1.0, 2.0, 7.5] {
            let oracle = midpoint(|s| (-1.0 / s).exp(), 0.0, r, 200_000);
            assert_abs_diff_eq!(me.phi(r), oracle, epsilon = 1e-9);
            assert_abs_diff_eq!(me.phi(-r), -oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for nl in [
            Nonlinearity::power_law(2.5).unwrap(),
            Nonlinearity::dead_zone_cubic(1.0).unwrap(),
            Nonlinearity::mollified_exp(),
        ] {
            for s in [-3.1, -0.7, 0.4, 1.3, 2.2] {
                let fd = (nl.phi(s + h) - nl.phi(s - h)) / (2.0 * h);
                let d = nl.phi_prime(s).unwrap();
                assert!((fd - d).abs() < 1e-6 * (1.0 + d.abs()), "{} at {s}: {fd} vs {d}", nl.label());
            }
        }
    }

    #[test]
    fn zeta_closed_form_power_law() {
        let nl = Nonlinearity::power_law(3.0).unwrap();
        assert_abs_diff_eq!(nl.zeta(2.0).unwrap(), 2.0 * 3f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(nl.zeta(-2.0).unwrap(), -2.0 * 3f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn zeta_quadrature_dead_zone() {
        let nl = Nonlinearity::dead_zone_cubic(1.0).unwrap();
        let oracle = midpoint(|r| (3.0f64).sqrt() * (r.abs() - 1.0).max(0.0), 0.0, 2.0, 1_000_000);
        assert_abs_diff_eq!(nl.zeta(2.0).unwrap(), oracle, epsilon = 1e-9);
        assert_abs_diff_eq!(oracle, 3f64.sqrt() / 2.0, epsilon = 1e-9);
        assert_eq!(nl.zeta(0.8).unwrap(), 0.0);
    }

    #[test]
    fn zeta_rejects_negative_derivative() {
        let decreasing = CustomPhi {
            name: "neg".into(),
            phi: Arc::new(|s| -s),
            phi_prime: Some(Arc::new(|_| -1.0)),
            breakpoints: vec![],
        };
        let nl = Nonlinearity::custom(decreasing, 1.0).unwrap();
        assert!(matches!(nl.zeta(1.0), Err(Error::NegativeDerivative { .. })));
    }

    #[test]
    fn custom_without_derivative() {
        let c = CustomPhi { name: "plain".into(), phi: Arc::new(|s| s), phi_prime: None, breakpoints: vec![] };
        let nl = Nonlinearity::custom(c, 1.0).unwrap();
        assert!(!nl.has_derivative());
        assert!(matches!(nl.phi_prime(0.5), Err(Error::MissingDerivative(_))));
    }

    #[test]
    fn slice_evaluation_matches_scalar() {
        let xs = [-2.0, -0.5, 0.0, 0.25, 1.5];
        for nl in [Nonlinearity::power_law(3.0).unwrap(), Nonlinearity::power_law(1.7).unwrap(), Nonlinearity::mollified_exp()] {
            let mut out = [0.0; 5];
            nl.phi_into(&xs, &mut out);
            for (x, o) in xs.iter().zip(out) {
                assert_eq!(o, nl.phi(*x));
            }
            nl.phi_prime_into(&xs, &mut out).unwrap();
            for (x, o) in xs.iter().zip(out) {
                assert_eq!(o, nl.phi_prime(*x).unwrap());
            }
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(Nonlinearity::power_law(0.5).is_err());
        assert!(Nonlinearity::dead_zone_cubic(0.0).is_err());
    }
}
