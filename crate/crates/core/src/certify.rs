//! Grid certification of the structural hypotheses on `Φ`.
//!
//! Every check is a finite scan of `[-R, R]` (pointwise conditions) or of all
//! pairs `s < t` in that grid. Constants are the best values over the grid, so
//! they hold at every scanned point but carry no guarantee off the grid.

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinearity::{Nonlinearity, NonlinearityInfo, NonlinearityKind};

pub const DEFAULT_SEARCH_BOX: f64 = 10.0;
pub const DEFAULT_GRID_STEP: f64 = 1e-3;
/// Relative slack on every inequality: `lhs ≥ rhs - tol·max(1, |lhs|, |rhs|)`.
pub const CERT_TOL: f64 = 1e-9;
/// Largest total length of grid cells where `Φ' ≤ 0` still read as a null set.
pub const DEGENERATE_MEASURE_TOL: f64 = 1e-2;
const MAX_GRID_POINTS: usize = 20_000_001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Monotonicity, coercivity and growth.
    A1A3,
    /// ζ-weak monotonicity and ζ-coercivity with the integral gauge.
    #[serde(rename = "Hyp11_zeta")]
    Hyp11Zeta,
    /// `Φ ∈ C¹`, ζ-coercivity, `Φ' > 0` a.e., and polynomial growth of `Φ'`.
    Hyp14,
    /// `(s-t)(Φ(s)-Φ(t)) ≥ η|s-t|^{p+1}` with `p > 1`.
    StrongMono51,
    /// The derivative sandwich `((p+1)²/4)η|s|^{p-1} ≤ Φ'(s) ≤ κ(1+|s|^{p-1})`.
    Cond52,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 5] =
        [Hypothesis::A1A3, Hypothesis::Hyp11Zeta, Hypothesis::Hyp14, Hypothesis::StrongMono51, Hypothesis::Cond52];

    pub fn name(self) -> &'static str {
        match self {
            Hypothesis::A1A3 => "A1A3",
            Hypothesis::Hyp11Zeta => "Hyp11_zeta",
            Hypothesis::Hyp14 => "Hyp14",
            Hypothesis::StrongMono51 => "StrongMono51",
            Hypothesis::Cond52 => "Cond52",
        }
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Hypothesis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Hypothesis::ALL
            .into_iter()
            .find(|h| h.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown hypothesis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub hypothesis: Hypothesis,
    pub nonlinearity: NonlinearityInfo,
    pub passed: bool,
    pub constants: BTreeMap<String, f64>,
    /// Tightest or most violated `(s, t)`; pointwise conditions report `(s, s)`.
    pub witness: Option<[f64; 2]>,
    pub search_box: f64,
    pub grid_step: f64,
    pub tolerance: f64,
    /// Failed sub-conditions, in the order they were checked.
    pub notes: Vec<String>,
}

impl Certificate {
    pub fn constant(&self, key: &str) -> Option<f64> {
        self.constants.get(key).copied()
    }

    /// `Err(Uncertified)` unless the certificate passed.
    pub fn require(&self) -> Result<&Self> {
        if self.passed {
            Ok(self)
        } else {
            let why = if self.notes.is_empty() { String::new() } else { format!(": {}", self.notes.join("; ")) };
            Err(Error::Uncertified(format!("{} fails {}{}", self.nonlinearity.kind, self.hypothesis, why)))
        }
    }
}

/// Certifies one hypothesis with the default tolerance.
pub fn certify(nl: &Nonlinearity, hypothesis: Hypothesis, search_box: f64, grid_step: f64) -> Result<Certificate> {
    Ok(CertificationPlan::new(nl, search_box, grid_step)?.certify(hypothesis))
}

/// Certifies every hypothesis, sharing the grid evaluations.
pub fn certify_all(nl: &Nonlinearity, search_box: f64, grid_step: f64) -> Result<Vec<Certificate>> {
    let plan = CertificationPlan::new(nl, search_box, grid_step)?;
    Ok(Hypothesis::ALL.into_iter().map(|h| plan.certify(h)).collect())
}

/// Grid values of `Φ`, `Φ'` and `ζ` reused across hypotheses.
pub struct CertificationPlan<'a> {
    nl: &'a Nonlinearity,
    search_box: f64,
    grid_step: f64,
    tol: f64,
    /// Index of `s = 0`.
    center: usize,
    s: Vec<f64>,
    phi: Vec<f64>,
    dphi: Result<Vec<f64>>,
    zeta: OnceCell<Result<Vec<f64>>>,
}

impl<'a> CertificationPlan<'a> {
    pub fn new(nl: &'a Nonlinearity, search_box: f64, grid_step: f64) -> Result<Self> {
        if !(search_box.is_finite() && search_box > 0.0) {
            return Err(Error::invalid(format!("search box must be positive, got {search_box}")));
        }
        if !(grid_step.is_finite() && grid_step > 0.0 && grid_step <= search_box) {
            return Err(Error::invalid(format!("grid step must lie in (0, R], got {grid_step}")));
        }
        let n = (search_box / grid_step).round() as usize;
        if 2 * n + 1 > MAX_GRID_POINTS {
            return Err(Error::invalid(format!("certification grid of {} points is too large", 2 * n + 1)));
        }
        let s: Vec<f64> = (0..=2 * n).map(|i| (i as f64 - n as f64) * grid_step).collect();
        let phi = s.iter().map(|&x| nl.phi(x)).collect();
        let dphi = s.iter().map(|&x| nl.phi_prime(x)).collect();
        Ok(Self { nl, search_box, grid_step, tol: CERT_TOL, center: n, s, phi, dphi, zeta: OnceCell::new() })
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn search_box(&self) -> f64 {
        self.search_box
    }

    /// The grid `s_i = (i - n)h`.
    pub fn grid(&self) -> &[f64] {
        &self.s
    }

    /// Indices with `|s| ≥ R/2`, where asymptotic constants are read off.
    pub fn outer_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.outer()
    }

    pub fn phi_prime_values(&self) -> Result<&[f64]> {
        self.dphi.as_deref().map_err(Clone::clone)
    }

    /// `ζ` on the grid, accumulated cell by cell outward from `s = 0`.
    pub fn zeta_values(&self) -> Result<&[f64]> {
        self.zeta_grid().as_deref().map_err(Clone::clone)
    }

    pub fn certify(&self, hypothesis: Hypothesis) -> Certificate {
        let mut cert = Certificate {
            hypothesis,
            nonlinearity: self.nl.info(),
            passed: false,
            constants: BTreeMap::new(),
            witness: None,
            search_box: self.search_box,
            grid_step: self.grid_step,
            tolerance: self.tol,
            notes: Vec::new(),
        };
        cert.constants.insert("p".into(), self.nl.p());
        match hypothesis {
            Hypothesis::A1A3 => self.a1a3(&mut cert),
            Hypothesis::Hyp11Zeta => self.hyp11(&mut cert),
            Hypothesis::Hyp14 => self.hyp14(&mut cert),
            Hypothesis::StrongMono51 => self.strong_mono(&mut cert),
            Hypothesis::Cond52 => self.cond52(&mut cert),
        }
        cert.passed = cert.notes.is_empty();
        cert
    }

    fn pair(&self, e: Extremum) -> Option<[f64; 2]> {
        e.found().then(|| [self.s[e.i], self.s[e.j]])
    }

    fn point(&self, i: usize) -> Option<[f64; 2]> {
        Some([self.s[i], self.s[i]])
    }

    /// Indices with `|s| ≥ R/2`, where asymptotic constants are read off.
    fn outer(&self) -> impl Iterator<Item = usize> + '_ {
        let half = 0.5 * self.search_box;
        (0..self.s.len()).filter(move |&i| self.s[i].abs() >= half)
    }

    fn a1a3(&self, cert: &mut Certificate) {
        let (s, phi) = (&self.s[..], &self.phi[..]);
        let worst = pair_min(s.len(), |i, j| (phi[j] - phi[i]) * (s[j] - s[i]));
        cert.witness = self.pair(worst);
        if relative_deficit(worst.value, 0.0) < -self.tol {
            cert.notes.push(format!("monotonicity violated: (Φ(t)-Φ(s))(t-s) = {:e}", worst.value));
        }

        let p = self.nl.p();
        let a = self.outer().map(|i| phi[i] * s[i] / s[i].abs().powf(p + 1.0)).fold(f64::INFINITY, f64::min);
        cert.constants.insert("a".into(), a);
        if !(a > 0.0) {
            cert.notes.push(format!("coercivity constant a = {a:e} is not positive"));
        } else {
            let c = (0..s.len()).map(|i| a * s[i].abs().powf(p + 1.0) - phi[i] * s[i]).fold(0.0, f64::max);
            cert.constants.insert("c".into(), c);
        }
        let c1 = self.outer().map(|i| phi[i].abs() / s[i].abs().powf(p)).fold(0.0, f64::max);
        let c2 = (0..s.len()).map(|i| phi[i].abs() - c1 * s[i].abs().powf(p)).fold(0.0, f64::max);
        cert.constants.insert("c1".into(), c1);
        cert.constants.insert("c2".into(), c2);
        if !(c1.is_finite() && c2.is_finite()) {
            cert.notes.push("growth constants are not finite".into());
        }
    }

    fn zeta_grid(&self) -> &Result<Vec<f64>> {
        self.zeta.get_or_init(|| {
            if let NonlinearityKind::PowerLaw = self.nl.kind() {
                return self.s.iter().map(|&x| self.nl.zeta(x)).collect();
            }
            let (s, n) = (&self.s, self.center);
            let cell_tol = crate::nonlinearity::ZETA_TOL * self.grid_step / self.search_box;
            let mut z = vec![0.0; s.len()];
            for i in n + 1..s.len() {
                z[i] = z[i - 1] + self.nl.zeta_increment(s[i - 1], s[i], cell_tol)?;
            }
            for i in (0..n).rev() {
                z[i] = z[i + 1] - self.nl.zeta_increment(s[i], s[i + 1], cell_tol)?;
            }
            Ok(z)
        })
    }

    /// ζ-coercivity `ζ(s)² ≥ a'|s|^{p+1} - c'`; records `a_zeta`, `c_zeta`.
    fn zeta_coercivity(&self, zeta: &[f64], cert: &mut Certificate) {
        let (s, p) = (&self.s, self.nl.p());
        let a = self.outer().map(|i| zeta[i] * zeta[i] / s[i].abs().powf(p + 1.0)).fold(f64::INFINITY, f64::min);
        cert.constants.insert("a_zeta".into(), a);
        if !(a > 0.0) {
            cert.notes.push(format!("ζ-coercivity constant a = {a:e} is not positive"));
            return;
        }
        let c = (0..s.len()).map(|i| a * s[i].abs().powf(p + 1.0) - zeta[i] * zeta[i]).fold(0.0, f64::max);
        cert.constants.insert("c_zeta".into(), c);
    }

    fn zeta_or_note(&self, cert: &mut Certificate) -> Option<&[f64]> {
        match self.zeta_grid() {
            Ok(z) => Some(z),
            Err(Error::NegativeDerivative { s, value }) => {
                cert.notes.push(format!("Φ'({s}) = {value:e} < 0, the integral gauge is undefined"));
                cert.witness = Some([*s, *s]);
                None
            }
            Err(e) => {
                cert.notes.push(format!("ζ unavailable: {e}"));
                None
            }
        }
    }

    fn hyp11(&self, cert: &mut Certificate) {
        let Some(zeta) = self.zeta_or_note(cert) else { return };
        let (s, phi) = (&self.s[..], &self.phi[..]);
        let worst = pair_min(s.len(), |i, j| {
            let lhs = (phi[j] - phi[i]) * (s[j] - s[i]);
            let dz = zeta[j] - zeta[i];
            relative_deficit(lhs, dz * dz)
        });
        cert.witness = self.pair(worst);
        cert.constants.insert("min_relative_margin".into(), worst.value);
        if worst.value < -self.tol {
            cert.notes.push(format!("ζ-weak monotonicity violated by relative margin {:e}", worst.value));
        }
        self.zeta_coercivity(zeta, cert);
    }

    fn hyp14(&self, cert: &mut Certificate) {
        let dphi = match &self.dphi {
            Ok(d) => d,
            Err(e) => {
                cert.notes.push(format!("Φ is not known to be C¹: {e}"));
                return;
            }
        };
        let (s, p) = (&self.s, self.nl.p());
        let mut degenerate = 0usize;
        let mut first_degenerate = None;
        let mut most_negative: Option<usize> = None;
        for (i, &d) in dphi.iter().enumerate() {
            if d <= 0.0 {
                degenerate += 1;
                first_degenerate.get_or_insert(i);
            }
            if d < 0.0 && most_negative.is_none_or(|k| d < dphi[k]) {
                most_negative = Some(i);
            }
        }
        let measure = degenerate as f64 * self.grid_step;
        cert.constants.insert("degenerate_measure".into(), measure);
        if let Some(k) = most_negative {
            cert.witness = self.point(k);
            cert.notes.push(format!("Φ'({}) = {:e} < 0", s[k], dphi[k]));
            return;
        }
        if let Some(k) = first_degenerate {
            cert.witness = self.point(k);
        }
        if measure > DEGENERATE_MEASURE_TOL {
            cert.notes.push(format!("Φ' vanishes on a set of measure ≈ {measure}"));
        }
        let c1_tilde = (0..s.len()).map(|i| dphi[i] / (s[i].abs().powf(p - 1.0) + 1.0)).fold(0.0, f64::max);
        cert.constants.insert("c1_tilde".into(), c1_tilde);
        if !c1_tilde.is_finite() {
            cert.notes.push("Φ' growth constant is not finite".into());
        }
        if let Some(zeta) = self.zeta_or_note(cert) {
            self.zeta_coercivity(zeta, cert);
        }
    }

    fn strong_mono(&self, cert: &mut Certificate) {
        let p = self.nl.p();
        if p <= 1.0 {
            cert.notes.push(format!("requires p > 1, got p = {p}"));
        }
        let (s, phi, h) = (&self.s[..], &self.phi[..], self.grid_step);
        // 1/|s_j - s_i|^{p+1} depends only on j - i.
        let inv_pow: Vec<f64> =
            (0..s.len()).map(|d| if d == 0 { 0.0 } else { 1.0 / (d as f64 * h).powf(p + 1.0) }).collect();
        let worst = pair_min(s.len(), |i, j| (phi[j] - phi[i]) * (s[j] - s[i]) * inv_pow[j - i]);
        cert.witness = self.pair(worst);
        cert.constants.insert("eta".into(), worst.value);
        if !(worst.value > self.tol) {
            cert.notes.push(format!("strong monotonicity constant η = {:e} is not positive", worst.value));
        }
        let growth = (0..s.len()).map(|i| phi[i].abs() / (1.0 + s[i].abs().powf(p))).fold(0.0, f64::max);
        cert.constants.insert("growth_c".into(), growth);
        if !growth.is_finite() {
            cert.notes.push("growth constant is not finite".into());
        }
    }

    fn cond52(&self, cert: &mut Certificate) {
        let p = self.nl.p();
        if p <= 1.0 {
            cert.notes.push(format!("requires p > 1, got p = {p}"));
        }
        let dphi = match &self.dphi {
            Ok(d) => d,
            Err(e) => {
                cert.notes.push(format!("Φ is not known to be C¹: {e}"));
                return;
            }
        };
        let s = &self.s;
        let scale = 4.0 / ((p + 1.0) * (p + 1.0));
        let mut eta = f64::INFINITY;
        let mut arg = None;
        for i in (0..s.len()).filter(|&i| i != self.center) {
            let r = scale * dphi[i] / s[i].abs().powf(p - 1.0);
            if r < eta || r.is_nan() {
                eta = if r.is_nan() { f64::NEG_INFINITY } else { r };
                arg = Some(i);
            }
        }
        let kappa = (0..s.len()).map(|i| dphi[i] / (1.0 + s[i].abs().powf(p - 1.0))).fold(0.0, f64::max);
        cert.witness = arg.and_then(|i| self.point(i));
        cert.constants.insert("eta".into(), eta);
        cert.constants.insert("kappa".into(), kappa);
        if !(eta > self.tol) {
            cert.notes.push(format!("lower derivative constant η = {eta:e} is not positive"));
        }
        if !kappa.is_finite() {
            cert.notes.push("upper derivative constant κ is not finite".into());
        }
    }
}

/// `(lhs - rhs) / max(1, |lhs|, |rhs|)`.
#[inline]
fn relative_deficit(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs) / 1f64.max(lhs.abs()).max(rhs.abs())
}

#[derive(Debug, Clone, Copy)]
struct Extremum {
    value: f64,
    i: usize,
    j: usize,
}

impl Extremum {
    const NONE: Extremum = Extremum { value: f64::INFINITY, i: usize::MAX, j: usize::MAX };

    fn found(&self) -> bool {
        self.i != usize::MAX
    }

    /// Smaller value wins; ties go to the lexicographically smaller pair.
    fn better(self, other: Extremum) -> Extremum {
        match self.value.total_cmp(&other.value) {
            std::cmp::Ordering::Less => self,
            std::cmp::Ordering::Greater => other,
            std::cmp::Ordering::Equal => {
                if (self.i, self.j) <= (other.i, other.j) {
                    self
                } else {
                    other
                }
            }
        }
    }
}

/// Minimum of `f(i, j)` over `i < j < n`. NaN counts as `-∞`. The reduction is
/// order-independent, so the result does not depend on the thread count.
fn pair_min<F>(n: usize, f: F) -> Extremum
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    (0..n.saturating_sub(1))
        .into_par_iter()
        .map(|i| {
            let mut best = Extremum::NONE;
            for j in i + 1..n {
                let v = f(i, j);
                let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
                if v < best.value || !best.found() {
                    best = Extremum { value: v, i, j };
                }
            }
            best
        })
        .reduce(|| Extremum::NONE, Extremum::better)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::CustomPhi;
    use std::sync::Arc;

    fn cube() -> Nonlinearity {
        Nonlinearity::power_law(3.0).unwrap()
    }

    #[test]
    fn power_law_constants() {
        let nl = cube();
        let plan = CertificationPlan::new(&nl, 4.0, 1e-2).unwrap();
        let a = plan.certify(Hypothesis::A1A3);
        assert!(a.passed, "{:?}", a.notes);
        assert!((a.constant("a").unwrap() - 1.0).abs() < 1e-12);
        assert!(a.constant("c").unwrap() < 1e-12);
        assert!((a.constant("c1").unwrap() - 1.0).abs() < 1e-12);
        assert!(a.constant("c2").unwrap() < 1e-12);
    }

    #[test]
    fn power_law_eta_by_brute_force() {
        let nl = cube();
        let (r, h) = (2.0, 0.05);
        let cert = certify(&nl, Hypothesis::StrongMono51, r, h).unwrap();
        assert!(cert.passed);
        // Direct double loop over the same grid, sequential.
        let n = (r / h).round() as i64;
        let mut best = f64::INFINITY;
        for i in -n..=n {
            for j in -n..=n {
                if i != j {
                    let (s, t) = (i as f64 * h, j as f64 * h);
                    best = best.min((s - t) * (s.powi(3) - t.powi(3)) / (s - t).abs().powi(4));
                }
            }
        }
        let eta = cert.constant("eta").unwrap();
        assert!((eta - best).abs() < 1e-12, "{eta} vs {best}");
        assert!((eta - 0.25).abs() < 1e-12);
        let [s, t] = cert.witness.unwrap();
        assert!((s + t).abs() < 1e-12, "antisymmetric witness, got ({s}, {t})");
    }

    #[test]
    fn cond52_constants_for_the_cube() {
        let cert = certify(&cube(), Hypothesis::Cond52, 3.0, 1e-2).unwrap();
        assert!(cert.passed);
        assert!((cert.constant("eta").unwrap() - 0.75).abs() < 1e-12);
        // 3s²/(1+s²) is largest at the edge of the box.
        assert!((cert.constant("kappa").unwrap() - 2.7).abs() < 1e-12);
    }

    #[test]
    fn dead_zone_classification() {
        let nl = Nonlinearity::dead_zone_cubic(1.0).unwrap();
        let plan = CertificationPlan::new(&nl, 4.0, 1e-2).unwrap();
        assert!(plan.certify(Hypothesis::Hyp11Zeta).passed);
        assert!(!plan.certify(Hypothesis::Hyp14).passed);
        let sm = plan.certify(Hypothesis::StrongMono51);
        assert!(!sm.passed);
        let [s, t] = sm.witness.unwrap();
        assert!(s.abs() <= 1.0 && t.abs() <= 1.0 && s < t);
        assert_eq!(sm.constant("eta"), Some(0.0));
    }

    #[test]
    fn mollified_classification() {
        let nl = Nonlinearity::mollified_exp();
        let plan = CertificationPlan::new(&nl, 4.0, 1e-2).unwrap();
        let h14 = plan.certify(Hypothesis::Hyp14);
        assert!(h14.passed, "{:?}", h14.notes);
        assert!(plan.certify(Hypothesis::Hyp11Zeta).passed);
        assert!(!plan.certify(Hypothesis::StrongMono51).passed);
        assert!(!plan.certify(Hypothesis::Cond52).passed);
    }

    #[test]
    fn decreasing_phi_fails_everything_with_witnesses() {
        let c = CustomPhi {
            name: "decreasing".into(),
            phi: Arc::new(|s: f64| -s),
            phi_prime: Some(Arc::new(|_| -1.0)),
            breakpoints: vec![],
        };
        let nl = Nonlinearity::custom(c, 1.0).unwrap();
        for cert in certify_all(&nl, 1.0, 0.1).unwrap() {
            assert!(!cert.passed, "{}", cert.hypothesis);
            assert!(cert.witness.is_some(), "{}", cert.hypothesis);
        }
    }

    #[test]
    fn failed_certificate_refuses() {
        let nl = Nonlinearity::dead_zone_cubic(1.0).unwrap();
        let cert = certify(&nl, Hypothesis::StrongMono51, 2.0, 0.1).unwrap();
        assert!(matches!(cert.require(), Err(Error::Uncertified(_))));
    }

    #[test]
    fn hypothesis_names_round_trip() {
        for h in Hypothesis::ALL {
            assert_eq!(h.name().parse::<Hypothesis>().unwrap(), h);
            let json = serde_json::to_string(&h).unwrap();
            assert_eq!(json, format!("\"{}\"", h.name()));
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(certify(&cube(), Hypothesis::A1A3, 0.0, 1e-3).is_err());
        assert!(certify(&cube(), Hypothesis::A1A3, 1.0, -1.0).is_err());
    }

    #[test]
    fn witness_tie_break_is_lexicographic() {
        let e = pair_min(5, |_, _| 1.0);
        assert_eq!((e.i, e.j), (0, 1));
        let e = pair_min(6, |i, j| if j - i == 2 { -1.0 } else { 0.0 });
        assert_eq!((e.i, e.j), (0, 2));
    }
}
