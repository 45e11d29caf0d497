//! One runner per experiment kind. Runners return a [`Report`]; nothing is written here.

use rayon::prelude::*;
use serde_json::{json, Value};
use spm_core::attractor::{
    invariance_defect, AbsorptionOptions, ContractionOptions, DoublingOptions, SeedSetup,
};
use spm_core::{
    absorption_radius, certify, contraction_check, estimate_eta, estimate_eta0, pullback_ensemble,
    random_low_mode_field, sample_invariant_measure, solve, solve_strided, Certificate, EstimateConstants,
    EstimateHarness, Forcing, Hypothesis, InequalityReport, SpectralField, Trajectory,
};

use crate::artifacts::{Curve, Report};
use crate::config::{
    Built, ContractionSpec, Doubling, Ensemble, EstimateCheck, Experiment, ExperimentConfig, InitialCondition,
};
use crate::CliError;

type Res<T> = Result<T, CliError>;

/// Shortest round-trip float formatting, with an exponent where it is shorter.
fn f(x: f64) -> String {
    format!("{x:?}")
}

fn to_json(v: &impl serde::Serialize) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

pub fn run(cfg: &ExperimentConfig) -> Res<Report> {
    let b = cfg.build()?;
    match &cfg.experiment {
        Experiment::Simulate { initial, t0, t1, stride, oracle, oracle_tol } => {
            simulate(cfg, &b, initial, *t0, *t1, *stride, oracle.is_some(), *oracle_tol)
        }
        Experiment::VerifyHypotheses { hypotheses, expect_pass, expect_fail } => {
            verify_hypotheses(cfg, &b, hypotheses, expect_pass, expect_fail)
        }
        Experiment::VerifyEstimates { .. } => verify_estimates(cfg, &b),
        Experiment::Pullback { .. } => pullback(cfg, &b),
        Experiment::Attractor { ics, doubling, diameter_tol, agree_tol, invariance_t, invariance_tol } => {
            attractor(cfg, &b, ics, doubling, *diameter_tol, *agree_tol, *invariance_t, *invariance_tol)
        }
        Experiment::InvariantMeasure { seeds, ics, doubling, functionals } => {
            let cert = strong_certificate(cfg, &b)?;
            let xs = ensemble(&b, ics)?;
            let path = |s: u64| b.path(s);
            let setup = SeedSetup { path: &path, q: &b.q, xs: &xs };
            let sample = sample_invariant_measure(
                seeds,
                &setup,
                &b.solver,
                &b.nl,
                &cert,
                doubling.tol,
                &doubling_opts(doubling),
                functionals,
            )?;
            let mut header = vec!["seed".to_string(), "converged".to_string()];
            header.extend(sample.functionals.iter().cloned());
            let mut curve = Curve { name: "samples".into(), header, rows: Vec::new() };
            for s in &sample.samples {
                let mut row = vec![s.seed.to_string(), s.converged.to_string()];
                if s.converged {
                    row.extend(s.values.iter().map(|&v| f(v)));
                } else {
                    row.extend(sample.functionals.iter().map(|_| String::new()));
                }
                curve.rows.push(row);
            }
            Ok(Report {
                kind: "invariant-measure",
                passed: sample.failures == 0,
                results: json!({ "sample": sample, "path_window": b.window }),
                curves: vec![curve],
                certificates: vec![cert],
                snapshots: None,
            })
        }
    }
}

fn doubling_opts(d: &Doubling) -> DoublingOptions {
    DoublingOptions { initial_horizon: d.initial_horizon, max_horizon: d.max_horizon }
}

fn ensemble(b: &Built, e: &Ensemble) -> Res<Vec<SpectralField>> {
    (0..e.count as u64)
        .map(|i| random_low_mode_field(&b.domain, e.seed_offset + i, e.modes, e.radius).map_err(CliError::from))
        .collect()
}

/// The strong-monotonicity certificate; experiments that rely on it refuse to run without a pass.
fn strong_certificate(cfg: &ExperimentConfig, b: &Built) -> Res<Certificate> {
    let c = &cfg.certification;
    let cert = certify(&b.nl, Hypothesis::StrongMono51, c.search_box, c.grid_step)?;
    cert.require()?;
    Ok(cert)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    cfg: &ExperimentConfig,
    b: &Built,
    initial: &InitialCondition,
    t0: f64,
    t1: f64,
    stride: usize,
    oracle: bool,
    oracle_tol: f64,
) -> Res<Report> {
    let x = initial.build(&b.domain)?;
    let path = b.path(cfg.noise.seed)?;
    let traj = solve_strided(&x, t0, t1, Forcing::new(&path, &b.q), &b.solver, &b.nl, stride)?;
    let mut curve = Curve::new(
        "trajectory",
        &["t", "z_h", "z_l2", "s_l2", "s_lp", "energy_residual", "iterations", "solver_residual"],
    );
    let mut s_l2 = Vec::with_capacity(traj.len());
    for (i, (t, d)) in traj.times.iter().zip(&traj.diagnostics).enumerate() {
        let l2 = traj.s_at(i)?.l2_norm_sq().sqrt();
        s_l2.push(l2);
        curve.push(vec![
            f(*t),
            f(d.z_h),
            f(d.z_l2),
            f(l2),
            f(d.s_lp),
            f(d.energy_residual),
            d.iterations.to_string(),
            f(d.solver_residual),
        ]);
    }
    let mut curves = vec![curve];
    let mut passed = traj.z.iter().all(SpectralField::is_finite);
    let mut oracle_json = Value::Null;
    if oracle {
        let InitialCondition::Basis { k, scale } = initial else { unreachable!("validated") };
        let lam = b.domain.eigenvalue(*k);
        let mut c = Curve::new("oracle", &["t", "l2", "exact", "rel_error"]);
        let mut worst: f64 = 0.0;
        for (t, l2) in traj.times.iter().zip(&s_l2) {
            let exact = scale.abs() * (-lam * (t - t0)).exp();
            let rel = (l2 - exact).abs() / exact;
            worst = worst.max(rel);
            c.push(vec![f(*t), f(*l2), f(exact), f(rel)]);
        }
        curves.push(c);
        passed &= worst <= oracle_tol;
        oracle_json = json!({ "kind": "heat", "max_rel_error": worst, "tol": oracle_tol, "passed": worst <= oracle_tol });
    }
    let snapshots = match cfg.output.snapshot_stride {
        Some(stride) => {
            let mut buf = Vec::new();
            traj.write_snapshots(&mut buf, stride)?;
            Some(buf)
        }
        None => None,
    };
    let fin = traj.final_state()?;
    Ok(Report {
        kind: "simulate",
        passed,
        results: json!({
            "stored_times": traj.len(),
            "final_time": traj.times.last(),
            "final_l2": fin.l2_norm_sq().sqrt(),
            "final_h": fin.h_norm(),
            "energy_residual_rate": traj.energy_residual_rate(),
            "path": path.info(),
            "oracle": oracle_json,
        }),
        curves,
        certificates: Vec::new(),
        snapshots,
    })
}

fn verify_hypotheses(
    cfg: &ExperimentConfig,
    b: &Built,
    hypotheses: &[Hypothesis],
    expect_pass: &[Hypothesis],
    expect_fail: &[Hypothesis],
) -> Res<Report> {
    for h in expect_pass.iter().chain(expect_fail) {
        if !hypotheses.contains(h) {
            return Err(CliError::Config(format!("expectation for {h} but it is not in `hypotheses`")));
        }
    }
    let c = &cfg.certification;
    let certs = hypotheses
        .iter()
        .map(|&h| certify(&b.nl, h, c.search_box, c.grid_step).map_err(CliError::from))
        .collect::<Res<Vec<_>>>()?;
    let expected = |h: Hypothesis| {
        if expect_pass.contains(&h) {
            Some(true)
        } else if expect_fail.contains(&h) {
            Some(false)
        } else {
            None
        }
    };
    let with_expectations = !(expect_pass.is_empty() && expect_fail.is_empty());
    let mut curve = Curve::new("hypotheses", &["hypothesis", "passed", "expected", "witness_s", "witness_t"]);
    let mut passed = true;
    for cert in &certs {
        let e = expected(cert.hypothesis);
        passed &= match (with_expectations, e) {
            (true, Some(want)) => cert.passed == want,
            (true, None) => true,
            (false, _) => cert.passed,
        };
        let [ws, wt] = cert.witness.map_or([String::new(), String::new()], |[s, t]| [f(s), f(t)]);
        curve.push(vec![
            cert.hypothesis.to_string(),
            cert.passed.to_string(),
            e.map_or(String::new(), |v| v.to_string()),
            ws,
            wt,
        ]);
    }
    Ok(Report {
        kind: "verify-hypotheses",
        passed,
        results: json!({ "nonlinearity": b.nl.info(), "classification": certs.iter().map(|c| json!({
            "hypothesis": c.hypothesis,
            "passed": c.passed,
            "expected": expected(c.hypothesis),
            "constants": c.constants,
            "witness": c.witness,
            "notes": c.notes,
        })).collect::<Vec<_>>() }),
        curves: vec![curve],
        certificates: certs,
        snapshots: None,
    })
}

fn run_checks(
    traj: &Trajectory,
    b: &Built,
    est: &spm_core::EstimateConfig,
    constants: &EstimateConstants,
    checks: &[EstimateCheck],
    route: spm_core::Smoothness,
) -> Res<Vec<InequalityReport>> {
    let h = EstimateHarness::with_constants(traj, &b.nl, est, constants.clone())?;
    checks
        .iter()
        .map(|c| {
            Ok(match c {
                EstimateCheck::Thm21 => h.dual_energy(),
                EstimateCheck::Thm21Decay => h.dual_decay(),
                EstimateCheck::Thm31 => h.l2_energy(route)?,
                EstimateCheck::Galerkin => h.galerkin_energy()?,
            })
        })
        .collect()
}

fn verify_estimates(cfg: &ExperimentConfig, b: &Built) -> Res<Report> {
    let Experiment::VerifyEstimates { seeds, initial, t0, t1, checks, route, estimate, refine } = &cfg.experiment
    else {
        unreachable!()
    };
    let route = route.map_or(b.q.smoothness(), |r| r.smoothness());
    let constants = EstimateConstants::derive(&b.nl, estimate, b.domain.poincare_lambda1(), b.domain.length())?;
    let x = initial.build(&b.domain)?;
    let levels: Vec<spm_core::SolverConfig> = if *refine {
        [1.0, 0.5, 0.25].iter().map(|r| b.solver.clone().with_dt(b.solver.dt * r)).collect()
    } else {
        vec![b.solver.clone()]
    };
    let per_seed: Vec<(u64, Vec<Vec<InequalityReport>>)> = seeds
        .par_iter()
        .map(|&seed| {
            let path = b.path(seed)?;
            let forcing = Forcing::new(&path, &b.q);
            // Same ω at every level: the path keeps its grid and is interpolated at the finer steps.
            let runs = levels
                .iter()
                .map(|solver| {
                    let traj = solve(&x, *t0, *t1, forcing, solver, &b.nl)?;
                    run_checks(&traj, b, estimate, &constants, checks, route)
                })
                .collect::<Res<Vec<_>>>()?;
            Ok((seed, runs))
        })
        .collect::<Res<_>>()?;
    let mut curve = Curve::new(
        "estimates",
        &[
            "seed",
            "dt",
            "check",
            "violations",
            "worst_margin",
            "worst_raw_margin",
            "required_allowance_rate",
            "worst_relative_gap",
            "identity_rate",
            "pairs",
            "passed",
        ],
    );
    let mut passed = true;
    let mut refinement = Vec::new();
    let mut reports = Vec::new();
    for (seed, runs) in &per_seed {
        for r in runs.iter().flatten() {
            passed &= r.passed();
            curve.push(vec![
                seed.to_string(),
                f(r.dt),
                r.id.clone(),
                r.violations.to_string(),
                f(r.worst_margin),
                f(r.worst_raw_margin),
                f(r.required_allowance_rate),
                f(r.worst_relative_gap),
                f(r.identity.rate),
                r.pairs_checked.to_string(),
                r.passed().to_string(),
            ]);
            reports.push(strip_constants(r));
        }
        if runs.len() == 3 {
            for c in 0..runs[0].len() {
                let lv: Vec<&InequalityReport> = runs.iter().map(|r| &r[c]).collect();
                let rates: Vec<f64> = lv.iter().map(|r| r.identity.rate).collect();
                let required: Vec<f64> = lv.iter().map(|r| r.required_allowance_rate).collect();
                let rate_drops = rates.windows(2).all(|w| w[1] < w[0]);
                // The allowance a pass actually needs must not grow under refinement.
                let margins_improve = required.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
                let ok = lv.iter().all(|r| r.passed()) && rate_drops && margins_improve;
                passed &= ok;
                refinement.push(json!({
                    "seed": seed,
                    "check": lv[0].id,
                    "dt": lv.iter().map(|r| r.dt).collect::<Vec<_>>(),
                    "identity_rate": rates,
                    "worst_margin": lv.iter().map(|r| r.worst_margin).collect::<Vec<_>>(),
                    "worst_raw_margin": lv.iter().map(|r| r.worst_raw_margin).collect::<Vec<_>>(),
                    "required_allowance_rate": required,
                    "rate_drops": rate_drops,
                    "margins_improve": margins_improve,
                    "passed": ok,
                }));
            }
        }
    }
    Ok(Report {
        kind: "verify-estimates",
        passed,
        results: json!({
            "constants": constants.table(),
            "route": route,
            "reports": reports,
            "refinement": refinement,
        }),
        curves: vec![curve],
        certificates: Vec::new(),
        snapshots: None,
    })
}

/// Reports repeat the shared constants table; it is written once at the top level instead.
fn strip_constants(r: &InequalityReport) -> Value {
    let mut v = to_json(r);
    if let Some(o) = v.as_object_mut() {
        o.remove("constants");
    }
    v
}

fn contraction(
    b: &Built,
    seeds: &[u64],
    ics: &Ensemble,
    spec: &ContractionSpec,
    cert: &Certificate,
) -> Res<(bool, Value, Curve)> {
    let opts = ContractionOptions {
        slack: spec.slack,
        stride: spec.stride,
        fit_from: spec.fit_from,
        ..Default::default()
    };
    let reports = seeds
        .par_iter()
        .map(|&seed| {
            let path = b.path(seed)?;
            let pick = |i: u64| random_low_mode_field(&b.domain, ics.seed_offset + 2 * seed + i, ics.modes, ics.radius);
            let (x, y) = (pick(0)?, pick(1)?);
            let h = -spec.horizon;
            Ok(contraction_check(&x, &y, h, h, 0.0, Forcing::new(&path, &b.q), &b.solver, &b.nl, cert, &opts)?)
        })
        .collect::<Res<Vec<_>>>()?;
    let mut curve =
        Curve::new("contraction", &["seed", "t", "tau", "dist_sq", "bound_data", "bound_free", "bound_holder"]);
    let mut passed = true;
    let mut summary = Vec::new();
    for (seed, r) in seeds.iter().zip(&reports) {
        for row in &r.rows {
            curve.push(vec![
                seed.to_string(),
                f(row.t),
                f(row.tau),
                f(row.dist_sq),
                f(row.bound_data),
                f(row.bound_free),
                f(row.bound_holder),
            ]);
        }
        let slope_ok = r.slope.is_some_and(|s| s <= spec.slope_max);
        let ok = r.violations_free == 0 && slope_ok && (!spec.require_data_bound || r.violations_data == 0);
        passed &= ok;
        let mut v = to_json(r);
        let o = v.as_object_mut().expect("object");
        o.remove("rows");
        o.insert("seed".into(), json!(seed));
        o.insert("slope_ok".into(), json!(slope_ok));
        o.insert("passed".into(), json!(ok));
        summary.push(v);
    }
    let worst = |g: fn(&spm_core::ContractionReport) -> f64| reports.iter().map(g).fold(0.0, f64::max);
    let worst_slope = reports.iter().filter_map(|r| r.slope).fold(f64::NEG_INFINITY, f64::max);
    let results = json!({
        "passed": passed,
        "horizon": spec.horizon,
        "slack": spec.slack,
        "slope_max": spec.slope_max,
        "require_data_bound": spec.require_data_bound,
        "worst_ratio_free": worst(|r| r.worst_ratio_free),
        "worst_ratio_data": worst(|r| r.worst_ratio_data),
        "worst_ratio_holder": worst(|r| r.worst_ratio_holder),
        "worst_slope": worst_slope,
        "seeds": summary,
    });
    Ok((passed, results, curve))
}

fn pullback(cfg: &ExperimentConfig, b: &Built) -> Res<Report> {
    let Experiment::Pullback { seeds, contraction: cspec, ensemble: espec, absorption: aspec, ics } = &cfg.experiment
    else {
        unreachable!()
    };
    let mut passed = true;
    let mut results = serde_json::Map::new();
    let mut curves = Vec::new();
    let mut certificates = Vec::new();
    let needs_cert = cspec.is_some();
    let cert = if needs_cert {
        Some(strong_certificate(cfg, b)?)
    } else if espec.is_some() {
        let c = &cfg.certification;
        Some(certify(&b.nl, Hypothesis::StrongMono51, c.search_box, c.grid_step)?)
    } else {
        None
    };
    if let Some(c) = &cert {
        certificates.push(c.clone());
    }
    let usable = cert.as_ref().filter(|c| c.passed);
    if let Some(spec) = cspec {
        let (ok, v, curve) = contraction(b, seeds, ics, spec, usable.expect("required above"))?;
        passed &= ok;
        results.insert("contraction".into(), v);
        curves.push(curve);
    }
    if let Some(spec) = espec {
        let xs = ensemble(b, &spec.ics)?;
        let reports = seeds
            .par_iter()
            .map(|&seed| {
                let path = b.path(seed)?;
                Ok(pullback_ensemble(&xs, &spec.horizons, Forcing::new(&path, &b.q), &b.solver, &b.nl, usable)?)
            })
            .collect::<Res<Vec<_>>>()?;
        let slack = cspec.as_ref().map_or(0.05, |c| c.slack);
        let mut curve = Curve::new("pullback", &["seed", "horizon", "max_l2", "diameter", "bound"]);
        let mut rows = Vec::new();
        for (seed, r) in seeds.iter().zip(&reports) {
            let d0 = r.rows[0].diameter;
            // Contraction gives D(T) ≤ D(0); the bound applies to every pair at every T > 0.
            let within_initial = r.rows.iter().all(|row| row.diameter <= d0 + r.tolerance);
            let within_bound = r
                .rows
                .iter()
                .filter(|row| row.horizon > 0.0)
                .all(|row| row.bound.is_none_or(|bd| row.diameter.powi(2) <= bd * (1.0 + slack)));
            passed &= within_initial && within_bound;
            for row in &r.rows {
                curve.push(vec![
                    seed.to_string(),
                    f(row.horizon),
                    f(row.max_l2),
                    f(row.diameter),
                    row.bound.map_or(String::new(), f),
                ]);
            }
            rows.push(json!({
                "seed": seed,
                "within_initial_diameter": within_initial,
                "within_bound": within_bound,
                "diameter_monotone": r.diameter_monotone,
                "eta_51": r.eta_51,
                "eta0_estimate": r.eta0_estimate,
                "rows": r.rows,
            }));
        }
        results.insert("ensemble".into(), json!(rows));
        curves.push(curve);
    }
    if let Some(spec) = aspec {
        let opts = AbsorptionOptions {
            initial_horizon: spec.initial_horizon,
            max_horizon: spec.max_horizon,
            band: spec.band,
            modes: spec.modes,
        };
        let mut rhos = spec.rhos.clone();
        rhos.sort_by(f64::total_cmp);
        let path = |s: u64| b.path(s);
        let rows = absorption_radius(&rhos, seeds, &path, &b.q, &b.solver, &b.nl, &opts)?;
        let mut curve = Curve::new("absorption", &["rho", "seed", "entry_horizon", "ic_entry_horizon", "radius"]);
        let mut per_seed = Vec::new();
        for &seed in seeds {
            let mine: Vec<_> = rows.iter().filter(|r| r.seed == seed).collect();
            let monotone = mine.windows(2).all(|w| w[1].entry_horizon >= w[0].entry_horizon);
            let (lo, hi) = mine.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.radius), hi.max(r.radius)));
            let spread = if lo > 0.0 { hi / lo - 1.0 } else if hi == 0.0 { 0.0 } else { f64::INFINITY };
            let ok = monotone && spread <= spec.radius_tol;
            passed &= ok;
            per_seed.push(json!({ "seed": seed, "entry_monotone": monotone, "radius_spread": spread, "passed": ok }));
        }
        for r in &rows {
            curve.push(vec![f(r.rho), r.seed.to_string(), f(r.entry_horizon), f(r.ic_entry_horizon), f(r.radius)]);
        }
        results.insert("absorption".into(), json!({ "seeds": per_seed, "rows": rows }));
        curves.push(curve);
    }
    Ok(Report { kind: "pullback", passed, results: Value::Object(results), curves, certificates, snapshots: None })
}

#[allow(clippy::too_many_arguments)]
fn attractor(
    cfg: &ExperimentConfig,
    b: &Built,
    ics: &Ensemble,
    doubling: &Doubling,
    diameter_tol: f64,
    agree_tol: f64,
    invariance_t: f64,
    invariance_tol: f64,
) -> Res<Report> {
    let cert = strong_certificate(cfg, b)?;
    let xs = ensemble(b, ics)?;
    let path = b.path(cfg.noise.seed)?;
    let forcing = Forcing::new(&path, &b.q);
    let opts = doubling_opts(doubling);
    let e0 = estimate_eta0(&xs, forcing, &b.solver, &b.nl, &cert, doubling.tol, &opts)?;
    // Each IC on its own, so agreement is between independent pullback limits.
    let singles = xs
        .par_iter()
        .map(|x| {
            let e = estimate_eta0(std::slice::from_ref(x), forcing, &b.solver, &b.nl, &cert, doubling.tol, &opts)?;
            Ok(e.field(&b.domain)?)
        })
        .collect::<Res<Vec<_>>>()?;
    let agree = spm_core::attractor::h_diameter(&singles);
    let eta0 = e0.field(&b.domain)?;
    let e1 = estimate_eta(invariance_t, &xs, forcing, &b.solver, &b.nl, &cert, doubling.tol, &opts)?;
    let defect = invariance_defect(&eta0, &e1.field(&b.domain)?, invariance_t, forcing, &b.solver, &b.nl)?;
    let checks = json!({
        "diameter": { "value": e0.diameter, "tol": diameter_tol, "passed": e0.diameter < diameter_tol },
        "agreement": { "value": agree, "tol": agree_tol, "passed": agree <= agree_tol },
        "invariance": { "value": defect, "t": invariance_t, "tol": invariance_tol, "passed": defect <= invariance_tol },
    });
    let passed = e0.diameter < diameter_tol && agree <= agree_tol && defect <= invariance_tol;
    let mut table = Curve::new("doubling", &["t", "horizon", "change", "diameter"]);
    for (t, e) in [(0.0, &e0), (invariance_t, &e1)] {
        for r in &e.table {
            table.push(vec![f(t), f(r.horizon), f(r.change), f(r.diameter)]);
        }
    }
    let mut coeffs = Curve::new("eta", &["k", "eta0", "eta_t"]);
    for (k, (a, c)) in e0.eta.iter().zip(&e1.eta).enumerate() {
        coeffs.push(vec![(k + 1).to_string(), f(*a), f(*c)]);
    }
    Ok(Report {
        kind: "attractor",
        passed,
        results: json!({
            "checks": checks,
            "eta0": { "horizon": e0.horizon, "diameter": e0.diameter, "singleton": e0.singleton, "h_norm": eta0.h_norm() },
            "eta_t": { "t": invariance_t, "horizon": e1.horizon, "diameter": e1.diameter },
            "path": path.info(),
        }),
        curves: vec![table, coeffs],
        certificates: vec![cert],
        snapshots: None,
    })
}
