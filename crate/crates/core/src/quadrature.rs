//! Scalar quadrature and the exponential integral used by the catalog nonlinearities.

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const MAX_DEPTH: u32 = 50;

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
///
/// `f` may abort the integration by returning `Err`; the first error is propagated.
pub fn adaptive_simpson<E>(
    f: &mut impl FnMut(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64, E> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = simpson(a, b, fa, fm, fb);
    refine(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn refine<E>(
    f: &mut impl FnMut(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, E> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || (m - a).abs() < f64::EPSILON * a.abs().max(1.0) {
        return Ok(left + right + delta / 15.0);
    }
    Ok(refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Generalized exponential integral `E_n(x) = ∫_1^∞ e^{-xt} t^{-n} dt` for `x > 0`.
///
/// Continued fraction (modified Lentz) for `x > 1`, power series otherwise.
pub fn expint(n: u32, x: f64) -> f64 {
    const EPS: f64 = 1e-16;
    const FPMIN: f64 = 1e-300;
    const MAXIT: u32 = 500;
    assert!(x > 0.0 || (x == 0.0 && n > 1), "expint domain error: n = {n}, x = {x}");
    let nm1 = n as f64 - 1.0;
    if n == 0 {
        return (-x).exp() / x;
    }
    if x == 0.0 {
        return 1.0 / nm1;
    }
    if x > 700.0 {
        return 0.0;
    }
    if x > 1.0 {
        let mut b = x + n as f64;
        let mut c = 1.0 / FPMIN;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=MAXIT {
            let a = -(i as f64) * (nm1 + i as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        h * (-x).exp()
    } else {
        let mut ans = if n > 1 { 1.0 / nm1 } else { -x.ln() - EULER_GAMMA };
        let mut fact = 1.0;
        for i in 1..=MAXIT {
            fact *= -x / i as f64;
            let del = if i as f64 != nm1 {
                -fact / (i as f64 - nm1)
            } else {
                let psi = -EULER_GAMMA + (1..n).map(|k| 1.0 / k as f64).sum::<f64>();
                fact * (-x.ln() + psi)
            };
            ans += del;
            if del.abs() < ans.abs() * EPS {
                break;
            }
        }
        ans
    }
}
