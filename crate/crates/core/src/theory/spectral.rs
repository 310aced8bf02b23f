//! Spectral radius and Perron-root tests for 3x3 nonnegative matrices.

use std::f64::consts::PI;

use super::{Matrix3, TheoryError};

const POWER_MAX_ITER: usize = 20_000;
const POWER_TOL: f64 = 1e-15;
/// Relative disagreement between the cubic and power-iteration routes
/// above which a warning is logged.
const CROSS_CHECK_TOL: f64 = 1e-9;

/// Coefficients `(a, b, c)` of the monic characteristic polynomial
/// `lambda^3 + a lambda^2 + b lambda + c`.
fn char_poly(m: &Matrix3) -> (f64, f64, f64) {
    let trace = m[0][0] + m[1][1] + m[2][2];
    let minors = m[0][0] * m[1][1] - m[0][1] * m[1][0] + m[0][0] * m[2][2] - m[0][2] * m[2][0]
        + m[1][1] * m[2][2]
        - m[1][2] * m[2][1];
    (-trace, minors, -det3(m))
}

pub(crate) fn det3(m: &Matrix3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn newton_polish(r: f64, a: f64, b: f64, c: f64) -> f64 {
    let f = ((r + a) * r + b) * r + c;
    let df = (3.0 * r + 2.0 * a) * r + b;
    if df == 0.0 || !df.is_finite() {
        return r;
    }
    let next = r - f / df;
    let f_next = ((next + a) * next + b) * next + c;
    if f_next.abs() <= f.abs() {
        next
    } else {
        r
    }
}

/// Moduli of the three roots of `lambda^3 + a lambda^2 + b lambda + c`.
///
/// Three real roots use the trigonometric form; otherwise Cardano gives the
/// real root and the complex pair is recovered from the deflated quadratic.
fn cubic_root_moduli(a: f64, b: f64, c: f64) -> [f64; 3] {
    let shift = a / 3.0;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let disc = q * q / 4.0 + p * p * p / 27.0;

    if disc <= 0.0 {
        let roots = if p == 0.0 {
            [0.0; 3]
        } else {
            let amp = 2.0 * (-p / 3.0).sqrt();
            let arg = ((3.0 * q) / (p * amp)).clamp(-1.0, 1.0);
            let phi = arg.acos() / 3.0;
            [0.0, 1.0, 2.0].map(|k| amp * (phi - 2.0 * PI * k / 3.0).cos())
        };
        roots.map(|t| newton_polish(t - shift, a, b, c).abs())
    } else {
        let s = disc.sqrt();
        let t = (-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt();
        let r = newton_polish(t - shift, a, b, c);
        // lambda^2 + (a + r) lambda + (b + (a + r) r) holds the other two roots.
        let lin = a + r;
        let cst = b + lin * r;
        let qd = lin * lin - 4.0 * cst;
        if qd < 0.0 {
            let modulus = cst.max(0.0).sqrt();
            [r.abs(), modulus, modulus]
        } else {
            let sq = qd.sqrt();
            [r.abs(), ((-lin + sq) / 2.0).abs(), ((-lin - sq) / 2.0).abs()]
        }
    }
}

/// Spectral radius of a 3x3 matrix from the roots of its characteristic
/// cubic. For nonnegative input the result is cross-checked against power
/// iteration whenever the latter converges.
pub fn spectral_radius_3(m: &Matrix3) -> f64 {
    let (a, b, c) = char_poly(m);
    let rho = cubic_root_moduli(a, b, c).into_iter().fold(0.0, f64::max);
    if m.iter().flatten().all(|&v| v >= 0.0) {
        if let Some(perron) = perron_root_power(m) {
            if (perron - rho).abs() > CROSS_CHECK_TOL * rho.max(1.0) {
                log::warn!("cubic spectral radius {rho:e} disagrees with power iteration {perron:e}");
            }
        }
    }
    rho
}

/// Perron root of a nonnegative matrix by power iteration on `M + I`, or
/// `None` when the iteration does not settle (e.g. a repeated Perron root).
pub fn perron_root_power(m: &Matrix3) -> Option<f64> {
    let mut v = [1.0f64, 1.0, 1.0];
    let mut prev = f64::NAN;
    for _ in 0..POWER_MAX_ITER {
        let mut w = [0.0; 3];
        for i in 0..3 {
            w[i] = v[i] + (0..3).map(|j| m[i][j] * v[j]).sum::<f64>();
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let estimate = norm / vnorm - 1.0;
        v = w.map(|x| x / norm);
        if (estimate - prev).abs() <= POWER_TOL * estimate.abs().max(1.0) {
            return Some(estimate);
        }
        prev = estimate;
    }
    None
}

/// `(I + M)^2` is entrywise positive.
pub fn is_irreducible(m: &Matrix3) -> bool {
    let mut s = *m;
    for (i, row) in s.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    (0..3).all(|i| (0..3).all(|j| (0..3).map(|k| s[i][k] * s[k][j]).sum::<f64>() > 0.0))
}

/// For a nonnegative irreducible `M` with every diagonal entry below
/// `lambda_star`, reports whether `det(lambda_star I - M) > 0`, which is
/// equivalent to `rho(M) < lambda_star`.
pub fn det_criterion(m: &Matrix3, lambda_star: f64) -> Result<bool, TheoryError> {
    if !(lambda_star > 0.0 && lambda_star.is_finite()) {
        return Err(TheoryError::InvalidInput(format!(
            "lambda* must be positive, got {lambda_star}"
        )));
    }
    if m.iter().flatten().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(TheoryError::InvalidInput(
            "matrix must be finite and nonnegative".into(),
        ));
    }
    if let Some(i) = (0..3).find(|&i| m[i][i] >= lambda_star) {
        return Err(TheoryError::DiagonalNotBelow {
            index: i,
            value: m[i][i],
            lambda_star,
        });
    }
    if !is_irreducible(m) {
        return Err(TheoryError::Reducible);
    }
    let mut shifted = m.map(|row| row.map(|v| -v));
    for (i, row) in shifted.iter_mut().enumerate() {
        row[i] += lambda_star;
    }
    Ok(det3(&shifted) > 0.0)
}
