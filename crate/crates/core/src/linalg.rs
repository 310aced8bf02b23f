//! Small dense linear-algebra helpers.

use ndarray::{Array1, Array2, ArrayView2};

const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
///
/// Only the lower and upper triangles' average is used, so tiny asymmetries
/// from rounding are tolerated. Eigenvalues are returned unsorted.
pub(crate) fn symmetric_eigenvalues(a: ArrayView2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (a[[i, j]] + a[[j, i]]));
    let scale = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n <= 1 || scale == 0.0 {
        return m.diag().to_vec();
    }
    let tol = f64::EPSILON * f64::EPSILON * scale * scale;

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        if off <= tol {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                m[[p, q]] = 0.0;
                m[[q, p]] = 0.0;
            }
        }
    }
    m.diag().to_vec()
}

/// Largest absolute eigenvalue of a symmetric matrix by power iteration on
/// `a`, with the direction `deflate` (if any) projected out each round.
pub(crate) fn symmetric_spectral_norm_power(
    a: ArrayView2<f64>,
    deflate: Option<&Array1<f64>>,
    max_iter: usize,
    tol: f64,
) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    // Deterministic, generic start vector.
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_75).fract());
    let project = |v: &mut Array1<f64>| {
        if let Some(d) = deflate {
            let dd = d.dot(d);
            if dd > 0.0 {
                let c = v.dot(d) / dd;
                v.scaled_add(-c, d);
            }
        }
    };
    project(&mut v);
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    v /= norm;

    let mut estimate = 0.0;
    for _ in 0..max_iter {
        // Two applications so that +lambda / -lambda pairs do not oscillate.
        let mut w = a.dot(&a.dot(&v));
        project(&mut w);
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        let next = wn.sqrt();
        w /= wn;
        v = w;
        if (next - estimate).abs() <= tol * next.max(1.0) {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Frobenius norm of a matrix.
pub(crate) fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
