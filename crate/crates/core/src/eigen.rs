//! Small dense eigenproblems.
//!
//! 3×3 spectra come from the characteristic cubic (Cardano / trigonometric
//! form) with one Newton polish per root. Other sizes fall back to a Schur
//! based solver.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;

/// Monic characteristic polynomial `λ³ + b λ² + c λ + d` of a 3×3 matrix.
pub fn char_poly3(m: &Matrix3<f64>) -> [f64; 3] {
    let tr = m.trace();
    let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)]
        - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    [-tr, minors, -m.determinant()]
}

fn cubic(coef: &[f64; 3], z: Complex64) -> (Complex64, Complex64) {
    let [b, c, d] = *coef;
    let p = ((z + b) * z + c) * z + d;
    let dp = (z * 3.0 + 2.0 * b) * z + c;
    (p, dp)
}

fn polish(coef: &[f64; 3], z: Complex64) -> Complex64 {
    let (p, dp) = cubic(coef, z);
    if dp.norm() == 0.0 || !dp.norm().is_finite() {
        return z;
    }
    let cand = z - p / dp;
    if cubic(coef, cand).0.norm() < p.norm() {
        cand
    } else {
        z
    }
}

/// Roots of `λ³ + b λ² + c λ + d`.
pub fn cubic_roots(coef: [f64; 3]) -> [Complex64; 3] {
    let [b, c, d] = coef;
    let shift = b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let scale = 1.0 + b.abs() + c.abs().sqrt() + d.abs().cbrt();
    let tiny = 1e-14 * scale;

    let mut roots = if p.abs() <= tiny * tiny {
        // t³ + q = 0 with a (near) triple root at the center.
        let t = (-q).cbrt();
        if q.abs() <= tiny * tiny * tiny {
            [Complex64::new(-shift, 0.0); 3]
        } else {
            let w = Complex64::from_polar(1.0, 2.0 * PI / 3.0);
            let t0 = Complex64::new(t, 0.0);
            [t0 - shift, t0 * w - shift, t0 * w.conj() - shift]
        }
    } else {
        let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
        if disc > 0.0 {
            let sq = disc.sqrt();
            let u = (-q / 2.0 - q.signum() * sq).cbrt();
            let t = if u != 0.0 {
                u - p / (3.0 * u)
            } else {
                (-q).cbrt()
            };
            let real = t - shift;
            // Deflate: λ² + e λ + f with e = b + real.
            let e = b + real;
            let f = if real.abs() > 1e-300 {
                -d / real
            } else {
                c + real * e
            };
            let h = e * e / 4.0 - f;
            let (z1, z2) = if h < 0.0 {
                let im = (-h).sqrt();
                (Complex64::new(-e / 2.0, im), Complex64::new(-e / 2.0, -im))
            } else {
                let s = h.sqrt();
                (
                    Complex64::new(-e / 2.0 + s, 0.0),
                    Complex64::new(-e / 2.0 - s, 0.0),
                )
            };
            [Complex64::new(real, 0.0), z1, z2]
        } else {
            let rad = 2.0 * (-p / 3.0).sqrt();
            let arg = ((3.0 * q) / (2.0 * p) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0);
            let theta = arg.acos() / 3.0;
            let mut out = [Complex64::new(0.0, 0.0); 3];
            for (k, slot) in out.iter_mut().enumerate() {
                let t = rad * (theta - 2.0 * PI * k as f64 / 3.0).cos();
                *slot = Complex64::new(t - shift, 0.0);
            }
            out
        }
    };

    for z in roots.iter_mut() {
        let polished = polish(&coef, *z);
        *z = if z.im == 0.0 {
            Complex64::new(polished.re, 0.0)
        } else {
            polished
        };
    }
    // Keep complex pairs exactly conjugate.
    if roots[1].im != 0.0 {
        roots[2] = roots[1].conj();
    }
    roots
}

/// Ascending modulus, ties broken by real then imaginary part.
pub fn sort_by_modulus(values: &mut [Complex64]) {
    values.sort_by(|a, b| {
        a.norm()
            .partial_cmp(&b.norm())
            .unwrap_or(Ordering::Equal)
            .then(a.re.partial_cmp(&b.re).unwrap_or(Ordering::Equal))
            .then(a.im.partial_cmp(&b.im).unwrap_or(Ordering::Equal))
    });
}

/// Eigenvalues of a 3×3 matrix sorted by modulus.
pub fn eigen3(m: &Matrix3<f64>) -> [Complex64; 3] {
    let mut roots = cubic_roots(char_poly3(m));
    sort_by_modulus(&mut roots);
    roots
}

/// Eigenvalues of a square matrix sorted by modulus.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "eigenvalues of a non-square matrix");
    let mut out = match n {
        0 => Vec::new(),
        1 => vec![Complex64::new(m[(0, 0)], 0.0)],
        2 => {
            let tr = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            quadratic_roots(tr, det).to_vec()
        }
        3 => eigen3(&Matrix3::from_fn(|i, j| m[(i, j)])).to_vec(),
        _ => m.clone().complex_eigenvalues().iter().copied().collect(),
    };
    sort_by_modulus(&mut out);
    out
}

/// Roots of `λ² − tr λ + det`.
pub fn quadratic_roots(tr: f64, det: f64) -> [Complex64; 2] {
    let h = tr * tr / 4.0 - det;
    if h < 0.0 {
        let im = (-h).sqrt();
        [Complex64::new(tr / 2.0, im), Complex64::new(tr / 2.0, -im)]
    } else {
        let s = h.sqrt();
        // Avoid cancellation for the smaller root.
        let big = tr / 2.0 + if tr >= 0.0 { s } else { -s };
        let small = if big != 0.0 { det / big } else { tr / 2.0 - s };
        [Complex64::new(big, 0.0), Complex64::new(small, 0.0)]
    }
}

/// A unit null vector of a (numerically) rank-deficient 3×3 matrix.
pub fn null_vector3(m: &Matrix3<f64>) -> Vector3<f64> {
    let rows = [
        m.row(0).transpose(),
        m.row(1).transpose(),
        m.row(2).transpose(),
    ];
    let candidates = [
        rows[0].cross(&rows[1]),
        rows[0].cross(&rows[2]),
        rows[1].cross(&rows[2]),
    ];
    let best = candidates
        .iter()
        .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap_or(Ordering::Equal))
        .copied()
        .unwrap_or_else(Vector3::zeros);
    if best.norm() > 1e-300 {
        return best.normalize();
    }
    // Rank <= 1: anything orthogonal to the dominant row.
    let row = rows
        .iter()
        .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap_or(Ordering::Equal))
        .copied()
        .unwrap_or_else(Vector3::zeros);
    if row.norm() < 1e-300 {
        return Vector3::x();
    }
    let trial = if row.x.abs() < 0.9 * row.norm() {
        Vector3::x()
    } else {
        Vector3::y()
    };
    row.cross(&trial).normalize()
}

/// Right eigenvector for a real eigenvalue.
pub fn real_eigenvector3(m: &Matrix3<f64>, lambda: f64) -> Vector3<f64> {
    null_vector3(&(m - Matrix3::identity() * lambda))
}

/// Left eigenvector (`ℓᵀ M = λ ℓᵀ`) for a real eigenvalue.
pub fn left_eigenvector3(m: &Matrix3<f64>, lambda: f64) -> Vector3<f64> {
    real_eigenvector3(&m.transpose(), lambda)
}
