//! Fixed points, spectra, condition (C1), type on the carrying simplex and
//! fixed point index.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigen::{eigenvalues, sort_by_modulus};
use crate::error::{Error, Result};
use crate::models::CompetitiveMap;

/// Default band around modulus 1 inside which a point is non-hyperbolic.
pub const HYPERBOLIC_TOL: f64 = 1e-9;
/// Relative fixed-point residual accepted for any returned record.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportKind {
    Origin,
    Axial,
    Planar,
    /// Support strictly between planar and interior (only for n > 3).
    Face,
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SType {
    Attractor,
    Repeller,
    Saddle,
    NonHyperbolic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointRecord {
    /// `origin`, `w1`..`wn` (axial), `v12`.. (planar), `q` (interior).
    pub id: String,
    pub location: Vec<f64>,
    /// Zero-based indices of the positive coordinates.
    pub support: Vec<usize>,
    pub support_kind: SupportKind,
    /// Spectrum of `DT`, ascending modulus, serialized as `[re, im]` pairs.
    pub eigenvalues: Vec<Complex64>,
    pub mu: Complex64,
    pub nu: f64,
    /// (C1) evaluated on the support block of `DT` (the full matrix for `q`).
    pub c1_holds: bool,
    pub hyperbolic: bool,
    /// Spectrum of `T` restricted to the carrying simplex at this point.
    pub s_spectrum: Vec<Complex64>,
    pub s_type: Option<SType>,
    pub index: Option<i32>,
}

impl FixedPointRecord {
    pub fn is_boundary(&self) -> bool {
        !matches!(
            self.support_kind,
            SupportKind::Interior | SupportKind::Origin
        )
    }
}

fn support_kind(len: usize, n: usize) -> SupportKind {
    match len {
        0 => SupportKind::Origin,
        l if l == n => SupportKind::Interior,
        1 => SupportKind::Axial,
        2 => SupportKind::Planar,
        _ => SupportKind::Face,
    }
}

fn support_id(support: &[usize], n: usize) -> String {
    match support.len() {
        0 => "origin".to_string(),
        l if l == n => "q".to_string(),
        1 => format!("w{}", support[0] + 1),
        _ => {
            let digits: String = support.iter().map(|i| (i + 1).to_string()).collect();
            format!("v{digits}")
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖T(x) − x‖`.
pub fn fixed_point_residual(map: &CompetitiveMap, x: &[f64]) -> f64 {
    let t = map.eval(x);
    t.iter()
        .zip(x)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Builds the full record (spectrum, (C1), on-S type, index) for a point
/// already known to be fixed.
pub fn record_fixed_point(map: &CompetitiveMap, location: Vec<f64>) -> Result<FixedPointRecord> {
    let n = map.dim();
    if location.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: location.len(),
        });
    }
    let residual = fixed_point_residual(map, &location);
    if residual >= RESIDUAL_TOL * (1.0 + norm(&location)) {
        return Err(Error::NewtonDiverged {
            iterations: 0,
            residual,
        });
    }
    let support: Vec<usize> = (0..n).filter(|&i| location[i] > 0.0).collect();
    let jac = map.jacobian(&location);
    let eigs = eigenvalues(&jac);
    let mu = eigs[0];
    let nu = eigs.get(1).map(|z| z.norm()).unwrap_or(f64::INFINITY);
    let hyperbolic = eigs.iter().all(|z| (z.norm() - 1.0).abs() > HYPERBOLIC_TOL);

    let (c1_holds, s_spectrum) = if support.is_empty() {
        (false, Vec::new())
    } else {
        let block = sub_matrix(&jac, &support);
        let c1 = c1_from_jacobian(&block).map(|r| r.passes).unwrap_or(false);
        let mut block_eigs = eigenvalues(&block);
        block_eigs.remove(0);
        let growth = map.growth(&location);
        let mut s_spec = block_eigs;
        s_spec.extend(
            (0..n)
                .filter(|i| !support.contains(i))
                .map(|i| Complex64::new(growth[i], 0.0)),
        );
        sort_by_modulus(&mut s_spec);
        (c1, s_spec)
    };

    let s_type = if support.is_empty() || !c1_holds {
        None
    } else {
        Some(classify_spectrum_on_s(&s_spectrum, HYPERBOLIC_TOL).unwrap_or(SType::NonHyperbolic))
    };
    let index = index_from_jacobian(&jac, HYPERBOLIC_TOL).ok();

    Ok(FixedPointRecord {
        id: support_id(&support, n),
        support_kind: support_kind(support.len(), n),
        location,
        support,
        eigenvalues: eigs,
        mu,
        nu,
        c1_holds,
        hyperbolic,
        s_spectrum,
        s_type,
        index,
    })
}

fn sub_matrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

/// Positive root `w_i` of `F_i(t e_i) = 1`.
pub fn axial_coordinate(map: &CompetitiveMap, axis: usize) -> Result<f64> {
    if let Some(a) = map.interaction() {
        return Ok(1.0 / a[(axis, axis)]);
    }
    let n = map.dim();
    let mut x = vec![0.0; n];
    let mut g = |t: f64| -> (f64, f64) {
        x[axis] = t;
        let f = map.growth(&x)[axis] - 1.0;
        let df = map.partials(&x)[axis * n + axis];
        (f, df)
    };
    let fail = |reason: &str| Error::NoAxialFixedPoint {
        axis,
        reason: reason.to_string(),
    };
    let (g0, _) = g(0.0);
    if !(g0 > 0.0) {
        return Err(fail("F_i(0) <= 1, the axis has no positive fixed point"));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut expansions = 0;
    while g(hi).0 > 0.0 {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 60 {
            return Err(fail("F_i stays above 1 along the axis"));
        }
    }
    // Safeguarded Newton inside [lo, hi].
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (gt, dgt) = g(t);
        if gt.abs() < 1e-15 {
            return Ok(t);
        }
        if gt > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - gt / dgt;
        t = if dgt != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 * hi.max(1.0) {
            return Ok(t);
        }
    }
    Ok(t)
}

pub fn find_axial_fixed_points(map: &CompetitiveMap) -> Result<Vec<FixedPointRecord>> {
    let n = map.dim();
    (0..n)
        .map(|i| {
            let wi = axial_coordinate(map, i)?;
            let mut loc = vec![0.0; n];
            loc[i] = wi;
            record_fixed_point(map, loc)
        })
        .collect()
}

/// Fixed point whose support is exactly `support`, if one exists.
///
/// Builtins solve `Σ_{j∈κ} a_ij q_j = 1` for `i ∈ κ`; custom maps run a
/// damped Newton iteration on `F_κ(x) = 1` restricted to the face.
pub fn fixed_point_on_support(
    map: &CompetitiveMap,
    support: &[usize],
    seed: Option<&[f64]>,
) -> Result<Option<Vec<f64>>> {
    let n = map.dim();
    let k = support.len();
    if let Some(a) = map.interaction() {
        let block = sub_matrix(&a, support);
        let scale = block.abs().max();
        let det = block.determinant();
        if det.abs() <= 1e-12 * scale.powi(k as i32) {
            return Err(Error::Degenerate {
                support: support.to_vec(),
            });
        }
        let sol = block
            .lu()
            .solve(&DVector::from_element(k, 1.0))
            .ok_or_else(|| Error::Degenerate {
                support: support.to_vec(),
            })?;
        if sol.iter().any(|&v| !(v > 0.0)) {
            return Ok(None);
        }
        let mut loc = vec![0.0; n];
        for (slot, &i) in support.iter().enumerate() {
            loc[i] = sol[slot];
        }
        return Ok(Some(loc));
    }

    let mut x = match seed {
        Some(s) => s.to_vec(),
        None => {
            let mut x = vec![0.0; n];
            for &i in support {
                x[i] = axial_coordinate(map, i)? / k as f64;
            }
            x
        }
    };
    for i in (0..n).filter(|i| !support.contains(i)) {
        x[i] = 0.0;
    }
    match damped_newton(map, support, &mut x) {
        Ok(()) if support.iter().all(|&i| x[i] > 0.0) => Ok(Some(x)),
        Ok(()) => Ok(None),
        Err(e) => Err(e),
    }
}

fn damped_newton(map: &CompetitiveMap, support: &[usize], x: &mut [f64]) -> Result<()> {
    let n = map.dim();
    let k = support.len();
    let resid = |x: &[f64]| -> DVector<f64> {
        let f = map.growth(x);
        DVector::from_iterator(k, support.iter().map(|&i| f[i] - 1.0))
    };
    let mut r = resid(x);
    const MAX_ITERS: usize = 200;
    for _ in 0..MAX_ITERS {
        if r.norm() < 1e-14 {
            return Ok(());
        }
        let df = map.partials(x);
        let jac = DMatrix::from_fn(k, k, |a, b| df[support[a] * n + support[b]]);
        let step = jac
            .lu()
            .solve(&(-&r))
            .ok_or(Error::SingularJacobian { det: 0.0 })?;
        let mut lambda = 1.0;
        let base = r.norm();
        loop {
            let mut trial = x.to_vec();
            for (slot, &i) in support.iter().enumerate() {
                trial[i] = x[i] + lambda * step[slot];
            }
            let rt = resid(&trial);
            if rt.norm() < base || lambda < 1e-8 {
                x.copy_from_slice(&trial);
                r = rt;
                break;
            }
            lambda *= 0.5;
        }
    }
    if r.norm() < 1e-12 {
        Ok(())
    } else {
        Err(Error::NewtonDiverged {
            iterations: MAX_ITERS,
            residual: r.norm(),
        })
    }
}

/// Fixed point interior to the coordinate plane spanned by `pair`.
pub fn find_planar_fixed_point(
    map: &CompetitiveMap,
    pair: (usize, usize),
) -> Result<Option<FixedPointRecord>> {
    let (i, j) = if pair.0 < pair.1 {
        pair
    } else {
        (pair.1, pair.0)
    };
    match fixed_point_on_support(map, &[i, j], None)? {
        Some(loc) => record_fixed_point(map, loc).map(Some),
        None => Ok(None),
    }
}

/// Interior fixed point `q ≫ 0`.
pub fn find_interior_fixed_point(
    map: &CompetitiveMap,
    seed: Option<&[f64]>,
) -> Result<FixedPointRecord> {
    let n = map.dim();
    let support: Vec<usize> = (0..n).collect();
    match fixed_point_on_support(map, &support, seed) {
        Ok(Some(loc)) => record_fixed_point(map, loc),
        Ok(None) => Err(Error::NoInteriorFixedPoint(
            "solution has a non-positive coordinate".into(),
        )),
        Err(Error::Degenerate { .. }) => Err(Error::NoInteriorFixedPoint(
            "interaction matrix is singular".into(),
        )),
        Err(e) => Err(e),
    }
}

/// Origin plus every fixed point on every nonempty support.
///
/// Degenerate supports (singular blocks) are skipped and reported back by
/// index so callers can surface them.
pub fn find_all_fixed_points(
    map: &CompetitiveMap,
) -> Result<(Vec<FixedPointRecord>, Vec<Vec<usize>>)> {
    let n = map.dim();
    let mut records = vec![record_fixed_point(map, vec![0.0; n])?];
    let mut degenerate = Vec::new();
    let mut supports: Vec<Vec<usize>> = (1u32..(1 << n))
        .map(|mask| (0..n).filter(|&i| mask & (1 << i) != 0).collect())
        .collect();
    supports.sort_by(|a: &Vec<usize>, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    for support in supports {
        let found = if support.len() == 1 {
            Some(find_axial_fixed_points_single(map, support[0])?)
        } else {
            match fixed_point_on_support(map, &support, None) {
                Ok(Some(loc)) => Some(record_fixed_point(map, loc)?),
                Ok(None) => None,
                Err(Error::Degenerate { support }) => {
                    degenerate.push(support);
                    None
                }
                Err(Error::NewtonDiverged { .. }) => None,
                Err(e) => return Err(e),
            }
        };
        records.extend(found);
    }
    Ok((records, degenerate))
}

fn find_axial_fixed_points_single(map: &CompetitiveMap, axis: usize) -> Result<FixedPointRecord> {
    let mut loc = vec![0.0; map.dim()];
    loc[axis] = axial_coordinate(map, axis)?;
    record_fixed_point(map, loc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C1Report {
    pub det: f64,
    pub min_inverse_entry: f64,
    pub mu: f64,
    /// Perron vector of `DT⁻¹`, normalized to unit coordinate sum.
    pub perron_vector: Vec<f64>,
    pub passes: bool,
}

/// Condition (C1) for a Jacobian: entrywise positive inverse and smallest
/// modulus eigenvalue in `(0, 1)`.
pub fn c1_from_jacobian(jac: &DMatrix<f64>) -> Result<C1Report> {
    let n = jac.nrows();
    let det = jac.determinant();
    let scale = jac.abs().max().max(1e-300);
    if det.abs() <= 1e-14 * scale.powi(n as i32) {
        return Err(Error::SingularJacobian { det });
    }
    let inv = jac
        .clone()
        .try_inverse()
        .ok_or(Error::SingularJacobian { det })?;
    let min_inverse_entry = inv.iter().copied().fold(f64::INFINITY, f64::min);

    // Power iteration on the inverse; for a positive inverse it converges to
    // the Perron pair, i.e. (1/μ, v).
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    let mut root = 0.0;
    for _ in 0..10_000 {
        let next = &inv * &v;
        let s: f64 = next.iter().sum();
        if s == 0.0 || !s.is_finite() {
            break;
        }
        let next = next / s;
        let delta = (&next - &v).abs().max();
        root = s;
        v = next;
        if delta < 1e-15 {
            break;
        }
    }
    let eigs = eigenvalues(jac);
    let smallest = eigs[0];
    let mu = if smallest.im.abs() <= 1e-12 * (1.0 + smallest.norm()) {
        smallest.re
    } else {
        f64::NAN
    };
    let perron_ok = min_inverse_entry > 0.0 && v.iter().all(|&x| x > 0.0) && root > 0.0;
    let passes =
        perron_ok && mu > 0.0 && mu < 1.0 && ((1.0 / root) - mu).abs() <= 1e-8 * (1.0 + mu);
    Ok(C1Report {
        det,
        min_inverse_entry,
        mu,
        perron_vector: v.iter().copied().collect(),
        passes,
    })
}

pub fn verify_c1(map: &CompetitiveMap, p: &FixedPointRecord) -> Result<C1Report> {
    c1_from_jacobian(&map.jacobian(&p.location))
}

/// Type of the restriction to `S` given its spectrum (μ already removed).
pub fn classify_spectrum_on_s(s_spectrum: &[Complex64], tol: f64) -> Result<SType> {
    if let Some(z) = s_spectrum.iter().find(|z| (z.norm() - 1.0).abs() <= tol) {
        return Err(Error::NonHyperbolic {
            modulus: z.norm(),
            tol,
        });
    }
    let below = s_spectrum.iter().filter(|z| z.norm() < 1.0).count();
    Ok(if below == s_spectrum.len() {
        SType::Attractor
    } else if below == 0 {
        SType::Repeller
    } else {
        SType::Saddle
    })
}

/// On-S type of an interior point from the full spectrum of `DT(q)`
/// (ascending modulus); the smallest-modulus eigenvalue μ is dropped.
pub fn classify_on_s(eigenvalues: &[Complex64], tol: f64) -> Result<SType> {
    let mut sorted = eigenvalues.to_vec();
    sort_by_modulus(&mut sorted);
    classify_spectrum_on_s(&sorted[1..], tol)
}

/// `sign det(I − DT)`, equal to `(−1)^m` at hyperbolic points.
pub fn index_from_jacobian(jac: &DMatrix<f64>, tol: f64) -> Result<i32> {
    let n = jac.nrows();
    if eigenvalues(jac).iter().any(|z| (z - 1.0).norm() <= tol) {
        return Err(Error::EigenvalueOne { tol });
    }
    let det = (DMatrix::identity(n, n) - jac).determinant();
    if det == 0.0 {
        return Err(Error::EigenvalueOne { tol });
    }
    Ok(if det > 0.0 { 1 } else { -1 })
}

pub fn fixed_point_index(map: &CompetitiveMap, p: &FixedPointRecord) -> Result<i32> {
    index_from_jacobian(&map.jacobian(&p.location), HYPERBOLIC_TOL)
}
