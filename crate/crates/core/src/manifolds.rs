//! Invariant curves of an interior saddle on the carrying simplex and the
//! local foliation diagnostics around it.

use nalgebra::{Matrix2, Matrix3, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{c1_from_jacobian, FixedPointRecord, SType, HYPERBOLIC_TOL};
use crate::eigen::{eigen3, left_eigenvector3, real_eigenvector3};
use crate::error::{Error, Result};
use crate::models::CompetitiveMap;
use crate::simplex::SimplexMesh;

fn vec3(x: &[f64]) -> Vector3<f64> {
    Vector3::new(x[0], x[1], x[2])
}

fn arr(x: &Vector3<f64>) -> [f64; 3] {
    [x[0], x[1], x[2]]
}

/// Splitting of `DT(q)` into the Perron direction `v` and its invariant
/// complement `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSplitting {
    pub mu: f64,
    /// Unit Perron eigenvector, strictly positive.
    pub v: Vector3<f64>,
    /// Left eigenvector for `μ`; `W` is its orthogonal complement.
    pub left: Vector3<f64>,
    /// Orthonormal basis of `W`.
    pub w_basis: [Vector3<f64>; 2],
    /// Eigenvalues of `DT(q)|_W`, ascending modulus.
    pub w_eigenvalues: [Complex64; 2],
    /// Moduli of `w_eigenvalues`; the first is `ν`.
    pub w_moduli: [f64; 2],
    pub jacobian: Matrix3<f64>,
}

impl PseudoSplitting {
    pub fn nu(&self) -> f64 {
        self.w_moduli[0]
    }

    /// `DT(q)|_W` in the orthonormal basis `w_basis`.
    pub fn restricted(&self) -> Matrix2<f64> {
        let b = &self.w_basis;
        Matrix2::from_fn(|i, j| b[i].dot(&(self.jacobian * b[j])))
    }

    /// Default `ρ = (μ + min(1, ν)) / 2`.
    pub fn default_rho(&self) -> f64 {
        0.5 * (self.mu + self.nu().min(1.0))
    }

    /// Default `σ = (ρ + ν) / 2`.
    pub fn default_sigma(&self, rho: f64) -> f64 {
        0.5 * (rho + self.nu())
    }
}

pub fn splitting_from_jacobian(jac: &Matrix3<f64>) -> Result<PseudoSplitting> {
    let report = c1_from_jacobian(&nalgebra::DMatrix::from_fn(3, 3, |i, j| jac[(i, j)]))?;
    if !report.passes {
        return Err(Error::C1Violated(format!(
            "min entry of DT⁻¹ = {:.3e}, μ = {:.6}",
            report.min_inverse_entry, report.mu
        )));
    }
    let eigs = eigen3(jac);
    let mu = eigs[0].re;
    let mut v = real_eigenvector3(jac, mu);
    if v.sum() < 0.0 {
        v = -v;
    }
    if v.iter().any(|&x| x <= 0.0) {
        return Err(Error::C1Violated(format!(
            "Perron vector not positive: {v:?}"
        )));
    }
    let left = left_eigenvector3(jac, mu).normalize();
    let trial = if left.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let b1 = left.cross(&trial).normalize();
    let b2 = left.cross(&b1).normalize();
    Ok(PseudoSplitting {
        mu,
        v,
        left,
        w_basis: [b1, b2],
        w_eigenvalues: [eigs[1], eigs[2]],
        w_moduli: [eigs[1].norm(), eigs[2].norm()],
        jacobian: *jac,
    })
}

/// Perron direction, invariant complement and `W`-spectrum at `q`.
pub fn pseudo_splitting(map: &CompetitiveMap, q: &Vector3<f64>) -> Result<PseudoSplitting> {
    map.require_three()?;
    splitting_from_jacobian(&map.jacobian3(q))
}

/// Saddle data on `S`: one `W`-eigenvalue inside and one outside the unit
/// circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleData {
    pub q: Vector3<f64>,
    pub splitting: PseudoSplitting,
    pub lambda_stable: f64,
    pub lambda_unstable: f64,
    /// Unit eigenvector for `lambda_unstable`.
    pub unstable_dir: Vector3<f64>,
}

pub fn saddle_data(map: &CompetitiveMap, q: &Vector3<f64>) -> Result<SaddleData> {
    let splitting = pseudo_splitting(map, q)?;
    let [l1, l2] = splitting.w_eigenvalues;
    let [m1, m2] = splitting.w_moduli;
    if !(m1 < 1.0 - HYPERBOLIC_TOL && m2 > 1.0 + HYPERBOLIC_TOL) {
        return Err(Error::NotASaddle);
    }
    if l2.im.abs() > 1e-12 * (1.0 + m2) || l1.im.abs() > 1e-12 * (1.0 + m1) {
        return Err(Error::NoUnstableEigendirection);
    }
    let unstable_dir = real_eigenvector3(&splitting.jacobian, l2.re);
    Ok(SaddleData {
        q: *q,
        lambda_stable: l1.re,
        lambda_unstable: l2.re,
        unstable_dir,
        splitting,
    })
}

/// A boundary fixed point with a role on `S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: String,
    pub location: [f64; 3],
}

impl Landmark {
    pub fn point(&self) -> Vector3<f64> {
        vec3(&self.location)
    }
}

/// The two boundary attractors `a1, a2` and repellers `r1, r2` on `S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRoles {
    pub attractors: [Landmark; 2],
    pub repellers: [Landmark; 2],
}

pub fn boundary_roles(records: &[FixedPointRecord]) -> Result<BoundaryRoles> {
    let pick = |t: SType| -> Vec<Landmark> {
        records
            .iter()
            .filter(|r| r.is_boundary() && r.s_type == Some(t) && r.location.len() == 3)
            .map(|r| Landmark {
                id: r.id.clone(),
                location: [r.location[0], r.location[1], r.location[2]],
            })
            .collect()
    };
    let a = pick(SType::Attractor);
    let r = pick(SType::Repeller);
    if a.len() != 2 || r.len() != 2 {
        return Err(Error::BoundaryStructure(format!(
            "expected two boundary attractors and two repellers, found {} and {}",
            a.len(),
            r.len()
        )));
    }
    Ok(BoundaryRoles {
        attractors: [a[0].clone(), a[1].clone()],
        repellers: [r[0].clone(), r[1].clone()],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Unstable,
    Stable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldCurve {
    pub kind: CurveKind,
    pub points: Vec<[f64; 3]>,
    pub endpoints: Vec<String>,
    /// Distance from each end of the polyline to its endpoint.
    pub terminal_distances: Vec<f64>,
    pub arc_params: Vec<f64>,
    pub tol: f64,
}

impl ManifoldCurve {
    fn new(
        kind: CurveKind,
        points: Vec<Vector3<f64>>,
        endpoints: [&Landmark; 2],
        tol: f64,
    ) -> Self {
        let mut arc = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                acc += (p - points[i - 1]).norm();
            }
            arc.push(acc);
        }
        let first = points.first().copied().unwrap_or_else(Vector3::zeros);
        let last = points.last().copied().unwrap_or_else(Vector3::zeros);
        Self {
            kind,
            terminal_distances: vec![
                (first - endpoints[0].point()).norm(),
                (last - endpoints[1].point()).norm(),
            ],
            endpoints: vec![endpoints[0].id.clone(), endpoints[1].id.clone()],
            points: points.iter().map(arr).collect(),
            arc_params: arc,
            tol,
        }
    }

    pub fn vectors(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| vec3(p)).collect()
    }

    pub fn length(&self) -> f64 {
        self.arc_params.last().copied().unwrap_or(0.0)
    }
}

fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Distance from `p` to a polyline.
pub fn distance_to_polyline(p: &Vector3<f64>, line: &[Vector3<f64>]) -> f64 {
    match line.len() {
        0 => f64::INFINITY,
        1 => (p - line[0]).norm(),
        _ => line
            .windows(2)
            .map(|w| point_segment_distance(p, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Symmetric Hausdorff distance between two polylines (vertices against
/// segments).
pub fn hausdorff(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    let one = |x: &[Vector3<f64>], y: &[Vector3<f64>]| {
        x.par_iter()
            .map(|p| distance_to_polyline(p, y))
            .reduce(|| 0.0, f64::max)
    };
    one(a, b).max(one(b, a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnstableOptions {
    /// Seed length along the unstable eigendirection.
    pub h0: f64,
    /// Maximum polyline edge before refinement.
    pub h_max: f64,
    pub endpoint_tol: f64,
    pub max_points: usize,
    pub max_steps: usize,
}

impl UnstableOptions {
    /// Defaults scaled by `‖q‖` and `‖w‖`.
    pub fn scaled(q_norm: f64, w_norm: f64) -> Self {
        Self {
            h0: 1e-6 * q_norm,
            h_max: 1e-3 * w_norm,
            endpoint_tol: 1e-5 * w_norm,
            max_points: 200_000,
            max_steps: 100_000,
        }
    }
}

fn iterate(map: &CompetitiveMap, x: Vector3<f64>, k: usize) -> Vector3<f64> {
    (0..k).fold(x, |y, _| map.eval3(&y))
}

fn trace_branch(
    map: &CompetitiveMap,
    saddle: &SaddleData,
    sign: f64,
    attractors: &[Landmark; 2],
    opts: &UnstableOptions,
) -> Result<(Vec<Vector3<f64>>, usize)> {
    let branch = if sign > 0.0 { "+" } else { "-" };
    let p0 = saddle.q + saddle.unstable_dir * (sign * opts.h0);
    let p1 = map.eval3(&p0);
    let seed = |s: f64| p0 + (p1 - p0) * s;
    let mut domain: Vec<(f64, Vector3<f64>)> = (0..=8)
        .map(|i| i as f64 / 8.0)
        .map(|s| (s, seed(s)))
        .collect();
    let mut points: Vec<Vector3<f64>> = domain.iter().map(|d| d.1).collect();
    let targets = [attractors[0].point(), attractors[1].point()];
    for k in 1..=opts.max_steps {
        let mut next: Vec<(f64, Vector3<f64>)> =
            domain.iter().map(|(s, x)| (*s, map.eval3(x))).collect();
        let mut i = 0;
        while i + 1 < next.len() {
            let gap = (next[i + 1].1 - next[i].1).norm();
            let ds = next[i + 1].0 - next[i].0;
            if gap > opts.h_max && ds > 1e-15 {
                let s = next[i].0 + 0.5 * ds;
                next.insert(i + 1, (s, iterate(map, seed(s), k)));
            } else {
                i += 1;
            }
        }
        let mut j = 1;
        while j + 1 < next.len() {
            if (next[j + 1].1 - next[j - 1].1).norm() < 0.5 * opts.h_max {
                next.remove(j);
            } else {
                j += 1;
            }
        }
        for (_, x) in next.iter().skip(1) {
            if points.last().map_or(true, |p| p != x) {
                points.push(*x);
            }
        }
        domain = next;
        for (idx, a) in targets.iter().enumerate() {
            if domain
                .iter()
                .all(|(_, x)| (x - a).norm() <= opts.endpoint_tol)
            {
                return Ok((points, idx));
            }
        }
        if points.len() > opts.max_points {
            return Err(Error::BranchDidNotTerminate {
                branch: branch.into(),
                steps: k,
            });
        }
    }
    Err(Error::BranchDidNotTerminate {
        branch: branch.into(),
        steps: opts.max_steps,
    })
}

/// Global unstable curve of the saddle: both branches traced by iterating a
/// fundamental domain, joined through `q`.
pub fn trace_unstable(
    map: &CompetitiveMap,
    saddle: &SaddleData,
    attractors: &[Landmark; 2],
    opts: &UnstableOptions,
) -> Result<ManifoldCurve> {
    let (minus, plus) = rayon::join(
        || trace_branch(map, saddle, -1.0, attractors, opts),
        || trace_branch(map, saddle, 1.0, attractors, opts),
    );
    let (minus, ia) = minus?;
    let (plus, ib) = plus?;
    let mut points: Vec<Vector3<f64>> = minus.into_iter().rev().collect();
    points.push(saddle.q);
    points.extend(plus);
    Ok(ManifoldCurve::new(
        CurveKind::Unstable,
        points,
        [&attractors[ia], &attractors[ib]],
        opts.endpoint_tol,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basin {
    /// Index into the attractor list and the iteration of entry.
    Attractor {
        index: usize,
        iterations: usize,
    },
    Unresolved,
}

impl Basin {
    pub fn index(&self) -> Option<usize> {
        match self {
            Basin::Attractor { index, .. } => Some(*index),
            Basin::Unresolved => None,
        }
    }
}

/// Attractor whose `tol`-ball the orbit of `x` enters within `max_iter`
/// steps. Orbits that stall away from every attractor are unresolved.
pub fn basin_of(
    map: &CompetitiveMap,
    x: &Vector3<f64>,
    attractors: &[Vector3<f64>],
    max_iter: usize,
    tol: f64,
) -> Basin {
    let mut y = *x;
    for it in 0..=max_iter {
        if let Some(index) = attractors.iter().position(|a| (y - a).norm() <= tol) {
            return Basin::Attractor {
                index,
                iterations: it,
            };
        }
        let next = map.eval3(&y);
        if !next.iter().all(|v| v.is_finite()) || next == y {
            return Basin::Unresolved;
        }
        y = next;
    }
    Basin::Unresolved
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableOptions {
    /// Number of uniform fan segments.
    pub resolution: usize,
    pub max_iter: usize,
    /// Ambient length at which bisection stops.
    pub bisection_tol: f64,
    /// Radius of the attractor balls used by `basin_of`.
    pub basin_tol: f64,
    pub endpoint_tol: f64,
    /// Fan segments are inserted until neighbouring crossings are closer
    /// than this (or `max_refinements` rounds have run).
    pub max_gap: f64,
    pub max_refinements: usize,
}

impl StableOptions {
    pub fn scaled(w_norm: f64) -> Self {
        Self {
            resolution: 64,
            max_iter: 50_000,
            bisection_tol: 1e-9 * w_norm,
            basin_tol: 1e-4 * w_norm,
            endpoint_tol: 1e-5 * w_norm,
            max_gap: 1e-3 * w_norm,
            max_refinements: 16,
        }
    }
}

/// Boundary of Δ² parameterized by `t ∈ [0, 3)`: `e1 → e2 → e3 → e1`.
pub fn perimeter_point(t: f64) -> [f64; 3] {
    let t = t.rem_euclid(3.0);
    if t < 1.0 {
        [1.0 - t, t, 0.0]
    } else if t < 2.0 {
        let s = t - 1.0;
        [0.0, 1.0 - s, s]
    } else {
        let s = t - 2.0;
        [s, 0.0, 1.0 - s]
    }
}

/// Perimeter parameter of a boundary direction.
pub fn perimeter_param(u: &[f64; 3]) -> Option<f64> {
    let s: f64 = u.iter().sum();
    let u = u.map(|x| x / s);
    let eps = 1e-12;
    if u[2].abs() <= eps {
        Some(u[1])
    } else if u[0].abs() <= eps {
        Some(1.0 + u[2])
    } else if u[1].abs() <= eps {
        Some(2.0 + u[0])
    } else {
        None
    }
}

fn chart(u: &[f64; 3]) -> [f64; 2] {
    [u[1], u[2]]
}

/// One crossing of a fan segment with the basin boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanCrossing {
    pub s: f64,
    /// Segment endpoint directions (arc of the first attractor, then the second).
    pub ends: [[f64; 3]; 2],
    /// Bracket on the segment parameter after bisection.
    pub bracket: [f64; 2],
    pub point: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableManifold {
    pub curve: ManifoldCurve,
    pub crossings: Vec<FanCrossing>,
    /// Attractor ids on the first and second end of every fan segment.
    pub sides: [String; 2],
    /// Fan parameter of the segment through the direction of `q`.
    pub s_q: Option<f64>,
}

fn direction(x: &Vector3<f64>) -> [f64; 3] {
    let s = x.sum();
    [x[0] / s, x[1] / s, x[2] / s]
}

fn lerp_dir(a: &[f64; 3], b: &[f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + t * (b[0] - a[0]),
        a[1] + t * (b[1] - a[1]),
        a[2] + t * (b[2] - a[2]),
    ]
}

fn orient(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

const BOUNDARY_NUDGES: [f64; 6] = [1e-12, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2];

/// Point at `t ∈ [0, 1]` on the fan path from `a` to `b`. Ends on a common
/// edge of Δ² are joined through an apex pushed into the interior by the
/// chord length, so the path leaves the boundary.
fn fan_path(a: &[f64; 3], b: &[f64; 3], t: f64) -> [f64; 3] {
    let shared_edge = (0..3).any(|k| a[k] == 0.0 && b[k] == 0.0);
    if !shared_edge {
        return lerp_dir(a, b, t);
    }
    let mid = lerp_dir(a, b, 0.5);
    let chord = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt();
    let to_center = mid.map(|m| 1.0 / 3.0 - m);
    let len = to_center.iter().map(|x| x * x).sum::<f64>().sqrt();
    let apex = [0, 1, 2].map(|k| mid[k] + chord.min(len) * to_center[k] / len);
    if t <= 0.5 {
        lerp_dir(a, &apex, 2.0 * t)
    } else {
        lerp_dir(&apex, b, 2.0 * t - 1.0)
    }
}

/// Lift to the mesh surface with a smooth radial correction around the
/// direction of `q` that makes the surface pass through `q` exactly.
struct PinnedSurface<'a> {
    mesh: &'a SimplexMesh,
    uq: [f64; 3],
    gain: f64,
    radius: f64,
}

impl<'a> PinnedSurface<'a> {
    fn new(mesh: &'a SimplexMesh, q: &Vector3<f64>) -> Self {
        let uq = direction(q);
        let gain = q.sum() / mesh.radius_at(&uq) - 1.0;
        Self {
            mesh,
            uq,
            gain,
            radius: 4.0 / mesh.resolution as f64,
        }
    }

    fn lift(&self, u: &[f64; 3]) -> Vector3<f64> {
        let d2 =
            (0..3).map(|k| (u[k] - self.uq[k]).powi(2)).sum::<f64>() / (self.radius * self.radius);
        let bump = if d2 < 1.0 { (1.0 - d2).powi(2) } else { 0.0 };
        self.mesh.lift(u) * (1.0 + self.gain * bump)
    }
}

/// Interior samples per fan path used to detect every basin change.
const PATH_SAMPLES: usize = 16;

/// Greedy nearest-neighbour ordering of the crossing points starting from
/// the one closest to `start`.
fn chain_from(start: &Vector3<f64>, crossings: &[FanCrossing]) -> Vec<usize> {
    let pts: Vec<Vector3<f64>> = crossings.iter().map(|c| vec3(&c.point)).collect();
    let mut left: Vec<usize> = (0..pts.len()).collect();
    let mut order = Vec::with_capacity(pts.len());
    let mut here = *start;
    while !left.is_empty() {
        let (k, _) = left
            .iter()
            .enumerate()
            .map(|(k, &i)| (k, (pts[i] - here).norm()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        let i = left.swap_remove(k);
        here = pts[i];
        order.push(i);
    }
    order
}

/// Global stable curve of the saddle on `S`, computed as the boundary
/// between the basins of the two boundary attractors along a fan of
/// segments sweeping from `r1` to `r2`.
pub fn trace_stable_on_s(
    map: &CompetitiveMap,
    mesh: &SimplexMesh,
    q: &Vector3<f64>,
    roles: &BoundaryRoles,
    opts: &StableOptions,
) -> Result<StableManifold> {
    let param = |l: &Landmark| {
        perimeter_param(&direction(&l.point()))
            .ok_or_else(|| Error::BoundaryStructure(format!("{} is not on the boundary", l.id)))
    };
    let (tr1, tr2) = (param(&roles.repellers[0])?, param(&roles.repellers[1])?);
    let (lo_t, hi_t) = if tr1 <= tr2 { (tr1, tr2) } else { (tr2, tr1) };
    let arc_a_len = hi_t - lo_t;
    let arc_b_len = 3.0 - arc_a_len;
    let ta = [param(&roles.attractors[0])?, param(&roles.attractors[1])?];
    let on_a = |t: f64| t > lo_t && t < hi_t;
    let (first, second) = match (on_a(ta[0]), on_a(ta[1])) {
        (true, false) => (0, 1),
        (false, true) => (1, 0),
        _ => {
            return Err(Error::BoundaryStructure(
                "both boundary attractors lie between the same pair of repellers".into(),
            ))
        }
    };
    let ends = |s: f64| {
        (
            perimeter_point(lo_t + s * arc_a_len),
            perimeter_point(lo_t - s * arc_b_len),
        )
    };

    let mut svals: Vec<f64> = (1..=opts.resolution)
        .map(|k| k as f64 / (opts.resolution + 1) as f64)
        .collect();
    for e in [1e-6, 1e-5, 1e-4, 1e-3, 1e-2] {
        svals.push(e);
        svals.push(1.0 - e);
    }
    svals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    svals.dedup();

    let uq = chart(&direction(q));
    let side = |s: f64| {
        let (a, b) = ends(s);
        orient(chart(&a), chart(&b), uq)
    };
    let mut s_q = None;
    for w in svals.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        let (flo, fhi) = (side(lo), side(hi));
        if flo == 0.0 {
            s_q = Some(lo);
            break;
        }
        if flo * fhi < 0.0 {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if side(mid) * flo > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-16 {
                    break;
                }
            }
            s_q = Some(0.5 * (lo + hi));
            break;
        }
    }
    if let Some(s) = s_q {
        svals.push(s);
        svals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        svals.dedup();
    }

    let attractors = [
        roles.attractors[first].point(),
        roles.attractors[second].point(),
    ];
    let surface = PinnedSurface::new(mesh, q);
    let crossing = |s0: f64| -> Result<Vec<FanCrossing>> {
        let mut s = s0;
        for attempt in 0..4 {
            let (ua, ub) = ends(s);
            let at = |t: f64| surface.lift(&fan_path(&ua, &ub, t));
            let basin =
                |t: f64| basin_of(map, &at(t), &attractors, opts.max_iter, opts.basin_tol).index();
            // Perimeter orbits can end at a boundary saddle; step inward
            // until the orbit reaches an attractor. When the nearest such
            // point within the bisection tolerance already lies in the other
            // basin, the crossing is bracketed by it and the perimeter point.
            let resolve = |inward: fn(f64) -> f64, own: usize| -> Result<(f64, Option<usize>)> {
                if let Some(k) = basin(inward(0.0)) {
                    return Ok((inward(0.0), Some(k)));
                }
                let edge = at(inward(0.0));
                for &d in &BOUNDARY_NUDGES {
                    if let Some(k) = basin(inward(d)) {
                        let thin = k != own && (at(inward(d)) - edge).norm() <= opts.bisection_tol;
                        return Ok(if thin {
                            (inward(0.0), Some(own))
                        } else {
                            (inward(d), Some(k))
                        });
                    }
                }
                Err(Error::UnresolvedOrbit {
                    point: arr(&edge).to_vec(),
                    max_iter: opts.max_iter,
                })
            };
            let (t0, b0) = resolve(|d| d, 0)?;
            let (t1, b1) = resolve(|d| 1.0 - d, 1)?;
            if b0 == Some(0) && b1 == Some(1) {
                // Every basin change along the path is a point of the curve.
                let mut samples: Vec<(f64, Option<usize>)> = vec![(t0, b0)];
                for k in 1..PATH_SAMPLES {
                    let t = t0 + (t1 - t0) * k as f64 / PATH_SAMPLES as f64;
                    samples.push((t, basin(t)));
                }
                samples.push((t1, b1));
                let known: Vec<(f64, usize)> = samples
                    .into_iter()
                    .filter_map(|(t, b)| b.map(|b| (t, b)))
                    .collect();
                let mut found = Vec::new();
                for w in known.windows(2) {
                    let ((mut lo, blo), (mut hi, bhi)) = (w[0], w[1]);
                    if blo == bhi {
                        continue;
                    }
                    while (at(hi) - at(lo)).norm() > opts.bisection_tol && hi - lo > 1e-16 {
                        let mid = 0.5 * (lo + hi);
                        match basin(mid) {
                            Some(b) if b == blo => lo = mid,
                            Some(_) => hi = mid,
                            None => {
                                lo = mid;
                                hi = mid;
                            }
                        }
                    }
                    found.push(FanCrossing {
                        s,
                        ends: [ua, ub],
                        bracket: [lo, hi],
                        point: arr(&at(0.5 * (lo + hi))),
                    });
                }
                return Ok(found);
            }
            // Nudge the segment and retry.
            let nudge = 1e-3 * (attempt + 1) as f64 * s0.min(1.0 - s0);
            s = s0 + if attempt % 2 == 0 { nudge } else { -nudge };
        }
        Err(Error::SegmentNotStraddling { s: s0 })
    };
    let run = |svals: &[f64]| -> Result<Vec<FanCrossing>> {
        let per: Vec<Vec<FanCrossing>> = svals
            .par_iter()
            .map(|&s| crossing(s))
            .collect::<Result<_>>()?;
        Ok(per.into_iter().flatten().collect())
    };
    let start = roles.repellers[0].point();
    let mut crossings = run(&svals)?;
    let mut order = chain_from(&start, &crossings);
    for _ in 0..opts.max_refinements {
        let mut extra: Vec<f64> = order
            .windows(2)
            .map(|w| (&crossings[w[0]], &crossings[w[1]]))
            .filter(|(a, b)| (vec3(&b.point) - vec3(&a.point)).norm() > opts.max_gap)
            .flat_map(|(a, b)| {
                if (a.s - b.s).abs() > 1e-12 {
                    vec![0.5 * (a.s + b.s)]
                } else {
                    let d = 1e-3 * a.s.min(1.0 - a.s);
                    vec![a.s - d, a.s + d]
                }
            })
            .collect();
        extra.sort_by(|a, b| a.partial_cmp(b).unwrap());
        extra.dedup();
        if extra.is_empty() {
            break;
        }
        crossings.extend(run(&extra)?);
        order = chain_from(&start, &crossings);
    }
    let mut points: Vec<Vector3<f64>> = order.iter().map(|&i| vec3(&crossings[i].point)).collect();
    points.dedup();
    let curve = ManifoldCurve::new(
        CurveKind::Stable,
        points,
        [&roles.repellers[0], &roles.repellers[1]],
        opts.endpoint_tol,
    );
    crossings.sort_by(|a, b| {
        a.s.partial_cmp(&b.s)
            .unwrap()
            .then(a.bracket[0].partial_cmp(&b.bracket[0]).unwrap())
    });
    Ok(StableManifold {
        curve,
        crossings,
        sides: [
            roles.attractors[first].id.clone(),
            roles.attractors[second].id.clone(),
        ],
        s_q,
    })
}

/// Minimum distance between two curves over points of `a` outside the ball
/// of radius `exclude` around `center`.
pub fn curve_separation(
    a: &[Vector3<f64>],
    b: &[Vector3<f64>],
    center: &Vector3<f64>,
    exclude: f64,
) -> f64 {
    a.par_iter()
        .filter(|p| (*p - center).norm() > exclude)
        .map(|p| distance_to_polyline(p, b))
        .reduce(|| f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafStatus {
    Pass,
    /// The contraction along `v` at `q` itself is within `ρ`, but samples
    /// further out exceed it.
    NeighborhoodTooLarge,
    LocalViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafContractionReport {
    pub rho: f64,
    pub mu: f64,
    pub radius: f64,
    pub samples: usize,
    pub max_ratio: f64,
    /// `(t, ‖T(q + t v) − T(q)‖ / t)` for `t = r, r/2, r/4`.
    pub ratios_at_q: Vec<(f64, f64)>,
    pub status: LeafStatus,
}

fn ball_sample(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let p = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if p.norm() <= 1.0 {
            return p;
        }
    }
}

/// Samples `ξ′` in the `radius`-ball around `q` and checks the first-order
/// leaf contraction `‖T(ξ′) − T(ξ′ + t v)‖ ≤ ρ t`.
pub fn leaf_contraction_report(
    map: &CompetitiveMap,
    q: &Vector3<f64>,
    splitting: &PseudoSplitting,
    rho: f64,
    sample_count: usize,
    radius: f64,
    seed: u64,
) -> LeafContractionReport {
    let v = splitting.v.normalize();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = 0.1 * radius;
    let mut max_ratio: f64 = 0.0;
    let mut taken = 0;
    while taken < sample_count {
        let xi = q + ball_sample(&mut rng) * (radius - t);
        if xi.iter().any(|&c| c <= 0.0) {
            continue;
        }
        let xi2 = xi + v * t;
        let ratio = (map.eval3(&xi) - map.eval3(&xi2)).norm() / (xi - xi2).norm();
        max_ratio = max_ratio.max(ratio);
        taken += 1;
    }
    let fq = map.eval3(q);
    let ratios_at_q: Vec<(f64, f64)> = [radius, radius / 2.0, radius / 4.0]
        .iter()
        .map(|&h| (h, (map.eval3(&(q + v * h)) - fq).norm() / h))
        .collect();
    let at_q = ratios_at_q.last().map(|r| r.1).unwrap_or(f64::NAN);
    let status = if max_ratio <= rho {
        LeafStatus::Pass
    } else if at_q <= rho {
        LeafStatus::NeighborhoodTooLarge
    } else {
        LeafStatus::LocalViolation
    };
    LeafContractionReport {
        rho,
        mu: splitting.mu,
        radius,
        samples: taken,
        max_ratio,
        ratios_at_q,
        status,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugacyOptions {
    pub sample_count: usize,
    pub k_max: usize,
    pub radius: f64,
    pub slack: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySample {
    pub xi: [f64; 3],
    pub distances: Vec<f64>,
    /// `exp` of the least-squares slope of `ln d_k` against `k`.
    pub fitted_ratio: f64,
    pub on_surface: bool,
    /// `None` for off-surface samples, which are informational only.
    pub passes: Option<bool>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugacyDecayReport {
    pub rho: f64,
    pub slack: f64,
    pub radius: f64,
    pub samples: Vec<DecaySample>,
    pub pass_fraction: f64,
}

/// First-order leaf projection of `ξ` along `v` onto `q + W`.
pub fn leaf_projection(
    xi: &Vector3<f64>,
    q: &Vector3<f64>,
    splitting: &PseudoSplitting,
) -> Vector3<f64> {
    let l = splitting.left;
    xi - splitting.v * (l.dot(&(xi - q)) / l.dot(&splitting.v))
}

fn fit_ratio(d: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = d
        .iter()
        .enumerate()
        .filter(|(_, x)| **x > 0.0)
        .map(|(k, x)| (k as f64, x.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxy / sxx).exp()
}

/// Decay of `‖T^k(ξ) − T^k(Rξ)‖` for one point.
pub fn decay_sample(
    map: &CompetitiveMap,
    mesh: &SimplexMesh,
    q: &Vector3<f64>,
    splitting: &PseudoSplitting,
    xi: &Vector3<f64>,
    rho: f64,
    opts: &ConjugacyOptions,
) -> DecaySample {
    let on_surface = mesh
        .distance(xi)
        .map(|d| d <= 1e-9 * (1.0 + xi.norm()))
        .unwrap_or(false);
    let mut a = *xi;
    let mut b = leaf_projection(xi, q, splitting);
    let mut distances = vec![(a - b).norm()];
    for _ in 0..opts.k_max {
        if distances.last().is_some_and(|d| *d < 1e-14) {
            break;
        }
        a = map.eval3(&a);
        b = map.eval3(&b);
        distances.push((a - b).norm());
        if (a - q).norm() > opts.radius && distances.len() >= 2 {
            break;
        }
    }
    let fitted_ratio = if distances[0] == 0.0 {
        0.0
    } else {
        fit_ratio(&distances)
    };
    let ok = fitted_ratio <= rho + opts.slack;
    DecaySample {
        xi: arr(xi),
        distances,
        fitted_ratio,
        on_surface,
        passes: on_surface.then_some(ok),
        label: if on_surface {
            "on-surface".into()
        } else {
            "off-surface, informational only".into()
        },
    }
}

/// Samples `ξ` on the mesh within `radius` of `q` and fits the geometric
/// decay rate of `‖T^k(ξ) − T^k(Rξ)‖`.
pub fn conjugacy_decay_report(
    map: &CompetitiveMap,
    mesh: &SimplexMesh,
    q: &Vector3<f64>,
    splitting: &PseudoSplitting,
    rho: f64,
    opts: &ConjugacyOptions,
) -> ConjugacyDecayReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let uq = direction(q);
    let base = mesh.lift(&uq);
    let spread = 2.0 * opts.radius / q.sum().max(1e-300);
    let mut points = Vec::with_capacity(opts.sample_count);
    let mut tries = 0;
    while points.len() < opts.sample_count && tries < 1000 * opts.sample_count.max(1) {
        tries += 1;
        let d = [
            rng.random_range(-spread..=spread),
            rng.random_range(-spread..=spread),
        ];
        let u = [uq[0] - d[0] - d[1], uq[1] + d[0], uq[2] + d[1]];
        if u.iter().any(|&x| x <= 0.0) {
            continue;
        }
        let xi = mesh.lift(&u);
        let r = (xi - base).norm();
        if r <= opts.radius && r >= 0.05 * opts.radius {
            points.push(xi);
        }
    }
    let samples: Vec<DecaySample> = points
        .par_iter()
        .map(|xi| decay_sample(map, mesh, q, splitting, xi, rho, opts))
        .collect();
    let judged: Vec<bool> = samples.iter().filter_map(|s| s.passes).collect();
    let pass_fraction = if judged.is_empty() {
        0.0
    } else {
        judged.iter().filter(|&&b| b).count() as f64 / judged.len() as f64
    };
    ConjugacyDecayReport {
        rho,
        slack: opts.slack,
        radius: opts.radius,
        samples,
        pass_fraction,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct M2ExpansionReport {
    pub sigma: f64,
    pub l_search_max: usize,
    /// Smallest `l` with `‖M_W^{-l}‖ < σ^{-l}`; `None` reports NoSuchL.
    pub l: Option<usize>,
    /// `ln ‖M_W^{-l}‖ + l ln σ` at the returned `l`, or at `l_search_max`.
    pub log_margin: f64,
}

fn norm2(m: &Matrix2<f64>) -> f64 {
    // Largest singular value in closed form.
    let a = m.transpose() * m;
    let tr = a.trace();
    let det = a.determinant();
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 + disc).max(0.0).sqrt()
}

/// Search for the first `l ≤ l_max` with `‖M^{-l}‖ < σ^{-l}`.
pub fn m2_expansion_search(
    m_w: &Matrix2<f64>,
    sigma: f64,
    l_max: usize,
) -> Result<M2ExpansionReport> {
    let inv = m_w.try_inverse().ok_or(Error::SingularJacobian {
        det: m_w.determinant(),
    })?;
    let mut p = Matrix2::identity();
    let mut log_scale = 0.0;
    let mut margin = f64::NAN;
    for l in 1..=l_max {
        p = inv * p;
        let n = norm2(&p);
        if n == 0.0 {
            return Ok(M2ExpansionReport {
                sigma,
                l_search_max: l_max,
                l: Some(l),
                log_margin: f64::NEG_INFINITY,
            });
        }
        p /= n;
        log_scale += n.ln();
        margin = log_scale + l as f64 * sigma.ln();
        if margin < 0.0 {
            return Ok(M2ExpansionReport {
                sigma,
                l_search_max: l_max,
                l: Some(l),
                log_margin: margin,
            });
        }
    }
    Ok(M2ExpansionReport {
        sigma,
        l_search_max: l_max,
        l: None,
        log_margin: margin,
    })
}

pub fn m2_expansion_report(
    splitting: &PseudoSplitting,
    sigma: f64,
    l_search_max: usize,
) -> Result<M2ExpansionReport> {
    m2_expansion_search(&splitting.restricted(), sigma, l_search_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitOutcome {
    Converged {
        fixed_point: String,
        iterations: usize,
        distance: f64,
    },
    Unresolved {
        iterations: usize,
    },
}

/// Iterates until the step falls below `step_tol` and requires the orbit to
/// sit within `fp_tol` of one of `fixed_points`.
pub fn converge_orbit(
    map: &CompetitiveMap,
    x0: &Vector3<f64>,
    fixed_points: &[(String, Vector3<f64>)],
    max_iter: usize,
    step_tol: f64,
    fp_tol: f64,
) -> OrbitOutcome {
    let mut y = *x0;
    for it in 1..=max_iter {
        let next = map.eval3(&y);
        let step = (next - y).norm();
        y = next;
        if step < step_tol {
            let nearest = fixed_points
                .iter()
                .map(|(id, p)| (id, (y - p).norm()))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            if let Some((id, d)) = nearest {
                if d <= fp_tol {
                    return OrbitOutcome::Converged {
                        fixed_point: id.clone(),
                        iterations: it,
                        distance: d,
                    };
                }
            }
        }
    }
    OrbitOutcome::Unresolved {
        iterations: max_iter,
    }
}
