//! The carrying simplex as a radial graph over the direction simplex Δ².
//!
//! Directions `u` (coordinate sum 1) sit on a regular triangular lattice of
//! resolution `N`; each carries a radius `ρ(u)` so that the surface vertex
//! is `ρ(u)·u` (`ρ` is the coordinate sum of the vertex). The surface between
//! vertices is the flat triangulation, which makes `1/ρ` barycentrically
//! linear in `u` on every face.
//!
//! The surface is computed by a graph transform: map every vertex by `T`,
//! then re-sample the image surface along the lattice rays.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::axial_coordinate;
use crate::error::{Error, Result};
use crate::models::CompetitiveMap;

pub const DEFAULT_RESOLUTION: usize = 64;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 5000;
pub const DEFAULT_GRADING: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialSurface {
    /// The plane `Σ x_i / w_i = 1` through the axial fixed points.
    #[default]
    AxialPlane,
    /// The axial plane scaled radially by a positive factor.
    ScaledPlane(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexOptions {
    pub resolution: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub initial: InitialSurface,
    /// Corner grading exponent of the direction lattice.
    pub grading: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            initial: InitialSurface::AxialPlane,
            grading: DEFAULT_GRADING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexMesh {
    pub resolution: usize,
    /// Exponent of the corner grading; 1 is the uniform lattice.
    #[serde(default = "unit_grading")]
    pub grading: f64,
    pub directions: Vec<[f64; 3]>,
    pub radii: Vec<f64>,
    /// Last max radial displacement `|Δρ|·‖u‖`.
    pub residual: f64,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default)]
    pub converged: bool,
    /// Directions whose ray missed the image surface in the last sweep.
    #[serde(default)]
    pub flagged: Vec<usize>,
    /// Residual after every sweep.
    #[serde(default)]
    pub history: Vec<f64>,
    #[serde(skip)]
    triangles: Vec<[usize; 3]>,
}

fn unit_grading() -> f64 {
    1.0
}

/// Number of lattice directions for resolution `n`.
pub fn lattice_size(n: usize) -> usize {
    (n + 1) * (n + 2) / 2
}

#[inline]
fn lattice_index(n: usize, a: usize, b: usize) -> usize {
    a * (n + 1) - a * a.saturating_sub(1) / 2 + b
}

fn power_normalize(p: &[f64; 3], e: f64) -> [f64; 3] {
    if e == 1.0 {
        return *p;
    }
    let q = p.map(|x| x.max(0.0).powf(e));
    let s = q[0] + q[1] + q[2];
    q.map(|x| x / s)
}

/// Graded direction for the uniform lattice point `p`.
fn warp(p: &[f64; 3], grading: f64) -> [f64; 3] {
    power_normalize(p, grading)
}

/// Uniform lattice coordinates of the direction `u`.
fn unwarp(u: &[f64; 3], grading: f64) -> [f64; 3] {
    power_normalize(u, 1.0 / grading)
}

fn lattice(n: usize, grading: f64) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let mut dirs = Vec::with_capacity(lattice_size(n));
    for a in 0..=n {
        for b in 0..=(n - a) {
            let u2 = a as f64 / n as f64;
            let u3 = b as f64 / n as f64;
            let u1 = (n - a - b) as f64 / n as f64;
            dirs.push(warp(&[u1, u2, u3], grading));
        }
    }
    let mut tris = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..(n - a) {
            let p = lattice_index(n, a, b);
            let right = lattice_index(n, a + 1, b);
            let up = lattice_index(n, a, b + 1);
            tris.push([p, right, up]);
            if b + 1 < n - a {
                let diag = lattice_index(n, a + 1, b + 1);
                tris.push([right, diag, up]);
            }
        }
    }
    (dirs, tris)
}

fn normalize_direction(x: &Vector3<f64>) -> Option<[f64; 3]> {
    let s = x[0] + x[1] + x[2];
    if !(s > 0.0) || !s.is_finite() {
        return None;
    }
    Some([x[0] / s, x[1] / s, x[2] / s])
}

/// Quadratic Lagrange patch on the macro lattice of resolution `n / 2`
/// containing the uniform lattice point `u`: six node indices and weights.
fn quadratic_patch(n: usize, u: &[f64; 3]) -> ([usize; 6], [f64; 6]) {
    let m = n / 2;
    let mf = m as f64;
    let x = (u[1] * mf).max(0.0);
    let y = (u[2] * mf).max(0.0);
    let a = (x.floor() as usize).min(m - 1);
    let b = (y.floor() as usize).min(m - 1 - a);
    let fx = x - a as f64;
    let fy = y - b as f64;
    let (a2, b2) = (2 * a, 2 * b);
    let idx = |i: usize, j: usize| lattice_index(n, i, j);
    let (nodes, l) = if fx + fy <= 1.0 || b + 1 >= m - a {
        (
            [
                idx(a2, b2),
                idx(a2 + 2, b2),
                idx(a2, b2 + 2),
                idx(a2 + 1, b2),
                idx(a2 + 1, b2 + 1),
                idx(a2, b2 + 1),
            ],
            [1.0 - fx - fy, fx, fy],
        )
    } else {
        (
            [
                idx(a2 + 2, b2),
                idx(a2 + 2, b2 + 2),
                idx(a2, b2 + 2),
                idx(a2 + 2, b2 + 1),
                idx(a2 + 1, b2 + 2),
                idx(a2 + 1, b2 + 1),
            ],
            [1.0 - fy, fx + fy - 1.0, 1.0 - fx],
        )
    };
    let w = [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ];
    (nodes, w)
}

impl SimplexMesh {
    /// Mesh with the given radii on the uniform resolution-`n` lattice.
    pub fn from_radii(resolution: usize, radii: Vec<f64>) -> Result<Self> {
        Self::from_graded_radii(resolution, 1.0, radii)
    }

    /// Mesh with the given radii on a graded lattice.
    pub fn from_graded_radii(resolution: usize, grading: f64, radii: Vec<f64>) -> Result<Self> {
        if !(grading >= 1.0 && grading <= 4.0) {
            return Err(Error::Config(format!(
                "mesh grading must lie in [1, 4], got {grading}"
            )));
        }
        if resolution < 2 || resolution % 2 != 0 {
            return Err(Error::Config(format!(
                "mesh resolution must be even and >= 2, got {resolution}"
            )));
        }
        if radii.len() != lattice_size(resolution) {
            return Err(Error::Config(format!(
                "expected {} radii for resolution {resolution}, got {}",
                lattice_size(resolution),
                radii.len()
            )));
        }
        let (directions, triangles) = lattice(resolution, grading);
        Ok(Self {
            resolution,
            grading,
            directions,
            radii,
            residual: f64::MAX,
            iterations: 0,
            converged: false,
            flagged: Vec::new(),
            history: Vec::new(),
            triangles,
        })
    }

    /// Parses the persisted JSON document and rebuilds the triangulation.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut mesh: SimplexMesh = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!(
                "mesh file, line {}, column {}: {e}",
                e.line(),
                e.column()
            ))
        })?;
        if mesh.resolution < 2
            || mesh.resolution % 2 != 0
            || mesh.radii.len() != lattice_size(mesh.resolution)
        {
            return Err(Error::Config(
                "mesh radii do not match its resolution".into(),
            ));
        }
        if !(mesh.grading >= 1.0 && mesh.grading <= 4.0) {
            return Err(Error::Config(format!(
                "mesh grading must lie in [1, 4], got {}",
                mesh.grading
            )));
        }
        let (dirs, tris) = lattice(mesh.resolution, mesh.grading);
        let mismatch = dirs
            .iter()
            .zip(&mesh.directions)
            .any(|(a, b)| a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-12));
        if mismatch || mesh.directions.len() != dirs.len() {
            return Err(Error::Config(
                "mesh directions are not the standard lattice".into(),
            ));
        }
        mesh.directions = dirs;
        mesh.triangles = tris;
        Ok(mesh)
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex_count(&self) -> usize {
        self.radii.len()
    }

    pub fn vertex(&self, i: usize) -> Vector3<f64> {
        let u = self.directions[i];
        Vector3::new(u[0], u[1], u[2]) * self.radii[i]
    }

    pub fn vertices(&self) -> Vec<Vector3<f64>> {
        (0..self.vertex_count()).map(|i| self.vertex(i)).collect()
    }

    /// Index of the lattice direction `(a, b)` counted along `u2`, `u3`.
    pub fn index_of(&self, a: usize, b: usize) -> usize {
        lattice_index(self.resolution, a, b)
    }

    /// Longest ambient edge of the triangulation.
    pub fn edge_length(&self) -> f64 {
        let verts = self.vertices();
        self.triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (verts[a] - verts[b]).norm())
            .fold(0.0, f64::max)
    }

    /// Radius of the surface along direction `u` (coordinate sum 1).
    /// `1/ρ` is interpolated quadratically on six-node macro patches.
    pub fn radius_at(&self, u: &[f64; 3]) -> f64 {
        let (nodes, w) = quadratic_patch(self.resolution, &unwarp(u, self.grading));
        let inv: f64 = (0..6).map(|k| w[k] / self.radii[nodes[k]]).sum();
        1.0 / inv
    }

    /// Point of the surface on the ray through `x`.
    pub fn radial_project(&self, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        let u = normalize_direction(x).ok_or(Error::ZeroVector)?;
        let rho = self.radius_at(&u);
        Ok(Vector3::new(u[0], u[1], u[2]) * rho)
    }

    /// Lift of a direction to the surface.
    pub fn lift(&self, u: &[f64; 3]) -> Vector3<f64> {
        let s = u[0] + u[1] + u[2];
        let u = [u[0] / s, u[1] / s, u[2] / s];
        Vector3::new(u[0], u[1], u[2]) * self.radius_at(&u)
    }

    /// Distance from `x` to the surface measured along the ray through `x`.
    /// Upper bound for the Euclidean distance to the surface.
    pub fn radial_distance(&self, x: &Vector3<f64>) -> Result<f64> {
        let p = self.radial_project(x)?;
        Ok((p - x).norm())
    }

    /// Euclidean distance from `x` to the surface, found by Gauss-Newton
    /// over the direction chart started at the radial projection. Never
    /// exceeds [`Self::radial_distance`].
    pub fn distance(&self, x: &Vector3<f64>) -> Result<f64> {
        let u = normalize_direction(x).ok_or(Error::ZeroVector)?;
        let lift = |c: [f64; 2]| self.lift(&chart_point(c[0], c[1]));
        let clamp = |c: [f64; 2]| {
            let (a, b) = (c[0].max(0.0), c[1].max(0.0));
            let s = a + b;
            if s > 1.0 {
                [a / s, b / s]
            } else {
                [a, b]
            }
        };
        let mut c = [u[1], u[2]];
        let mut r = lift(c) - x;
        let mut best = r.norm();
        let h = 1e-7;
        for _ in 0..50 {
            let mut cols = [Vector3::zeros(); 2];
            for (k, col) in cols.iter_mut().enumerate() {
                let mut cp = c;
                let step = if cp[0] + cp[1] + h <= 1.0 { h } else { -h };
                cp[k] += step;
                *col = (lift(clamp(cp)) - lift(c)) / step;
            }
            let g = [cols[0].dot(&r), cols[1].dot(&r)];
            let m = [
                [cols[0].dot(&cols[0]), cols[0].dot(&cols[1])],
                [cols[0].dot(&cols[1]), cols[1].dot(&cols[1])],
            ];
            let det = m[0][0] * m[1][1] - m[0][1] * m[0][1];
            if det.abs() < 1e-300 {
                break;
            }
            let d = [
                -(m[1][1] * g[0] - m[0][1] * g[1]) / det,
                -(m[0][0] * g[1] - m[0][1] * g[0]) / det,
            ];
            let mut t = 1.0;
            let mut improved = false;
            while t > 1e-8 {
                let trial = clamp([c[0] + t * d[0], c[1] + t * d[1]]);
                let rt = lift(trial) - x;
                if rt.norm() < best {
                    improved = best - rt.norm() > 1e-16 * (1.0 + best);
                    c = trial;
                    r = rt;
                    best = rt.norm();
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        Ok(best)
    }

    /// Upper corner of the box containing every vertex.
    pub fn bounding_corner(&self) -> Vector3<f64> {
        self.vertices()
            .iter()
            .fold(Vector3::zeros(), |m, v| m.sup(v))
    }
}

fn initial_radii(dirs: &[[f64; 3]], w: &[f64; 3], init: InitialSurface) -> Vec<f64> {
    let factor = match init {
        InitialSurface::AxialPlane => 1.0,
        InitialSurface::ScaledPlane(f) => f,
    };
    dirs.iter()
        .map(|u| factor / (u[0] / w[0] + u[1] / w[1] + u[2] / w[2]))
        .collect()
}

fn image_direction(
    map: &CompetitiveMap,
    mesh: &SimplexMesh,
    u: &[f64; 3],
) -> Option<([f64; 3], f64)> {
    let image = map.eval3(&mesh.lift(u));
    let s = image[0] + image[1] + image[2];
    normalize_direction(&image).map(|d| (d, s))
}

fn chart_point(u2: f64, u3: f64) -> [f64; 3] {
    [(1.0 - u2 - u3).max(0.0), u2.max(0.0), u3.max(0.0)]
}

const PREIMAGE_TOL: f64 = 1e-14;
const PREIMAGE_ITERS: usize = 60;

/// Preimage on an edge of Δ²: the point `from + s (to − from)` whose image
/// direction matches `u`, by safeguarded secant steps on `s ∈ [0, 1]`.
fn edge_preimage(
    map: &CompetitiveMap,
    mesh: &SimplexMesh,
    from: usize,
    to: usize,
    u: &[f64; 3],
    guess: f64,
) -> Option<(f64, f64)> {
    let point = |s: f64| {
        let mut p = [0.0; 3];
        p[from] = 1.0 - s;
        p[to] = s;
        p
    };
    let g = |s: f64| image_direction(map, mesh, &point(s)).map(|(d, r)| (d[to] - u[to], r));
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut s = guess.clamp(0.0, 1.0);
    for _ in 0..PREIMAGE_ITERS {
        let (gs, r) = g(s)?;
        if gs.abs() < PREIMAGE_TOL {
            return Some((s, r));
        }
        if gs > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let h = 1e-7 * if s + 1e-7 <= 1.0 { 1.0 } else { -1.0 };
        let (gh, _) = g(s + h)?;
        let slope = (gh - gs) / h;
        let mut next = if slope > 0.0 {
            s - gs / slope
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (hi - lo) < 1e-16 {
            return Some((next, g(next)?.1));
        }
        s = next;
    }
    let (gs, r) = g(s)?;
    (gs.abs() < 1e-10).then_some((s, r))
}

/// Preimage in the open simplex by damped Newton steps in the `(u2, u3)` chart.
fn interior_preimage(
    map: &CompetitiveMap,
    mesh: &SimplexMesh,
    u: &[f64; 3],
    guess: [f64; 2],
) -> Option<([f64; 2], f64)> {
    let resid = |c: [f64; 2]| {
        image_direction(map, mesh, &chart_point(c[0], c[1]))
            .map(|(d, r)| ([d[1] - u[1], d[2] - u[2]], r))
    };
    let inside = |c: [f64; 2]| c[0] > 0.0 && c[1] > 0.0 && c[0] + c[1] < 1.0;
    let mut c = if inside(guess) { guess } else { [u[1], u[2]] };
    let (mut f, mut r) = resid(c)?;
    for _ in 0..PREIMAGE_ITERS {
        let norm = f[0].abs().max(f[1].abs());
        if norm < PREIMAGE_TOL {
            return Some((c, r));
        }
        let h = 1e-7;
        let mut jac = [[0.0; 2]; 2];
        for k in 0..2 {
            let mut cp = c;
            let step = if inside({
                let mut t = c;
                t[k] += h;
                t
            }) {
                h
            } else {
                -h
            };
            cp[k] += step;
            let (fp, _) = resid(cp)?;
            jac[0][k] = (fp[0] - f[0]) / step;
            jac[1][k] = (fp[1] - f[1]) / step;
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det.abs() < 1e-300 {
            return None;
        }
        let d = [
            -(jac[1][1] * f[0] - jac[0][1] * f[1]) / det,
            -(-jac[1][0] * f[0] + jac[0][0] * f[1]) / det,
        ];
        let mut t = 1.0;
        loop {
            let trial = [c[0] + t * d[0], c[1] + t * d[1]];
            if inside(trial) {
                if let Some((ft, rt)) = resid(trial) {
                    if ft[0].abs().max(ft[1].abs()) < norm || t < 1e-6 {
                        c = trial;
                        f = ft;
                        r = rt;
                        break;
                    }
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                return None;
            }
        }
    }
    (f[0].abs().max(f[1].abs()) < 1e-10).then_some((c, r))
}

/// Per-direction warm starts for the preimage solves.
#[derive(Clone, Copy)]
enum Seed {
    Corner,
    Edge { from: usize, to: usize, s: f64 },
    Interior([f64; 2]),
}

fn initial_seeds(dirs: &[[f64; 3]]) -> Vec<Seed> {
    dirs.iter()
        .map(|u| {
            let zeros: Vec<usize> = (0..3).filter(|&k| u[k] == 0.0).collect();
            match zeros.len() {
                2 => Seed::Corner,
                1 => {
                    let (from, to) = match zeros[0] {
                        0 => (1, 2),
                        1 => (0, 2),
                        _ => (0, 1),
                    };
                    Seed::Edge { from, to, s: u[to] }
                }
                _ => Seed::Interior([u[1], u[2]]),
            }
        })
        .collect()
}

/// One graph-transform sweep: each lattice ray receives the radius of the
/// image of its preimage on the current surface. Returns the new radii,
/// updated seeds and the directions whose preimage solve failed.
fn sweep(
    map: &CompetitiveMap,
    mesh: &SimplexMesh,
    seeds: &[Seed],
) -> (Vec<f64>, Vec<Seed>, Vec<usize>) {
    let out: Vec<(Option<f64>, Seed)> = mesh
        .directions
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(u, seed)| match *seed {
            Seed::Corner => {
                let image = map.eval3(&mesh.lift(u));
                (Some(image[0] + image[1] + image[2]), *seed)
            }
            Seed::Edge { from, to, s } => match edge_preimage(map, mesh, from, to, u, s) {
                Some((s, r)) => (Some(r), Seed::Edge { from, to, s }),
                None => (None, *seed),
            },
            Seed::Interior(c) => match interior_preimage(map, mesh, u, c) {
                Some((c, r)) => (Some(r), Seed::Interior(c)),
                None => (None, *seed),
            },
        })
        .collect();
    let missed: Vec<usize> = out
        .iter()
        .enumerate()
        .filter(|(_, o)| o.0.is_none())
        .map(|(i, _)| i)
        .collect();
    let mut radii: Vec<f64> = out
        .iter()
        .zip(&mesh.radii)
        .map(|(o, old)| o.0.unwrap_or(*old))
        .collect();
    for &i in &missed {
        // Extrapolate from resolved lattice neighbours.
        let neigh: Vec<f64> = mesh
            .triangles
            .iter()
            .filter(|t| t.contains(&i))
            .flat_map(|t| t.iter().copied())
            .filter(|&j| j != i && out[j].0.is_some())
            .map(|j| radii[j])
            .collect();
        if !neigh.is_empty() {
            radii[i] = neigh.iter().sum::<f64>() / neigh.len() as f64;
        }
    }
    (radii, out.into_iter().map(|o| o.1).collect(), missed)
}

/// Runs the graph transform without failing on non-convergence.
pub fn graph_transform(map: &CompetitiveMap, opts: &SimplexOptions) -> Result<SimplexMesh> {
    map.require_three()?;
    if opts.resolution < 2 || opts.resolution % 2 != 0 {
        return Err(Error::Config(format!(
            "mesh resolution must be even and >= 2, got {}",
            opts.resolution
        )));
    }
    let w = [
        axial_coordinate(map, 0)?,
        axial_coordinate(map, 1)?,
        axial_coordinate(map, 2)?,
    ];
    let (dirs, _) = lattice(opts.resolution, opts.grading.max(1.0));
    let radii = initial_radii(&dirs, &w, opts.initial);
    let mut mesh = SimplexMesh::from_graded_radii(opts.resolution, opts.grading, radii)?;
    let mut seeds = initial_seeds(&mesh.directions);
    for it in 1..=opts.max_iters {
        let (radii, next_seeds, missed) = sweep(map, &mesh, &seeds);
        seeds = next_seeds;
        let residual = mesh
            .directions
            .iter()
            .zip(radii.iter().zip(&mesh.radii))
            .map(|(u, (new, old))| {
                (new - old).abs() * (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
            })
            .fold(0.0, f64::max);
        mesh.radii = radii;
        mesh.flagged = missed;
        mesh.residual = residual;
        mesh.iterations = it;
        mesh.history.push(residual);
        if residual < opts.tol {
            mesh.converged = true;
            break;
        }
    }
    Ok(mesh)
}

/// Graph transform that fails with [`Error::NonConvergence`] when the
/// residual is still above `tol` after `max_iters` sweeps.
pub fn compute_carrying_simplex(
    map: &CompetitiveMap,
    opts: &SimplexOptions,
) -> Result<SimplexMesh> {
    let mesh = graph_transform(map, opts)?;
    if !mesh.converged {
        return Err(Error::NonConvergence {
            residual: mesh.residual,
            iterations: mesh.iterations,
        });
    }
    Ok(mesh)
}

/// Vertex pairs `(x, y)` with `x ≤ y + tol` componentwise and `x_j < y_j − tol`
/// for some `j`.
pub fn unordered_check(mesh: &SimplexMesh, tol: f64) -> Vec<(usize, usize)> {
    let verts = mesh.vertices();
    let mut pairs: Vec<(usize, usize)> = (0..verts.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let x = verts[i];
            let verts = &verts;
            (0..verts.len()).filter_map(move |j| {
                if i == j {
                    return None;
                }
                let y = verts[j];
                let le = (0..3).all(|k| x[k] <= y[k] + tol);
                let lt = (0..3).any(|k| x[k] < y[k] - tol);
                (le && lt).then_some((i, j))
            })
        })
        .collect();
    pairs.sort_unstable();
    pairs
}

/// `max_v dist(T(v), surface)`.
pub fn invariance_residual(map: &CompetitiveMap, mesh: &SimplexMesh) -> f64 {
    (0..mesh.vertex_count())
        .into_par_iter()
        .map(|i| {
            let image = map.eval3(&mesh.vertex(i));
            mesh.distance(&image).unwrap_or(0.0)
        })
        .reduce(|| 0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentConeEstimate {
    pub base: [f64; 3],
    pub radius: f64,
    pub directions: Vec<[f64; 3]>,
    /// Largest angle (radians) between a secant direction and the plane W.
    pub angle_to_w: f64,
}

fn unit_normal(w_basis: &[Vector3<f64>; 2]) -> Vector3<f64> {
    w_basis[0].cross(&w_basis[1]).normalize()
}

/// Secant directions from `xi` to mesh vertices within `radius`.
pub fn estimate_tangent_cone(
    mesh: &SimplexMesh,
    xi: &Vector3<f64>,
    radius: f64,
    w_basis: &[Vector3<f64>; 2],
) -> Result<TangentConeEstimate> {
    let normal = unit_normal(w_basis);
    let dirs: Vec<Vector3<f64>> = mesh
        .vertices()
        .into_iter()
        .map(|p| p - xi)
        .filter(|d| {
            let r = d.norm();
            r > 1e-12 * (1.0 + xi.norm()) && r <= radius
        })
        .map(|d| d.normalize())
        .collect();
    if dirs.len() < 3 {
        return Err(Error::TooFewNeighbors {
            found: dirs.len(),
            radius,
        });
    }
    let angle = dirs
        .iter()
        .map(|z| z.dot(&normal).abs().min(1.0).asin())
        .fold(0.0, f64::max);
    Ok(TangentConeEstimate {
        base: [xi[0], xi[1], xi[2]],
        radius,
        directions: dirs.iter().map(|d| [d[0], d[1], d[2]]).collect(),
        angle_to_w: angle,
    })
}

/// Projection along `v` onto the plane `q + W`.
pub fn project_along(
    x: &Vector3<f64>,
    q: &Vector3<f64>,
    v: &Vector3<f64>,
    normal: &Vector3<f64>,
) -> Vector3<f64> {
    let t = normal.dot(&(x - q)) / normal.dot(v);
    x - v * t
}

/// Largest sampled `‖ξ − Π(ξ)‖ / ‖q − Π(ξ)‖` over mesh vertices near `q`.
pub fn estimate_theta(
    mesh: &SimplexMesh,
    q: &Vector3<f64>,
    v: &Vector3<f64>,
    w_basis: &[Vector3<f64>; 2],
    radius: f64,
) -> Result<f64> {
    let normal = unit_normal(w_basis);
    let ratios: Vec<f64> = mesh
        .vertices()
        .into_iter()
        .filter(|x| (x - q).norm() <= radius)
        .filter_map(|x| {
            let p = project_along(&x, q, v, &normal);
            let den = (q - p).norm();
            (den > 1e-14).then(|| (x - p).norm() / den)
        })
        .collect();
    if ratios.is_empty() {
        return Err(Error::EmptyNeighborhood { radius });
    }
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_indexing_is_dense() {
        for n in [2, 4, 8, 64] {
            let (dirs, tris) = lattice(n, 1.0);
            assert_eq!(dirs.len(), lattice_size(n));
            assert_eq!(tris.len(), n * n);
            let mut seen = vec![false; dirs.len()];
            for a in 0..=n {
                for b in 0..=(n - a) {
                    let i = lattice_index(n, a, b);
                    assert!(!seen[i]);
                    seen[i] = true;
                    let u = dirs[i];
                    assert!((u[1] - a as f64 / n as f64).abs() < 1e-15);
                    assert!((u[2] - b as f64 / n as f64).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn warp_round_trips() {
        for g in [1.0, 1.5, 2.0] {
            let (dirs, _) = lattice(8, g);
            for u in &dirs {
                let back = warp(&unwarp(u, g), g);
                assert!(u.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-14));
                assert!((u.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn flat_interpolation_is_exact_on_planes() {
        // Radii of the plane n·x = 1 restricted to the lattice.
        let normal = [0.7, 1.3, 2.0];
        let n = 6;
        let (dirs, _) = lattice(n, 1.0);
        let radii = dirs
            .iter()
            .map(|u| 1.0 / (normal[0] * u[0] + normal[1] * u[1] + normal[2] * u[2]))
            .collect();
        let mesh = SimplexMesh::from_radii(n, radii).unwrap();
        for x in [Vector3::new(0.3, 0.2, 0.9), Vector3::new(1.0, 1e-3, 2.0)] {
            let p = mesh.radial_project(&x).unwrap();
            assert!((normal[0] * p[0] + normal[1] * p[1] + normal[2] * p[2] - 1.0).abs() < 1e-14);
        }
        assert!(matches!(
            mesh.radial_project(&Vector3::zeros()),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn perturbed_vertex_breaks_unorderedness() {
        let n = 16;
        let (dirs, _) = lattice(n, 1.0);
        let radii: Vec<f64> = dirs.iter().map(|_| 1.0).collect();
        let mut mesh = SimplexMesh::from_radii(n, radii).unwrap();
        assert!(unordered_check(&mesh, 1e-9).is_empty());
        let i = mesh.index_of(5, 6);
        mesh.radii[i] *= 1.5;
        let bad = unordered_check(&mesh, 1e-9);
        assert!(!bad.is_empty());
        assert!(bad.iter().all(|&(a, b)| a != b));
        assert!(bad.iter().any(|&(_, b)| b == i));
    }
}
