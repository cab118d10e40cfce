//! Phase portraits on the carrying simplex, drawn in direction space Δ² as
//! an equilateral triangle: `e1` bottom left, `e2` bottom right, `e3` top.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{FixedPointRecord, SType};
use crate::manifolds::{basin_of, BoundaryRoles, ManifoldCurve};
use crate::simplex::SimplexMesh;

pub const DEFAULT_RASTER: usize = 200;
const H: f64 = 0.866_025_403_784_438_6;

/// Display coordinates of a point (or direction) in the nonnegative orthant.
pub fn to_display(x: &[f64; 3]) -> [f64; 2] {
    let s = x[0] + x[1] + x[2];
    let (u2, u3) = (x[1] / s, x[2] / s);
    [u2 + 0.5 * u3, H * u3]
}

/// Direction for a display point; `None` outside the triangle.
pub fn from_display(p: [f64; 2]) -> Option<[f64; 3]> {
    let u3 = p[1] / H;
    let u2 = p[0] - 0.5 * u3;
    let u1 = 1.0 - u2 - u3;
    (u1 >= 0.0 && u2 >= 0.0 && u3 >= 0.0).then_some([u1, u2, u3])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinRaster {
    pub size: usize,
    /// Row-major (`y` rows from the bottom); attractor index, `None` outside
    /// the triangle or unresolved.
    pub labels: Vec<Option<u8>>,
    pub unresolved: usize,
}

impl BasinRaster {
    fn center(size: usize, i: usize, j: usize) -> [f64; 2] {
        [
            (i as f64 + 0.5) / size as f64,
            (j as f64 + 0.5) / size as f64 * H,
        ]
    }
}

/// Basin label of every pixel centre inside the triangle, lifted to the mesh.
pub fn basin_raster(
    map: &crate::models::CompetitiveMap,
    mesh: &SimplexMesh,
    attractors: &[Vector3<f64>],
    size: usize,
    max_iter: usize,
    tol: f64,
) -> BasinRaster {
    let labels: Vec<Option<u8>> = (0..size * size)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % size, k / size);
            let u = from_display(BasinRaster::center(size, i, j))?;
            basin_of(map, &mesh.lift(&u), attractors, max_iter, tol)
                .index()
                .map(|x| x as u8)
        })
        .collect();
    let inside = (0..size * size)
        .filter(|k| from_display(BasinRaster::center(size, k % size, k / size)).is_some())
        .count();
    let labelled = labels.iter().filter(|l| l.is_some()).count();
    BasinRaster {
        size,
        labels,
        unresolved: inside - labelled,
    }
}

/// Distance of a display point to the triangle boundary.
fn boundary_distance(p: [f64; 2]) -> f64 {
    match from_display(p) {
        Some(u) => u.iter().fold(f64::INFINITY, |m, &x| m.min(x)) * H,
        None => 0.0,
    }
}

/// Marks a four-connected chain of pixels along a display-space polyline. The curve is cut
/// at its first and last vertices closer than `band` pixels to the triangle
/// boundary and joined from there straight to `ends`.
pub fn rasterize_barrier(
    size: usize,
    curve: &[[f64; 2]],
    ends: [[f64; 2]; 2],
    band: f64,
) -> Vec<bool> {
    let mut wall = vec![false; size * size];
    if curve.is_empty() {
        return wall;
    }
    let limit = band / size as f64 * H;
    let mid = curve.len() / 2;
    let first = (0..=mid)
        .rev()
        .find(|&k| boundary_distance(curve[k]) < limit)
        .map_or(0, |k| k + 1);
    let last = (mid..curve.len())
        .find(|&k| boundary_distance(curve[k]) < limit)
        .map_or(curve.len() - 1, |k| k - 1);
    let beyond = |from: [f64; 2], to: [f64; 2]| {
        let d = [to[0] - from[0], to[1] - from[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt().max(1e-300);
        let ext = 2.0 / size as f64;
        [to[0] + d[0] / len * ext, to[1] + d[1] / len * ext]
    };
    let body = &curve[first.min(last)..=last.max(first)];
    let mut path = vec![beyond(body[0], ends[0]), ends[0]];
    path.extend_from_slice(body);
    path.push(ends[1]);
    path.push(beyond(body[body.len() - 1], ends[1]));
    let step = 0.2 / size as f64;
    let mut mark = |i: i64, j: i64| {
        if i >= 0 && j >= 0 && (i as usize) < size && (j as usize) < size {
            wall[j as usize * size + i as usize] = true;
        }
    };
    let cell = |p: [f64; 2]| {
        (
            (p[0] * size as f64).floor() as i64,
            (p[1] / H * size as f64).floor() as i64,
        )
    };
    let mut prev: Option<(i64, i64)> = None;
    for w in path.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let n = (len / step).ceil().max(1.0) as usize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let c = cell([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            mark(c.0, c.1);
            // Close diagonal steps so the wall is four-connected.
            if let Some(p) = prev {
                if p.0 != c.0 && p.1 != c.1 {
                    mark(p.0, c.1);
                    mark(c.0, p.1);
                }
            }
            prev = Some(c);
        }
    }
    wall
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    /// Components reaching farther than `band` pixels from the boundary.
    pub count: usize,
    /// `(basin label, pixel count)` per counted component.
    pub components: Vec<(u8, usize)>,
    /// Components lying entirely within `band` pixels of the boundary, where
    /// the wall meets an edge at an angle the raster cannot resolve.
    pub slivers: Vec<(u8, usize)>,
}

/// Eight-connected components of equally labelled pixels off the wall.
pub fn count_components(raster: &BasinRaster, wall: &[bool], band: f64) -> ComponentReport {
    let limit = band / raster.size as f64 * H;
    let n = raster.size;
    let mut seen = vec![false; n * n];
    let mut components = Vec::new();
    let mut slivers = Vec::new();
    for start in 0..n * n {
        let Some(label) = raster.labels[start] else {
            continue;
        };
        if seen[start] || wall[start] {
            continue;
        }
        seen[start] = true;
        let mut size = 0;
        let mut interior = false;
        let mut queue = VecDeque::from([start]);
        while let Some(k) = queue.pop_front() {
            size += 1;
            let (i, j) = (k % n, k / n);
            interior |= boundary_distance(BasinRaster::center(n, i, j)) >= limit;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if (di, dj) == (0, 0) || ii < 0 || jj < 0 || ii >= n as i64 || jj >= n as i64 {
                        continue;
                    }
                    let m = jj as usize * n + ii as usize;
                    if !seen[m] && !wall[m] && raster.labels[m] == Some(label) {
                        seen[m] = true;
                        queue.push_back(m);
                    }
                }
            }
        }
        if interior {
            components.push((label, size));
        } else {
            slivers.push((label, size));
        }
    }
    ComponentReport {
        count: components.len(),
        components,
        slivers,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// `a1` and `a2` lie on a common edge of the triangle.
    AttractorsShareEdge,
    /// `r1` and `r2` lie on a common edge of the triangle.
    RepellersShareEdge,
    Other,
}

fn shares_edge(a: &[f64; 3], b: &[f64; 3]) -> bool {
    (0..3).any(|k| a[k].abs() < 1e-12 && b[k].abs() < 1e-12)
}

pub fn topology(roles: &BoundaryRoles) -> Topology {
    let [a1, a2] = &roles.attractors;
    let [r1, r2] = &roles.repellers;
    if shares_edge(&a1.location, &a2.location) {
        Topology::AttractorsShareEdge
    } else if shares_edge(&r1.location, &r2.location) {
        Topology::RepellersShareEdge
    } else {
        Topology::Other
    }
}

/// Everything drawn in one portrait.
#[derive(Debug, Clone, Default)]
pub struct PortraitScene<'a> {
    pub title: String,
    pub fixed_points: &'a [FixedPointRecord],
    pub stable: Option<&'a ManifoldCurve>,
    pub unstable: Option<&'a ManifoldCurve>,
    pub raster: Option<&'a BasinRaster>,
    pub orbits: Vec<Vec<[f64; 3]>>,
    /// Free-form lines embedded as an XML comment (config hash, seed).
    pub metadata: Vec<String>,
    pub banner: String,
}

const BASIN_FILL: [&str; 2] = ["#cfe3f5", "#f7dcc6"];

fn sx(p: [f64; 2]) -> (f64, f64) {
    (p[0], H - p[1])
}

fn polyline(out: &mut String, pts: &[[f64; 3]], style: &str) {
    let mut d = String::new();
    for (k, p) in pts.iter().enumerate() {
        let (x, y) = sx(to_display(p));
        let _ = write!(d, "{}{:.5},{:.5}", if k == 0 { "M" } else { " L" }, x, y);
    }
    let _ = writeln!(out, r#"  <path d="{d}" {style}/>"#);
}

/// SVG 1.1 document; the view box is the unit triangle with a 5% margin.
pub fn render_svg(scene: &PortraitScene<'_>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(out, "<!-- {} -->", scene.banner);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" viewBox="-0.05 -0.05 1.1 {:.5}" width="660" height="{:.0}">"#,
        H + 0.1,
        660.0 * (H + 0.1) / 1.1
    );
    if !scene.metadata.is_empty() {
        let _ = writeln!(out, "  <metadata>{}</metadata>", scene.metadata.join("; "));
    }
    let _ = writeln!(out, "  <title>{}</title>", scene.title);
    if let Some(r) = scene.raster {
        let _ = writeln!(
            out,
            r#"  <g id="basins" stroke="none" shape-rendering="crispEdges">"#
        );
        let (w, h) = (1.0 / r.size as f64, H / r.size as f64);
        for j in 0..r.size {
            let mut i = 0;
            while i < r.size {
                let Some(label) = r.labels[j * r.size + i] else {
                    i += 1;
                    continue;
                };
                let start = i;
                while i < r.size && r.labels[j * r.size + i] == Some(label) {
                    i += 1;
                }
                let _ = writeln!(
                    out,
                    r#"    <rect x="{:.5}" y="{:.5}" width="{:.5}" height="{:.5}" fill="{}"/>"#,
                    start as f64 * w,
                    H - (j + 1) as f64 * h,
                    (i - start) as f64 * w,
                    h,
                    BASIN_FILL[label as usize % 2]
                );
            }
        }
        let _ = writeln!(out, "  </g>");
    }
    let _ = writeln!(
        out,
        r#"  <path id="boundary" d="M0,{H:.5} L1,{H:.5} L0.5,0 Z" fill="none" stroke="black" stroke-width="0.004"/>"#
    );
    for orbit in &scene.orbits {
        polyline(
            &mut out,
            orbit,
            r##"fill="none" stroke="#888888" stroke-width="0.002""##,
        );
    }
    if let Some(c) = scene.stable {
        polyline(
            &mut out,
            &c.points,
            r##"id="stable" fill="none" stroke="#1f4e9c" stroke-width="0.005" stroke-dasharray="0.015,0.008""##,
        );
    }
    if let Some(c) = scene.unstable {
        polyline(
            &mut out,
            &c.points,
            r##"id="unstable" fill="none" stroke="#b0301c" stroke-width="0.005""##,
        );
    }
    let _ = writeln!(
        out,
        r#"  <g id="fixed-points" stroke="black" stroke-width="0.004">"#
    );
    for p in scene
        .fixed_points
        .iter()
        .filter(|p| !p.support.is_empty() && p.location.len() == 3)
    {
        let (x, y) = sx(to_display(&[p.location[0], p.location[1], p.location[2]]));
        let r = 0.014;
        match p.s_type {
            Some(SType::Attractor) => {
                let _ = writeln!(
                    out,
                    r#"    <circle cx="{x:.5}" cy="{y:.5}" r="{r}" fill="black"/>"#
                );
            }
            Some(SType::Repeller) => {
                let _ = writeln!(
                    out,
                    r#"    <circle cx="{x:.5}" cy="{y:.5}" r="{r}" fill="white"/>"#
                );
            }
            Some(SType::Saddle) => {
                let _ = writeln!(
                    out,
                    r#"    <path d="M{:.5},{:.5} L{:.5},{:.5} M{:.5},{:.5} L{:.5},{:.5}" fill="none"/>"#,
                    x - r,
                    y - r,
                    x + r,
                    y + r,
                    x - r,
                    y + r,
                    x + r,
                    y - r
                );
            }
            _ => {
                let _ = writeln!(
                    out,
                    r#"    <rect x="{:.5}" y="{:.5}" width="{:.5}" height="{:.5}" fill="white"/>"#,
                    x - r,
                    y - r,
                    2.0 * r,
                    2.0 * r
                );
            }
        }
        let (dx, anchor) = if x > 0.85 {
            (-0.02, "end")
        } else {
            (0.02, "start")
        };
        let _ = writeln!(
            out,
            r#"    <text x="{:.5}" y="{:.5}" font-size="0.035" text-anchor="{anchor}" stroke="none" fill="black">{}</text>"#,
            x + dx,
            y - 0.02,
            p.id
        );
    }
    let _ = writeln!(out, "  </g>");
    let _ = writeln!(out, "</svg>");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_round_trip() {
        for u in [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.2, 0.3, 0.5],
        ] {
            let back = from_display(to_display(&u)).unwrap();
            assert!(u.iter().zip(back).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        assert!(from_display([0.9, 0.8]).is_none());
    }

    fn split_raster(size: usize) -> BasinRaster {
        // Left half label 0, right half label 1.
        let labels = (0..size * size)
            .map(|k| {
                let (i, j) = (k % size, k / size);
                from_display(BasinRaster::center(size, i, j)).map(|_| u8::from(i >= size / 2))
            })
            .collect();
        BasinRaster {
            size,
            labels,
            unresolved: 0,
        }
    }

    #[test]
    fn wall_splits_regions() {
        let size = 80;
        let raster = split_raster(size);
        let none = vec![false; size * size];
        assert_eq!(count_components(&raster, &none, 0.0).count, 2);
        // A horizontal wall across both halves, ending on the slanted edges.
        let y = 0.3;
        let curve: Vec<[f64; 2]> = (0..=50)
            .map(|k| {
                [
                    y / (2.0 * H) + 0.01 + k as f64 * (1.0 - y / H - 0.02) / 50.0,
                    y,
                ]
            })
            .collect();
        let ends = [[y / (2.0 * H), y], [1.0 - y / (2.0 * H), y]];
        let wall = rasterize_barrier(size, &curve, ends, 3.0);
        assert_eq!(count_components(&raster, &wall, 0.0).count, 4);
    }
}
