mod common;

use carsim_core::analysis::find_all_fixed_points;
use carsim_core::manifolds::{
    boundary_roles, hausdorff, leaf_contraction_report, m2_expansion_search, saddle_data,
    splitting_from_jacobian, trace_stable_on_s, trace_unstable, StableOptions, UnstableOptions,
};
use carsim_core::pipeline::axial_corner;
use carsim_core::simplex::{compute_carrying_simplex, estimate_theta, SimplexMesh, SimplexOptions};
use carsim_core::{CompetitiveMap, ModelKind};
use common::{build, class19_models, model, vec3};
use nalgebra::{Matrix2, Matrix3, Vector3};

fn mesh_at(map: &CompetitiveMap, resolution: usize) -> SimplexMesh {
    compute_carrying_simplex(
        map,
        &SimplexOptions {
            resolution,
            ..SimplexOptions::default()
        },
    )
    .unwrap()
}

fn segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Distance to a flat triangle: plane projection when it falls inside,
/// otherwise the nearest edge.
fn triangle_distance(p: &Vector3<f64>, t: [Vector3<f64>; 3]) -> f64 {
    let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
    if n.norm() > 0.0 {
        let n = n.normalize();
        let proj = p - n * n.dot(&(p - t[0]));
        let inside = (0..3).all(|k| {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            (b - a).cross(&(proj - a)).dot(&n) >= 0.0
        });
        if inside {
            return n.dot(&(p - t[0])).abs();
        }
    }
    (0..3)
        .map(|k| segment_distance(p, &t[k], &t[(k + 1) % 3]))
        .fold(f64::INFINITY, f64::min)
}

fn flat_distance(mesh: &SimplexMesh, p: &Vector3<f64>) -> f64 {
    mesh.triangles()
        .iter()
        .map(|tri| triangle_distance(p, tri.map(|i| mesh.vertex(i))))
        .fold(f64::INFINITY, f64::min)
}

fn class19_lg() -> CompetitiveMap {
    build(&class19_models()[0])
}

#[test]
fn refinement_changes_radii_by_order_h() {
    let map = class19_lg();
    let coarse = mesh_at(&map, 32);
    let fine = mesh_at(&map, 64);
    let h = coarse.edge_length();
    let change = coarse
        .vertices()
        .iter()
        .map(|x| {
            let u = [x[0], x[1], x[2]].map(|c| c / x.sum());
            (coarse.radius_at(&u) - fine.radius_at(&u)).abs()
        })
        .fold(0.0, f64::max);
    println!("max radius change {change:.3e}, coarse edge {h:.3e}");
    assert!(change <= h, "radius change {change:e} exceeds h = {h:e}");
}

#[test]
fn surface_distance_agrees_with_flat_triangle_oracle() {
    let map = class19_lg();
    let mesh = mesh_at(&map, 32);
    let h = mesh.edge_length();
    let dirs = [
        [0.2, 0.3, 0.5],
        [0.6, 0.2, 0.2],
        [0.33, 0.33, 0.34],
        [0.1, 0.8, 0.1],
        [0.45, 0.05, 0.5],
    ];
    for u in dirs {
        let on = mesh.lift(&u);
        assert!(mesh.distance(&on).unwrap() < 1e-10 * on.norm());
        for scale in [0.9, 0.97, 1.03, 1.1] {
            let x = on * scale;
            let d = mesh.distance(&x).unwrap();
            let flat = flat_distance(&mesh, &x);
            assert!(d <= mesh.radial_distance(&x).unwrap() + 1e-15);
            assert!(
                (d - flat).abs() <= 5.0 * h * h,
                "{u:?} x{scale}: {d:e} vs flat {flat:e}"
            );
        }
    }
}

#[test]
fn plane_case_reproduces_the_plane() {
    let map = build(&model(
        ModelKind::LeslieGower,
        [1.0; 3],
        None,
        &[[1.0; 3]; 3],
    ));
    let mesh = mesh_at(&map, 32);
    for x in mesh.vertices() {
        assert!((x.sum() - 1.0).abs() < 1e-9, "{x:?}");
    }
    let q = Vector3::repeat(1.0 / 3.0);
    let v = Vector3::repeat(1.0);
    let b1 = Vector3::new(1.0, -1.0, 0.0).normalize();
    let b2 = Vector3::new(1.0, 1.0, -2.0).normalize();
    let theta = estimate_theta(&mesh, &q, &v, &[b1, b2], 0.2).unwrap();
    assert!(theta < 1e-9, "theta {theta:e}");
}

#[test]
fn m2_search_against_direct_singular_values() {
    let diag = Matrix2::new(0.7, 0.0, 0.0, 1.4);
    assert_eq!(m2_expansion_search(&diag, 0.5, 50).unwrap().l, Some(1));
    assert_eq!(m2_expansion_search(&diag, 0.8, 50).unwrap().l, None);

    let jordan = Matrix2::new(2.0, 10.0, 0.0, 2.0);
    let sigma: f64 = 0.9;
    let inv = jordan.try_inverse().unwrap();
    let expected = (1..=50)
        .find(|&l| inv.pow(l as u32).singular_values().max() < sigma.powi(-(l as i32)))
        .unwrap();
    assert_eq!(expected, 4);
    assert_eq!(
        m2_expansion_search(&jordan, sigma, 50).unwrap().l,
        Some(expected)
    );
}

#[test]
fn splitting_of_a_symmetric_jacobian() {
    let jac = Matrix3::from_fn(|i, j| if i == j { 0.5 } else { -0.1 });
    let s = splitting_from_jacobian(&jac).unwrap();
    assert!((s.mu - 0.3).abs() < 1e-12);
    let v = s.v.normalize();
    assert!((v - Vector3::repeat(1.0 / 3f64.sqrt())).norm() < 1e-10);
    for b in &s.w_basis {
        assert!(b.dot(&s.left).abs() < 1e-12);
    }
    assert!(s.w_moduli.iter().all(|m| (m - 0.6).abs() < 1e-10));
}

#[test]
fn leaf_contraction_at_q_tends_to_mu() {
    for m in class19_models() {
        let map = build(&m);
        let (records, _) = find_all_fixed_points(&map).unwrap();
        let q = vec3(&records.iter().find(|p| p.id == "q").unwrap().location);
        let saddle = saddle_data(&map, &q).unwrap();
        let mu = saddle.splitting.mu;
        let mut last = f64::INFINITY;
        for r in [1e-2, 1e-3, 1e-4] {
            let rep =
                leaf_contraction_report(&map, &q, &saddle.splitting, 1.0, 10, r * q.norm(), 1);
            let at_q = rep.ratios_at_q.last().unwrap().1;
            assert!(
                (at_q - mu).abs() <= (last - mu).abs() + 1e-12,
                "{}: not converging",
                m.kind
            );
            last = at_q;
        }
        assert!(
            (last - mu).abs() <= 1e-3 * mu,
            "{}: ratio {last} vs mu {mu}",
            m.kind
        );
    }
}

#[test]
fn unstable_curve_converges_when_the_step_halves() {
    let map = class19_lg();
    let (records, _) = find_all_fixed_points(&map).unwrap();
    let q = vec3(&records.iter().find(|p| p.id == "q").unwrap().location);
    let roles = boundary_roles(&records).unwrap();
    let saddle = saddle_data(&map, &q).unwrap();
    let w_norm = axial_corner(&records).norm();
    let base = UnstableOptions::scaled(q.norm(), w_norm);
    let coarse = UnstableOptions {
        h_max: 4.0 * base.h_max,
        ..base
    };
    let fine = UnstableOptions {
        h_max: 2.0 * base.h_max,
        ..base
    };
    let a = trace_unstable(&map, &saddle, &roles.attractors, &coarse).unwrap();
    let b = trace_unstable(&map, &saddle, &roles.attractors, &fine).unwrap();
    let d = hausdorff(&a.vectors(), &b.vectors());
    println!("unstable Hausdorff {d:.3e} at step {:.3e}", coarse.h_max);
    assert!(d <= coarse.h_max, "{d:e} vs step {:e}", coarse.h_max);
    assert_eq!(a.endpoints, b.endpoints);
}

#[test]
fn stable_curve_converges_when_the_fan_doubles() {
    let map = class19_lg();
    let (records, _) = find_all_fixed_points(&map).unwrap();
    let q = vec3(&records.iter().find(|p| p.id == "q").unwrap().location);
    let roles = boundary_roles(&records).unwrap();
    let mesh = mesh_at(&map, 32);
    let base = StableOptions::scaled(axial_corner(&records).norm());
    let coarse = StableOptions {
        resolution: 16,
        max_gap: 8.0 * base.max_gap,
        ..base
    };
    let fine = StableOptions {
        resolution: 32,
        max_gap: 4.0 * base.max_gap,
        ..base
    };
    let a = trace_stable_on_s(&map, &mesh, &q, &roles, &coarse).unwrap();
    let b = trace_stable_on_s(&map, &mesh, &q, &roles, &fine).unwrap();
    let d = hausdorff(&a.curve.vectors(), &b.curve.vectors());
    println!("stable Hausdorff {d:.3e} at gap {:.3e}", coarse.max_gap);
    assert!(d <= coarse.max_gap, "{d:e} vs gap {:e}", coarse.max_gap);
}
