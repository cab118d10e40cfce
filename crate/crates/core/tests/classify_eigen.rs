use std::collections::HashSet;

use approx::assert_relative_eq;
use carsim_core::classify::{
    all_matches, classify_table1, compute_alpha_beta, relabel, ClassId, PERMUTATIONS,
    TABULATED_CLASSES,
};
use carsim_core::eigen::{
    cubic_roots, eigen3, left_eigenvector3, null_vector3, quadratic_roots, real_eigenvector3,
};
use carsim_core::portrait::{from_display, to_display};
use carsim_core::simplex::project_along;
use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn positive_matrix() -> impl Strategy<Value = [[f64; 3]; 3]> {
    prop::array::uniform3(prop::array::uniform3(0.05f64..3.0))
}

fn sorted_by_parts(mut z: Vec<Complex64>) -> Vec<Complex64> {
    z.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap()
            .then(a.im.partial_cmp(&b.im).unwrap())
    });
    z
}

/// Characteristic polynomial determinant at `λ`, evaluated directly.
fn det_shift(m: &Matrix3<f64>, z: Complex64) -> Complex64 {
    let c = m.map(|v| Complex64::new(v, 0.0)) - nalgebra::Matrix3::<Complex64>::identity() * z;
    c.determinant()
}

#[test]
fn class19_reference_matrix_is_identity_labelled() {
    let a = [[1.0, 1.2, 1.2], [0.5, 1.0, 2.0], [0.5, 2.0, 1.0]];
    let c = classify_table1(&a).unwrap();
    assert_eq!(c.class_id, ClassId::Class(19));
    assert_eq!(c.permutation, [0, 1, 2]);
    let ab = compute_alpha_beta(&a).unwrap();
    assert_relative_eq!(ab.alpha[0][1], 0.5, max_relative = 1e-15);
    assert_relative_eq!(ab.alpha[1][0], -0.2, max_relative = 1e-14);
    assert_relative_eq!(ab.beta[1][2], 1.0 / 3.0, max_relative = 1e-14);
}

#[test]
fn exclusive_classes_over_ten_thousand_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut seen = HashSet::new();
    for _ in 0..10_000 {
        let a = [0; 3].map(|_| [0; 3].map(|_| rng.random_range(0.05..3.0)));
        let Ok(matches) = all_matches(&a) else {
            continue;
        };
        let mut perms = HashSet::new();
        for (sigma, class) in &matches {
            assert!(
                perms.insert(*sigma),
                "{a:?} matches two classes under {sigma:?}: {matches:?}"
            );
            assert!(TABULATED_CLASSES.contains(class));
            seen.insert(*class);
        }
    }
    assert_eq!(
        seen.len(),
        TABULATED_CLASSES.len(),
        "classes reached: {seen:?}"
    );
}

#[test]
fn quadratic_and_cubic_roots_by_hand() {
    let q = quadratic_roots(5.0, 6.0);
    let mut re: Vec<f64> = q.iter().map(|z| z.re).collect();
    re.sort_by(f64::total_cmp);
    assert_relative_eq!(re[0], 2.0, max_relative = 1e-14);
    assert_relative_eq!(re[1], 3.0, max_relative = 1e-14);
    let q = quadratic_roots(0.0, 1.0);
    assert!(q
        .iter()
        .all(|z| z.re.abs() < 1e-15 && (z.im.abs() - 1.0).abs() < 1e-15));

    // (λ − 1)(λ − 2)(λ − 3) = λ³ − 6λ² + 11λ − 6
    let c = cubic_roots([-6.0, 11.0, -6.0]);
    let mut re: Vec<f64> = c.iter().map(|z| z.re).collect();
    re.sort_by(f64::total_cmp);
    for (got, want) in re.iter().zip([1.0, 2.0, 3.0]) {
        assert_relative_eq!(*got, want, max_relative = 1e-12);
    }
}

#[test]
fn eigenvectors_of_a_known_matrix() {
    let m = Matrix3::new(2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0);
    let v = real_eigenvector3(&m, 3.0);
    assert!((m * v - v * 3.0).norm() < 1e-12 * v.norm());
    assert_relative_eq!(v[0].abs(), v[1].abs(), max_relative = 1e-12);
    let l = left_eigenvector3(&m.transpose(), 1.0);
    assert!((m * l - l).norm() < 1e-12 * l.norm());
    let n = null_vector3(&Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 1.0, 0.0, 1.0));
    assert!(n.norm() > 0.0);
    assert!(
        (Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 1.0, 0.0, 1.0) * n).norm() < 1e-12 * n.norm()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn class_is_invariant_under_relabelling(a in positive_matrix(), k in 0usize..6) {
        let Ok(base) = classify_table1(&a) else { return Ok(()) };
        let sigma = PERMUTATIONS[k];
        let moved = classify_table1(&relabel(&a, &sigma)).unwrap();
        prop_assert_eq!(base.class_id, moved.class_id);
        if base.class_id.tabulated().is_some() {
            let back = relabel(&relabel(&a, &sigma), &moved.permutation);
            prop_assert_eq!(classify_table1(&back).unwrap().permutation, [0, 1, 2]);
        }
    }

    #[test]
    fn class_is_invariant_under_scaling(a in positive_matrix(), c in 0.01f64..100.0) {
        let Ok(base) = classify_table1(&a) else { return Ok(()) };
        let scaled = a.map(|row| row.map(|v| v * c));
        let other = classify_table1(&scaled).unwrap();
        prop_assert_eq!(base.class_id, other.class_id);
        prop_assert_eq!(base.alpha_signs, other.alpha_signs);
        let (x, y) = (compute_alpha_beta(&a).unwrap(), compute_alpha_beta(&scaled).unwrap());
        for i in 0..3 {
            for j in (0..3).filter(|&j| j != i) {
                prop_assert!((y.beta[i][j] * c - x.beta[i][j]).abs() <= 1e-10 * (1.0 + x.beta[i][j].abs()));
            }
        }
    }

    #[test]
    fn eigen3_agrees_with_schur_eigenvalues(m in prop::array::uniform9(-3.0f64..3.0)) {
        let m = Matrix3::from_row_slice(&m);
        let ours = sorted_by_parts(eigen3(&m).to_vec());
        let reference = sorted_by_parts(m.complex_eigenvalues().iter().copied().collect());
        let scale = 1.0 + m.abs().max();
        for z in &ours {
            prop_assert!(det_shift(&m, *z).norm() <= 1e-8 * scale.powi(3), "{z} residual");
            let nearest = reference.iter().map(|r| (r - z).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(nearest <= 1e-5 * scale, "{z} vs {reference:?}");
        }
    }

    #[test]
    fn display_coordinates_round_trip(x in prop::array::uniform3(0.0f64..5.0)) {
        prop_assume!(x.iter().sum::<f64>() > 1e-6);
        let s: f64 = x.iter().sum();
        let u = from_display(to_display(&x)).unwrap_or([f64::NAN; 3]);
        for i in 0..3 {
            prop_assert!((u[i] - x[i] / s).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_lands_on_the_plane_along_v(
        x in prop::array::uniform3(-2.0f64..2.0),
        q in prop::array::uniform3(0.1f64..2.0),
        v in prop::array::uniform3(0.1f64..1.0),
        n in prop::array::uniform3(0.1f64..1.0),
    ) {
        let (x, q, v, n) = (Vector3::from(x), Vector3::from(q), Vector3::from(v), Vector3::from(n).normalize());
        let p = project_along(&x, &q, &v, &n);
        prop_assert!(n.dot(&(p - q)).abs() < 1e-10 * (1.0 + x.norm() + q.norm()));
        prop_assert!((x - p).cross(&v).norm() < 1e-10 * (1.0 + (x - p).norm()) * v.norm());
    }
}
