//! Classification of 3×3 interaction matrices into the tabulated regimes
//! 19–25 (two boundary attractors, two boundary repellers, interior saddle).

use serde::{Deserialize, Serialize};

use crate::analysis::{find_interior_fixed_point, FixedPointRecord, HYPERBOLIC_TOL};
use crate::error::{Error, Result};
use crate::existence::ricker_condition;
use crate::models::{CompetitiveMap, ModelKind};

pub type Matrix3x3 = [[f64; 3]; 3];

/// Relative band inside which a margin counts as sitting on its boundary.
pub const TIE_BAND: f64 = 1e-10;
const DEGENERATE_REL: f64 = 1e-12;

/// All permutations of `{0, 1, 2}` in lexicographic order.
pub const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// `alpha[i][j] = a_ii − a_ji` and
/// `beta[i][j] = (a_jj − a_ij) / (a_ii a_jj − a_ij a_ji)`; diagonals are unused
/// and stored as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaBeta {
    pub alpha: Matrix3x3,
    pub beta: Matrix3x3,
}

pub fn compute_alpha_beta(a: &Matrix3x3) -> Result<AlphaBeta> {
    for (i, row) in a.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    field: format!("A[{i}][{j}]"),
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
    }
    let scale = a.iter().flatten().fold(0.0f64, |m, &v| m.max(v.abs()));
    let mut alpha = [[0.0; 3]; 3];
    let mut beta = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in (0..3).filter(|&j| j != i) {
            alpha[i][j] = a[i][i] - a[j][i];
            let den = a[i][i] * a[j][j] - a[i][j] * a[j][i];
            if den.abs() < DEGENERATE_REL * scale * scale {
                return Err(Error::DegenerateDenominator { pair: (i, j) });
            }
            beta[i][j] = (a[j][j] - a[i][j]) / den;
        }
    }
    Ok(AlphaBeta { alpha, beta })
}

/// Relabels species: `A'_ij = A_{σ(i) σ(j)}`.
pub fn relabel(a: &Matrix3x3, sigma: &[usize; 3]) -> Matrix3x3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[sigma[i]][sigma[j]];
        }
    }
    out
}

/// Order in which the six α signs are listed: 12, 13, 21, 23, 31, 32.
pub const ALPHA_ORDER: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cmp {
    Below,
    Above,
}

/// `a_kj β_jl + a_kl β_lj` with `{j, l}` the other two indices, `j < l`.
fn beta_term(a: &Matrix3x3, ab: &AlphaBeta, k: usize) -> f64 {
    let (j, l) = match k {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    a[k][j] * ab.beta[j][l] + a[k][l] * ab.beta[l][j]
}

fn beta_label(k: usize) -> &'static str {
    match k {
        0 => "a12*b23+a13*b32",
        1 => "a21*b13+a23*b31",
        _ => "a31*b12+a32*b21",
    }
}

struct ClassRule {
    id: u8,
    alpha_signs: [i8; 6],
    beta: &'static [(usize, Cmp)],
}

const CLASSES: [ClassRule; 7] = [
    ClassRule {
        id: 19,
        alpha_signs: [1, 1, -1, -1, -1, -1],
        beta: &[(0, Cmp::Below)],
    },
    ClassRule {
        id: 20,
        alpha_signs: [-1, -1, -1, -1, 1, -1],
        beta: &[(0, Cmp::Below), (2, Cmp::Below)],
    },
    ClassRule {
        id: 21,
        alpha_signs: [-1, -1, -1, 1, -1, 1],
        beta: &[(0, Cmp::Above), (1, Cmp::Below), (2, Cmp::Below)],
    },
    ClassRule {
        id: 22,
        alpha_signs: [1, 1, -1, -1, 1, -1],
        beta: &[(0, Cmp::Below), (1, Cmp::Above)],
    },
    ClassRule {
        id: 23,
        alpha_signs: [1, 1, 1, 1, -1, -1],
        beta: &[(2, Cmp::Above)],
    },
    ClassRule {
        id: 24,
        alpha_signs: [1, 1, 1, 1, -1, 1],
        beta: &[(0, Cmp::Above), (2, Cmp::Above)],
    },
    ClassRule {
        id: 25,
        alpha_signs: [1, 1, 1, -1, 1, -1],
        beta: &[(0, Cmp::Below), (1, Cmp::Above), (2, Cmp::Above)],
    },
];

pub const TABULATED_CLASSES: [u8; 7] = [19, 20, 21, 22, 23, 24, 25];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassId {
    Class(u8),
    OutOfTabulatedRange,
}

impl ClassId {
    pub fn tabulated(&self) -> Option<u8> {
        match self {
            ClassId::Class(c) => Some(*c),
            ClassId::OutOfTabulatedRange => None,
        }
    }
}

/// Signed slack of one inequality; positive means satisfied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub label: String,
    pub value: f64,
    /// Left-hand side of the inequality (the α entry or the β combination).
    pub lhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub class_id: ClassId,
    /// Zero-based `σ` such that the relabeled matrix satisfies the class.
    pub permutation: [usize; 3],
    pub alpha_beta: AlphaBeta,
    pub margins: Vec<Margin>,
    /// α signs of the unpermuted matrix in [`ALPHA_ORDER`].
    pub alpha_signs: [i8; 6],
}

/// `identity`, or one-line notation with one-based labels (e.g. `213`).
pub fn permutation_label(sigma: &[usize; 3]) -> String {
    if *sigma == [0, 1, 2] {
        "identity".to_string()
    } else {
        sigma.iter().map(|i| (i + 1).to_string()).collect()
    }
}

fn class_margins(a: &Matrix3x3, ab: &AlphaBeta, rule: &ClassRule, scale: f64) -> Vec<Margin> {
    let mut out = Vec::with_capacity(6 + rule.beta.len());
    for (&(i, j), &sign) in ALPHA_ORDER.iter().zip(&rule.alpha_signs) {
        let lhs = ab.alpha[i][j];
        let rel = if sign > 0 { "> 0" } else { "< 0" };
        out.push(Margin {
            label: format!("alpha{}{} {rel}", i + 1, j + 1),
            value: sign as f64 * lhs / scale,
            lhs,
        });
    }
    for &(k, cmp) in rule.beta {
        let lhs = beta_term(a, ab, k);
        let (value, rel) = match cmp {
            Cmp::Below => (1.0 - lhs, "< 1"),
            Cmp::Above => (lhs - 1.0, "> 1"),
        };
        out.push(Margin {
            label: format!("{} {rel}", beta_label(k)),
            value,
            lhs,
        });
    }
    out
}

fn sign_of(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Searches all six relabelings for a tabulated class.
///
/// Any (permutation, class) pair whose margins are all nonnegative up to the
/// tie band but touch it is refused with [`Error::TieOnBoundary`].
pub fn classify_table1(a: &Matrix3x3) -> Result<ClassificationResult> {
    let base = compute_alpha_beta(a)?;
    let alpha_signs = ALPHA_ORDER.map(|(i, j)| sign_of(base.alpha[i][j]));
    let scale = a.iter().flatten().fold(0.0f64, |m, &v| m.max(v.abs()));

    let mut first_match: Option<ClassificationResult> = None;
    for sigma in PERMUTATIONS {
        let pa = relabel(a, &sigma);
        let ab = compute_alpha_beta(&pa)?;
        for rule in &CLASSES {
            let margins = class_margins(&pa, &ab, rule, scale);
            let min = margins
                .iter()
                .map(|m| m.value)
                .fold(f64::INFINITY, f64::min);
            if min > TIE_BAND {
                if first_match.is_none() {
                    first_match = Some(ClassificationResult {
                        class_id: ClassId::Class(rule.id),
                        permutation: sigma,
                        alpha_beta: ab.clone(),
                        margins,
                        alpha_signs,
                    });
                }
            } else if min > -TIE_BAND {
                let tight = margins
                    .iter()
                    .min_by(|x, y| x.value.abs().total_cmp(&y.value.abs()))
                    .expect("nonempty margins");
                return Err(Error::TieOnBoundary {
                    label: format!(
                        "class {} under {}: {}",
                        rule.id,
                        permutation_label(&sigma),
                        tight.label
                    ),
                    margin: tight.value,
                    band: TIE_BAND,
                });
            }
        }
    }
    Ok(first_match.unwrap_or(ClassificationResult {
        class_id: ClassId::OutOfTabulatedRange,
        permutation: [0, 1, 2],
        alpha_beta: base,
        margins: Vec::new(),
        alpha_signs,
    }))
}

/// Every (permutation, class) pair whose inequalities hold strictly.
pub fn all_matches(a: &Matrix3x3) -> Result<Vec<([usize; 3], u8)>> {
    let scale = a.iter().flatten().fold(0.0f64, |m, &v| m.max(v.abs()));
    let mut out = Vec::new();
    for sigma in PERMUTATIONS {
        let pa = relabel(a, &sigma);
        let ab = compute_alpha_beta(&pa)?;
        for rule in &CLASSES {
            if class_margins(&pa, &ab, rule, scale)
                .iter()
                .all(|m| m.value > 0.0)
            {
                out.push((sigma, rule.id));
            }
        }
    }
    Ok(out)
}

/// `0 < μ < λ₁ < 1 < λ₂` with all three eigenvalues real, refusing any
/// modulus within `tol` of 1.
pub fn saddle_pattern(eigenvalues: &[num_complex::Complex64], tol: f64) -> bool {
    if eigenvalues.len() != 3
        || eigenvalues
            .iter()
            .any(|z| z.im.abs() > 1e-12 * (1.0 + z.norm()))
    {
        return false;
    }
    let mut re: Vec<f64> = eigenvalues.iter().map(|z| z.re).collect();
    re.sort_by(f64::total_cmp);
    let (mu, l1, l2) = (re[0], re[1], re[2]);
    0.0 < mu && mu < l1 && l1 < 1.0 - tol && l2 > 1.0 + tol
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyAnalyzeReport {
    pub classification: ClassificationResult,
    pub interior: Option<FixedPointRecord>,
    pub saddle_pattern: bool,
    pub warnings: Vec<String>,
}

pub fn matrix_of(map: &CompetitiveMap) -> Result<Matrix3x3> {
    map.require_three()?;
    let p = map
        .params()
        .ok_or_else(|| Error::Config("classification needs a builtin model".into()))?;
    let mut a = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            a[i][j] = p.a[i][j];
        }
    }
    Ok(a)
}

/// Classification joined with the interior fixed point analysis.
///
/// Mismatches with the expected regime structure become warnings.
pub fn classify_and_analyze(map: &CompetitiveMap) -> Result<ClassifyAnalyzeReport> {
    let a = matrix_of(map)?;
    let classification = classify_table1(&a)?;
    let mut warnings = Vec::new();
    let interior = match find_interior_fixed_point(map, None) {
        Ok(q) => Some(q),
        Err(e) => {
            warnings.push(format!("interior fixed point: {e}"));
            None
        }
    };
    let saddle = interior
        .as_ref()
        .map(|q| saddle_pattern(&q.eigenvalues, HYPERBOLIC_TOL))
        .unwrap_or(false);
    if classification.class_id.tabulated().is_some() {
        match &interior {
            Some(q) => {
                if q.index != Some(-1) {
                    warnings.push(format!("expected index -1 at q, found {:?}", q.index));
                }
                if !saddle {
                    warnings.push(
                        "eigenvalues at q do not follow 0 < mu < lambda1 < 1 < lambda2".into(),
                    );
                }
            }
            None => warnings.push("tabulated class without an interior fixed point".into()),
        }
    }
    if map.kind() == ModelKind::Ricker {
        if let Some(p) = map.params() {
            if !ricker_condition(p).passes {
                warnings.push(
                    "Ricker rates violate the closed-form carrying-simplex condition; carrying simplex unverified"
                        .into(),
                );
            }
        }
    }
    Ok(ClassifyAnalyzeReport {
        classification,
        interior,
        saddle_pattern: saddle,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_leslie_gower, make_ricker, ParameterSet};

    const CLASS19: Matrix3x3 = [[1.0, 1.2, 1.2], [0.5, 1.0, 2.0], [0.5, 2.0, 1.0]];

    #[test]
    fn alpha_beta_values() {
        let ab = compute_alpha_beta(&CLASS19).unwrap();
        let want_alpha = [
            ((0, 1), 0.5),
            ((0, 2), 0.5),
            ((1, 0), -0.2),
            ((1, 2), -1.0),
            ((2, 0), -0.2),
            ((2, 1), -1.0),
        ];
        for ((i, j), v) in want_alpha {
            assert!(
                (ab.alpha[i][j] - v).abs() < 1e-15,
                "alpha{}{}",
                i + 1,
                j + 1
            );
        }
        assert!((ab.beta[1][2] - 1.0 / 3.0).abs() < 1e-15);
        assert!((ab.beta[2][1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_equal_matrix_is_degenerate() {
        let a = [[1.0; 3]; 3];
        assert!(matches!(
            compute_alpha_beta(&a),
            Err(Error::DegenerateDenominator { .. })
        ));
        assert!(matches!(
            classify_table1(&a),
            Err(Error::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn class19_under_identity() {
        let res = classify_table1(&CLASS19).unwrap();
        assert_eq!(res.class_id, ClassId::Class(19));
        assert_eq!(res.permutation, [0, 1, 2]);
        let b = res
            .margins
            .iter()
            .find(|m| m.label.starts_with("a12*b23"))
            .unwrap();
        assert!((b.lhs - 0.8).abs() < 1e-12);
        assert!(res.margins.iter().all(|m| m.value > 0.0));
    }

    #[test]
    fn relabeled_alpha_is_permuted() {
        let sigma = [2, 0, 1];
        let pa = relabel(&CLASS19, &sigma);
        let ab = compute_alpha_beta(&CLASS19).unwrap();
        let pab = compute_alpha_beta(&pa).unwrap();
        for i in 0..3 {
            for j in (0..3).filter(|&j| j != i) {
                assert_eq!(pab.alpha[i][j], ab.alpha[sigma[i]][sigma[j]]);
            }
        }
    }

    #[test]
    fn scaling_keeps_class() {
        for c in [0.01, 0.5, 3.0, 1e4] {
            let scaled = CLASS19.map(|row| row.map(|v| v * c));
            assert_eq!(
                classify_table1(&scaled).unwrap().class_id,
                ClassId::Class(19)
            );
        }
    }

    #[test]
    fn tie_is_refused() {
        // Make a12 b23 + a13 b32 exactly 1: b23 = b32 = 1/3, so a12 + a13 = 3.
        let a = [[1.0, 1.5, 1.5], [0.5, 1.0, 2.0], [0.5, 2.0, 1.0]];
        assert!(matches!(
            classify_table1(&a),
            Err(Error::TieOnBoundary { .. })
        ));
    }

    #[test]
    fn combined_report_for_class19() {
        let lg = make_leslie_gower(ParameterSet::new(
            vec![0.8; 3],
            CLASS19.map(|r| r.to_vec()).to_vec(),
        ))
        .unwrap();
        let rep = classify_and_analyze(&lg).unwrap();
        assert_eq!(rep.classification.class_id, ClassId::Class(19));
        assert!(rep.saddle_pattern);
        assert!(rep.warnings.is_empty(), "{:?}", rep.warnings);
        assert_eq!(rep.interior.unwrap().index, Some(-1));

        let rk = make_ricker(ParameterSet::new(
            vec![0.2; 3],
            CLASS19.map(|r| r.to_vec()).to_vec(),
        ))
        .unwrap();
        let rep = classify_and_analyze(&rk).unwrap();
        assert!(rep.warnings.is_empty(), "{:?}", rep.warnings);
        assert_eq!(rep.interior.unwrap().index, Some(-1));

        let rk = make_ricker(ParameterSet::new(
            vec![1.5; 3],
            CLASS19.map(|r| r.to_vec()).to_vec(),
        ))
        .unwrap();
        let rep = classify_and_analyze(&rk).unwrap();
        assert_eq!(rep.classification.class_id, ClassId::Class(19));
        assert!(rep.warnings.iter().any(|w| w.contains("unverified")));
    }
}
