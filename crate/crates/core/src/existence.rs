//! Sampled checks of the carrying-simplex existence conditions (A1)–(A3)
//! and the closed-form Ricker sufficient condition.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::axial_coordinate;
use crate::error::Result;
use crate::models::{CompetitiveMap, ModelKind, ParameterSet};

pub const DEFAULT_GRID: usize = 25;
pub const DEFAULT_PAD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A1Report {
    pub passes: bool,
    /// Largest sampled `dF_i/dx_j`; negative iff the check passes.
    pub margin: f64,
    pub worst_point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2Report {
    pub passes: bool,
    pub w: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A3Report {
    pub passes: bool,
    /// `min over (x, i) of max(expr1, expr2)`.
    pub margin: f64,
    pub worst_point: Vec<f64>,
    pub worst_species: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExistenceReport {
    pub a1: A1Report,
    pub a2: A2Report,
    pub a3: Option<A3Report>,
    pub grid_resolution: usize,
    /// Upper corner `w` of the order interval `[0, w]`.
    pub region: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ricker: Option<RickerConditionReport>,
    pub passes: bool,
}

/// Evenly spaced values `0, w/(g−1), ..., w`.
fn axis_values(w: f64, grid: usize) -> Vec<f64> {
    let g = grid.max(2);
    (0..g).map(|k| w * k as f64 / (g - 1) as f64).collect()
}

fn for_each_grid_point(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(axes.len())];
    for values in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// (A1) on the full grid over `[0, w(1 + pad)]`.
pub fn check_a1(map: &CompetitiveMap, w: &[f64], grid: usize, pad: f64) -> A1Report {
    let n = map.dim();
    let axes: Vec<Vec<f64>> = w
        .iter()
        .map(|&wi| axis_values(wi * (1.0 + pad), grid))
        .collect();
    let points = for_each_grid_point(&axes);
    let (margin, worst) = points
        .par_iter()
        .map(|x| {
            let df = map.partials(x);
            let m = df.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (m, x.clone())
        })
        .reduce(
            || (f64::NEG_INFINITY, vec![0.0; n]),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        );
    A1Report {
        passes: margin < 0.0,
        margin,
        worst_point: worst,
    }
}

pub fn check_a2(map: &CompetitiveMap) -> A2Report {
    let n = map.dim();
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        match axial_coordinate(map, i) {
            Ok(wi) if wi > 0.0 => w.push(wi),
            Ok(wi) => {
                return A2Report {
                    passes: false,
                    w,
                    diagnostic: Some(format!("axis {}: non-positive root {wi}", i + 1)),
                }
            }
            Err(e) => {
                return A2Report {
                    passes: false,
                    w,
                    diagnostic: Some(e.to_string()),
                }
            }
        }
    }
    A2Report {
        passes: true,
        w,
        diagnostic: None,
    }
}

/// The two alternative (A3) expressions for species `i` at `x`.
pub fn a3_expressions(map: &CompetitiveMap, x: &[f64], i: usize) -> (f64, f64) {
    let n = map.dim();
    let f = map.growth(x);
    let df = map.partials(x);
    let mut e1 = f[i];
    let mut e2 = f[i];
    for j in (0..n).filter(|&j| x[j] > 0.0) {
        e1 += x[j] * df[i * n + j];
        e2 += x[i] * df[i * n + j];
    }
    (e1, e2)
}

/// (A3) sampled over `[0, w] \ {0}`, stratified by support.
///
/// For every nonempty support κ the coordinates in κ take the values
/// `w_i k/(g−1)`, `k = 1..g−1`, and the rest are zero, so each stratum has
/// support exactly κ. Grids with `g − 1` doubling are nested.
pub fn check_a3(map: &CompetitiveMap, w: &[f64], grid: usize) -> A3Report {
    let n = map.dim();
    let g = grid.max(2);
    let mut points = Vec::new();
    for mask in 1u32..(1 << n) {
        let axes: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                if mask & (1 << i) != 0 {
                    (1..g).map(|k| w[i] * k as f64 / (g - 1) as f64).collect()
                } else {
                    vec![0.0]
                }
            })
            .collect();
        points.extend(for_each_grid_point(&axes));
    }
    let samples = points.len();
    let (margin, worst, species) = points
        .par_iter()
        .map(|x| {
            (0..n)
                .filter(|&i| x[i] > 0.0)
                .map(|i| {
                    let (e1, e2) = a3_expressions(map, x, i);
                    (e1.max(e2), x.clone(), i)
                })
                .fold(
                    (f64::INFINITY, x.clone(), 0),
                    |a, b| if b.0 < a.0 { b } else { a },
                )
        })
        .reduce(
            || (f64::INFINITY, vec![0.0; n], 0),
            |a, b| {
                if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        );
    A3Report {
        passes: margin > 0.0,
        margin,
        worst_point: worst,
        worst_species: species,
        samples,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RickerSpecies {
    pub r: f64,
    /// `a_ii / Σ_j a_ij`.
    pub diagonal_threshold: f64,
    /// `1 / Σ_j (a_ij / a_jj)`.
    pub scaled_threshold: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RickerConditionReport {
    pub species: Vec<RickerSpecies>,
    pub passes: bool,
}

/// Closed-form sufficient condition for (A1)–(A3) in the Ricker model.
pub fn ricker_condition(params: &ParameterSet) -> RickerConditionReport {
    let n = params.n();
    let species: Vec<RickerSpecies> = (0..n)
        .map(|i| {
            let row = &params.a[i];
            let diagonal_threshold = row[i] / row.iter().sum::<f64>();
            let scaled_threshold = 1.0 / (0..n).map(|j| row[j] / params.a[j][j]).sum::<f64>();
            let r = params.r[i];
            RickerSpecies {
                r,
                diagonal_threshold,
                scaled_threshold,
                passes: r < diagonal_threshold || r < scaled_threshold,
            }
        })
        .collect();
    let passes = species.iter().all(|s| s.passes);
    RickerConditionReport { species, passes }
}

/// Runs (A2), then (A1) and (A3) over the region it defines.
pub fn check_existence(map: &CompetitiveMap, grid: usize, pad: f64) -> Result<ExistenceReport> {
    let a2 = check_a2(map);
    let ricker = match (map.kind(), map.params()) {
        (ModelKind::Ricker, Some(p)) => Some(ricker_condition(p)),
        _ => None,
    };
    if !a2.passes {
        let n = map.dim();
        return Ok(ExistenceReport {
            a1: A1Report {
                passes: false,
                margin: f64::NAN,
                worst_point: vec![0.0; n],
            },
            a2,
            a3: None,
            grid_resolution: grid,
            region: Vec::new(),
            ricker,
            passes: false,
        });
    }
    let w = a2.w.clone();
    let a1 = check_a1(map, &w, grid, pad);
    let a3 = check_a3(map, &w, grid);
    let passes = a1.passes && a3.passes;
    Ok(ExistenceReport {
        a1,
        a2,
        a3: Some(a3),
        grid_resolution: grid,
        region: w,
        ricker,
        passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_atkinson_allen, make_leslie_gower, make_ricker, GrowthFunctions};
    use std::sync::Arc;

    fn class19() -> Vec<Vec<f64>> {
        vec![
            vec![1.0, 1.2, 1.2],
            vec![0.5, 1.0, 2.0],
            vec![0.5, 2.0, 1.0],
        ]
    }

    fn identity3() -> Vec<Vec<f64>> {
        vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]
    }

    #[test]
    fn builtins_pass_all_conditions() {
        let p = ParameterSet::new(vec![2.5, 0.3, 1.0], class19());
        let lg = make_leslie_gower(p.clone()).unwrap();
        let aa = make_atkinson_allen(p.clone().with_survival(vec![0.2, 0.6, 0.9])).unwrap();
        for m in [lg, aa] {
            let rep = check_existence(&m, DEFAULT_GRID, DEFAULT_PAD).unwrap();
            assert!(rep.passes, "{rep:?}");
        }
        let rk = make_ricker(ParameterSet::new(vec![0.2; 3], class19())).unwrap();
        assert!(check_a1(&rk, &[1.0; 3], DEFAULT_GRID, DEFAULT_PAD).passes);
    }

    #[test]
    fn ricker_with_large_rates_fails_a3() {
        let m = make_ricker(ParameterSet::new(vec![10.0; 3], identity3())).unwrap();
        let rep = check_a3(&m, &[1.0; 3], DEFAULT_GRID);
        assert!(!rep.passes);
        // Oracle: at x = e_1 both expressions equal F_1(1 − r x_1) = 1 − 10.
        let (e1, e2) = a3_expressions(&m, &[1.0, 0.0, 0.0], 0);
        assert!((e1 + 9.0).abs() < 1e-12 && (e2 + 9.0).abs() < 1e-12);
        assert!(rep.margin <= -9.0 + 1e-12);
    }

    #[test]
    fn zero_partial_fails_a1_with_zero_margin() {
        #[derive(Debug)]
        struct Decoupled;
        impl GrowthFunctions for Decoupled {
            fn dim(&self) -> usize {
                3
            }
            fn growth(&self, x: &[f64], out: &mut [f64]) {
                out[0] = 2.0 / (1.0 + x[0] + x[2]);
                out[1] = 2.0 / (1.0 + x[0] + x[1] + x[2]);
                out[2] = 2.0 / (1.0 + x[0] + x[1] + x[2]);
            }
            fn partials(&self, x: &[f64], out: &mut [f64]) {
                let d0 = 1.0 + x[0] + x[2];
                let d = 1.0 + x[0] + x[1] + x[2];
                out.copy_from_slice(&[
                    -2.0 / (d0 * d0),
                    0.0,
                    -2.0 / (d0 * d0),
                    -2.0 / (d * d),
                    -2.0 / (d * d),
                    -2.0 / (d * d),
                    -2.0 / (d * d),
                    -2.0 / (d * d),
                    -2.0 / (d * d),
                ]);
            }
        }
        let m = CompetitiveMap::custom(Arc::new(Decoupled));
        let a2 = check_a2(&m);
        assert!(a2.passes);
        let rep = check_a1(&m, &a2.w, 9, DEFAULT_PAD);
        assert!(!rep.passes);
        assert_eq!(rep.margin, 0.0);
    }

    #[test]
    fn a2_fails_when_growth_exceeds_one_on_axis() {
        #[derive(Debug)]
        struct Unbounded;
        impl GrowthFunctions for Unbounded {
            fn dim(&self) -> usize {
                2
            }
            fn growth(&self, x: &[f64], out: &mut [f64]) {
                out[0] = 1.5 + 1.0 / (1.0 + x[0] + x[1]);
                out[1] = 2.0 / (1.0 + x[0] + x[1]);
            }
            fn partials(&self, x: &[f64], out: &mut [f64]) {
                let d = 1.0 + x[0] + x[1];
                out.copy_from_slice(&[
                    -1.0 / (d * d),
                    -1.0 / (d * d),
                    -2.0 / (d * d),
                    -2.0 / (d * d),
                ]);
            }
        }
        let rep = check_a2(&CompetitiveMap::custom(Arc::new(Unbounded)));
        assert!(!rep.passes);
        assert!(rep.diagnostic.is_some());
    }

    #[test]
    fn ricker_condition_thresholds() {
        let rep = ricker_condition(&ParameterSet::new(vec![0.5; 3], identity3()));
        assert!(rep.passes);
        let rep = ricker_condition(&ParameterSet::new(vec![1.5, 0.5, 0.5], identity3()));
        assert!(!rep.passes);
        assert!(!rep.species[0].passes && rep.species[1].passes);

        let rep = ricker_condition(&ParameterSet::new(vec![0.2; 3], class19()));
        assert!(rep.passes);
        assert!((rep.species[0].diagonal_threshold - 1.0 / 3.4).abs() < 1e-15);
        assert!((rep.species[1].diagonal_threshold - 1.0 / 3.5).abs() < 1e-15);
        assert!((rep.species[2].diagonal_threshold - 1.0 / 3.5).abs() < 1e-15);
    }

    #[test]
    fn a3_never_recovers_under_refinement() {
        for r in [0.5, 1.0, 1.6, 3.0] {
            let m = make_ricker(ParameterSet::new(vec![r; 3], class19())).unwrap();
            let w = [1.0; 3];
            let verdicts: Vec<bool> = [9, 17, 33]
                .iter()
                .map(|&g| check_a3(&m, &w, g).passes)
                .collect();
            for pair in verdicts.windows(2) {
                assert!(pair[0] || !pair[1], "r = {r}: {verdicts:?}");
            }
        }
    }
}
