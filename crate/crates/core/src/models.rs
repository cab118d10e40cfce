//! Kolmogorov competitive maps `T(x) = (x_1 F_1(x), ..., x_n F_n(x))`.
//!
//! The three builtin population models (Leslie–Gower, Atkinson–Allen and
//! Ricker) carry exact analytic partials of their growth functions. Custom
//! maps plug in through [`GrowthFunctions`] and must supply their own
//! partials; nothing in this crate differentiates numerically.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LeslieGower,
    AtkinsonAllen,
    Ricker,
    Custom,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::LeslieGower => "leslie_gower",
            ModelKind::AtkinsonAllen => "atkinson_allen",
            ModelKind::Ricker => "ricker",
            ModelKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// Intrinsic rates `r`, survival fractions `c` (Atkinson–Allen only) and the
/// interaction matrix `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub r: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
}

impl ParameterSet {
    pub fn new(r: Vec<f64>, a: Vec<Vec<f64>>) -> Self {
        Self { r, c: None, a }
    }

    pub fn with_survival(mut self, c: Vec<f64>) -> Self {
        self.c = Some(c);
        self
    }

    pub fn n(&self) -> usize {
        self.r.len()
    }

    /// Checks the positivity invariants for the given model kind.
    ///
    /// Diagonal entries of `A` must be strictly positive. Off-diagonal
    /// entries may be zero (decoupled species), but never negative.
    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let n = self.r.len();
        if n == 0 {
            return Err(invalid("r", "must contain at least one rate"));
        }
        for (i, &ri) in self.r.iter().enumerate() {
            if !(ri.is_finite() && ri > 0.0) {
                return Err(invalid(
                    &format!("r[{i}]"),
                    &format!("must be finite and > 0, got {ri}"),
                ));
            }
        }
        if self.a.len() != n {
            return Err(invalid(
                "A",
                &format!("expected {n} rows, got {}", self.a.len()),
            ));
        }
        for (i, row) in self.a.iter().enumerate() {
            if row.len() != n {
                return Err(invalid(
                    &format!("A[{i}]"),
                    &format!("expected {n} columns, got {}", row.len()),
                ));
            }
            for (j, &aij) in row.iter().enumerate() {
                let field = format!("A[{i}][{j}]");
                if !aij.is_finite() {
                    return Err(invalid(&field, "must be finite"));
                }
                if i == j && aij <= 0.0 {
                    return Err(invalid(
                        &field,
                        &format!("diagonal entry must be > 0, got {aij}"),
                    ));
                }
                if aij < 0.0 {
                    return Err(invalid(&field, &format!("must be >= 0, got {aij}")));
                }
            }
        }
        match (kind, &self.c) {
            (ModelKind::AtkinsonAllen, None) => {
                return Err(invalid("c", "required for the Atkinson–Allen model"));
            }
            (ModelKind::AtkinsonAllen, Some(c)) => {
                if c.len() != n {
                    return Err(invalid(
                        "c",
                        &format!("expected {n} entries, got {}", c.len()),
                    ));
                }
                for (i, &ci) in c.iter().enumerate() {
                    if !(ci > 0.0 && ci < 1.0) {
                        return Err(invalid(
                            &format!("c[{i}]"),
                            &format!("must lie in (0, 1), got {ci}"),
                        ));
                    }
                }
            }
            (_, Some(_)) => {
                return Err(invalid("c", "only meaningful for the Atkinson–Allen model"));
            }
            (_, None) => {}
        }
        Ok(())
    }

    /// True when every entry of `A` is strictly positive.
    pub fn strictly_positive(&self) -> bool {
        self.a.iter().flatten().all(|&v| v > 0.0)
    }
}

fn invalid(field: &str, reason: &str) -> Error {
    Error::InvalidParameter {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

/// Growth functions and partials of a user-supplied Kolmogorov map.
pub trait GrowthFunctions: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    /// Writes `F_i(x)` into `out`.
    fn growth(&self, x: &[f64], out: &mut [f64]);
    /// Writes `dF_i/dx_j` into `out[i * n + j]`.
    fn partials(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Clone)]
enum Backend {
    Builtin {
        r: Vec<f64>,
        c: Vec<f64>,
        a: Vec<f64>,
    },
    Custom(Arc<dyn GrowthFunctions>),
}

/// A competitive Kolmogorov map with analytic Jacobian.
#[derive(Clone)]
pub struct CompetitiveMap {
    kind: ModelKind,
    n: usize,
    params: Option<ParameterSet>,
    backend: Backend,
}

impl fmt::Debug for CompetitiveMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompetitiveMap")
            .field("kind", &self.kind)
            .field("n", &self.n)
            .field("params", &self.params)
            .finish()
    }
}

pub fn make_leslie_gower(params: ParameterSet) -> Result<CompetitiveMap> {
    CompetitiveMap::builtin(ModelKind::LeslieGower, params)
}

pub fn make_atkinson_allen(params: ParameterSet) -> Result<CompetitiveMap> {
    CompetitiveMap::builtin(ModelKind::AtkinsonAllen, params)
}

pub fn make_ricker(params: ParameterSet) -> Result<CompetitiveMap> {
    CompetitiveMap::builtin(ModelKind::Ricker, params)
}

impl CompetitiveMap {
    pub fn builtin(kind: ModelKind, params: ParameterSet) -> Result<Self> {
        if kind == ModelKind::Custom {
            return Err(Error::Config(
                "custom maps are built with CompetitiveMap::custom".into(),
            ));
        }
        params.validate(kind)?;
        let n = params.n();
        let a = params.a.iter().flatten().copied().collect();
        let c = params.c.clone().unwrap_or_else(|| vec![0.0; n]);
        Ok(Self {
            kind,
            n,
            backend: Backend::Builtin {
                r: params.r.clone(),
                c,
                a,
            },
            params: Some(params),
        })
    }

    pub fn custom(growth: Arc<dyn GrowthFunctions>) -> Self {
        Self {
            kind: ModelKind::Custom,
            n: growth.dim(),
            params: None,
            backend: Backend::Custom(growth),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> Option<&ParameterSet> {
        self.params.as_ref()
    }

    pub fn is_builtin(&self) -> bool {
        matches!(self.backend, Backend::Builtin { .. })
    }

    /// Interaction matrix of a builtin model.
    pub fn interaction(&self) -> Option<DMatrix<f64>> {
        match &self.backend {
            Backend::Builtin { a, .. } => Some(DMatrix::from_row_slice(self.n, self.n, a)),
            Backend::Custom(_) => None,
        }
    }

    pub fn growth_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        match &self.backend {
            Backend::Builtin { r, c, a } => {
                let n = self.n;
                for i in 0..n {
                    let s = competition(&a[i * n..(i + 1) * n], x);
                    out[i] = match self.kind {
                        ModelKind::LeslieGower => (1.0 + r[i]) / (1.0 + r[i] * s),
                        ModelKind::AtkinsonAllen => {
                            (1.0 + r[i]) * (1.0 - c[i]) / (1.0 + r[i] * s) + c[i]
                        }
                        ModelKind::Ricker => (r[i] * (1.0 - s)).exp(),
                        ModelKind::Custom => unreachable!(),
                    };
                }
            }
            Backend::Custom(g) => g.growth(x, out),
        }
    }

    /// Row-major `dF_i/dx_j`.
    pub fn partials_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.backend {
            Backend::Builtin { r, c, a } => {
                let n = self.n;
                for i in 0..n {
                    let row = &a[i * n..(i + 1) * n];
                    let s = competition(row, x);
                    let scale = match self.kind {
                        ModelKind::LeslieGower => {
                            let d = 1.0 + r[i] * s;
                            -(1.0 + r[i]) * r[i] / (d * d)
                        }
                        ModelKind::AtkinsonAllen => {
                            let d = 1.0 + r[i] * s;
                            -(1.0 + r[i]) * (1.0 - c[i]) * r[i] / (d * d)
                        }
                        ModelKind::Ricker => -r[i] * (r[i] * (1.0 - s)).exp(),
                        ModelKind::Custom => unreachable!(),
                    };
                    for j in 0..n {
                        out[i * n + j] = scale * row[j];
                    }
                }
            }
            Backend::Custom(g) => g.partials(x, out),
        }
    }

    pub fn growth(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.growth_into(x, &mut out);
        out
    }

    pub fn partials(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        self.partials_into(x, &mut out);
        out
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.growth_into(x, out);
        for (o, &xi) in out.iter_mut().zip(x) {
            *o *= xi;
        }
    }

    /// `T(x)`. Coordinates that are zero stay exactly zero.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.eval_into(x, &mut out);
        out
    }

    /// `DT(x)_ij = delta_ij F_i(x) + x_i dF_i/dx_j(x)`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let f = self.growth(x);
        let df = self.partials(x);
        DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { f[i] } else { 0.0 };
            diag + x[i] * df[i * n + j]
        })
    }

    /// Allocation-free `T` for three species.
    #[inline]
    pub fn eval3(&self, x: &Vector3<f64>) -> Vector3<f64> {
        debug_assert_eq!(self.n, 3);
        let xs = [x[0], x[1], x[2]];
        let mut f = [0.0; 3];
        self.growth_into(&xs, &mut f);
        Vector3::new(xs[0] * f[0], xs[1] * f[1], xs[2] * f[2])
    }

    pub fn jacobian3(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        let xs = [x[0], x[1], x[2]];
        let mut f = [0.0; 3];
        let mut df = [0.0; 9];
        self.growth_into(&xs, &mut f);
        self.partials_into(&xs, &mut df);
        Matrix3::from_fn(|i, j| {
            let diag = if i == j { f[i] } else { 0.0 };
            diag + xs[i] * df[i * 3 + j]
        })
    }

    pub fn require_three(&self) -> Result<()> {
        if self.n == 3 {
            Ok(())
        } else {
            Err(Error::RequiresThreeSpecies(self.n))
        }
    }
}

#[inline]
fn competition(row: &[f64], x: &[f64]) -> f64 {
    row.iter().zip(x).map(|(a, x)| a * x).sum()
}

/// JSON model document: `{"kind":"ricker","r":[...],"c":[...],"A":[[...],...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub r: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
}

impl ModelConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("line {}, column {}: {}", e.line(), e.column(), e))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ModelKind::Custom {
            return Err(invalid("kind", "custom maps cannot be loaded from JSON"));
        }
        self.params().validate(self.kind)
    }

    pub fn params(&self) -> ParameterSet {
        ParameterSet {
            r: self.r.clone(),
            c: self.c.clone(),
            a: self.a.clone(),
        }
    }

    pub fn build(&self) -> Result<CompetitiveMap> {
        CompetitiveMap::builtin(self.kind, self.params())
    }

    pub fn from_map(map: &CompetitiveMap) -> Option<Self> {
        let p = map.params()?;
        Some(Self {
            kind: map.kind(),
            r: p.r.clone(),
            c: p.c.clone(),
            a: p.a.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity3() -> Vec<Vec<f64>> {
        vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]
    }

    fn class19() -> Vec<Vec<f64>> {
        vec![
            vec![1.0, 1.2, 1.2],
            vec![0.5, 1.0, 2.0],
            vec![0.5, 2.0, 1.0],
        ]
    }

    #[test]
    fn leslie_gower_origin_and_unit_point() {
        let m = make_leslie_gower(ParameterSet::new(vec![1.0; 3], identity3())).unwrap();
        assert_eq!(m.eval(&[0.0; 3]), vec![0.0; 3]);
        let t = m.eval(&[1.0; 3]);
        for v in t {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn atkinson_allen_hand_value() {
        let p = ParameterSet::new(vec![1.0; 3], identity3()).with_survival(vec![0.5; 3]);
        let m = make_atkinson_allen(p).unwrap();
        let t = m.eval(&[2.0, 0.0, 0.0]);
        // (2 * 0.5 * 2) / (1 + 2) + 0.5 * 2
        assert!((t[0] - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(t[1], 0.0);
        assert_eq!(t[2], 0.0);
    }

    #[test]
    fn ricker_axial_point_is_fixed() {
        let m = make_ricker(ParameterSet::new(vec![0.2; 3], identity3())).unwrap();
        assert_eq!(m.eval(&[1.0, 0.0, 0.0]), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn jacobian_at_origin_is_diagonal_growth() {
        let p = ParameterSet::new(vec![0.7, 1.1, 0.4], class19());
        for m in [
            make_leslie_gower(p.clone()).unwrap(),
            make_ricker(p.clone()).unwrap(),
        ] {
            let j = m.jacobian(&[0.0; 3]);
            let f = m.growth(&[0.0; 3]);
            for i in 0..3 {
                for k in 0..3 {
                    let want = if i == k { f[i] } else { 0.0 };
                    assert_eq!(j[(i, k)], want);
                }
            }
        }
    }

    #[test]
    fn leslie_gower_symmetric_jacobian_is_half_identity() {
        let m = make_leslie_gower(ParameterSet::new(vec![1.0; 3], identity3())).unwrap();
        let j = m.jacobian(&[1.0; 3]);
        for i in 0..3 {
            for k in 0..3 {
                let want = if i == k { 0.5 } else { 0.0 };
                assert!((j[(i, k)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut a = class19();
        a[1][1] = 0.0;
        let err = make_leslie_gower(ParameterSet::new(vec![1.0; 3], a)).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { ref field, .. } if field == "A[1][1]"));

        let err = make_ricker(ParameterSet::new(vec![1.0, -0.1, 1.0], class19())).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { ref field, .. } if field == "r[1]"));

        let p = ParameterSet::new(vec![1.0; 3], class19()).with_survival(vec![0.5, 1.0, 0.5]);
        let err = make_atkinson_allen(p).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { ref field, .. } if field == "c[1]"));

        let err = make_atkinson_allen(ParameterSet::new(vec![1.0; 3], class19())).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { ref field, .. } if field == "c"));
    }

    #[test]
    fn config_parsing_reports_location_and_field() {
        let ok = r#"{"kind":"ricker","r":[0.2,0.2,0.2],"A":[[1,1.2,1.2],[0.5,1,2],[0.5,2,1]]}"#;
        let cfg = ModelConfig::from_json_str(ok).unwrap();
        assert_eq!(cfg.kind, ModelKind::Ricker);
        assert_eq!(cfg.build().unwrap().dim(), 3);

        let syntax = "{\"kind\":\"ricker\",\n\"r\":[0.2,0.2,]}";
        match ModelConfig::from_json_str(syntax).unwrap_err() {
            Error::Config(msg) => assert!(msg.starts_with("line 2"), "{msg}"),
            e => panic!("unexpected {e:?}"),
        }

        let unknown = r#"{"kind":"ricker","r":[1],"A":[[1]],"extra":1}"#;
        assert!(matches!(
            ModelConfig::from_json_str(unknown),
            Err(Error::Config(_))
        ));

        let bad = r#"{"kind":"leslie_gower","r":[1,1],"A":[[1,2],[3]]}"#;
        assert!(matches!(
            ModelConfig::from_json_str(bad),
            Err(Error::InvalidParameter { ref field, .. }) if field == "A[1]"
        ));
    }

    #[test]
    fn custom_map_uses_supplied_partials() {
        #[derive(Debug)]
        struct Logistic2;
        impl GrowthFunctions for Logistic2 {
            fn dim(&self) -> usize {
                2
            }
            fn growth(&self, x: &[f64], out: &mut [f64]) {
                out[0] = 2.0 / (1.0 + x[0] + 0.5 * x[1]);
                out[1] = 2.0 / (1.0 + 0.5 * x[0] + x[1]);
            }
            fn partials(&self, x: &[f64], out: &mut [f64]) {
                let d0 = 1.0 + x[0] + 0.5 * x[1];
                let d1 = 1.0 + 0.5 * x[0] + x[1];
                out[0] = -2.0 / (d0 * d0);
                out[1] = -1.0 / (d0 * d0);
                out[2] = -1.0 / (d1 * d1);
                out[3] = -2.0 / (d1 * d1);
            }
        }
        let m = CompetitiveMap::custom(Arc::new(Logistic2));
        assert_eq!(m.kind(), ModelKind::Custom);
        let j = m.jacobian(&[0.5, 0.25]);
        let d0: f64 = 1.625;
        assert!((j[(0, 0)] - (2.0 / d0 - 0.5 * 2.0 / (d0 * d0))).abs() < 1e-15);
    }
}
