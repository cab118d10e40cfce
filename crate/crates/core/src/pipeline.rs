//! Run configuration and the reports assembled from the analysis modules.
//!
//! Every report carries a [`Provenance`] block with the SHA-256 hash of the
//! computational part of the configuration (model, numeric settings, seed)
//! and the seed itself. Given the same configuration the JSON renderings are
//! byte-identical.

use std::path::PathBuf;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{find_all_fixed_points, FixedPointRecord, SupportKind, HYPERBOLIC_TOL};
use crate::classify::{
    classify_and_analyze, classify_table1, ClassificationResult, ClassifyAnalyzeReport, Matrix3x3,
};
use crate::error::{Error, Result};
use crate::existence::{check_existence, ExistenceReport, DEFAULT_GRID, DEFAULT_PAD};
use crate::manifolds::{
    boundary_roles, conjugacy_decay_report, converge_orbit, curve_separation, distance_to_polyline,
    leaf_contraction_report, m2_expansion_report, saddle_data, trace_stable_on_s, trace_unstable,
    BoundaryRoles, ConjugacyDecayReport, ConjugacyOptions, LeafContractionReport,
    M2ExpansionReport, ManifoldCurve, OrbitOutcome, SaddleData, StableManifold, StableOptions,
    UnstableOptions,
};
use crate::models::{CompetitiveMap, ModelConfig};
use crate::portrait::{
    basin_raster, count_components, rasterize_barrier, render_svg, to_display, topology,
    BasinRaster, ComponentReport, PortraitScene, Topology,
};
use crate::simplex::{
    estimate_tangent_cone, estimate_theta, graph_transform, invariance_residual, unordered_check,
    InitialSurface, SimplexMesh, SimplexOptions, DEFAULT_GRADING, DEFAULT_MAX_ITERS,
    DEFAULT_RESOLUTION, DEFAULT_TOL,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Width, in raster pixels, of the band along the triangle boundary inside
/// which the unstable curve is replaced by straight connectors.
pub const BARRIER_BAND: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericConfig {
    /// Lattice resolution `N` of the carrying-simplex mesh (even, ≥ 8).
    pub resolution: usize,
    pub simplex_tol: f64,
    pub max_iters: usize,
    pub grading: f64,
    pub existence_grid: usize,
    pub existence_pad: f64,
    /// Overrides the midpoint of `(μ, min(1, ν))`.
    pub rho: Option<f64>,
    /// Overrides the midpoint of `(ρ, ν)`.
    pub sigma: Option<f64>,
    pub l_search_max: usize,
    pub leaf_samples: usize,
    /// Leaf-contraction neighborhood radius as a multiple of `‖q‖`.
    pub leaf_radius: f64,
    pub conjugacy_samples: usize,
    /// Conjugacy sampling radius as a multiple of `‖q‖`.
    pub conjugacy_radius: f64,
    pub conjugacy_k_max: usize,
    pub conjugacy_slack: f64,
    /// Basin raster size in pixels per side.
    pub raster: usize,
    pub basin_max_iter: usize,
    pub orbit_samples: usize,
    pub orbit_max_iter: usize,
    pub orbit_tol: f64,
}

impl Default for NumericConfig {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            simplex_tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            grading: DEFAULT_GRADING,
            existence_grid: DEFAULT_GRID,
            existence_pad: DEFAULT_PAD,
            rho: None,
            sigma: None,
            l_search_max: 64,
            leaf_samples: 200,
            leaf_radius: 1e-3,
            conjugacy_samples: 50,
            conjugacy_radius: 1e-2,
            conjugacy_k_max: 30,
            conjugacy_slack: 0.1,
            raster: crate::portrait::DEFAULT_RASTER,
            basin_max_iter: 50_000,
            orbit_samples: 500,
            orbit_max_iter: 50_000,
            orbit_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub json: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub svg: Option<PathBuf>,
    pub mesh: Option<PathBuf>,
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub numeric: NumericConfig,
    #[serde(default)]
    pub outputs: OutputPaths,
    #[serde(default)]
    pub seed: u64,
}

fn field_error(field: &str, reason: String) -> Error {
    Error::InvalidParameter {
        field: field.to_string(),
        reason,
    }
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
}

impl RunConfig {
    pub fn from_model(model: ModelConfig) -> Self {
        Self {
            model,
            numeric: NumericConfig::default(),
            outputs: OutputPaths::default(),
            seed: 0,
        }
    }

    /// Parses either a full run configuration (an object with a `model` key)
    /// or a bare model document, then validates it.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(json_error)?;
        let cfg = if value.get("model").is_some() {
            serde_json::from_str::<RunConfig>(text).map_err(json_error)?
        } else {
            Self::from_model(ModelConfig::from_json_str(text)?)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let n = &self.numeric;
        if n.resolution < 8 || n.resolution % 2 != 0 {
            return Err(field_error(
                "numeric.resolution",
                format!("must be even and >= 8, got {}", n.resolution),
            ));
        }
        if !(1.0..=4.0).contains(&n.grading) {
            return Err(field_error(
                "numeric.grading",
                format!("must lie in [1, 4], got {}", n.grading),
            ));
        }
        let positive = [
            ("numeric.simplex_tol", n.simplex_tol),
            ("numeric.existence_pad", n.existence_pad),
            ("numeric.leaf_radius", n.leaf_radius),
            ("numeric.conjugacy_radius", n.conjugacy_radius),
            ("numeric.conjugacy_slack", n.conjugacy_slack),
            ("numeric.orbit_tol", n.orbit_tol),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(field_error(
                    field,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        for (field, v) in [("numeric.rho", n.rho), ("numeric.sigma", n.sigma)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(field_error(
                        field,
                        format!("must be finite and > 0, got {v}"),
                    ));
                }
            }
        }
        let counts = [
            ("numeric.max_iters", n.max_iters),
            ("numeric.existence_grid", n.existence_grid),
            ("numeric.l_search_max", n.l_search_max),
            ("numeric.leaf_samples", n.leaf_samples),
            ("numeric.conjugacy_samples", n.conjugacy_samples),
            ("numeric.conjugacy_k_max", n.conjugacy_k_max),
            ("numeric.basin_max_iter", n.basin_max_iter),
            ("numeric.orbit_max_iter", n.orbit_max_iter),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(field_error(field, "must be >= 1".into()));
            }
        }
        if n.raster < 8 {
            return Err(field_error(
                "numeric.raster",
                format!("must be >= 8, got {}", n.raster),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the model, numeric settings and seed. Output paths do
    /// not take part.
    pub fn hash(&self) -> String {
        let identity =
            serde_json::json!({ "model": self.model, "numeric": self.numeric, "seed": self.seed });
        hex::encode(Sha256::digest(identity.to_string().as_bytes()))
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            tool: "carsim".into(),
            version: VERSION.into(),
            config_hash: self.hash(),
            seed: self.seed,
        }
    }

    pub fn build_map(&self) -> Result<CompetitiveMap> {
        self.model.build()
    }

    pub fn simplex_options(&self) -> SimplexOptions {
        SimplexOptions {
            resolution: self.numeric.resolution,
            tol: self.numeric.simplex_tol,
            max_iters: self.numeric.max_iters,
            initial: InitialSurface::AxialPlane,
            grading: self.numeric.grading,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    /// Provenance for a run driven by raw input bytes rather than a config.
    pub fn for_content(bytes: &[u8], seed: u64) -> Self {
        Provenance {
            tool: "carsim".into(),
            version: VERSION.into(),
            config_hash: hex::encode(Sha256::digest(bytes)),
            seed,
        }
    }
}

/// Deterministic pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

/// Upper corner `w` of the order interval, assembled from the axial fixed
/// points.
pub fn axial_corner(records: &[FixedPointRecord]) -> Vector3<f64> {
    let mut w = Vector3::zeros();
    for p in records
        .iter()
        .filter(|p| p.support_kind == SupportKind::Axial)
    {
        let i = p.support[0];
        if i < 3 {
            w[i] = p.location[i];
        }
    }
    w
}

fn vec3(x: &[f64]) -> Vector3<f64> {
    Vector3::new(x[0], x[1], x[2])
}

fn interior(records: &[FixedPointRecord]) -> Option<&FixedPointRecord> {
    records
        .iter()
        .find(|p| p.support_kind == SupportKind::Interior)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub provenance: Provenance,
    pub model: ModelConfig,
    /// Origin first, then supports by size and lexicographic order.
    pub fixed_points: Vec<FixedPointRecord>,
    pub degenerate_supports: Vec<Vec<usize>>,
    pub interior_index: Option<i32>,
    pub existence: ExistenceReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassifyAnalyzeReport>,
    pub warnings: Vec<String>,
}

pub fn analyze(cfg: &RunConfig) -> Result<AnalyzeReport> {
    let map = cfg.build_map()?;
    let (fixed_points, degenerate_supports) = find_all_fixed_points(&map)?;
    let existence = check_existence(&map, cfg.numeric.existence_grid, cfg.numeric.existence_pad)?;
    let mut warnings = Vec::new();
    let classification = if map.dim() == 3 && map.params().is_some_and(|p| p.strictly_positive()) {
        match classify_and_analyze(&map) {
            Ok(report) => {
                warnings.extend(report.warnings.iter().cloned());
                Some(report)
            }
            Err(e) => {
                warnings.push(format!("classification: {e}"));
                None
            }
        }
    } else {
        None
    };
    if !existence.passes {
        warnings.push("existence conditions for a carrying simplex are not met".into());
    }
    Ok(AnalyzeReport {
        provenance: cfg.provenance(),
        model: cfg.model.clone(),
        interior_index: interior(&fixed_points).and_then(|q| q.index),
        fixed_points,
        degenerate_supports,
        existence,
        classification,
        warnings,
    })
}

/// Mesh file: the mesh fields at top level next to the provenance block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshDocument {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub mesh: SimplexMesh,
}

/// Runs the graph transform; the mesh is returned whether or not it
/// converged.
pub fn build_mesh(cfg: &RunConfig) -> Result<SimplexMesh> {
    graph_transform(&cfg.build_map()?, &cfg.simplex_options())
}

/// Unstable and stable curves of the interior saddle with the boundary
/// fixed points they join.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleStudy {
    pub roles: BoundaryRoles,
    pub saddle: SaddleData,
    pub unstable: ManifoldCurve,
    pub stable: StableManifold,
}

pub fn trace_manifolds(
    map: &CompetitiveMap,
    mesh: &SimplexMesh,
    records: &[FixedPointRecord],
) -> Result<SaddleStudy> {
    let q = interior(records)
        .ok_or_else(|| Error::NoInteriorFixedPoint("no interior record".into()))?;
    let q = vec3(&q.location);
    let roles = boundary_roles(records)?;
    let saddle = saddle_data(map, &q)?;
    let w_norm = axial_corner(records).norm();
    let (unstable, stable) = rayon::join(
        || {
            trace_unstable(
                map,
                &saddle,
                &roles.attractors,
                &UnstableOptions::scaled(q.norm(), w_norm),
            )
        },
        || trace_stable_on_s(map, mesh, &q, &roles, &StableOptions::scaled(w_norm)),
    );
    Ok(SaddleStudy {
        roles,
        saddle,
        unstable: unstable?,
        stable: stable?,
    })
}

/// Curves file written next to the mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvesDocument {
    pub provenance: Provenance,
    pub stable: ManifoldCurve,
    pub unstable: ManifoldCurve,
}

/// Basin raster and the components left after the unstable curve is drawn
/// as a wall.
pub fn basin_components(
    map: &CompetitiveMap,
    mesh: &SimplexMesh,
    roles: &BoundaryRoles,
    unstable: &ManifoldCurve,
    size: usize,
    max_iter: usize,
    tol: f64,
) -> (BasinRaster, ComponentReport) {
    let attractors = [roles.attractors[0].point(), roles.attractors[1].point()];
    let raster = basin_raster(map, mesh, &attractors, size, max_iter, tol);
    let curve: Vec<[f64; 2]> = unstable.points.iter().map(to_display).collect();
    let end = |id: &str| {
        let a = roles
            .attractors
            .iter()
            .find(|a| a.id == id)
            .unwrap_or(&roles.attractors[0]);
        to_display(&a.location)
    };
    let ends = [end(&unstable.endpoints[0]), end(&unstable.endpoints[1])];
    let wall = rasterize_barrier(size, &curve, ends, BARRIER_BAND);
    let components = count_components(&raster, &wall, BARRIER_BAND);
    (raster, components)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "==")]
    Equal,
}

/// One pass/fail line of a verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passes: bool,
    pub measured: f64,
    pub relation: Relation,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, measured: f64, relation: Relation, threshold: f64) -> Self {
        let passes = match relation {
            Relation::AtMost => measured <= threshold,
            Relation::AtLeast => measured >= threshold,
            Relation::Equal => measured == threshold,
        };
        Self {
            name: name.into(),
            passes,
            measured,
            relation,
            threshold,
            detail: String::new(),
        }
    }

    pub fn flag(name: &str, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, Relation::Equal, 1.0)
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSummary {
    pub resolution: usize,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub edge_length: f64,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSummary {
    pub samples: usize,
    pub unresolved: usize,
    /// `(fixed point id, orbit count)` in fixed-point order.
    pub limits: Vec<(String, usize)>,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleDiagnostics {
    pub rho: f64,
    pub sigma: f64,
    pub leaf: LeafContractionReport,
    pub m2: M2ExpansionReport,
    pub conjugacy: ConjugacyDecayReport,
    /// `(radius, Θ̂)` over shrinking radii.
    pub theta: Vec<(f64, f64)>,
    /// `(radius, angle to W)` over shrinking radii.
    pub tangent_cone: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<Topology>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<ComponentReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub provenance: Provenance,
    pub mesh: MeshSummary,
    pub checks: Vec<Check>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saddle: Option<SaddleDiagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orbits: Option<OrbitSummary>,
    pub notes: Vec<String>,
    pub passes: bool,
}

/// Uniform random starting points in `[0, 2w]`, away from the origin.
pub fn sample_orbits(
    map: &CompetitiveMap,
    records: &[FixedPointRecord],
    count: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> OrbitSummary {
    let w = axial_corner(records);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<Vector3<f64>> = (0..count)
        .map(|_| loop {
            let x = Vector3::new(
                rng.random_range(0.0..=2.0 * w[0]),
                rng.random_range(0.0..=2.0 * w[1]),
                rng.random_range(0.0..=2.0 * w[2]),
            );
            if x.norm() > 1e-3 * w.norm() {
                break x;
            }
        })
        .collect();
    let targets: Vec<(String, Vector3<f64>)> = records
        .iter()
        .filter(|p| !p.support.is_empty())
        .map(|p| (p.id.clone(), vec3(&p.location)))
        .collect();
    let outcomes: Vec<OrbitOutcome> = starts
        .par_iter()
        .map(|x| converge_orbit(map, x, &targets, max_iter, 1e-3 * tol, tol))
        .collect();
    let mut limits: Vec<(String, usize)> = targets.iter().map(|(id, _)| (id.clone(), 0)).collect();
    let mut unresolved = 0;
    let mut max_iterations = 0;
    for o in &outcomes {
        match o {
            OrbitOutcome::Converged {
                fixed_point,
                iterations,
                ..
            } => {
                if let Some(slot) = limits.iter_mut().find(|(id, _)| id == fixed_point) {
                    slot.1 += 1;
                }
                max_iterations = max_iterations.max(*iterations);
            }
            OrbitOutcome::Unresolved { iterations } => {
                unresolved += 1;
                max_iterations = max_iterations.max(*iterations);
            }
        }
    }
    limits.retain(|(_, c)| *c > 0);
    OrbitSummary {
        samples: count,
        unresolved,
        limits,
        max_iterations,
    }
}

/// Checks on a converged mesh shared by `verify` and the acceptance suite.
pub fn mesh_checks(
    map: &CompetitiveMap,
    mesh: &SimplexMesh,
    records: &[FixedPointRecord],
    tol: f64,
) -> Vec<Check> {
    let w = axial_corner(records);
    let w_norm = w.norm();
    let h = mesh.edge_length();
    let mut checks = vec![Check::new(
        "simplex.residual",
        mesh.residual,
        Relation::AtMost,
        tol,
    )];
    let violations = unordered_check(mesh, 1e-6 * w_norm);
    checks.push(
        Check::new(
            "simplex.unordered",
            violations.len() as f64,
            Relation::AtMost,
            0.0,
        )
        .with_detail(format!("tol {:e}", 1e-6 * w_norm)),
    );
    let inv = invariance_residual(map, mesh);
    checks.push(
        Check::new(
            "simplex.invariance",
            inv,
            Relation::AtMost,
            (10.0 * tol).max(5.0 * h * h),
        )
        .with_detail(format!("edge length {h:e}")),
    );
    let excess = mesh
        .vertices()
        .iter()
        .flat_map(|x| (0..3).map(move |i| x[i] - w[i] * (1.0 + 1e-6)))
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(
        Check::new("simplex.localization", excess, Relation::AtMost, 0.0)
            .with_detail("max of x_i - w_i(1+1e-6)"),
    );
    let worst = records
        .iter()
        .filter(|p| !p.support.is_empty())
        .map(|p| {
            (
                p.id.clone(),
                mesh.distance(&vec3(&p.location)).unwrap_or(f64::INFINITY),
            )
        })
        .fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    checks.push(
        Check::new(
            "simplex.fixed_points_on_surface",
            worst.1,
            Relation::AtMost,
            h,
        )
        .with_detail(format!("worst {}", worst.0)),
    );
    checks
}

fn angle_trend(values: &[(f64, f64)], noise: f64) -> bool {
    values.windows(2).all(|w| w[1].1 <= w[0].1 + noise)
}

/// Runs every diagnostic that applies to the configured system.
pub fn verify(cfg: &RunConfig) -> Result<VerifyReport> {
    let map = cfg.build_map()?;
    map.require_three()?;
    let num = &cfg.numeric;
    let (records, _) = find_all_fixed_points(&map)?;
    let existence = check_existence(&map, num.existence_grid, num.existence_pad)?;
    let mesh = graph_transform(&map, &cfg.simplex_options())?;
    let h = mesh.edge_length();
    let mut checks = vec![Check::flag("existence", existence.passes)];
    checks.extend(mesh_checks(&map, &mesh, &records, num.simplex_tol));
    let mut notes = Vec::new();

    let tabulated = map
        .params()
        .filter(|p| p.strictly_positive())
        .and_then(|_| classify_and_analyze(&map).ok())
        .and_then(|r| r.classification.class_id.tabulated());
    let q_record = interior(&records);
    let mut saddle_diag = None;
    if let Some(qr) = q_record {
        if let Some(index) = qr.index {
            let m = qr
                .eigenvalues
                .iter()
                .filter(|z| z.im.abs() < 1e-12 && z.re > 1.0)
                .count();
            let expected = if m % 2 == 0 { 1 } else { -1 };
            checks.push(Check::new(
                "interior.index",
                index as f64,
                Relation::Equal,
                expected as f64,
            ));
        }
        if tabulated.is_some() {
            checks.push(Check::flag(
                "interior.saddle_pattern",
                crate::classify::saddle_pattern(&qr.eigenvalues, HYPERBOLIC_TOL),
            ));
        }
        let q = vec3(&qr.location);
        match crate::manifolds::pseudo_splitting(&map, &q) {
            Ok(split) => {
                let rho = num.rho.unwrap_or_else(|| split.default_rho());
                let sigma = num.sigma.unwrap_or_else(|| split.default_sigma(rho));
                let leaf = leaf_contraction_report(
                    &map,
                    &q,
                    &split,
                    rho,
                    num.leaf_samples,
                    num.leaf_radius * q.norm(),
                    cfg.seed,
                );
                checks.push(
                    Check::new(
                        "foliation.leaf_contraction",
                        leaf.max_ratio,
                        Relation::AtMost,
                        rho,
                    )
                    .with_detail(format!("{:?}", leaf.status)),
                );
                let at_q = leaf.ratios_at_q.last().map_or(f64::NAN, |r| r.1);
                checks.push(Check::new(
                    "foliation.ratio_at_q",
                    (at_q - split.mu).abs(),
                    Relation::AtMost,
                    1e-3,
                ));
                let m2 = m2_expansion_report(&split, sigma, num.l_search_max)?;
                let expect_l = sigma < split.nu();
                checks.push(
                    Check::flag("foliation.m2_expansion", m2.l.is_some() == expect_l)
                        .with_detail(format!("sigma {sigma}, nu {}, l {:?}", split.nu(), m2.l)),
                );
                let conj_opts = ConjugacyOptions {
                    sample_count: num.conjugacy_samples,
                    k_max: num.conjugacy_k_max,
                    radius: num.conjugacy_radius * q.norm(),
                    slack: num.conjugacy_slack,
                    seed: cfg.seed,
                };
                let conjugacy = conjugacy_decay_report(&map, &mesh, &q, &split, rho, &conj_opts);
                checks.push(Check::new(
                    "conjugacy.pass_fraction",
                    conjugacy.pass_fraction,
                    Relation::AtLeast,
                    0.9,
                ));
                let radii = [8.0 * h, 4.0 * h, 2.0 * h];
                let theta: Vec<(f64, f64)> = radii
                    .iter()
                    .filter_map(|&r| {
                        estimate_theta(&mesh, &q, &split.v, &split.w_basis, r)
                            .ok()
                            .map(|t| (r, t))
                    })
                    .collect();
                checks.push(Check::flag(
                    "conjugacy.theta_finite",
                    theta.len() == radii.len() && theta.iter().all(|t| t.1.is_finite()),
                ));
                let base = mesh.lift(&[q[0], q[1], q[2]]);
                let tangent_cone: Vec<(f64, f64)> = radii
                    .iter()
                    .filter_map(|&r| {
                        estimate_tangent_cone(&mesh, &base, r, &split.w_basis)
                            .ok()
                            .map(|t| (r, t.angle_to_w))
                    })
                    .collect();
                checks.push(
                    Check::flag(
                        "tangent.cone_trend",
                        tangent_cone.len() == radii.len() && angle_trend(&tangent_cone, 2.0 * h),
                    )
                    .with_detail(format!("noise floor {:e}", 2.0 * h)),
                );
                saddle_diag = Some(SaddleDiagnostics {
                    rho,
                    sigma,
                    leaf,
                    m2,
                    conjugacy,
                    theta,
                    tangent_cone,
                    topology: None,
                    components: None,
                });
            }
            Err(e) => notes.push(format!("foliation diagnostics skipped: {e}")),
        }
        match trace_manifolds(&map, &mesh, &records) {
            Ok(study) => {
                checks.extend(manifold_checks(&mesh, &study, &records));
                let (_, components) = basin_components(
                    &map,
                    &mesh,
                    &study.roles,
                    &study.unstable,
                    num.raster,
                    num.basin_max_iter,
                    StableOptions::scaled(axial_corner(&records).norm()).basin_tol,
                );
                checks.push(Check::new(
                    "portrait.components",
                    components.count as f64,
                    Relation::Equal,
                    4.0,
                ));
                if let Some(d) = saddle_diag.as_mut() {
                    d.topology = Some(topology(&study.roles));
                    d.components = Some(components);
                }
            }
            Err(e) if tabulated.is_some() => {
                checks.push(Check::flag("manifolds.traced", false).with_detail(e.to_string()));
            }
            Err(e) => notes.push(format!("manifold tracing skipped: {e}")),
        }
    } else {
        notes.push("no interior fixed point; saddle diagnostics skipped".into());
    }

    let orbits = (num.orbit_samples > 0).then(|| {
        sample_orbits(
            &map,
            &records,
            num.orbit_samples,
            num.orbit_max_iter,
            num.orbit_tol,
            cfg.seed,
        )
    });
    if let Some(o) = &orbits {
        checks.push(Check::new(
            "dynamics.unresolved_orbits",
            o.unresolved as f64,
            Relation::AtMost,
            0.0,
        ));
    }
    let passes = checks.iter().all(|c| c.passes);
    Ok(VerifyReport {
        provenance: cfg.provenance(),
        mesh: MeshSummary {
            resolution: mesh.resolution,
            iterations: mesh.iterations,
            residual: mesh.residual,
            converged: mesh.converged,
            edge_length: h,
            flagged: mesh.flagged.len(),
        },
        checks,
        saddle: saddle_diag,
        orbits,
        notes,
        passes,
    })
}

/// Endpoint, containment and crossing checks for traced curves.
pub fn manifold_checks(
    mesh: &SimplexMesh,
    study: &SaddleStudy,
    records: &[FixedPointRecord],
) -> Vec<Check> {
    let w_norm = axial_corner(records).norm();
    let h = mesh.edge_length();
    let q = study.saddle.q;
    let u = &study.unstable;
    let s = &study.stable.curve;
    let mut checks = Vec::new();
    let mut ends = u.endpoints.clone();
    ends.sort();
    let mut want: Vec<String> = study
        .roles
        .attractors
        .iter()
        .map(|a| a.id.clone())
        .collect();
    want.sort();
    checks.push(
        Check::flag("unstable.joins_attractors", ends == want).with_detail(u.endpoints.join(" ")),
    );
    let term = u.terminal_distances.iter().copied().fold(0.0, f64::max);
    checks.push(Check::new(
        "unstable.terminal_distance",
        term,
        Relation::AtMost,
        1e-5 * w_norm,
    ));
    let off = u
        .points
        .par_iter()
        .map(|p| mesh.distance(&vec3(p)).unwrap_or(f64::INFINITY))
        .reduce(|| 0.0, f64::max);
    checks.push(Check::new(
        "unstable.on_surface",
        off,
        Relation::AtMost,
        2.0 * h,
    ));
    let mut ends = s.endpoints.clone();
    ends.sort();
    let mut want: Vec<String> = study.roles.repellers.iter().map(|a| a.id.clone()).collect();
    want.sort();
    checks.push(
        Check::flag("stable.joins_repellers", ends == want).with_detail(s.endpoints.join(" ")),
    );
    let term = s.terminal_distances.iter().copied().fold(0.0, f64::max);
    checks.push(Check::new(
        "stable.terminal_distance",
        term,
        Relation::AtMost,
        s.tol,
    ));
    let opts = StableOptions::scaled(w_norm);
    let through = distance_to_polyline(&q, &s.vectors());
    checks.push(Check::new(
        "stable.through_q",
        through,
        Relation::AtMost,
        opts.bisection_tol,
    ));
    let sep = curve_separation(&u.vectors(), &s.vectors(), &q, 10.0 * opts.bisection_tol);
    checks.push(Check::new(
        "manifolds.separation",
        sep,
        Relation::AtLeast,
        opts.bisection_tol,
    ));
    checks
}

/// Orbits on the surface for the portrait's streak layer.
fn surface_orbits(
    map: &CompetitiveMap,
    mesh: &SimplexMesh,
    count: usize,
    steps: usize,
    seed: u64,
) -> Vec<Vec<[f64; 3]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let a: f64 = rng.random_range(0.02..0.98);
            let b: f64 = rng.random_range(0.02..0.98);
            let (a, b) = if a + b > 1.0 {
                (1.0 - a, 1.0 - b)
            } else {
                (a, b)
            };
            let mut x = mesh.lift(&[1.0 - a - b, a, b]);
            let mut pts = vec![[x[0], x[1], x[2]]];
            for _ in 0..steps {
                x = map.eval3(&x);
                pts.push([x[0], x[1], x[2]]);
            }
            pts
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PortraitOutcome {
    pub svg: String,
    pub topology: Option<Topology>,
    pub components: Option<ComponentReport>,
    pub notes: Vec<String>,
}

/// Phase portrait on the carrying simplex with the given stable and unstable
/// curves.
pub fn portrait(
    cfg: &RunConfig,
    mesh: &SimplexMesh,
    curves: Option<(ManifoldCurve, ManifoldCurve)>,
    basins: bool,
) -> Result<PortraitOutcome> {
    let map = cfg.build_map()?;
    map.require_three()?;
    let (records, _) = find_all_fixed_points(&map)?;
    let mut notes = Vec::new();
    let roles = boundary_roles(&records).ok();
    let mut raster = None;
    let mut components = None;
    if basins {
        match (&roles, &curves) {
            (Some(roles), Some((_, unstable))) => {
                let w_norm = axial_corner(&records).norm();
                let (r, c) = basin_components(
                    &map,
                    mesh,
                    roles,
                    unstable,
                    cfg.numeric.raster,
                    cfg.numeric.basin_max_iter,
                    StableOptions::scaled(w_norm).basin_tol,
                );
                raster = Some(r);
                components = Some(c);
            }
            _ => notes.push(
                "basin shading needs two boundary attractors and a traced unstable curve".into(),
            ),
        }
    }
    let prov = cfg.provenance();
    let scene = PortraitScene {
        title: format!("{} phase portrait on the carrying simplex", cfg.model.kind),
        fixed_points: &records,
        stable: curves.as_ref().map(|c| &c.0),
        unstable: curves.as_ref().map(|c| &c.1),
        raster: raster.as_ref(),
        orbits: surface_orbits(&map, mesh, 12, 60, cfg.seed),
        metadata: vec![
            format!("config_hash {}", prov.config_hash),
            format!("seed {}", prov.seed),
        ],
        banner: format!("carsim {VERSION}"),
    };
    Ok(PortraitOutcome {
        svg: render_svg(&scene),
        topology: roles.as_ref().map(topology),
        components,
        notes,
    })
}

/// One parsed classification input row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRecord {
    pub row: usize,
    pub a: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ClassificationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Classifies 9-entry row-major matrices in parallel, in input order.
pub fn classify_rows(rows: Vec<Vec<f64>>) -> Vec<ClassifyRecord> {
    rows.into_par_iter()
        .enumerate()
        .map(|(row, a)| {
            let outcome = if a.len() != 9 {
                Err(Error::DimensionMismatch {
                    expected: 9,
                    got: a.len(),
                })
            } else {
                let mut m: Matrix3x3 = [[0.0; 3]; 3];
                for (k, v) in a.iter().enumerate() {
                    m[k / 3][k % 3] = *v;
                }
                classify_table1(&m)
            };
            match outcome {
                Ok(result) => ClassifyRecord {
                    row,
                    a,
                    result: Some(result),
                    error: None,
                },
                Err(e) => ClassifyRecord {
                    row,
                    a,
                    result: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MODEL: &str =
        r#"{"kind":"leslie_gower","r":[1,1,1],"A":[[1,1.2,1.2],[0.5,1,2],[0.5,2,1]]}"#;

    #[test]
    fn bare_model_and_full_config_agree() {
        let bare = RunConfig::from_json_str(MODEL).unwrap();
        let full = RunConfig::from_json_str(&format!(r#"{{"model":{MODEL}}}"#)).unwrap();
        assert_eq!(bare, full);
        assert_eq!(bare.hash(), full.hash());
    }

    #[test]
    fn hash_tracks_seed_and_numerics_but_not_outputs() {
        let base = RunConfig::from_json_str(MODEL).unwrap();
        let mut other = base.clone();
        other.outputs.json = Some("out.json".into());
        assert_eq!(base.hash(), other.hash());
        other.seed = 7;
        assert_ne!(base.hash(), other.hash());
        let mut finer = base.clone();
        finer.numeric.resolution = 128;
        assert_ne!(base.hash(), finer.hash());
    }

    #[test]
    fn invalid_numerics_name_their_field() {
        let text = format!(r#"{{"model":{MODEL},"numeric":{{"resolution":6}}}}"#);
        match RunConfig::from_json_str(&text) {
            Err(Error::InvalidParameter { field, .. }) => assert_eq!(field, "numeric.resolution"),
            other => panic!("unexpected {other:?}"),
        }
        let text = format!(r#"{{"model":{MODEL},"numeric":{{"simplex_tol":0}}}}"#);
        assert!(matches!(
            RunConfig::from_json_str(&text),
            Err(Error::InvalidParameter { .. })
        ));
        let text = format!(r#"{{"model":{MODEL},"numerics":{{}}}}"#);
        assert!(matches!(
            RunConfig::from_json_str(&text),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn classify_rows_keeps_order_and_reports_errors() {
        let rows = vec![
            vec![1.0, 1.2, 1.2, 0.5, 1.0, 2.0, 0.5, 2.0, 1.0],
            vec![1.0, 0.0, 1.2, 0.5, 1.0, 2.0, 0.5, 2.0, 1.0],
            vec![1.0; 4],
        ];
        let out = classify_rows(rows);
        assert_eq!(out.iter().map(|r| r.row).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(
            out[0].result.as_ref().unwrap().class_id.tabulated(),
            Some(19)
        );
        assert!(out[1].error.is_some());
        assert!(out[2].error.is_some());
    }
}
