#![allow(dead_code)]

use std::sync::OnceLock;

use carsim_core::analysis::{find_all_fixed_points, FixedPointRecord};
use carsim_core::classify::{classify_table1, ClassificationResult};
use carsim_core::existence::{check_existence, ricker_condition, DEFAULT_GRID, DEFAULT_PAD};
use carsim_core::pipeline::{axial_corner, build_mesh, trace_manifolds, RunConfig, SaddleStudy};
use carsim_core::simplex::SimplexMesh;
use carsim_core::{CompetitiveMap, ModelConfig, ModelKind, ParameterSet};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const CLASS19: [[f64; 3]; 3] = [[1.0, 1.2, 1.2], [0.5, 1.0, 2.0], [0.5, 2.0, 1.0]];
pub const SAMPLE_SEED: u64 = 20_240_611;
pub const SYSTEM_COUNT: usize = 20;

pub fn rows(a: &[[f64; 3]; 3]) -> Vec<Vec<f64>> {
    a.iter().map(|r| r.to_vec()).collect()
}

pub fn model(kind: ModelKind, r: [f64; 3], c: Option<[f64; 3]>, a: &[[f64; 3]; 3]) -> ModelConfig {
    ModelConfig {
        kind,
        r: r.to_vec(),
        c: c.map(|c| c.to_vec()),
        a: rows(a),
    }
}

/// The class-19 matrix under each builtin with rates satisfying the
/// existence conditions.
pub fn class19_models() -> Vec<ModelConfig> {
    vec![
        model(ModelKind::LeslieGower, [1.0; 3], None, &CLASS19),
        model(ModelKind::AtkinsonAllen, [1.0; 3], Some([0.5; 3]), &CLASS19),
        model(ModelKind::Ricker, [0.2; 3], None, &CLASS19),
    ]
}

pub fn build(m: &ModelConfig) -> CompetitiveMap {
    CompetitiveMap::builtin(
        m.kind,
        ParameterSet {
            r: m.r.clone(),
            c: m.c.clone(),
            a: m.a.clone(),
        },
    )
    .unwrap()
}

pub fn vec3(x: &[f64]) -> Vector3<f64> {
    Vector3::new(x[0], x[1], x[2])
}

fn draw(rng: &mut ChaCha8Rng, kind: ModelKind) -> ModelConfig {
    let mut a = [[1.0; 3]; 3];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j {
                rng.random_range(0.8..1.25)
            } else {
                rng.random_range(0.1..2.5)
            };
        }
    }
    match kind {
        ModelKind::AtkinsonAllen => {
            let r = [0; 3].map(|_| rng.random_range(0.3..3.0));
            let c = [0; 3].map(|_| rng.random_range(0.2..0.8));
            model(kind, r, Some(c), &a)
        }
        ModelKind::Ricker => {
            let p = ParameterSet::new(vec![1.0; 3], rows(&a));
            let rc = ricker_condition(&p);
            let r = [0, 1, 2].map(|i| {
                let s = &rc.species[i];
                rng.random_range(0.05..0.95) * s.diagonal_threshold.max(s.scaled_threshold)
            });
            model(kind, r, None, &a)
        }
        _ => {
            let r = [0; 3].map(|_| rng.random_range(0.3..3.0));
            model(kind, r, None, &a)
        }
    }
}

/// Rejection-sampled systems in the tabulated classes that pass the
/// existence checks, cycling Leslie–Gower, Atkinson–Allen and Ricker.
pub fn sample_systems(count: usize, seed: u64) -> Vec<(ModelConfig, ClassificationResult)> {
    let kinds = [
        ModelKind::LeslieGower,
        ModelKind::AtkinsonAllen,
        ModelKind::Ricker,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let kind = kinds[out.len() % 3];
        let m = draw(&mut rng, kind);
        let a = [0, 1, 2].map(|i| [m.a[i][0], m.a[i][1], m.a[i][2]]);
        let Ok(class) = classify_table1(&a) else {
            continue;
        };
        if class.class_id.tabulated().is_none() {
            continue;
        }
        if !check_existence(&build(&m), DEFAULT_GRID, DEFAULT_PAD)
            .map(|e| e.passes)
            .unwrap_or(false)
        {
            continue;
        }
        out.push((m, class));
    }
    out
}

pub struct Prepared {
    pub label: String,
    pub cfg: RunConfig,
    pub class: ClassificationResult,
    pub map: CompetitiveMap,
    pub records: Vec<FixedPointRecord>,
    pub w: Vector3<f64>,
    pub mesh: SimplexMesh,
    pub study: Result<SaddleStudy, String>,
}

impl Prepared {
    pub fn q(&self) -> &FixedPointRecord {
        self.records
            .iter()
            .find(|p| p.id == "q")
            .expect("interior fixed point")
    }
}

fn prepare(k: usize, m: ModelConfig, class: ClassificationResult) -> Prepared {
    let mut cfg = RunConfig::from_model(m);
    cfg.seed = SAMPLE_SEED + k as u64;
    let map = cfg.build_map().unwrap();
    let (records, _) = find_all_fixed_points(&map).unwrap();
    let w = axial_corner(&records);
    let mesh = build_mesh(&cfg).unwrap();
    let study = trace_manifolds(&map, &mesh, &records).map_err(|e| e.to_string());
    let label = format!(
        "#{k:02} {} class {}",
        cfg.model.kind,
        class.class_id.tabulated().unwrap_or(0)
    );
    Prepared {
        label,
        cfg,
        class,
        map,
        records,
        w,
        mesh,
        study,
    }
}

/// The twenty sampled systems with converged meshes and traced curves,
/// computed once per test binary.
pub fn systems() -> &'static [Prepared] {
    static CELL: OnceLock<Vec<Prepared>> = OnceLock::new();
    CELL.get_or_init(|| {
        sample_systems(SYSTEM_COUNT, SAMPLE_SEED)
            .into_par_iter()
            .enumerate()
            .map(|(k, (m, c))| prepare(k, m, c))
            .collect()
    })
}

/// Prints one criterion line and returns whether it passed.
pub fn report(criterion: &str, passed: bool, detail: &str) -> bool {
    println!(
        "[{}] {criterion}: {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    passed
}
