//! `carsim`: carrying simplices, fixed points, invariant manifolds and
//! phase portraits of competitive Kolmogorov maps.
//!
//! Exit codes: 0 success, 1 analysis failure, 2 config error, 3 missing
//! artifact.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use carsim_core::classify::{permutation_label, ClassId};
use carsim_core::manifolds::ManifoldCurve;
use carsim_core::pipeline::{
    self, to_json, ClassifyRecord, CurvesDocument, MeshDocument, Provenance, RunConfig,
};
use carsim_core::simplex::SimplexMesh;
use carsim_core::Error;
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "carsim",
    version,
    about = "Carrying simplices and invariant manifolds of competitive maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (full config or bare model JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Exit nonzero when any classification row fails.
    #[arg(long, global = true)]
    strict: bool,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured mesh resolution.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Portraits without basin shading.
    #[arg(long, global = true)]
    no_basins: bool,
    /// JSON instead of CSV for classification output.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fixed points, spectra, (C1), indices and existence checks.
    Analyze,
    /// Classify 3x3 interaction matrices read as 9-column CSV rows.
    Classify {
        /// Input CSV (`-` for standard input).
        input: PathBuf,
    },
    /// Compute the carrying simplex mesh.
    Simplex,
    /// Render the phase portrait on the carrying simplex as SVG.
    Portrait,
    /// Run every invariant check and diagnostic; exit 0 iff all pass.
    Verify,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn analysis(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn missing(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidParameter { .. } => Failure::config(e.to_string()),
            _ => Failure::analysis(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("carsim: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Analyze => analyze(cli),
        Command::Classify { input } => classify(cli, input),
        Command::Simplex => simplex(cli),
        Command::Portrait => portrait(cli),
        Command::Verify => verify(cli),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::config("--config <path> is required"))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_json_str(&text)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.resolution {
        cfg.numeric.resolution = n;
    }
    cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
    Ok(cfg)
}

fn emit(target: Option<&Path>, text: &str) -> Result<(), Failure> {
    match target {
        Some(path) => {
            fs::write(path, text).map_err(|e| Failure::analysis(format!("{}: {e}", path.display())))
        }
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::analysis(e.to_string())),
    }
}

fn analyze(cli: &Cli) -> Result<u8, Failure> {
    let cfg = load_config(cli)?;
    let report = pipeline::analyze(&cfg)?;
    emit(
        cli.out.as_deref().or(cfg.outputs.json.as_deref()),
        &to_json(&report),
    )?;
    Ok(0)
}

fn read_input(input: &Path) -> Result<Vec<u8>, Failure> {
    if input == Path::new("-") {
        let mut buf = Vec::new();
        io::stdin()
            .read_to_end(&mut buf)
            .map_err(|e| Failure::analysis(e.to_string()))?;
        return Ok(buf);
    }
    fs::read(input).map_err(|e| Failure::missing(format!("{}: {e}", input.display())))
}

/// Rows of numbers; a first row that does not parse is taken as a header.
fn parse_rows(bytes: &[u8]) -> Result<Vec<Result<Vec<f64>, String>>, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Failure::config(format!("input CSV: {e}")))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Result<Vec<f64>, String> = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| format!("not a number: `{f}`")))
            .collect();
        if k == 0 && parsed.is_err() && record.iter().all(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        rows.push(parsed);
    }
    Ok(rows)
}

fn classify(cli: &Cli, input: &Path) -> Result<u8, Failure> {
    let bytes = read_input(input)?;
    let seed = cli.seed.unwrap_or(0);
    let rows = parse_rows(&bytes)?;
    let mut parse_errors = Vec::new();
    let mut numeric = Vec::new();
    for (k, r) in rows.into_iter().enumerate() {
        match r {
            Ok(v) => numeric.push(v),
            Err(e) => {
                parse_errors.push((k, e));
                numeric.push(Vec::new());
            }
        }
    }
    let mut records = pipeline::classify_rows(numeric);
    for (k, e) in parse_errors {
        records[k].error = Some(e);
    }
    let failed = records.iter().any(|r| r.error.is_some());
    let provenance = Provenance::for_content(&bytes, seed);
    let text = if cli.json {
        to_json(&json!({ "provenance": provenance, "rows": records }))
    } else {
        classify_csv(&records, &provenance)?
    };
    emit(cli.out.as_deref(), &text)?;
    Ok(if failed && cli.strict { 1 } else { 0 })
}

fn classify_csv(records: &[ClassifyRecord], provenance: &Provenance) -> Result<String, Failure> {
    if records.is_empty() {
        return Ok(String::new());
    }
    let mut out = format!(
        "# {} {} config_hash {} seed {}\n",
        provenance.tool, provenance.version, provenance.config_hash, provenance.seed
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=3)
        .flat_map(|i| (1..=3).map(move |j| format!("a{i}{j}")))
        .collect();
    header.extend(["class_id", "permutation", "margins", "error"].map(String::from));
    let io_err = |e: csv::Error| Failure::analysis(e.to_string());
    w.write_record(&header).map_err(io_err)?;
    for r in records {
        let mut row: Vec<String> = (0..9)
            .map(|k| r.a.get(k).map(|v| v.to_string()).unwrap_or_default())
            .collect();
        match &r.result {
            Some(res) => {
                row.push(match res.class_id {
                    ClassId::Class(c) => c.to_string(),
                    ClassId::OutOfTabulatedRange => "out_of_range".into(),
                });
                row.push(permutation_label(&res.permutation));
                row.push(
                    res.margins
                        .iter()
                        .map(|m| format!("{}={}", m.label.replace(' ', ""), m.value))
                        .collect::<Vec<_>>()
                        .join(";"),
                );
                row.push(String::new());
            }
            None => {
                row.extend([String::new(), String::new(), String::new()]);
                row.push(r.error.clone().unwrap_or_default());
            }
        }
        w.write_record(&row).map_err(io_err)?;
    }
    let body = w
        .into_inner()
        .map_err(|e| Failure::analysis(e.to_string()))?;
    out.push_str(&String::from_utf8_lossy(&body));
    Ok(out)
}

fn simplex(cli: &Cli) -> Result<u8, Failure> {
    let cfg = load_config(cli)?;
    let mesh = pipeline::build_mesh(&cfg)?;
    let history = &mesh.history;
    let tail = history.len().saturating_sub(10);
    for (k, r) in history.iter().enumerate().skip(tail) {
        eprintln!("sweep {:>5}  residual {r:.3e}", k + 1);
    }
    eprintln!(
        "{} after {} sweeps, residual {:.3e}, {} flagged direction(s)",
        if mesh.converged {
            "converged"
        } else {
            "NOT converged"
        },
        mesh.iterations,
        mesh.residual,
        mesh.flagged.len()
    );
    let converged = mesh.converged;
    let doc = MeshDocument {
        provenance: cfg.provenance(),
        mesh,
    };
    emit(
        cli.out.as_deref().or(cfg.outputs.mesh.as_deref()),
        &to_json(&doc),
    )?;
    Ok(if converged { 0 } else { 1 })
}

fn load_mesh(cfg: &RunConfig) -> Result<SimplexMesh, Failure> {
    match &cfg.outputs.mesh {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::missing(format!("mesh {}: {e}", path.display())))?;
            SimplexMesh::from_json_str(&text)
                .map_err(|e| Failure::config(format!("mesh {}: {e}", path.display())))
        }
        None => {
            let mesh = pipeline::build_mesh(cfg)?;
            if !mesh.converged {
                eprintln!(
                    "warning: mesh residual {:.3e} above tolerance",
                    mesh.residual
                );
            }
            Ok(mesh)
        }
    }
}

fn load_curves(cfg: &RunConfig) -> Result<Option<(ManifoldCurve, ManifoldCurve)>, Failure> {
    let Some(path) = &cfg.outputs.curves else {
        return Ok(None);
    };
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::missing(format!("curves {}: {e}", path.display())))?;
    let doc: CurvesDocument = serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("curves {}: {e}", path.display())))?;
    Ok(Some((doc.stable, doc.unstable)))
}

fn portrait(cli: &Cli) -> Result<u8, Failure> {
    let cfg = load_config(cli)?;
    let mesh = load_mesh(&cfg)?;
    let curves = match load_curves(&cfg)? {
        Some(c) => Some(c),
        None => {
            let map = cfg.build_map()?;
            let (records, _) = carsim_core::analysis::find_all_fixed_points(&map)?;
            match pipeline::trace_manifolds(&map, &mesh, &records) {
                Ok(study) => {
                    if let Some(path) = &cfg.outputs.curves {
                        let doc = CurvesDocument {
                            provenance: cfg.provenance(),
                            stable: study.stable.curve.clone(),
                            unstable: study.unstable.clone(),
                        };
                        fs::write(path, to_json(&doc))
                            .map_err(|e| Failure::analysis(format!("{}: {e}", path.display())))?;
                    }
                    Some((study.stable.curve, study.unstable))
                }
                Err(e) => {
                    eprintln!("note: curves not traced: {e}");
                    None
                }
            }
        }
    };
    let outcome = pipeline::portrait(&cfg, &mesh, curves, !cli.no_basins)?;
    for note in &outcome.notes {
        eprintln!("note: {note}");
    }
    if let Some(t) = outcome.topology {
        eprintln!("topology: {t:?}");
    }
    if let Some(c) = &outcome.components {
        eprintln!(
            "basin components: {} ({} sliver(s) along the boundary)",
            c.count,
            c.slivers.len()
        );
    }
    emit(
        cli.out.as_deref().or(cfg.outputs.svg.as_deref()),
        &outcome.svg,
    )?;
    Ok(0)
}

fn verify(cli: &Cli) -> Result<u8, Failure> {
    let cfg = load_config(cli)?;
    let report = pipeline::verify(&cfg)?;
    for c in &report.checks {
        eprintln!(
            "{} {:<34} {:.3e}",
            if c.passes { "PASS" } else { "FAIL" },
            c.name,
            c.measured
        );
    }
    emit(
        cli.out.as_deref().or(cfg.outputs.json.as_deref()),
        &to_json(&report),
    )?;
    Ok(if report.passes { 0 } else { 1 })
}
