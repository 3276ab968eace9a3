//! Command-line front end: runs one configured task and writes its artifacts.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
//! failure. Errors are also printed to standard error as one JSON object.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, FlowConstruction, SurfaceChart, Task, SCHEMA};
use crate::data::DataFunctionSpec;
use crate::error::{Error, Result};
use crate::flow::{
    complete_strip, general_saddle_surface, integrate_flow, invariant_manifold, surface_from_strip, ManifoldOptions,
    SaddleShootOptions,
};
use crate::hamiltonian::{classify_invariant_planes, classify_second_order, linearize, HamiltonianSpec, NormalFormFn, PhasePoint};
use crate::jet::{check_lagrangian, reconstruct_z, reconstruct_z_with, residual_grid, SolutionGrid};
use crate::model_case::{model_saddle_surface, model_saddle_surface_xy, SaddleData};
use crate::series::{detect_resonances, series_residual, solve_saddle_series, BivariateSeries, SaddleSeriesOptions, SaddleSign};
use crate::sfs::{intensity_to_h, read_intensity};
use crate::surface::JetSurface;
use crate::verify::{axis_decay_exponents, nonuniqueness_witness};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hjsaddle", version, about = "Saddle-type solutions of first-order Hamilton-Jacobi equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandName,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Random seed; overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Integration tolerance; overrides `tolerances.flow`.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum CommandName {
    /// Linear part of the characteristic field at a point.
    Linearize,
    /// Lagrangian eigenplanes and admissible second-order jets.
    Classify,
    /// Formal saddle series solution of the eikonal equation.
    Series,
    /// Resonant monomials and obstructions.
    Resonance,
    /// Saddle surface of the model Hamiltonian.
    ModelSaddle,
    /// Surface swept by the characteristic flow.
    FlowSurface,
    /// Stable or unstable manifold.
    Manifold,
    /// `z` from a saved jet surface.
    Reconstruct,
    /// Two solutions with the same quadratic part.
    VerifyNonunique,
    /// Axis decay exponents of a saddle surface.
    Exponents,
    /// Intensity image to eikonal right-hand side.
    SfsIngest,
    /// Whatever task the config names.
    Run,
    /// Prints the configuration JSON schema.
    Schema,
}

impl CommandName {
    fn task_name(self) -> Option<&'static str> {
        Some(match self {
            CommandName::Linearize => "linearize",
            CommandName::Classify => "classify",
            CommandName::Series => "series",
            CommandName::Resonance => "resonance",
            CommandName::ModelSaddle => "model-saddle",
            CommandName::FlowSurface => "flow-surface",
            CommandName::Manifold => "manifold",
            CommandName::Reconstruct => "reconstruct",
            CommandName::VerifyNonunique => "verify-nonunique",
            CommandName::Exponents => "exponents",
            CommandName::SfsIngest => "sfs-ingest",
            CommandName::Run | CommandName::Schema => return None,
        })
    }
}

/// What a run produced.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub command: String,
    pub artifacts: Vec<PathBuf>,
    pub summary: Value,
    pub warnings: Vec<String>,
}

struct Artifacts<'a> {
    dir: &'a Path,
    stem: &'a str,
    written: Vec<PathBuf>,
}

impl Artifacts<'_> {
    fn path(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}_{suffix}", self.stem))
    }

    fn json<T: Serialize>(&mut self, suffix: &str, value: &T) -> Result<()> {
        let p = self.path(&format!("{suffix}.json"));
        std::fs::write(&p, serde_json::to_string_pretty(value)? + "\n")?;
        self.written.push(p);
        Ok(())
    }

    fn csv(&mut self, suffix: &str, write: impl FnOnce(BufWriter<File>) -> Result<()>) -> Result<()> {
        let p = self.path(&format!("{suffix}.csv"));
        write(BufWriter::new(File::create(&p)?))?;
        self.written.push(p);
        Ok(())
    }

    fn surface(&mut self, suffix: &str, s: &JetSurface) -> Result<()> {
        let stem = format!("{}_{suffix}", self.stem);
        s.save(self.dir, &stem)?;
        self.written.push(self.dir.join(format!("{stem}.csv")));
        self.written.push(self.dir.join(format!("{stem}.json")));
        Ok(())
    }
}

/// Runs a validated config, writing artifacts into `out_dir`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir)?;
    let tol = &cfg.tolerances;
    let mut art = Artifacts { dir: out_dir, stem: &cfg.output.stem, written: Vec::new() };
    let mut warnings = Vec::new();
    let summary = match &cfg.task {
        Task::Linearize { hamiltonian, point } => {
            let lin = linearize(hamiltonian, point)?;
            art.json("linearization", &lin)?;
            json!({
                "spectrum": lin.spectrum,
                "hyperbolic": lin.hyperbolic,
                "eigen_discrepancy": lin.eigen_discrepancy,
                "rates": lin.rates(),
            })
        }
        Task::Classify { hamiltonian, point, theta } => {
            let lin = linearize(hamiltonian, point)?;
            let planes = classify_invariant_planes(&lin, tol.plane)?;
            let (a, b) = lin.rates().ok_or_else(|| Error::Spectrum("second-order jets need real rates a, b".into()))?;
            let jets = classify_second_order(a, b, *theta)?;
            art.json("classification", &json!({ "planes": planes, "second_order": jets }))?;
            json!({ "rates": [a, b], "planes": planes, "second_order": jets })
        }
        Task::Series { h, a, b, order, sign, free_values } => {
            let h = extend_series(h, *order);
            let opts = SaddleSeriesOptions {
                resonance_tol: tol.resonance,
                obstruction_tol: tol.obstruction,
                quadratic_tol: tol.quadratic,
                free_values: free_values.iter().map(|(m, n, v)| ((*m, *n), *v)).collect(),
            };
            let (z, report) = solve_saddle_series(&h, *a, *b, *sign, *order, &opts)?;
            let residual = series_residual(&z, &h, *order).max_abs_coeff();
            art.json("series", &z)?;
            art.csv("series", |w| z.write_csv(w))?;
            art.json("resonance", &report)?;
            if report.non_existence {
                warnings.push("a resonant obstruction is non-zero: no formal saddle solution exists".into());
            }
            json!({ "order": order, "residual": residual, "non_existence": report.non_existence, "resonances": report.entries.len() })
        }
        Task::Resonance { a, b, order, h, sign } => {
            let pairs = detect_resonances(*a, *b, *order, tol.resonance);
            let report = match h {
                Some(h) => {
                    let opts = SaddleSeriesOptions {
                        resonance_tol: tol.resonance,
                        obstruction_tol: tol.obstruction,
                        quadratic_tol: tol.quadratic,
                        ..Default::default()
                    };
                    Some(solve_saddle_series(&extend_series(h, *order), *a, *b, *sign, *order, &opts)?.1)
                }
                None => None,
            };
            let out = json!({ "resonances": pairs, "report": report });
            art.json("resonance", &out)?;
            out
        }
        Task::ModelSaddle { a, b, phi_plus, phi_minus, grid, chart, reconstruct } => {
            let data = SaddleData::new(*a, *b, phi_plus.clone(), phi_minus.clone())?;
            let (sig, tau) = grid.values()?;
            let mut surf = match chart {
                SurfaceChart::Uv => model_saddle_surface(&data, &sig, &tau)?,
                SurfaceChart::Xy => model_saddle_surface_xy(&data, &sig, &tau)?,
            };
            surf.record_residual(&HamiltonianSpec::model_quadratic(*a, *b)?);
            surface_outputs(&mut art, &mut warnings, &surf, *reconstruct, (0.0, 0.0), tol.lagrangian)?
        }
        Task::FlowSurface { hamiltonian, phi_plus, phi_minus, grid, construction, property_samples, property_time } => {
            let (sig, tau) = grid.values()?;
            let surf = match construction {
                FlowConstruction::Saddle => {
                    let opts = SaddleShootOptions {
                        tol: tol.flow,
                        newton_tol: tol.newton,
                        axis_threshold: tol.axis_threshold,
                        ..Default::default()
                    };
                    general_saddle_surface(hamiltonian, phi_plus, phi_minus, &sig, &tau, &opts)?
                }
                FlowConstruction::Strip { branch } => {
                    let phi = branch_data(phi_plus, phi_minus, *branch);
                    let range = (sig[0], sig[sig.len() - 1]);
                    let strip = complete_strip(hamiltonian, phi, *branch, range)?;
                    surface_from_strip(hamiltonian, &strip, &sig, &tau, tol.flow)?
                }
            };
            let mut out = surface_outputs(&mut art, &mut warnings, &surf, false, (0.0, 0.0), tol.lagrangian)?;
            if *property_samples > 0 {
                let props = flow_properties(hamiltonian, *property_samples, *property_time, tol.flow, cfg.seed)?;
                art.json("flow_properties", &props)?;
                out["flow_properties"] = props;
            }
            out
        }
        Task::Manifold { hamiltonian, point, kind, radius, grid, reconstruct } => {
            let (sig, tau) = grid.values()?;
            let opts = ManifoldOptions { tol: tol.flow, ..Default::default() };
            let res = invariant_manifold(hamiltonian, point, *kind, *radius, &sig, &tau, &opts)?;
            art.json("diagnostics", &res.diagnostics)?;
            let mut out = surface_outputs(&mut art, &mut warnings, &res.surface, *reconstruct, (point.x, point.y), tol.lagrangian)?;
            out["diagnostics"] = serde_json::to_value(&res.diagnostics)?;
            out
        }
        Task::Reconstruct { surface, base, path_order } => {
            let surf = load_surface(surface)?;
            let sol = reconstruct_z_with(&surf, *base, *path_order)?;
            warnings.extend(sol.warnings.iter().cloned());
            art.csv("solution", |w| sol.write_csv(w))?;
            let residual = stored_hamiltonian(&surf).map(|spec| residual_grid(&spec, &sol));
            art.json("reconstruction", &json!({ "loop_defect": sol.loop_defect, "residual": residual }))?;
            json!({ "loop_defect": sol.loop_defect, "residual": residual, "nodes": sol.valid.iter().filter(|v| **v).count() })
        }
        Task::VerifyNonunique { a, b, phi, grid, radii } => {
            let xs = grid.values()?;
            let w = nonuniqueness_witness(*a, *b, phi, &xs, &xs, radii.as_deref())?;
            art.json("profile", &w)?;
            art.csv("profile", |f| w.profile.write_csv(f))?;
            serde_json::to_value(&w)?
        }
        Task::Exponents { a, b, phi_plus, phi_minus, normal_form, grid, options } => {
            let (sig, tau) = grid.values()?;
            let surf = match normal_form {
                None | Some(NormalFormFn::Linear) => {
                    model_saddle_surface(&SaddleData::new(*a, *b, phi_plus.clone(), phi_minus.clone())?, &sig, &tau)?
                }
                Some(f) => {
                    let spec = HamiltonianSpec::normal_form(f.clone(), *a, *b)?;
                    let opts = SaddleShootOptions {
                        tol: tol.flow,
                        newton_tol: tol.newton,
                        axis_threshold: tol.axis_threshold,
                        ..Default::default()
                    };
                    general_saddle_surface(&spec, phi_plus, phi_minus, &sig, &tau, &opts)?
                }
            };
            let e = axis_decay_exponents(&surf, options)?;
            if e.low_confidence {
                warnings.push("exponent fits span fewer than two decades".into());
            }
            art.json("exponents", &e)?;
            serde_json::to_value(&e)?
        }
        Task::SfsIngest { input } => {
            let intensity = read_intensity(input)?;
            let out = intensity_to_h(&intensity)?;
            warnings.extend(out.warnings.iter().cloned());
            art.csv("h", |w| out.h.write_csv(w))?;
            let meta = json!({ "rows": out.h.rows, "cols": out.h.cols, "clipped": out.clipped, "warnings": out.warnings });
            art.json("h", &meta)?;
            meta
        }
    };
    Ok(RunSummary { command: cfg.task.command().into(), artifacts: art.written, summary, warnings })
}

fn extend_series(h: &BivariateSeries, order: usize) -> BivariateSeries {
    if h.order() >= order {
        return h.clone();
    }
    let mut out = BivariateSeries::zeros(order);
    for (m, n, c) in h.terms() {
        out.set(m, n, c);
    }
    out
}

fn load_surface(path: &Path) -> Result<JetSurface> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let stem = path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("bad surface path {}", path.display())))?;
    JetSurface::load(dir, stem)
}

fn stored_hamiltonian(s: &JetSurface) -> Option<HamiltonianSpec> {
    s.meta.hamiltonian.clone().and_then(|v| serde_json::from_value(v).ok())
}

fn surface_outputs(
    art: &mut Artifacts,
    warnings: &mut Vec<String>,
    surf: &JetSurface,
    reconstruct: bool,
    base: (f64, f64),
    lagrangian_tol: f64,
) -> Result<Value> {
    warnings.extend(surf.meta.warnings.iter().cloned());
    art.surface("surface", surf)?;
    let defect = check_lagrangian(surf, lagrangian_tol);
    art.json("defect", &defect)?;
    let mut out = json!({
        "shape": surf.shape(),
        "valid": surf.valid_count(),
        "max_abs_h": surf.meta.residual_bound,
        "defect": defect,
    });
    if reconstruct {
        let sol: SolutionGrid = reconstruct_z(surf, base)?;
        warnings.extend(sol.warnings.iter().cloned());
        art.csv("solution", |w| sol.write_csv(w))?;
        out["loop_defect"] = json!(sol.loop_defect);
        if let Some(spec) = stored_hamiltonian(surf) {
            out["residual"] = serde_json::to_value(residual_grid(&spec, &sol))?;
        }
    }
    Ok(out)
}

/// Energy drift and composition defect `|Φ_s(Φ_t(P)) - Φ_{s+t}(P)|` over
/// random points of the cube `[-1/2, 1/2]^4` and times with `|s|, |t|, |s + t| ≤ T`.
pub fn flow_properties(spec: &HamiltonianSpec, samples: usize, horizon: f64, tol: f64, seed: u64) -> Result<Value> {
    if !(horizon > 0.0) {
        return Err(Error::Validation(format!("property_time must be positive, got {horizon}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(PhasePoint, f64, f64)> = (0..samples)
        .map(|_| {
            let p = PhasePoint::from_array(std::array::from_fn(|_| rng.random_range(-0.5..=0.5)));
            let t = rng.random_range(-horizon..=horizon);
            let s = rng.random_range((-horizon - t).max(-horizon)..=(horizon - t).min(horizon));
            (p, t, s)
        })
        .collect();
    let results: Vec<Option<(f64, f64)>> = draws
        .par_iter()
        .map(|(p, t, s)| {
            let a = integrate_flow(spec, p, *t, tol).ok()?;
            let b = integrate_flow(spec, &a.point, *s, tol).ok()?;
            let c = integrate_flow(spec, p, t + s, tol).ok()?;
            Some((a.h_drift.max(c.h_drift), b.point.distance(&c.point)))
        })
        .collect();
    let ok: Vec<(f64, f64)> = results.iter().flatten().copied().collect();
    Ok(json!({
        "samples": samples,
        "failed": samples - ok.len(),
        "max_energy_drift": ok.iter().map(|r| r.0).fold(0.0, f64::max),
        "max_composition_defect": ok.iter().map(|r| r.1).fold(0.0, f64::max),
        "seed": seed,
    }))
}

/// JSON error record printed on standard error.
pub fn error_json(e: &Error) -> Value {
    let code = if e.is_validation() { EXIT_VALIDATION } else { EXIT_NUMERICAL };
    json!({ "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": code } })
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(name) = cli.command.task_name() {
        if name != cfg.task.command() {
            return Err(Error::Config(format!("config describes '{}' but '{name}' was requested", cfg.task.command())));
        }
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(tol) = cli.tol {
        cfg.tolerances.flow = tol;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let rec = json!({ "error": { "kind": "usage", "message": e.to_string(), "exit_code": EXIT_VALIDATION } });
            let _ = writeln!(stderr, "{rec}");
            return EXIT_VALIDATION;
        }
    };
    if cli.command == CommandName::Schema {
        let _ = write!(stdout, "{SCHEMA}");
        return EXIT_OK;
    }
    let result = load_config(&cli).and_then(|cfg| run(&cfg, &cfg.output.dir));
    match result {
        Ok(summary) => {
            for w in &summary.warnings {
                let _ = writeln!(stderr, "{}", json!({ "warning": w }));
            }
            let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(stderr, "{}", error_json(&e));
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_NUMERICAL
            }
        }
    }
}

fn branch_data<'a>(plus: &'a DataFunctionSpec, minus: &'a DataFunctionSpec, branch: SaddleSign) -> &'a DataFunctionSpec {
    match branch {
        SaddleSign::Plus => plus,
        SaddleSign::Minus => minus,
    }
}
