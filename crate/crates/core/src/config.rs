//! Experiment configuration files.
//!
//! A config names one task and its inputs. Unknown keys anywhere in the
//! document are rejected. The JSON schema lives in `schema/experiment.schema.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DataFunctionSpec;
use crate::error::{Error, Result};
use crate::flow::{ManifoldKind, DEFAULT_TOL};
use crate::hamiltonian::{HamiltonianSpec, NormalFormFn, PhasePoint, PLANE_TOL};
use crate::jet::PathOrder;
use crate::series::{BivariateSeries, SaddleSign};
use crate::surface::GridAxis;
use crate::verify::ExponentOptions;

pub const SCHEMA: &str = include_str!("../schema/experiment.schema.json");

/// Numerical tolerances. `--tol` on the command line overrides `flow`.
///
/// | key | default | used for |
/// |---|---|---|
/// | `flow` | 1e-10 | ODE accuracy of characteristic flows |
/// | `lagrangian` | 1e-5 | pass/fail threshold on `q_x - p_y` |
/// | `plane` | 1e-9 | `ω` vanishing on eigenplanes |
/// | `resonance` | 1e-9 | `|2(ma - nb)|` counted as zero |
/// | `obstruction` | 1e-9 | resonant obstruction counted as zero |
/// | `quadratic` | 1e-10 | quadratic part of `h` matching `a²x² + b²y²` |
/// | `newton` | 1e-11 | shooting residual for saddle surfaces |
/// | `axis_threshold` | 1e-8 | cells this close to an axis are taken on the axis |
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub flow: f64,
    pub lagrangian: f64,
    pub plane: f64,
    pub resonance: f64,
    pub obstruction: f64,
    pub quadratic: f64,
    pub newton: f64,
    pub axis_threshold: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            flow: DEFAULT_TOL,
            lagrangian: 1e-5,
            plane: PLANE_TOL,
            resonance: 1e-9,
            obstruction: 1e-9,
            quadratic: 1e-10,
            newton: 1e-11,
            axis_threshold: 1e-8,
        }
    }
}

impl Tolerances {
    fn validate(&self) -> Result<()> {
        let all = [
            ("flow", self.flow),
            ("lagrangian", self.lagrangian),
            ("plane", self.plane),
            ("resonance", self.resonance),
            ("obstruction", self.obstruction),
            ("quadratic", self.quadratic),
            ("newton", self.newton),
            ("axis_threshold", self.axis_threshold),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("tolerance '{name}' must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Prefix for artifact file names.
    pub stem: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out"), stem: "result".into() }
    }
}

/// Parameter grid: `sigma` is the slow index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub sigma: GridAxis,
    pub tau: GridAxis,
}

impl GridConfig {
    pub fn values(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.sigma.values()?, self.tau.values()?))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceChart {
    #[default]
    Uv,
    Xy,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowConstruction {
    /// Saddle surface over a `(w1, w2)` grid by shooting from both strips.
    #[default]
    Saddle,
    /// `Φ_t(γ(s))` for one strip over an `(s, t)` grid.
    Strip { branch: SaddleSign },
}

fn default_true() -> bool {
    true
}

fn zero_data() -> DataFunctionSpec {
    DataFunctionSpec::Zero
}

/// One task and its inputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Task {
    Linearize {
        hamiltonian: HamiltonianSpec,
        #[serde(default)]
        point: PhasePoint,
    },
    Classify {
        hamiltonian: HamiltonianSpec,
        #[serde(default)]
        point: PhasePoint,
        /// Rotation angle used when `a = b` and the second-order candidates
        /// form a family.
        #[serde(default)]
        theta: Option<f64>,
    },
    Series {
        /// Right-hand side `h` of `z_x² + z_y² = h`.
        h: BivariateSeries,
        a: f64,
        b: f64,
        order: usize,
        #[serde(default = "plus")]
        sign: SaddleSign,
        /// Values `[m, n, value]` for free resonant coefficients.
        #[serde(default)]
        free_values: Vec<(usize, usize, f64)>,
    },
    Resonance {
        a: f64,
        b: f64,
        order: usize,
        /// When given, obstructions are evaluated for this `h`.
        #[serde(default)]
        h: Option<BivariateSeries>,
        #[serde(default = "plus")]
        sign: SaddleSign,
    },
    ModelSaddle {
        a: f64,
        b: f64,
        phi_plus: DataFunctionSpec,
        #[serde(default = "zero_data")]
        phi_minus: DataFunctionSpec,
        grid: GridConfig,
        #[serde(default)]
        chart: SurfaceChart,
        #[serde(default = "default_true")]
        reconstruct: bool,
    },
    FlowSurface {
        hamiltonian: HamiltonianSpec,
        phi_plus: DataFunctionSpec,
        #[serde(default = "zero_data")]
        phi_minus: DataFunctionSpec,
        grid: GridConfig,
        #[serde(default)]
        construction: FlowConstruction,
        /// Random phase points, drawn with the seed, on which energy drift
        /// and the group property of the flow are checked.
        #[serde(default)]
        property_samples: usize,
        #[serde(default = "default_property_time")]
        property_time: f64,
    },
    Manifold {
        hamiltonian: HamiltonianSpec,
        #[serde(default)]
        point: PhasePoint,
        kind: ManifoldKind,
        radius: f64,
        grid: GridConfig,
        #[serde(default = "default_true")]
        reconstruct: bool,
    },
    Reconstruct {
        /// Path of a saved surface without extension (`<path>.csv`, `<path>.json`).
        surface: PathBuf,
        #[serde(default)]
        base: (f64, f64),
        #[serde(default = "sigma_first")]
        path_order: PathOrder,
    },
    VerifyNonunique {
        a: f64,
        b: f64,
        phi: DataFunctionSpec,
        /// Common base grid used for both `x` and `y`.
        grid: GridAxis,
        #[serde(default)]
        radii: Option<Vec<f64>>,
    },
    Exponents {
        a: f64,
        b: f64,
        phi_plus: DataFunctionSpec,
        #[serde(default = "zero_data")]
        phi_minus: DataFunctionSpec,
        /// Normal form `f`; the model case when absent.
        #[serde(default)]
        normal_form: Option<NormalFormFn>,
        grid: GridConfig,
        #[serde(default)]
        options: ExponentOptions,
    },
    SfsIngest {
        /// Plain PGM (`.pgm`) or CSV grid of intensities.
        input: PathBuf,
    },
}

fn plus() -> SaddleSign {
    SaddleSign::Plus
}

fn sigma_first() -> PathOrder {
    PathOrder::SigmaFirst
}

fn default_property_time() -> f64 {
    5.0
}

impl Task {
    /// Command name as used on the command line.
    pub fn command(&self) -> &'static str {
        match self {
            Task::Linearize { .. } => "linearize",
            Task::Classify { .. } => "classify",
            Task::Series { .. } => "series",
            Task::Resonance { .. } => "resonance",
            Task::ModelSaddle { .. } => "model-saddle",
            Task::FlowSurface { .. } => "flow-surface",
            Task::Manifold { .. } => "manifold",
            Task::Reconstruct { .. } => "reconstruct",
            Task::VerifyNonunique { .. } => "verify-nonunique",
            Task::Exponents { .. } => "exponents",
            Task::SfsIngest { .. } => "sfs-ingest",
        }
    }
}

pub const COMMANDS: [&str; 11] = [
    "linearize",
    "classify",
    "series",
    "resonance",
    "model-saddle",
    "flow-surface",
    "manifold",
    "reconstruct",
    "verify-nonunique",
    "exponents",
    "sfs-ingest",
];

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    /// Parses a config, rejecting unknown keys at any depth.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut unknown = Vec::new();
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| Error::Config(e.to_string()))?;
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_inputs(dir);
        }
        Ok(cfg)
    }

    /// Makes relative input paths relative to `dir`.
    pub fn resolve_inputs(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        match &mut self.task {
            Task::Reconstruct { surface, .. } => fix(surface),
            Task::SfsIngest { input } => fix(input),
            _ => {}
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tolerances.validate()?;
        if self.output.stem.is_empty() || self.output.stem.contains(['/', '\\']) {
            return Err(Error::Config(format!("output stem must be a plain file name, got '{}'", self.output.stem)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Parses a Hamiltonian description on its own (used by the FFI).
pub fn parse_hamiltonian(text: &str) -> Result<HamiltonianSpec> {
    let mut unknown = Vec::new();
    let de = &mut serde_json::Deserializer::from_str(text);
    let spec: HamiltonianSpec = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
        .map_err(|e| Error::Config(e.to_string()))?;
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
    }
    spec.validated()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MODEL: &str = r#"{
        "task": {
            "command": "model-saddle", "a": 1.0, "b": 1.4142135623730951,
            "phi_plus": {"kind": "monomial", "c": 1.0, "l": 5.0},
            "grid": {"sigma": {"kind": "uniform", "min": -0.5, "max": 0.5, "n": 11},
                     "tau": {"kind": "uniform", "min": -0.5, "max": 0.5, "n": 11}}
        },
        "seed": 7
    }"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(MODEL).unwrap();
        assert_eq!(cfg.task.command(), "model-saddle");
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.tolerances, Tolerances::default());
        assert_eq!(cfg.output.stem, "result");
    }

    #[test]
    fn unknown_keys_are_rejected_at_any_depth() {
        let top = MODEL.replace("\"seed\": 7", "\"seed\": 7, \"colour\": 1");
        assert!(matches!(ExperimentConfig::from_json(&top), Err(Error::Config(_))));
        let nested = MODEL.replace("\"l\": 5.0", "\"l\": 5.0, \"m\": 2");
        assert!(matches!(ExperimentConfig::from_json(&nested), Err(Error::Config(_))));
        let ham = r#"{"task": {"command": "linearize", "hamiltonian": {"kind": "model_quadratic", "a": 1, "b": 2, "c": 3}}}"#;
        let err = ExperimentConfig::from_json(ham).unwrap_err();
        assert!(err.to_string().contains('c'), "{err}");
    }

    #[test]
    fn bad_tolerance_is_a_config_error() {
        let bad = MODEL.replace("\"seed\": 7", "\"seed\": 7, \"tolerances\": {\"flow\": -1}");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn command_names_match_serde_tags() {
        let cfg = ExperimentConfig::from_json(MODEL).unwrap();
        let v: serde_json::Value = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(v["task"]["command"], cfg.task.command());
        assert!(COMMANDS.contains(&cfg.task.command()));
    }

    #[test]
    fn schema_is_valid_json() {
        let v: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
        assert!(v["properties"]["task"].is_object());
    }
}
