//! Sampled two-parameter surfaces in phase space and their file formats.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DataFunctionSpec;
use crate::error::{Error, Result};
use crate::hamiltonian::{HamiltonianKind, HamiltonianSpec, PhasePoint};

/// One axis of a rectangular parameter grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridAxis {
    /// `n` equally spaced values from `min` to `max`.
    Uniform { min: f64, max: f64, n: usize },
    /// Explicit strictly increasing values.
    Values { values: Vec<f64> },
    /// `0`, and `±smallest * r^k` up to `±max`, with `n` values per side
    /// spaced geometrically. Resolves behaviour at the axes.
    Geometric { max: f64, smallest: f64, n: usize },
    /// `0`, `±smallest`, then steps growing by `ratio` until they reach
    /// `max_step`, continuing uniformly up to `±max`.
    Graded { max: f64, smallest: f64, ratio: f64, max_step: f64 },
}

impl GridAxis {
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            GridAxis::Uniform { min, max, n } => {
                if *n < 2 || !(max > min) {
                    return Err(Error::Validation(format!("uniform axis needs n >= 2 and max > min, got {self:?}")));
                }
                let h = (max - min) / (*n as f64 - 1.0);
                (0..*n)
                    .map(|i| if i + 1 == *n { *max } else { min + h * i as f64 })
                    .map(|x| if x.abs() < 1e-14 * h { 0.0 } else { x })
                    .collect()
            }
            GridAxis::Values { values } => values.clone(),
            GridAxis::Geometric { max, smallest, n } => {
                if *n < 2 || !(*smallest > 0.0) || !(max > smallest) {
                    return Err(Error::Validation(format!(
                        "geometric axis needs n >= 2 and max > smallest > 0, got {self:?}"
                    )));
                }
                let r = (max / smallest).powf(1.0 / (*n as f64 - 1.0));
                let side: Vec<f64> = (0..*n).map(|k| if k + 1 == *n { *max } else { smallest * r.powi(k as i32) }).collect();
                side.iter().rev().map(|x| -x).chain(std::iter::once(0.0)).chain(side.iter().copied()).collect()
            }
            GridAxis::Graded { max, smallest, ratio, max_step } => {
                if !(*smallest > 0.0 && max > smallest && *ratio > 1.0 && *max_step > 0.0) {
                    return Err(Error::Validation(format!(
                        "graded axis needs max > smallest > 0, ratio > 1 and max_step > 0, got {self:?}"
                    )));
                }
                let mut side = vec![*smallest];
                let mut x = *smallest;
                while x < *max {
                    let step = ((ratio - 1.0) * x).min(*max_step);
                    x = if x + step * 1.5 >= *max { *max } else { x + step };
                    side.push(x);
                    if side.len() > 1_000_000 {
                        return Err(Error::Validation("graded axis has too many points".into()));
                    }
                }
                side.iter().rev().map(|x| -x).chain(std::iter::once(0.0)).chain(side.iter().copied()).collect()
            }
        };
        check_axis(&v)?;
        Ok(v)
    }
}

fn check_axis(v: &[f64]) -> Result<()> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) || v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation("grid axis must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// What the two surface parameters mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chart {
    /// `(w1, w2)` coordinates of the saddle construction.
    Uv,
    /// Base coordinates `(x, y)`.
    Xy,
    /// Strip parameter and flow time.
    St,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    ModelSaddle,
    GeneralSaddle,
    StripFlow,
    UnstableManifold,
    StableManifold,
    Imported,
    Analytic,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_plus: Option<DataFunctionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_minus: Option<DataFunctionSpec>,
    /// Vanishing order of the data, when finite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    /// Largest `|H|` over valid points.
    #[serde(default)]
    pub residual_bound: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<serde_json::Value>,
}

/// A surface sampled on a rectangular `(σ, τ)` grid, stored row-major with
/// `σ` as the slow index.
#[derive(Clone, Debug, PartialEq)]
pub struct JetSurface {
    pub sigma: Vec<f64>,
    pub tau: Vec<f64>,
    pub points: Vec<PhasePoint>,
    pub valid: Vec<bool>,
    pub chart: Chart,
    pub construction: Construction,
    pub meta: SurfaceMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    chart: Chart,
    construction: Construction,
    n_sigma: usize,
    n_tau: usize,
    invalid_cells: usize,
    meta: SurfaceMeta,
}

impl JetSurface {
    pub fn new(
        sigma: Vec<f64>,
        tau: Vec<f64>,
        points: Vec<PhasePoint>,
        valid: Vec<bool>,
        chart: Chart,
        construction: Construction,
    ) -> Result<Self> {
        check_axis(&sigma)?;
        check_axis(&tau)?;
        let n = sigma.len() * tau.len();
        if points.len() != n || valid.len() != n {
            return Err(Error::GridMismatch(format!(
                "{} x {} grid needs {n} points, got {} points and {} flags",
                sigma.len(),
                tau.len(),
                points.len(),
                valid.len()
            )));
        }
        Ok(JetSurface { sigma, tau, points, valid, chart, construction, meta: SurfaceMeta::default() })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.sigma.len(), self.tau.len())
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.tau.len() + j
    }

    pub fn point(&self, i: usize, j: usize) -> Option<&PhasePoint> {
        let k = self.index(i, j);
        self.valid[k].then(|| &self.points[k])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Iterates `(σ, τ, point)` over valid cells.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, &PhasePoint)> + '_ {
        self.sigma.iter().enumerate().flat_map(move |(i, s)| {
            self.tau.iter().enumerate().filter_map(move |(j, t)| {
                let k = i * self.tau.len() + j;
                self.valid[k].then(|| (*s, *t, &self.points[k]))
            })
        })
    }

    pub fn max_abs_h(&self, spec: &HamiltonianSpec) -> f64 {
        self.cells().map(|(_, _, p)| spec.value_raw(p).abs()).fold(0.0, f64::max)
    }

    /// Sets `meta.residual_bound` and the Hamiltonian description.
    pub fn record_residual(&mut self, spec: &HamiltonianSpec) {
        self.meta.residual_bound = self.max_abs_h(spec);
        if !matches!(spec.kind(), HamiltonianKind::Generic(_)) {
            self.meta.hamiltonian = serde_json::to_value(spec).ok();
        }
    }

    /// Writes rows `sigma,tau,x,y,p,q`; invalid cells are written as NaN.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["sigma", "tau", "x", "y", "p", "q"])?;
        for (i, s) in self.sigma.iter().enumerate() {
            for (j, t) in self.tau.iter().enumerate() {
                let k = self.index(i, j);
                let pt = if self.valid[k] { self.points[k].to_array() } else { [f64::NAN; 4] };
                let row: Vec<String> = [*s, *t].iter().chain(pt.iter()).map(|v| v.to_string()).collect();
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn sidecar_json(&self) -> Result<String> {
        let side = Sidecar {
            chart: self.chart,
            construction: self.construction,
            n_sigma: self.sigma.len(),
            n_tau: self.tau.len(),
            invalid_cells: self.valid.len() - self.valid_count(),
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&side)?)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(BufWriter::new(File::create(dir.join(format!("{stem}.csv")))?))?;
        std::fs::write(dir.join(format!("{stem}.json")), self.sidecar_json()?)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let f = File::open(dir.join(format!("{stem}.csv")))?;
        let mut s = Self::read_csv(f, side.n_sigma, side.n_tau)?;
        s.chart = side.chart;
        s.construction = side.construction;
        s.meta = side.meta;
        Ok(s)
    }

    /// Reads the CSV format written by [`JetSurface::write_csv`].
    pub fn read_csv<R: std::io::Read>(r: R, n_sigma: usize, n_tau: usize) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["sigma", "tau", "x", "y", "p", "q"] {
            return Err(Error::Validation(format!("unexpected surface CSV header {headers:?}")));
        }
        let mut rows = Vec::with_capacity(n_sigma * n_tau);
        for rec in rd.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Validation(format!("bad number {f:?}: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != 6 {
                return Err(Error::Validation(format!("surface CSV row has {} fields", vals.len())));
            }
            rows.push(vals);
        }
        if rows.len() != n_sigma * n_tau || n_sigma == 0 || n_tau == 0 {
            return Err(Error::GridMismatch(format!("expected {n_sigma} x {n_tau} rows, got {}", rows.len())));
        }
        let sigma: Vec<f64> = (0..n_sigma).map(|i| rows[i * n_tau][0]).collect();
        let tau: Vec<f64> = (0..n_tau).map(|j| rows[j][1]).collect();
        for (k, r) in rows.iter().enumerate() {
            if r[0] != sigma[k / n_tau] || r[1] != tau[k % n_tau] {
                return Err(Error::GridMismatch(format!("row {k} is not on the rectangular grid")));
            }
        }
        let valid: Vec<bool> = rows.iter().map(|r| r[2..].iter().all(|v| v.is_finite())).collect();
        let points = rows
            .iter()
            .zip(&valid)
            .map(|(r, ok)| if *ok { PhasePoint::new(r[2], r[3], r[4], r[5]) } else { PhasePoint::ORIGIN })
            .collect();
        JetSurface::new(sigma, tau, points, valid, Chart::Xy, Construction::Imported)
    }

    /// Largest coordinate difference between valid cells of two surfaces on the same grid.
    pub fn max_point_difference(&self, other: &JetSurface) -> Result<f64> {
        if self.sigma != other.sigma || self.tau != other.tau {
            return Err(Error::GridMismatch("surfaces are sampled on different grids".into()));
        }
        let mut worst: f64 = 0.0;
        for k in 0..self.points.len() {
            if self.valid[k] && other.valid[k] {
                let (a, b) = (self.points[k].to_array(), other.points[k].to_array());
                for i in 0..4 {
                    worst = worst.max((a[i] - b[i]).abs());
                }
            }
        }
        Ok(worst)
    }
}

/// The jet `(x, y, z_x, z_y)` of a known function sampled on an `(x, y)` grid.
pub fn analytic_jet(
    xs: Vec<f64>,
    ys: Vec<f64>,
    grad: impl Fn(f64, f64) -> (f64, f64),
) -> Result<JetSurface> {
    let mut points = Vec::with_capacity(xs.len() * ys.len());
    for x in &xs {
        for y in &ys {
            let (p, q) = grad(*x, *y);
            points.push(PhasePoint::new(*x, *y, p, q));
        }
    }
    let n = points.len();
    JetSurface::new(xs, ys, points, vec![true; n], Chart::Xy, Construction::Analytic)
}
