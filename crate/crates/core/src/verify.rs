//! Numerical evidence for the claims about saddle solutions: how fast two
//! solutions separate at the origin, and how fast jet components decay at
//! the axes.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{predicted_regularity, DataFunctionSpec, Order, Regularity};
use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::jet::{reconstruct_z, residual_grid, SolutionGrid};
use crate::model_case::{model_saddle_surface_xy, to_w, SaddleData};
use crate::surface::{Chart, JetSurface};

/// Differences below this multiple of machine epsilon count as zero.
pub const ZERO_FACTOR: f64 = 100.0;

/// A fitted power law exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Exponent {
    /// Least-squares slope of the log-log data.
    Estimated(f64),
    /// Too few non-zero samples for a fit; the data only bound it from below.
    AtLeast(f64),
    /// Everything sampled is numerically zero.
    Infinite,
}

impl Exponent {
    /// Value usable in comparisons; `∞` for [`Exponent::Infinite`].
    pub fn lower_bound(&self) -> f64 {
        match self {
            Exponent::Estimated(v) | Exponent::AtLeast(v) => *v,
            Exponent::Infinite => f64::INFINITY,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub max_abs_h: Option<f64>,
    pub max_grad_mismatch: Option<[f64; 2]>,
    pub loop_defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceProfile {
    pub radii: Vec<f64>,
    /// `max |z1 - z2|` over grid nodes in the closed disk of each radius.
    pub max_difference: Vec<f64>,
    /// Distance of the farthest node in each disk.
    pub effective_radii: Vec<f64>,
    /// Number of nodes in each disk.
    pub nodes: Vec<usize>,
    pub contact_order: Exponent,
    pub residuals: [ResidualSummary; 2],
}

impl DivergenceProfile {
    /// Difference on the largest radius not exceeding `r`.
    pub fn difference_at(&self, r: f64) -> Option<f64> {
        self.radii.iter().rposition(|x| *x <= r * (1.0 + 1e-12)).map(|k| self.max_difference[k])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["radius", "max_difference", "nodes"])?;
        for k in 0..self.radii.len() {
            wr.write_record([self.radii[k].to_string(), self.max_difference[k].to_string(), self.nodes[k].to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Slope of `log d` against `log r`, using only samples above the zero floor.
fn power_law(r: &[f64], d: &[f64], floors: &[f64]) -> Exponent {
    let (lx, ly): (Vec<f64>, Vec<f64>) =
        (0..r.len()).filter(|k| d[*k] > floors[*k]).map(|k| (r[k].ln(), d[k].ln())).unzip();
    if lx.len() >= 2 {
        return fit_line(&lx, &ly).map_or(Exponent::Infinite, |(s, _)| Exponent::Estimated(s));
    }
    if lx.len() == 1 {
        // A single sample above the floor: the difference at the nearest
        // smaller radius is below it, which bounds the slope from below.
        let (r1, d1) = (lx[0].exp(), ly[0].exp());
        let below = (0..r.len()).filter(|k| r[*k] < r1).max_by(|x, y| r[*x].total_cmp(&r[*y]));
        return match below {
            Some(k) => Exponent::AtLeast(((d1 / floors[k]).ln() / (r1 / r[k]).ln()).max(0.0)),
            None => Exponent::AtLeast(0.0),
        };
    }
    Exponent::Infinite
}

fn summarize(spec: Option<&HamiltonianSpec>, s: &SolutionGrid) -> ResidualSummary {
    match spec {
        Some(spec) => {
            let r = residual_grid(spec, s);
            ResidualSummary { max_abs_h: Some(r.max_abs_h), max_grad_mismatch: Some(r.max_grad_mismatch), loop_defect: s.loop_defect }
        }
        None => ResidualSummary { loop_defect: s.loop_defect, ..Default::default() },
    }
}

/// Default radii: the largest disk inside the sampled region of `s`, halved
/// seven times.
pub fn default_radii(s: &SolutionGrid) -> Vec<f64> {
    let ext = |v: &[f64], sign: f64| {
        v.iter().zip(&s.valid).filter(|(_, ok)| **ok).map(|(x, _)| sign * x).fold(0.0f64, f64::max)
    };
    let rmax = [ext(&s.x, 1.0), ext(&s.x, -1.0), ext(&s.y, 1.0), ext(&s.y, -1.0)].into_iter().fold(f64::INFINITY, f64::min);
    (0..8).rev().map(|k| rmax / 2f64.powi(k)).collect()
}

/// Disks with fewer nodes are left out of the contact order fit.
pub const MIN_DISK_NODES: usize = 5;

/// Compares two solutions sampled at the same base points.
///
/// `spec`, when given, is used to report `|H|` and gradient residuals of
/// both inputs. Contact order is the log-log slope of the disk maxima
/// against the farthest node distance, over disks holding at least
/// [`MIN_DISK_NODES`] nodes where the difference exceeds `100 ε` times the
/// solution scale.
pub fn compare_solutions(
    s1: &SolutionGrid,
    s2: &SolutionGrid,
    spec: Option<&HamiltonianSpec>,
    radii: Option<&[f64]>,
) -> Result<DivergenceProfile> {
    if s1.shape() != s2.shape() || s1.z.len() != s2.z.len() {
        return Err(Error::GridMismatch(format!("solution grids have shapes {:?} and {:?}", s1.shape(), s2.shape())));
    }
    let scale = s1.x.iter().chain(&s1.y).fold(1.0f64, |m, v| m.max(v.abs()));
    for k in 0..s1.z.len() {
        if s1.valid[k] && s2.valid[k] && ((s1.x[k] - s2.x[k]).abs() > 1e-9 * scale || (s1.y[k] - s2.y[k]).abs() > 1e-9 * scale)
        {
            return Err(Error::GridMismatch(format!(
                "node {k} sits at ({}, {}) and ({}, {}); compare solutions sampled on a common (x, y) grid",
                s1.x[k], s1.y[k], s2.x[k], s2.y[k]
            )));
        }
    }
    let radii: Vec<f64> = match radii {
        Some(r) => r.to_vec(),
        None => default_radii(s1),
    };
    if radii.len() < 5 || radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] <= 0.0 {
        return Err(Error::Validation(format!("need at least 5 increasing positive radii, got {radii:?}")));
    }
    // The two solutions may be normalized at different base nodes.
    let offset = {
        let k = s1.index(s1.base.0, s1.base.1);
        if s2.valid[k] {
            s2.z[k]
        } else {
            0.0
        }
    };
    let pairs: Vec<(f64, f64)> = (0..s1.z.len())
        .filter(|k| s1.valid[*k] && s2.valid[*k])
        .map(|k| (s1.x[k].hypot(s1.y[k]), (s1.z[k] - (s2.z[k] - offset)).abs()))
        .collect();
    let per_radius: Vec<(f64, f64, usize)> = radii
        .par_iter()
        .map(|r| {
            let inside = pairs.iter().filter(|(d, _)| *d <= r * (1.0 + 1e-12));
            inside.fold((0.0f64, 0.0f64, 0usize), |(m, far, n), (d, dz)| (m.max(*dz), far.max(*d), n + 1))
        })
        .collect();
    if let Some(k) = per_radius.iter().position(|(_, _, n)| *n == 0) {
        return Err(Error::Validation(format!("no grid nodes within radius {}", radii[k])));
    }
    let max_difference: Vec<f64> = per_radius.iter().map(|(m, _, _)| *m).collect();
    let effective_radii: Vec<f64> = per_radius.iter().map(|(_, r, _)| *r).collect();
    let zscale = s1.z.iter().zip(&s1.valid).filter(|(_, ok)| **ok).fold(1.0f64, |m, (z, _)| m.max(z.abs()));
    let floor = ZERO_FACTOR * f64::EPSILON * zscale;
    let floors: Vec<f64> =
        per_radius.iter().map(|(_, r, n)| if *n < MIN_DISK_NODES || *r == 0.0 { f64::INFINITY } else { floor }).collect();
    let fit_r: Vec<f64> = effective_radii.iter().map(|r| r.max(f64::MIN_POSITIVE)).collect();
    let all_zero = max_difference.iter().all(|d| *d <= floor);
    Ok(DivergenceProfile {
        contact_order: if all_zero { Exponent::Infinite } else { power_law(&fit_r, &max_difference, &floors) },
        radii,
        max_difference,
        effective_radii,
        nodes: per_radius.iter().map(|(_, _, n)| *n).collect(),
        residuals: [summarize(spec, s1), summarize(spec, s2)],
    })
}

/// Two model saddle solutions on a common `(x, y)` grid, one per data pair,
/// each normalized to `z = 0` at the origin.
pub fn model_solution_pair(
    first: &SaddleData,
    second: &SaddleData,
    xs: &[f64],
    ys: &[f64],
) -> Result<(SolutionGrid, SolutionGrid)> {
    let solve = |d: &SaddleData| -> Result<SolutionGrid> {
        let surf = model_saddle_surface_xy(d, xs, ys)?;
        reconstruct_z(&surf, (0.0, 0.0))
    };
    Ok((solve(first)?, solve(second)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonUniquenessWitness {
    pub profile: DivergenceProfile,
    /// Largest radius sampled and the difference there.
    pub outer_radius: f64,
    pub outer_difference: f64,
}

/// Saddle solution with data `phi` on the `uv > 0` quadrants against the
/// one with zero data, for the model Hamiltonian with rates `a`, `b`.
pub fn nonuniqueness_witness(
    a: f64,
    b: f64,
    phi: &DataFunctionSpec,
    xs: &[f64],
    ys: &[f64],
    radii: Option<&[f64]>,
) -> Result<NonUniquenessWitness> {
    let zero = SaddleData::new(a, b, DataFunctionSpec::Zero, DataFunctionSpec::Zero)?;
    let other = SaddleData::new(a, b, phi.clone(), DataFunctionSpec::Zero)?;
    let (s1, s2) = model_solution_pair(&zero, &other, xs, ys)?;
    let spec = HamiltonianSpec::model_quadratic(a, b)?;
    let profile = compare_solutions(&s1, &s2, Some(&spec), radii)?;
    let last = profile.radii.len() - 1;
    Ok(NonUniquenessWitness {
        outer_radius: profile.radii[last],
        outer_difference: profile.max_difference[last],
        profile,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub exponent: Exponent,
    /// Offsets (distance to the axis) used in the fit.
    pub offsets: Vec<f64>,
    pub magnitudes: Vec<f64>,
    /// Decades spanned by the offsets.
    pub decades: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExponentOptions {
    /// Quadrant signs `(sign u, sign v)` to sample in.
    pub quadrant: (f64, f64),
    /// Fixed transverse coordinate; defaults to half the grid extent.
    pub transverse: Option<f64>,
    /// Number of dyadic offsets requested.
    pub offsets: usize,
    /// Largest offset, as a fraction of the grid extent.
    pub start_fraction: f64,
}

impl Default for ExponentOptions {
    fn default() -> Self {
        ExponentOptions { quadrant: (1.0, 1.0), transverse: None, offsets: 12, start_fraction: 0.25 }
    }
}

/// Exponents with which `w3`, `w4` vanish at the axes of a saddle surface.
///
/// `w3_u` is the decay of `|w3|` as `u → 0` at fixed `v`, and so on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisExponents {
    pub w3_u: ExponentFit,
    pub w3_v: ExponentFit,
    pub w4_u: ExponentFit,
    pub w4_v: ExponentFit,
    /// `((bl - a)/(a + b), (al - b)/(a + b))`.
    pub predicted: (f64, f64),
    /// Model-case exponents `[w3_u, w3_v, w4_u, w4_v]`.
    pub model: [f64; 4],
    pub predicted_regularity: Option<Regularity>,
    pub low_confidence: bool,
}

/// Predicted pair and model exponents `[w3_u, w3_v, w4_u, w4_v]` for data
/// vanishing to order `l`.
pub fn model_axis_exponents(a: f64, b: f64, l: f64) -> ((f64, f64), [f64; 4]) {
    let s = a + b;
    let pair = ((b * l - a) / s, (a * l - b) / s);
    (pair, [pair.0, a * (l + 1.0) / s, b * (l + 1.0) / s, pair.1])
}

/// Measures axis decay exponents of a `(u, v)`-chart saddle surface whose
/// metadata records `a`, `b` and `l`.
pub fn axis_decay_exponents(surface: &JetSurface, opts: &ExponentOptions) -> Result<AxisExponents> {
    if surface.chart != Chart::Uv {
        return Err(Error::Precondition("axis exponents need a surface in the (u, v) chart".into()));
    }
    let (Some(a), Some(b)) = (surface.meta.a, surface.meta.b) else {
        return Err(Error::Precondition("surface metadata lacks the rates a, b".into()));
    };
    let l = match (&surface.meta.phi_plus, surface.meta.l) {
        (_, Some(l)) => Order::Finite(l),
        (Some(phi), None) => phi.vanishing_order(),
        (None, None) => return Err(Error::Precondition("surface metadata lacks the data order".into())),
    };
    let (su, sv) = opts.quadrant;
    if su.abs() != 1.0 || sv.abs() != 1.0 || opts.offsets < 2 || !(opts.start_fraction > 0.0 && opts.start_fraction <= 1.0) {
        return Err(Error::Validation(format!("bad exponent options {opts:?}")));
    }
    let extent = |xs: &[f64], sign: f64| xs.iter().map(|x| sign * x).fold(0.0f64, f64::max);
    let (eu, ev) = (extent(&surface.sigma, su), extent(&surface.tau, sv));
    if eu == 0.0 || ev == 0.0 {
        return Err(Error::Validation("grid does not reach into the requested quadrant".into()));
    }
    let nearest = |xs: &[f64], target: f64| {
        xs.iter().enumerate().min_by(|x, y| (x.1 - target).abs().total_cmp(&(y.1 - target).abs())).map(|(k, _)| k).unwrap()
    };
    let w = |i: usize, j: usize| surface.point(i, j).map(|p| to_w(p, a, b));
    // Fits |w_comp| along the axis `dir` (0 = vary u, 1 = vary v).
    let fit = |comp: usize, dir: usize| -> ExponentFit {
        let (along, across, s_al, s_ac, e_al, e_ac) = if dir == 0 {
            (&surface.sigma, &surface.tau, su, sv, eu, ev)
        } else {
            (&surface.tau, &surface.sigma, sv, su, ev, eu)
        };
        let fixed = nearest(across, s_ac * opts.transverse.map_or(0.5 * e_ac, f64::abs));
        let mut idx: Vec<usize> = (0..opts.offsets)
            .map(|k| nearest(along, s_al * e_al * opts.start_fraction / 2f64.powi(k as i32)))
            .filter(|k| along[*k] * s_al > 0.0)
            .collect();
        idx.dedup();
        let mut offsets = Vec::new();
        let mut magnitudes = Vec::new();
        let mut floors = Vec::new();
        for k in idx {
            let (i, j) = if dir == 0 { (k, fixed) } else { (fixed, k) };
            if let Some(wv) = w(i, j) {
                offsets.push(along[k].abs());
                magnitudes.push(wv[comp].abs());
                // Roundoff in w3, w4 is relative to the size of the point.
                floors.push(ZERO_FACTOR * f64::EPSILON * wv.iter().map(|c| c.abs()).sum::<f64>());
            }
        }
        let lo = offsets.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = offsets.iter().copied().fold(0.0, f64::max);
        let decades = if offsets.len() >= 2 { (hi / lo).log10() } else { 0.0 };
        ExponentFit { exponent: power_law(&offsets, &magnitudes, &floors), offsets, magnitudes, decades }
    };
    let (w3_u, w3_v, w4_u, w4_v) = (fit(2, 0), fit(2, 1), fit(3, 0), fit(3, 1));
    let low_confidence = [&w3_u, &w3_v, &w4_u, &w4_v]
        .iter()
        .any(|f| f.decades < 2.0 && !matches!(f.exponent, Exponent::Infinite));
    let (predicted, model) = match l {
        Order::Finite(l) => model_axis_exponents(a, b, l),
        Order::Infinite => ((f64::INFINITY, f64::INFINITY), [f64::INFINITY; 4]),
    };
    Ok(AxisExponents {
        w3_u,
        w3_v,
        w4_u,
        w4_v,
        predicted,
        model,
        predicted_regularity: predicted_regularity(a, b, l).ok(),
        low_confidence,
    })
}
