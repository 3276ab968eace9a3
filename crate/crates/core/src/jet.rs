//! From a sampled jet surface to a function `z(x, y)`.
//!
//! Derivatives are taken in the parameter chart `(σ, τ)` of the surface with
//! five-point formulas on the (possibly non-uniform) grid, shifted near edges
//! and axes. `q_x - p_y` in base coordinates is
//! `(p_σ x_τ - p_τ x_σ + q_σ y_τ - q_τ y_σ) / (x_σ y_τ - x_τ y_σ)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{HamiltonianSpec, PhasePoint};
use crate::surface::{Chart, JetSurface};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    /// Max and mean of `|q_x - p_y|` over nodes where it could be computed.
    pub max_defect: f64,
    pub mean_defect: f64,
    /// Max over nodes at least two grid lines away from `σ = 0` and `τ = 0`.
    pub max_defect_off_axes: f64,
    /// Max over nodes on or next to `σ = 0` or `τ = 0`.
    pub max_defect_axis_adjacent: f64,
    /// Largest `|H(x, y, p, q)|`, when a Hamiltonian is known.
    pub max_abs_h: Option<f64>,
    /// Largest discrete circulation of `p dx + q dy` around a grid cell.
    pub max_loop_defect: f64,
    pub projectable: bool,
    pub lagrangian: bool,
    pub nodes_checked: usize,
    pub scheme: String,
}

const SCHEME: &str = "five-point non-uniform differences in the parameter chart (three-point where fewer valid nodes)";

/// First-derivative weights for nodes `xs[lo..lo + m]` evaluated at `x0` (Fornberg).
fn fornberg(xs: &[f64], x0: f64, out: &mut [f64]) {
    let m = out.len();
    let mut c = [[0.0f64; MAX_STENCIL]; 2];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..m {
        let mn = i.min(1);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] *= c4 / c3;
        }
        c1 = c2;
    }
    out.copy_from_slice(&c[1][..m]);
}

const MAX_STENCIL: usize = 5;

/// Derivative weights at index `k` of `xs` using valid neighbours only.
///
/// Prefers the most centred five-point window, then three points. Windows
/// with the zero node strictly inside are avoided unless nothing else fits,
/// since surfaces built from data vanishing at the axes are not smooth there.
fn weights(xs: &[f64], k: usize, ok: impl Fn(usize) -> bool) -> Option<Stencil> {
    let n = xs.len();
    if n < 3 || !ok(k) {
        return None;
    }
    let zero = zero_index(xs);
    let straddles = |lo: usize, m: usize| zero.is_some_and(|z| z > lo && z < lo + m - 1 && z != k);
    for strict in [true, false] {
        for m in [MAX_STENCIL, 3] {
            if n < m {
                continue;
            }
            let mut starts: Vec<usize> = (k.saturating_sub(m - 1)..=k.min(n - m)).collect();
            starts.sort_by_key(|lo| (2 * lo + m - 1).abs_diff(2 * k));
            for lo in starts {
                if (strict && straddles(lo, m)) || !(lo..lo + m).all(&ok) {
                    continue;
                }
                let mut st = Stencil { lo, len: m, w: [0.0; MAX_STENCIL] };
                fornberg(&xs[lo..lo + m], xs[k], &mut st.w[..m]);
                return Some(st);
            }
        }
    }
    None
}

#[derive(Clone, Copy, Debug)]
struct Stencil {
    lo: usize,
    len: usize,
    w: [f64; MAX_STENCIL],
}

impl Stencil {
    fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len).map(move |i| (self.lo + i, self.w[i]))
    }
}

/// Partial derivatives of a per-node field in `σ` and `τ`.
fn partials(
    sigma: &[f64],
    tau: &[f64],
    valid: &[bool],
    i: usize,
    j: usize,
    field: impl Fn(usize) -> f64,
) -> Option<(f64, f64)> {
    let nt = tau.len();
    let ws = weights(sigma, i, |ii| valid[ii * nt + j])?;
    let wt = weights(tau, j, |jj| valid[i * nt + jj])?;
    let ds = ws.iter().map(|(ii, w)| w * field(ii * nt + j)).sum();
    let dt = wt.iter().map(|(jj, w)| w * field(i * nt + jj)).sum();
    Some((ds, dt))
}

fn zero_index(xs: &[f64]) -> Option<usize> {
    xs.iter().position(|v| *v == 0.0)
}

fn near_axis(sigma: &[f64], tau: &[f64], i: usize, j: usize) -> bool {
    let close = |xs: &[f64], k: usize| zero_index(xs).is_some_and(|z| k.abs_diff(z) <= 1);
    close(sigma, i) || close(tau, j)
}

/// Jacobians `x_σ y_τ - x_τ y_σ` at every node where they can be computed.
fn jacobians(surface: &JetSurface) -> Vec<Option<f64>> {
    let (ns, nt) = surface.shape();
    let pts = &surface.points;
    (0..ns * nt)
        .map(|k| {
            let (i, j) = (k / nt, k % nt);
            let (xs, xt) = partials(&surface.sigma, &surface.tau, &surface.valid, i, j, |m| pts[m].x)?;
            let (ys, yt) = partials(&surface.sigma, &surface.tau, &surface.valid, i, j, |m| pts[m].y)?;
            Some(xs * yt - xt * ys)
        })
        .collect()
}

fn is_projectable(surface: &JetSurface, jac: &[Option<f64>]) -> bool {
    if surface.chart == Chart::Xy {
        return true;
    }
    let scale = jac.iter().flatten().fold(0.0f64, |m, j| m.max(j.abs()));
    let mut sign = 0.0;
    for j in jac.iter().flatten() {
        if !(j.abs() > 1e-12 * scale) {
            return false;
        }
        if sign == 0.0 {
            sign = j.signum();
        } else if j.signum() != sign {
            return false;
        }
    }
    scale > 0.0
}

/// Largest discrete circulation `∮ p dx + q dy` (trapezoid) around grid cells.
pub fn max_loop_defect(surface: &JetSurface) -> f64 {
    let (ns, nt) = surface.shape();
    let edge = |a: &PhasePoint, b: &PhasePoint| 0.5 * (a.p + b.p) * (b.x - a.x) + 0.5 * (a.q + b.q) * (b.y - a.y);
    let mut worst: f64 = 0.0;
    for i in 0..ns.saturating_sub(1) {
        for j in 0..nt.saturating_sub(1) {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let pts: Option<Vec<&PhasePoint>> = corners.iter().map(|&(a, b)| surface.point(a, b)).collect();
            if let Some(p) = pts {
                let c = edge(p[0], p[1]) + edge(p[1], p[2]) + edge(p[2], p[3]) + edge(p[3], p[0]);
                worst = worst.max(c.abs());
            }
        }
    }
    worst
}

/// Closedness of `p dx + q dy` on the surface.
pub fn check_lagrangian(surface: &JetSurface, tol: f64) -> DefectReport {
    let (_, nt) = surface.shape();
    let jac = jacobians(surface);
    let mut rep = DefectReport {
        projectable: is_projectable(surface, &jac),
        max_loop_defect: max_loop_defect(surface),
        max_abs_h: (surface.meta.hamiltonian.is_some()).then_some(surface.meta.residual_bound),
        scheme: SCHEME.into(),
        ..Default::default()
    };
    if !rep.projectable {
        return rep;
    }
    let mut sum = 0.0;
    for (k, defect) in defects_with(surface, &jac).into_iter().enumerate() {
        let Some(defect) = defect else { continue };
        let defect = defect.abs();
        rep.nodes_checked += 1;
        sum += defect;
        rep.max_defect = rep.max_defect.max(defect);
        if near_axis(&surface.sigma, &surface.tau, k / nt, k % nt) {
            rep.max_defect_axis_adjacent = rep.max_defect_axis_adjacent.max(defect);
        } else {
            rep.max_defect_off_axes = rep.max_defect_off_axes.max(defect);
        }
    }
    if rep.nodes_checked > 0 {
        rep.mean_defect = sum / rep.nodes_checked as f64;
    }
    rep.lagrangian = rep.nodes_checked > 0 && rep.max_defect < tol;
    rep
}

/// Signed `q_x - p_y` at every node, row-major like the surface.
pub fn defect_map(surface: &JetSurface) -> Vec<Option<f64>> {
    defects_with(surface, &jacobians(surface))
}

fn defects_with(surface: &JetSurface, jac: &[Option<f64>]) -> Vec<Option<f64>> {
    let (ns, nt) = surface.shape();
    let pts = &surface.points;
    (0..ns * nt)
        .map(|k| {
            let (i, j) = (k / nt, k % nt);
            let jv = jac[k]?;
            let d = |f: fn(&PhasePoint) -> f64| partials(&surface.sigma, &surface.tau, &surface.valid, i, j, |m| f(&pts[m]));
            let (xs, xt) = d(|p| p.x)?;
            let (ys, yt) = d(|p| p.y)?;
            let (ps, pt) = d(|p| p.p)?;
            let (qs, qt) = d(|p| p.q)?;
            Some((ps * xt - pt * xs + qs * yt - qt * ys) / jv)
        })
        .collect()
}

/// `z` together with the jet it was integrated from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionGrid {
    pub sigma: Vec<f64>,
    pub tau: Vec<f64>,
    pub chart: Chart,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub valid: Vec<bool>,
    /// Grid indices of the node where `z = 0`.
    pub base: (usize, usize),
    pub loop_defect: f64,
    pub warnings: Vec<String>,
}

impl SolutionGrid {
    pub fn shape(&self) -> (usize, usize) {
        (self.sigma.len(), self.tau.len())
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.tau.len() + j
    }

    /// Rows `x,y,z,p,q` for valid nodes.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "y", "z", "p", "q"])?;
        for k in 0..self.z.len() {
            if self.valid[k] {
                wr.write_record([self.x[k], self.y[k], self.z[k], self.p[k], self.q[k]].map(|v| v.to_string()))?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Largest `|z - g(x, y)|` over valid nodes.
    pub fn max_error_against(&self, g: impl Fn(f64, f64) -> f64) -> f64 {
        (0..self.z.len())
            .filter(|k| self.valid[*k])
            .map(|k| (self.z[k] - g(self.x[k], self.y[k])).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathOrder {
    /// Along `σ` on the base row first, then along `τ`.
    SigmaFirst,
    TauFirst,
}

pub const MAX_DEFECT_FOR_RECONSTRUCTION: f64 = 1e-3;
pub const WARN_DEFECT: f64 = 1e-6;

/// Integrates `p dx + q dy` from the node nearest `base`.
pub fn reconstruct_z(surface: &JetSurface, base: (f64, f64)) -> Result<SolutionGrid> {
    reconstruct_z_with(surface, base, PathOrder::SigmaFirst)
}

pub fn reconstruct_z_with(surface: &JetSurface, base: (f64, f64), order: PathOrder) -> Result<SolutionGrid> {
    let rep = check_lagrangian(surface, WARN_DEFECT);
    if !rep.projectable {
        return Err(Error::NotProjectable("the surface folds over the base plane".into()));
    }
    if rep.max_defect > MAX_DEFECT_FOR_RECONSTRUCTION {
        return Err(Error::Precondition(format!(
            "Lagrangian defect {:e} exceeds {MAX_DEFECT_FOR_RECONSTRUCTION:e}",
            rep.max_defect
        )));
    }
    let mut warnings = Vec::new();
    if rep.max_defect > WARN_DEFECT {
        warnings.push(format!("Lagrangian defect {:e} above {WARN_DEFECT:e}; z is path dependent", rep.max_defect));
    }
    let (ns, nt) = surface.shape();
    let bk = (0..ns * nt)
        .filter(|k| surface.valid[*k])
        .min_by(|&k1, &k2| {
            let d = |k: usize| (surface.points[k].x - base.0).hypot(surface.points[k].y - base.1);
            d(k1).total_cmp(&d(k2))
        })
        .ok_or_else(|| Error::Validation("surface has no valid nodes".into()))?;
    let (bi, bj) = (bk / nt, bk % nt);

    let edge = |a: usize, b: usize| {
        let (pa, pb) = (&surface.points[a], &surface.points[b]);
        0.5 * (pa.p + pb.p) * (pb.x - pa.x) + 0.5 * (pa.q + pb.q) * (pb.y - pa.y)
    };
    let idx = |i: usize, j: usize| i * nt + j;
    let mut z = vec![f64::NAN; ns * nt];
    z[bk] = 0.0;
    // Walks along a line of the grid from the anchor in both directions.
    let walk = |z: &mut Vec<f64>, anchor: usize, len: usize, at: &dyn Fn(usize) -> usize| {
        for dir in [1i64, -1] {
            let mut k = anchor as i64;
            loop {
                let next = k + dir;
                if next < 0 || next >= len as i64 {
                    break;
                }
                let (a, b) = (at(k as usize), at(next as usize));
                if !surface.valid[b] || z[a].is_nan() {
                    break;
                }
                z[b] = z[a] + edge(a, b);
                k = next;
            }
        }
    };
    match order {
        PathOrder::SigmaFirst => {
            walk(&mut z, bi, ns, &|i| idx(i, bj));
            for i in 0..ns {
                if !z[idx(i, bj)].is_nan() {
                    walk(&mut z, bj, nt, &|j| idx(i, j));
                }
            }
        }
        PathOrder::TauFirst => {
            walk(&mut z, bj, nt, &|j| idx(bi, j));
            for j in 0..nt {
                if !z[idx(bi, j)].is_nan() {
                    walk(&mut z, bi, ns, &|i| idx(i, j));
                }
            }
        }
    }
    let valid: Vec<bool> = z.iter().zip(&surface.valid).map(|(z, v)| *v && z.is_finite()).collect();
    let unreached = surface.valid_count() - valid.iter().filter(|v| **v).count();
    if unreached > 0 {
        warnings.push(format!("{unreached} valid nodes are not reachable along grid paths"));
    }
    Ok(SolutionGrid {
        sigma: surface.sigma.clone(),
        tau: surface.tau.clone(),
        chart: surface.chart,
        x: surface.points.iter().map(|p| p.x).collect(),
        y: surface.points.iter().map(|p| p.y).collect(),
        z,
        p: surface.points.iter().map(|p| p.p).collect(),
        q: surface.points.iter().map(|p| p.q).collect(),
        valid,
        base: (bi, bj),
        loop_defect: rep.max_loop_defect,
        warnings,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolutionResidual {
    pub max_abs_h: f64,
    /// `max |z_x - p|` and `max |z_y - q|`.
    pub max_grad_mismatch: [f64; 2],
    pub loop_defect: f64,
}

/// `|H|` at the carried jet and `|z_x - p|`, `|z_y - q|` from differences of `z`.
pub fn residual_grid(spec: &HamiltonianSpec, sol: &SolutionGrid) -> SolutionResidual {
    let (ns, nt) = sol.shape();
    let mut max_h: f64 = 0.0;
    let mut mis = [0.0f64; 2];
    for i in 0..ns {
        for j in 0..nt {
            let k = sol.index(i, j);
            if !sol.valid[k] {
                continue;
            }
            let pt = PhasePoint::new(sol.x[k], sol.y[k], sol.p[k], sol.q[k]);
            max_h = max_h.max(spec.value_raw(&pt).abs());
            let d = |f: &[f64]| partials(&sol.sigma, &sol.tau, &sol.valid, i, j, |m| f[m]);
            let (Some((xs, xt)), Some((ys, yt)), Some((zs, zt))) = (d(&sol.x), d(&sol.y), d(&sol.z)) else {
                continue;
            };
            let det = xs * yt - xt * ys;
            if det == 0.0 {
                continue;
            }
            let zx = (zs * yt - zt * ys) / det;
            let zy = (xs * zt - xt * zs) / det;
            mis[0] = mis[0].max((zx - sol.p[k]).abs());
            mis[1] = mis[1].max((zy - sol.q[k]).abs());
        }
    }
    SolutionResidual { max_abs_h: max_h, max_grad_mismatch: mis, loop_defect: sol.loop_defect }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::analytic_jet;

    fn axis(n: i32, h: f64) -> Vec<f64> {
        (-n..=n).map(|i| i as f64 * h).collect()
    }

    #[test]
    fn quadratic_saddle_jet_is_closed() {
        let (a, b) = (1.0, 2.0f64.sqrt());
        let s = analytic_jet(axis(10, 0.05), axis(10, 0.05), |x, y| (a * x, -b * y)).unwrap();
        let r = check_lagrangian(&s, 1e-10);
        assert!(r.lagrangian && r.max_defect < 1e-13);
        let sol = reconstruct_z(&s, (0.0, 0.0)).unwrap();
        assert!(sol.max_error_against(|x, y| 0.5 * (a * x * x - b * y * y)) < 1e-15);
        let res = residual_grid(&HamiltonianSpec::model_quadratic(a, b).unwrap(), &sol);
        assert!(res.max_abs_h < 1e-15);
        assert!(res.max_grad_mismatch[0] < 1e-13);
    }

    #[test]
    fn shear_is_not_lagrangian() {
        let s = analytic_jet(axis(3, 0.1), axis(3, 0.1), |_, y| (y, 0.0)).unwrap();
        let r = check_lagrangian(&s, 1e-6);
        assert!(!r.lagrangian);
        assert!((r.max_defect - 1.0).abs() < 1e-12 && (r.mean_defect - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_gradient_is_exact() {
        let s = analytic_jet(axis(4, 0.25), axis(4, 0.25), |_, _| (0.0, 1.0)).unwrap();
        let sol = reconstruct_z(&s, (0.0, 0.0)).unwrap();
        assert_eq!(sol.max_error_against(|_, y| y), 0.0);
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let (a, b) = (1.0, 2.0f64.sqrt());
        let s = analytic_jet(axis(5, 0.1), axis(5, 0.1), |x, y| (1.01 * a * x, b * y)).unwrap();
        let sol = reconstruct_z(&s, (0.0, 0.0)).unwrap();
        let res = residual_grid(&HamiltonianSpec::model_quadratic(a, b).unwrap(), &sol);
        assert!(res.max_abs_h > 1e-3);
    }

    #[test]
    fn non_uniform_weights_are_exact_for_quartics() {
        let xs = [-0.7, -0.2, 0.1, 0.35, 0.4, 1.0, 1.3];
        for k in 0..xs.len() {
            let w = weights(&xs, k, |_| true).unwrap();
            assert_eq!(w.len, 5);
            let d: f64 = w.iter().map(|(i, c)| c * xs[i].powi(4)).sum();
            assert!((d - 4.0 * xs[k].powi(3)).abs() < 1e-11, "{k}");
        }
        let w = weights(&xs, 2, |i| i != 4).unwrap();
        assert_eq!(w.len, 3);
    }
}
