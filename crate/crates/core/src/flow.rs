//! Characteristic flows and the surfaces swept out by them.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataFunctionSpec;
use crate::error::{Error, Result};
use crate::hamiltonian::{classify_invariant_planes, linearize, HamiltonianSpec, PhasePoint, SpectrumKind, PLANE_TOL};
use crate::model_case::{from_w, model_st, quadrant_branch, to_w, SaddleData};
use crate::ode::{integrate, OdeOptions, State};
use crate::series::SaddleSign;
use crate::surface::{Chart, Construction, JetSurface};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const STRIP_TOL: f64 = 1e-10;
pub const AXIS_THRESHOLD: f64 = 1e-8;
/// Local error tolerance relative to the requested one. The global error of
/// an unstable flow grows like `e^{max(a, b) t}`, so steps are controlled
/// more tightly than the accuracy asked of the end point.
pub const LOCAL_TOL_FACTOR: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    /// Requested absolute and relative accuracy; the embedded error
    /// estimate is held below `LOCAL_TOL_FACTOR * tol` per step.
    pub tol: f64,
    pub max_step: f64,
    /// Pull every accepted state back onto the initial level set of `H`.
    pub project_energy: bool,
    pub escape_radius: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { tol: DEFAULT_TOL, max_step: 0.1, project_energy: false, escape_radius: 1e8 }
    }
}

impl FlowOptions {
    pub fn with_tol(tol: f64) -> Self {
        FlowOptions { tol, ..Self::default() }
    }

    fn ode(&self) -> OdeOptions {
        OdeOptions {
            atol: self.tol * LOCAL_TOL_FACTOR,
            rtol: self.tol * LOCAL_TOL_FACTOR,
            max_step: self.max_step,
            escape_radius: self.escape_radius,
            ..OdeOptions::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub point: PhasePoint,
    /// `|H(Φ_t(P)) - H(P)|`
    pub h_drift: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// `Φ_t(P)` for the characteristic field of `spec`.
pub fn integrate_flow(spec: &HamiltonianSpec, p: &PhasePoint, t: f64, tol: f64) -> Result<FlowResult> {
    integrate_flow_with(spec, p, t, &FlowOptions::with_tol(tol))
}

pub fn integrate_flow_with(spec: &HamiltonianSpec, p: &PhasePoint, t: f64, opts: &FlowOptions) -> Result<FlowResult> {
    if !(opts.tol > 0.0) {
        return Err(Error::Precondition(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let h0 = spec.value(p)?;
    let field = |y: &State| spec.characteristic_field(&PhasePoint::from_array(*y));
    let out = if opts.project_energy {
        let project = |y: &mut State| project_to_level(spec, y, h0);
        integrate(field, p.to_array(), t, &opts.ode(), project)?
    } else {
        integrate(field, p.to_array(), t, &opts.ode(), crate::ode::no_projection)?
    };
    let point = PhasePoint::from_array(out.state);
    Ok(FlowResult {
        point,
        h_drift: (spec.value_raw(&point) - h0).abs(),
        accepted_steps: out.accepted,
        rejected_steps: out.rejected,
    })
}

// Two Newton steps along the gradient towards {H = h0}.
fn project_to_level(spec: &HamiltonianSpec, y: &mut State, h0: f64) {
    for _ in 0..2 {
        let pt = PhasePoint::from_array(*y);
        let dh = spec.value_raw(&pt) - h0;
        if dh == 0.0 {
            return;
        }
        let g = spec.gradient(&pt);
        let g2: f64 = g.iter().map(|c| c * c).sum();
        if !(g2 > 0.0) {
            return;
        }
        for i in 0..4 {
            y[i] -= dh * g[i] / g2;
        }
    }
}

/// The curve of initial data of a strip.
#[derive(Clone)]
pub enum StripCurve {
    /// `γ±(s) = s v1 ± s v2 + φ(s) v3 + ψ(s) v4` for a normal-form Hamiltonian.
    Saddle { phi: DataFunctionSpec, branch: SaddleSign },
    Custom(Arc<dyn Fn(f64) -> PhasePoint + Send + Sync>),
}

impl fmt::Debug for StripCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StripCurve::Saddle { phi, branch } => f.debug_struct("Saddle").field("phi", phi).field("branch", branch).finish(),
            StripCurve::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CharacteristicStrip {
    pub s_min: f64,
    pub s_max: f64,
    pub curve: StripCurve,
    pub spec: HamiltonianSpec,
    /// Largest `|H(γ(s))|` over the check samples.
    pub max_abs_h: f64,
}

const STRIP_SAMPLES: usize = 201;

impl CharacteristicStrip {
    /// Wraps a user curve; fails if `|H|` exceeds `tol` at any check sample.
    pub fn custom(
        spec: HamiltonianSpec,
        s_range: (f64, f64),
        curve: Arc<dyn Fn(f64) -> PhasePoint + Send + Sync>,
        tol: f64,
    ) -> Result<Self> {
        let mut strip =
            CharacteristicStrip { s_min: s_range.0, s_max: s_range.1, curve: StripCurve::Custom(curve), spec, max_abs_h: 0.0 };
        strip.check(tol)?;
        Ok(strip)
    }

    fn check(&mut self, tol: f64) -> Result<()> {
        if !(self.s_max > self.s_min) {
            return Err(Error::Validation(format!("empty strip range [{}, {}]", self.s_min, self.s_max)));
        }
        let mut worst: f64 = 0.0;
        for k in 0..STRIP_SAMPLES {
            let s = self.s_min + (self.s_max - self.s_min) * k as f64 / (STRIP_SAMPLES - 1) as f64;
            let h = self.spec.value(&self.eval(s)?)?.abs();
            if !(h < tol) {
                return Err(Error::Validation(format!("strip leaves H = 0 at s = {s}: |H| = {h:e}")));
            }
            worst = worst.max(h);
        }
        self.max_abs_h = worst;
        Ok(())
    }

    pub fn eval(&self, s: f64) -> Result<PhasePoint> {
        match &self.curve {
            StripCurve::Custom(c) => Ok(c(s)),
            StripCurve::Saddle { phi, branch } => {
                let (f, a, b) = self
                    .spec
                    .normal_form_parts()
                    .ok_or_else(|| Error::Precondition("saddle strips need a normal-form Hamiltonian".into()))?;
                let psi = solve_psi(&f, a, b, phi.eval(s), s, *branch)?;
                let sg = branch.value();
                Ok(from_w(&[s, sg * s, phi.eval(s), psi], a, b))
            }
        }
    }
}

/// Completes `s v1 ± s v2 + φ(s) v3` to a curve in `{H = 0}` by solving
/// `f(-4a² s φ(s), -4b² (±s) ψ) = 0` for `ψ(s)`.
pub fn complete_strip(
    spec: &HamiltonianSpec,
    phi: &DataFunctionSpec,
    branch: SaddleSign,
    s_range: (f64, f64),
) -> Result<CharacteristicStrip> {
    if spec.normal_form_parts().is_none() {
        return Err(Error::Precondition("complete_strip needs a normal-form Hamiltonian".into()));
    }
    phi.validate()?;
    let mut strip = CharacteristicStrip {
        s_min: s_range.0,
        s_max: s_range.1,
        curve: StripCurve::Saddle { phi: phi.clone(), branch },
        spec: spec.clone(),
        max_abs_h: 0.0,
    };
    strip.check(STRIP_TOL)?;
    Ok(strip)
}

/// `ψ` at one `s`; see [`complete_strip`].
pub fn solve_psi(
    f: &crate::hamiltonian::NormalFormFn,
    a: f64,
    b: f64,
    phi_s: f64,
    s: f64,
    branch: SaddleSign,
) -> Result<f64> {
    let u0 = -4.0 * a * a * s * phi_s;
    if s == 0.0 || phi_s == 0.0 {
        if f.value(u0, 0.0) == 0.0 {
            return Ok(0.0);
        }
        if s == 0.0 {
            return Err(Error::Root(format!("f({u0}, v) = 0 has no solution at s = 0")));
        }
    }
    let g = |v: f64| f.value(u0, v);
    let vbar = bracket_root(g, -u0, 1.0 + 10.0 * u0.abs())
        .ok_or_else(|| Error::Root(format!("no root of f({u0}, v) = 0 bracketed near v = {} (s = {s})", -u0)))?;
    Ok(vbar / (-4.0 * b * b * branch.value() * s))
}

/// Expanding search around `seed` up to `|v - seed| <= window`, then
/// Illinois false position with bisection fallback.
pub fn bracket_root(g: impl Fn(f64) -> f64, seed: f64, window: f64) -> Option<f64> {
    let g0 = g(seed);
    if g0 == 0.0 {
        return Some(seed);
    }
    let mut delta = (seed.abs() * 1e-3).max(1e-300).max(f64::EPSILON * seed.abs());
    let (mut lo, mut hi, mut glo, mut ghi);
    loop {
        let (l, h) = (seed - delta, seed + delta);
        let (gl, gh) = (g(l), g(h));
        if gl.is_finite() && gl.signum() != g0.signum() {
            (lo, hi, glo, ghi) = (l, seed, gl, g0);
            break;
        }
        if gh.is_finite() && gh.signum() != g0.signum() {
            (lo, hi, glo, ghi) = (seed, h, g0, gh);
            break;
        }
        if delta > window {
            return None;
        }
        delta *= 4.0;
    }
    let mut side = 0i32;
    for _ in 0..200 {
        let mut x = (lo * ghi - hi * glo) / (ghi - glo);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let gx = g(x);
        if gx == 0.0 || (hi - lo) <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            return Some(x);
        }
        if gx.signum() == glo.signum() {
            lo = x;
            glo = gx;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            ghi = gx;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
    }
    Some(0.5 * (lo + hi))
}

/// `det(π_* c'(s), π_* ξ_H(c(s)))`, or `None` where `ξ_H` vanishes.
pub fn transversality(strip: &CharacteristicStrip, s: f64) -> Result<Option<f64>> {
    let c = strip.eval(s)?;
    let xi = strip.spec.characteristic_field(&c)?;
    let xin = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if xin < 1e-8 {
        return Ok(None);
    }
    let ds = 1e-6 * s.abs().max(1.0);
    let (c1, c0) = (strip.eval(s + ds)?, strip.eval(s - ds)?);
    let (dx, dy) = ((c1.x - c0.x) / (2.0 * ds), (c1.y - c0.y) / (2.0 * ds));
    Ok(Some(dx * xi[1] - dy * xi[0]))
}

/// `F(s, t) = Φ_t(γ(s))` sampled on `s_values × t_values`.
pub fn surface_from_strip(
    spec: &HamiltonianSpec,
    strip: &CharacteristicStrip,
    s_values: &[f64],
    t_values: &[f64],
    tol: f64,
) -> Result<JetSurface> {
    for &s in s_values {
        if s < strip.s_min || s > strip.s_max {
            return Err(Error::Validation(format!("s = {s} outside the strip range")));
        }
        if let Some(det) = transversality(strip, s)? {
            if !(det.abs() > tol) {
                return Err(Error::Transversality(s));
            }
        }
    }
    let opts = FlowOptions::with_tol(tol);
    let rows: Vec<Result<Vec<Option<PhasePoint>>>> = s_values
        .par_iter()
        .map(|&s| {
            let c = strip.eval(s)?;
            Ok(flow_along_times(spec, &c, t_values, &opts))
        })
        .collect();
    let mut points = Vec::with_capacity(s_values.len() * t_values.len());
    let mut valid = Vec::with_capacity(points.capacity());
    for row in rows {
        for cell in row? {
            valid.push(cell.is_some());
            points.push(cell.unwrap_or(PhasePoint::ORIGIN));
        }
    }
    let mut surf = JetSurface::new(s_values.to_vec(), t_values.to_vec(), points, valid, Chart::St, Construction::StripFlow)?;
    let bad = surf.valid.len() - surf.valid_count();
    if bad > 0 {
        surf.meta.warnings.push(format!("{bad} cells failed to integrate"));
    }
    if let Some((a, b)) = spec.rates() {
        surf.meta.a = Some(a);
        surf.meta.b = Some(b);
    }
    surf.record_residual(spec);
    Ok(surf)
}

// Integrates outward from t = 0 through sorted times in both directions.
fn flow_along_times(spec: &HamiltonianSpec, start: &PhasePoint, ts: &[f64], opts: &FlowOptions) -> Vec<Option<PhasePoint>> {
    let mut out = vec![None; ts.len()];
    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.sort_by(|&i, &j| ts[i].abs().total_cmp(&ts[j].abs()));
    for positive in [true, false] {
        let (mut t_cur, mut p_cur) = (0.0, Some(*start));
        for &k in order.iter().filter(|&&k| if positive { ts[k] >= 0.0 } else { ts[k] < 0.0 }) {
            p_cur = p_cur.and_then(|p| integrate_flow_with(spec, &p, ts[k] - t_cur, opts).ok().map(|r| r.point));
            t_cur = ts[k];
            out[k] = p_cur;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    Stable,
    Unstable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldDiagnostics {
    pub targets: usize,
    pub converged: usize,
    pub failed: usize,
    pub max_newton_iterations: usize,
    pub max_base_error: f64,
    pub max_abs_h: f64,
    /// Time over which sampled points were flowed back towards `P0`.
    pub horizon: f64,
    /// Smallest factor by which the distance to `P0` shrank over `horizon`.
    pub min_contraction: f64,
}

#[derive(Clone, Debug)]
pub struct ManifoldResult {
    pub surface: JetSurface,
    pub kind: ManifoldKind,
    pub seed_radius: f64,
    pub diagnostics: ManifoldDiagnostics,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldOptions {
    pub tol: f64,
    /// Seed circle radius as a fraction of the requested radius.
    pub seed_fraction: f64,
    pub max_newton: usize,
}

impl Default for ManifoldOptions {
    fn default() -> Self {
        ManifoldOptions { tol: DEFAULT_TOL, seed_fraction: 1e-4, max_newton: 25 }
    }
}

struct Eigenplane {
    p0: PhasePoint,
    /// Eigenvectors spanning the plane and the complementary plane.
    span: [[f64; 4]; 2],
    comp: [[f64; 4]; 2],
    /// Absolute values of the eigenvalues on the plane.
    rates: [f64; 2],
    /// Inverse of the base projection of `span`.
    proj_inv: Matrix2<f64>,
    time_sign: f64,
}

impl Eigenplane {
    fn new(spec: &HamiltonianSpec, p0: &PhasePoint, kind: ManifoldKind) -> Result<Self> {
        let lin = linearize(spec, p0)?;
        if !lin.hyperbolic || !matches!(lin.spectrum, SpectrumKind::RealDistinct | SpectrumKind::RealRepeated) {
            return Err(Error::Spectrum(format!("manifolds need a real hyperbolic spectrum, got {:?}", lin.spectrum)));
        }
        if lin.spectrum == SpectrumKind::RealDistinct {
            classify_invariant_planes(&lin, PLANE_TOL)?;
        }
        let v: [[f64; 4]; 4] = std::array::from_fn(|k| lin.real_eigenvector(k).expect("real"));
        let lam: [f64; 4] = std::array::from_fn(|k| lin.eigenvalues[k].re);
        // Labels: v1 (a), v2 (-b), v3 (-a), v4 (b).
        let (idx, comp, time_sign) = match kind {
            ManifoldKind::Unstable => ([0, 3], [1, 2], 1.0),
            ManifoldKind::Stable => ([2, 1], [0, 3], -1.0),
        };
        let span = [v[idx[0]], v[idx[1]]];
        let m = Matrix2::new(span[0][0], span[1][0], span[0][1], span[1][1]);
        if !(m.determinant().abs() > PLANE_TOL) {
            return Err(Error::NotProjectable(format!("{kind:?} eigenplane projects singularly onto the base")));
        }
        Ok(Eigenplane {
            p0: *p0,
            span,
            comp: [v[comp[0]], v[comp[1]]],
            rates: [lam[idx[0]].abs(), lam[idx[1]].abs()],
            proj_inv: m.try_inverse().expect("checked determinant"),
            time_sign,
        })
    }

    fn linear_point(&self, c: &Vector2<f64>) -> PhasePoint {
        let p0 = self.p0.to_array();
        PhasePoint::from_array(std::array::from_fn(|i| p0[i] + c[0] * self.span[0][i] + c[1] * self.span[1][i]))
    }

    /// Moves `pt` onto `{H = H(P0)}` along the complementary eigenvectors.
    fn correct(&self, spec: &HamiltonianSpec, pt: PhasePoint) -> Option<PhasePoint> {
        let h0 = spec.value_raw(&self.p0);
        let mut pt = pt;
        for _ in 0..20 {
            let dh = spec.value_raw(&pt) - h0;
            let scale = pt.distance(&self.p0).powi(2).max(f64::MIN_POSITIVE);
            if dh.abs() <= 1e-15 * scale {
                return Some(pt);
            }
            let g = spec.gradient(&pt);
            let gw = |v: &[f64; 4]| (0..4).map(|i| g[i] * v[i]).sum::<f64>();
            let n: [f64; 4] = std::array::from_fn(|i| gw(&self.comp[0]) * self.comp[0][i] + gw(&self.comp[1]) * self.comp[1][i]);
            let gn = (0..4).map(|i| g[i] * n[i]).sum::<f64>();
            if gn.abs() < f64::MIN_POSITIVE {
                return None;
            }
            pt = pt.offset(&n, -dh / gn);
        }
        let dh = spec.value_raw(&pt) - h0;
        (dh.abs() < 1e-12 * pt.distance(&self.p0).powi(2).max(1e-300)).then_some(pt)
    }
}

/// Stable or unstable manifold of `P0` over the base disk of the given radius,
/// sampled on `xs × ys`; cells outside the disk are invalid.
pub fn invariant_manifold(
    spec: &HamiltonianSpec,
    p0: &PhasePoint,
    kind: ManifoldKind,
    radius: f64,
    xs: &[f64],
    ys: &[f64],
    opts: &ManifoldOptions,
) -> Result<ManifoldResult> {
    if !(radius > 0.0) {
        return Err(Error::Validation(format!("radius must be positive, got {radius}")));
    }
    let plane = Eigenplane::new(spec, p0, kind)?;
    let eps = opts.seed_fraction * radius;
    let flow_opts = FlowOptions::with_tol(opts.tol);
    let cells: Vec<(f64, f64)> = xs.iter().flat_map(|x| ys.iter().map(move |y| (*x, *y))).collect();
    let solved: Vec<Option<(PhasePoint, usize, f64)>> = cells
        .par_iter()
        .map(|&(x, y)| {
            let (dx, dy) = (x - p0.x, y - p0.y);
            if dx * dx + dy * dy > radius * radius * (1.0 + 1e-12) {
                return None;
            }
            shoot_manifold(spec, &plane, x, y, eps, &flow_opts, opts.max_newton)
        })
        .collect();

    let inside = cells
        .iter()
        .filter(|(x, y)| (x - p0.x).powi(2) + (y - p0.y).powi(2) <= radius * radius * (1.0 + 1e-12))
        .count();
    let mut diag = ManifoldDiagnostics {
        targets: inside,
        converged: solved.iter().flatten().count(),
        failed: 0,
        max_newton_iterations: solved.iter().flatten().map(|s| s.1).max().unwrap_or(0),
        max_base_error: solved.iter().flatten().map(|s| s.2).fold(0.0, f64::max),
        max_abs_h: 0.0,
        horizon: 0.0,
        min_contraction: f64::INFINITY,
    };
    diag.failed = diag.targets - diag.converged;
    let valid: Vec<bool> = solved.iter().map(Option::is_some).collect();
    let points: Vec<PhasePoint> = solved.iter().map(|s| s.map(|s| s.0).unwrap_or(PhasePoint::ORIGIN)).collect();
    let construction = match kind {
        ManifoldKind::Unstable => Construction::UnstableManifold,
        ManifoldKind::Stable => Construction::StableManifold,
    };
    let mut surface = JetSurface::new(xs.to_vec(), ys.to_vec(), points, valid, Chart::Xy, construction)?;
    surface.record_residual(spec);
    diag.max_abs_h = surface.meta.residual_bound;
    if diag.failed > 0 {
        surface.meta.warnings.push(format!("{} of {} targets did not converge", diag.failed, diag.targets));
    }
    if let Some((a, b)) = spec.rates() {
        surface.meta.a = Some(a);
        surface.meta.b = Some(b);
    }

    // Flow a few points back towards P0 to confirm the time direction.
    let slow = plane.rates[0].min(plane.rates[1]);
    diag.horizon = 2.0 * std::f64::consts::LN_2 / slow;
    let probes: Vec<&PhasePoint> = surface.cells().map(|c| c.2).filter(|p| p.distance(p0) > 0.25 * radius).collect();
    let step = (probes.len() / 16).max(1);
    for pt in probes.iter().step_by(step) {
        if let Ok(r) = integrate_flow_with(spec, pt, -plane.time_sign * diag.horizon, &flow_opts) {
            let d = r.point.distance(p0);
            diag.min_contraction = diag.min_contraction.min(pt.distance(p0) / d.max(f64::MIN_POSITIVE));
        }
    }
    Ok(ManifoldResult { surface, kind, seed_radius: eps, diagnostics: diag })
}

fn shoot_manifold(
    spec: &HamiltonianSpec,
    plane: &Eigenplane,
    x: f64,
    y: f64,
    eps: f64,
    flow_opts: &FlowOptions,
    max_newton: usize,
) -> Option<(PhasePoint, usize, f64)> {
    let target = Vector2::new(x - plane.p0.x, y - plane.p0.y);
    let c = plane.proj_inv * target;
    if c.norm() <= eps {
        let pt = plane.correct(spec, plane.linear_point(&c))?;
        return Some((pt, 0, 0.0));
    }
    // Time at which the linear preimage reaches the seed circle.
    let seed_norm = |tau: f64| {
        Vector2::new(c[0] * (-plane.rates[0] * tau).exp(), c[1] * (-plane.rates[1] * tau).exp()).norm()
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while seed_norm(hi) > eps {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if seed_norm(mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = hi;
    let t = plane.time_sign * tau;
    let growth = Matrix2::new((plane.rates[0] * tau).exp(), 0.0, 0.0, (plane.rates[1] * tau).exp());
    let mut sigma = Vector2::new(c[0] * (-plane.rates[0] * tau).exp(), c[1] * (-plane.rates[1] * tau).exp());

    let eval = |sigma: &Vector2<f64>| -> Option<(PhasePoint, Vector2<f64>)> {
        let seed = plane.correct(spec, plane.linear_point(sigma))?;
        let end = integrate_flow_with(spec, &seed, t, flow_opts).ok()?.point;
        Some((end, Vector2::new(end.x - x, end.y - y)))
    };
    let (mut end, mut resid) = eval(&sigma)?;
    let target_tol = 1e-13 * (1.0 + x.abs() + y.abs());
    // Quasi-Newton with the linearized Jacobian, switching to a
    // finite-difference Jacobian if progress stalls.
    let lin_jac = plane.proj_inv.try_inverse()? * growth;
    let mut use_fd = false;
    for it in 0..max_newton {
        if resid.norm() <= target_tol {
            return Some((end, it, resid.norm()));
        }
        let jac = if use_fd {
            let mut j = Matrix2::zeros();
            for k in 0..2 {
                let mut sp = sigma;
                let d = 1e-7 * sigma.norm().max(eps);
                sp[k] += d;
                let (_, r) = eval(&sp)?;
                j.set_column(k, &((r - resid) / d));
            }
            j
        } else {
            lin_jac
        };
        let step = jac.lu().solve(&resid)?;
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..8 {
            let trial = sigma - step * lambda;
            if let Some((e2, r2)) = eval(&trial) {
                if r2.norm() < resid.norm() {
                    if r2.norm() > 0.5 * resid.norm() {
                        use_fd = true;
                    }
                    sigma = trial;
                    end = e2;
                    resid = r2;
                    improved = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !improved {
            if use_fd {
                break;
            }
            use_fd = true;
        }
    }
    (resid.norm() <= 1e-10 * (1.0 + x.abs() + y.abs())).then(|| (end, max_newton, resid.norm()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleShootOptions {
    pub tol: f64,
    pub max_newton: usize,
    pub newton_tol: f64,
    pub axis_threshold: f64,
}

impl Default for SaddleShootOptions {
    fn default() -> Self {
        SaddleShootOptions { tol: DEFAULT_TOL, max_newton: 25, newton_tol: 1e-11, axis_threshold: AXIS_THRESHOLD }
    }
}

/// Saddle surface of a normal-form Hamiltonian over a `(w1, w2)` grid, by
/// shooting from the completed strips `γ±`.
pub fn general_saddle_surface(
    spec: &HamiltonianSpec,
    phi_plus: &DataFunctionSpec,
    phi_minus: &DataFunctionSpec,
    us: &[f64],
    vs: &[f64],
    opts: &SaddleShootOptions,
) -> Result<JetSurface> {
    let (_, a, b) = spec
        .normal_form_parts()
        .ok_or_else(|| Error::Precondition("general_saddle_surface needs a normal-form Hamiltonian".into()))?;
    let data = SaddleData::new(a, b, phi_plus.clone(), phi_minus.clone())?;
    let smax = us.iter().chain(vs).fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let strips = [
        complete_strip(spec, phi_plus, SaddleSign::Plus, (-smax, smax))?,
        complete_strip(spec, phi_minus, SaddleSign::Minus, (-smax, smax))?,
    ];
    let flow_opts = FlowOptions::with_tol(opts.tol);
    let cells: Vec<(f64, f64)> = us.iter().flat_map(|u| vs.iter().map(move |v| (*u, *v))).collect();
    let solved: Vec<Option<PhasePoint>> = cells
        .par_iter()
        .map(|&(u, v)| {
            if u.abs().min(v.abs()) < opts.axis_threshold {
                return Some(from_w(&[u, v, 0.0, 0.0], a, b));
            }
            let strip = match quadrant_branch(u, v)? {
                SaddleSign::Plus => &strips[0],
                SaddleSign::Minus => &strips[1],
            };
            shoot_saddle(strip, a, b, u, v, &flow_opts, opts)
        })
        .collect();
    let valid: Vec<bool> = solved.iter().map(Option::is_some).collect();
    let points = solved.into_iter().map(|p| p.unwrap_or(PhasePoint::ORIGIN)).collect();
    let mut surf = JetSurface::new(us.to_vec(), vs.to_vec(), points, valid, Chart::Uv, Construction::GeneralSaddle)?;
    surf.meta.a = Some(a);
    surf.meta.b = Some(b);
    surf.meta.phi_plus = Some(phi_plus.clone());
    surf.meta.phi_minus = Some(phi_minus.clone());
    surf.meta.l = data.order();
    surf.meta.warnings.extend(data.warnings());
    let res = crate::series::detect_resonances(a, b, 12, 1e-9);
    if !res.is_empty() {
        surf.meta.warnings.push(format!("a and b are resonant up to degree 12: {res:?}"));
    }
    let holes = surf.valid.len() - surf.valid_count();
    if holes > 0 {
        surf.meta.warnings.push(format!("{holes} cells did not converge and are marked invalid"));
    }
    surf.record_residual(spec);
    Ok(surf)
}

fn shoot_saddle(
    strip: &CharacteristicStrip,
    a: f64,
    b: f64,
    u: f64,
    v: f64,
    flow_opts: &FlowOptions,
    opts: &SaddleShootOptions,
) -> Option<PhasePoint> {
    let eval = |s: f64, t: f64| -> Option<(PhasePoint, Vector2<f64>)> {
        let start = strip.eval(s).ok()?;
        let end = integrate_flow_with(&strip.spec, &start, t, flow_opts).ok()?.point;
        let w = to_w(&end, a, b);
        Some((end, Vector2::new(w[0] - u, w[1] - v)))
    };
    let (s0, t0) = model_st(a, b, u, v)?;
    let mut x = Vector2::new(s0, t0);
    let (mut end, mut resid) = eval(x[0], x[1])?;
    for _ in 0..opts.max_newton {
        if resid.norm() < opts.newton_tol {
            return Some(end);
        }
        let mut jac = Matrix2::zeros();
        let hs = 1e-7 * x[0].abs().max(1e-6);
        let ht = 1e-7;
        let (_, rs) = eval(x[0] + hs, x[1])?;
        let (_, rt) = eval(x[0], x[1] + ht)?;
        jac.set_column(0, &((rs - resid) / hs));
        jac.set_column(1, &((rt - resid) / ht));
        let step = jac.lu().solve(&resid)?;
        let mut lambda = 1.0;
        let mut moved = false;
        for _ in 0..10 {
            let trial = x - step * lambda;
            if trial[0].signum() == x[0].signum() {
                if let Some((e2, r2)) = eval(trial[0], trial[1]) {
                    if r2.norm() < resid.norm() {
                        x = trial;
                        end = e2;
                        resid = r2;
                        moved = true;
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (resid.norm() < opts.newton_tol).then_some(end)
}
