//! Hamiltonians on phase space `(x, y, p, q)`, their characteristic vector
//! field and the linearization at a critical point.
//!
//! Conventions: the symplectic form is `ω = dp∧dx + dq∧dy`, so
//! `ω(V, W) = V_p W_x - W_p V_x + V_q W_y - W_q V_y`, and the characteristic
//! field is `ξ_H = (H_p, H_q, -H_x, -H_y)`. Component order everywhere is
//! `[x, y, p, q]`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Complex, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::BivariateSeries;

pub type Complex64 = Complex<f64>;

/// A point of phase space; `p` and `q` play the role of `z_x` and `z_y`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: f64,
    pub y: f64,
    pub p: f64,
    pub q: f64,
}

impl PhasePoint {
    pub const ORIGIN: PhasePoint = PhasePoint { x: 0.0, y: 0.0, p: 0.0, q: 0.0 };

    pub const fn new(x: f64, y: f64, p: f64, q: f64) -> Self {
        PhasePoint { x, y, p, q }
    }

    pub const fn from_array(v: [f64; 4]) -> Self {
        PhasePoint { x: v[0], y: v[1], p: v[2], q: v[3] }
    }

    pub const fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.p, self.q]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    /// `self + t * dir`.
    pub fn offset(self, dir: &[f64; 4], t: f64) -> Self {
        let a = self.to_array();
        PhasePoint::from_array(std::array::from_fn(|i| a[i] + t * dir[i]))
    }

    pub fn distance(&self, other: &PhasePoint) -> f64 {
        let a = self.to_array();
        let b = other.to_array();
        (0..4).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.distance(&PhasePoint::ORIGIN)
    }
}

/// `ω(V, W)` for the form `dp∧dx + dq∧dy`.
pub fn omega(v: &[f64; 4], w: &[f64; 4]) -> f64 {
    v[2] * w[0] - w[2] * v[0] + v[3] * w[1] - w[3] * v[1]
}

/// The function `f(u, v)` of a Hamiltonian in normal form
/// `H = f(p^2 - a^2 x^2, q^2 - b^2 y^2) / 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormalFormFn {
    /// `u + v`
    Linear,
    /// `u + v + c u v`
    Product { c: f64 },
    /// `e^u + e^v - 2`
    Exp,
    /// Polynomial coefficient table.
    Polynomial { poly: BivariateSeries },
}

/// Value and derivatives through second order of `f` at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalFormDerivs {
    pub f: f64,
    pub fu: f64,
    pub fv: f64,
    pub fuu: f64,
    pub fuv: f64,
    pub fvv: f64,
}

impl NormalFormFn {
    pub fn derivs(&self, u: f64, v: f64) -> NormalFormDerivs {
        match self {
            NormalFormFn::Linear => NormalFormDerivs { f: u + v, fu: 1.0, fv: 1.0, fuu: 0.0, fuv: 0.0, fvv: 0.0 },
            NormalFormFn::Product { c } => NormalFormDerivs {
                f: u + v + c * u * v,
                fu: 1.0 + c * v,
                fv: 1.0 + c * u,
                fuu: 0.0,
                fuv: *c,
                fvv: 0.0,
            },
            NormalFormFn::Exp => {
                let (eu, ev) = (u.exp(), v.exp());
                NormalFormDerivs { f: eu + ev - 2.0, fu: eu, fv: ev, fuu: eu, fuv: 0.0, fvv: ev }
            }
            NormalFormFn::Polynomial { poly } => {
                let (f, g, hs) = poly.eval_with_derivatives(u, v);
                NormalFormDerivs { f, fu: g[0], fv: g[1], fuu: hs[0][0], fuv: hs[0][1], fvv: hs[1][1] }
            }
        }
    }

    pub fn value(&self, u: f64, v: f64) -> f64 {
        self.derivs(u, v).f
    }

    /// Checks `f(0,0) = 0` and `f_u(0,0) = f_v(0,0) = 1` within `tol`.
    pub fn check_constraints(&self, tol: f64) -> Result<()> {
        let d = self.derivs(0.0, 0.0);
        if d.f.abs() > tol || (d.fu - 1.0).abs() > tol || (d.fv - 1.0).abs() > tol {
            return Err(Error::Validation(format!(
                "normal form needs f(0,0)=0, f_u(0,0)=f_v(0,0)=1; got f={}, f_u={}, f_v={}",
                d.f, d.fu, d.fv
            )));
        }
        Ok(())
    }
}

pub type GenericFn = Arc<dyn Fn(&PhasePoint) -> f64 + Send + Sync>;

/// An arbitrary Hamiltonian given as a closure; differentiated numerically.
#[derive(Clone)]
pub struct GenericHamiltonian {
    pub label: String,
    pub func: GenericFn,
}

impl fmt::Debug for GenericHamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenericHamiltonian").field("label", &self.label).finish()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HamiltonianKind {
    /// `(p^2 + q^2 - a^2 x^2 - b^2 y^2) / 2`
    ModelQuadratic { a: f64, b: f64 },
    /// `f(p, q) - h(x, y)`
    SeparatedEikonal { f: BivariateSeries, h: BivariateSeries },
    /// `f(p^2 - a^2 x^2, q^2 - b^2 y^2) / 2`
    NormalForm { f: NormalFormFn, a: f64, b: f64 },
    #[serde(skip)]
    Generic(GenericHamiltonian),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DerivativeMode {
    #[default]
    Analytic,
    FiniteDifference { step: f64 },
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const NORMAL_FORM_TOL: f64 = 1e-9;
pub const CRITICAL_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr")]
pub struct HamiltonianSpec {
    #[serde(flatten)]
    kind: HamiltonianKind,
    #[serde(default)]
    derivatives: DerivativeMode,
}

// Flattened fields cannot reject unknown keys, so parsing goes through
// this explicit form.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum SpecRepr {
    ModelQuadratic {
        a: f64,
        b: f64,
        #[serde(default)]
        derivatives: DerivativeMode,
    },
    SeparatedEikonal {
        f: BivariateSeries,
        h: BivariateSeries,
        #[serde(default)]
        derivatives: DerivativeMode,
    },
    NormalForm {
        f: NormalFormFn,
        a: f64,
        b: f64,
        #[serde(default)]
        derivatives: DerivativeMode,
    },
}

impl TryFrom<SpecRepr> for HamiltonianSpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        let (kind, derivatives) = match r {
            SpecRepr::ModelQuadratic { a, b, derivatives } => (HamiltonianKind::ModelQuadratic { a, b }, derivatives),
            SpecRepr::SeparatedEikonal { f, h, derivatives } => (HamiltonianKind::SeparatedEikonal { f, h }, derivatives),
            SpecRepr::NormalForm { f, a, b, derivatives } => (HamiltonianKind::NormalForm { f, a, b }, derivatives),
        };
        HamiltonianSpec { kind, derivatives }.validated()
    }
}

impl HamiltonianSpec {
    pub fn model_quadratic(a: f64, b: f64) -> Result<Self> {
        check_ab(a, b)?;
        Ok(Self::from_kind(HamiltonianKind::ModelQuadratic { a, b }))
    }

    pub fn separated_eikonal(f: BivariateSeries, h: BivariateSeries) -> Self {
        Self::from_kind(HamiltonianKind::SeparatedEikonal { f, h })
    }

    /// Normal-form Hamiltonian; rejects `f` violating the normalization.
    pub fn normal_form(f: NormalFormFn, a: f64, b: f64) -> Result<Self> {
        check_ab(a, b)?;
        f.check_constraints(NORMAL_FORM_TOL)?;
        Ok(Self::from_kind(HamiltonianKind::NormalForm { f, a, b }))
    }

    pub fn generic(label: impl Into<String>, func: GenericFn, step: f64) -> Self {
        HamiltonianSpec {
            kind: HamiltonianKind::Generic(GenericHamiltonian { label: label.into(), func }),
            derivatives: DerivativeMode::FiniteDifference { step },
        }
    }

    fn from_kind(kind: HamiltonianKind) -> Self {
        HamiltonianSpec { kind, derivatives: DerivativeMode::Analytic }
    }

    /// Validates a deserialized spec (normal-form constraints, positivity).
    pub fn validated(self) -> Result<Self> {
        match &self.kind {
            HamiltonianKind::ModelQuadratic { a, b } => check_ab(*a, *b)?,
            HamiltonianKind::NormalForm { f, a, b } => {
                check_ab(*a, *b)?;
                f.check_constraints(NORMAL_FORM_TOL)?;
            }
            _ => {}
        }
        if let DerivativeMode::FiniteDifference { step } = self.derivatives {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::Validation(format!("finite-difference step must be positive, got {step}")));
            }
        }
        Ok(self)
    }

    /// Forces central finite differences even where analytic derivatives exist.
    pub fn with_finite_differences(mut self, step: f64) -> Self {
        self.derivatives = DerivativeMode::FiniteDifference { step };
        self
    }

    pub fn kind(&self) -> &HamiltonianKind {
        &self.kind
    }

    pub fn derivative_mode(&self) -> DerivativeMode {
        self.derivatives
    }

    /// `(a, b)` for the model and normal-form variants.
    pub fn rates(&self) -> Option<(f64, f64)> {
        match &self.kind {
            HamiltonianKind::ModelQuadratic { a, b } | HamiltonianKind::NormalForm { a, b, .. } => Some((*a, *b)),
            _ => None,
        }
    }

    /// Normal-form view: `(f, a, b)`; the model quadratic is `f = u + v`.
    pub fn normal_form_parts(&self) -> Option<(NormalFormFn, f64, f64)> {
        match &self.kind {
            HamiltonianKind::ModelQuadratic { a, b } => Some((NormalFormFn::Linear, *a, *b)),
            HamiltonianKind::NormalForm { f, a, b } => Some((f.clone(), *a, *b)),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match &self.kind {
            HamiltonianKind::ModelQuadratic { a, b } => format!("model_quadratic(a={a}, b={b})"),
            HamiltonianKind::SeparatedEikonal { .. } => "separated_eikonal".into(),
            HamiltonianKind::NormalForm { f, a, b } => format!("normal_form({f:?}, a={a}, b={b})"),
            HamiltonianKind::Generic(g) => format!("generic({})", g.label),
        }
    }

    /// `H(P)` without the finiteness check.
    pub fn value_raw(&self, pt: &PhasePoint) -> f64 {
        let PhasePoint { x, y, p, q } = *pt;
        match &self.kind {
            HamiltonianKind::ModelQuadratic { a, b } => 0.5 * (p * p + q * q - a * a * x * x - b * b * y * y),
            HamiltonianKind::SeparatedEikonal { f, h } => f.eval(p, q) - h.eval(x, y),
            HamiltonianKind::NormalForm { f, a, b } => 0.5 * f.value(p * p - a * a * x * x, q * q - b * b * y * y),
            HamiltonianKind::Generic(g) => (g.func)(pt),
        }
    }

    /// `H(P)`; non-finite input or output is a domain error.
    pub fn value(&self, pt: &PhasePoint) -> Result<f64> {
        if !pt.is_finite() {
            return Err(Error::Precondition(format!("phase point {pt:?} is not finite")));
        }
        let v = self.value_raw(pt);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!("H({pt:?}) = {v}")))
        }
    }

    /// `[H_x, H_y, H_p, H_q]`.
    pub fn gradient(&self, pt: &PhasePoint) -> [f64; 4] {
        if let DerivativeMode::FiniteDifference { step } = self.derivatives {
            return self.fd_gradient(pt, step);
        }
        let PhasePoint { x, y, p, q } = *pt;
        match &self.kind {
            HamiltonianKind::ModelQuadratic { a, b } => [-a * a * x, -b * b * y, p, q],
            HamiltonianKind::SeparatedEikonal { f, h } => {
                let (_, gf, _) = f.eval_with_derivatives(p, q);
                let (_, gh, _) = h.eval_with_derivatives(x, y);
                [-gh[0], -gh[1], gf[0], gf[1]]
            }
            HamiltonianKind::NormalForm { f, a, b } => {
                let d = f.derivs(p * p - a * a * x * x, q * q - b * b * y * y);
                [-a * a * d.fu * x, -b * b * d.fv * y, d.fu * p, d.fv * q]
            }
            HamiltonianKind::Generic(_) => self.fd_gradient(pt, DEFAULT_FD_STEP),
        }
    }

    fn fd_gradient(&self, pt: &PhasePoint, step: f64) -> [f64; 4] {
        std::array::from_fn(|i| {
            let mut e = [0.0; 4];
            e[i] = 1.0;
            (self.value_raw(&pt.offset(&e, step)) - self.value_raw(&pt.offset(&e, -step))) / (2.0 * step)
        })
    }

    /// Hessian in the `[x, y, p, q]` ordering.
    pub fn hessian(&self, pt: &PhasePoint) -> [[f64; 4]; 4] {
        if let DerivativeMode::FiniteDifference { step } = self.derivatives {
            return self.fd_hessian(pt, step);
        }
        let PhasePoint { x, y, p, q } = *pt;
        match &self.kind {
            HamiltonianKind::ModelQuadratic { a, b } => diag4([-a * a, -b * b, 1.0, 1.0]),
            HamiltonianKind::SeparatedEikonal { f, h } => {
                let (_, _, hf) = f.eval_with_derivatives(p, q);
                let (_, _, hh) = h.eval_with_derivatives(x, y);
                let mut m = [[0.0; 4]; 4];
                for i in 0..2 {
                    for j in 0..2 {
                        m[i][j] = -hh[i][j];
                        m[i + 2][j + 2] = hf[i][j];
                    }
                }
                m
            }
            HamiltonianKind::NormalForm { f, a, b } => {
                let (a2, b2) = (a * a, b * b);
                let d = f.derivs(p * p - a2 * x * x, q * q - b2 * y * y);
                let du = [-2.0 * a2 * x, 0.0, 2.0 * p, 0.0];
                let dv = [0.0, -2.0 * b2 * y, 0.0, 2.0 * q];
                let duu = diag4([-2.0 * a2, 0.0, 2.0, 0.0]);
                let dvv = diag4([0.0, -2.0 * b2, 0.0, 2.0]);
                let mut m = [[0.0; 4]; 4];
                for i in 0..4 {
                    for j in 0..4 {
                        m[i][j] = 0.5
                            * (d.fuu * du[i] * du[j]
                                + d.fuv * (du[i] * dv[j] + dv[i] * du[j])
                                + d.fvv * dv[i] * dv[j]
                                + d.fu * duu[i][j]
                                + d.fv * dvv[i][j]);
                    }
                }
                m
            }
            HamiltonianKind::Generic(_) => self.fd_hessian(pt, DEFAULT_FD_STEP),
        }
    }

    // Second differences lose accuracy quickly as the step shrinks, so the
    // Hessian never uses a step below 1e-4.
    fn fd_hessian(&self, pt: &PhasePoint, step: f64) -> [[f64; 4]; 4] {
        let h = step.max(1e-4);
        let unit = |i: usize| {
            let mut e = [0.0; 4];
            e[i] = 1.0;
            e
        };
        let f0 = self.value_raw(pt);
        let mut m = [[0.0; 4]; 4];
        #[allow(clippy::needless_range_loop)]
        for i in 0..4 {
            let ei = unit(i);
            m[i][i] = (self.value_raw(&pt.offset(&ei, h)) - 2.0 * f0 + self.value_raw(&pt.offset(&ei, -h))) / (h * h);
            for j in 0..i {
                let ej = unit(j);
                let pp = self.value_raw(&pt.offset(&ei, h).offset(&ej, h));
                let pm = self.value_raw(&pt.offset(&ei, h).offset(&ej, -h));
                let mp = self.value_raw(&pt.offset(&ei, -h).offset(&ej, h));
                let mm = self.value_raw(&pt.offset(&ei, -h).offset(&ej, -h));
                m[i][j] = (pp - pm - mp + mm) / (4.0 * h * h);
                m[j][i] = m[i][j];
            }
        }
        m
    }

    /// `ξ_H(P) = (H_p, H_q, -H_x, -H_y)`.
    pub fn characteristic_field(&self, pt: &PhasePoint) -> Result<[f64; 4]> {
        let g = self.gradient(pt);
        let xi = [g[2], g[3], -g[0], -g[1]];
        if xi.iter().all(|c| c.is_finite()) {
            Ok(xi)
        } else {
            Err(Error::Domain(format!("characteristic field at {pt:?} is not finite")))
        }
    }
}

fn check_ab(a: f64, b: f64) -> Result<()> {
    if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("a and b must be positive and finite, got a = {a}, b = {b}")))
    }
}

fn diag4(d: [f64; 4]) -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        m[i][i] = d[i];
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    /// Four distinct real eigenvalues `±a, ±b`.
    RealDistinct,
    /// Real, with `a = b`.
    RealRepeated,
    /// Some eigenvalue has a non-zero imaginary part.
    Complex,
    /// Some eigenvalue vanishes (singular Hessian).
    Degenerate,
}

/// Linear part of `ξ_H` at a critical point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linearization {
    pub point: PhasePoint,
    /// `L = J D²H`, row-major, `[x, y, p, q]` ordering.
    pub matrix: [[f64; 4]; 4],
    pub hessian: [[f64; 4]; 4],
    pub c2: f64,
    pub det_hessian: f64,
    /// Eigenvalues paired with `eigenvectors`. For a real spectrum they are
    /// ordered `[a, -b, -a, b]` as labels `v1..v4`, where `v1, v3` are the
    /// eigenvectors with dominant `x` projection.
    pub eigenvalues: [Complex64; 4],
    /// Eigenvalues from the closed form in `c2` and `det D²H`, same order.
    pub closed_form_eigenvalues: [Complex64; 4],
    pub eigenvectors: [[Complex64; 4]; 4],
    /// Largest gap between the closed-form and the numerical eigenvalues.
    pub eigen_discrepancy: f64,
    pub hyperbolic: bool,
    pub spectrum: SpectrumKind,
}

impl Linearization {
    /// `(a, b)` for a real spectrum.
    pub fn rates(&self) -> Option<(f64, f64)> {
        match self.spectrum {
            SpectrumKind::RealDistinct | SpectrumKind::RealRepeated => {
                Some((self.eigenvalues[0].re, self.eigenvalues[3].re))
            }
            _ => None,
        }
    }

    /// Real eigenvector `k` (0-based label), when the spectrum is real.
    pub fn real_eigenvector(&self, k: usize) -> Option<[f64; 4]> {
        self.rates()?;
        Some(std::array::from_fn(|i| self.eigenvectors[k][i].re))
    }
}

/// Coefficients `c2` of `λ^4 + c2 λ^2 + det D²H`, from Hessian entries.
pub fn c2_from_hessian(hs: &[[f64; 4]; 4]) -> f64 {
    let (x, y, p, q) = (0, 1, 2, 3);
    let h = |i: usize, j: usize| hs[i][j];
    2.0 * h(x, y) * h(p, q) - 2.0 * h(x, q) * h(y, p) + h(y, y) * h(q, q) - h(y, q).powi(2) + h(x, x) * h(p, p)
        - h(x, p).powi(2)
}

/// `±sqrt((-c2 ± sqrt(c2^2 - 4 det)) / 2)` as `[+r1, -r1, +r2, -r2]`.
pub fn closed_form_eigenvalues(c2: f64, det: f64) -> [Complex64; 4] {
    let disc = Complex64::new(c2 * c2 - 4.0 * det, 0.0).sqrt();
    let mu1 = (Complex64::new(-c2, 0.0) + disc) / 2.0;
    let mu2 = (Complex64::new(-c2, 0.0) - disc) / 2.0;
    let (r1, r2) = (mu1.sqrt(), mu2.sqrt());
    [r1, -r1, r2, -r2]
}

pub fn symplectic_j() -> Matrix4<f64> {
    Matrix4::new(
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, 0.0, //
        0.0, -1.0, 0.0, 0.0,
    )
}

fn to_matrix(m: &[[f64; 4]; 4]) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| m[i][j])
}

fn from_matrix(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

/// Linearizes `ξ_H` at the critical point `p0`.
pub fn linearize(spec: &HamiltonianSpec, p0: &PhasePoint) -> Result<Linearization> {
    let g = spec.gradient(p0);
    let gnorm = g.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !(gnorm < CRITICAL_TOL) {
        return Err(Error::Precondition(format!("{p0:?} is not a critical point: |∇H| = {gnorm:e}")));
    }
    let hessian = spec.hessian(p0);
    let hmat = to_matrix(&hessian);
    let lmat = symplectic_j() * hmat;
    let c2 = c2_from_hessian(&hessian);
    let det_hessian = hmat.determinant();
    let closed = closed_form_eigenvalues(c2, det_hessian);

    let numeric: Vec<Complex64> = lmat.complex_eigenvalues().iter().copied().collect();
    let (paired, discrepancy) = pair_eigenvalues(&closed, &numeric);
    let scale = closed.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let disc_real = c2 * c2 - 4.0 * det_hessian >= 0.0;
    if disc_real && discrepancy > 1e-8 * scale {
        return Err(Error::Spectrum(format!(
            "closed-form and numerical eigenvalues disagree by {discrepancy:e}"
        )));
    }

    let tiny = 1e-12 * scale;
    let degenerate = closed.iter().any(|z| z.norm() <= tiny) || det_hessian.abs() <= 1e-14 * scale.powi(4);
    let complex = closed.iter().any(|z| z.im.abs() > 1e-9 * scale);
    let hyperbolic = !degenerate && closed.iter().all(|z| z.re.abs() > tiny);
    let spectrum = if degenerate {
        SpectrumKind::Degenerate
    } else if complex {
        SpectrumKind::Complex
    } else if (closed[0].re.abs() - closed[2].re.abs()).abs() <= 1e-9 * scale {
        SpectrumKind::RealRepeated
    } else {
        SpectrumKind::RealDistinct
    };

    let (eigenvalues, closed_sorted, eigenvectors) = match spectrum {
        SpectrumKind::RealDistinct | SpectrumKind::RealRepeated => {
            let real: [f64; 4] = std::array::from_fn(|i| paired[i].re);
            let (order, vecs) = real_eigenvectors(&lmat, &real)?;
            let ev: [Complex64; 4] = std::array::from_fn(|k| Complex64::new(real[order[k]], 0.0));
            let cf: [Complex64; 4] = std::array::from_fn(|k| closed[order[k]]);
            let vc: [[Complex64; 4]; 4] =
                std::array::from_fn(|k| std::array::from_fn(|i| Complex64::new(vecs[k][i], 0.0)));
            (ev, cf, vc)
        }
        _ => {
            let vc: [[Complex64; 4]; 4] = std::array::from_fn(|k| complex_null_vector(&lmat, paired[k]));
            (paired, closed, vc)
        }
    };

    Ok(Linearization {
        point: *p0,
        matrix: from_matrix(&lmat),
        hessian,
        c2,
        det_hessian,
        eigenvalues,
        closed_form_eigenvalues: closed_sorted,
        eigenvectors,
        eigen_discrepancy: discrepancy,
        hyperbolic,
        spectrum,
    })
}

/// Greedy nearest pairing; returns numeric values reordered to match `closed`.
fn pair_eigenvalues(closed: &[Complex64; 4], numeric: &[Complex64]) -> ([Complex64; 4], f64) {
    let mut used = [false; 4];
    let mut out = [Complex64::new(0.0, 0.0); 4];
    let mut worst: f64 = 0.0;
    for (k, c) in closed.iter().enumerate() {
        let (j, d) = numeric
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, z)| (j, (z - c).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("four eigenvalues");
        used[j] = true;
        out[k] = numeric[j];
        worst = worst.max(d);
    }
    (out, worst)
}

/// Eigenvectors for a real spectrum, labelled `v1..v4` (`a, -b, -a, b`).
///
/// Returns the permutation of the input eigenvalues giving that order and
/// the vectors, each scaled so that its dominant base component is `+1`.
fn real_eigenvectors(lmat: &Matrix4<f64>, vals: &[f64; 4]) -> Result<([usize; 4], [[f64; 4]; 4])> {
    let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut vecs: [Option<[f64; 4]>; 4] = [None; 4];
    let mut done = [false; 4];
    for i in 0..4 {
        if done[i] {
            continue;
        }
        let group: Vec<usize> = (0..4).filter(|&j| !done[j] && (vals[j] - vals[i]).abs() <= 1e-9 * scale).collect();
        let shifted = lmat - Matrix4::identity() * vals[i];
        let svd = shifted.svd(false, true);
        let vt = svd.v_t.ok_or_else(|| Error::Spectrum("SVD failed".into()))?;
        // Singular values are sorted descending; the null space is at the end.
        let mut basis: Vec<[f64; 4]> =
            (0..group.len()).map(|r| std::array::from_fn(|c| vt[(3 - r, c)])).collect();
        if basis.len() == 2 {
            // Rotate so the projections are the coordinate directions.
            let m = nalgebra::Matrix2::new(basis[0][0], basis[1][0], basis[0][1], basis[1][1]);
            if let Some(inv) = m.try_inverse() {
                let b0 = basis[0];
                let b1 = basis[1];
                basis = (0..2)
                    .map(|c| std::array::from_fn(|k| b0[k] * inv[(0, c)] + b1[k] * inv[(1, c)]))
                    .collect();
            }
        }
        for (slot, v) in group.iter().zip(basis) {
            vecs[*slot] = Some(normalize_eigenvector(v));
            done[*slot] = true;
        }
    }
    let vecs: [[f64; 4]; 4] = std::array::from_fn(|i| vecs[i].expect("all eigenvectors assigned"));

    let pos: Vec<usize> = (0..4).filter(|&i| vals[i] > 0.0).collect();
    let neg: Vec<usize> = (0..4).filter(|&i| vals[i] < 0.0).collect();
    if pos.len() != 2 || neg.len() != 2 {
        return Err(Error::Spectrum(format!("expected two positive and two negative eigenvalues, got {vals:?}")));
    }
    let x_weight = |i: usize| vecs[i][0].abs() - vecs[i][1].abs();
    let (v1, v4) = if x_weight(pos[0]) >= x_weight(pos[1]) { (pos[0], pos[1]) } else { (pos[1], pos[0]) };
    let a = vals[v1];
    let (v3, v2) = if (vals[neg[0]] + a).abs() <= (vals[neg[1]] + a).abs() {
        (neg[0], neg[1])
    } else {
        (neg[1], neg[0])
    };
    let order = [v1, v2, v3, v4];
    Ok((order, std::array::from_fn(|k| vecs[order[k]])))
}

fn normalize_eigenvector(v: [f64; 4]) -> [f64; 4] {
    let pivot = if v[0].abs().max(v[1].abs()) > 1e-10 {
        if v[0].abs() >= v[1].abs() { v[0] } else { v[1] }
    } else {
        *v.iter().max_by(|a, b| a.abs().total_cmp(&b.abs())).expect("non-empty")
    };
    v.map(|c| c / pivot)
}

fn complex_null_vector(lmat: &Matrix4<f64>, lambda: Complex64) -> [Complex64; 4] {
    let m: Matrix4<Complex64> =
        Matrix4::from_fn(|i, j| Complex64::new(lmat[(i, j)], 0.0) - if i == j { lambda } else { Complex64::new(0.0, 0.0) });
    let svd = m.svd(false, true);
    match svd.v_t {
        Some(vt) => {
            let v: Vector4<Complex64> = Vector4::from_fn(|c, _| vt[(3, c)].conj());
            let pivot = *v.iter().max_by(|a, b| a.norm().total_cmp(&b.norm())).expect("non-empty");
            std::array::from_fn(|i| v[i] / pivot)
        }
        None => [Complex64::new(f64::NAN, 0.0); 4],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneRole {
    /// Both eigenvalues positive: tangent to the unstable manifold.
    Unstable,
    /// Both eigenvalues negative: tangent to the stable manifold.
    Stable,
    /// Mixed signs and Lagrangian: tangent to saddle-type jets.
    Saddle,
    /// `ω` does not vanish; never tangent to a jet.
    NonLagrangian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneRecord {
    /// 1-based eigenvector labels.
    pub vectors: [usize; 2],
    pub eigenvalues: [f64; 2],
    pub omega_value: f64,
    pub lagrangian: bool,
    pub projection_det: f64,
    pub projectable: bool,
    pub role: PlaneRole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneReport {
    pub planes: Vec<PlaneRecord>,
}

impl PlaneReport {
    pub fn plane(&self, i: usize, j: usize) -> Option<&PlaneRecord> {
        let key = if i < j { [i, j] } else { [j, i] };
        self.planes.iter().find(|p| p.vectors == key)
    }
}

pub const PLANE_TOL: f64 = 1e-9;

/// The six invariant 2-planes spanned by pairs of eigenvectors.
pub fn classify_invariant_planes(lin: &Linearization, tol: f64) -> Result<PlaneReport> {
    match lin.spectrum {
        SpectrumKind::RealDistinct => {}
        SpectrumKind::RealRepeated => {
            return Err(Error::Ambiguous(format!(
                "a = b = {}: every plane inside an eigenspace is invariant",
                lin.eigenvalues[0].re
            )))
        }
        SpectrumKind::Complex => return Err(Error::Spectrum("complex spectrum".into())),
        SpectrumKind::Degenerate => return Err(Error::Spectrum("degenerate Hessian".into())),
    }
    let v: [[f64; 4]; 4] = std::array::from_fn(|k| lin.real_eigenvector(k).expect("real spectrum"));
    let lam: [f64; 4] = std::array::from_fn(|k| lin.eigenvalues[k].re);
    let mut planes = Vec::with_capacity(6);
    for i in 0..4 {
        for j in i + 1..4 {
            let w = omega(&v[i], &v[j]);
            let det = v[i][0] * v[j][1] - v[i][1] * v[j][0];
            let lagrangian = w.abs() < tol;
            let role = if !lagrangian {
                PlaneRole::NonLagrangian
            } else if lam[i] > 0.0 && lam[j] > 0.0 {
                PlaneRole::Unstable
            } else if lam[i] < 0.0 && lam[j] < 0.0 {
                PlaneRole::Stable
            } else {
                PlaneRole::Saddle
            };
            planes.push(PlaneRecord {
                vectors: [i + 1, j + 1],
                eigenvalues: [lam[i], lam[j]],
                omega_value: w,
                lagrangian,
                projection_det: det,
                projectable: det.abs() > tol,
                role,
            });
        }
    }
    Ok(PlaneReport { planes })
}

/// One admissible quadratic part `z ≈ (A x^2 + 2 B x y + C y^2) / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jet2Candidate {
    #[serde(rename = "A")]
    pub xx: f64,
    #[serde(rename = "B")]
    pub xy: f64,
    #[serde(rename = "C")]
    pub yy: f64,
    /// Rotation angle bringing the candidate to axis-aligned form.
    pub rotation: f64,
}

impl Jet2Candidate {
    /// Residuals of `A²+B²=a²`, `B(A+C)=0`, `B²+C²=b²`.
    pub fn residuals(&self, a: f64, b: f64) -> [f64; 3] {
        [
            self.xx * self.xx + self.xy * self.xy - a * a,
            self.xy * (self.xx + self.yy),
            self.xy * self.xy + self.yy * self.yy - b * b,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jet2Candidates {
    pub a: f64,
    pub b: f64,
    pub candidates: Vec<Jet2Candidate>,
}

/// Second-order parts of solutions of `z_x^2 + z_y^2 = a^2 x^2 + b^2 y^2 + O(3)`.
///
/// `theta` requests the rotated family, which exists only when `a = b`.
pub fn classify_second_order(a: f64, b: f64, theta: Option<f64>) -> Result<Jet2Candidates> {
    check_ab(a, b).map_err(|e| Error::Precondition(e.to_string()))?;
    let mut candidates = Vec::new();
    for sa in [1.0, -1.0] {
        for sc in [1.0, -1.0] {
            candidates.push(Jet2Candidate { xx: sa * a, xy: 0.0, yy: sc * b, rotation: 0.0 });
        }
    }
    if let Some(theta) = theta {
        if (a - b).abs() > 1e-12 * a.max(b) {
            return Err(Error::Precondition(format!("rotated candidates need a = b, got a = {a}, b = {b}")));
        }
        if !(-1.0..=1.0).contains(&theta) || theta == 0.0 {
            return Err(Error::Precondition(format!("theta must lie in [-1, 1] \\ {{0}}, got {theta}")));
        }
        let root = (1.0 - theta * theta).sqrt();
        let rotation = (theta / (1.0 + root)).atan();
        for s in [1.0, -1.0] {
            let c = Jet2Candidate { xx: s * a * root, xy: a * theta, yy: -s * a * root, rotation };
            if !candidates.contains(&c) {
                candidates.push(c);
            }
        }
    }
    Ok(Jet2Candidates { a, b, candidates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, SQRT_2};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn eval_examples() {
        let m = HamiltonianSpec::model_quadratic(1.0, 1.0).unwrap();
        assert_eq!(m.value(&PhasePoint::ORIGIN).unwrap(), 0.0);
        let m = HamiltonianSpec::model_quadratic(1.0, 2.0).unwrap();
        assert_eq!(m.value(&PhasePoint::new(1.0, 0.0, 1.0, 0.0)).unwrap(), 0.0);
        let nf = HamiltonianSpec::normal_form(NormalFormFn::Product { c: 1.0 }, 1.0, 1.0).unwrap();
        assert_eq!(nf.value(&PhasePoint::new(0.0, 0.0, 1.0, 1.0)).unwrap(), 1.5);
    }

    #[test]
    fn non_finite_input_or_output_is_rejected() {
        let m = HamiltonianSpec::model_quadratic(1.0, 1.0).unwrap();
        assert!(m.value(&PhasePoint::new(f64::NAN, 0.0, 0.0, 0.0)).is_err());
        let nf = HamiltonianSpec::normal_form(NormalFormFn::Exp, 1.0, 1.0).unwrap();
        assert!(matches!(nf.value(&PhasePoint::new(0.0, 0.0, 1e3, 0.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn normal_form_constraints_checked() {
        assert!(HamiltonianSpec::normal_form(NormalFormFn::Exp, 1.0, 2.0).is_ok());
        let bad = BivariateSeries::from_terms(2, &[(1, 0, 2.0), (0, 1, 1.0)]).unwrap();
        assert!(HamiltonianSpec::normal_form(NormalFormFn::Polynomial { poly: bad }, 1.0, 2.0).is_err());
        let shifted = BivariateSeries::from_terms(2, &[(0, 0, 1e-3), (1, 0, 1.0), (0, 1, 1.0)]).unwrap();
        assert!(HamiltonianSpec::normal_form(NormalFormFn::Polynomial { poly: shifted }, 1.0, 2.0).is_err());
        assert!(HamiltonianSpec::model_quadratic(0.0, 1.0).is_err());
    }

    #[test]
    fn characteristic_field_examples() {
        let (a, b) = (1.3, 0.4);
        let m = HamiltonianSpec::model_quadratic(a, b).unwrap();
        let pt = PhasePoint::new(0.2, -0.7, 0.5, 0.9);
        let xi = m.characteristic_field(&pt).unwrap();
        assert_eq!(xi, [0.5, 0.9, a * a * 0.2, b * b * -0.7]);

        let nf = HamiltonianSpec::normal_form(NormalFormFn::Product { c: 1.0 }, a, b).unwrap();
        let (u, v) = (pt.p * pt.p - a * a * pt.x * pt.x, pt.q * pt.q - b * b * pt.y * pt.y);
        let (fu, fv) = (1.0 + v, 1.0 + u);
        let xi = nf.characteristic_field(&pt).unwrap();
        let want = [fu * pt.p, fv * pt.q, a * a * fu * pt.x, b * b * fv * pt.y];
        for i in 0..4 {
            assert!(close(xi[i], want[i], 1e-15));
        }
        assert_eq!(nf.characteristic_field(&PhasePoint::ORIGIN).unwrap(), [0.0; 4]);
    }

    #[test]
    fn analytic_hessian_matches_finite_differences() {
        let nf = HamiltonianSpec::normal_form(NormalFormFn::Exp, 0.8, 1.7).unwrap();
        let fd = nf.clone().with_finite_differences(1e-4);
        let pt = PhasePoint::new(0.1, -0.2, 0.3, 0.05);
        let (ha, hf) = (nf.hessian(&pt), fd.hessian(&pt));
        for i in 0..4 {
            for j in 0..4 {
                assert!(close(ha[i][j], hf[i][j], 1e-5), "{i}{j}: {} vs {}", ha[i][j], hf[i][j]);
            }
        }
        let (ga, gf) = (nf.gradient(&pt), fd.gradient(&pt));
        for i in 0..4 {
            assert!(close(ga[i], gf[i], 1e-7));
        }
    }

    #[test]
    fn model_linearization() {
        let (a, b) = (1.0, SQRT_2);
        let m = HamiltonianSpec::model_quadratic(a, b).unwrap();
        let lin = linearize(&m, &PhasePoint::ORIGIN).unwrap();
        assert_eq!(lin.spectrum, SpectrumKind::RealDistinct);
        assert!(lin.hyperbolic);
        assert!(close(lin.c2, -3.0, 1e-15));
        assert!(close(lin.det_hessian, 2.0, 1e-12));
        let want_vals = [a, -b, -a, b];
        let want_vecs = [[1.0, 0.0, a, 0.0], [0.0, 1.0, 0.0, -b], [1.0, 0.0, -a, 0.0], [0.0, 1.0, 0.0, b]];
        for k in 0..4 {
            assert!(close(lin.eigenvalues[k].re, want_vals[k], 1e-12));
            let v = lin.real_eigenvector(k).unwrap();
            for i in 0..4 {
                assert!(close(v[i], want_vecs[k][i], 1e-10), "v{} = {v:?}", k + 1);
            }
        }
        assert!(linearize(&m, &PhasePoint::new(0.1, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn separated_eikonal_spectrum_is_real() {
        // f = (p^2 + 0.5 pq + q^2)/2 ... positive definite; h positive definite.
        let f = BivariateSeries::from_terms(2, &[(2, 0, 0.5), (1, 1, 0.25), (0, 2, 0.5)]).unwrap();
        let h = BivariateSeries::from_terms(3, &[(2, 0, 1.0), (1, 1, 0.3), (0, 2, 2.0), (3, 0, 0.7)]).unwrap();
        let spec = HamiltonianSpec::separated_eikonal(f, h);
        let lin = linearize(&spec, &PhasePoint::ORIGIN).unwrap();
        assert_eq!(lin.spectrum, SpectrumKind::RealDistinct);
        let (a, b) = lin.rates().unwrap();
        assert!(a > 0.0 && b > 0.0);
        for k in 0..4 {
            let v = lin.real_eigenvector(k).unwrap();
            let lv = Matrix4::from_fn(|i, j| lin.matrix[i][j]) * Vector4::from(v);
            for i in 0..4 {
                assert!(close(lv[i], lin.eigenvalues[k].re * v[i], 1e-10));
            }
        }
    }

    #[test]
    fn complex_spectrum_is_flagged() {
        // H = p q + (x^2 - y^2)/2 style coupling with rotation gives complex pairs.
        let spec = HamiltonianSpec::generic(
            "focus",
            Arc::new(|pt: &PhasePoint| pt.x * pt.q - pt.y * pt.p + 0.5 * (pt.x * pt.p + pt.y * pt.q)),
            1e-5,
        );
        let lin = linearize(&spec, &PhasePoint::ORIGIN).unwrap();
        assert_eq!(lin.spectrum, SpectrumKind::Complex);
        assert!(matches!(classify_invariant_planes(&lin, PLANE_TOL), Err(Error::Spectrum(_))));
    }

    #[test]
    fn degenerate_hessian_is_flagged() {
        let spec = HamiltonianSpec::generic("degenerate", Arc::new(|pt: &PhasePoint| 0.5 * (pt.p * pt.p - pt.x * pt.x)), 1e-5);
        let lin = linearize(&spec, &PhasePoint::ORIGIN).unwrap();
        assert_eq!(lin.spectrum, SpectrumKind::Degenerate);
        assert!(!lin.hyperbolic);
    }

    #[test]
    fn plane_classification_model() {
        let (a, b) = (1.0, SQRT_2);
        let lin = linearize(&HamiltonianSpec::model_quadratic(a, b).unwrap(), &PhasePoint::ORIGIN).unwrap();
        let rep = classify_invariant_planes(&lin, PLANE_TOL).unwrap();
        assert_eq!(rep.planes.len(), 6);
        assert!(close(rep.plane(1, 3).unwrap().omega_value, 2.0 * a, 1e-12));
        assert!(close(rep.plane(2, 4).unwrap().omega_value, -2.0 * b, 1e-12));
        for (i, j) in [(1, 2), (3, 4), (1, 4), (2, 3)] {
            let p = rep.plane(i, j).unwrap();
            assert!(p.lagrangian && p.projectable, "{i}{j}");
        }
        assert_eq!(rep.plane(1, 4).unwrap().role, PlaneRole::Unstable);
        assert_eq!(rep.plane(2, 3).unwrap().role, PlaneRole::Stable);
        assert_eq!(rep.plane(1, 2).unwrap().role, PlaneRole::Saddle);
        assert_eq!(rep.plane(3, 4).unwrap().role, PlaneRole::Saddle);
    }

    #[test]
    fn repeated_eigenvalues_are_ambiguous() {
        let lin = linearize(&HamiltonianSpec::model_quadratic(1.0, 1.0).unwrap(), &PhasePoint::ORIGIN).unwrap();
        assert_eq!(lin.spectrum, SpectrumKind::RealRepeated);
        // Eigenvectors are still the canonical ones.
        assert_eq!(lin.real_eigenvector(0).unwrap().map(|c| (c * 1e9).round() / 1e9), [1.0, 0.0, 1.0, 0.0]);
        assert!(matches!(classify_invariant_planes(&lin, PLANE_TOL), Err(Error::Ambiguous(_))));
    }

    #[test]
    fn second_order_candidates() {
        let c = classify_second_order(1.0, 2.0, None).unwrap();
        let got: Vec<_> = c.candidates.iter().map(|k| (k.xx, k.xy, k.yy)).collect();
        assert_eq!(got, vec![(1.0, 0.0, 2.0), (1.0, 0.0, -2.0), (-1.0, 0.0, 2.0), (-1.0, 0.0, -2.0)]);
        assert!(classify_second_order(1.0, 2.0, Some(0.5)).is_err());

        let c = classify_second_order(1.0, 1.0, Some(1.0)).unwrap();
        let rot: Vec<_> = c.candidates.iter().filter(|k| k.xy != 0.0).collect();
        assert_eq!(rot.len(), 1);
        assert!(close(rot[0].xx, 0.0, 1e-15) && rot[0].xy == 1.0 && close(rot[0].yy, 0.0, 1e-15));
        assert!(close(rot[0].rotation, FRAC_PI_4, 1e-15));

        let c = classify_second_order(1.0, 1.0, Some(1e-9)).unwrap();
        assert!(c.candidates.iter().all(|k| k.rotation.abs() < 1e-9));
        assert!(classify_second_order(1.0, 1.0, Some(0.0)).is_err());
        assert!(classify_second_order(-1.0, 1.0, None).is_err());
    }
}
