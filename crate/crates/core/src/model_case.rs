//! Closed forms for `z_x^2 + z_y^2 = a^2 x^2 + b^2 y^2`.
//!
//! In the coordinates `w1 = (x + p/a)/2`, `w2 = (y - q/b)/2`,
//! `w3 = (x - p/a)/2`, `w4 = (y + q/b)/2` the eigenvectors `v1..v4` are the
//! coordinate directions and the linear flow is diagonal with rates
//! `a, -b, -a, b`.

use rayon::prelude::*;

use crate::data::{regularity_warning, DataFunctionSpec};
use crate::error::{Error, Result};
use crate::hamiltonian::{HamiltonianSpec, PhasePoint};
use crate::series::SaddleSign;
use crate::surface::{Chart, Construction, JetSurface};

/// `[w1, w2, w3, w4]` of a phase point.
pub fn to_w(pt: &PhasePoint, a: f64, b: f64) -> [f64; 4] {
    [
        0.5 * (pt.x + pt.p / a),
        0.5 * (pt.y - pt.q / b),
        0.5 * (pt.x - pt.p / a),
        0.5 * (pt.y + pt.q / b),
    ]
}

/// Inverse of [`to_w`]: `w1 v1 + w2 v2 + w3 v3 + w4 v4`.
pub fn from_w(w: &[f64; 4], a: f64, b: f64) -> PhasePoint {
    PhasePoint::new(w[0] + w[2], w[1] + w[3], a * (w[0] - w[2]), b * (w[3] - w[1]))
}

/// `γ±(s) = s v1 ± s v2 + φ(s) v3 ∓ (a²/b²) φ(s) v4`.
pub fn gamma_model(a: f64, b: f64, phi: &DataFunctionSpec, branch: SaddleSign, s: f64) -> PhasePoint {
    let sg = branch.value();
    let f = phi.eval(s);
    from_w(&[s, sg * s, f, -sg * a * a / (b * b) * f], a, b)
}

/// Exact flow of the model Hamiltonian `(p^2 + q^2 - a^2 x^2 - b^2 y^2)/2`.
pub fn model_linear_flow(a: f64, b: f64, pt: &PhasePoint, t: f64) -> PhasePoint {
    let (ca, sa) = ((a * t).cosh(), (a * t).sinh());
    let (cb, sb) = ((b * t).cosh(), (b * t).sinh());
    PhasePoint::new(
        pt.x * ca + pt.p / a * sa,
        pt.y * cb + pt.q / b * sb,
        a * pt.x * sa + pt.p * ca,
        b * pt.y * sb + pt.q * cb,
    )
}

/// Data of the saddle family: rates and the two branch functions.
#[derive(Clone, Debug, PartialEq)]
pub struct SaddleData {
    pub a: f64,
    pub b: f64,
    pub phi_plus: DataFunctionSpec,
    pub phi_minus: DataFunctionSpec,
}

impl SaddleData {
    pub fn new(a: f64, b: f64, phi_plus: DataFunctionSpec, phi_minus: DataFunctionSpec) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::Validation(format!("a and b must be positive, got a = {a}, b = {b}")));
        }
        phi_plus.validate()?;
        phi_minus.validate()?;
        Ok(SaddleData { a, b, phi_plus, phi_minus })
    }

    pub fn phi(&self, branch: SaddleSign) -> &DataFunctionSpec {
        match branch {
            SaddleSign::Plus => &self.phi_plus,
            SaddleSign::Minus => &self.phi_minus,
        }
    }

    /// Smallest finite vanishing order among non-zero branches.
    pub fn order(&self) -> Option<f64> {
        [&self.phi_plus, &self.phi_minus]
            .iter()
            .filter(|p| !p.is_zero())
            .map(|p| p.vanishing_order().as_f64())
            .filter(|l| l.is_finite())
            .reduce(f64::min)
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, phi) in [("phi_plus", &self.phi_plus), ("phi_minus", &self.phi_minus)] {
            if !phi.is_zero() && regularity_warning(self.a, self.b, phi.vanishing_order()) {
                out.push(format!(
                    "{name}: l * min(a, b) <= max(a, b), the surface is not C^1 along the axes"
                ));
            }
        }
        out
    }

    fn fill_meta(&self, surf: &mut JetSurface) {
        surf.meta.a = Some(self.a);
        surf.meta.b = Some(self.b);
        surf.meta.phi_plus = Some(self.phi_plus.clone());
        surf.meta.phi_minus = Some(self.phi_minus.clone());
        surf.meta.l = self.order();
        surf.meta.warnings.extend(self.warnings());
    }
}

/// Branch for a cell with `w1 = u`, `w2 = v`; `None` on the axes.
pub fn quadrant_branch(u: f64, v: f64) -> Option<SaddleSign> {
    if u == 0.0 || v == 0.0 {
        None
    } else if (u > 0.0) == (v > 0.0) {
        Some(SaddleSign::Plus)
    } else {
        Some(SaddleSign::Minus)
    }
}

/// `(s, t)` with `u = s e^{at}` and `v = ± s e^{-bt}` (sign from the quadrant).
pub fn model_st(a: f64, b: f64, u: f64, v: f64) -> Option<(f64, f64)> {
    quadrant_branch(u, v)?;
    let (lu, lv) = (u.abs().ln(), v.abs().ln());
    let s = u.signum() * ((b * lu + a * lv) / (a + b)).exp();
    Some((s, (lu - lv) / (a + b)))
}

/// `(w3, w4)` of the model saddle surface over `(w1, w2) = (u, v)`.
pub fn model_w34(data: &SaddleData, u: f64, v: f64) -> (f64, f64) {
    let Some(branch) = quadrant_branch(u, v) else {
        return (0.0, 0.0);
    };
    let (a, b) = (data.a, data.b);
    let (lu, lv) = (u.abs().ln(), v.abs().ln());
    let s = u.signum() * ((b * lu + a * lv) / (a + b)).exp();
    let f = data.phi(branch).eval(s);
    if f == 0.0 {
        return (0.0, 0.0);
    }
    let w3 = f * (a * (lv - lu) / (a + b)).exp();
    let w4 = -branch.value() * a * a / (b * b) * f * (b * (lu - lv) / (a + b)).exp();
    (w3, w4)
}

/// The point of the model saddle surface over `(w1, w2) = (u, v)`.
pub fn model_saddle_point(data: &SaddleData, u: f64, v: f64) -> PhasePoint {
    let (w3, w4) = model_w34(data, u, v);
    from_w(&[u, v, w3, w4], data.a, data.b)
}

/// Samples the model saddle surface on a `(w1, w2)` grid.
pub fn model_saddle_surface(data: &SaddleData, us: &[f64], vs: &[f64]) -> Result<JetSurface> {
    let points: Vec<PhasePoint> = us
        .par_iter()
        .flat_map_iter(|u| vs.iter().map(move |v| model_saddle_point(data, *u, *v)))
        .collect();
    let n = points.len();
    let mut surf = JetSurface::new(us.to_vec(), vs.to_vec(), points, vec![true; n], Chart::Uv, Construction::ModelSaddle)?;
    data.fill_meta(&mut surf);
    surf.record_residual(&HamiltonianSpec::model_quadratic(data.a, data.b)?);
    Ok(surf)
}

/// Solves `x = u + w3(u, v)`, `y = v + w4(u, v)` by fixed-point iteration.
pub fn invert_base(data: &SaddleData, x: f64, y: f64) -> Option<(f64, f64)> {
    let (mut u, mut v) = (x, y);
    let tol = 1e-16 * (1.0 + x.abs() + y.abs());
    for _ in 0..500 {
        let (w3, w4) = model_w34(data, u, v);
        let (nu, nv) = (x - w3, y - w4);
        let step = (nu - u).abs().max((nv - v).abs());
        u = nu;
        v = nv;
        if step <= tol {
            return Some((u, v));
        }
    }
    let (w3, w4) = model_w34(data, u, v);
    ((u + w3 - x).abs().max((v + w4 - y).abs()) < 1e-14).then_some((u, v))
}

/// Samples the model saddle surface over a base `(x, y)` grid so that
/// different members of the family can be compared pointwise.
pub fn model_saddle_surface_xy(data: &SaddleData, xs: &[f64], ys: &[f64]) -> Result<JetSurface> {
    let cells: Vec<Option<PhasePoint>> = xs
        .par_iter()
        .flat_map_iter(|x| {
            ys.iter().map(move |y| {
                invert_base(data, *x, *y).map(|(u, v)| {
                    let mut pt = model_saddle_point(data, u, v);
                    // Pin the base exactly to the grid node.
                    pt.x = *x;
                    pt.y = *y;
                    pt
                })
            })
        })
        .collect();
    let valid: Vec<bool> = cells.iter().map(Option::is_some).collect();
    let points = cells.into_iter().map(|c| c.unwrap_or(PhasePoint::ORIGIN)).collect();
    let mut surf = JetSurface::new(xs.to_vec(), ys.to_vec(), points, valid, Chart::Xy, Construction::ModelSaddle)?;
    data.fill_meta(&mut surf);
    let bad = surf.valid.len() - surf.valid_count();
    if bad > 0 {
        surf.meta.warnings.push(format!("{bad} cells did not invert to (w1, w2) and are marked invalid"));
    }
    surf.record_residual(&HamiltonianSpec::model_quadratic(data.a, data.b)?);
    Ok(surf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    fn mono(c: f64, l: f64) -> DataFunctionSpec {
        DataFunctionSpec::monomial(c, l)
    }

    #[test]
    fn w_coordinates_round_trip() {
        let pt = PhasePoint::new(0.3, -0.2, 0.9, 0.4);
        let back = from_w(&to_w(&pt, 1.3, 0.6), 1.3, 0.6);
        assert!(back.distance(&pt) < 1e-15);
        // p^2 - a^2 x^2 = -4 a^2 w1 w3
        let w = to_w(&pt, 1.3, 0.6);
        assert!(((pt.p * pt.p - 1.69 * pt.x * pt.x) + 4.0 * 1.69 * w[0] * w[2]).abs() < 1e-15);
    }

    #[test]
    fn zero_data_gives_quadratic_saddle() {
        let d = SaddleData::new(1.0, SQRT_2, DataFunctionSpec::Zero, DataFunctionSpec::Zero).unwrap();
        let g = [-0.5, -0.1, 0.0, 0.2, 0.5];
        let s = model_saddle_surface(&d, &g, &g).unwrap();
        for (u, v, p) in s.cells() {
            assert_eq!(*p, PhasePoint::new(u, v, u, -SQRT_2 * v));
        }
    }

    #[test]
    fn diagonal_reproduces_gamma() {
        let d = SaddleData::new(1.0, 1.0, mono(1.0, 3.0), mono(0.5, 4.0)).unwrap();
        for s in [0.05, 0.2, 0.7, -0.3] {
            let pt = model_saddle_point(&d, s, s);
            let f = s * s * s;
            let want = PhasePoint::new(s + f, s - f, s - f, -s - f);
            assert!(pt.distance(&want) < 1e-12, "{pt:?} vs {want:?}");
            let g = gamma_model(1.0, 1.0, &d.phi_minus, SaddleSign::Minus, s);
            assert!(model_saddle_point(&d, s, -s).distance(&g) < 1e-12);
        }
    }

    #[test]
    fn cone_residual_and_axes() {
        let d = SaddleData::new(0.7, 1.9, mono(2.0, 3.0), mono(-1.0, 2.5)).unwrap();
        let g: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.05).collect();
        let s = model_saddle_surface(&d, &g, &g).unwrap();
        assert!(s.meta.residual_bound < 1e-12);
        let p = model_saddle_point(&d, 0.0, 0.3);
        assert_eq!(to_w(&p, 0.7, 1.9)[2..], [0.0, 0.0]);
    }

    #[test]
    fn flow_maps_surface_to_itself() {
        let (a, b) = (1.0, SQRT_2);
        let d = SaddleData::new(a, b, mono(1.0, 3.0), mono(1.0, 3.0)).unwrap();
        for (u, v, t) in [(0.2, 0.3, 0.4), (-0.1, 0.25, -0.3), (0.05, -0.4, 1.0)] {
            let moved = model_linear_flow(a, b, &model_saddle_point(&d, u, v), t);
            let want = model_saddle_point(&d, u * (a * t).exp(), v * (-b * t).exp());
            assert!(moved.distance(&want) < 1e-12);
        }
    }

    #[test]
    fn warning_for_low_order() {
        let d = SaddleData::new(1.0, 3.0, mono(1.0, 2.0), DataFunctionSpec::Zero).unwrap();
        assert_eq!(d.warnings().len(), 1);
        let s = model_saddle_surface(&d, &[0.0, 0.1], &[0.0, 0.1]).unwrap();
        assert_eq!(s.meta.warnings.len(), 1);
    }

    #[test]
    fn base_chart_inverts() {
        let d = SaddleData::new(1.0, SQRT_2, mono(1.0, 5.0), mono(-1.0, 5.0)).unwrap();
        let g: Vec<f64> = (-5..=5).map(|i| i as f64 * 0.1).collect();
        let s = model_saddle_surface_xy(&d, &g, &g).unwrap();
        assert_eq!(s.valid_count(), 121);
        assert!(s.meta.residual_bound < 1e-12);
        for (x, y, p) in s.cells() {
            let w = to_w(p, 1.0, SQRT_2);
            let (w3, w4) = model_w34(&d, w[0], w[1]);
            assert!((w[2] - w3).abs() < 1e-14 && (w[3] - w4).abs() < 1e-14, "{x} {y}");
        }
    }
}
