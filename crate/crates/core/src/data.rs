//! One-variable data functions `φ` with a declared vanishing order at 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::SaddleSign;

/// How a monomial `c s^l` is continued to `s < 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    /// `φ(-s) = φ(s)`
    Even,
    /// `φ(-s) = -φ(s)`
    #[default]
    Odd,
}

/// Vanishing order at the origin; `Infinite` for flat functions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Order {
    Finite(f64),
    Infinite,
}

impl Order {
    pub fn as_f64(self) -> f64 {
        match self {
            Order::Finite(l) => l,
            Order::Infinite => f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataFunctionSpec {
    Zero,
    /// `c |s|^l`, continued to `s < 0` by `extension`.
    Monomial {
        c: f64,
        l: f64,
        #[serde(default)]
        extension: Extension,
    },
    /// `c exp(-w^2 / (w^2 - (|s| - s0)^2))` on `| |s| - s0 | < w`, zero elsewhere;
    /// needs `s0 > w` so it vanishes identically near 0.
    SmoothBump { c: f64, center: f64, width: f64 },
    /// Piecewise-linear interpolation of samples (sorted by `s`), zero outside.
    Table { samples: Vec<(f64, f64)>, order: f64 },
    /// `factor * inner(s)`.
    Scaled { factor: f64, inner: Box<DataFunctionSpec> },
}

impl DataFunctionSpec {
    pub fn monomial(c: f64, l: f64) -> Self {
        DataFunctionSpec::Monomial { c, l, extension: Extension::Odd }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DataFunctionSpec::Zero => Ok(()),
            DataFunctionSpec::Monomial { c, l, .. } => {
                if !c.is_finite() || !(*l >= 1.0) || !l.is_finite() {
                    return Err(Error::Validation(format!("monomial needs finite c and l >= 1, got c = {c}, l = {l}")));
                }
                Ok(())
            }
            DataFunctionSpec::SmoothBump { c, center, width } => {
                if !c.is_finite() || !(*width > 0.0) || !(*center > *width) || !center.is_finite() {
                    return Err(Error::Validation(format!(
                        "bump needs center > width > 0, got center = {center}, width = {width}"
                    )));
                }
                Ok(())
            }
            DataFunctionSpec::Table { samples, order } => {
                if !(*order >= 1.0) {
                    return Err(Error::Validation(format!("table needs a declared order >= 1, got {order}")));
                }
                if samples.len() < 2 {
                    return Err(Error::Validation("table needs at least two samples".into()));
                }
                if samples.iter().any(|(s, v)| !s.is_finite() || !v.is_finite()) {
                    return Err(Error::Validation("table samples must be finite".into()));
                }
                if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::Validation("table samples must be strictly increasing in s".into()));
                }
                if let Some((_, v)) = samples.iter().find(|(s, _)| *s == 0.0) {
                    if *v != 0.0 {
                        return Err(Error::Validation(format!("table has φ(0) = {v}, must be 0")));
                    }
                }
                Ok(())
            }
            DataFunctionSpec::Scaled { factor, inner } => {
                if !factor.is_finite() {
                    return Err(Error::Validation(format!("scale factor {factor} is not finite")));
                }
                inner.validate()
            }
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            DataFunctionSpec::Zero => 0.0,
            DataFunctionSpec::Monomial { c, l, extension } => {
                let v = c * s.abs().powf(*l);
                if s < 0.0 && *extension == Extension::Odd {
                    -v
                } else {
                    v
                }
            }
            DataFunctionSpec::SmoothBump { c, center, width } => {
                let d = s.abs() - center;
                if d.abs() >= *width {
                    0.0
                } else {
                    c * (-width * width / (width * width - d * d)).exp()
                }
            }
            DataFunctionSpec::Table { samples, .. } => {
                let first = samples[0].0;
                let last = samples[samples.len() - 1].0;
                if s < first || s > last {
                    return 0.0;
                }
                let k = samples.partition_point(|(x, _)| *x <= s).clamp(1, samples.len() - 1);
                let (s0, v0) = samples[k - 1];
                let (s1, v1) = samples[k];
                v0 + (v1 - v0) * (s - s0) / (s1 - s0)
            }
            DataFunctionSpec::Scaled { factor, inner } => factor * inner.eval(s),
        }
    }

    pub fn vanishing_order(&self) -> Order {
        match self {
            DataFunctionSpec::Zero | DataFunctionSpec::SmoothBump { .. } => Order::Infinite,
            DataFunctionSpec::Monomial { c, l, .. } => {
                if *c == 0.0 {
                    Order::Infinite
                } else {
                    Order::Finite(*l)
                }
            }
            DataFunctionSpec::Table { order, .. } => Order::Finite(*order),
            DataFunctionSpec::Scaled { factor, inner } => {
                if *factor == 0.0 {
                    Order::Infinite
                } else {
                    inner.vanishing_order()
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            DataFunctionSpec::Zero => true,
            DataFunctionSpec::Monomial { c, .. } | DataFunctionSpec::SmoothBump { c, .. } => *c == 0.0,
            DataFunctionSpec::Table { samples, .. } => samples.iter().all(|(_, v)| *v == 0.0),
            DataFunctionSpec::Scaled { factor, inner } => *factor == 0.0 || inner.is_zero(),
        }
    }

    /// `factor * self`, folding the factor into monomials and nested scalings.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            DataFunctionSpec::Zero => DataFunctionSpec::Zero,
            DataFunctionSpec::Monomial { c, l, extension } => {
                DataFunctionSpec::Monomial { c: c * factor, l: *l, extension: *extension }
            }
            DataFunctionSpec::Scaled { factor: f, inner } => {
                DataFunctionSpec::Scaled { factor: f * factor, inner: inner.clone() }
            }
            other => DataFunctionSpec::Scaled { factor, inner: Box::new(other.clone()) },
        }
    }
}

/// `ψ = ∓(a²/b²) φ` for the branch `±` of the model case.
pub fn psi_model(a: f64, b: f64, phi: &DataFunctionSpec, branch: SaddleSign) -> DataFunctionSpec {
    phi.scaled(-branch.value() * a * a / (b * b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Regularity {
    Finite(i64),
    Infinite,
}

/// `n = ceil(min((l+1)a, (l+1)b) / (a+b)) - 1`.
pub fn predicted_regularity(a: f64, b: f64, l: Order) -> Result<Regularity> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Validation(format!("a and b must be positive, got a = {a}, b = {b}")));
    }
    match l {
        Order::Infinite => Ok(Regularity::Infinite),
        Order::Finite(l) if l.is_infinite() => Ok(Regularity::Infinite),
        Order::Finite(l) => {
            let m = (l + 1.0) * a.min(b) / (a + b);
            Ok(Regularity::Finite(ceil_robust(m) as i64 - 1))
        }
    }
}

// Values within a few ulps of an integer are snapped, so a = b, l = 1 gives
// ceil(1) = 1 rather than 2 after roundoff.
fn ceil_robust(m: f64) -> f64 {
    let r = m.round();
    if (m - r).abs() <= 8.0 * f64::EPSILON * m.abs().max(1.0) {
        r
    } else {
        m.ceil()
    }
}

/// True when `l min(a,b) <= max(a,b)`, i.e. the saddle surface is not C¹ along an axis.
pub fn regularity_warning(a: f64, b: f64, l: Order) -> bool {
    let l = l.as_f64();
    l.is_finite() && l * a.min(b) <= a.max(b)
}

/// `E(u, v) = u^(α-1) v^β φ(u^α v^β)` on the open first quadrant, 0 elsewhere.
#[allow(non_snake_case)]
pub fn eval_E(phi: &DataFunctionSpec, alpha: f64, beta: f64, u: f64, v: f64) -> f64 {
    if u <= 0.0 || v <= 0.0 {
        return 0.0;
    }
    let val = phi.eval(u.powf(alpha) * v.powf(beta));
    if val == 0.0 {
        return 0.0;
    }
    u.powf(alpha - 1.0) * v.powf(beta) * val
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    #[test]
    fn psi_examples() {
        let phi = DataFunctionSpec::monomial(1.0, 3.0);
        let psi = psi_model(1.0, SQRT_2, &phi, SaddleSign::Plus);
        for s in [0.1, 0.5, -0.3] {
            assert!((psi.eval(s) + 0.5 * phi.eval(s)).abs() < 1e-15);
        }
        assert_eq!(psi_model(1.0, 2.0, &DataFunctionSpec::Zero, SaddleSign::Plus), DataFunctionSpec::Zero);
        let psi = psi_model(2.0, 1.0, &DataFunctionSpec::monomial(1.0, 5.0), SaddleSign::Minus);
        assert_eq!(psi.eval(0.5), 4.0 * 0.5f64.powi(5));
    }

    #[test]
    fn regularity_examples() {
        assert_eq!(predicted_regularity(1.0, SQRT_2, Order::Finite(5.0)).unwrap(), Regularity::Finite(2));
        for l in 1..12 {
            let want = ((l as f64 + 1.0) / 2.0).ceil() as i64 - 1;
            assert_eq!(predicted_regularity(0.7, 0.7, Order::Finite(l as f64)).unwrap(), Regularity::Finite(want));
        }
        assert_eq!(predicted_regularity(1.0, 2.0, Order::Infinite).unwrap(), Regularity::Infinite);
        assert!(regularity_warning(1.0, 3.0, Order::Finite(2.0)));
        assert!(!regularity_warning(1.0, SQRT_2, Order::Finite(5.0)));
    }

    #[test]
    fn e_function() {
        let phi = DataFunctionSpec::monomial(1.0, 2.0);
        let (u, v) = (0.3, 0.7);
        assert!((eval_E(&phi, 0.5, 0.5, u, v) - u.sqrt() * v.powf(1.5)).abs() < 1e-15);
        assert_eq!(eval_E(&phi, 0.5, 0.5, 0.0, v), 0.0);
        assert_eq!(eval_E(&phi, 0.5, 0.5, u, -1.0), 0.0);
        assert_eq!(eval_E(&DataFunctionSpec::Zero, 0.5, 0.5, u, v), 0.0);
    }

    #[test]
    fn bump_is_flat_near_origin() {
        let b = DataFunctionSpec::SmoothBump { c: 2.0, center: 0.3, width: 0.1 };
        b.validate().unwrap();
        assert_eq!(b.eval(0.15), 0.0);
        assert!((b.eval(0.3) - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(b.eval(-0.3), b.eval(0.3));
        assert!(DataFunctionSpec::SmoothBump { c: 1.0, center: 0.1, width: 0.2 }.validate().is_err());
    }

    #[test]
    fn table_interpolates() {
        let t = DataFunctionSpec::Table { samples: vec![(0.0, 0.0), (1.0, 2.0), (2.0, 0.0)], order: 1.0 };
        t.validate().unwrap();
        assert_eq!(t.eval(0.5), 1.0);
        assert_eq!(t.eval(1.5), 1.0);
        assert_eq!(t.eval(3.0), 0.0);
        let bad = DataFunctionSpec::Table { samples: vec![(0.0, 1.0), (1.0, 2.0)], order: 1.0 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn monomial_extension() {
        let odd = DataFunctionSpec::monomial(1.0, 2.0);
        let even = DataFunctionSpec::Monomial { c: 1.0, l: 2.0, extension: Extension::Even };
        assert_eq!(odd.eval(-0.5), -0.25);
        assert_eq!(even.eval(-0.5), 0.25);
    }
}
