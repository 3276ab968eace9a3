//! Truncated bivariate power series and the saddle-series recursion for
//! `z_x^2 + z_y^2 = h`.
//!
//! A [`BivariateSeries`] stores every coefficient `c[m][n]` with
//! `m + n <= N` in a dense triangular layout. Products are truncated at a
//! caller-supplied total degree.
//!
//! The saddle solver fixes the quadratic part `±(a x^2 - b y^2) / 2` and then
//! determines the degree-`d` coefficients one degree at a time. For the
//! monomial `x^m y^n` the unknown enters the degree-`d` part of
//! `z_x^2 + z_y^2` only through `±2(m a - n b) z[m][n]`, so every
//! non-resonant coefficient is obtained by one division. The remaining
//! contributions are read off the partially built product rather than from
//! closed-form polynomials.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Truncated power series `sum c[m][n] x^m y^n` over `m + n <= N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "SeriesRepr", try_from = "SeriesRepr")]
pub struct BivariateSeries {
    order: usize,
    coeffs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesRepr {
    #[serde(rename = "N")]
    order: usize,
    coeffs: Vec<(usize, usize, f64)>,
}

impl From<BivariateSeries> for SeriesRepr {
    fn from(s: BivariateSeries) -> Self {
        SeriesRepr {
            order: s.order,
            coeffs: s.terms().collect(),
        }
    }
}

impl TryFrom<SeriesRepr> for BivariateSeries {
    type Error = Error;

    fn try_from(r: SeriesRepr) -> Result<Self> {
        let mut s = BivariateSeries::zeros(r.order);
        for (m, n, c) in r.coeffs {
            if m + n > r.order {
                return Err(Error::Validation(format!(
                    "coefficient ({m},{n}) exceeds truncation order {}",
                    r.order
                )));
            }
            if !c.is_finite() {
                return Err(Error::Validation(format!("coefficient ({m},{n}) is not finite")));
            }
            s.coeffs[index(m, n)] += c;
        }
        Ok(s)
    }
}

#[inline]
fn index(m: usize, n: usize) -> usize {
    let d = m + n;
    d * (d + 1) / 2 + n
}

#[inline]
fn len_for(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

impl BivariateSeries {
    pub fn zeros(order: usize) -> Self {
        BivariateSeries {
            order,
            coeffs: vec![0.0; len_for(order)],
        }
    }

    /// Builds a series from `(m, n, c)` triples; repeated monomials add up.
    pub fn from_terms(order: usize, terms: &[(usize, usize, f64)]) -> Result<Self> {
        SeriesRepr {
            order,
            coeffs: terms.to_vec(),
        }
        .try_into()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        if m + n > self.order {
            0.0
        } else {
            self.coeffs[index(m, n)]
        }
    }

    /// Sets a coefficient. Monomials above the truncation order are dropped.
    pub fn set(&mut self, m: usize, n: usize, c: f64) {
        if m + n <= self.order {
            self.coeffs[index(m, n)] = c;
        }
    }

    /// Non-zero coefficients as `(m, n, c)`, ordered by degree then by `n`.
    pub fn terms(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..=self.order).flat_map(move |d| {
            (0..=d).filter_map(move |n| {
                let c = self.coeffs[index(d - n, n)];
                (c != 0.0).then_some((d - n, n, c))
            })
        })
    }

    /// Coefficients of total degree `d`, indexed by the power of `y`.
    pub fn degree_part(&self, d: usize) -> Vec<f64> {
        if d > self.order {
            return vec![0.0; d + 1];
        }
        let start = index(d, 0);
        self.coeffs[start..start + d + 1].to_vec()
    }

    pub fn truncate(&self, order: usize) -> Self {
        let mut out = BivariateSeries::zeros(order);
        let keep = len_for(order.min(self.order));
        out.coeffs[..keep].copy_from_slice(&self.coeffs[..keep]);
        out
    }

    pub fn derivative_x(&self) -> Self {
        let mut out = BivariateSeries::zeros(self.order.saturating_sub(1));
        for d in 1..=self.order {
            for n in 0..d {
                let m = d - n;
                out.coeffs[index(m - 1, n)] = m as f64 * self.coeffs[index(m, n)];
            }
        }
        out
    }

    pub fn derivative_y(&self) -> Self {
        let mut out = BivariateSeries::zeros(self.order.saturating_sub(1));
        for d in 1..=self.order {
            for n in 1..=d {
                let m = d - n;
                out.coeffs[index(m, n - 1)] = n as f64 * self.coeffs[index(m, n)];
            }
        }
        out
    }

    /// Degree-`d` coefficients of `self * other`.
    pub fn product_degree(&self, other: &Self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d + 1];
        for d1 in 0..=d.min(self.order) {
            let d2 = d - d1;
            if d2 > other.order {
                continue;
            }
            for n1 in 0..=d1 {
                let c1 = self.coeffs[index(d1 - n1, n1)];
                if c1 == 0.0 {
                    continue;
                }
                for n2 in 0..=d2 {
                    out[n1 + n2] += c1 * other.coeffs[index(d2 - n2, n2)];
                }
            }
        }
        out
    }

    /// Product truncated at total degree `order`.
    pub fn mul_truncated(&self, other: &Self, order: usize) -> Self {
        let mut out = BivariateSeries::zeros(order);
        for d in 0..=order {
            for (n, c) in self.product_degree(other, d).into_iter().enumerate() {
                out.coeffs[index(d - n, n)] = c;
            }
        }
        out
    }

    /// Linear combination `alpha * self + beta * other`, truncated at `order`.
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64, order: usize) -> Self {
        let mut out = BivariateSeries::zeros(order);
        for d in 0..=order {
            for n in 0..=d {
                let m = d - n;
                out.coeffs[index(m, n)] = alpha * self.get(m, n) + beta * other.get(m, n);
            }
        }
        out
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |acc, c| acc.max(c.abs()))
    }

    /// Evaluates the polynomial (Horner in `y`, then in `x`).
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut acc = 0.0;
        for m in (0..=self.order).rev() {
            let mut row = 0.0;
            for n in (0..=self.order - m).rev() {
                row = row * y + self.coeffs[index(m, n)];
            }
            acc = acc * x + row;
        }
        acc
    }

    /// Value, gradient and Hessian `[[f_xx, f_xy], [f_xy, f_yy]]` of the polynomial.
    pub fn eval_with_derivatives(&self, x: f64, y: f64) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let mut val = 0.0;
        let mut g = [0.0; 2];
        let mut hs = [[0.0; 2]; 2];
        for (m, n, c) in self.terms() {
            let (mi, ni) = (m as i32, n as i32);
            let xm = x.powi(mi);
            let yn = y.powi(ni);
            val += c * xm * yn;
            if m >= 1 {
                let xm1 = x.powi(mi - 1);
                g[0] += c * m as f64 * xm1 * yn;
                if m >= 2 {
                    hs[0][0] += c * (m * (m - 1)) as f64 * x.powi(mi - 2) * yn;
                }
                if n >= 1 {
                    hs[0][1] += c * (m * n) as f64 * xm1 * y.powi(ni - 1);
                }
            }
            if n >= 1 {
                g[1] += c * n as f64 * xm * y.powi(ni - 1);
                if n >= 2 {
                    hs[1][1] += c * (n * (n - 1)) as f64 * xm * y.powi(ni - 2);
                }
            }
        }
        hs[1][0] = hs[0][1];
        (val, g, hs)
    }

    /// Writes `m,n,c` rows (header included) for every non-zero coefficient.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["m", "n", "c"])?;
        for (m, n, c) in self.terms() {
            wtr.write_record([m.to_string(), n.to_string(), c.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Sign of the `x^2` term in the saddle solution `±(a x^2 - b y^2) / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SaddleSign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl SaddleSign {
    pub fn value(self) -> f64 {
        match self {
            SaddleSign::Plus => 1.0,
            SaddleSign::Minus => -1.0,
        }
    }
}

/// One resonant monomial met by the saddle solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceEntry {
    pub m: usize,
    pub n: usize,
    /// `2(m a - n b)`, the divisor of the recursion at this monomial.
    pub gap: f64,
    /// Value that `h[m][n] - (P + Q)` takes; `None` when the degree was not
    /// reached by the solve.
    pub obstruction: Option<f64>,
    pub free_coefficient: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResonanceReport {
    pub entries: Vec<ResonanceEntry>,
    /// Set when some resonant obstruction is non-zero: no formal saddle
    /// solution with this quadratic part exists.
    pub non_existence: bool,
}

#[derive(Clone, Debug)]
pub struct SaddleSeriesOptions {
    /// Threshold on `|2(m a - n b)|` below which a monomial is resonant.
    pub resonance_tol: f64,
    /// Threshold below which a resonant obstruction counts as zero.
    pub obstruction_tol: f64,
    /// Tolerance on the quadratic part of `h`.
    pub quadratic_tol: f64,
    /// Values for free resonant coefficients (default 0).
    pub free_values: BTreeMap<(usize, usize), f64>,
}

impl Default for SaddleSeriesOptions {
    fn default() -> Self {
        SaddleSeriesOptions {
            resonance_tol: 1e-9,
            obstruction_tol: 1e-9,
            quadratic_tol: 1e-10,
            free_values: BTreeMap::new(),
        }
    }
}

/// Saddle-type formal solution of `z_x^2 + z_y^2 = h` through degree `order`.
pub fn solve_saddle_series(
    h: &BivariateSeries,
    a: f64,
    b: f64,
    sign: SaddleSign,
    order: usize,
    opts: &SaddleSeriesOptions,
) -> Result<(BivariateSeries, ResonanceReport)> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::Precondition(format!("a and b must be positive, got a = {a}, b = {b}")));
    }
    if order < 2 {
        return Err(Error::Precondition("truncation order must be at least 2".into()));
    }
    if h.order() < order {
        return Err(Error::Precondition(format!(
            "h is truncated at degree {} < requested {order}",
            h.order()
        )));
    }
    for (m, n) in [(0, 0), (1, 0), (0, 1)] {
        if h.get(m, n).abs() > opts.quadratic_tol {
            return Err(Error::Precondition(format!(
                "h must vanish to second order; coefficient ({m},{n}) = {}",
                h.get(m, n)
            )));
        }
    }
    let quad = [(2, 0, a * a), (1, 1, 0.0), (0, 2, b * b)];
    for (m, n, want) in quad {
        if (h.get(m, n) - want).abs() > opts.quadratic_tol {
            return Err(Error::Precondition(format!(
                "quadratic part of h must be a^2 x^2 + b^2 y^2; coefficient ({m},{n}) is {} but should be {want}",
                h.get(m, n)
            )));
        }
    }

    let sgn = sign.value();
    let mut z = BivariateSeries::zeros(order);
    z.set(2, 0, sgn * a / 2.0);
    z.set(0, 2, -sgn * b / 2.0);

    let mut report = ResonanceReport::default();
    for d in 3..=order {
        // Degree-d coefficients of z are still zero here, so this is P + Q - h.
        let zx = z.derivative_x();
        let zy = z.derivative_y();
        let sq_x = zx.product_degree(&zx, d);
        let sq_y = zy.product_degree(&zy, d);
        let h_d = h.degree_part(d);
        for n in 0..=d {
            let m = d - n;
            let defect = sq_x[n] + sq_y[n] - h_d[n];
            let gap = 2.0 * sgn * (m as f64 * a - n as f64 * b);
            if gap.abs() < opts.resonance_tol {
                let obstruction = -defect;
                let free = obstruction.abs() < opts.obstruction_tol;
                report.non_existence |= !free;
                let value = if free {
                    opts.free_values.get(&(m, n)).copied().unwrap_or(0.0)
                } else {
                    0.0
                };
                z.set(m, n, value);
                report.entries.push(ResonanceEntry {
                    m,
                    n,
                    gap,
                    obstruction: Some(obstruction),
                    free_coefficient: free,
                });
            } else {
                z.set(m, n, -defect / gap);
            }
        }
    }
    Ok((z, report))
}

/// `z_x^2 + z_y^2 - h`, truncated at total degree `order`.
pub fn series_residual(z: &BivariateSeries, h: &BivariateSeries, order: usize) -> BivariateSeries {
    let zx = z.derivative_x();
    let zy = z.derivative_y();
    let sq = zx
        .mul_truncated(&zx, order)
        .combine(1.0, &zy.mul_truncated(&zy, order), 1.0, order);
    sq.combine(1.0, h, -1.0, order)
}

/// All `(m, n)` with `3 <= m + n <= order` and `|m a - n b| < tol`.
pub fn detect_resonances(a: f64, b: f64, order: usize, tol: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for d in 3..=order {
        for n in 0..=d {
            let m = d - n;
            if (m as f64 * a - n as f64 * b).abs() < tol {
                out.push((m, n));
            }
        }
    }
    out
}
