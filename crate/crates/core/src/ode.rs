//! Dormand–Prince 5(4) with embedded error control for autonomous systems in ℝ⁴.

use crate::error::{Error, Result};

pub type State = [f64; 4];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeOptions {
    pub atol: f64,
    pub rtol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    /// Abort when the state leaves this sup-norm ball.
    pub escape_radius: f64,
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions { atol: tol, rtol: tol, ..Self::default() }
    }
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { atol: 1e-10, rtol: 1e-10, max_step: 0.1, max_steps: 1_000_000, escape_radius: 1e8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeOutcome {
    pub state: State,
    pub accepted: usize,
    pub rejected: usize,
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th and the embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[inline]
fn axpy(y: &State, h: f64, terms: &[(f64, &State)]) -> State {
    std::array::from_fn(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
}

/// Integrates `y' = f(y)` from `y0` over time `t` (either sign).
///
/// `project` is applied to every accepted state, e.g. to restore a
/// conserved quantity.
pub fn integrate<F, P>(f: F, y0: State, t: f64, opts: &OdeOptions, project: P) -> Result<OdeOutcome>
where
    F: Fn(&State) -> Result<State>,
    P: Fn(&mut State),
{
    if !t.is_finite() || y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("integration needs finite time and initial state".into()));
    }
    if !(opts.atol > 0.0 && opts.rtol > 0.0) {
        return Err(Error::Precondition(format!("tolerances must be positive, got {opts:?}")));
    }
    let mut out = OdeOutcome { state: y0, accepted: 0, rejected: 0 };
    if t == 0.0 {
        return Ok(out);
    }
    let dir = t.signum();
    let total = t.abs();
    let mut y = y0;
    let mut k1 = f(&y)?;
    let scale = |y: &State, i: usize| opts.atol + opts.rtol * y[i].abs();

    // Initial step from the size of the derivative (Hairer, Nørsett, Wanner).
    let d0 = (0..4).map(|i| (y[i] / scale(&y, i)).powi(2)).sum::<f64>().sqrt();
    let d1 = (0..4).map(|i| (k1[i] / scale(&y, i)).powi(2)).sum::<f64>().sqrt();
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(opts.max_step).min(total);

    let mut done = 0.0;
    while done < total {
        if out.accepted + out.rejected >= opts.max_steps {
            return Err(fail(dir * done, &y, "too many steps"));
        }
        let last = done + h >= total * (1.0 - 1e-15);
        if last {
            h = total - done;
        }
        let hs = dir * h;
        let k2 = f(&axpy(&y, hs, &[(A21, &k1)]))?;
        let k3 = f(&axpy(&y, hs, &[(A31, &k1), (A32, &k2)]))?;
        let k4 = f(&axpy(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
        let k5 = f(&axpy(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]))?;
        let k6 = f(&axpy(&y, hs, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]))?;
        let y_new = axpy(&y, hs, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
        let k7 = f(&y_new)?;
        let err = (0..4)
            .map(|i| {
                let e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                e.abs() / (opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs()))
            })
            .fold(0.0, f64::max);

        if err <= 1.0 && y_new.iter().all(|v| v.is_finite()) {
            done = if last { total } else { done + h };
            y = y_new;
            k1 = k7;
            project(&mut y);
            if project_changed(&y, &y_new) {
                k1 = f(&y)?;
            }
            out.accepted += 1;
            if y.iter().any(|v| v.abs() > opts.escape_radius) {
                return Err(fail(dir * done, &y, "trajectory escaped the radius bound"));
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * fac).min(opts.max_step);
        } else {
            out.rejected += 1;
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.5) } else { 0.1 };
            h *= fac;
        }
        if h < 1e-14 * (1.0 + done) {
            return Err(fail(dir * done, &y, "step size underflow"));
        }
    }
    out.state = y;
    Ok(out)
}

fn project_changed(a: &State, b: &State) -> bool {
    a.iter().zip(b).any(|(x, y)| x != y)
}

fn fail(t: f64, y: &State, why: &str) -> Error {
    Error::Integration { t, reason: format!("{why}; last state {y:?}") }
}

/// No projection.
pub fn no_projection(_: &mut State) {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator() {
        let f = |y: &State| Ok([y[2], y[3], -y[0], -4.0 * y[1]]);
        let t = 3.0;
        let out = integrate(f, [1.0, 0.0, 0.0, 2.0], t, &OdeOptions::with_tol(1e-11), no_projection).unwrap();
        assert!((out.state[0] - t.cos()).abs() < 1e-9);
        assert!((out.state[1] - (2.0 * t).sin()).abs() < 1e-9);
        let back = integrate(f, out.state, -t, &OdeOptions::with_tol(1e-11), no_projection).unwrap();
        assert!((back.state[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_time_is_identity() {
        let out = integrate(|y: &State| Ok(*y), [1.0, 2.0, 3.0, 4.0], 0.0, &OdeOptions::default(), no_projection).unwrap();
        assert_eq!(out.state, [1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn blow_up_is_reported() {
        let f = |y: &State| Ok([y[0] * y[0], 0.0, 0.0, 0.0]);
        let err = integrate(f, [1.0, 0.0, 0.0, 0.0], 2.0, &OdeOptions::default(), no_projection).unwrap_err();
        assert!(matches!(err, Error::Integration { t, .. } if t < 1.0 && t > 0.9));
    }
}
