//! Saddle series checked against a dense Newton solve of the truncated
//! equations, and against hand-computed coefficients.

use hjsaddle::series::*;
use nalgebra::{DMatrix, DVector};
use std::f64::consts::SQRT_2;

/// Monomials of degrees 3..=n, in a fixed order.
fn unknowns(n: usize) -> Vec<(usize, usize)> {
    (3..=n).flat_map(|d| (0..=d).map(move |j| (d - j, j))).collect()
}

/// Coefficients of `z_x² + z_y² - h` at the monomials of `unknowns(n)`,
/// with `z = ½(a x² - b y²) + Σ c_k x^m y^n`. Computed by direct
/// expansion of the products of derivative terms.
fn residual(c: &[f64], h: &dyn Fn(usize, usize) -> f64, a: f64, b: f64, n: usize) -> Vec<f64> {
    let mons = unknowns(n);
    let mut terms: Vec<(usize, usize, f64)> = vec![(2, 0, a / 2.0), (0, 2, -b / 2.0)];
    terms.extend(mons.iter().zip(c).map(|(&(m, k), &v)| (m, k, v)));
    let dx: Vec<(usize, usize, f64)> = terms.iter().filter(|t| t.0 > 0).map(|&(m, k, v)| (m - 1, k, v * m as f64)).collect();
    let dy: Vec<(usize, usize, f64)> = terms.iter().filter(|t| t.1 > 0).map(|&(m, k, v)| (m, k - 1, v * k as f64)).collect();
    let mut out = vec![0.0; mons.len()];
    let pos = |m: usize, k: usize| mons.iter().position(|&t| t == (m, k));
    for g in [&dx, &dy] {
        for &(m1, k1, v1) in g.iter() {
            for &(m2, k2, v2) in g.iter() {
                if let Some(i) = pos(m1 + m2, k1 + k2) {
                    out[i] += v1 * v2;
                }
            }
        }
    }
    for (i, &(m, k)) in mons.iter().enumerate() {
        out[i] -= h(m, k);
    }
    out
}

/// Newton's method with a dense Jacobian from central differences, which
/// are exact for the quadratic residual up to roundoff.
fn brute_force(h: &dyn Fn(usize, usize) -> f64, a: f64, b: f64, n: usize) -> Vec<(usize, usize, f64)> {
    let mons = unknowns(n);
    let k = mons.len();
    let mut c = vec![0.0; k];
    for _ in 0..50 {
        let r = DVector::from_vec(residual(&c, h, a, b, n));
        if r.amax() < 1e-14 {
            break;
        }
        let mut jac = DMatrix::zeros(k, k);
        for j in 0..k {
            let mut cp = c.clone();
            let mut cm = c.clone();
            cp[j] += 0.5;
            cm[j] -= 0.5;
            let (rp, rm) = (residual(&cp, h, a, b, n), residual(&cm, h, a, b, n));
            for i in 0..k {
                jac[(i, j)] = rp[i] - rm[i];
            }
        }
        let step = jac.lu().solve(&r).expect("non-resonant system is regular");
        for j in 0..k {
            c[j] -= step[j];
        }
    }
    mons.into_iter().zip(c).map(|((m, k), v)| (m, k, v)).collect()
}

fn cubic_h(order: usize) -> BivariateSeries {
    BivariateSeries::from_terms(order, &[(2, 0, 1.0), (0, 2, 2.0), (3, 0, 1.0)]).unwrap()
}

#[test]
fn recursion_matches_dense_newton() {
    let hs: Vec<Vec<(usize, usize, f64)>> = vec![
        vec![(2, 0, 1.0), (0, 2, 2.0), (3, 0, 1.0)],
        vec![(2, 0, 1.0), (0, 2, 2.0), (2, 1, -0.7), (1, 2, 0.3), (0, 4, 1.1), (3, 3, 0.2)],
    ];
    for terms in &hs {
        for n in 3..=6 {
            let kept: Vec<_> = terms.iter().copied().filter(|t| t.0 + t.1 <= n).collect();
            let h = BivariateSeries::from_terms(n, &kept).unwrap();
            let (z, rep) = solve_saddle_series(&h, 1.0, SQRT_2, SaddleSign::Plus, n, &SaddleSeriesOptions::default()).unwrap();
            assert!(rep.entries.is_empty());
            let hf = |m: usize, k: usize| h.get(m, k);
            for (m, k, v) in brute_force(&hf, 1.0, SQRT_2, n) {
                assert!((z.get(m, k) - v).abs() < 1e-9, "N = {n}, ({m},{k}): {} vs {v}", z.get(m, k));
            }
        }
    }
}

#[test]
fn cubic_coefficient_is_one_sixth() {
    // Degree 3: 2a·3 z30 x³ from z_x², so z30 = h30 / (6a) = 1/6.
    let h = cubic_h(12);
    let (z, _) = solve_saddle_series(&h, 1.0, SQRT_2, SaddleSign::Plus, 12, &SaddleSeriesOptions::default()).unwrap();
    assert!((z.get(3, 0) - 1.0 / 6.0).abs() < 1e-12);
    assert!(series_residual(&z, &h, 12).max_abs_coeff() < 1e-9);
}

#[test]
fn obstruction_equals_the_quartic_coefficient() {
    for c in [1.0, -1.0, 0.1, -0.1] {
        let h = BivariateSeries::from_terms(6, &[(2, 0, 1.0), (0, 2, 1.0), (2, 2, c)]).unwrap();
        let (_, rep) = solve_saddle_series(&h, 1.0, 1.0, SaddleSign::Plus, 6, &SaddleSeriesOptions::default()).unwrap();
        let e = rep.entries.iter().find(|e| (e.m, e.n) == (2, 2)).expect("(2,2) is resonant");
        assert!((e.obstruction.unwrap() - c).abs() < 1e-10);
        assert!(rep.non_existence);
    }
}

#[test]
fn resonances_for_equal_rates() {
    assert_eq!(detect_resonances(1.0, 1.0, 6, 1e-9), vec![(2, 2), (3, 3)]);
    assert!(detect_resonances(1.0, SQRT_2, 12, 1e-9).is_empty());
    assert_eq!(detect_resonances(1.0, 2.0, 6, 1e-9), vec![(2, 1), (4, 2)]);
}
