use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use hjsaddle_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 512];
    let n = unsafe { hjs_last_error_message(buf.as_mut_ptr().cast(), buf.len()) };
    buf.truncate(n.min(511));
    String::from_utf8(buf).unwrap()
}

fn model(a: f64, b: f64) -> *mut HjsHamiltonian {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { hjs_hamiltonian_model_quadratic(a, b, &mut h) }, HjsStatus::Ok);
    h
}

#[test]
fn linearization_of_the_model() {
    let (a, b) = (1.0, 2f64.sqrt());
    let h = model(a, b);
    let mut lin = ptr::null_mut();
    unsafe {
        assert_eq!(hjs_linearize(h, [0.0; 4].as_ptr(), &mut lin), HjsStatus::Ok);
        let (mut re, mut im) = ([0.0; 4], [1.0; 4]);
        assert_eq!(hjs_linearization_eigenvalues(lin, re.as_mut_ptr(), im.as_mut_ptr()), HjsStatus::Ok);
        for (got, want) in re.iter().zip([a, -b, -a, b]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(im.iter().all(|v| v.abs() < 1e-12));
        let (mut ra, mut rb) = (0.0, 0.0);
        assert_eq!(hjs_linearization_rates(lin, &mut ra, &mut rb), HjsStatus::Ok);
        assert!((ra - a).abs() < 1e-12 && (rb - b).abs() < 1e-12);
        let mut v = [0.0; 4];
        assert_eq!(hjs_linearization_eigenvector(lin, 0, v.as_mut_ptr()), HjsStatus::Ok);
        assert!((v[2] / v[0] - a).abs() < 1e-12 && v[1].abs() < 1e-12);
        assert_eq!(hjs_linearization_eigenvector(lin, 4, v.as_mut_ptr()), HjsStatus::OutOfRange);
        hjs_linearization_free(lin);
        hjs_hamiltonian_free(h);
    }
}

#[test]
fn json_hamiltonian_and_flow() {
    let json = CString::new(r#"{"kind": "model_quadratic", "a": 1.0, "b": 2.0}"#).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(hjs_hamiltonian_from_json(json.as_ptr(), &mut h), HjsStatus::Ok);
        let p = [0.1, -0.2, 0.3, 0.05];
        let (mut end, mut drift) = ([0.0; 4], 1.0);
        assert_eq!(hjs_integrate_flow(h, p.as_ptr(), 1.5, 1e-10, end.as_mut_ptr(), &mut drift), HjsStatus::Ok);
        assert!(drift < 1e-9);
        let (mut h0, mut h1) = (0.0, 0.0);
        hjs_hamiltonian_value(h, p.as_ptr(), &mut h0);
        hjs_hamiltonian_value(h, end.as_ptr(), &mut h1);
        assert!((h0 - h1).abs() < 1e-9);
        // x(t) = x cosh t + p sinh t for a = 1.
        assert!((end[0] - (0.1 * 1.5f64.cosh() + 0.3 * 1.5f64.sinh())).abs() < 1e-8);
        hjs_hamiltonian_free(h);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(hjs_hamiltonian_model_quadratic(-1.0, 1.0, &mut h), HjsStatus::Validation);
        assert!(h.is_null());
        assert!(!last_error().is_empty());

        let bad = CString::new(r#"{"kind": "model_quadratic", "a": 1, "b": 1, "typo": 0}"#).unwrap();
        assert_eq!(hjs_hamiltonian_from_json(bad.as_ptr(), &mut h), HjsStatus::Validation);
        assert!(last_error().contains("typo"));

        assert_eq!(hjs_hamiltonian_from_json(ptr::null(), &mut h), HjsStatus::NullPointer);
        let invalid = [0xffu8, 0];
        assert_eq!(hjs_hamiltonian_from_json(invalid.as_ptr().cast(), &mut h), HjsStatus::InvalidUtf8);

        // Linearizing away from a critical point is a precondition failure.
        let h = model(1.0, 1.0);
        let mut lin = ptr::null_mut();
        assert_eq!(hjs_linearize(h, [1.0, 0.0, 0.0, 0.0].as_ptr(), &mut lin), HjsStatus::Validation);
        hjs_hamiltonian_free(h);

        // Success clears the message; a short buffer still reports the full length.
        let h = model(1.0, 2.0);
        assert_eq!(last_error(), "");
        hjs_hamiltonian_free(h);
        hjs_hamiltonian_model_quadratic(0.0, 1.0, &mut ptr::null_mut());
        let full = hjs_last_error_message(ptr::null_mut(), 0);
        let mut small = [0i8; 4];
        assert_eq!(hjs_last_error_message(small.as_mut_ptr().cast(), 4), full);
        assert_eq!(CStr::from_ptr(small.as_ptr().cast()).to_bytes().len(), 3);
    }
}

#[test]
fn model_surface_round_trip() {
    let (a, b) = (1.0, 2f64.sqrt());
    let grid: Vec<f64> = (0..11).map(|i| -0.5 + 0.1 * i as f64).collect();
    let phi = CString::new(r#"{"kind": "monomial", "c": 1.0, "l": 5.0}"#).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let dir_c = CString::new(dir.path().to_str().unwrap()).unwrap();
    let stem = CString::new("s").unwrap();
    unsafe {
        let mut s = ptr::null_mut();
        let st = hjs_model_saddle_surface(a, b, phi.as_ptr(), ptr::null(), grid.as_ptr(), 11, grid.as_ptr(), 11, &mut s);
        assert_eq!(st, HjsStatus::Ok, "{}", last_error());
        let (mut ns, mut nt) = (0, 0);
        hjs_surface_shape(s, &mut ns, &mut nt);
        assert_eq!((ns, nt), (11, 11));
        let h = model(a, b);
        let mut r = 1.0;
        hjs_surface_max_abs_h(s, h, &mut r);
        assert!(r < 1e-12);

        assert_eq!(hjs_surface_save(s, dir_c.as_ptr(), stem.as_ptr()), HjsStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(hjs_surface_load(dir_c.as_ptr(), stem.as_ptr(), &mut back), HjsStatus::Ok);
        let (mut p, mut q) = ([0.0; 4], [0.0; 4]);
        hjs_surface_point(s, 3, 7, p.as_mut_ptr());
        hjs_surface_point(back, 3, 7, q.as_mut_ptr());
        assert!(p.iter().zip(q).all(|(x, y)| (x - y).abs() < 1e-12));
        assert_eq!(hjs_surface_point(s, 11, 0, p.as_mut_ptr()), HjsStatus::OutOfRange);

        let bad = CString::new(r#"{"kind": "nope"}"#).unwrap();
        let mut t = ptr::null_mut();
        let st = hjs_model_saddle_surface(a, b, bad.as_ptr(), ptr::null(), grid.as_ptr(), 11, grid.as_ptr(), 11, &mut t);
        assert_eq!(st, HjsStatus::Validation);
        assert!(t.is_null());

        hjs_surface_free(s);
        hjs_surface_free(back);
        hjs_hamiltonian_free(h);
        hjs_surface_free(ptr::null_mut());
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(hjs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "hjsaddle.h"
int run(void) {
    HjsHamiltonian *h = NULL;
    HjsStatus st = hjs_hamiltonian_model_quadratic(1.0, 2.0, &h);
    if (st != HJS_STATUS_OK) return (int)st;
    double p[4] = {0, 0, 0, 0}, v;
    st = hjs_hamiltonian_value(h, p, &v);
    char buf[64];
    (void)hjs_last_error_message(buf, sizeof buf);
    hjs_hamiltonian_free(h);
    return (int)st;
}
"#,
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let out = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I"])
            .arg(&include)
            .arg(&src)
            .output()
            .expect("C compiler");
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
