//! C ABI over `hjsaddle`.
//!
//! Objects are opaque handles created by `hjs_*_new`/`hjs_*_from_*` calls and
//! released with the matching `hjs_*_free`. Every fallible call returns an
//! [`HjsStatus`]; on failure the message is available from
//! [`hjs_last_error_message`] on the same thread. Phase points are `double[4]`
//! in the order `(x, y, p, q)`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use hjsaddle::data::DataFunctionSpec;
use hjsaddle::flow::integrate_flow;
use hjsaddle::hamiltonian::{linearize, HamiltonianSpec, Linearization, PhasePoint};
use hjsaddle::model_case::{model_saddle_surface, SaddleData};
use hjsaddle::surface::JetSurface;
use hjsaddle::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HjsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad input: parameters, JSON, preconditions, grid shapes.
    Validation = 3,
    /// A computation failed: integration, root finding, spectrum, I/O.
    Numerical = 4,
    /// An index was outside the object, or the node holds no point.
    OutOfRange = 5,
    /// The library panicked; the message is kept as the last error.
    Panic = 6,
}

/// A Hamiltonian on phase space.
pub struct HjsHamiltonian(HamiltonianSpec);

/// Linearization of a Hamiltonian vector field at a critical point.
pub struct HjsLinearization(Linearization);

/// A sampled jet surface.
pub struct HjsSurface(JetSurface);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: HjsStatus, msg: impl Into<String>) -> HjsStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> HjsStatus {
    let status = if e.is_validation() { HjsStatus::Validation } else { HjsStatus::Numerical };
    fail(status, e.to_string())
}

/// Runs `f`, turning panics into [`HjsStatus::Panic`].
fn guard(f: impl FnOnce() -> HjsStatus) -> HjsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == HjsStatus::Ok {
                set_error("");
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(HjsStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn str_arg<'a>(s: *const c_char) -> Result<&'a str, HjsStatus> {
    if s.is_null() {
        return Err(fail(HjsStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(HjsStatus::InvalidUtf8, "string argument is not UTF-8"))
}

unsafe fn point_arg(p: *const f64) -> Result<PhasePoint, HjsStatus> {
    if p.is_null() {
        return Err(fail(HjsStatus::NullPointer, "null point argument"));
    }
    Ok(PhasePoint::from_array(*(p as *const [f64; 4])))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize) -> Result<&'a [f64], HjsStatus> {
    if p.is_null() {
        return Err(fail(HjsStatus::NullPointer, "null array argument"));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(HjsStatus::NullPointer, concat!("null argument '", stringify!($p), "'"));
        })+
    };
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> HjsStatus {
    *out = Box::into_raw(Box::new(value));
    HjsStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hjs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes). Returns the full message length in bytes,
/// excluding the terminator. `buf` may be null when `len` is 0.
///
/// # Safety
/// `buf` must be valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn hjs_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses a Hamiltonian from JSON (e.g. `{"kind": "model_quadratic", "a": 1, "b": 2}`).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hjs_hamiltonian_from_json(json: *const c_char, out: *mut *mut HjsHamiltonian) -> HjsStatus {
    guard(|| {
        non_null!(out);
        let text = tri!(str_arg(json));
        match hjsaddle::config::parse_hamiltonian(text) {
            Ok(spec) => emit(out, HjsHamiltonian(spec)),
            Err(e) => from_error(e),
        }
    })
}

/// `H = ½(p² + q² - a²x² - b²y²)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hjs_hamiltonian_model_quadratic(a: f64, b: f64, out: *mut *mut HjsHamiltonian) -> HjsStatus {
    guard(|| {
        non_null!(out);
        match HamiltonianSpec::model_quadratic(a, b) {
            Ok(spec) => emit(out, HjsHamiltonian(spec)),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `h` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hjs_hamiltonian_free(h: *mut HjsHamiltonian) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Evaluates `H` at `point`.
///
/// # Safety
/// `h` must be a live handle, `point` must hold 4 doubles, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hjs_hamiltonian_value(h: *const HjsHamiltonian, point: *const f64, out: *mut f64) -> HjsStatus {
    guard(|| {
        non_null!(h, out);
        let pt = tri!(point_arg(point));
        match (*h).0.value(&pt) {
            Ok(v) => {
                *out = v;
                HjsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Integrates the characteristic field from `point` for time `t` with local
/// tolerance `tol`, writing the end point to `end` (4 doubles) and, if
/// `energy_drift` is non-null, `|H(end) - H(point)|`.
///
/// # Safety
/// `h` must be a live handle; `point` and `end` must hold 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn hjs_integrate_flow(
    h: *const HjsHamiltonian,
    point: *const f64,
    t: f64,
    tol: f64,
    end: *mut f64,
    energy_drift: *mut f64,
) -> HjsStatus {
    guard(|| {
        non_null!(h, end);
        let pt = tri!(point_arg(point));
        match integrate_flow(&(*h).0, &pt, t, tol) {
            Ok(r) => {
                *(end as *mut [f64; 4]) = r.point.to_array();
                if !energy_drift.is_null() {
                    *energy_drift = r.h_drift;
                }
                HjsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Linearizes the characteristic field at the critical point `point`.
///
/// # Safety
/// `h` must be a live handle, `point` must hold 4 doubles, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hjs_linearize(
    h: *const HjsHamiltonian,
    point: *const f64,
    out: *mut *mut HjsLinearization,
) -> HjsStatus {
    guard(|| {
        non_null!(h, out);
        let pt = tri!(point_arg(point));
        match linearize(&(*h).0, &pt) {
            Ok(l) => emit(out, HjsLinearization(l)),
            Err(e) => from_error(e),
        }
    })
}

/// Eigenvalues in the order `a, -b, -a, b` as real and imaginary parts.
///
/// # Safety
/// `lin` must be a live handle; `re` and `im` must hold 4 doubles each.
#[no_mangle]
pub unsafe extern "C" fn hjs_linearization_eigenvalues(
    lin: *const HjsLinearization,
    re: *mut f64,
    im: *mut f64,
) -> HjsStatus {
    guard(|| {
        non_null!(lin, re, im);
        for (k, z) in (*lin).0.eigenvalues.iter().enumerate() {
            *re.add(k) = z.re;
            *im.add(k) = z.im;
        }
        HjsStatus::Ok
    })
}

/// The rates `a, b > 0` of a hyperbolic real spectrum.
///
/// # Safety
/// `lin` must be a live handle; `a` and `b` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hjs_linearization_rates(lin: *const HjsLinearization, a: *mut f64, b: *mut f64) -> HjsStatus {
    guard(|| {
        non_null!(lin, a, b);
        match (*lin).0.rates() {
            Some((ra, rb)) => {
                *a = ra;
                *b = rb;
                HjsStatus::Ok
            }
            None => fail(HjsStatus::Numerical, "spectrum is not real and hyperbolic"),
        }
    })
}

/// Real eigenvector `k` (0-based, same order as the eigenvalues).
///
/// # Safety
/// `lin` must be a live handle; `out` must hold 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn hjs_linearization_eigenvector(lin: *const HjsLinearization, k: usize, out: *mut f64) -> HjsStatus {
    guard(|| {
        non_null!(lin, out);
        if k >= 4 {
            return fail(HjsStatus::OutOfRange, format!("eigenvector index {k} is not in 0..4"));
        }
        match (*lin).0.real_eigenvector(k) {
            Some(v) => {
                *(out as *mut [f64; 4]) = v;
                HjsStatus::Ok
            }
            None => fail(HjsStatus::Numerical, format!("eigenvector {k} is not real")),
        }
    })
}

/// # Safety
/// `lin` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hjs_linearization_free(lin: *mut HjsLinearization) {
    if !lin.is_null() {
        drop(Box::from_raw(lin));
    }
}

/// Model saddle surface for rates `a, b` with data functions given as JSON
/// (e.g. `{"kind": "monomial", "c": 1, "l": 5}`; null means zero data),
/// sampled on the `(u, v)` grid `us × vs`.
///
/// # Safety
/// String arguments must be NUL-terminated or null; `us`, `vs` must hold
/// `nu`, `nv` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hjs_model_saddle_surface(
    a: f64,
    b: f64,
    phi_plus_json: *const c_char,
    phi_minus_json: *const c_char,
    us: *const f64,
    nu: usize,
    vs: *const f64,
    nv: usize,
    out: *mut *mut HjsSurface,
) -> HjsStatus {
    guard(|| {
        non_null!(out);
        let phi = |s: *const c_char| -> Result<DataFunctionSpec, HjsStatus> {
            if s.is_null() {
                return Ok(DataFunctionSpec::Zero);
            }
            serde_json::from_str(str_arg(s)?).map_err(|e| fail(HjsStatus::Validation, format!("data function: {e}")))
        };
        let (pp, pm) = (tri!(phi(phi_plus_json)), tri!(phi(phi_minus_json)));
        let (us, vs) = (tri!(slice_arg(us, nu)), tri!(slice_arg(vs, nv)));
        match SaddleData::new(a, b, pp, pm).and_then(|d| model_saddle_surface(&d, us, vs)) {
            Ok(s) => emit(out, HjsSurface(s)),
            Err(e) => from_error(e),
        }
    })
}

/// Loads a surface written by the CLI (`<dir>/<stem>.csv` and `.json`).
///
/// # Safety
/// `dir` and `stem` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hjs_surface_load(dir: *const c_char, stem: *const c_char, out: *mut *mut HjsSurface) -> HjsStatus {
    guard(|| {
        non_null!(out);
        let (dir, stem) = (tri!(str_arg(dir)), tri!(str_arg(stem)));
        match JetSurface::load(Path::new(dir), stem) {
            Ok(s) => emit(out, HjsSurface(s)),
            Err(e) => from_error(e),
        }
    })
}

/// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.json`.
///
/// # Safety
/// `s` must be a live handle; `dir` and `stem` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hjs_surface_save(s: *const HjsSurface, dir: *const c_char, stem: *const c_char) -> HjsStatus {
    guard(|| {
        non_null!(s);
        let (dir, stem) = (tri!(str_arg(dir)), tri!(str_arg(stem)));
        match (*s).0.save(Path::new(dir), stem) {
            Ok(()) => HjsStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// Grid shape: number of `σ` and `τ` samples.
///
/// # Safety
/// `s` must be a live handle; `n_sigma`, `n_tau` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hjs_surface_shape(s: *const HjsSurface, n_sigma: *mut usize, n_tau: *mut usize) -> HjsStatus {
    guard(|| {
        non_null!(s, n_sigma, n_tau);
        let (ns, nt) = (*s).0.shape();
        *n_sigma = ns;
        *n_tau = nt;
        HjsStatus::Ok
    })
}

/// Phase point at grid node `(i, j)`. Returns `OutOfRange` for indices
/// outside the grid or nodes without a point.
///
/// # Safety
/// `s` must be a live handle; `out` must hold 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn hjs_surface_point(s: *const HjsSurface, i: usize, j: usize, out: *mut f64) -> HjsStatus {
    guard(|| {
        non_null!(s, out);
        let (ns, nt) = (*s).0.shape();
        if i >= ns || j >= nt {
            return fail(HjsStatus::OutOfRange, format!("node ({i}, {j}) is outside the {ns} x {nt} grid"));
        }
        match (*s).0.point(i, j) {
            Some(p) => {
                *(out as *mut [f64; 4]) = p.to_array();
                HjsStatus::Ok
            }
            None => fail(HjsStatus::OutOfRange, format!("node ({i}, {j}) holds no point")),
        }
    })
}

/// Largest `|H|` over the valid nodes of `s`.
///
/// # Safety
/// `s` and `h` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hjs_surface_max_abs_h(s: *const HjsSurface, h: *const HjsHamiltonian, out: *mut f64) -> HjsStatus {
    guard(|| {
        non_null!(s, h, out);
        *out = (*s).0.max_abs_h(&(*h).0);
        HjsStatus::Ok
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hjs_surface_free(s: *mut HjsSurface) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}
