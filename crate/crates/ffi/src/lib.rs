//! C ABI for the planar-mk solver.
//!
//! Densities and solve reports are opaque heap handles created and freed by
//! this library. Every function returns a [`PmkStatus`]; on failure the
//! message is available from [`pmk_last_error_message`] on the same thread.
//! Strings returned through out-pointers must be released with
//! [`pmk_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use planar_mk::optimizer::{SolveConfig, SolveReport, Termination};
use planar_mk::{
    evaluate_l, solve, solve_full_2d, CouplingDensity, DiscreteDensity2D, Error, Grid1D,
};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Infeasible = 3,
    SizeLimit = 4,
    NotConverged = 5,
    Io = 6,
    Panic = 7,
    BufferTooSmall = 8,
}

/// How a solve stopped.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmkTermination {
    GradTol = 0,
    LChange = 1,
    MaxIters = 2,
}

/// Opaque 2D density on a rectangular grid.
pub struct PmkDensity2D {
    inner: DiscreteDensity2D,
}

/// Opaque result of [`pmk_solve`].
pub struct PmkSolveReport {
    inner: SolveReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    let c = CString::new(text).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> PmkStatus {
    match e {
        Error::MarginalMismatch { .. } | Error::Infeasible { .. } => PmkStatus::Infeasible,
        Error::SizeLimit { .. } => PmkStatus::SizeLimit,
        Error::IpfpNotConverged { .. } | Error::NoDescent { .. } => PmkStatus::NotConverged,
        Error::Io(_) => PmkStatus::Io,
        _ => PmkStatus::InvalidInput,
    }
}

struct Fail(PmkStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PmkStatus::NullPointer, format!("{what} is null"))
}

/// Runs `body` behind a panic guard and records any failure.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> PmkStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PmkStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PmkStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Fail(
            PmkStatus::InvalidInput,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn into_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(PmkStatus::InvalidInput, "string contains NUL".into()))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn pmk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pmk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pmk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Density on uniform grids `[x_min, x_max] x [y_min, y_max]` with `nx * ny`
/// row-major cell values (x-cell outer). Values are normalised to unit mass.
///
/// # Safety
/// `values` must point to `nx * ny` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pmk_density2d_new(
    x_min: f64,
    x_max: f64,
    nx: usize,
    y_min: f64,
    y_max: f64,
    ny: usize,
    values: *const f64,
    out_density: *mut *mut PmkDensity2D,
) -> PmkStatus {
    guard(|| {
        let out_density = out(out_density, "out_density")?;
        *out_density = ptr::null_mut();
        let len = nx
            .checked_mul(ny)
            .ok_or_else(|| Fail(PmkStatus::InvalidInput, "nx * ny overflows".into()))?;
        let values = slice(values, len, "values")?.to_vec();
        let inner = DiscreteDensity2D::new(
            Grid1D::uniform(x_min, x_max, nx)?,
            Grid1D::uniform(y_min, y_max, ny)?,
            values,
        )?;
        *out_density = Box::into_raw(Box::new(PmkDensity2D { inner }));
        Ok(())
    })
}

/// Density from the JSON density format.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pmk_density2d_from_json(
    json: *const c_char,
    out_density: *mut *mut PmkDensity2D,
) -> PmkStatus {
    guard(|| {
        let out_density = out(out_density, "out_density")?;
        *out_density = ptr::null_mut();
        let inner = planar_mk::io::parse_density_2d_json(c_str(json, "json")?)?;
        *out_density = Box::into_raw(Box::new(PmkDensity2D { inner }));
        Ok(())
    })
}

/// Grid shape of a density.
///
/// # Safety
/// `density` must be a live handle; `nx` and `ny` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pmk_density2d_shape(
    density: *const PmkDensity2D,
    nx: *mut usize,
    ny: *mut usize,
) -> PmkStatus {
    guard(|| {
        let d = &deref(density, "density")?.inner;
        *out(nx, "nx")? = d.nx();
        *out(ny, "ny")? = d.ny();
        Ok(())
    })
}

/// # Safety
/// `density` must come from this library and not have been freed. NULL is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn pmk_density2d_free(density: *mut PmkDensity2D) {
    if !density.is_null() {
        drop(Box::from_raw(density));
    }
}

/// `L(p)` for a coupling given by its `nx * ny` cell densities on the
/// x-grid of `f` and the y-grid of `f_tilde`.
///
/// # Safety
/// Handles must be live; `coupling` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pmk_evaluate_l(
    f: *const PmkDensity2D,
    f_tilde: *const PmkDensity2D,
    coupling: *const f64,
    len: usize,
    out_value: *mut f64,
) -> PmkStatus {
    guard(|| {
        let out_value = out(out_value, "out_value")?;
        let f = &deref(f, "f")?.inner;
        let ft = &deref(f_tilde, "f_tilde")?.inner;
        if len != f.nx() * ft.ny() {
            return Err(Fail(
                PmkStatus::InvalidInput,
                format!("coupling has {len} values, expected {}", f.nx() * ft.ny()),
            ));
        }
        let values = slice(coupling, len, "coupling")?.to_vec();
        let (f1, f2) = CouplingDensity::targets(f, ft);
        let d = DiscreteDensity2D::new(f.grid_x().clone(), ft.grid_y().clone(), values)?;
        let p = CouplingDensity::new(d, f1, f2)?;
        *out_value = evaluate_l(f, ft, &p)?;
        Ok(())
    })
}

/// Exact optimal transport cost between the cell-centre atoms of `f` and
/// `f_tilde`.
///
/// # Safety
/// Handles must be live; `out_cost` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pmk_oracle_full_2d(
    f: *const PmkDensity2D,
    f_tilde: *const PmkDensity2D,
    out_cost: *mut f64,
) -> PmkStatus {
    guard(|| {
        let out_cost = out(out_cost, "out_cost")?;
        let plan = solve_full_2d(&deref(f, "f")?.inner, &deref(f_tilde, "f_tilde")?.inner)?;
        *out_cost = plan.cost;
        Ok(())
    })
}

/// Minimises `L`. `config_json` may be NULL for the defaults; otherwise it
/// holds a solver configuration object. Reaching the iteration cap is not
/// an error; see [`pmk_report_termination`].
///
/// # Safety
/// Handles must be live; `config_json` must be NULL or NUL-terminated;
/// `out_report` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pmk_solve(
    f: *const PmkDensity2D,
    f_tilde: *const PmkDensity2D,
    config_json: *const c_char,
    out_report: *mut *mut PmkSolveReport,
) -> PmkStatus {
    guard(|| {
        let out_report = out(out_report, "out_report")?;
        *out_report = ptr::null_mut();
        let config: SolveConfig = if config_json.is_null() {
            SolveConfig::default()
        } else {
            serde_json::from_str(c_str(config_json, "config_json")?)
                .map_err(|e| Fail(PmkStatus::InvalidInput, format!("configuration: {e}")))?
        };
        config.validate()?;
        let inner = solve(
            &deref(f, "f")?.inner,
            &deref(f_tilde, "f_tilde")?.inner,
            &config,
        )?;
        *out_report = Box::into_raw(Box::new(PmkSolveReport { inner }));
        Ok(())
    })
}

unsafe fn report_field<T>(
    report: *const PmkSolveReport,
    dst: *mut T,
    get: impl FnOnce(&SolveReport) -> T,
) -> PmkStatus {
    guard(|| {
        let r = &deref(report, "report")?.inner;
        *out(dst, "output")? = get(r);
        Ok(())
    })
}

/// Objective of the smoothed problem at the returned coupling.
///
/// # Safety
/// `report` must be live; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pmk_report_l_final(
    report: *const PmkSolveReport,
    out_value: *mut f64,
) -> PmkStatus {
    report_field(report, out_value, |r| r.l_final)
}

/// Exact objective at the returned coupling.
///
/// # Safety
/// `report` must be live; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pmk_report_l_exact(
    report: *const PmkSolveReport,
    out_value: *mut f64,
) -> PmkStatus {
    report_field(report, out_value, |r| r.l_exact)
}

/// Interior L2 norm of the stationarity residual at the returned coupling.
///
/// # Safety
/// `report` must be live; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pmk_report_el_residual(
    report: *const PmkSolveReport,
    out_value: *mut f64,
) -> PmkStatus {
    report_field(report, out_value, |r| r.el_residual_final)
}

/// # Safety
/// `report` must be live; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pmk_report_iterations(
    report: *const PmkSolveReport,
    out_value: *mut usize,
) -> PmkStatus {
    report_field(report, out_value, |r| r.iterations)
}

/// # Safety
/// `report` must be live; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pmk_report_termination(
    report: *const PmkSolveReport,
    out_value: *mut PmkTermination,
) -> PmkStatus {
    report_field(report, out_value, |r| match r.termination {
        Termination::GradTol => PmkTermination::GradTol,
        Termination::LChange => PmkTermination::LChange,
        Termination::MaxIters => PmkTermination::MaxIters,
    })
}

/// Copies the optimal coupling's cell densities (row-major, `nx * ny`) into
/// `buffer`. `out_len` always receives the required length; a short buffer
/// yields `BufferTooSmall` and is left untouched.
///
/// # Safety
/// `report` must be live; `buffer` must hold `capacity` doubles; `out_len`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn pmk_report_p_star(
    report: *const PmkSolveReport,
    buffer: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> PmkStatus {
    guard(|| {
        let values = deref(report, "report")?.inner.p_star.density().values();
        *out(out_len, "out_len")? = values.len();
        if capacity < values.len() {
            return Err(Fail(
                PmkStatus::BufferTooSmall,
                format!("buffer holds {capacity} values, {} needed", values.len()),
            ));
        }
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buffer, values.len());
        Ok(())
    })
}

/// JSON summary of the solve. Free the result with [`pmk_string_free`].
///
/// # Safety
/// `report` must be live; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pmk_report_to_json(
    report: *const PmkSolveReport,
    out_json: *mut *mut c_char,
) -> PmkStatus {
    guard(|| {
        let out_json = out(out_json, "out_json")?;
        *out_json = ptr::null_mut();
        let text = serde_json::to_string(&deref(report, "report")?.inner)
            .map_err(|e| Fail(PmkStatus::InvalidInput, e.to_string()))?;
        *out_json = into_c_string(text)?;
        Ok(())
    })
}

/// # Safety
/// `report` must come from [`pmk_solve`] and not have been freed. NULL is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn pmk_report_free(report: *mut PmkSolveReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
