//! C ABI for `affgroup`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call returns an
//! [`AffgroupStatus`]; on failure the message is kept per thread and can be read with
//! [`affgroup_last_error`]. Panics are caught and reported as `AFFGROUP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use affgroup::config::RunConfig;
use affgroup::invariance::Pipeline;
use affgroup::signal::io::{read_grid, write_grid};
use affgroup::{integrate_gl2, ChartPoint, iwasawa, AffineElement, Error, Grid2, GridGeometry, LiftedSignal, Mat2, QuadratureChart, Sign};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AffgroupStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Singular = 3,
    ShapeMismatch = 4,
    ChartMismatch = 5,
    Io = 6,
    Parse = 7,
    Config = 8,
    BufferTooSmall = 9,
    Panic = 10,
    Other = 11,
}

pub struct AffgroupGrid(Grid2);
pub struct AffgroupChart(QuadratureChart);
pub struct AffgroupLifted(LiftedSignal);
pub struct AffgroupPipeline(Pipeline);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AffgroupStatus {
    match e {
        Error::SingularMatrix { .. } => AffgroupStatus::Singular,
        Error::ShapeMismatch(_) | Error::InvalidGrid(_) => AffgroupStatus::ShapeMismatch,
        Error::ChartMismatch(_) => AffgroupStatus::ChartMismatch,
        Error::Io(_) => AffgroupStatus::Io,
        Error::Parse(_) => AffgroupStatus::Parse,
        Error::Config(_) => AffgroupStatus::Config,
        Error::InvalidAxis(_) | Error::InvalidChartPoint(_) | Error::EmptySearchBox(_) => AffgroupStatus::InvalidArgument,
        Error::NonFiniteSample(_) => AffgroupStatus::Other,
    }
}

enum Failure {
    Lib(Error),
    Status(AffgroupStatus, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null() -> Failure {
    Failure::Status(AffgroupStatus::NullPointer, "null pointer argument".into())
}

/// Runs `f`, translating errors and panics into a status and the last-error message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AffgroupStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AffgroupStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            AffgroupStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(null)
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Failure> {
    Ok(PathBuf::from(str_arg(p)?))
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(AffgroupStatus::InvalidArgument, "string is not UTF-8".into()))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    *out = value;
    Ok(())
}

unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if len < values.len() {
        return Err(Failure::Status(
            AffgroupStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", values.len()),
        ));
    }
    if out.is_null() {
        return Err(null());
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn affgroup_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn affgroup_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Row-major `a = [a11, a12, a21, a22]` to `[rho, theta, u, w]` and the sign of `v`
/// (`1` or `-1`).
///
/// # Safety
/// `a` must point to 4 doubles, `coords` to 4 writable doubles, `sign` to an int.
#[no_mangle]
pub unsafe extern "C" fn affgroup_iwasawa(a: *const f64, coords: *mut f64, sign: *mut i32) -> AffgroupStatus {
    guard(|| {
        let a = slice(a, 4)?;
        let p = iwasawa(&Mat2::new(a[0], a[1], a[2], a[3]))?.to_log_polar();
        copy_out(&[p.rho, p.theta, p.u, p.w], coords, 4)?;
        write(sign, if p.sign == Sign::Positive { 1 } else { -1 })
    })
}

/// Inverse of [`affgroup_iwasawa`].
///
/// # Safety
/// `coords` must point to 4 doubles and `a` to 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn affgroup_from_chart(coords: *const f64, sign: i32, a: *mut f64) -> AffgroupStatus {
    guard(|| {
        let c = slice(coords, 4)?;
        let s = match sign {
            1 => Sign::Positive,
            -1 => Sign::Negative,
            _ => return Err(Failure::Status(AffgroupStatus::InvalidArgument, format!("sign must be 1 or -1, got {sign}"))),
        };
        let m = ChartPoint { rho: c[0], theta: c[1], u: c[2], w: c[3], sign: s }.matrix();
        copy_out(&[m.a, m.b, m.c, m.d], a, 4)
    })
}

/// Grid of `height x width` row-major `values` with the given origin (position of
/// node `(0, 0)`) and spacing.
///
/// # Safety
/// `values` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn affgroup_grid_new(
    height: usize,
    width: usize,
    origin_x: f64,
    origin_y: f64,
    spacing: f64,
    values: *const f64,
    len: usize,
    out: *mut *mut AffgroupGrid,
) -> AffgroupStatus {
    guard(|| {
        let geom = GridGeometry::new(height, width, [origin_x, origin_y], spacing)?;
        let g = Grid2::new(geom, slice(values, len)?.to_vec())?;
        put(out, AffgroupGrid(g))
    })
}

/// Reads a PGM or CSV grid.
///
/// # Safety
/// `file` must be a nul-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn affgroup_grid_read(file: *const c_char, out: *mut *mut AffgroupGrid) -> AffgroupStatus {
    guard(|| put(out, AffgroupGrid(read_grid(&path(file)?)?)))
}

/// Writes a grid; the format follows the extension as in the command-line tool.
///
/// # Safety
/// `grid` must be a live handle and `file` a nul-terminated path.
#[no_mangle]
pub unsafe extern "C" fn affgroup_grid_write(grid: *const AffgroupGrid, file: *const c_char) -> AffgroupStatus {
    guard(|| Ok(write_grid(&deref(grid)?.0, &path(file)?)?))
}

/// # Safety
/// `grid` must be a live handle; `height` and `width` must be writable.
#[no_mangle]
pub unsafe extern "C" fn affgroup_grid_shape(grid: *const AffgroupGrid, height: *mut usize, width: *mut usize) -> AffgroupStatus {
    guard(|| {
        let g = &deref(grid)?.0;
        write(height, g.height())?;
        write(width, g.width())
    })
}

/// Copies the row-major samples into `out`, which must hold `height * width` values.
///
/// # Safety
/// `grid` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn affgroup_grid_values(grid: *const AffgroupGrid, out: *mut f64, len: usize) -> AffgroupStatus {
    guard(|| copy_out(deref(grid)?.0.values(), out, len))
}

/// # Safety
/// `grid` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn affgroup_grid_free(grid: *mut AffgroupGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Chart with axis bounds `lo[k]..hi[k]` and `counts[k]` nodes for
/// `rho, theta, u, w`, both signs of `v`.
///
/// # Safety
/// `lo`, `hi` and `counts` must point to 4 values each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn affgroup_chart_new(
    lo: *const f64,
    hi: *const f64,
    counts: *const usize,
    out: *mut *mut AffgroupChart,
) -> AffgroupStatus {
    guard(|| {
        let (lo, hi, n) = (slice(lo, 4)?, slice(hi, 4)?, slice(counts, 4)?);
        let c = QuadratureChart::new([lo[0], hi[0]], [lo[1], hi[1]], [lo[2], hi[2]], [lo[3], hi[3]], [n[0], n[1], n[2], n[3]])?;
        put(out, AffgroupChart(c))
    })
}

/// The default chart, overridden by the `axis.lo/hi/count` lines of `config`
/// (which may be null).
///
/// # Safety
/// `config` must be null or nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn affgroup_chart_from_config(config: *const c_char, out: *mut *mut AffgroupChart) -> AffgroupStatus {
    guard(|| {
        let c = if config.is_null() { QuadratureChart::default() } else { QuadratureChart::from_config(str_arg(config)?)? };
        put(out, AffgroupChart(c))
    })
}

/// Number of nodes over both sign branches.
///
/// # Safety
/// `chart` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn affgroup_chart_len(chart: *const AffgroupChart) -> usize {
    chart.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `chart` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn affgroup_chart_free(chart: *mut AffgroupChart) {
    if !chart.is_null() {
        drop(Box::from_raw(chart));
    }
}

/// Integrand over `GL2`: receives the row-major matrix entries and `user`.
pub type AffgroupMatrixFn = Option<unsafe extern "C" fn(a: *const f64, user: *mut c_void) -> f64>;

struct UserPtr(*mut c_void);
// The caller promises that `f` may be called from several threads with `user`.
unsafe impl Send for UserPtr {}
unsafe impl Sync for UserPtr {}

/// Haar integral over `GL2` through the chart. `f` is called from worker threads
/// and must be thread-safe.
///
/// # Safety
/// `chart` must be a live handle, `f` non-null, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn affgroup_integrate_gl2(
    chart: *const AffgroupChart,
    f: AffgroupMatrixFn,
    user: *mut c_void,
    out: *mut f64,
) -> AffgroupStatus {
    guard(|| {
        let chart = &deref(chart)?.0;
        let f = f.ok_or_else(null)?;
        let user = UserPtr(user);
        let user = &user;
        let v = integrate_gl2(
            |a: &Mat2| {
                let e = [a.a, a.b, a.c, a.d];
                unsafe { f(e.as_ptr(), user.0) }
            },
            chart,
        )?;
        write(out, v)
    })
}

/// Pipeline built from key=value `config` text (null for the defaults).
///
/// # Safety
/// `config` must be null or nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn affgroup_pipeline_new(config: *const c_char, out: *mut *mut AffgroupPipeline) -> AffgroupStatus {
    guard(|| {
        let cfg = if config.is_null() { RunConfig::default() } else { RunConfig::from_text(str_arg(config)?)? };
        put(out, AffgroupPipeline(Pipeline::new(cfg.pipeline_config()?)?))
    })
}

/// # Safety
/// `pipeline` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn affgroup_pipeline_free(pipeline: *mut AffgroupPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Lifts `grid` with the pipeline's kernel onto its spatial grid and chart.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn affgroup_lift(
    pipeline: *const AffgroupPipeline,
    grid: *const AffgroupGrid,
    out: *mut *mut AffgroupLifted,
) -> AffgroupStatus {
    guard(|| {
        let lifted = deref(pipeline)?.0.lift(&deref(grid)?.0)?;
        put(out, AffgroupLifted(lifted))
    })
}

/// Values stored, `chart nodes * spatial nodes`.
///
/// # Safety
/// `lifted` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn affgroup_lifted_len(lifted: *const AffgroupLifted) -> usize {
    lifted.as_ref().map_or(0, |l| l.0.values().len())
}

/// Copies the values, chart node major and spatial node minor.
///
/// # Safety
/// `lifted` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn affgroup_lifted_values(lifted: *const AffgroupLifted, out: *mut f64, len: usize) -> AffgroupStatus {
    guard(|| copy_out(deref(lifted)?.0.values(), out, len))
}

/// # Safety
/// `lifted` must be a live handle and `file` a nul-terminated path.
#[no_mangle]
pub unsafe extern "C" fn affgroup_lifted_save(lifted: *const AffgroupLifted, file: *const c_char) -> AffgroupStatus {
    guard(|| Ok(deref(lifted)?.0.save(&path(file)?)?))
}

/// # Safety
/// `file` must be a nul-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn affgroup_lifted_load(file: *const c_char, out: *mut *mut AffgroupLifted) -> AffgroupStatus {
    guard(|| put(out, AffgroupLifted(LiftedSignal::load(&path(file)?)?)))
}

/// # Safety
/// `lifted` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn affgroup_lifted_free(lifted: *mut AffgroupLifted) {
    if !lifted.is_null() {
        drop(Box::from_raw(lifted));
    }
}

/// Invariance report of `f1` and `f2` as a JSON string (free with
/// [`affgroup_string_free`]) and its largest functional gap. With `given` non-null
/// (`x1, x2, a11, a12, a21, a22`) that element replaces the alignment search.
///
/// # Safety
/// Handles must be live; `given` null or 6 doubles; `gap` and `json` writable.
#[no_mangle]
pub unsafe extern "C" fn affgroup_invariance_report(
    pipeline: *const AffgroupPipeline,
    f1: *const AffgroupGrid,
    f2: *const AffgroupGrid,
    given: *const f64,
    gap: *mut f64,
    json: *mut *mut c_char,
) -> AffgroupStatus {
    guard(|| {
        let pipe = &deref(pipeline)?.0;
        let g = if given.is_null() {
            None
        } else {
            let p = slice(given, 6)?;
            Some(AffineElement::new([p[0], p[1]], Mat2::new(p[2], p[3], p[4], p[5]))?)
        };
        let pair = pipe.lift_pair(&deref(f1)?.0, &deref(f2)?.0, g)?;
        let report = pipe.report_lifted(&pair)?;
        let text = serde_json::to_string(&report).expect("serializable");
        write(gap, report.functional_gap)?;
        if json.is_null() {
            return Err(null());
        }
        *json = CString::new(text).expect("JSON has no nul").into_raw();
        Ok(())
    })
}
