//! C ABI over the `bsgd-tv` library.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! style functions and released with the matching `*_free`. Every fallible
//! function returns a [`BsgdStatus`]; on failure a description is available
//! from [`bsgd_last_error_message`] on the same thread.
//!
//! Images are passed as row-major `height * width` buffers. Solver vectors
//! (final iterates) use the problem's pixel layout.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use bsgd_tv::linalg::load_vector;
use bsgd_tv::sim::{simulate, FanBeamGeometry};
use bsgd_tv::spectral::largest_eigenvalue;
use bsgd_tv::tv::{ImageGrid, LayoutKind, PixelLayout, ProxSettings};
use bsgd_tv::{
    run_solver, tv_prox, tv_value, BlockOperator, ConvergenceTrace, Error, Problem, SolverConfig, SolverKind,
    SparseMatrix,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsgdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Parse = 5,
    /// The solver diverged; a partial trace is still returned.
    Divergence = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsgdSolverKind {
    Bsgd = 0,
    Ista = 1,
    Gd = 2,
    Admm = 3,
}

impl From<BsgdSolverKind> for SolverKind {
    fn from(k: BsgdSolverKind) -> Self {
        match k {
            BsgdSolverKind::Bsgd => SolverKind::Bsgd,
            BsgdSolverKind::Ista => SolverKind::Ista,
            BsgdSolverKind::Gd => SolverKind::Gd,
            BsgdSolverKind::Admm => SolverKind::Admm,
        }
    }
}

/// Solver settings. Obtain defaults from [`bsgd_solver_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsgdSolverConfig {
    pub mu: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub epochs: u64,
    pub seed: u64,
    pub prox_max_inner_iters: u64,
    pub prox_tol: f64,
    pub rho: f64,
    pub cg_iters: u64,
    /// 0 uses the default thread pool.
    pub workers: u64,
    pub enforce_decrease: bool,
    pub warm_start_prox: bool,
}

impl From<&BsgdSolverConfig> for SolverConfig {
    fn from(c: &BsgdSolverConfig) -> Self {
        SolverConfig {
            mu: c.mu,
            lambda: c.lambda,
            alpha: c.alpha,
            gamma: c.gamma,
            epochs: c.epochs as usize,
            seed: c.seed,
            prox: ProxSettings {
                max_inner_iters: c.prox_max_inner_iters as usize,
                tol: c.prox_tol,
            },
            rho: c.rho,
            cg_iters: c.cg_iters as usize,
            workers: (c.workers > 0).then_some(c.workers as usize),
            enforce_decrease: c.enforce_decrease,
            warm_start_prox: c.warm_start_prox,
            ..SolverConfig::default()
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BsgdTraceSample {
    pub epoch: f64,
    pub relative_error: f64,
    pub objective: f64,
    pub matvec_units: f64,
}

/// Opaque reconstruction problem: operator, measurements, ground truth.
pub struct BsgdProblem {
    inner: Problem,
}

/// Opaque convergence trace.
pub struct BsgdTrace {
    inner: ConvergenceTrace,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let text = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(e: &Error) -> BsgdStatus {
    match e {
        Error::Shape(_) => BsgdStatus::ShapeMismatch,
        Error::Io(_) => BsgdStatus::Io,
        Error::Parse(_) => BsgdStatus::Parse,
        Error::Divergence { .. } => BsgdStatus::Divergence,
        _ => BsgdStatus::InvalidArgument,
    }
}

fn fail(e: Error) -> BsgdStatus {
    set_last_error(&e.to_string());
    status_of(&e)
}

fn null(what: &str) -> BsgdStatus {
    set_last_error(&format!("null pointer: {what}"));
    BsgdStatus::NullPointer
}

fn guard(f: impl FnOnce() -> BsgdStatus) -> BsgdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == BsgdStatus::Ok {
                set_last_error("");
            }
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            BsgdStatus::Panic
        }
    }
}

/// Message describing the last failure on this thread; empty after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn bsgd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn bsgd_solver_config_default() -> BsgdSolverConfig {
    let d = SolverConfig::default();
    BsgdSolverConfig {
        mu: d.mu,
        lambda: d.lambda,
        alpha: d.alpha,
        gamma: d.gamma,
        epochs: d.epochs as u64,
        seed: d.seed,
        prox_max_inner_iters: d.prox.max_inner_iters as u64,
        prox_tol: d.prox.tol,
        rho: d.rho,
        cg_iters: d.cg_iters as u64,
        workers: 0,
        enforce_decrease: d.enforce_decrease,
        warm_start_prox: d.warm_start_prox,
    }
}

/// Simulates the default fan-beam scan of an `size x size` phantom and
/// partitions the operator into `row_blocks x col_blocks`. Pass `INFINITY`
/// as `snr_db` for noiseless measurements.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn bsgd_problem_simulate(
    size: usize,
    angles: usize,
    snr_db: f64,
    seed: u64,
    row_blocks: usize,
    col_blocks: usize,
    out: *mut *mut BsgdProblem,
) -> BsgdStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let mut geom = FanBeamGeometry::for_size(size);
        geom.num_angles = angles;
        let built = simulate(&geom, snr_db, seed).and_then(|scan| {
            let op = BlockOperator::whole(scan.matrix)?.with_blocks(row_blocks, col_blocks)?;
            Problem::new(op, scan.noisy, scan.x_true, scan.layout)
        });
        match built {
            Ok(p) => {
                *out = Box::into_raw(Box::new(BsgdProblem { inner: p }));
                BsgdStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Loads `matrix.txt`, `phantom.txt` and `y_noisy.txt` written by
/// `bsgd-tv simulate` from `data_dir`. `quadtree` selects the pixel layout
/// the matrix was written in (nonzero for quadtree, zero for row-major).
///
/// # Safety
/// `data_dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsgd_problem_load(
    data_dir: *const c_char,
    quadtree: bool,
    row_blocks: usize,
    col_blocks: usize,
    out: *mut *mut BsgdProblem,
) -> BsgdStatus {
    guard(|| {
        if data_dir.is_null() {
            return null("data_dir");
        }
        if out.is_null() {
            return null("out");
        }
        let Ok(dir) = CStr::from_ptr(data_dir).to_str() else {
            set_last_error("data_dir is not UTF-8");
            return BsgdStatus::InvalidArgument;
        };
        let dir = Path::new(dir);
        let kind = if quadtree { LayoutKind::Quadtree } else { LayoutKind::RowMajor };
        let built = (|| {
            let matrix = SparseMatrix::load(dir.join("matrix.txt"))?;
            let phantom = ImageGrid::load_text(dir.join("phantom.txt"))?;
            let y = load_vector(dir.join("y_noisy.txt"))?;
            let layout = PixelLayout::new(phantom.height(), phantom.width(), kind);
            let x_true = layout.from_grid(&phantom)?;
            let op = BlockOperator::whole(matrix)?.with_blocks(row_blocks, col_blocks)?;
            Problem::new(op, y, x_true, layout)
        })();
        match built {
            Ok(p) => {
                *out = Box::into_raw(Box::new(BsgdProblem { inner: p }));
                BsgdStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `problem` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bsgd_problem_free(problem: *mut BsgdProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// # Safety
/// `problem` must be a live handle; `rows` and `cols` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsgd_problem_dims(
    problem: *const BsgdProblem,
    rows: *mut usize,
    cols: *mut usize,
) -> BsgdStatus {
    guard(|| {
        let Some(p) = problem.as_ref() else {
            return null("problem");
        };
        if rows.is_null() || cols.is_null() {
            return null("rows/cols");
        }
        *rows = p.inner.op.nrows();
        *cols = p.inner.op.ncols();
        BsgdStatus::Ok
    })
}

/// Largest eigenvalue of `A^T A` by power iteration.
///
/// # Safety
/// `problem` must be a live handle; `u_max` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsgd_problem_largest_eigenvalue(
    problem: *const BsgdProblem,
    tol: f64,
    max_iters: usize,
    u_max: *mut f64,
) -> BsgdStatus {
    guard(|| {
        let Some(p) = problem.as_ref() else {
            return null("problem");
        };
        if u_max.is_null() {
            return null("u_max");
        }
        match largest_eigenvalue(&p.inner.op, tol, max_iters) {
            Ok(est) => {
                *u_max = est.u_max;
                BsgdStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Runs a solver. On [`BsgdStatus::Divergence`] `*out` still receives the
/// partial trace, which the caller must free.
///
/// # Safety
/// `problem` and `config` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsgd_run(
    problem: *const BsgdProblem,
    kind: BsgdSolverKind,
    config: *const BsgdSolverConfig,
    sample_every: usize,
    out: *mut *mut BsgdTrace,
) -> BsgdStatus {
    guard(|| {
        let Some(p) = problem.as_ref() else {
            return null("problem");
        };
        let Some(c) = config.as_ref() else {
            return null("config");
        };
        if out.is_null() {
            return null("out");
        }
        *out = ptr::null_mut();
        match run_solver(kind.into(), &p.inner, &c.into(), sample_every) {
            Ok(trace) => {
                *out = Box::into_raw(Box::new(BsgdTrace { inner: trace }));
                BsgdStatus::Ok
            }
            Err(Error::Divergence { epoch, trace }) => {
                *out = Box::into_raw(Box::new(BsgdTrace { inner: *trace }));
                set_last_error(&format!("solver diverged at epoch {epoch}"));
                BsgdStatus::Divergence
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `trace` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bsgd_trace_free(trace: *mut BsgdTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bsgd_trace_len(trace: *const BsgdTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.inner.samples.len())
}

/// # Safety
/// `trace` must be a live handle; `sample` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsgd_trace_sample(
    trace: *const BsgdTrace,
    index: usize,
    sample: *mut BsgdTraceSample,
) -> BsgdStatus {
    guard(|| {
        let Some(t) = trace.as_ref() else {
            return null("trace");
        };
        if sample.is_null() {
            return null("sample");
        }
        let Some(s) = t.inner.samples.get(index) else {
            set_last_error(&format!("sample index {index} out of range ({})", t.inner.samples.len()));
            return BsgdStatus::InvalidArgument;
        };
        *sample = BsgdTraceSample {
            epoch: s.epoch,
            relative_error: s.relative_error,
            objective: s.objective,
            matvec_units: s.matvec_units,
        };
        BsgdStatus::Ok
    })
}

/// Copies the final iterate into `buf`, which must hold `len` values equal
/// to the problem's column count.
///
/// # Safety
/// `trace` must be a live handle; `buf` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn bsgd_trace_final_iterate(trace: *const BsgdTrace, buf: *mut f64, len: usize) -> BsgdStatus {
    guard(|| {
        let Some(t) = trace.as_ref() else {
            return null("trace");
        };
        if buf.is_null() {
            return null("buf");
        }
        let x = &t.inner.final_iterate;
        if x.len() != len {
            set_last_error(&format!("buffer holds {len} values, iterate has {}", x.len()));
            return BsgdStatus::ShapeMismatch;
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(x);
        BsgdStatus::Ok
    })
}

/// Writes the trace as CSV (`epoch,relative_error,objective,matvec_units`).
///
/// # Safety
/// `trace` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bsgd_trace_write_csv(trace: *const BsgdTrace, path: *const c_char) -> BsgdStatus {
    guard(|| {
        let Some(t) = trace.as_ref() else {
            return null("trace");
        };
        if path.is_null() {
            return null("path");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            set_last_error("path is not UTF-8");
            return BsgdStatus::InvalidArgument;
        };
        match t.inner.save_csv(path) {
            Ok(()) => BsgdStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

unsafe fn image_from(data: *const f64, height: usize, width: usize) -> Result<ImageGrid, BsgdStatus> {
    if data.is_null() {
        return Err(null("data"));
    }
    let values = std::slice::from_raw_parts(data, height * width).to_vec();
    ImageGrid::new(height, width, values).map_err(fail)
}

/// Isotropic total variation of a row-major image.
///
/// # Safety
/// `data` must hold `height * width` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsgd_tv_value(data: *const f64, height: usize, width: usize, out: *mut f64) -> BsgdStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        match image_from(data, height, width) {
            Ok(img) => {
                *out = tv_value(&img);
                BsgdStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// `argmin_t ||t - x||^2 + 2 weight TV(t)` for a row-major image; `out` may
/// alias `data`.
///
/// # Safety
/// `data` and `out` must each hold `height * width` values.
#[no_mangle]
pub unsafe extern "C" fn bsgd_tv_prox(
    data: *const f64,
    height: usize,
    width: usize,
    weight: f64,
    max_inner_iters: usize,
    tol: f64,
    out: *mut f64,
) -> BsgdStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let img = match image_from(data, height, width) {
            Ok(img) => img,
            Err(s) => return s,
        };
        let settings = ProxSettings { max_inner_iters, tol };
        match tv_prox(&img, weight, &settings) {
            Ok(t) => {
                std::slice::from_raw_parts_mut(out, height * width).copy_from_slice(t.data());
                BsgdStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
