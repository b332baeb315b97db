//! C ABI over `cherrynet`.
//!
//! Objects cross the boundary as opaque heap handles (`CnTensor`,
//! `CnSolveReport`) that the caller releases with the matching `*_free`.
//! Every fallible call returns a `CnStatus`; on failure a description is
//! available from `cn_last_error()` on the same thread.
//!
//! Tensors are column-major with the first index fastest.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use cherrynet::eval::{gen_mask, psnr, rmse, rse, ssim, Mask, MaskKind, MaskSpec};
use cherrynet::params::{param_count, ModelRanks};
use cherrynet::solver::{pam_solve, CompletionProblem, SolveReport, SolverConfig};
use cherrynet::{io, DenseTensor, Error, RankMatrix};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Parse = 5,
    NonFinite = 6,
    DecreaseViolation = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnModel {
    Ifctn = 0,
    Fctn = 1,
    Tucker = 2,
    Tt = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnMaskKind {
    Random = 0,
    Fiber = 1,
}

/// Solver settings. `init_scale <= 0` picks the data-driven default.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CnSolverConfig {
    pub rho: f64,
    pub max_iter: usize,
    pub eps: f64,
    pub seed: u64,
    pub init_scale: f64,
    pub assert_decrease: bool,
    pub threads: usize,
}

/// Recovery metrics; fields that were not computed are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CnMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub rse: f64,
    pub rmse: f64,
}

/// Opaque dense tensor.
pub struct CnTensor(DenseTensor);

/// Opaque result of a completion run.
pub struct CnSolveReport(SolveReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CnStatus {
    match e {
        Error::ShapeMismatch(_) => CnStatus::ShapeMismatch,
        Error::Io { .. } => CnStatus::Io,
        Error::Parse { .. } => CnStatus::Parse,
        Error::NonFinite(_) => CnStatus::NonFinite,
        Error::DecreaseViolation { .. } => CnStatus::DecreaseViolation,
        _ => CnStatus::InvalidArgument,
    }
}

struct Fail(CnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CnStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            CnStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            CnStatus::Panic
        }
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn tensor_arg<'a>(p: *const CnTensor, what: &str) -> Result<&'a DenseTensor, Fail> {
    p.as_ref().map(|t| &t.0).ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message describing the last failure on this thread ("" after a success).
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a tensor. `values` may be null for zeros, otherwise it must hold
/// the product of `shape` entries.
///
/// # Safety
/// `shape` must point to `order` entries; `values` (if non-null) to the full
/// element count; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cn_tensor_new(
    shape: *const usize,
    order: usize,
    values: *const f64,
    out: *mut *mut CnTensor,
) -> CnStatus {
    guard(|| {
        let shape = slice_arg(shape, order, "shape")?.to_vec();
        let t = if values.is_null() {
            DenseTensor::zeros(&shape)?
        } else {
            let n = shape.iter().product();
            DenseTensor::new(shape, slice::from_raw_parts(values, n).to_vec())?
        };
        put(out, CnTensor(t))
    })
}

/// # Safety
/// `t` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cn_tensor_free(t: *mut CnTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Order of the tensor, 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cn_tensor_order(t: *const CnTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.order())
}

/// Number of elements, 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cn_tensor_len(t: *const CnTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.len())
}

/// Copies the dimensions into `dims`, which must have room for the order.
///
/// # Safety
/// `t` must be a live handle and `dims` must have `capacity` slots.
#[no_mangle]
pub unsafe extern "C" fn cn_tensor_shape(t: *const CnTensor, dims: *mut usize, capacity: usize) -> CnStatus {
    guard(|| {
        let t = tensor_arg(t, "tensor")?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        if capacity < t.order() {
            return Err(Fail(
                CnStatus::InvalidArgument,
                format!("dims has room for {capacity}, order is {}", t.order()),
            ));
        }
        ptr::copy_nonoverlapping(t.shape().as_ptr(), dims, t.order());
        Ok(())
    })
}

/// Borrowed pointer to the element data; valid while the handle lives.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cn_tensor_values(t: *const CnTensor) -> *const f64 {
    t.as_ref().map_or(ptr::null(), |t| t.0.values().as_ptr())
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cn_tensor_read(path: *const c_char, out: *mut *mut CnTensor) -> CnStatus {
    guard(|| {
        let t = io::read_tensor(str_arg(path, "path")?)?;
        put(out, CnTensor(t))
    })
}

/// # Safety
/// `t` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cn_tensor_write(t: *const CnTensor, path: *const c_char) -> CnStatus {
    guard(|| {
        io::write_tensor(str_arg(path, "path")?, tensor_arg(t, "tensor")?)?;
        Ok(())
    })
}

fn rank_matrix(order: usize, ranks: &[usize]) -> Result<RankMatrix, Fail> {
    Ok(RankMatrix::from_upper(order, ranks)?)
}

/// Storage cost of `model`. iFCTN and FCTN take the `N(N-1)/2` upper-triangle
/// ranks row by row, Tucker takes `N` ranks and TT `N-1` interior ranks.
///
/// # Safety
/// `shape` must hold `order` entries, `ranks` `n_ranks` entries; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cn_param_count(
    shape: *const usize,
    order: usize,
    model: CnModel,
    ranks: *const usize,
    n_ranks: usize,
    out: *mut u64,
) -> CnStatus {
    guard(|| {
        let shape = slice_arg(shape, order, "shape")?;
        let ranks = slice_arg(ranks, n_ranks, "ranks")?;
        let m = match model {
            CnModel::Ifctn => ModelRanks::IFctn(rank_matrix(order, ranks)?),
            CnModel::Fctn => ModelRanks::Fctn(rank_matrix(order, ranks)?),
            CnModel::Tucker => ModelRanks::Tucker(ranks.to_vec()),
            CnModel::Tt => ModelRanks::Tt(ranks.to_vec()),
        };
        let count = param_count(shape, &m)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = count;
        Ok(())
    })
}

/// Observation mask as a 0/1 tensor (1 = observed). `fiber_mode` is 0-based
/// and ignored for the random kind.
///
/// # Safety
/// `shape` must hold `order` entries and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn cn_gen_mask(
    shape: *const usize,
    order: usize,
    kind: CnMaskKind,
    rate: f64,
    fiber_mode: usize,
    seed: u64,
    out: *mut *mut CnTensor,
) -> CnStatus {
    guard(|| {
        let shape = slice_arg(shape, order, "shape")?;
        let spec = MaskSpec {
            kind: match kind {
                CnMaskKind::Random => MaskKind::Random,
                CnMaskKind::Fiber => MaskKind::Fiber,
            },
            rate,
            fiber_mode,
            seed,
        };
        put(out, CnTensor(gen_mask(shape, &spec)?.to_tensor()))
    })
}

#[no_mangle]
pub extern "C" fn cn_solver_config_default() -> CnSolverConfig {
    let d = SolverConfig::default();
    CnSolverConfig {
        rho: d.rho,
        max_iter: d.max_iter,
        eps: d.eps,
        seed: d.seed,
        init_scale: 0.0,
        assert_decrease: d.assert_decrease,
        threads: d.threads,
    }
}

/// Completes `observed` on the entries where `mask` is 0. `ranks` holds the
/// upper triangle of the iFCTN rank matrix; a null `config` means defaults.
///
/// # Safety
/// Handles must be live, `ranks` must hold `n_ranks` entries, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cn_complete(
    observed: *const CnTensor,
    mask: *const CnTensor,
    ranks: *const usize,
    n_ranks: usize,
    config: *const CnSolverConfig,
    out: *mut *mut CnSolveReport,
) -> CnStatus {
    guard(|| {
        let observed = tensor_arg(observed, "observed")?.clone();
        let mask = Mask::from_tensor(tensor_arg(mask, "mask")?)?;
        let ranks = rank_matrix(observed.order(), slice_arg(ranks, n_ranks, "ranks")?)?;
        let c = config.as_ref().copied().unwrap_or_else(|| cn_solver_config_default());
        let config = SolverConfig {
            rho: c.rho,
            max_iter: c.max_iter,
            eps: c.eps,
            seed: c.seed,
            init_scale: (c.init_scale > 0.0).then_some(c.init_scale),
            assert_decrease: c.assert_decrease,
            threads: c.threads,
        };
        let problem = CompletionProblem::new(observed, mask, ranks)?;
        put(out, CnSolveReport(pam_solve(&problem, &config)?))
    })
}

/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn cn_report_free(r: *mut CnSolveReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn cn_report_iterations(r: *const CnSolveReport) -> usize {
    r.as_ref().map_or(0, |r| r.0.iterations)
}

/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn cn_report_converged(r: *const CnSolveReport) -> bool {
    r.as_ref().is_some_and(|r| r.0.converged)
}

/// Objective after each iteration; `*len` receives the count. The pointer is
/// borrowed from the report.
///
/// # Safety
/// `r` must be null or a live report handle; `len` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn cn_report_objective_trace(r: *const CnSolveReport, len: *mut usize) -> *const f64 {
    let (p, n) = r
        .as_ref()
        .map_or((ptr::null(), 0), |r| (r.0.objective_trace.as_ptr(), r.0.objective_trace.len()));
    if !len.is_null() {
        *len = n;
    }
    p
}

/// Copies the recovered tensor into a new handle.
///
/// # Safety
/// `r` must be a live report handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cn_report_recovered(r: *const CnSolveReport, out: *mut *mut CnTensor) -> CnStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("report"))?;
        put(out, CnTensor(r.0.x.clone()))
    })
}

/// Metrics of `recovered` against `truth`. `mask` may be null, in which case
/// `rmse` is NaN; `ssim` is NaN for tensors that are not order 2 or 3.
///
/// # Safety
/// Handles must be live (or null for `mask`) and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cn_metrics(
    truth: *const CnTensor,
    recovered: *const CnTensor,
    mask: *const CnTensor,
    out: *mut CnMetrics,
) -> CnStatus {
    guard(|| {
        let truth = tensor_arg(truth, "truth")?;
        let recovered = tensor_arg(recovered, "recovered")?;
        let mask = mask.as_ref().map(|m| Mask::from_tensor(&m.0)).transpose()?;
        let m = CnMetrics {
            psnr: psnr(truth, recovered)?,
            ssim: match truth.order() {
                2 | 3 => ssim(truth, recovered)?,
                _ => f64::NAN,
            },
            rse: rse(truth, recovered)?,
            rmse: match &mask {
                Some(m) => rmse(truth, recovered, m)?,
                None => f64::NAN,
            },
        };
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds_map_to_codes() {
        assert_eq!(status_of(&Error::NonFinite("x".into())), CnStatus::NonFinite);
        assert_eq!(status_of(&Error::ShapeMismatch("x".into())), CnStatus::ShapeMismatch);
        assert_eq!(status_of(&Error::InvalidRanks("x".into())), CnStatus::InvalidArgument);
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), CnStatus::Panic);
        assert_eq!(
            unsafe { CStr::from_ptr(cn_last_error()) }.to_str().unwrap(),
            "internal panic"
        );
    }
}
