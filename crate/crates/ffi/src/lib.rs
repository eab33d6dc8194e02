//! C ABI over `arcdog`.
//!
//! Every fallible entry point returns an [`ArcdogStatus`]. On failure the
//! message is available from [`arcdog_last_error`] on the same thread until
//! the next failing call. Handles are opaque and must be released with their
//! `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use arcdog::analysis::knn_features;
use arcdog::data::{generate_synthetic, load_dataset, Dataset, SyntheticSpec};
use arcdog::model::{load_checkpoint, ModelParams};
use arcdog::numerics::{pinv_least_squares, Ridge, Tensor};
use arcdog::{Error, ErrorKind};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArcdogStatus {
    Ok = 0,
    /// Bad argument or configuration.
    Usage = 1,
    /// Malformed or missing input data.
    Data = 2,
    /// Rank deficiency, non-finite values or a degenerate batch.
    Numerical = 3,
    NullPointer = 4,
    Panic = 5,
}

/// A loaded or generated dataset.
pub struct ArcdogDataset {
    inner: Dataset,
}

/// Trained classifier parameters.
pub struct ArcdogModel {
    inner: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(err: Error) -> ArcdogStatus {
    let status = match err.kind() {
        ErrorKind::Usage => ArcdogStatus::Usage,
        ErrorKind::Data => ArcdogStatus::Data,
        ErrorKind::Numerical => ArcdogStatus::Numerical,
    };
    set_error(err.to_string());
    status
}

fn null(what: &str) -> ArcdogStatus {
    set_error(format!("null pointer: {what}"));
    ArcdogStatus::NullPointer
}

fn guard(f: impl FnOnce() -> ArcdogStatus) -> ArcdogStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".into());
            ArcdogStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, ArcdogStatus> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(Error::Invalid("path is not UTF-8".into())))
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn arcdog_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn arcdog_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a binary dataset cache.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn arcdog_dataset_load(path: *const c_char, out: *mut *mut ArcdogDataset) -> ArcdogStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_dataset(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ArcdogDataset { inner }));
                ArcdogStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Generate the synthetic benchmark with default settings, a `grid × grid`
/// lattice and the given seed.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn arcdog_dataset_synthetic(grid: usize, seed: u64, out: *mut *mut ArcdogDataset) -> ArcdogStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let spec = SyntheticSpec {
            grid,
            seed,
            ..SyntheticSpec::default()
        };
        match generate_synthetic(&spec) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ArcdogDataset { inner }));
                ArcdogStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of samples, or 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn arcdog_dataset_len(dataset: *const ArcdogDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// Quadrant id of every sample, written to `out_regions[0..len]`.
///
/// # Safety
/// `dataset` must be a live handle and `out_regions` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn arcdog_dataset_regions(
    dataset: *const ArcdogDataset,
    out_regions: *mut u8,
    len: usize,
) -> ArcdogStatus {
    guard(|| {
        let Some(d) = dataset.as_ref() else { return null("dataset") };
        if out_regions.is_null() {
            return null("out_regions");
        }
        if len != d.inner.len() {
            return fail(Error::Invalid(format!("buffer holds {len}, dataset has {}", d.inner.len())));
        }
        let out = slice::from_raw_parts_mut(out_regions, len);
        for (o, s) in out.iter_mut().zip(&d.inner.samples) {
            *o = s.region;
        }
        ArcdogStatus::Ok
    })
}

/// # Safety
/// `dataset` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn arcdog_dataset_free(dataset: *mut ArcdogDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Least-squares regression of `targets` (`m × d`, row-major) on `features`
/// (`m × f`) with a fixed ridge. Writes the residual and target Frobenius
/// norms, and the `f × d` coefficients when `out_coefficients` is not NULL.
///
/// # Safety
/// Input buffers must hold `m*f` and `m*d` doubles; `out_coefficients`, if
/// given, must hold `f*d` doubles.
#[no_mangle]
pub unsafe extern "C" fn arcdog_pinv_least_squares(
    features: *const f64,
    m: usize,
    f: usize,
    targets: *const f64,
    d: usize,
    ridge: f64,
    out_residual_norm: *mut f64,
    out_target_norm: *mut f64,
    out_coefficients: *mut f64,
) -> ArcdogStatus {
    guard(|| {
        if features.is_null() || targets.is_null() || out_residual_norm.is_null() || out_target_norm.is_null() {
            return null("features, targets or outputs");
        }
        let theta = match Tensor::new(vec![m, f], slice::from_raw_parts(features, m * f).to_vec()) {
            Ok(t) => t,
            Err(e) => return fail(e),
        };
        let v = match Tensor::new(vec![m, d], slice::from_raw_parts(targets, m * d).to_vec()) {
            Ok(t) => t,
            Err(e) => return fail(e),
        };
        match pinv_least_squares(&theta, &v, Ridge::Fixed(ridge)) {
            Ok(r) => {
                *out_residual_norm = r.residual_norm;
                *out_target_norm = r.target_norm;
                if !out_coefficients.is_null() {
                    slice::from_raw_parts_mut(out_coefficients, f * d).copy_from_slice(r.coefficients.data());
                }
                ArcdogStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Exact Euclidean 1-NN of each `test` row (`m × f`) among `train` rows
/// (`n × f`). Ties go to the lowest region id, then the lowest row.
///
/// # Safety
/// Buffers must hold `n*f`, `n`, `m*f` and (outputs) `m` elements.
#[no_mangle]
pub unsafe extern "C" fn arcdog_knn(
    train: *const f64,
    train_regions: *const u8,
    n: usize,
    test: *const f64,
    m: usize,
    f: usize,
    out_region: *mut u8,
    out_index: *mut usize,
    out_distance: *mut f64,
) -> ArcdogStatus {
    guard(|| {
        if train.is_null() || train_regions.is_null() || test.is_null() {
            return null("inputs");
        }
        if out_region.is_null() || out_index.is_null() || out_distance.is_null() {
            return null("outputs");
        }
        let a = match Tensor::new(vec![n, f], slice::from_raw_parts(train, n * f).to_vec()) {
            Ok(t) => t,
            Err(e) => return fail(e),
        };
        let b = match Tensor::new(vec![m, f], slice::from_raw_parts(test, m * f).to_vec()) {
            Ok(t) => t,
            Err(e) => return fail(e),
        };
        match knn_features(&a, slice::from_raw_parts(train_regions, n), &b) {
            Ok(r) => {
                slice::from_raw_parts_mut(out_region, m).copy_from_slice(&r.region);
                slice::from_raw_parts_mut(out_index, m).copy_from_slice(&r.index);
                slice::from_raw_parts_mut(out_distance, m).copy_from_slice(&r.distance);
                ArcdogStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Load a checkpoint written by `arcdog train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn arcdog_model_load(path: *const c_char, out: *mut *mut ArcdogModel) -> ArcdogStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_checkpoint(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ArcdogModel { inner }));
                ArcdogStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Input shape `(timepoints, channels)`, class count and feature width.
///
/// # Safety
/// `model` must be a live handle; each output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn arcdog_model_dims(
    model: *const ArcdogModel,
    out_timepoints: *mut usize,
    out_channels: *mut usize,
    out_classes: *mut usize,
    out_features: *mut usize,
) -> ArcdogStatus {
    let Some(m) = model.as_ref() else { return null("model") };
    let c = m.inner.config();
    for (p, v) in [
        (out_timepoints, c.timepoints),
        (out_channels, c.input_channels),
        (out_classes, c.num_classes),
        (out_features, c.feature_dim),
    ] {
        if let Some(p) = p.as_mut() {
            *p = v;
        }
    }
    ArcdogStatus::Ok
}

/// Eval-mode forward pass on `batch` standardized inputs laid out
/// `[batch, timepoints, channels]`. Writes `batch × classes` logits and,
/// when `out_features` is not NULL, `batch × feature_dim` features.
///
/// # Safety
/// `input` must hold `batch*timepoints*channels` doubles and the outputs
/// their stated sizes.
#[no_mangle]
pub unsafe extern "C" fn arcdog_model_forward(
    model: *const ArcdogModel,
    input: *const f64,
    batch: usize,
    out_logits: *mut f64,
    out_features: *mut f64,
) -> ArcdogStatus {
    guard(|| {
        let Some(m) = model.as_ref() else { return null("model") };
        if input.is_null() || out_logits.is_null() {
            return null("input or out_logits");
        }
        let c = m.inner.config();
        let shape = vec![batch, c.timepoints, c.input_channels];
        let n: usize = shape.iter().product();
        let x = match Tensor::new(shape, slice::from_raw_parts(input, n).to_vec()) {
            Ok(t) => t,
            Err(e) => return fail(e),
        };
        match m.inner.infer(&x) {
            Ok((logits, features)) => {
                slice::from_raw_parts_mut(out_logits, logits.len()).copy_from_slice(logits.data());
                if !out_features.is_null() {
                    slice::from_raw_parts_mut(out_features, features.len()).copy_from_slice(features.data());
                }
                ArcdogStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn arcdog_model_free(model: *mut ArcdogModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
