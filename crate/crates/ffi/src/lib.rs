//! C interface to `ccr-gnn`.
//!
//! Every function returns a [`CcrStatus`]; on failure the thread-local
//! message from [`ccr_last_error_message`] describes it. Handles are opaque
//! and must be released with their `_free` function. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ccr_gnn::c2g::{build_graph, FeatureGraph};
use ccr_gnn::eval::{confusion, macro_metrics};
use ccr_gnn::model::{forward, Checkpoint};
use ccr_gnn::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Contract = 5,
    NonFinite = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Macro-averaged metrics of a set of predictions.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CcrMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// A loaded checkpoint.
pub struct CcrModel {
    ckpt: Checkpoint,
}

/// A feature graph built from one vector.
pub struct CcrGraph {
    graph: FeatureGraph,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let mut bytes = message.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let msg = CString::new(bytes).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> CcrStatus {
    match e {
        Error::Io { .. } => CcrStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) => CcrStatus::Checkpoint,
        Error::Contract(_) => CcrStatus::Contract,
        Error::NonFinite(_) => CcrStatus::NonFinite,
        _ => CcrStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (CcrStatus, String)>) -> CcrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CcrStatus::Ok
        }
        Ok(Err((status, msg))) => {
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
            CcrStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (CcrStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (CcrStatus, String) {
    (CcrStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `ptr` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], (CcrStatus, String)> {
    if ptr.is_null() {
        if len == 0 {
            return Ok(&[]);
        }
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// Message describing the last failure on this thread; empty after a
/// success. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ccr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ccr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ccr_model_load(path: *const c_char, out: *mut *mut CcrModel) -> CcrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|e| (CcrStatus::InvalidArgument, format!("path is not UTF-8: {e}")))?;
        let ckpt = Checkpoint::load(path).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(CcrModel { ckpt }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`ccr_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ccr_model_free(model: *mut CcrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Encoded feature count the model expects; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccr_model_feature_dim(model: *const CcrModel) -> usize {
    model.as_ref().map_or(0, |m| m.ckpt.header.feature_dim)
}

/// Number of rating classes; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccr_model_num_classes(model: *const CcrModel) -> usize {
    model.as_ref().map_or(0, |m| m.ckpt.header.model.num_classes)
}

/// # Safety
/// `model` must be live and `x` must hold `len` values.
unsafe fn run_forward(
    model: *const CcrModel,
    x: *const f64,
    len: usize,
) -> Result<ccr_gnn::model::ForwardTrace, (CcrStatus, String)> {
    let model = model.as_ref().ok_or_else(|| null("model"))?;
    let x = slice(x, len, "x")?;
    let header = &model.ckpt.header;
    if len != header.feature_dim {
        return Err((
            CcrStatus::InvalidArgument,
            format!("expected {} features, got {len}", header.feature_dim),
        ));
    }
    let graph = build_graph(x, header.model.c2g_step).map_err(lib_err)?;
    forward(&model.ckpt.params, &header.model, &graph).map_err(lib_err)
}

/// Writes the most probable class index (lowest on ties) to `*out_class`.
///
/// # Safety
/// `model` must be live, `x` must hold `len` values and `out_class` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ccr_model_predict(
    model: *const CcrModel,
    x: *const f64,
    len: usize,
    out_class: *mut usize,
) -> CcrStatus {
    guard(|| {
        if out_class.is_null() {
            return Err(null("out_class"));
        }
        *out_class = run_forward(model, x, len)?.predicted();
        Ok(())
    })
}

/// Writes class probabilities to `out[0..num_classes]`.
///
/// # Safety
/// `model` must be live, `x` must hold `len` values and `out` must have room
/// for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn ccr_model_probabilities(
    model: *const CcrModel,
    x: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> CcrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = run_forward(model, x, len)?.probabilities();
        if out_len < p.len() {
            return Err((
                CcrStatus::BufferTooSmall,
                format!("need room for {} probabilities, got {out_len}", p.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, p.len()).copy_from_slice(&p);
        Ok(())
    })
}

/// Builds the connected feature graph of `x[0..len]` into `*out`.
///
/// # Safety
/// `x` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ccr_graph_build(
    x: *const f64,
    len: usize,
    step: f64,
    out: *mut *mut CcrGraph,
) -> CcrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let x = slice(x, len, "x")?;
        let graph = build_graph(x, step).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(CcrGraph { graph }));
        Ok(())
    })
}

/// # Safety
/// `graph` must be null or a handle from [`ccr_graph_build`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ccr_graph_free(graph: *mut CcrGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccr_graph_num_nodes(graph: *const CcrGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.graph.num_nodes())
}

/// Number of undirected edges, self-loops excluded.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccr_graph_num_edges(graph: *const CcrGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.graph.edges().len())
}

/// Threshold at which the graph became connected; NaN for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccr_graph_threshold(graph: *const CcrGraph) -> f64 {
    graph.as_ref().map_or(f64::NAN, |g| g.graph.threshold())
}

/// Writes edges as `(i, j)` pairs with `i < j`, flattened into
/// `out[0..2·num_edges]`.
///
/// # Safety
/// `graph` must be live and `out` must have room for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn ccr_graph_edges(graph: *const CcrGraph, out: *mut usize, out_len: usize) -> CcrStatus {
    guard(|| {
        let graph = graph.as_ref().ok_or_else(|| null("graph"))?;
        let edges = graph.graph.edges();
        if edges.is_empty() {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < 2 * edges.len() {
            return Err((
                CcrStatus::BufferTooSmall,
                format!("need room for {} values, got {out_len}", 2 * edges.len()),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(out, 2 * edges.len());
        for (k, &(i, j)) in edges.iter().enumerate() {
            dst[2 * k] = i;
            dst[2 * k + 1] = j;
        }
        Ok(())
    })
}

/// Macro metrics of `len` (prediction, truth) pairs over `num_classes`.
///
/// # Safety
/// `predictions` and `truths` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ccr_macro_metrics(
    predictions: *const usize,
    truths: *const usize,
    len: usize,
    num_classes: usize,
    out: *mut CcrMetrics,
) -> CcrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = slice(predictions, len, "predictions")?;
        let t = slice(truths, len, "truths")?;
        let cm = confusion(p, t, num_classes).map_err(lib_err)?;
        let r = macro_metrics(&cm).map_err(lib_err)?;
        *out = CcrMetrics {
            accuracy: r.accuracy,
            macro_precision: r.macro_precision,
            macro_recall: r.macro_recall,
            macro_f1: r.macro_f1,
        };
        Ok(())
    })
}
