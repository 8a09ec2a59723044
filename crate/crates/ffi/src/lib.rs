//! C ABI for the semial engine.
//!
//! Conventions:
//!
//! - Every fallible function returns a [`SemialStatus`]; on anything but
//!   `SEMIAL_STATUS_OK` a message is available from [`semial_last_error`]
//!   on the same thread.
//! - Objects are opaque handles created by `*_new`/`*_load`/`*_build`
//!   functions and released with the matching `*_free`. Passing NULL to a
//!   `*_free` function is a no-op.
//! - Output arrays are caller-allocated; functions taking a capacity fail
//!   with `SEMIAL_STATUS_BUFFER_TOO_SMALL` rather than write past it.
//! - Panics never cross the boundary; they surface as `SEMIAL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use semial::cli::{run_args_from_config_text, run_config, strategies_of};
use semial::dataset::{Dataset, Format, LabelState};
use semial::driver::{records_jsonl, run};
use semial::graph::{build_reciprocal_knn, SparseGraph};
use semial::propagate::{certainty_weight, entropy, pseudo_label_all, CgSettings, Propagation};
use semial::{Error, Matrix};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemialStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    NoConvergence = 5,
    BufferTooSmall = 6,
    Runtime = 7,
    Panic = 8,
}

/// A dataset: features plus hidden ground-truth labels.
pub struct SemialDataset {
    inner: Dataset,
}

/// A symmetric affinity graph with its normalized operator.
pub struct SemialGraph {
    inner: SparseGraph,
}

/// Propagation result: pseudo-labels and certainty weights for unlabeled nodes.
pub struct SemialPropagation {
    inner: Propagation,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> SemialStatus {
    match err {
        Error::Io { .. } => SemialStatus::Io,
        Error::Parse { .. } => SemialStatus::Parse,
        Error::NoConvergence { .. } => SemialStatus::NoConvergence,
        Error::InvalidInput(_)
        | Error::DimensionMismatch { .. }
        | Error::IndexOutOfRange { .. }
        | Error::NotEnoughExamples { .. }
        | Error::AlreadyLabeled(_)
        | Error::Config(_) => SemialStatus::InvalidArgument,
        _ => SemialStatus::Runtime,
    }
}

enum Fail {
    Null(&'static str),
    Small { needed: usize, capacity: usize },
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

/// Runs `f`, translating errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SemialStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SemialStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_last_error(&format!("{what} must not be NULL"));
            SemialStatus::NullPointer
        }
        Ok(Err(Fail::Small { needed, capacity })) => {
            set_last_error(&format!("buffer holds {capacity} elements, {needed} needed"));
            SemialStatus::BufferTooSmall
        }
        Ok(Err(Fail::Core(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            SemialStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn as_slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn as_slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn as_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Core(Error::InvalidInput(format!("{what} is not valid UTF-8"))))
}

fn check_capacity(needed: usize, capacity: usize) -> Result<(), Fail> {
    if capacity < needed {
        return Err(Fail::Small { needed, capacity });
    }
    Ok(())
}

/// Message describing the last failure on this thread; empty after a
/// success. The pointer stays valid until the next call into this library
/// from the same thread.
#[no_mangle]
pub extern "C" fn semial_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn semial_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a dataset. `format` is "csv" or "raw-f32", or NULL to guess from
/// the file extension.
///
/// # Safety
/// `path` must be a NUL-terminated string, `format` NULL or NUL-terminated,
/// and `out` a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn semial_dataset_load(
    path: *const c_char,
    format: *const c_char,
    out: *mut *mut SemialDataset,
) -> SemialStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let path = Path::new(as_str(path, "path")?);
        let fmt = if format.is_null() {
            Format::from_path(path)
        } else {
            as_str(format, "format")?.parse()?
        };
        let ds = Dataset::load(path, fmt)?;
        *out = Box::into_raw(Box::new(SemialDataset { inner: ds }));
        Ok(())
    })
}

/// Builds a dataset from a row-major `n x d` feature array and `n` labels in
/// `0..c`.
///
/// # Safety
/// `features` must point to `n * d` doubles, `labels` to `n` values, and
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn semial_dataset_from_arrays(
    features: *const f64,
    n: usize,
    d: usize,
    labels: *const u32,
    c: usize,
    out: *mut *mut SemialDataset,
) -> SemialStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let len = n
            .checked_mul(d)
            .ok_or_else(|| Error::InvalidInput("n * d overflows".into()))?;
        let x = as_slice(features, len, "features")?;
        let y = as_slice(labels, n, "labels")?;
        let m = Matrix::from_vec(n, d, x.to_vec())?;
        let ds = Dataset::new(m, y.iter().map(|&v| v as usize).collect(), c)?;
        *out = Box::into_raw(Box::new(SemialDataset { inner: ds }));
        Ok(())
    })
}

/// Number of examples, feature dimension and number of classes. Any output
/// pointer may be NULL.
///
/// # Safety
/// `ds` must be a live dataset handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn semial_dataset_dims(
    ds: *const SemialDataset,
    n: *mut usize,
    d: *mut usize,
    c: *mut usize,
) -> SemialStatus {
    guard(|| {
        let ds = &as_ref(ds, "dataset")?.inner;
        if let Some(n) = n.as_mut() {
            *n = ds.len();
        }
        if let Some(d) = d.as_mut() {
            *d = ds.dim();
        }
        if let Some(c) = c.as_mut() {
            *c = ds.num_classes();
        }
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn semial_dataset_free(ds: *mut SemialDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Reciprocal k-NN graph on the dataset's features.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn semial_graph_build(
    ds: *const SemialDataset,
    k: usize,
    out: *mut *mut SemialGraph,
) -> SemialStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let ds = &as_ref(ds, "dataset")?.inner;
        let g = build_reciprocal_knn(ds.features(), k)?;
        *out = Box::into_raw(Box::new(SemialGraph { inner: g }));
        Ok(())
    })
}

/// Graph on `n` nodes from `m` undirected weighted edges `(src[e], dst[e], weight[e])`.
///
/// # Safety
/// The three arrays must hold `m` elements each; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn semial_graph_from_edges(
    n: usize,
    src: *const usize,
    dst: *const usize,
    weight: *const f64,
    m: usize,
    out: *mut *mut SemialGraph,
) -> SemialStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let (s, t, w) = (as_slice(src, m, "src")?, as_slice(dst, m, "dst")?, as_slice(weight, m, "weight")?);
        let edges: Vec<(usize, usize, f64)> = (0..m).map(|e| (s[e], t[e], w[e])).collect();
        let g = SparseGraph::from_edges(n, &edges)?;
        *out = Box::into_raw(Box::new(SemialGraph { inner: g }));
        Ok(())
    })
}

/// Number of nodes and undirected edges. Either output may be NULL.
///
/// # Safety
/// `g` must be a live graph handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn semial_graph_size(g: *const SemialGraph, nodes: *mut usize, edges: *mut usize) -> SemialStatus {
    guard(|| {
        let g = &as_ref(g, "graph")?.inner;
        if let Some(n) = nodes.as_mut() {
            *n = g.n();
        }
        if let Some(e) = edges.as_mut() {
            *e = g.num_edges();
        }
        Ok(())
    })
}

/// Copies the undirected edges (`src < dst`, ascending) into caller arrays of
/// `capacity` elements each.
///
/// # Safety
/// Each array must be writable for `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn semial_graph_edges(
    g: *const SemialGraph,
    src: *mut usize,
    dst: *mut usize,
    weight: *mut f64,
    capacity: usize,
) -> SemialStatus {
    guard(|| {
        let g = &as_ref(g, "graph")?.inner;
        let edges: Vec<(usize, usize, f64)> =
            g.adjacency().triplets().into_iter().filter(|&(i, j, _)| i < j).collect();
        check_capacity(edges.len(), capacity)?;
        let (s, t, w) = (
            as_slice_mut(src, edges.len(), "src")?,
            as_slice_mut(dst, edges.len(), "dst")?,
            as_slice_mut(weight, edges.len(), "weight")?,
        );
        for (e, &(i, j, v)) in edges.iter().enumerate() {
            s[e] = i;
            t[e] = j;
            w[e] = v;
        }
        Ok(())
    })
}

/// # Safety
/// `g` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn semial_graph_free(g: *mut SemialGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Propagates `m` known labels (`labeled[i]` has class `labels[i]` in `0..c`)
/// over the graph. `tol <= 0` and `max_iter == 0` select the defaults.
///
/// # Safety
/// `labeled` and `labels` must hold `m` elements; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn semial_propagate(
    g: *const SemialGraph,
    labeled: *const usize,
    labels: *const u32,
    m: usize,
    c: usize,
    alpha: f64,
    tol: f64,
    max_iter: usize,
    out: *mut *mut SemialPropagation,
) -> SemialStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let g = &as_ref(g, "graph")?.inner;
        let idx = as_slice(labeled, m, "labeled")?;
        let ys: Vec<usize> = as_slice(labels, m, "labels")?.iter().map(|&v| v as usize).collect();
        if let Some(&bad) = ys.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidInput(format!("label {bad} is not below c = {c}")).into());
        }
        let state = LabelState::new(g.n(), idx, &ys)?;
        let mut cg = CgSettings::default();
        if tol > 0.0 {
            cg.tol = tol;
        }
        if max_iter > 0 {
            cg.max_iter = Some(max_iter);
        }
        let p = pseudo_label_all(g, &state, c, alpha, cg)?;
        *out = Box::into_raw(Box::new(SemialPropagation { inner: p }));
        Ok(())
    })
}

/// Number of unlabeled nodes covered by the result.
///
/// # Safety
/// `p` must be a live propagation handle and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn semial_propagation_len(p: *const SemialPropagation, len: *mut usize) -> SemialStatus {
    guard(|| {
        let p = &as_ref(p, "propagation")?.inner;
        *len.as_mut().ok_or(Fail::Null("len"))? = p.unlabeled.len();
        Ok(())
    })
}

/// Copies node indices (ascending), pseudo-labels and certainty weights of the
/// unlabeled nodes. Any of the arrays may be NULL to skip it.
///
/// # Safety
/// Non-NULL arrays must be writable for `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn semial_propagation_results(
    p: *const SemialPropagation,
    indices: *mut usize,
    pseudo_labels: *mut u32,
    weights: *mut f64,
    capacity: usize,
) -> SemialStatus {
    guard(|| {
        let p = &as_ref(p, "propagation")?.inner;
        let len = p.unlabeled.len();
        check_capacity(len, capacity)?;
        if !indices.is_null() {
            as_slice_mut(indices, len, "indices")?.copy_from_slice(&p.unlabeled);
        }
        if !pseudo_labels.is_null() {
            for (o, &y) in as_slice_mut(pseudo_labels, len, "pseudo_labels")?.iter_mut().zip(&p.pseudo_labels) {
                *o = y as u32;
            }
        }
        if !weights.is_null() {
            as_slice_mut(weights, len, "weights")?.copy_from_slice(&p.weights);
        }
        Ok(())
    })
}

/// Copies the raw `n x c` propagation scores, row-major.
///
/// # Safety
/// `scores` must be writable for `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn semial_propagation_scores(
    p: *const SemialPropagation,
    scores: *mut f64,
    capacity: usize,
) -> SemialStatus {
    guard(|| {
        let p = &as_ref(p, "propagation")?.inner;
        let src = p.scores.as_slice();
        check_capacity(src.len(), capacity)?;
        as_slice_mut(scores, src.len(), "scores")?.copy_from_slice(src);
        Ok(())
    })
}

/// # Safety
/// `p` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn semial_propagation_free(p: *mut SemialPropagation) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Natural-log entropy of a nonnegative vector (normalized first).
///
/// # Safety
/// `p` must hold `c` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn semial_entropy(p: *const f64, c: usize, out: *mut f64) -> SemialStatus {
    guard(|| {
        let p = as_slice(p, c, "p")?;
        *out.as_mut().ok_or(Fail::Null("out"))? = entropy(p)?;
        Ok(())
    })
}

/// Certainty weight `1 - H(p) / ln c`.
///
/// # Safety
/// `p` must hold `c` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn semial_certainty_weight(p: *const f64, c: usize, out: *mut f64) -> SemialStatus {
    guard(|| {
        let p = as_slice(p, c, "p")?;
        *out.as_mut().ok_or(Fail::Null("out"))? = certainty_weight(p, c)?;
        Ok(())
    })
}

/// Runs the active learning loop. `config` is `key = value` text using the
/// long flag names of `semial run` (NULL or empty for defaults). On success
/// `*records_out` receives the JSON-lines records, to be released with
/// [`semial_string_free`].
///
/// # Safety
/// Dataset handles must be live; `config` NULL or NUL-terminated;
/// `records_out` writable.
#[no_mangle]
pub unsafe extern "C" fn semial_run(
    train: *const SemialDataset,
    test: *const SemialDataset,
    config: *const c_char,
    records_out: *mut *mut c_char,
) -> SemialStatus {
    guard(|| {
        if records_out.is_null() {
            return Err(Fail::Null("records_out"));
        }
        let train = &as_ref(train, "train")?.inner;
        let test = &as_ref(test, "test")?.inner;
        let text = if config.is_null() { "" } else { as_str(config, "config")? };
        let args = run_args_from_config_text(text)?;
        let mut records = Vec::new();
        for s in strategies_of(&args)? {
            let cfg = run_config(&args, s, train.num_classes())?;
            records.extend(run(&cfg, train, test)?);
        }
        let text = CString::new(records_jsonl(&records)).expect("JSON has no NUL bytes");
        *records_out = text.into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a string from this library not freed before.
#[no_mangle]
pub unsafe extern "C" fn semial_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
