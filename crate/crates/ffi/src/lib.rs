//! C ABI over `taen-core`.
//!
//! Every entry point returns a [`TaenStatus`] (or a plain value for the
//! infallible helpers). On failure the message is kept per thread and can
//! be read with [`taen_last_error`]. Handles are opaque; release them with
//! the matching `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use taen_core::error::ErrorKind;
use taen_core::episodic::{self, SupportTrajectories};
use taen_core::{detection, features, loss, Matrix, Model, MotionSign, TaenError, VideoFeatures};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaenStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid argument or configuration.
    Config = 2,
    /// Unreadable, malformed, or inconsistent data.
    Data = 3,
    /// Numerical failure.
    Numeric = 4,
    /// Internal panic; the handle involved should be considered unusable.
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaenMotionSign {
    AlignedIsCloser = 0,
    Literal = 1,
}

impl From<TaenMotionSign> for MotionSign {
    fn from(s: TaenMotionSign) -> Self {
        match s {
            TaenMotionSign::AlignedIsCloser => MotionSign::AlignedIsCloser,
            TaenMotionSign::Literal => MotionSign::Literal,
        }
    }
}

/// Trained model handle.
pub struct TaenModel {
    inner: Model,
}

/// Feature matrix handle (T x d_feat, row-major f64).
pub struct TaenFeatures {
    inner: VideoFeatures,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

enum Fail {
    Null(&'static str),
    Core(TaenError),
}

impl From<TaenError> for Fail {
    fn from(e: TaenError) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TaenStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TaenStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            TaenStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            match e.kind() {
                ErrorKind::Config => TaenStatus::Config,
                ErrorKind::Data => TaenStatus::Data,
                ErrorKind::Numeric => TaenStatus::Numeric,
            }
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TaenStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail::Core(TaenError::InvalidArgument("path is not valid UTF-8".into())))
}

unsafe fn matrix_arg(p: *const f64, rows: usize, cols: usize, what: &'static str) -> Result<Matrix, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| TaenError::InvalidArgument(format!("{what}: size overflow")))?;
    let data = std::slice::from_raw_parts(p, n).to_vec();
    Ok(Matrix::from_vec(rows, cols, data)?)
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    p.write(v);
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn taen_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn taen_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn taen_model_load(path: *const c_char, out: *mut *mut TaenModel) -> TaenStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = ptr::null_mut();
        let model = Model::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(TaenModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`taen_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn taen_model_free(model: *mut TaenModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Sub-action count `a`; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn taen_model_subactions(model: *const TaenModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.subactions())
}

/// Embedding width `e`; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn taen_model_embed_dim(model: *const TaenModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.embed_dim())
}

/// Input feature width `d_feat`; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn taen_model_feature_dim(model: *const TaenModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.feature_dim())
}

/// Number of training classes; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn taen_model_num_classes(model: *const TaenModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.class_names.len())
}

fn embed_into(model: &Model, vf: &VideoFeatures, out: *mut f64, out_len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    let need = model.subactions() * model.embed_dim();
    if out_len < need {
        return Err(TaenError::InvalidArgument(format!("output buffer holds {out_len} values, need {need}")).into());
    }
    let traj = model.embed(vf)?;
    // SAFETY: caller guarantees `out` holds `out_len >= need` values.
    unsafe { std::slice::from_raw_parts_mut(out, need) }.copy_from_slice(traj.points.as_slice());
    Ok(())
}

/// Embed a T x d_feat row-major feature block into an a x e trajectory
/// written to `out` (at least a*e values).
///
/// # Safety
/// `frames` must hold `t*d` values and `out` `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn taen_model_embed(
    model: *const TaenModel,
    frames: *const f64,
    t: usize,
    d: usize,
    out: *mut f64,
    out_len: usize,
) -> TaenStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let vf = VideoFeatures::new("ffi", matrix_arg(frames, t, d, "frames")?)?;
        embed_into(&m.inner, &vf, out, out_len)
    })
}

/// Embed a loaded feature handle; see [`taen_model_embed`].
///
/// # Safety
/// Handles must be live; `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn taen_model_embed_features(
    model: *const TaenModel,
    feats: *const TaenFeatures,
    out: *mut f64,
    out_len: usize,
) -> TaenStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let f = non_null(feats, "feats")?;
        embed_into(&m.inner, &f.inner, out, out_len)
    })
}

/// Classify an a x e query trajectory against `n_slots` support
/// trajectories laid out back to back, using the model's loss weights.
/// Writes the chosen slot and, if `dists` is non-null, `n_slots` distances.
///
/// # Safety
/// `query` holds a*e values, `supports` n_slots*a*e, `dists` n_slots or null.
#[no_mangle]
pub unsafe extern "C" fn taen_model_classify(
    model: *const TaenModel,
    query: *const f64,
    supports: *const f64,
    n_slots: usize,
    sign: TaenMotionSign,
    out_slot: *mut usize,
    dists: *mut f64,
) -> TaenStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let (a, e) = (m.inner.subactions(), m.inner.embed_dim());
        if n_slots == 0 {
            return Err(TaenError::InvalidArgument("n_slots must be positive".into()).into());
        }
        let q = matrix_arg(query, a, e, "query")?;
        let all = matrix_arg(supports, n_slots * a, e, "supports")?;
        let slots = (0..n_slots).map(|i| all.slice_rows(i * a, (i + 1) * a)).collect();
        let (slot, ds) = episodic::classify_query(&q, &SupportTrajectories { slots }, &m.inner.weights, sign.into())?;
        write_out(out_slot, slot, "out_slot")?;
        if !dists.is_null() {
            std::slice::from_raw_parts_mut(dists, n_slots).copy_from_slice(&ds);
        }
        Ok(())
    })
}

/// Load a feature file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn taen_features_load(path: *const c_char, out: *mut *mut TaenFeatures) -> TaenStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = ptr::null_mut();
        let vf = features::load_features(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(TaenFeatures { inner: vf }));
        Ok(())
    })
}

/// # Safety
/// `feats` must come from [`taen_features_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn taen_features_free(feats: *mut TaenFeatures) {
    if !feats.is_null() {
        drop(Box::from_raw(feats));
    }
}

/// Frame count T; 0 for a null handle.
///
/// # Safety
/// `feats` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn taen_features_len(feats: *const TaenFeatures) -> usize {
    feats.as_ref().map_or(0, |f| f.inner.len())
}

/// Feature width d_feat; 0 for a null handle.
///
/// # Safety
/// `feats` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn taen_features_dim(feats: *const TaenFeatures) -> usize {
    feats.as_ref().map_or(0, |f| f.inner.dim())
}

/// Row-major T x d_feat data, valid while the handle lives; null for a
/// null handle.
///
/// # Safety
/// `feats` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn taen_features_data(feats: *const TaenFeatures) -> *const f64 {
    feats.as_ref().map_or(ptr::null(), |f| f.inner.frames.as_slice().as_ptr())
}

/// Mean cosine distance between two a x e trajectories of unit rows.
///
/// # Safety
/// `e` and `r` hold `a*dim` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn taen_trajectory_distance(
    e: *const f64,
    r: *const f64,
    a: usize,
    dim: usize,
    out: *mut f64,
) -> TaenStatus {
    guard(|| {
        let d = loss::trajectory_distance(&matrix_arg(e, a, dim, "e")?, &matrix_arg(r, a, dim, "r")?)?;
        write_out(out, d, "out")
    })
}

/// Affiliation plus `w_mot`-weighted motion distance between two
/// trajectories (the classification distance).
///
/// # Safety
/// `e` and `r` hold `a*dim` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn taen_test_distance(
    e: *const f64,
    r: *const f64,
    a: usize,
    dim: usize,
    w_mot: f64,
    sign: TaenMotionSign,
    out: *mut f64,
) -> TaenStatus {
    guard(|| {
        let weights = loss::LossWeights {
            w_mot,
            ..Default::default()
        };
        let d = loss::test_distance(
            &matrix_arg(e, a, dim, "e")?,
            &matrix_arg(r, a, dim, "r")?,
            &weights,
            sign.into(),
        )?;
        write_out(out, d, "out")
    })
}

/// Gaussian-kernel class probability of a proposal trajectory.
///
/// # Safety
/// `e` and `r` hold `a*dim` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn taen_proposal_probability(
    e: *const f64,
    r: *const f64,
    a: usize,
    dim: usize,
    sigma: f64,
    out: *mut f64,
) -> TaenStatus {
    guard(|| {
        let p = detection::proposal_probability(&matrix_arg(e, a, dim, "e")?, &matrix_arg(r, a, dim, "r")?, sigma)?;
        write_out(out, p, "out")
    })
}

/// Temporal IoU of `[s1, e1]` and `[s2, e2]`.
#[no_mangle]
pub extern "C" fn taen_temporal_iou(s1: f64, e1: f64, s2: f64, e2: f64) -> f64 {
    detection::temporal_iou((s1, e1), (s2, e2))
}
