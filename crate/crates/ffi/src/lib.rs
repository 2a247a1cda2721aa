//! C ABI for the mitoscope engine.
//!
//! Every fallible call returns an [`MsStatus`]; on failure the message is
//! available from [`ms_last_error`] on the same thread. Models are opaque
//! [`MsModel`] handles released with [`ms_model_free`]. Tensors cross the
//! boundary as contiguous `double` arrays in frame-major, row-major order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mitoscope::data::Annotation;
use mitoscope::evaluation::{match_detections, prf1};
use mitoscope::network::{
    detect_events, forward_unsupervised, load_checkpoint, predict_supervised, save_checkpoint, BranchedModel,
    ModelKind, NetworkConfig,
};
use mitoscope::postprocess::Detection;
use mitoscope::tensor::Tensor;
use mitoscope::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    NullPointer = 1,
    Io = 2,
    Format = 3,
    Shape = 4,
    InvalidArgument = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsModelKind {
    Unsupervised = 0,
    Supervised = 1,
}

/// Mirrors the network hyper-parameters.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MsNetworkConfig {
    pub frame_size: u32,
    pub hidden: u32,
    pub classes: u32,
    pub encoder_len: u32,
    pub target_len: u32,
    pub grid: u32,
    pub lstm_kernel: u32,
    pub cnn1_kernel: u32,
    pub cnn2_kernel: u32,
}

/// A point event: frame index and pixel position.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MsPoint {
    pub frame: u32,
    pub x: u32,
    pub y: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MsScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Opaque model handle.
pub struct MsModel {
    inner: BranchedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MsStatus {
    match e {
        Error::Io { .. } => MsStatus::Io,
        Error::Shape { .. } | Error::BlobShape { .. } | Error::FrameDims { .. } => MsStatus::Shape,
        Error::Parse { .. }
        | Error::Image { .. }
        | Error::NotACheckpoint
        | Error::TruncatedCheckpoint(_)
        | Error::Checkpoint(_)
        | Error::Config(_) => MsStatus::Format,
        _ => MsStatus::InvalidArgument,
    }
}

struct Fail(MsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MsStatus::NullPointer, format!("{what} is NULL"))
}

/// Run `f`, turning errors and panics into a status plus thread-local message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MsStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            MsStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail(MsStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(Path::new(s))
}

unsafe fn model_arg<'a>(m: *const MsModel) -> Result<&'a BranchedModel, Fail> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn to_config(c: &MsNetworkConfig) -> NetworkConfig {
    NetworkConfig {
        frame_size: c.frame_size as usize,
        hidden: c.hidden as usize,
        classes: c.classes as usize,
        encoder_len: c.encoder_len as usize,
        target_len: c.target_len as usize,
        grid: c.grid as usize,
        lstm_kernel: c.lstm_kernel as usize,
        cnn1_kernel: c.cnn1_kernel as usize,
        cnn2_kernel: c.cnn2_kernel as usize,
    }
}

fn from_config(c: &NetworkConfig) -> MsNetworkConfig {
    MsNetworkConfig {
        frame_size: c.frame_size as u32,
        hidden: c.hidden as u32,
        classes: c.classes as u32,
        encoder_len: c.encoder_len as u32,
        target_len: c.target_len as u32,
        grid: c.grid as u32,
        lstm_kernel: c.lstm_kernel as u32,
        cnn1_kernel: c.cnn1_kernel as u32,
        cnn2_kernel: c.cnn2_kernel as u32,
    }
}

/// Split a flat buffer of `n` frames into `[1, m, m]` tensors.
fn frames_from(data: &[f64], n: usize, m: usize) -> Result<Vec<Tensor>, Fail> {
    if data.len() != n * m * m {
        return Err(Fail(
            MsStatus::Shape,
            format!("expected {n} frames of {m}x{m} ({} values), got {}", n * m * m, data.len()),
        ));
    }
    data.chunks(m * m).map(|c| Tensor::new(&[1, m, m], c.to_vec()).map_err(Fail::from)).collect()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread ("" after a success).
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ms_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Reference hyper-parameters.
#[no_mangle]
pub extern "C" fn ms_network_config_default() -> MsNetworkConfig {
    from_config(&NetworkConfig::default())
}

/// # Safety
/// `config` must point to a valid config and `out` to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn ms_model_init(
    config: *const MsNetworkConfig,
    kind: MsModelKind,
    seed: u64,
    out: *mut *mut MsModel,
) -> MsStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let kind = match kind {
            MsModelKind::Unsupervised => ModelKind::Unsupervised,
            MsModelKind::Supervised => ModelKind::Supervised,
        };
        let inner = BranchedModel::init(to_config(cfg), kind, seed)?;
        *out = Box::into_raw(Box::new(MsModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn ms_model_load(path: *const c_char, out: *mut *mut MsModel) -> MsStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = load_checkpoint(path)?;
        *out = Box::into_raw(Box::new(MsModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ms_model_save(model: *const MsModel, path: *const c_char) -> MsStatus {
    guard(|| {
        let m = model_arg(model)?;
        save_checkpoint(m, path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Release a handle; NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_model_free(model: *mut MsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_model_config(model: *const MsModel, out: *mut MsNetworkConfig) -> MsStatus {
    guard(|| {
        let m = model_arg(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = from_config(&m.config);
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_model_kind(model: *const MsModel, out: *mut MsModelKind) -> MsStatus {
    guard(|| {
        let m = model_arg(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = match m.kind {
            ModelKind::Unsupervised => MsModelKind::Unsupervised,
            ModelKind::Supervised => MsModelKind::Supervised,
        };
        Ok(())
    })
}

/// Number of trainable parameters.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_model_parameter_count(model: *const MsModel, out: *mut u64) -> MsStatus {
    guard(|| {
        let m = model_arg(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.parameter_count() as u64;
        Ok(())
    })
}

/// Event head output of an unsupervised model for `target_len` frames of
/// `frame_size²` values. Per frame and grid block (row-major) writes the
/// winning class to `classes` and its probability to `values`; both hold
/// `target_len × (frame_size / grid)²` entries.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn ms_detect_events(
    model: *const MsModel,
    frames: *const f64,
    frames_len: usize,
    classes: *mut u32,
    values: *mut f64,
    out_len: usize,
) -> MsStatus {
    guard(|| {
        let m = model_arg(model)?;
        let c = &m.config;
        let input = frames_from(slice_arg(frames, frames_len, "frames")?, c.target_len, c.frame_size)?;
        let blocks = (c.frame_size / c.grid).pow(2);
        if out_len != c.target_len * blocks {
            return Err(Fail(
                MsStatus::Shape,
                format!("output needs {} entries, got {out_len}", c.target_len * blocks),
            ));
        }
        let classes = out_slice(classes, out_len, "classes")?;
        let values = out_slice(values, out_len, "values")?;
        let maps = detect_events(m, &input)?;
        let mut i = 0;
        for map in &maps {
            let (rows, cols) = map.blocks();
            for by in 0..rows {
                for bx in 0..cols {
                    let (k, v) = map.block(by, bx);
                    classes[i] = k as u32;
                    values[i] = v;
                    i += 1;
                }
            }
        }
        Ok(())
    })
}

/// Response maps of a supervised model: `target_len` frames in, as many
/// `frame_size²` maps out.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn ms_predict(
    model: *const MsModel,
    frames: *const f64,
    frames_len: usize,
    out: *mut f64,
    out_len: usize,
) -> MsStatus {
    guard(|| {
        let m = model_arg(model)?;
        let c = &m.config;
        let input = frames_from(slice_arg(frames, frames_len, "frames")?, c.target_len, c.frame_size)?;
        if out_len != frames_len {
            return Err(Fail(MsStatus::Shape, format!("output needs {frames_len} values, got {out_len}")));
        }
        let out = out_slice(out, out_len, "out")?;
        let maps = predict_supervised(m, &input)?;
        for (dst, map) in out.chunks_mut(c.frame_size * c.frame_size).zip(&maps) {
            dst.copy_from_slice(map.data());
        }
        Ok(())
    })
}

/// Reconstruction loss of an unsupervised model on `encoder_len +
/// target_len` frames.
///
/// # Safety
/// `frames` must hold `frames_len` values and `loss` be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_reconstruction_loss(
    model: *const MsModel,
    frames: *const f64,
    frames_len: usize,
    loss: *mut f64,
) -> MsStatus {
    guard(|| {
        let m = model_arg(model)?;
        let c = &m.config;
        let input = frames_from(slice_arg(frames, frames_len, "frames")?, c.sequence_len(), c.frame_size)?;
        let out = loss.as_mut().ok_or_else(|| null("loss"))?;
        *out = forward_unsupervised(m, &input)?.loss;
        Ok(())
    })
}

/// Match detections to annotations within `spatial` pixels and `temporal`
/// frames and report precision, recall and F1.
///
/// # Safety
/// Arrays must hold the stated number of points; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_evaluate(
    detections: *const MsPoint,
    detections_len: usize,
    annotations: *const MsPoint,
    annotations_len: usize,
    spatial: f64,
    temporal: u32,
    out: *mut MsScores,
) -> MsStatus {
    guard(|| {
        let dets: Vec<Detection> = slice_arg(detections, detections_len, "detections")?
            .iter()
            .map(|p| Detection { frame: p.frame as usize, x: p.x as usize, y: p.y as usize, class: 0, score: 0.0 })
            .collect();
        let anns: Vec<Annotation> = slice_arg(annotations, annotations_len, "annotations")?
            .iter()
            .map(|p| Annotation::new(p.frame as usize, p.x as usize, p.y as usize))
            .collect();
        if !(spatial >= 0.0) {
            return Err(Fail(MsStatus::InvalidArgument, "spatial threshold must be >= 0".into()));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = prf1(&match_detections(&dets, &anns, spatial, temporal as usize));
        *out = MsScores {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            tp: s.tp as u64,
            fp: s.fp as u64,
            fn_: s.fn_ as u64,
        };
        Ok(())
    })
}
