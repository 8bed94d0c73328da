//! C ABI for the path loss predictor.
//!
//! Every fallible function returns a [`PlStatus`]; on failure a description
//! is available from [`pl_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use pathloss_lab::ci::{fit_ple, fspl, CiError, CiModel};
use pathloss_lab::model::{ModelError, Predictor, TrainedNet};
use pathloss_lab::nn::NnError;
use pathloss_lab::raster::{read_raster, RasterError, Scene};
use pathloss_lab::synth::{LinkSample, Point3, Split};

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// A file exists but is not in the expected format (bad magic, truncated).
    BadFormat = 4,
    CheckpointMismatch = 5,
    Panic = 6,
}

/// One Tx/Rx link. Altitudes are absolute (terrain plus antenna).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PlLink {
    pub tx_x: f64,
    pub tx_y: f64,
    pub tx_alt: f64,
    pub rx_x: f64,
    pub rx_y: f64,
    pub rx_alt: f64,
    pub frequency_hz: f64,
}

/// Predicted path loss. `ple_hat` and `comp_hat` are NaN when the model
/// variant does not produce them.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PlOutput {
    pub pl_hat: f64,
    pub ple_hat: f64,
    pub comp_hat: f64,
}

/// Loaded satellite and elevation rasters.
pub struct PlScene {
    scene: Scene,
}

/// A trained checkpoint with its preprocessing state.
pub struct PlPredictor {
    predictor: Predictor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: PlStatus, msg: impl std::fmt::Display) -> PlStatus {
    set_error(msg.to_string());
    status
}

fn guard(f: impl FnOnce() -> PlStatus) -> PlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(PlStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn ci_status(e: &CiError) -> PlStatus {
    match e {
        CiError::Io(_) => PlStatus::Io,
        CiError::Json(_) => PlStatus::BadFormat,
        _ => PlStatus::InvalidArgument,
    }
}

fn raster_status(e: &RasterError) -> PlStatus {
    match e {
        RasterError::Io(_) => PlStatus::Io,
        RasterError::BadMagic | RasterError::BadVersion(_) | RasterError::TruncatedFile | RasterError::TrailingBytes(_) => {
            PlStatus::BadFormat
        }
        _ => PlStatus::InvalidArgument,
    }
}

fn model_status(e: &ModelError) -> PlStatus {
    match e {
        ModelError::CheckpointMismatch(_) => PlStatus::CheckpointMismatch,
        ModelError::Io(_) => PlStatus::Io,
        ModelError::Json(_) | ModelError::Csv(_) | ModelError::BadTable(_) => PlStatus::BadFormat,
        ModelError::Nn(NnError::BadMagic | NnError::BadVersion(_) | NnError::TruncatedFile) => PlStatus::BadFormat,
        ModelError::Nn(NnError::Io(_)) => PlStatus::Io,
        ModelError::Ci(c) => ci_status(c),
        _ => PlStatus::InvalidArgument,
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, PlStatus> {
    if p.is_null() {
        return Err(fail(PlStatus::NullPointer, "path is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(PlStatus::InvalidArgument, "path is not valid UTF-8")),
    }
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Free-space path loss in dB.
///
/// # Safety
/// `out` must be null or point to writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn pl_fspl(frequency_hz: f64, distance_m: f64, out: *mut f64) -> PlStatus {
    guard(|| {
        if out.is_null() {
            return fail(PlStatus::NullPointer, "out is null");
        }
        match fspl(frequency_hz, distance_m) {
            Ok(v) => {
                *out = v;
                PlStatus::Ok
            }
            Err(e) => fail(ci_status(&e), e),
        }
    })
}

/// CI model prediction at `d3d_m`.
///
/// # Safety
/// `out` must be null or point to writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn pl_ci_predict(frequency_hz: f64, d0_m: f64, ple: f64, d3d_m: f64, out: *mut f64) -> PlStatus {
    guard(|| {
        if out.is_null() {
            return fail(PlStatus::NullPointer, "out is null");
        }
        match CiModel::new(frequency_hz, d0_m, ple).and_then(|m| m.predict(d3d_m)) {
            Ok(v) => {
                *out = v;
                PlStatus::Ok
            }
            Err(e) => fail(ci_status(&e), e),
        }
    })
}

/// Least-squares path loss exponent of `n` (distance, path loss) pairs.
///
/// # Safety
/// `distance_m` and `path_loss_db` must each point to `n` doubles, and
/// `out_ple` to writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn pl_fit_ple(
    distance_m: *const f64,
    path_loss_db: *const f64,
    n: usize,
    frequency_hz: f64,
    d0_m: f64,
    out_ple: *mut f64,
) -> PlStatus {
    guard(|| {
        if out_ple.is_null() || (n > 0 && (distance_m.is_null() || path_loss_db.is_null())) {
            return fail(PlStatus::NullPointer, "null argument");
        }
        let (d, pl): (&[f64], &[f64]) = if n == 0 {
            (&[], &[])
        } else {
            (std::slice::from_raw_parts(distance_m, n), std::slice::from_raw_parts(path_loss_db, n))
        };
        match fit_ple(d.iter().copied().zip(pl.iter().copied()), frequency_hz, d0_m) {
            Ok(m) => {
                *out_ple = m.ple;
                PlStatus::Ok
            }
            Err(e) => fail(ci_status(&e), e),
        }
    })
}

/// Loads `satellite.plrg` and `elevation.plrg` from `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pl_scene_load(dir: *const c_char, out: *mut *mut PlScene) -> PlStatus {
    guard(|| {
        if out.is_null() {
            return fail(PlStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let dir = match path_arg(dir) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let load = || -> Result<Scene, RasterError> {
            Scene::new(read_raster(dir.join("satellite.plrg"))?, read_raster(dir.join("elevation.plrg"))?)
        };
        match load() {
            Ok(scene) => {
                *out = Box::into_raw(Box::new(PlScene { scene }));
                PlStatus::Ok
            }
            Err(e) => fail(raster_status(&e), format!("{}: {e}", dir.display())),
        }
    })
}

/// # Safety
/// `scene` must be null or a handle from [`pl_scene_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pl_scene_free(scene: *mut PlScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Loads a checkpoint directory written by the `train` command.
///
/// # Safety
/// `checkpoint_dir` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pl_predictor_load(checkpoint_dir: *const c_char, out: *mut *mut PlPredictor) -> PlStatus {
    guard(|| {
        if out.is_null() {
            return fail(PlStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let dir = match path_arg(checkpoint_dir) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match TrainedNet::load(&dir) {
            Ok(net) => {
                *out = Box::into_raw(Box::new(PlPredictor { predictor: Predictor::from_trained(net) }));
                PlStatus::Ok
            }
            Err(e) => fail(model_status(&e), format!("{}: {e}", dir.display())),
        }
    })
}

/// A predictor that only evaluates the CI model.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_predictor_ci(frequency_hz: f64, d0_m: f64, ple: f64, out: *mut *mut PlPredictor) -> PlStatus {
    guard(|| {
        if out.is_null() {
            return fail(PlStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        match CiModel::new(frequency_hz, d0_m, ple) {
            Ok(ci) => {
                *out = Box::into_raw(Box::new(PlPredictor { predictor: Predictor::ci_only(ci) }));
                PlStatus::Ok
            }
            Err(e) => fail(ci_status(&e), e),
        }
    })
}

/// # Safety
/// `predictor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pl_predictor_free(predictor: *mut PlPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}

/// Predicts `n` links. `out` receives `n` results in input order.
///
/// # Safety
/// Handles must be live; `links` and `out` must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn pl_predictor_predict(
    predictor: *const PlPredictor,
    scene: *const PlScene,
    links: *const PlLink,
    n: usize,
    out: *mut PlOutput,
) -> PlStatus {
    guard(|| {
        if predictor.is_null() || scene.is_null() || (n > 0 && (links.is_null() || out.is_null())) {
            return fail(PlStatus::NullPointer, "null argument");
        }
        if n == 0 {
            return PlStatus::Ok;
        }
        let links = std::slice::from_raw_parts(links, n);
        let samples: Vec<LinkSample> = links
            .iter()
            .map(|l| {
                let tx = Point3::new(l.tx_x, l.tx_y, l.tx_alt);
                let rx = Point3::new(l.rx_x, l.rx_y, l.rx_alt);
                LinkSample {
                    route_id: 0,
                    split: Split::Test,
                    tx,
                    rx,
                    frequency_hz: l.frequency_hz,
                    d3d_m: tx.distance(&rx),
                    path_loss_db: f64::NAN,
                }
            })
            .collect();
        match (*predictor).predictor.predict_many(&(*scene).scene, &samples) {
            Ok(res) => {
                let out = std::slice::from_raw_parts_mut(out, n);
                for (o, r) in out.iter_mut().zip(res) {
                    *o = PlOutput {
                        pl_hat: r.pl_hat,
                        ple_hat: r.ple_hat.unwrap_or(f64::NAN),
                        comp_hat: r.comp_hat.unwrap_or(f64::NAN),
                    };
                }
                PlStatus::Ok
            }
            Err(e) => fail(model_status(&e), e),
        }
    })
}
