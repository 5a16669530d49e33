//! C ABI over the mechprior core: mechanisms, network weights and GP state
//! behind opaque handles.
//!
//! Every fallible function returns an [`MpStatus`]. On failure the message
//! is available from [`mp_last_error_message`] on the same thread. Handles
//! are owned by the caller and released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mechprior::gp::{GpState, KernelParams};
use mechprior::mechanism::{Mechanism, MechanismKind, IMAGE_SIZE};
use mechprior::prior_net::{NetworkWeights, PARAM_COUNT};
use mechprior::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfBounds = 3,
    DimensionMismatch = 4,
    NonFinite = 5,
    Factorization = 6,
    Io = 7,
    Parse = 8,
    Version = 9,
    BufferTooSmall = 10,
    Panic = 11,
    Internal = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpKind {
    Slider = 0,
    Door = 1,
}

impl From<MpKind> for MechanismKind {
    fn from(k: MpKind) -> Self {
        match k {
            MpKind::Slider => MechanismKind::Slider,
            MpKind::Door => MechanismKind::Door,
        }
    }
}

/// Opaque mechanism handle.
pub struct MpMechanism(Mechanism);

/// Opaque network weights handle.
pub struct MpWeights(NetworkWeights);

/// Opaque GP state handle. Adding an observation yields a new handle.
pub struct MpGp(GpState);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> MpStatus {
    match e {
        Error::OutOfBounds { .. } => MpStatus::OutOfBounds,
        Error::DimensionMismatch { .. } => MpStatus::DimensionMismatch,
        Error::NonFinite(_) => MpStatus::NonFinite,
        Error::InvalidArgument(_) => MpStatus::InvalidArgument,
        Error::Factorization { .. } => MpStatus::Factorization,
        Error::Version { .. } => MpStatus::Version,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => MpStatus::Parse,
        Error::Io { .. } => MpStatus::Io,
        Error::Seed { source, .. } => status_of(source),
        _ => MpStatus::Internal,
    }
}

struct Fail(MpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MpStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MpStatus::Ok
        }
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
            MpStatus::Panic
        }
    }
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

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(MpStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn check_capacity(needed: usize, cap: usize) -> Result<(), Fail> {
    if cap < needed {
        return Err(Fail(
            MpStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {needed} needed"),
        ));
    }
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn mp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Side length of rendered images in pixels.
#[no_mangle]
pub extern "C" fn mp_image_size() -> usize {
    IMAGE_SIZE
}

#[no_mangle]
pub extern "C" fn mp_action_dim(kind: MpKind) -> usize {
    MechanismKind::from(kind).action_dim()
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn mp_mechanism_generate(kind: MpKind, seed: u64, out: *mut *mut MpMechanism) -> MpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(MpMechanism(Mechanism::generate(kind.into(), seed))));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from `mp_mechanism_generate`, freed once.
#[no_mangle]
pub unsafe extern "C" fn mp_mechanism_free(m: *mut MpMechanism) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live handle; `low` and `high` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn mp_mechanism_bounds(m: *const MpMechanism, low: *mut f64, high: *mut f64, cap: usize) -> MpStatus {
    guard(|| {
        let m = handle(m, "mechanism")?;
        let b = m.0.bounds();
        check_capacity(b.dim(), cap)?;
        slice_mut(low, b.dim(), "low")?.copy_from_slice(&b.low);
        slice_mut(high, b.dim(), "high")?.copy_from_slice(&b.high);
        Ok(())
    })
}

/// Executes `action` (length `len`) and writes the observed motion.
///
/// # Safety
/// `m` must be a live handle, `action` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mp_mechanism_execute(m: *const MpMechanism, action: *const f64, len: usize, out_reward: *mut f64) -> MpStatus {
    guard(|| {
        let m = handle(m, "mechanism")?;
        let a = slice(action, len, "action")?;
        let out = out_ptr(out_reward, "out_reward")?;
        *out = m.0.execute(a)?;
        Ok(())
    })
}

/// Writes the optimal action (into `out_action`, capacity `cap`) and reward.
///
/// # Safety
/// `m` must be a live handle; `out_action` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn mp_mechanism_optimal(m: *const MpMechanism, out_action: *mut f64, cap: usize, out_reward: *mut f64) -> MpStatus {
    guard(|| {
        let m = handle(m, "mechanism")?;
        let (a, r) = m.0.optimal();
        check_capacity(a.len(), cap)?;
        slice_mut(out_action, a.len(), "out_action")?.copy_from_slice(&a);
        *out_ptr(out_reward, "out_reward")? = r;
        Ok(())
    })
}

/// Renders the mechanism into `out_pixels`, row-major, size² values in [0, 1].
///
/// # Safety
/// `m` must be a live handle; `out_pixels` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn mp_mechanism_render(m: *const MpMechanism, out_pixels: *mut f64, cap: usize) -> MpStatus {
    guard(|| {
        let m = handle(m, "mechanism")?;
        let img = m.0.render();
        check_capacity(img.pixels().len(), cap)?;
        slice_mut(out_pixels, img.pixels().len(), "out_pixels")?.copy_from_slice(img.pixels());
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn mp_weights_param_count() -> usize {
    PARAM_COUNT
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn mp_weights_init(seed: u64, out: *mut *mut MpWeights) -> MpStatus {
    guard(|| {
        *out_ptr(out, "out")? = Box::into_raw(Box::new(MpWeights(NetworkWeights::init(seed))));
        Ok(())
    })
}

/// # Safety
/// `file` must be a NUL-terminated UTF-8 path; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn mp_weights_load(file: *const c_char, out: *mut *mut MpWeights) -> MpStatus {
    guard(|| {
        let p = path(file)?;
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(MpWeights(NetworkWeights::load(&p)?)));
        Ok(())
    })
}

/// # Safety
/// `w` must be a live handle; `file` a NUL-terminated UTF-8 path.
#[no_mangle]
pub unsafe extern "C" fn mp_weights_save(w: *const MpWeights, file: *const c_char) -> MpStatus {
    guard(|| {
        let w = handle(w, "weights")?;
        w.0.save(&path(file)?)?;
        Ok(())
    })
}

/// # Safety
/// `w` must be null or a weights handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn mp_weights_free(w: *mut MpWeights) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Predicted reward of `action` on the rendered image of `m`.
///
/// # Safety
/// Handles must be live; `action` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mp_weights_predict(
    w: *const MpWeights,
    m: *const MpMechanism,
    action: *const f64,
    len: usize,
    out: *mut f64,
) -> MpStatus {
    guard(|| {
        let w = handle(w, "weights")?;
        let m = handle(m, "mechanism")?;
        let a = slice(action, len, "action")?;
        m.0.bounds().check(a)?;
        *out_ptr(out, "out")? = w.0.predict(&m.0.render(), a);
        Ok(())
    })
}

/// Empty GP with a squared-exponential kernel.
///
/// # Safety
/// `lengthscales` must hold `dim` values; `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn mp_gp_new(
    lengthscales: *const f64,
    dim: usize,
    signal_variance: f64,
    noise_variance: f64,
    out: *mut *mut MpGp,
) -> MpStatus {
    guard(|| {
        let ls = slice(lengthscales, dim, "lengthscales")?.to_vec();
        let out = out_ptr(out, "out")?;
        let k = KernelParams::new(ls, signal_variance, noise_variance)?;
        *out = Box::into_raw(Box::new(MpGp(GpState::new(k)?)));
        Ok(())
    })
}

/// # Safety
/// `gp` must be null or a GP handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn mp_gp_free(gp: *mut MpGp) {
    if !gp.is_null() {
        drop(Box::from_raw(gp));
    }
}

/// Number of observations held by `gp`, or 0 for a null handle.
///
/// # Safety
/// `gp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_gp_len(gp: *const MpGp) -> usize {
    gp.as_ref().map_or(0, |g| g.0.len())
}

/// Returns a new handle holding `gp` plus one observation; `gp` is unchanged.
///
/// # Safety
/// `gp` must be live; `action` must hold `len` values; `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn mp_gp_add_observation(
    gp: *const MpGp,
    action: *const f64,
    len: usize,
    residual: f64,
    out: *mut *mut MpGp,
) -> MpStatus {
    guard(|| {
        let gp = handle(gp, "gp")?;
        let a = slice(action, len, "action")?;
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(MpGp(gp.0.add_observation(a, residual)?)));
        Ok(())
    })
}

/// # Safety
/// `gp` must be live; `action` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mp_gp_posterior(
    gp: *const MpGp,
    action: *const f64,
    len: usize,
    out_mean: *mut f64,
    out_variance: *mut f64,
) -> MpStatus {
    guard(|| {
        let gp = handle(gp, "gp")?;
        let a = slice(action, len, "action")?;
        let p = gp.0.posterior(a)?;
        *out_ptr(out_mean, "out_mean")? = p.mean;
        *out_ptr(out_variance, "out_variance")? = p.variance;
        Ok(())
    })
}

/// `prior_mean + μ(a) + sqrt(beta)·σ(a)`.
///
/// # Safety
/// `gp` must be live; `action` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mp_gp_ucb_score(
    gp: *const MpGp,
    prior_mean: f64,
    action: *const f64,
    len: usize,
    beta: f64,
    out: *mut f64,
) -> MpStatus {
    guard(|| {
        let gp = handle(gp, "gp")?;
        let a = slice(action, len, "action")?;
        *out_ptr(out, "out")? = gp.0.ucb_score(prior_mean, a, beta)?;
        Ok(())
    })
}
