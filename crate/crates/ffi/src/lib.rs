//! C ABI over the `autoddpm` crate.
//!
//! Conventions:
//! - Every fallible function returns an [`AutoddpmStatus`]; results go
//!   through out-pointers, which are written only on success.
//! - Objects are opaque handles created by `*_new`/`*_load` functions and
//!   released with the matching `*_free`. Freeing a null handle is a no-op.
//! - Images are row-major `double` buffers of `height * width` values; masks
//!   are `uint8_t` buffers of 0/1.
//! - The message of the last failure on the calling thread is available from
//!   [`autoddpm_last_error`].
//! - Panics never cross the boundary; they surface as `AUTODDPM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use autoddpm::denoiser::{checkpoint_load, AnalyticGaussianDenoiser, Denoiser};
use autoddpm::diffusion::NoiseSchedule;
use autoddpm::metrics::{self, PerceptualSurrogate};
use autoddpm::pipeline::{self, DetectionResult, PipelineConfig};
use autoddpm::{BinaryMask, Error, Heatmap, Image};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AutoddpmStatus {
    Ok = 0,
    /// Null pointer, zero size or a buffer of the wrong length.
    InvalidArgument = 1,
    /// Rejected schedule, architecture or pipeline settings.
    InvalidConfig = 2,
    /// Corrupt or mismatched file, or an input image outside its domain.
    DataError = 3,
    /// File system failure.
    Io = 4,
    /// Internal panic caught at the boundary.
    Panic = 5,
}

/// Noise schedule handle.
pub struct AutoddpmSchedule {
    inner: NoiseSchedule,
}

/// Noise predictor handle: a trained network or the Gaussian oracle.
pub struct AutoddpmDenoiser {
    inner: Box<dyn Denoiser>,
}

/// Output of one detection run.
pub struct AutoddpmDetection {
    inner: DetectionResult,
}

/// Detection settings, mirrored field for field.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AutoddpmPipelineConfig {
    pub t_mask: usize,
    pub t_stitch: usize,
    pub n_resample: usize,
    pub dilation_kernel: usize,
    pub binarize_quantile: f64,
    pub use_uncertainty: bool,
}

impl From<&PipelineConfig> for AutoddpmPipelineConfig {
    fn from(c: &PipelineConfig) -> Self {
        Self {
            t_mask: c.t_mask,
            t_stitch: c.t_stitch,
            n_resample: c.n_resample,
            dilation_kernel: c.dilation_kernel,
            binarize_quantile: c.binarize_quantile,
            use_uncertainty: c.use_uncertainty,
        }
    }
}

impl From<&AutoddpmPipelineConfig> for PipelineConfig {
    fn from(c: &AutoddpmPipelineConfig) -> Self {
        Self {
            t_mask: c.t_mask,
            t_stitch: c.t_stitch,
            n_resample: c.n_resample,
            dilation_kernel: c.dilation_kernel,
            binarize_quantile: c.binarize_quantile,
            use_uncertainty: c.use_uncertainty,
        }
    }
}

/// Selects which grid of a detection result to copy out.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AutoddpmDetectionField {
    InitialReconstruction = 0,
    InitialHeatmap = 1,
    PseudoHealthy = 2,
    FinalMap = 3,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AutoddpmStatus {
    match e {
        Error::Io { .. } => AutoddpmStatus::Io,
        e if e.is_data_error() => AutoddpmStatus::DataError,
        _ => AutoddpmStatus::InvalidConfig,
    }
}

struct Failure(AutoddpmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(AutoddpmStatus::InvalidArgument, msg.to_string())
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AutoddpmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AutoddpmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            AutoddpmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn read_image(data: *const f64, height: usize, width: usize) -> Result<Image, Failure> {
    if data.is_null() || height == 0 || width == 0 {
        return Err(invalid("image buffer is null or empty"));
    }
    let n = height.checked_mul(width).ok_or_else(|| invalid("image size overflows"))?;
    let values = std::slice::from_raw_parts(data, n).to_vec();
    Ok(Image::new(height, width, values)?)
}

unsafe fn read_mask(data: *const u8, height: usize, width: usize) -> Result<BinaryMask, Failure> {
    if data.is_null() || height == 0 || width == 0 {
        return Err(invalid("mask buffer is null or empty"));
    }
    let n = height.checked_mul(width).ok_or_else(|| invalid("mask size overflows"))?;
    Ok(BinaryMask::new(height, width, std::slice::from_raw_parts(data, n).to_vec())?)
}

unsafe fn write_slice<T: Copy>(src: &[T], out: *mut T, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output buffer is null"));
    }
    if len != src.len() {
        return Err(invalid(&format!("output buffer holds {len} values, expected {}", src.len())));
    }
    std::slice::from_raw_parts_mut(out, len).copy_from_slice(src);
    Ok(())
}

unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(invalid("path is null"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(Path::new(s))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn autoddpm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn autoddpm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Linear beta schedule with `t_max` steps from `beta_1` to `beta_t`.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn autoddpm_schedule_new(
    t_max: usize,
    beta_1: f64,
    beta_t: f64,
    out: *mut *mut AutoddpmSchedule,
) -> AutoddpmStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        let inner = NoiseSchedule::linear(t_max, beta_1, beta_t)?;
        *slot = Box::into_raw(Box::new(AutoddpmSchedule { inner }));
        Ok(())
    })
}

/// # Safety
/// `schedule` must be null or a handle from [`autoddpm_schedule_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn autoddpm_schedule_free(schedule: *mut AutoddpmSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// # Safety
/// `schedule` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn autoddpm_schedule_t_max(schedule: *const AutoddpmSchedule, out: *mut usize) -> AutoddpmStatus {
    guard(|| {
        let s = deref(schedule, "schedule")?;
        *out_ptr(out, "out")? = s.inner.t_max();
        Ok(())
    })
}

/// Cumulative signal fraction at step `t`, with `t = 0` giving 1.
///
/// # Safety
/// `schedule` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn autoddpm_schedule_alpha_bar(
    schedule: *const AutoddpmSchedule,
    t: usize,
    out: *mut f64,
) -> AutoddpmStatus {
    guard(|| {
        let s = deref(schedule, "schedule")?;
        if t > s.inner.t_max() {
            return Err(Error::TimestepOutOfRange { t, t_max: s.inner.t_max() }.into());
        }
        *out_ptr(out, "out")? = s.inner.alpha_bar(t);
        Ok(())
    })
}

/// Loads a trained network from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn autoddpm_denoiser_load(path: *const c_char, out: *mut *mut AutoddpmDenoiser) -> AutoddpmStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        let ckpt = checkpoint_load(c_path(path)?, None)?;
        *slot = Box::into_raw(Box::new(AutoddpmDenoiser {
            inner: Box::new(ckpt.net),
        }));
        Ok(())
    })
}

/// Exact noise predictor for Gaussian data with per-pixel mean `mu0` and
/// isotropic variance `sigma0_sq`.
///
/// # Safety
/// `mu0` must hold `height * width` values; `schedule` must be a live handle
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn autoddpm_denoiser_analytic_new(
    mu0: *const f64,
    height: usize,
    width: usize,
    sigma0_sq: f64,
    schedule: *const AutoddpmSchedule,
    out: *mut *mut AutoddpmDenoiser,
) -> AutoddpmStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        let s = deref(schedule, "schedule")?;
        let mu0 = read_image(mu0, height, width)?;
        let d = AnalyticGaussianDenoiser::new(mu0, sigma0_sq, &s.inner)?;
        *slot = Box::into_raw(Box::new(AutoddpmDenoiser { inner: Box::new(d) }));
        Ok(())
    })
}

/// # Safety
/// `denoiser` must be null or a live handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn autoddpm_denoiser_free(denoiser: *mut AutoddpmDenoiser) {
    if !denoiser.is_null() {
        drop(Box::from_raw(denoiser));
    }
}

/// Predicted noise for `x_t` at step `t`, written to `out`, which must hold
/// exactly `out_len == height * width` values.
///
/// # Safety
/// `x_t` must hold `height * width` values, `out` must hold `out_len`
/// values and `denoiser` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn autoddpm_denoiser_predict_eps(
    denoiser: *const AutoddpmDenoiser,
    x_t: *const f64,
    height: usize,
    width: usize,
    t: usize,
    out: *mut f64,
    out_len: usize,
) -> AutoddpmStatus {
    guard(|| {
        let d = deref(denoiser, "denoiser")?;
        let x = read_image(x_t, height, width)?;
        let eps = d.inner.predict_eps(&x, t)?;
        write_slice(eps.data(), out, out_len)
    })
}

/// Default detection settings.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn autoddpm_pipeline_config_default(out: *mut AutoddpmPipelineConfig) -> AutoddpmStatus {
    guard(|| {
        *out_ptr(out, "out")? = (&PipelineConfig::default()).into();
        Ok(())
    })
}

/// Runs the full pipeline on one image in `[0, 1]`; a pure function of its
/// inputs and `seed`.
///
/// # Safety
/// `image` must hold `height * width` values; handles must be live; `config`
/// and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn autoddpm_detect(
    denoiser: *const AutoddpmDenoiser,
    schedule: *const AutoddpmSchedule,
    config: *const AutoddpmPipelineConfig,
    image: *const f64,
    height: usize,
    width: usize,
    seed: u64,
    out: *mut *mut AutoddpmDetection,
) -> AutoddpmStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        let d = deref(denoiser, "denoiser")?;
        let s = deref(schedule, "schedule")?;
        let cfg: PipelineConfig = deref(config, "config")?.into();
        let x = read_image(image, height, width)?;
        let inner = pipeline::detect(&x, d.inner.as_ref(), &s.inner, &cfg, &PerceptualSurrogate::default(), seed)?;
        *slot = Box::into_raw(Box::new(AutoddpmDetection { inner }));
        Ok(())
    })
}

/// # Safety
/// `detection` must be null or a live handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn autoddpm_detection_free(detection: *mut AutoddpmDetection) {
    if !detection.is_null() {
        drop(Box::from_raw(detection));
    }
}

/// Copies one grid of the result into `out`, which must hold exactly `len`
/// values (`height * width` of the input).
///
/// # Safety
/// `detection` must be a live handle and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn autoddpm_detection_get(
    detection: *const AutoddpmDetection,
    field: AutoddpmDetectionField,
    out: *mut f64,
    len: usize,
) -> AutoddpmStatus {
    guard(|| {
        let r = &deref(detection, "detection")?.inner;
        let img = match field {
            AutoddpmDetectionField::InitialReconstruction => &r.initial_reconstruction,
            AutoddpmDetectionField::InitialHeatmap => r.initial_heatmap.as_image(),
            AutoddpmDetectionField::PseudoHealthy => &r.ph_reconstruction,
            AutoddpmDetectionField::FinalMap => r.final_map.as_image(),
        };
        write_slice(img.data(), out, len)
    })
}

/// Copies the stitching mask (0/1 bytes) into `out`.
///
/// # Safety
/// `detection` must be a live handle and `out` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn autoddpm_detection_mask(
    detection: *const AutoddpmDetection,
    out: *mut u8,
    len: usize,
) -> AutoddpmStatus {
    guard(|| {
        let r = &deref(detection, "detection")?.inner;
        write_slice(r.mask.data(), out, len)
    })
}

/// Structural similarity of two images.
///
/// # Safety
/// `a` and `b` must hold `height * width` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn autoddpm_ssim(
    a: *const f64,
    b: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
) -> AutoddpmStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        *slot = metrics::ssim(&read_image(a, height, width)?, &read_image(b, height, width)?)?;
        Ok(())
    })
}

/// Area under the pixel-level precision-recall curve and the maximum Dice
/// over thresholds, for non-negative `scores` against a 0/1 mask.
///
/// # Safety
/// `scores` and `mask` must hold `height * width` values; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn autoddpm_localization(
    scores: *const f64,
    mask: *const u8,
    height: usize,
    width: usize,
    auprc: *mut f64,
    max_dice: *mut f64,
) -> AutoddpmStatus {
    guard(|| {
        let a = out_ptr(auprc, "auprc")?;
        let m = out_ptr(max_dice, "max_dice")?;
        let s = Heatmap::new(read_image(scores, height, width)?)?;
        let g = read_mask(mask, height, width)?;
        let (va, vm) = (metrics::auprc(&s, &g)?, metrics::max_dice(&s, &g)?);
        *a = va;
        *m = vm;
        Ok(())
    })
}
