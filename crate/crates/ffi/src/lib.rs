//! C ABI for `llgm`.
//!
//! Every object crosses the boundary as an opaque handle created by a
//! `llgm_*_load`/`llgm_*_new`/producer call and released with the matching
//! `llgm_*_free`. Fallible calls return an [`LlgmStatus`]; on failure the
//! message is available from [`llgm_last_error`] on the same thread until
//! the next failing call. Panics are caught and reported as
//! `LLGM_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use llgm::dict::{self, DictConfig, Dictionary};
use llgm::enhance::{self, EnhanceConfig};
use llgm::field::{self, GaussianSet};
use llgm::image::{self, Image};
use llgm::metrics::MetricsReport;
use llgm::recon::{self, ReconConfig};
use llgm::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlgmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    ShapeMismatch = 5,
    Incompatible = 6,
    Internal = 7,
}

/// An image with channels interleaved, values nominally in [0, 1].
pub struct LlgmImage(Image);

/// A fitted Gaussian field (the contents of a `.llgm` file).
pub struct LlgmModel(GaussianSet);

/// A curve dictionary (the contents of a `.llgd` file).
pub struct LlgmDictionary(Dictionary);

/// Stage-one fitting parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LlgmFitParams {
    pub num_primitives: usize,
    pub scales: usize,
    /// Optimizer steps per pyramid level.
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Stage-two enhancement parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LlgmEnhanceParams {
    pub iterations: usize,
    pub lr: f64,
    pub e_target: f64,
}

/// Dictionary construction parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LlgmDictParams {
    /// Learned atoms, not counting the identity atom.
    pub k: usize,
    /// Curve order.
    pub p: usize,
    pub seed: u64,
}

/// Quality metrics. Entries that were not computed are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LlgmMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub loe: f64,
    pub discrete_entropy: f64,
    pub eme: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> LlgmStatus {
    match err {
        Error::Io { .. } | Error::Decode { .. } | Error::Encode { .. } => LlgmStatus::Io,
        Error::ModelFormat(_) | Error::DictFormat(_) => LlgmStatus::Format,
        Error::Shape(_) => LlgmStatus::ShapeMismatch,
        Error::Incompatible(_) => LlgmStatus::Incompatible,
        Error::InvalidArgument(_) | Error::Config(_) | Error::FrozenLevel(_) | Error::CorpusTooSmall { .. } => {
            LlgmStatus::InvalidArgument
        }
    }
}

struct Failure(LlgmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LlgmStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LlgmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LlgmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            LlgmStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(LlgmStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn llgm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn llgm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Desk-scale fitting defaults.
#[no_mangle]
pub extern "C" fn llgm_fit_params_default() -> LlgmFitParams {
    let c = ReconConfig::desk();
    LlgmFitParams {
        num_primitives: c.num_primitives,
        scales: c.scales,
        iterations: c.iterations,
        lr: c.lr,
        seed: c.seed,
    }
}

/// Desk-scale enhancement defaults.
#[no_mangle]
pub extern "C" fn llgm_enhance_params_default() -> LlgmEnhanceParams {
    let c = EnhanceConfig::desk();
    LlgmEnhanceParams {
        iterations: c.iterations,
        lr: c.lr,
        e_target: c.e_target,
    }
}

/// Dictionary defaults.
#[no_mangle]
pub extern "C" fn llgm_dict_params_default() -> LlgmDictParams {
    let c = DictConfig::default();
    LlgmDictParams {
        k: c.k,
        p: c.order,
        seed: c.seed,
    }
}

/// Creates an image by copying `height * width * channels` interleaved values.
///
/// # Safety
/// `data` must point to that many readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn llgm_image_new(
    height: usize,
    width: usize,
    channels: usize,
    data: *const f64,
    out: *mut *mut LlgmImage,
) -> LlgmStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        if height == 0 || width == 0 || channels == 0 {
            return Err(Failure(LlgmStatus::InvalidArgument, "image dimensions must be positive".into()));
        }
        let len = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Failure(LlgmStatus::InvalidArgument, "image size overflows".into()))?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        emit(out, LlgmImage(Image::from_vec(height, width, channels, values)?))
    })
}

/// Reads a PNG or PPM file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn llgm_image_load(path: *const c_char, out: *mut *mut LlgmImage) -> LlgmStatus {
    guard(|| {
        let img = image::load_image(path_arg(path)?)?;
        emit(out, LlgmImage(img))
    })
}

/// Writes an image; the format follows the file extension.
///
/// # Safety
/// `img` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn llgm_image_save(img: *const LlgmImage, path: *const c_char) -> LlgmStatus {
    guard(|| {
        image::save_image(&handle(img, "image")?.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Reports the image shape. Any output pointer may be null.
///
/// # Safety
/// `img` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn llgm_image_shape(
    img: *const LlgmImage,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> LlgmStatus {
    guard(|| {
        let img = &handle(img, "image")?.0;
        for (p, v) in [(height, img.height()), (width, img.width()), (channels, img.channels())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the interleaved pixel values into `dst`, which holds `len` doubles.
///
/// # Safety
/// `img` must be a live handle and `dst` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn llgm_image_copy_data(img: *const LlgmImage, dst: *mut f64, len: usize) -> LlgmStatus {
    guard(|| {
        let data = handle(img, "image")?.0.data();
        if dst.is_null() {
            return Err(null("dst"));
        }
        if len != data.len() {
            return Err(Failure(
                LlgmStatus::ShapeMismatch,
                format!("buffer holds {len} values, image has {}", data.len()),
            ));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), dst, len);
        Ok(())
    })
}

/// # Safety
/// `img` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn llgm_image_free(img: *mut LlgmImage) {
    free(img);
}

/// Fits a multi-scale Gaussian field to `img`. `params` may be null for defaults.
/// `psnr` (nullable) receives the reconstruction PSNR.
///
/// # Safety
/// `img` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn llgm_fit(
    img: *const LlgmImage,
    params: *const LlgmFitParams,
    out: *mut *mut LlgmModel,
    psnr: *mut f64,
) -> LlgmStatus {
    guard(|| {
        let img = &handle(img, "image")?.0;
        let p = params.as_ref().copied().unwrap_or_else(|| llgm_fit_params_default());
        let cfg = ReconConfig {
            num_primitives: p.num_primitives,
            scales: p.scales,
            iterations: p.iterations,
            lr: p.lr,
            seed: p.seed,
            ..ReconConfig::desk()
        };
        let res = recon::fit(img, &cfg)?;
        if !psnr.is_null() {
            *psnr = res.psnr;
        }
        emit(out, LlgmModel(res.set))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn llgm_model_load(path: *const c_char, out: *mut *mut LlgmModel) -> LlgmStatus {
    guard(|| emit(out, LlgmModel(field::load_model(path_arg(path)?)?)))
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn llgm_model_save(model: *const LlgmModel, path: *const c_char) -> LlgmStatus {
    guard(|| {
        field::save_model(&handle(model, "model")?.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Total primitive count over all levels; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn llgm_model_primitive_count(model: *const LlgmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.total_count())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn llgm_model_free(model: *mut LlgmModel) {
    free(model);
}

/// Builds a dictionary from `count` image paths. Unreadable images are skipped.
///
/// # Safety
/// `paths` must hold `count` NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn llgm_dictionary_build(
    paths: *const *const c_char,
    count: usize,
    params: *const LlgmDictParams,
    out: *mut *mut LlgmDictionary,
) -> LlgmStatus {
    guard(|| {
        if paths.is_null() {
            return Err(null("paths"));
        }
        let files = std::slice::from_raw_parts(paths, count)
            .iter()
            .map(|&p| path_arg(p))
            .collect::<Result<Vec<_>, _>>()?;
        let p = params.as_ref().copied().unwrap_or_else(|| llgm_dict_params_default());
        let cfg = DictConfig {
            k: p.k,
            order: p.p,
            seed: p.seed,
            ..DictConfig::default()
        };
        let build = dict::build_dictionary(&files, &cfg, "ffi")?;
        emit(out, LlgmDictionary(build.dictionary))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn llgm_dictionary_load(path: *const c_char, out: *mut *mut LlgmDictionary) -> LlgmStatus {
    guard(|| emit(out, LlgmDictionary(dict::load_dictionary(path_arg(path)?)?)))
}

/// # Safety
/// `d` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn llgm_dictionary_save(d: *const LlgmDictionary, path: *const c_char) -> LlgmStatus {
    guard(|| {
        dict::save_dictionary(&handle(d, "dictionary")?.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Reports the learned atom count K (excluding the identity atom) and the
/// curve order P. Either output may be null.
///
/// # Safety
/// `d` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn llgm_dictionary_shape(d: *const LlgmDictionary, k: *mut usize, p: *mut usize) -> LlgmStatus {
    guard(|| {
        let d = &handle(d, "dictionary")?.0;
        if !k.is_null() {
            *k = d.k();
        }
        if !p.is_null() {
            *p = d.order();
        }
        Ok(())
    })
}

/// # Safety
/// `d` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn llgm_dictionary_free(d: *mut LlgmDictionary) {
    free(d);
}

/// Enhances `img` with the frozen `model` and dictionary `d`. `params` may be
/// null for defaults. The optimized logits are not written back to `model`.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn llgm_enhance(
    img: *const LlgmImage,
    model: *const LlgmModel,
    d: *const LlgmDictionary,
    params: *const LlgmEnhanceParams,
    out: *mut *mut LlgmImage,
) -> LlgmStatus {
    guard(|| {
        let img = &handle(img, "image")?.0;
        let model = &handle(model, "model")?.0;
        let d = &handle(d, "dictionary")?.0;
        let p = params.as_ref().copied().unwrap_or_else(|| llgm_enhance_params_default());
        let cfg = EnhanceConfig {
            iterations: p.iterations,
            lr: p.lr,
            e_target: p.e_target,
            ..EnhanceConfig::desk()
        };
        let res = enhance::enhance(img, model, d, &cfg)?;
        emit(out, LlgmImage(res.output))
    })
}

/// Computes quality metrics of `pred`. With a null `reference` only the
/// no-reference entries are filled; the others are NaN.
///
/// # Safety
/// `pred` must be a live handle, `reference` null or live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn llgm_metrics(
    pred: *const LlgmImage,
    reference: *const LlgmImage,
    out: *mut LlgmMetrics,
) -> LlgmStatus {
    guard(|| {
        let pred = &handle(pred, "pred")?.0;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let r = MetricsReport::evaluate(pred, reference.as_ref().map(|r| &r.0))?;
        *out = LlgmMetrics {
            psnr: r.psnr.unwrap_or(f64::NAN),
            ssim: r.ssim.unwrap_or(f64::NAN),
            loe: r.loe.unwrap_or(f64::NAN),
            discrete_entropy: r.de.unwrap_or(f64::NAN),
            eme: r.eme.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}
