//! C ABI over the scene generator and the conditioned editing state.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free` function. Every fallible call returns an
//! [`LwStatus`]; on failure the message is available from
//! [`lw_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use latentwalk::latent::{latent_for_seed, LatentCode};
use latentwalk::scenegen::{self, GeneratorConstants, HEIGHT, WIDTH};
use latentwalk::service::{self, ServiceState, SynthesisRequest};
use latentwalk::store;
use latentwalk::world::Dimension;
use latentwalk::Error;

/// Width of every rendered image in pixels.
pub const LW_IMAGE_WIDTH: usize = 64;
/// Height of every rendered image in pixels.
pub const LW_IMAGE_HEIGHT: usize = 64;
/// Bytes in one 8-bit grayscale image.
pub const LW_IMAGE_BYTES: usize = 4096;

const _: () = assert!(LW_IMAGE_WIDTH == WIDTH && LW_IMAGE_HEIGHT == HEIGHT && LW_IMAGE_BYTES == WIDTH * HEIGHT);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFound = 3,
    Malformed = 4,
    Io = 5,
    BufferTooSmall = 6,
    Numeric = 7,
    Panic = 8,
}

/// Byte buffer allocated by the library. Release with [`lw_buffer_free`].
#[repr(C)]
pub struct LwBuffer {
    pub data: *mut u8,
    pub len: usize,
}

/// Generator constants.
pub struct LwGenerator {
    constants: GeneratorConstants,
}

/// Generator plus a conditioned boundary set loaded from an artifact tree.
pub struct LwEditor {
    state: ServiceState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> LwStatus {
    match e {
        Error::NotFound { .. } | Error::MissingLatents { .. } => LwStatus::NotFound,
        Error::Malformed { .. } | Error::Json(_) | Error::Csv(_) => LwStatus::Malformed,
        Error::Io { .. } | Error::Png(_) => LwStatus::Io,
        Error::DegenerateVector { .. }
        | Error::ParallelVectors { .. }
        | Error::NonFinite { .. }
        | Error::NonOrthogonal { .. } => LwStatus::Numeric,
        _ => LwStatus::InvalidArgument,
    }
}

fn fail(status: LwStatus, msg: impl Into<String>) -> LwStatus {
    set_error(msg);
    status
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), LwStatus>) -> LwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LwStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(LwStatus::Panic, "internal panic"),
    }
}

fn check(r: latentwalk::Result<()>) -> Result<(), LwStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn lift<T>(r: latentwalk::Result<T>) -> Result<T, LwStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, LwStatus> {
    if p.is_null() {
        return Err(fail(LwStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(LwStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn latent_arg(z: *const f64, dim: usize, expected: usize) -> Result<LatentCode, LwStatus> {
    if z.is_null() {
        return Err(fail(LwStatus::NullPointer, "latent pointer is null"));
    }
    if dim != expected {
        return Err(fail(
            LwStatus::InvalidArgument,
            format!("latent has {dim} values, generator expects {expected}"),
        ));
    }
    lift(LatentCode::new(std::slice::from_raw_parts(z, dim).to_vec()))
}

unsafe fn write_pixels(bytes: &[u8], out: *mut u8, out_len: usize) -> Result<(), LwStatus> {
    if out.is_null() {
        return Err(fail(LwStatus::NullPointer, "output buffer is null"));
    }
    if out_len < bytes.len() {
        return Err(fail(
            LwStatus::BufferTooSmall,
            format!("output buffer holds {out_len} bytes, need {}", bytes.len()),
        ));
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), out, bytes.len());
    Ok(())
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes the truncated base latent for `seed` into `out[0..dim]`.
///
/// # Safety
/// `out` must point to `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lw_sample_latent(seed: u64, psi: f64, dim: usize, out: *mut f64) -> LwStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(LwStatus::NullPointer, "output pointer is null"));
        }
        let z = lift(latent_for_seed(seed, psi, dim))?;
        ptr::copy_nonoverlapping(z.as_slice().as_ptr(), out, dim);
        Ok(())
    })
}

/// Builds generator constants from a seed.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn lw_generator_new(seed: u64, dim: usize, out: *mut *mut LwGenerator) -> LwStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(LwStatus::NullPointer, "handle slot is null"));
        }
        let constants = lift(GeneratorConstants::from_seed(seed, dim))?;
        *out = Box::into_raw(Box::new(LwGenerator { constants }));
        Ok(())
    })
}

/// Loads generator constants from a `generator.json` file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn lw_generator_open(path: *const c_char, out: *mut *mut LwGenerator) -> LwStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(fail(LwStatus::NullPointer, "handle slot is null"));
        }
        if !path.exists() {
            return Err(fail(LwStatus::NotFound, format!("generator constants not found: {}", path.display())));
        }
        let constants: GeneratorConstants = lift(store::read_json(path))?;
        check(constants.validate())?;
        *out = Box::into_raw(Box::new(LwGenerator { constants }));
        Ok(())
    })
}

/// # Safety
/// `g` must be null or a handle from `lw_generator_new`/`lw_generator_open`
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn lw_generator_free(g: *mut LwGenerator) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Latent dimensionality of a generator, or 0 for null.
///
/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lw_generator_dim(g: *const LwGenerator) -> usize {
    g.as_ref().map_or(0, |g| g.constants.dim)
}

/// Renders `z` as row-major 8-bit grayscale into `out`
/// (`LW_IMAGE_BYTES` bytes).
///
/// # Safety
/// `g` must be a live handle, `z` must point to `dim` doubles and `out` to
/// `out_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lw_generator_render(
    g: *const LwGenerator,
    z: *const f64,
    dim: usize,
    out: *mut u8,
    out_len: usize,
) -> LwStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| fail(LwStatus::NullPointer, "generator is null"))?;
        let z = latent_arg(z, dim, g.constants.dim)?;
        let image = lift(scenegen::generate(&z, &g.constants))?;
        write_pixels(&image.to_bytes(), out, out_len)
    })
}

/// Opens the conditioned boundaries of `source` (for example
/// `"hidden-true"`) from an artifact directory.
///
/// # Safety
/// `artifacts` and `source` must be NUL-terminated strings; `out` a valid
/// handle slot.
#[no_mangle]
pub unsafe extern "C" fn lw_editor_open(
    artifacts: *const c_char,
    source: *const c_char,
    out: *mut *mut LwEditor,
) -> LwStatus {
    guard(|| {
        let dir = path_arg(artifacts, "artifacts")?;
        let source = path_arg(source, "source")?;
        if out.is_null() {
            return Err(fail(LwStatus::NullPointer, "handle slot is null"));
        }
        let source = lift(source.to_string_lossy().parse())?;
        let state = lift(ServiceState::load(dir, source))?;
        *out = Box::into_raw(Box::new(LwEditor { state }));
        Ok(())
    })
}

/// # Safety
/// `e` must be null or a live handle from `lw_editor_open`.
#[no_mangle]
pub unsafe extern "C" fn lw_editor_free(e: *mut LwEditor) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Latent dimensionality of an editor, or 0 for null.
///
/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lw_editor_dim(e: *const LwEditor) -> usize {
    e.as_ref().map_or(0, |e| e.state.constants.dim)
}

fn request(seed: u64, psi: f64, income: f64, education: f64, health: f64) -> SynthesisRequest {
    SynthesisRequest {
        seed,
        psi: Some(psi),
        alpha_income: income,
        alpha_education: education,
        alpha_health: health,
    }
}

/// Edited scene for a seed as raw grayscale bytes. Alphas are clamped to
/// [-3, 3] and psi to [0, 1], exactly as the HTTP service does.
///
/// # Safety
/// `e` must be a live handle and `out` must point to `out_len` writable
/// bytes.
#[no_mangle]
pub unsafe extern "C" fn lw_editor_synthesize(
    e: *const LwEditor,
    seed: u64,
    psi: f64,
    alpha_income: f64,
    alpha_education: f64,
    alpha_health: f64,
    out: *mut u8,
    out_len: usize,
) -> LwStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| fail(LwStatus::NullPointer, "editor is null"))?;
        let req = request(seed, psi, alpha_income, alpha_education, alpha_health);
        let (image, _) = lift(service::synthesize(&req, &e.state))?;
        write_pixels(&image.to_bytes(), out, out_len)
    })
}

/// Same as [`lw_editor_synthesize`] but PNG-encoded into a library-owned
/// buffer.
///
/// # Safety
/// `e` must be a live handle and `out` a valid buffer slot.
#[no_mangle]
pub unsafe extern "C" fn lw_editor_synthesize_png(
    e: *const LwEditor,
    seed: u64,
    psi: f64,
    alpha_income: f64,
    alpha_education: f64,
    alpha_health: f64,
    out: *mut LwBuffer,
) -> LwStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| fail(LwStatus::NullPointer, "editor is null"))?;
        if out.is_null() {
            return Err(fail(LwStatus::NullPointer, "buffer slot is null"));
        }
        let req = request(seed, psi, alpha_income, alpha_education, alpha_health);
        let (image, _) = lift(service::synthesize(&req, &e.state))?;
        let png = lift(image.to_png())?.into_boxed_slice();
        let len = png.len();
        *out = LwBuffer {
            data: Box::into_raw(png).cast(),
            len,
        };
        Ok(())
    })
}

/// Decision values of `z` for income, education and health, in that order.
/// Dimensions without a boundary are reported as NaN.
///
/// # Safety
/// `e` must be a live handle, `z` must point to `dim` doubles and `out` to
/// three writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lw_editor_decision(
    e: *const LwEditor,
    z: *const f64,
    dim: usize,
    out: *mut f64,
) -> LwStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| fail(LwStatus::NullPointer, "editor is null"))?;
        let z = latent_arg(z, dim, e.state.constants.dim)?;
        if out.is_null() {
            return Err(fail(LwStatus::NullPointer, "output pointer is null"));
        }
        for (i, d) in Dimension::ALL.iter().enumerate() {
            let v = match e.state.boundaries.iter().find(|b| b.dimension == *d) {
                Some(b) => lift(b.decision(&z))?,
                None => f64::NAN,
            };
            *out.add(i) = v;
        }
        Ok(())
    })
}

/// Releases a buffer returned by the library.
///
/// # Safety
/// `buf` must be null or point to a buffer filled by this library that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn lw_buffer_free(buf: *mut LwBuffer) {
    if let Some(b) = buf.as_mut() {
        if !b.data.is_null() {
            drop(Box::from_raw(ptr::slice_from_raw_parts_mut(b.data, b.len)));
        }
        b.data = ptr::null_mut();
        b.len = 0;
    }
}
