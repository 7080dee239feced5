//! C ABI over the `noma` library.
//!
//! Every fallible call returns a [`NomaStatus`]; on failure the message is
//! kept per thread and read back with [`noma_last_error`]. Handles are opaque
//! and must be released with their matching `_free` function. A handle may be
//! used from any thread, but not from two threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use noma::bundle::PriorBundle;
use noma::field::{FieldModel, ForwardCache, ParamVector};
use noma::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NomaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    NotABundle = 4,
    UnsupportedVersion = 5,
    Integrity = 6,
    Numeric = 7,
    Panic = 8,
}

/// A loaded prior bundle.
pub struct NomaPrior {
    bundle: PriorBundle,
    category: CString,
}

/// A neural field ready for evaluation.
pub struct NomaField {
    model: FieldModel,
    params: ParamVector,
    cache: ForwardCache,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> NomaStatus {
    match e {
        Error::InvalidArgument(_) | Error::LengthMismatch { .. } | Error::Config { .. } => {
            NomaStatus::InvalidArgument
        }
        Error::Numeric(_) | Error::NoObjectPixels => NomaStatus::Numeric,
        Error::NotABundle => NomaStatus::NotABundle,
        Error::Version { .. } => NomaStatus::UnsupportedVersion,
        Error::Integrity(_) | Error::Format { .. } => NomaStatus::Integrity,
        Error::Io { .. } => NomaStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (NomaStatus, String)>) -> NomaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NomaStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            NomaStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (NomaStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (NomaStatus, String) {
    (NomaStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn noma_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn noma_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a prior file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn noma_prior_load(path: *const c_char, out: *mut *mut NomaPrior) -> NomaStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (NomaStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let bundle = PriorBundle::load(Path::new(p)).map_err(lib_err)?;
        let category = CString::new(bundle.category.as_str()).unwrap_or_default();
        *out = Box::into_raw(Box::new(NomaPrior { bundle, category }));
        Ok(())
    })
}

/// # Safety
/// `prior` must come from [`noma_prior_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn noma_prior_free(prior: *mut NomaPrior) {
    if !prior.is_null() {
        drop(Box::from_raw(prior));
    }
}

/// Category name owned by the handle; null for a null handle.
///
/// # Safety
/// `prior` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn noma_prior_category(prior: *const NomaPrior) -> *const c_char {
    prior.as_ref().map_or(ptr::null(), |p| p.category.as_ptr())
}

/// Number of field parameters; 0 for a null handle.
///
/// # Safety
/// `prior` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn noma_prior_param_count(prior: *const NomaPrior) -> usize {
    prior.as_ref().map_or(0, |p| p.bundle.theta.len())
}

/// Grid side length `R`; the grid holds `R^3` values.
///
/// # Safety
/// `prior` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn noma_prior_grid_resolution(prior: *const NomaPrior) -> usize {
    prior.as_ref().map_or(0, |p| p.bundle.grid.resolution())
}

/// Copies the density grid (x fastest) into `out`, which holds `len` floats.
///
/// # Safety
/// `prior` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn noma_prior_grid_values(prior: *const NomaPrior, out: *mut f32, len: usize) -> NomaStatus {
    guard(|| {
        let p = prior.as_ref().ok_or_else(|| null("prior"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let v = p.bundle.grid.values();
        if len != v.len() {
            return Err((
                NomaStatus::InvalidArgument,
                format!("grid has {} values, buffer holds {len}", v.len()),
            ));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), out, len);
        Ok(())
    })
}

/// Density at a unit-cube point, trilinearly interpolated from the grid.
///
/// # Safety
/// `prior` must be a live handle, `point` valid for 3 reads, `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn noma_prior_grid_sample(prior: *const NomaPrior, point: *const f64, out: *mut f64) -> NomaStatus {
    guard(|| {
        let p = prior.as_ref().ok_or_else(|| null("prior"))?;
        if point.is_null() || out.is_null() {
            return Err(null("point or out"));
        }
        let q = std::slice::from_raw_parts(point, 3);
        *out = p.bundle.grid.trilerp([q[0], q[1], q[2]]);
        Ok(())
    })
}

/// Vertex and triangle counts of the prior mesh.
///
/// # Safety
/// `prior` must be a live handle; the outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn noma_prior_mesh_counts(prior: *const NomaPrior, vertices: *mut usize, triangles: *mut usize) -> NomaStatus {
    guard(|| {
        let p = prior.as_ref().ok_or_else(|| null("prior"))?;
        if vertices.is_null() || triangles.is_null() {
            return Err(null("vertices or triangles"));
        }
        *vertices = p.bundle.mesh.vertices.len();
        *triangles = p.bundle.mesh.triangles.len();
        Ok(())
    })
}

/// Builds a field from the prior's architecture and parameters.
///
/// # Safety
/// `prior` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn noma_field_from_prior(prior: *const NomaPrior, out: *mut *mut NomaField) -> NomaStatus {
    guard(|| {
        let p = prior.as_ref().ok_or_else(|| null("prior"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = FieldModel::new(&p.bundle.arch).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(NomaField {
            model,
            params: p.bundle.theta.clone(),
            cache: ForwardCache::default(),
        }));
        Ok(())
    })
}

/// # Safety
/// `field` must come from [`noma_field_from_prior`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn noma_field_free(field: *mut NomaField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Evaluates `n` unit-cube points (`xyz` interleaved). Writes `n` densities
/// to `sigma` and, when `rgb` is not null, `3n` colors.
///
/// # Safety
/// `field` must be a live handle; `points` valid for `3n` reads, `sigma` for
/// `n` writes and `rgb`, if not null, for `3n` writes.
#[no_mangle]
pub unsafe extern "C" fn noma_field_eval(field: *mut NomaField, points: *const f32, n: usize, sigma: *mut f32, rgb: *mut f32) -> NomaStatus {
    guard(|| {
        let f = field.as_mut().ok_or_else(|| null("field"))?;
        if n == 0 {
            return Ok(());
        }
        if points.is_null() || sigma.is_null() {
            return Err(null("points or sigma"));
        }
        let flat = std::slice::from_raw_parts(points, 3 * n);
        let pts: Vec<[f32; 3]> = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        f.model
            .forward(&f.params.values, &pts, &mut f.cache)
            .map_err(lib_err)?;
        let outs = f.cache.outputs();
        let sig = std::slice::from_raw_parts_mut(sigma, n);
        for (s, o) in sig.iter_mut().zip(outs) {
            *s = o.sigma;
        }
        if !rgb.is_null() {
            let col = std::slice::from_raw_parts_mut(rgb, 3 * n);
            for (c, o) in col.chunks_exact_mut(3).zip(outs) {
                c.copy_from_slice(&o.rgb);
            }
        }
        Ok(())
    })
}

unsafe fn cloud(p: *const f64, n: usize, what: &str) -> Result<Vec<[f64; 3]>, (NomaStatus, String)> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, 3 * n)
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect())
}

/// Symmetric Chamfer distance between two point clouds (`xyz` interleaved).
///
/// # Safety
/// `a` valid for `3na` reads, `b` for `3nb`, `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn noma_chamfer(a: *const f64, na: usize, b: *const f64, nb: usize, out: *mut f64) -> NomaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (a, b) = (cloud(a, na, "a")?, cloud(b, nb, "b")?);
        *out = noma::meshmetrics::chamfer(&a, &b).map_err(lib_err)?;
        Ok(())
    })
}

/// Fraction of `gt` points within `tau` of `rec`.
///
/// # Safety
/// `gt` valid for `3ngt` reads, `rec` for `3nrec`, `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn noma_completion_ratio(gt: *const f64, ngt: usize, rec: *const f64, nrec: usize, tau: f64, out: *mut f64) -> NomaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (g, r) = (cloud(gt, ngt, "gt")?, cloud(rec, nrec, "rec")?);
        *out = noma::meshmetrics::completion_ratio(&g, &r, tau).map_err(lib_err)?;
        Ok(())
    })
}
