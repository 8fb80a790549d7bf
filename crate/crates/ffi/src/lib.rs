//! C ABI over the collage-forge engine.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Every fallible call returns a [`CfStatus`]; on failure
//! the message is kept per thread and read with [`cf_last_error_message`].
//! Strings returned by the library are heap-allocated and released with
//! [`cf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use collage_forge::backend::{Backend, BackendDescriptor};
use collage_forge::curate::{CurateConfig, CurationSession};
use collage_forge::layout::LayoutOptions;
use collage_forge::model::{ElementLibrary, PresentMode, ScoringConfig, SceneDocument, SelectionMode};
use collage_forge::preprocess::PrepareOptions;
use collage_forge::{json, pipeline, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStatus {
    Ok = 0,
    InvalidArgument = 1,
    Io = 2,
    Parse = 3,
    Backend = 4,
    Curation = 5,
    Scene = 6,
    Export = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfMode {
    Full = 0,
    KeywordOnly = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfPresent {
    Sized = 0,
    Uniform = 1,
}

/// A connected model backend.
pub struct CfEngine {
    descriptor: BackendDescriptor,
    backend: Arc<dyn Backend>,
}

/// A prepared element library and the directory it lives in.
pub struct CfLibrary {
    dir: PathBuf,
    library: ElementLibrary,
}

/// A curated session and the directory it was saved to.
pub struct CfSession {
    dir: PathBuf,
    session: CurationSession,
    library: ElementLibrary,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_for(e: &Error) -> CfStatus {
    match e {
        Error::Io { .. } | Error::Image { .. } => CfStatus::Io,
        Error::Parse(_) => CfStatus::Parse,
        Error::Backend { .. } => CfStatus::Backend,
        Error::Curation { .. } | Error::Scoring(_) => CfStatus::Curation,
        Error::Scene(_) => CfStatus::Scene,
        Error::Export(_) => CfStatus::Export,
        Error::Invalid(_) => CfStatus::InvalidArgument,
    }
}

struct Fail(CfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_for(&e), e.to_string())
    }
}

fn invalid(message: &str) -> Fail {
    Fail(CfStatus::InvalidArgument, message.to_string())
}

/// Runs `f`, recording failures and turning panics into `Internal`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CfStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CfStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not UTF-8")))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Fail> {
    str_arg(p, name).map(PathBuf::from)
}

unsafe fn out_arg<'a, T>(p: *mut *mut T, name: &str) -> Result<&'a mut *mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid(&format!("{name} is NULL")))
}

fn to_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

fn engine_from(descriptor: BackendDescriptor) -> Result<Box<CfEngine>, Fail> {
    let backend = descriptor.connect()?;
    Ok(Box::new(CfEngine { descriptor, backend }))
}

/// Creates an engine over the deterministic mock backend.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn cf_engine_new_mock(seed: u64, out: *mut *mut CfEngine) -> CfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(engine_from(BackendDescriptor::mock(seed))?);
        Ok(())
    })
}

/// Creates an engine talking to a model backend at `base_url`.
///
/// # Safety
/// `base_url` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_engine_new_remote(
    base_url: *const c_char,
    timeout_s: f64,
    out: *mut *mut CfEngine,
) -> CfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let url = str_arg(base_url, "base_url")?;
        let timeout = (timeout_s > 0.0).then_some(timeout_s);
        let descriptor = BackendDescriptor::parse(url, None, timeout)?;
        *out = Box::into_raw(engine_from(descriptor)?);
        Ok(())
    })
}

/// # Safety
/// `engine` must come from a `cf_engine_new_*` call or be NULL.
#[no_mangle]
pub unsafe extern "C" fn cf_engine_free(engine: *mut CfEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Extracts a library from the photos in `collection_dir` into `out_dir`.
/// A `confidence` outside [0, 1] selects the default threshold.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cf_prepare(
    engine: *const CfEngine,
    collection_dir: *const c_char,
    out_dir: *const c_char,
    confidence: f64,
    out: *mut *mut CfLibrary,
) -> CfStatus {
    guard(|| {
        let engine = engine.as_ref().ok_or_else(|| invalid("engine is NULL"))?;
        let out = out_arg(out, "out")?;
        let collection = path_arg(collection_dir, "collection_dir")?;
        let dir = path_arg(out_dir, "out_dir")?;
        let mut options = PrepareOptions::default();
        if (0.0..=1.0).contains(&confidence) {
            options.confidence = confidence;
        }
        let result = pipeline::prepare(&collection, &dir, &engine.descriptor, &options)?;
        *out = Box::into_raw(Box::new(CfLibrary {
            dir,
            library: result.library,
        }));
        Ok(())
    })
}

/// # Safety
/// `dir` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cf_library_open(dir: *const c_char, out: *mut *mut CfLibrary) -> CfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let dir = path_arg(dir, "dir")?;
        let library = ElementLibrary::load(&dir)?;
        *out = Box::into_raw(Box::new(CfLibrary { dir, library }));
        Ok(())
    })
}

/// Number of elements; 0 for a NULL handle.
///
/// # Safety
/// `library` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cf_library_element_count(library: *const CfLibrary) -> usize {
    library.as_ref().map_or(0, |l| l.library.elements.len())
}

/// Library id as a new string, or NULL for a NULL handle.
///
/// # Safety
/// `library` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cf_library_id(library: *const CfLibrary) -> *mut c_char {
    match library.as_ref() {
        Some(l) => to_c(l.library.library_id.clone()),
        None => std::ptr::null_mut(),
    }
}

/// # Safety
/// `library` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn cf_library_free(library: *mut CfLibrary) {
    if !library.is_null() {
        drop(Box::from_raw(library));
    }
}

/// Curates `story` over `library` and saves the session into
/// `session_dir`. `weights` is NULL for the defaults or points at three
/// values: diversity, consistency, resolution.
///
/// # Safety
/// Pointers must be valid; `weights` NULL or readable for three doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_curate(
    engine: *const CfEngine,
    library: *const CfLibrary,
    story: *const c_char,
    mode: CfMode,
    weights: *const f64,
    session_dir: *const c_char,
    out: *mut *mut CfSession,
) -> CfStatus {
    guard(|| {
        let engine = engine.as_ref().ok_or_else(|| invalid("engine is NULL"))?;
        let library = library.as_ref().ok_or_else(|| invalid("library is NULL"))?;
        let out = out_arg(out, "out")?;
        let story = str_arg(story, "story")?;
        let dir = path_arg(session_dir, "session_dir")?;
        let scoring = if weights.is_null() {
            ScoringConfig::default()
        } else {
            let w = std::slice::from_raw_parts(weights, 3);
            ScoringConfig::with_weights(w[0], w[1], w[2])
        };
        let config = CurateConfig {
            mode: match mode {
                CfMode::Full => SelectionMode::Full,
                CfMode::KeywordOnly => SelectionMode::KeywordOnly,
            },
            scoring,
            ..CurateConfig::default()
        };
        let session = pipeline::curate_into(&library.dir, &dir, story, engine.backend.as_ref(), &config)?;
        *out = Box::into_raw(Box::new(CfSession {
            dir,
            session,
            library: library.library.clone(),
        }));
        Ok(())
    })
}

/// # Safety
/// `dir` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cf_session_open(dir: *const c_char, out: *mut *mut CfSession) -> CfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let dir = path_arg(dir, "dir")?;
        let (session, library) = pipeline::open_session(&dir)?;
        *out = Box::into_raw(Box::new(CfSession { dir, session, library }));
        Ok(())
    })
}

/// Session id as a new string, or NULL for a NULL handle.
///
/// # Safety
/// `session` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cf_session_id(session: *const CfSession) -> *mut c_char {
    match session.as_ref() {
        Some(s) => to_c(s.session.session_id.clone()),
        None => std::ptr::null_mut(),
    }
}

/// Lays the session out and returns the presentation document as JSON, in
/// the same bytes the CLI writes to `presentation.json`. A non-positive
/// `canvas_width` selects the default.
///
/// # Safety
/// `session` must be live and `out_json` valid.
#[no_mangle]
pub unsafe extern "C" fn cf_session_layout_json(
    session: *const CfSession,
    present: CfPresent,
    canvas_width: f64,
    seed: u64,
    out_json: *mut *mut c_char,
) -> CfStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| invalid("session is NULL"))?;
        let out = out_arg(out_json, "out_json")?;
        let options = layout_options(present, canvas_width, seed);
        let p = pipeline::present(&s.session, &s.library, &options)?;
        *out = to_c(json::to_canonical_string(&p)?);
        Ok(())
    })
}

fn layout_options(present: CfPresent, canvas_width: f64, seed: u64) -> LayoutOptions {
    let d = LayoutOptions::default();
    LayoutOptions {
        canvas_width: if canvas_width > 0.0 { canvas_width } else { d.canvas_width },
        present: match present {
            CfPresent::Sized => PresentMode::Sized,
            CfPresent::Uniform => PresentMode::Uniform,
        },
        seed,
        ..d
    }
}

/// Exports the session into `out_dir`. `scene_path` is NULL to use the
/// session's saved scene or the default presentation scene.
///
/// # Safety
/// `session` must be live; strings NUL-terminated or `scene_path` NULL.
#[no_mangle]
pub unsafe extern "C" fn cf_session_export(
    session: *const CfSession,
    scene_path: *const c_char,
    out_dir: *const c_char,
) -> CfStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| invalid("session is NULL"))?;
        let out = path_arg(out_dir, "out_dir")?;
        let scene: Option<SceneDocument> = if scene_path.is_null() {
            None
        } else {
            Some(json::read_file(Path::new(str_arg(scene_path, "scene_path")?))?)
        };
        pipeline::export_session(&s.dir, scene.as_ref(), &LayoutOptions::default(), &out)?;
        Ok(())
    })
}

/// # Safety
/// `session` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn cf_session_free(session: *mut CfSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Message of the last failed call on this thread as a new string, or NULL.
#[no_mangle]
pub extern "C" fn cf_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        Some(c) => c.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// # Safety
/// `s` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn cf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version; static, do not free.
#[no_mangle]
pub extern "C" fn cf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_arguments_are_rejected() {
        unsafe {
            assert_eq!(cf_engine_new_mock(7, std::ptr::null_mut()), CfStatus::InvalidArgument);
            let msg = cf_last_error_message();
            assert!(!msg.is_null());
            assert_eq!(CStr::from_ptr(msg).to_str().unwrap(), "out is NULL");
            cf_string_free(msg);
            assert_eq!(cf_library_element_count(std::ptr::null()), 0);
        }
    }

    #[test]
    fn success_clears_last_error() {
        unsafe {
            let mut e = std::ptr::null_mut();
            cf_engine_new_mock(7, std::ptr::null_mut());
            assert_eq!(cf_engine_new_mock(7, &mut e), CfStatus::Ok);
            assert!(cf_last_error_message().is_null());
            cf_engine_free(e);
        }
    }

    #[test]
    fn bad_remote_url() {
        unsafe {
            let mut e = std::ptr::null_mut();
            let url = CString::new("ftp://nowhere").unwrap();
            assert_eq!(cf_engine_new_remote(url.as_ptr(), 1.0, &mut e), CfStatus::InvalidArgument);
            assert!(e.is_null());
        }
    }

    #[test]
    fn version_is_package_version() {
        let v = unsafe { CStr::from_ptr(cf_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
