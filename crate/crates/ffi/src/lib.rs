//! C ABI over the slicewise engine.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `sw_*_load` / `sw_enumerate` / `sw_analyze` call and released with the
//! matching `sw_*_free`. Functions return an [`SwStatus`]; on failure the
//! message is available from [`sw_last_error`] on the same thread until the
//! next call. Strings handed out by the library are owned by the caller and
//! must be released with [`sw_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use slicewise::analyze::{
    attach_model, identify_error_slices, slice_overlap, AnalyzeError, ErrorSliceReport, ParentRule, PerformanceColumn,
};
use slicewise::enumerate::{Algorithm, EnumConfig, EnumError, LatticeError, SliceLattice};
use slicewise::index::build_index;
use slicewise::schema::{load_dataset, load_schema, DatasetError, SchemaError, TaggedDataset};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Mismatch = 6,
    Internal = 7,
}

/// A schema-validated dataset.
pub struct SwDataset {
    inner: TaggedDataset,
}

/// An enumerated slice lattice.
pub struct SwLattice {
    inner: Arc<SliceLattice>,
}

/// One model's error-slice report.
pub struct SwReport {
    inner: ErrorSliceReport,
}

struct Failure {
    status: SwStatus,
    message: String,
}

impl Failure {
    fn new(status: SwStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(SwStatus::Io, e.to_string())
    }
}

impl From<SchemaError> for Failure {
    fn from(e: SchemaError) -> Self {
        Failure::new(SwStatus::Parse, format!("schema: {e}"))
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        let status = match e {
            DatasetError::Io(_) => SwStatus::Io,
            _ => SwStatus::Parse,
        };
        Failure::new(status, format!("dataset: {e}"))
    }
}

impl From<LatticeError> for Failure {
    fn from(e: LatticeError) -> Self {
        let status = match e {
            LatticeError::Io(_) => SwStatus::Io,
            _ => SwStatus::Parse,
        };
        Failure::new(status, format!("lattice: {e}"))
    }
}

impl From<EnumError> for Failure {
    fn from(e: EnumError) -> Self {
        let status = match e {
            EnumError::ThreadPool(_) => SwStatus::Internal,
            _ => SwStatus::InvalidArgument,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<AnalyzeError> for Failure {
    fn from(e: AnalyzeError) -> Self {
        use AnalyzeError::*;
        let status = match e {
            DimensionMismatch { .. } | SampleOrderMismatch | LatticeMismatch { .. } => SwStatus::Mismatch,
            InvalidThreshold(_) | InvalidFraction(_) => SwStatus::InvalidArgument,
            Io(_) => SwStatus::Io,
            MissingPerformance { .. } | PerformanceOutOfRange { .. } | Malformed { .. } | Json(_) => SwStatus::Parse,
        };
        Failure::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

/// Runs `f`, converting failures and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SwStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SwStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal error: {message}"));
            SwStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(SwStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(SwStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(SwStatus::NullArgument, format!("{name} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(SwStatus::NullArgument, "output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, text: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(SwStatus::NullArgument, "output pointer is null"));
    }
    let text = CString::new(text).map_err(|_| Failure::new(SwStatus::Internal, "string contains a nul byte"))?;
    *out = text.into_raw();
    Ok(())
}

unsafe fn check_out<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(SwStatus::NullArgument, "output pointer is null"));
    }
    *out = ptr::null_mut();
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next library call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn sw_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn sw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a schema document and the NDJSON dataset tagged against it.
///
/// # Safety
/// Paths must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_dataset_load(
    schema_path: *const c_char,
    dataset_path: *const c_char,
    out: *mut *mut SwDataset,
) -> SwStatus {
    guard(|| {
        check_out(out)?;
        let schema_path = str_arg(schema_path, "schema_path")?;
        let dataset_path = str_arg(dataset_path, "dataset_path")?;
        let schema = Arc::new(load_schema(BufReader::new(File::open(schema_path)?))?);
        let inner = load_dataset(schema, BufReader::new(File::open(dataset_path)?))?;
        put(out, SwDataset { inner })
    })
}

/// Number of samples, or 0 for null.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sw_dataset_len(dataset: *const SwDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// # Safety
/// `dataset` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sw_dataset_free(dataset: *mut SwDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Enumerates all slices of depth at most `max_depth` with at least
/// `min_count` members. `algorithm` is "naive", "tree", "efficient" or null
/// for the efficient one.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_enumerate(
    dataset: *const SwDataset,
    max_depth: usize,
    min_count: usize,
    algorithm: *const c_char,
    threads: usize,
    out: *mut *mut SwLattice,
) -> SwStatus {
    guard(|| {
        check_out(out)?;
        let dataset = ref_arg(dataset, "dataset")?;
        let algorithm = match opt_str_arg(algorithm, "algorithm")? {
            Some(name) => name
                .parse::<Algorithm>()
                .map_err(|e| Failure::new(SwStatus::InvalidArgument, e.to_string()))?,
            None => Algorithm::Efficient,
        };
        let cfg = EnumConfig::new(max_depth, min_count).with_threads(threads.max(1));
        let lattice = algorithm.run(&build_index(&dataset.inner), &cfg)?;
        put(
            out,
            SwLattice {
                inner: Arc::new(lattice),
            },
        )
    })
}

/// # Safety
/// `path` must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_lattice_load(path: *const c_char, out: *mut *mut SwLattice) -> SwStatus {
    guard(|| {
        check_out(out)?;
        let path = str_arg(path, "path")?;
        let lattice = SliceLattice::read_json(BufReader::new(File::open(path)?))?;
        put(
            out,
            SwLattice {
                inner: Arc::new(lattice),
            },
        )
    })
}

/// # Safety
/// `lattice` must be a live handle; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn sw_lattice_save(lattice: *const SwLattice, path: *const c_char) -> SwStatus {
    guard(|| {
        let lattice = ref_arg(lattice, "lattice")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        lattice.inner.write_json(BufWriter::new(File::create(path)?))?;
        Ok(())
    })
}

/// Serialized lattice document; free with [`sw_string_free`].
///
/// # Safety
/// `lattice` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_lattice_to_json(lattice: *const SwLattice, out: *mut *mut c_char) -> SwStatus {
    guard(|| {
        check_out(out)?;
        put_string(out, ref_arg(lattice, "lattice")?.inner.to_json())
    })
}

/// Content fingerprint; free with [`sw_string_free`].
///
/// # Safety
/// `lattice` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_lattice_fingerprint(lattice: *const SwLattice, out: *mut *mut c_char) -> SwStatus {
    guard(|| {
        check_out(out)?;
        put_string(out, ref_arg(lattice, "lattice")?.inner.fingerprint().to_string())
    })
}

/// Number of slices over all depths, or 0 for null.
///
/// # Safety
/// `lattice` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sw_lattice_len(lattice: *const SwLattice) -> usize {
    lattice.as_ref().map_or(0, |l| l.inner.len())
}

/// Number of slices at `depth`, or 0 when out of range.
///
/// # Safety
/// `lattice` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sw_lattice_layer_len(lattice: *const SwLattice, depth: usize) -> usize {
    lattice
        .as_ref()
        .and_then(|l| l.inner.layers().get(depth.wrapping_sub(1)))
        .map_or(0, Vec::len)
}

/// # Safety
/// `lattice` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sw_lattice_free(lattice: *mut SwLattice) {
    if !lattice.is_null() {
        drop(Box::from_raw(lattice));
    }
}

/// Attaches one model's per-sample performance to the lattice and lists its
/// error slices at threshold `threshold`.
///
/// Performance comes from the NDJSON file at `perf_path`, or from the
/// dataset's own column when `perf_path` is null. `rule` is "min", "max",
/// "none" or null for "min".
///
/// # Safety
/// Handles must be live; strings nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sw_analyze(
    lattice: *const SwLattice,
    dataset: *const SwDataset,
    perf_path: *const c_char,
    model_id: *const c_char,
    rule: *const c_char,
    threshold: f64,
    out: *mut *mut SwReport,
) -> SwStatus {
    guard(|| {
        check_out(out)?;
        let lattice = ref_arg(lattice, "lattice")?;
        let model_id = str_arg(model_id, "model_id")?;
        let perf = match opt_str_arg(perf_path, "perf_path")? {
            Some(path) => PerformanceColumn::read_ndjson(BufReader::new(File::open(path)?))?,
            None => PerformanceColumn::from_dataset(&ref_arg(dataset, "dataset")?.inner)?,
        };
        let rule = match opt_str_arg(rule, "rule")?.unwrap_or("min") {
            "none" => None,
            name => Some(
                name.parse::<ParentRule>()
                    .map_err(|e| Failure::new(SwStatus::InvalidArgument, e))?,
            ),
        };
        let mut view = attach_model(Arc::clone(&lattice.inner), model_id, &perf)?;
        if let Some(rule) = rule {
            view = view.postprocess(rule);
        }
        put(
            out,
            SwReport {
                inner: identify_error_slices(&view, threshold)?,
            },
        )
    })
}

/// # Safety
/// `path` must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_report_load(path: *const c_char, out: *mut *mut SwReport) -> SwStatus {
    guard(|| {
        check_out(out)?;
        let path = str_arg(path, "path")?;
        let inner = ErrorSliceReport::read_json(BufReader::new(File::open(path)?))?;
        put(out, SwReport { inner })
    })
}

/// # Safety
/// `report` must be a live handle; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn sw_report_save(report: *const SwReport, path: *const c_char) -> SwStatus {
    guard(|| {
        let report = ref_arg(report, "report")?;
        let path = str_arg(path, "path")?;
        report.inner.write_json(BufWriter::new(File::create(path)?))?;
        Ok(())
    })
}

/// Serialized report; free with [`sw_string_free`].
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_report_to_json(report: *const SwReport, out: *mut *mut c_char) -> SwStatus {
    guard(|| {
        check_out(out)?;
        put_string(out, ref_arg(report, "report")?.inner.to_json())
    })
}

/// Number of error slices, or 0 for null.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sw_report_len(report: *const SwReport) -> usize {
    report.as_ref().map_or(0, |r| r.inner.len())
}

/// Average performance over all samples, or NaN for null.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sw_report_overall(report: *const SwReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.inner.overall_perf)
}

/// Text form (`attr=tag;attr=tag`) of the error slice at `rank` (0 is the
/// worst); free with [`sw_string_free`].
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_report_slice_key(report: *const SwReport, rank: usize, out: *mut *mut c_char) -> SwStatus {
    guard(|| {
        check_out(out)?;
        let report = ref_arg(report, "report")?;
        let slice = report.inner.error_slices.get(rank).ok_or_else(|| {
            Failure::new(
                SwStatus::InvalidArgument,
                format!("rank {rank} out of range ({} error slices)", report.inner.len()),
            )
        })?;
        put_string(out, slice.key.to_string())
    })
}

/// # Safety
/// `report` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sw_report_free(report: *mut SwReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Share of `a`'s top `fraction` error slices found among `b`'s top `fraction`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_overlap(a: *const SwReport, b: *const SwReport, fraction: f64, out: *mut f64) -> SwStatus {
    guard(|| {
        let a = ref_arg(a, "a")?;
        let b = ref_arg(b, "b")?;
        if out.is_null() {
            return Err(Failure::new(SwStatus::NullArgument, "output pointer is null"));
        }
        *out = slice_overlap(&a.inner, &b.inner, fraction)?;
        Ok(())
    })
}
