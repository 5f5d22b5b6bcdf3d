//! C ABI over the anchorsieve library: opaque handles, integer status
//! codes, and a thread-local last-error message. The header is generated by
//! cbindgen into `include/anchorsieve.h`.
//!
//! Ownership rules: every `*_load`/`*_build` hands back a handle the caller
//! must release with the matching `*_free`; buffers are always allocated by
//! the caller and filled by the library.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use anchorsieve::config;
use anchorsieve::embed::{self, EmbeddingMatrix};
use anchorsieve::error::Error;
use anchorsieve::index::{brute_force_topk, build_index, IndexParams, IvfIndex};
use anchorsieve::pipeline;
use anchorsieve::report;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsvStatus {
    AsvOk = 0,
    /// Filesystem or network I/O failed.
    AsvErrIo = 1,
    /// A file exists but is not a valid artifact (magic, version, layout).
    AsvErrFormat = 2,
    /// Invalid argument or input data.
    AsvErrInput = 3,
    /// Numeric preconditions violated (zero vectors, too few samples).
    AsvErrMath = 4,
    /// Configuration file problem.
    AsvErrConfig = 5,
    /// A null pointer was passed where data was required.
    AsvErrNull = 6,
    /// The library panicked; state may be inconsistent.
    AsvErrPanic = 7,
}

/// Opaque embedding matrix handle.
pub struct AsvMatrix(EmbeddingMatrix);

/// Opaque index handle.
pub struct AsvIndex(IvfIndex);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> AsvStatus {
    match err {
        Error::Io { .. }
        | Error::Unreachable { .. }
        | Error::HttpStatus { .. }
        | Error::TooLarge { .. } => AsvStatus::AsvErrIo,
        Error::BadMagic { .. }
        | Error::VersionUnsupported { .. }
        | Error::TruncatedFile { .. }
        | Error::UnknownFormat
        | Error::CorruptHeader(_)
        | Error::Png(_)
        | Error::Csv(_) => AsvStatus::AsvErrFormat,
        Error::ZeroVector
        | Error::NonFiniteValue { .. }
        | Error::TooFewSamples { .. }
        | Error::TooFewPoints { .. } => AsvStatus::AsvErrMath,
        Error::ConfigParse { .. } | Error::UnknownKey(_) | Error::MissingRequired(_) => {
            AsvStatus::AsvErrConfig
        }
        _ => AsvStatus::AsvErrInput,
    }
}

fn fail(err: Error) -> AsvStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

fn guarded(f: impl FnOnce() -> AsvStatus) -> AsvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("panic inside anchorsieve");
            AsvStatus::AsvErrPanic
        }
    }
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, AsvStatus> {
    if ptr.is_null() {
        set_error("null path");
        return Err(AsvStatus::AsvErrNull);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(AsvStatus::AsvErrInput)
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn asv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the last error message for this thread into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null (length query).
#[no_mangle]
pub unsafe extern "C" fn asv_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Load an embedding file into a new matrix handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn asv_matrix_load(
    path: *const c_char,
    out: *mut *mut AsvMatrix,
) -> AsvStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return AsvStatus::AsvErrNull;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match embed::load_embeddings(&path) {
            Ok(matrix) => {
                *out = Box::into_raw(Box::new(AsvMatrix(matrix)));
                AsvStatus::AsvOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Save a matrix to an embedding file.
///
/// # Safety
/// `matrix` must be a live handle from this library; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn asv_matrix_save(
    matrix: *const AsvMatrix,
    path: *const c_char,
) -> AsvStatus {
    guarded(|| {
        let Some(matrix) = matrix.as_ref() else {
            set_error("null matrix");
            return AsvStatus::AsvErrNull;
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match embed::save_embeddings(&matrix.0, &path) {
            Ok(()) => AsvStatus::AsvOk,
            Err(e) => fail(e),
        }
    })
}

/// Release a matrix handle. Null is a no-op.
///
/// # Safety
/// `matrix` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn asv_matrix_free(matrix: *mut AsvMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Row count of a matrix; 0 for null.
///
/// # Safety
/// `matrix` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn asv_matrix_count(matrix: *const AsvMatrix) -> usize {
    matrix.as_ref().map(|m| m.0.count()).unwrap_or(0)
}

/// Dimension of a matrix; 0 for null.
///
/// # Safety
/// `matrix` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn asv_matrix_dim(matrix: *const AsvMatrix) -> usize {
    matrix.as_ref().map(|m| m.0.dim()).unwrap_or(0)
}

/// Copy row `row` into `buf` (which must hold `dim` floats).
///
/// # Safety
/// `matrix` live handle; `buf` points to at least `dim` writable floats.
#[no_mangle]
pub unsafe extern "C" fn asv_matrix_row(
    matrix: *const AsvMatrix,
    row: usize,
    buf: *mut f32,
) -> AsvStatus {
    guarded(|| {
        let Some(matrix) = matrix.as_ref() else {
            set_error("null matrix");
            return AsvStatus::AsvErrNull;
        };
        if buf.is_null() {
            set_error("null buffer");
            return AsvStatus::AsvErrNull;
        }
        if row >= matrix.0.count() {
            set_error("row out of range");
            return AsvStatus::AsvErrInput;
        }
        let data = matrix.0.row(row);
        std::ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        AsvStatus::AsvOk
    })
}

/// Unit-normalize `len` floats in place.
///
/// # Safety
/// `v` must point to `len` readable and writable floats.
#[no_mangle]
pub unsafe extern "C" fn asv_l2_normalize(v: *mut f32, len: usize) -> AsvStatus {
    guarded(|| {
        if v.is_null() {
            set_error("null vector");
            return AsvStatus::AsvErrNull;
        }
        let slice = std::slice::from_raw_parts_mut(v, len);
        match embed::l2_normalize_in_place(slice) {
            Ok(()) => AsvStatus::AsvOk,
            Err(e) => fail(e),
        }
    })
}

/// Cosine similarity of two unit vectors of equal length.
///
/// # Safety
/// `a` and `b` point to `len` readable floats; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn asv_cosine_sim(
    a: *const f32,
    b: *const f32,
    len: usize,
    out: *mut f32,
) -> AsvStatus {
    guarded(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            set_error("null argument");
            return AsvStatus::AsvErrNull;
        }
        let a = std::slice::from_raw_parts(a, len);
        let b = std::slice::from_raw_parts(b, len);
        match embed::cosine_sim(a, b) {
            Ok(sim) => {
                *out = sim;
                AsvStatus::AsvOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Build an IVF index over a matrix. `nlist`, `nprobe`, `m`, and
/// `kmeans_max_iter` of 0 pick the desk-scale defaults.
///
/// # Safety
/// `matrix` live handle; `out` valid pointer.
#[no_mangle]
pub unsafe extern "C" fn asv_index_build(
    matrix: *const AsvMatrix,
    nlist: usize,
    nprobe: usize,
    pq_enabled: bool,
    m: usize,
    seed: u64,
    kmeans_max_iter: usize,
    out: *mut *mut AsvIndex,
) -> AsvStatus {
    guarded(|| {
        let Some(matrix) = matrix.as_ref() else {
            set_error("null matrix");
            return AsvStatus::AsvErrNull;
        };
        if out.is_null() {
            set_error("null out pointer");
            return AsvStatus::AsvErrNull;
        }
        let defaults = IndexParams::desk_scale(matrix.0.count(), matrix.0.dim(), pq_enabled, seed);
        let nlist = if nlist == 0 { defaults.nlist } else { nlist };
        let params = IndexParams {
            nlist,
            nprobe: if nprobe == 0 {
                (nlist / 8).max(1)
            } else {
                nprobe
            },
            pq_enabled,
            m: if m == 0 { defaults.m } else { m },
            bits: 8,
            seed,
            kmeans_max_iter: if kmeans_max_iter == 0 {
                25
            } else {
                kmeans_max_iter
            },
        };
        match build_index(&matrix.0, &params) {
            Ok(index) => {
                *out = Box::into_raw(Box::new(AsvIndex(index)));
                AsvStatus::AsvOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Save an index to a file.
///
/// # Safety
/// `index` live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn asv_index_save(index: *const AsvIndex, path: *const c_char) -> AsvStatus {
    guarded(|| {
        let Some(index) = index.as_ref() else {
            set_error("null index");
            return AsvStatus::AsvErrNull;
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match index.0.save(&path) {
            Ok(()) => AsvStatus::AsvOk,
            Err(e) => fail(e),
        }
    })
}

/// Load an index file into a new handle.
///
/// # Safety
/// `path` NUL-terminated; `out` valid pointer.
#[no_mangle]
pub unsafe extern "C" fn asv_index_load(path: *const c_char, out: *mut *mut AsvIndex) -> AsvStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return AsvStatus::AsvErrNull;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match IvfIndex::load(&path) {
            Ok(index) => {
                *out = Box::into_raw(Box::new(AsvIndex(index)));
                AsvStatus::AsvOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Release an index handle. Null is a no-op.
///
/// # Safety
/// `index` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn asv_index_free(index: *mut AsvIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Indexed vector count; 0 for null.
///
/// # Safety
/// `index` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn asv_index_count(index: *const AsvIndex) -> usize {
    index.as_ref().map(|i| i.0.count()).unwrap_or(0)
}

/// Query the index. `ids` and `similarities` must hold `k` entries each;
/// `*out_len` receives the number actually written (fewer than `k` only
/// when fewer candidates were scanned). `nprobe` of 0 uses the stored value.
///
/// # Safety
/// Buffers must be writable for `k` entries; `query` readable for `dim`.
#[no_mangle]
pub unsafe extern "C" fn asv_index_query(
    index: *const AsvIndex,
    query: *const f32,
    dim: usize,
    k: usize,
    nprobe: usize,
    ids: *mut u64,
    similarities: *mut f32,
    out_len: *mut usize,
) -> AsvStatus {
    guarded(|| {
        let Some(index) = index.as_ref() else {
            set_error("null index");
            return AsvStatus::AsvErrNull;
        };
        if query.is_null() || ids.is_null() || similarities.is_null() || out_len.is_null() {
            set_error("null argument");
            return AsvStatus::AsvErrNull;
        }
        let q = std::slice::from_raw_parts(query, dim);
        let result = if nprobe == 0 {
            index.0.query(q, k)
        } else {
            index.0.query_with_nprobe(q, k, nprobe)
        };
        match result {
            Ok(hits) => {
                for (i, hit) in hits.iter().enumerate() {
                    *ids.add(i) = hit.record_id;
                    *similarities.add(i) = hit.fast_similarity;
                }
                *out_len = hits.len();
                AsvStatus::AsvOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Exact top-k scan over a matrix; the oracle the index is judged against.
///
/// # Safety
/// Same buffer contract as `asv_index_query`.
#[no_mangle]
pub unsafe extern "C" fn asv_brute_force_topk(
    matrix: *const AsvMatrix,
    query: *const f32,
    dim: usize,
    k: usize,
    ids: *mut u64,
    similarities: *mut f32,
    out_len: *mut usize,
) -> AsvStatus {
    guarded(|| {
        let Some(matrix) = matrix.as_ref() else {
            set_error("null matrix");
            return AsvStatus::AsvErrNull;
        };
        if query.is_null() || ids.is_null() || similarities.is_null() || out_len.is_null() {
            set_error("null argument");
            return AsvStatus::AsvErrNull;
        }
        let q = std::slice::from_raw_parts(query, dim);
        match brute_force_topk(&matrix.0, q, k) {
            Ok(hits) => {
                for (i, hit) in hits.iter().enumerate() {
                    *ids.add(i) = hit.record_id;
                    *similarities.add(i) = hit.fast_similarity;
                }
                *out_len = hits.len();
                AsvStatus::AsvOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Run the full extraction pipeline from a config file, writing
/// `manifest.csv` and `stats.txt` into the config's output directory.
///
/// # Safety
/// `config_path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn asv_run_pipeline(config_path: *const c_char) -> AsvStatus {
    guarded(|| {
        let path = match path_arg(config_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let run = || -> Result<(), Error> {
            let (cfg, _warnings) = config::parse_config(&path)?;
            cfg.validate()?;
            std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
            let output = pipeline::run_pipeline(&cfg)?;
            let rows = pipeline::compose_manifest(&output, cfg.keep_dropped);
            pipeline::write_manifest(&rows, cfg.output_dir.join("manifest.csv"))?;
            report::write_stats_txt(
                &rows,
                Some(&output.stats),
                output.stats.anchors_total,
                20,
                cfg.output_dir.join("stats.txt"),
            )
        };
        match run() {
            Ok(()) => AsvStatus::AsvOk,
            Err(e) => fail(e),
        }
    })
}
