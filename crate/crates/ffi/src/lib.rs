//! C ABI for the lexcomp toolkit.
//!
//! Conventions:
//! * Every fallible function returns an `int32_t` status: `LEXCOMP_OK`,
//!   `LEXCOMP_ERR_USAGE` (null/invalid arguments), `LEXCOMP_ERR_DATA`
//!   (missing or malformed files, invalid configuration, undefined
//!   statistics), `LEXCOMP_ERR_NUMERIC` (non-finite values), or
//!   `LEXCOMP_ERR_INTERNAL` (a caught panic — always a bug, please report).
//! * On failure a thread-local message is set; fetch it with
//!   `lexcomp_last_error_message` and release it with `lexcomp_string_free`.
//! * `LexcompModel` is an opaque handle created by `lexcomp_model_load`
//!   and released by `lexcomp_model_free`. Handles are not thread-safe;
//!   share them only behind the caller's own synchronization.
//! * All `char*` inputs are NUL-terminated UTF-8. All returned `char*`
//!   are owned by the caller and must be released with
//!   `lexcomp_string_free` (the pointer returned by `lexcomp_version` is
//!   static and must not be freed).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use lexcomp::corpus::{load_dataset, Dataset, Domain, Instance, Subtask};
use lexcomp::error::Error;
use lexcomp::evaluation::{evaluate, MetricBlock, PredictionSet};
use lexcomp::model::Checkpoint;
use lexcomp::pipeline::{make_synthetic, run_train, RunConfig};

/// Success.
pub const LEXCOMP_OK: i32 = 0;
/// Null pointer, invalid UTF-8, or an argument outside its domain.
pub const LEXCOMP_ERR_USAGE: i32 = 1;
/// Missing or malformed file, or an invalid configuration.
pub const LEXCOMP_ERR_DATA: i32 = 2;
/// Non-finite numbers inside a numeric routine (e.g. a diverged loss).
pub const LEXCOMP_ERR_NUMERIC: i32 = 3;
/// A caught panic; state is unchanged but this is always a bug.
pub const LEXCOMP_ERR_INTERNAL: i32 = 4;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let sanitized: Vec<u8> = msg.bytes().filter(|&b| b != 0).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(sanitized).expect("NUL bytes removed"));
    });
}

fn clear_error() {
    LAST_ERROR.with(|slot| slot.borrow_mut().take());
}

fn code_for(err: &Error) -> i32 {
    // the library's CLI classes map 1:1 onto the FFI status space
    err.exit_code()
}

fn fail(err: Error) -> i32 {
    set_error(&err.to_string());
    code_for(&err)
}

fn usage(msg: &str) -> i32 {
    set_error(msg);
    LEXCOMP_ERR_USAGE
}

/// Runs an entry point body under a panic guard.
fn guarded(f: impl FnOnce() -> i32) -> i32 {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(&format!("internal panic: {msg}"));
            LEXCOMP_ERR_INTERNAL
        }
    }
}

/// # Safety
/// `ptr` must be NUL-terminated when non-null.
unsafe fn str_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, i32> {
    if ptr.is_null() {
        return Err(usage(&format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| usage(&format!("{what} is not valid UTF-8")))
}

unsafe fn path_arg(ptr: *const c_char, what: &str) -> Result<PathBuf, i32> {
    str_arg(ptr, what).map(PathBuf::from)
}

fn subtask_arg(s: &str) -> Result<Subtask, i32> {
    Subtask::parse(s).map_err(|e| usage(&e.to_string()))
}

/// Pointer comes from `CString::into_raw` in this library.
fn give_string(s: String) -> *mut c_char {
    let bytes: Vec<u8> = s.into_bytes().into_iter().filter(|&b| b != 0).collect();
    CString::new(bytes).expect("NUL bytes removed").into_raw()
}

// ---------------------------------------------------------------- types

/// The five evaluation metrics over one prediction/gold pairing.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LexcompMetrics {
    pub pearson: f64,
    pub spearman: f64,
    pub mae: f64,
    pub mse: f64,
    pub r2: f64,
    /// Number of scored instances.
    pub count: u64,
}

impl From<MetricBlock> for LexcompMetrics {
    fn from(b: MetricBlock) -> Self {
        LexcompMetrics {
            pearson: b.pearson,
            spearman: b.spearman,
            mae: b.mae,
            mse: b.mse,
            r2: b.r2,
            count: b.count as u64,
        }
    }
}

/// Opaque checkpoint handle.
pub struct LexcompModel {
    inner: Checkpoint,
}

// ------------------------------------------------------------- strings

/// Toolkit version as a static NUL-terminated string; do not free.
#[no_mangle]
pub extern "C" fn lexcomp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread, or null if the
/// last call succeeded. The caller owns the returned string.
#[no_mangle]
pub extern "C" fn lexcomp_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(msg) => msg.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `ptr` must have been returned by a `lexcomp_*` function and not
/// already freed.
#[no_mangle]
pub unsafe extern "C" fn lexcomp_string_free(ptr: *mut c_char) {
    if !ptr.is_null() {
        drop(CString::from_raw(ptr));
    }
}

// ------------------------------------------------------------- metrics

/// Computes all five metrics over parallel arrays of length `len`.
///
/// # Safety
/// `preds` and `gold` must point to `len` readable doubles; `out` must
/// be a valid destination.
#[no_mangle]
pub unsafe extern "C" fn lexcomp_metrics(
    preds: *const f64,
    gold: *const f64,
    len: usize,
    out: *mut LexcompMetrics,
) -> i32 {
    guarded(|| {
        if preds.is_null() || gold.is_null() || out.is_null() {
            return usage("lexcomp_metrics: null argument");
        }
        if len < 2 {
            return usage("lexcomp_metrics: need at least 2 instances");
        }
        let p = std::slice::from_raw_parts(preds, len);
        let g = std::slice::from_raw_parts(gold, len);
        match MetricBlock::compute(p, g) {
            Ok(block) => {
                *out = block.into();
                LEXCOMP_OK
            }
            Err(e) => fail(e),
        }
    })
}

// -------------------------------------------------------------- models

/// Loads a checkpoint file into a fresh handle.
///
/// # Safety
/// `path` is a NUL-terminated UTF-8 path; `out` must be a valid
/// destination for the handle pointer.
#[no_mangle]
pub unsafe extern "C" fn lexcomp_model_load(
    path: *const c_char,
    out: *mut *mut LexcompModel,
) -> i32 {
    guarded(|| {
        if out.is_null() {
            return usage("lexcomp_model_load: out is null");
        }
        let path = match path_arg(path, "checkpoint path") {
            Ok(p) => p,
            Err(code) => return code,
        };
        match Checkpoint::load(&path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(LexcompModel { inner }));
                LEXCOMP_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a model handle. Null is a no-op.
///
/// # Safety
/// `model` must come from `lexcomp_model_load` and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn lexcomp_model_free(model: *mut LexcompModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Subtask the model was trained for ("single_word" or "mwe"); the
/// caller owns the returned string. Null model gives null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn lexcomp_model_subtask(model: *const LexcompModel) -> *mut c_char {
    if model.is_null() {
        return std::ptr::null_mut();
    }
    give_string((*model).inner.subtask.to_string())
}

/// Scores one target inside one sentence. `domain` is "europarl",
/// "biomed" or "bible". The score lands in [0,1].
///
/// # Safety
/// `model` must be a live handle; strings are NUL-terminated UTF-8;
/// `out_score` must be a valid destination.
#[no_mangle]
pub unsafe extern "C" fn lexcomp_model_predict_one(
    model: *const LexcompModel,
    sentence: *const c_char,
    target: *const c_char,
    domain: *const c_char,
    out_score: *mut f64,
) -> i32 {
    guarded(|| {
        if model.is_null() || out_score.is_null() {
            return usage("lexcomp_model_predict_one: null argument");
        }
        let (sentence, target, domain) = match (
            str_arg(sentence, "sentence"),
            str_arg(target, "target"),
            str_arg(domain, "domain"),
        ) {
            (Ok(s), Ok(t), Ok(d)) => (s, t, d),
            (Err(c), _, _) | (_, Err(c), _) | (_, _, Err(c)) => return c,
        };
        let Some(domain) = Domain::parse(domain) else {
            return usage(&format!("unknown domain '{domain}'"));
        };
        let ckpt = &(*model).inner;
        let instance = Instance {
            id: "ffi".to_string(),
            subtask: ckpt.subtask,
            domain,
            sentence: sentence.to_string(),
            target: target.to_string(),
            gold: None,
        };
        let data = match Dataset::new(ckpt.subtask, vec![instance]) {
            Ok(d) => d,
            Err(e) => return fail(e),
        };
        match ckpt.predict_dataset(&data) {
            Ok(preds) => {
                *out_score = preds.get("ffi").expect("one prediction per instance");
                LEXCOMP_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Predicts a whole TSV dataset and writes an `id,prediction` CSV.
/// `out_rows` (nullable) receives the number of rows written.
///
/// # Safety
/// `model` must be a live handle; paths are NUL-terminated UTF-8;
/// `out_rows` is either null or a valid destination.
#[no_mangle]
pub unsafe extern "C" fn lexcomp_model_predict_file(
    model: *const LexcompModel,
    data_tsv: *const c_char,
    out_csv: *const c_char,
    out_rows: *mut u64,
) -> i32 {
    guarded(|| {
        if model.is_null() {
            return usage("lexcomp_model_predict_file: model is null");
        }
        let (data_path, csv_path) =
            match (path_arg(data_tsv, "data path"), path_arg(out_csv, "output path")) {
                (Ok(d), Ok(c)) => (d, c),
                (Err(code), _) | (_, Err(code)) => return code,
            };
        let ckpt = &(*model).inner;
        let result = load_dataset(&data_path, ckpt.subtask)
            .and_then(|data| ckpt.predict_dataset(&data))
            .and_then(|preds| preds.save_csv(&csv_path).map(|()| preds.len()));
        match result {
            Ok(n) => {
                if !out_rows.is_null() {
                    *out_rows = n as u64;
                }
                LEXCOMP_OK
            }
            Err(e) => fail(e),
        }
    })
}

// ------------------------------------------------------------ pipeline

/// Runs a full training pipeline from a run-config JSON file into
/// `out_dir` (checkpoints, manifest, epoch log). `out_best_pearson`
/// (nullable) receives the best whole-dev Pearson, or NaN when it is
/// undefined for every epoch.
///
/// # Safety
/// Paths are NUL-terminated UTF-8; `out_best_pearson` is either null or
/// a valid destination.
#[no_mangle]
pub unsafe extern "C" fn lexcomp_train(
    config_json: *const c_char,
    out_dir: *const c_char,
    out_best_pearson: *mut f64,
) -> i32 {
    guarded(|| {
        let (cfg_path, run_dir) =
            match (path_arg(config_json, "config path"), path_arg(out_dir, "output directory")) {
                (Ok(c), Ok(o)) => (c, o),
                (Err(code), _) | (_, Err(code)) => return code,
            };
        let outcome = RunConfig::load(&cfg_path).and_then(|cfg| run_train(&cfg, &run_dir));
        match outcome {
            Ok(out) => {
                if !out_best_pearson.is_null() {
                    *out_best_pearson = out.best_dev_pearson.unwrap_or(f64::NAN);
                }
                LEXCOMP_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Generates the synthetic corpus (train/trial/test TSVs plus a
/// frequency table) under `out_dir`.
///
/// # Safety
/// Strings are NUL-terminated UTF-8.
#[no_mangle]
pub unsafe extern "C" fn lexcomp_make_synthetic(
    out_dir: *const c_char,
    seed: u64,
    size: u64,
    subtask: *const c_char,
) -> i32 {
    guarded(|| {
        let dir = match path_arg(out_dir, "output directory") {
            Ok(d) => d,
            Err(code) => return code,
        };
        let subtask = match str_arg(subtask, "subtask").and_then(|s| subtask_arg(s)) {
            Ok(s) => s,
            Err(code) => return code,
        };
        match make_synthetic(&dir, seed, size as usize, subtask) {
            Ok(_) => LEXCOMP_OK,
            Err(e) => fail(e),
        }
    })
}

/// Scores a prediction CSV against a gold TSV; writes the overall
/// metrics into `out`.
///
/// # Safety
/// Paths/strings are NUL-terminated UTF-8; `out` must be a valid
/// destination.
#[no_mangle]
pub unsafe extern "C" fn lexcomp_evaluate_files(
    preds_csv: *const c_char,
    gold_tsv: *const c_char,
    subtask: *const c_char,
    out: *mut LexcompMetrics,
) -> i32 {
    guarded(|| {
        if out.is_null() {
            return usage("lexcomp_evaluate_files: out is null");
        }
        let (preds_path, gold_path) =
            match (path_arg(preds_csv, "predictions path"), path_arg(gold_tsv, "gold path")) {
                (Ok(p), Ok(g)) => (p, g),
                (Err(code), _) | (_, Err(code)) => return code,
            };
        let subtask = match str_arg(subtask, "subtask").and_then(|s| subtask_arg(s)) {
            Ok(s) => s,
            Err(code) => return code,
        };
        let report = PredictionSet::load_csv(&preds_path).and_then(|preds| {
            let gold = load_dataset(&gold_path, subtask)?;
            evaluate(&preds, &gold)
        });
        match report {
            Ok(rep) => {
                *out = rep.overall.into();
                LEXCOMP_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Averages ensemble members described by a spec JSON into a prediction
/// CSV. `data_tsv` may be null when every member is a prediction file.
/// `out_rows` (nullable) receives the number of rows written.
///
/// # Safety
/// Paths/strings are NUL-terminated UTF-8 (or null where documented);
/// `out_rows` is either null or a valid destination.
#[no_mangle]
pub unsafe extern "C" fn lexcomp_ensemble_files(
    spec_json: *const c_char,
    data_tsv: *const c_char,
    subtask: *const c_char,
    out_csv: *const c_char,
    out_rows: *mut u64,
) -> i32 {
    guarded(|| {
        let (spec_path, csv_path) =
            match (path_arg(spec_json, "spec path"), path_arg(out_csv, "output path")) {
                (Ok(s), Ok(c)) => (s, c),
                (Err(code), _) | (_, Err(code)) => return code,
            };
        let subtask = match str_arg(subtask, "subtask").and_then(|s| subtask_arg(s)) {
            Ok(s) => s,
            Err(code) => return code,
        };
        let data = if data_tsv.is_null() {
            None
        } else {
            match path_arg(data_tsv, "data path") {
                Ok(p) => Some(p),
                Err(code) => return code,
            }
        };
        match lexcomp::pipeline::run_ensemble(&spec_path, data.as_deref(), subtask, &csv_path) {
            Ok(n) => {
                if !out_rows.is_null() {
                    *out_rows = n as u64;
                }
                LEXCOMP_OK
            }
            Err(e) => fail(e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use std::path::Path;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    fn last_error() -> String {
        let ptr = lexcomp_last_error_message();
        assert!(!ptr.is_null(), "expected an error message");
        let msg = unsafe { CStr::from_ptr(ptr) }.to_str().unwrap().to_string();
        unsafe { lexcomp_string_free(ptr) };
        msg
    }

    /// Trains a tiny checkpoint and returns (run_dir, data_dir).
    fn trained_fixture(root: &Path) -> (PathBuf, PathBuf) {
        let data_dir = root.join("data");
        make_synthetic(&data_dir, 17, 30, Subtask::SingleWord).unwrap();
        let cfg_path = root.join("cfg.json");
        std::fs::write(
            &cfg_path,
            serde_json::json!({
                "subtask": "single_word",
                "method": "standard",
                "optimizer": {"max_epochs": 1, "batch_size": 8},
                "data": {
                    "train": data_dir.join("train.tsv"),
                    "dev": data_dir.join("trial.tsv")
                }
            })
            .to_string(),
        )
        .unwrap();
        let run_dir = root.join("run");
        let code = unsafe {
            lexcomp_train(
                c(cfg_path.to_str().unwrap()).as_ptr(),
                c(run_dir.to_str().unwrap()).as_ptr(),
                std::ptr::null_mut(),
            )
        };
        assert_eq!(code, LEXCOMP_OK);
        (run_dir, data_dir)
    }

    #[test]
    fn version_is_static_and_nonempty() {
        let ptr = lexcomp_version();
        assert!(!ptr.is_null());
        let v = unsafe { CStr::from_ptr(ptr) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn metrics_match_the_library() {
        let p = [0.1, 0.4, 0.35, 0.8, 0.62];
        let g = [0.2, 0.3, 0.5, 0.7, 0.55];
        let mut out = LexcompMetrics {
            pearson: 0.0,
            spearman: 0.0,
            mae: 0.0,
            mse: 0.0,
            r2: 0.0,
            count: 0,
        };
        let code = unsafe { lexcomp_metrics(p.as_ptr(), g.as_ptr(), p.len(), &mut out) };
        assert_eq!(code, LEXCOMP_OK);
        let expected = MetricBlock::compute(&p, &g).unwrap();
        assert_eq!(out, expected.into());
        assert_eq!(out.count, 5);
        assert!(lexcomp_last_error_message().is_null(), "success left an error behind");
    }

    #[test]
    fn null_arguments_are_usage_errors_with_messages() {
        let mut out = LexcompMetrics {
            pearson: 0.0,
            spearman: 0.0,
            mae: 0.0,
            mse: 0.0,
            r2: 0.0,
            count: 0,
        };
        let code =
            unsafe { lexcomp_metrics(std::ptr::null(), std::ptr::null(), 3, &mut out) };
        assert_eq!(code, LEXCOMP_ERR_USAGE);
        assert!(last_error().contains("null"));

        let code = unsafe { lexcomp_model_load(std::ptr::null(), std::ptr::null_mut()) };
        assert_eq!(code, LEXCOMP_ERR_USAGE);
    }

    #[test]
    fn degenerate_metrics_are_data_errors() {
        // constant predictions leave Pearson undefined — a validation
        // condition, not a non-finite numeric failure
        let p = [0.5, 0.5, 0.5];
        let g = [0.1, 0.2, 0.3];
        let mut out = LexcompMetrics {
            pearson: 0.0,
            spearman: 0.0,
            mae: 0.0,
            mse: 0.0,
            r2: 0.0,
            count: 0,
        };
        let code = unsafe { lexcomp_metrics(p.as_ptr(), g.as_ptr(), 3, &mut out) };
        assert_eq!(code, LEXCOMP_ERR_DATA);
        assert!(last_error().contains("undefined"));
    }

    #[test]
    fn missing_checkpoint_is_a_data_error_naming_the_path() {
        let mut handle: *mut LexcompModel = std::ptr::null_mut();
        let code = unsafe {
            lexcomp_model_load(c("/definitely/not/here.ckpt.json").as_ptr(), &mut handle)
        };
        assert_eq!(code, LEXCOMP_ERR_DATA);
        assert!(handle.is_null());
        assert!(last_error().contains("here.ckpt.json"));
    }

    #[test]
    fn train_load_predict_evaluate_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (run_dir, data_dir) = trained_fixture(dir.path());

        let mut handle: *mut LexcompModel = std::ptr::null_mut();
        let ckpt = run_dir.join("best.ckpt.json");
        let code =
            unsafe { lexcomp_model_load(c(ckpt.to_str().unwrap()).as_ptr(), &mut handle) };
        assert_eq!(code, LEXCOMP_OK);
        assert!(!handle.is_null());

        let subtask_ptr = unsafe { lexcomp_model_subtask(handle) };
        let subtask = unsafe { CStr::from_ptr(subtask_ptr) }.to_str().unwrap().to_string();
        unsafe { lexcomp_string_free(subtask_ptr) };
        assert_eq!(subtask, "single_word");

        let mut score = f64::NAN;
        let code = unsafe {
            lexcomp_model_predict_one(
                handle,
                c("bapo rito nagu lemi").as_ptr(),
                c("rito").as_ptr(),
                c("biomed").as_ptr(),
                &mut score,
            )
        };
        assert_eq!(code, LEXCOMP_OK);
        assert!((0.0..=1.0).contains(&score), "score {score}");

        let bad = unsafe {
            lexcomp_model_predict_one(
                handle,
                c("a b").as_ptr(),
                c("a").as_ptr(),
                c("news").as_ptr(),
                &mut score,
            )
        };
        assert_eq!(bad, LEXCOMP_ERR_USAGE);
        assert!(last_error().contains("news"));

        let trial = data_dir.join("trial.tsv");
        let preds_csv = dir.path().join("preds.csv");
        let mut rows = 0u64;
        let code = unsafe {
            lexcomp_model_predict_file(
                handle,
                c(trial.to_str().unwrap()).as_ptr(),
                c(preds_csv.to_str().unwrap()).as_ptr(),
                &mut rows,
            )
        };
        assert_eq!(code, LEXCOMP_OK);
        assert_eq!(rows, 3);

        let mut metrics = LexcompMetrics {
            pearson: 0.0,
            spearman: 0.0,
            mae: 0.0,
            mse: 0.0,
            r2: 0.0,
            count: 0,
        };
        let code = unsafe {
            lexcomp_evaluate_files(
                c(preds_csv.to_str().unwrap()).as_ptr(),
                c(trial.to_str().unwrap()).as_ptr(),
                c("single_word").as_ptr(),
                &mut metrics,
            )
        };
        assert_eq!(code, LEXCOMP_OK);
        assert_eq!(metrics.count, 3);
        assert!(metrics.mae >= 0.0 && metrics.mse >= 0.0);

        unsafe { lexcomp_model_free(handle) };
    }

    #[test]
    fn ensemble_of_prediction_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        std::fs::write(&a, "id,prediction\nx,0.2\n").unwrap();
        std::fs::write(&b, "id,prediction\nx,0.6\n").unwrap();
        let spec = dir.path().join("spec.json");
        std::fs::write(
            &spec,
            serde_json::json!({"members": [{"predictions": a}, {"predictions": b}]}).to_string(),
        )
        .unwrap();
        let out_csv = dir.path().join("mean.csv");
        let mut rows = 0u64;
        let code = unsafe {
            lexcomp_ensemble_files(
                c(spec.to_str().unwrap()).as_ptr(),
                std::ptr::null(),
                c("single_word").as_ptr(),
                c(out_csv.to_str().unwrap()).as_ptr(),
                &mut rows,
            )
        };
        assert_eq!(code, LEXCOMP_OK);
        assert_eq!(rows, 1);
        let body = std::fs::read_to_string(&out_csv).unwrap();
        assert!(body.contains("x,0.4"), "bad mean: {body}");
    }

    #[test]
    fn synthetic_via_ffi_matches_direct_call() {
        let dir = tempfile::tempdir().unwrap();
        let via_ffi = dir.path().join("ffi");
        let direct = dir.path().join("direct");
        let code = unsafe {
            lexcomp_make_synthetic(
                c(via_ffi.to_str().unwrap()).as_ptr(),
                23,
                30,
                c("mwe").as_ptr(),
            )
        };
        assert_eq!(code, LEXCOMP_OK);
        make_synthetic(&direct, 23, 30, Subtask::Mwe).unwrap();
        for name in ["train.tsv", "trial.tsv", "test.tsv", "freq.tsv"] {
            assert_eq!(
                std::fs::read(via_ffi.join(name)).unwrap(),
                std::fs::read(direct.join(name)).unwrap(),
                "{name} differs"
            );
        }
    }

    #[test]
    fn generated_header_declares_the_surface() {
        let header =
            Path::new(env!("CARGO_MANIFEST_DIR")).join("include/lexcomp.h");
        let text = std::fs::read_to_string(&header).unwrap();
        for needle in [
            "LEXCOMP_OK",
            "LEXCOMP_ERR_USAGE",
            "LEXCOMP_ERR_DATA",
            "LEXCOMP_ERR_NUMERIC",
            "LEXCOMP_ERR_INTERNAL",
            "typedef struct LexcompModel LexcompModel;",
            "LexcompMetrics",
            "lexcomp_model_load",
            "lexcomp_model_predict_one",
            "lexcomp_train",
            "lexcomp_last_error_message",
            "lexcomp_string_free",
        ] {
            assert!(text.contains(needle), "header missing {needle}");
        }
    }
}
