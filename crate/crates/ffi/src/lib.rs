//! C ABI over the coursecorrect library.
//!
//! Conventions:
//! - Every fallible call returns a [`CcStatus`]; on failure a message is
//!   available from [`cc_last_error`] on the same thread.
//! - Strings returned through `char **out` are owned by the caller and must
//!   be released with [`cc_string_free`].
//! - Handles ([`CcTranscript`], [`CcGuidance`]) are opaque and released
//!   with their `_free` function. Passing NULL to a `_free` function is a no-op.
//! - Panics never cross the boundary; they surface as `CC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use coursecorrect::backend::detect;
use coursecorrect::metrics::{self, InstanceMetrics, PriceEntry, PriceTable};
use coursecorrect::prm::{self, GuidanceReport, PrmVariant, Taxonomy};
use coursecorrect::transcript::{self, serialize_context, Transcript};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseError = 4,
    IoError = 5,
    Panic = 6,
}

/// A loaded trajectory.
pub struct CcTranscript {
    inner: Transcript,
}

/// A parsed PRM report together with the variant it was parsed for.
pub struct CcGuidance {
    report: GuidanceReport,
    variant: PrmVariant,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CcStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn set_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn guard(body: impl FnOnce() -> FfiResult<()>) -> CcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CcStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CcStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(CcStatus::NullArgument, format!("{name} is NULL")));
    }
    // SAFETY: caller passes a NUL-terminated string that outlives the call.
    CStr::from_ptr(p).to_str().map_err(|_| Failure(CcStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    // SAFETY: caller passes a valid, writable pointer or NULL.
    p.as_mut().ok_or_else(|| Failure(CcStatus::NullArgument, format!("{name} is NULL")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    // SAFETY: caller passes a live handle from this library or NULL.
    p.as_ref().ok_or_else(|| Failure(CcStatus::NullArgument, format!("{name} is NULL")))
}

fn give_string(out: &mut *mut c_char, s: String) -> FfiResult<()> {
    let c = CString::new(s).map_err(|_| Failure(CcStatus::InvalidArgument, "result contains a NUL byte".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn invalid(e: impl ToString) -> Failure {
    Failure(CcStatus::InvalidArgument, e.to_string())
}

fn parse_err(e: impl ToString) -> Failure {
    Failure(CcStatus::ParseError, e.to_string())
}

/// Message for the last failed call on this thread, or NULL. Owned by the
/// library and valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn cc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: `s` came from CString::into_raw in this library.
        drop(CString::from_raw(s));
    }
}

/// Loads a trajectory file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_transcript_load(path: *const c_char, out: *mut *mut CcTranscript) -> CcStatus {
    guard(|| {
        let path = text(path, "path")?;
        let out = out_ptr(out, "out")?;
        let inner = transcript::load_file(Path::new(path)).map_err(|e| match e {
            transcript::StoreError::Read { .. } => Failure(CcStatus::IoError, e.to_string()),
            other => parse_err(other),
        })?;
        *out = Box::into_raw(Box::new(CcTranscript { inner }));
        Ok(())
    })
}

/// Parses a trajectory from JSON Lines text.
///
/// # Safety
/// `jsonl` must be a NUL-terminated string; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_transcript_parse(jsonl: *const c_char, out: *mut *mut CcTranscript) -> CcStatus {
    guard(|| {
        let jsonl = text(jsonl, "jsonl")?;
        let out = out_ptr(out, "out")?;
        let inner = transcript::load(jsonl.as_bytes()).map_err(parse_err)?;
        *out = Box::into_raw(Box::new(CcTranscript { inner }));
        Ok(())
    })
}

/// # Safety
/// `t` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_transcript_free(t: *mut CcTranscript) {
    if !t.is_null() {
        // SAFETY: `t` came from Box::into_raw in this library.
        drop(Box::from_raw(t));
    }
}

/// Number of steps, or 0 for NULL.
///
/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_transcript_step_count(t: *const CcTranscript) -> usize {
    t.as_ref().map_or(0, |t| t.inner.len())
}

/// Outcome name (`submitted`, `auto_submitted`, ...).
///
/// # Safety
/// `t` must be a live handle; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_transcript_outcome(t: *const CcTranscript, out: *mut *mut c_char) -> CcStatus {
    guard(|| {
        let t = handle(t, "transcript")?;
        let out = out_ptr(out, "out")?;
        let outcome = t.inner.outcome().ok_or_else(|| invalid("transcript has no outcome"))?;
        let name = serde_json::to_value(outcome).map_err(invalid)?;
        give_string(out, name.as_str().unwrap_or_default().to_owned())
    })
}

/// Serialized PRM context for the last `k` steps.
///
/// # Safety
/// `t` must be a live handle; `description` a NUL-terminated string; `out`
/// a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_transcript_window_context(
    t: *const CcTranscript,
    description: *const c_char,
    k: usize,
    out: *mut *mut c_char,
) -> CcStatus {
    guard(|| {
        let t = handle(t, "transcript")?;
        let description = text(description, "description")?;
        let out = out_ptr(out, "out")?;
        let window = t.inner.window(k).map_err(invalid)?;
        give_string(out, serialize_context(description, &window))
    })
}

/// Detector findings for the last `k` steps, as a JSON array.
///
/// # Safety
/// `t` must be a live handle; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_detect_window(t: *const CcTranscript, k: usize, out: *mut *mut c_char) -> CcStatus {
    guard(|| {
        let t = handle(t, "transcript")?;
        let out = out_ptr(out, "out")?;
        let window = t.inner.window(k).map_err(invalid)?;
        give_string(out, serde_json::to_string(&detect(&window)).map_err(invalid)?)
    })
}

/// Dollars per 100 instances for per-instance average token counts.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_cost_per_100(
    prompt_tokens: u64,
    completion_tokens: u64,
    input_per_mtok: f64,
    output_per_mtok: f64,
    out: *mut f64,
) -> CcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let price = PriceEntry::new(input_per_mtok, output_per_mtok);
        let usage = coursecorrect::TokenUsage::new(prompt_tokens, completion_tokens);
        *out = metrics::cost_per_100(usage, &price).map_err(invalid)?.to_f64();
        Ok(())
    })
}

/// Whether the supervisor runs after step `t` with interval `n`.
#[no_mangle]
pub extern "C" fn cc_should_invoke(t: usize, n: usize) -> bool {
    prm::should_invoke(t, n)
}

/// PRM prompt for a variant name (`S`, `C`, ..., `DR`) and a serialized
/// context, using the bundled taxonomy.
///
/// # Safety
/// `variant` and `context` must be NUL-terminated strings; `out` a writable
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_build_prompt(variant: *const c_char, context: *const c_char, out: *mut *mut c_char) -> CcStatus {
    guard(|| {
        let variant: PrmVariant = text(variant, "variant")?.parse().map_err(invalid)?;
        let context = text(context, "context")?;
        let out = out_ptr(out, "out")?;
        give_string(out, prm::build_prompt(&variant, &Taxonomy::default(), context))
    })
}

/// Parses raw PRM output for a variant.
///
/// # Safety
/// `raw` and `variant` must be NUL-terminated strings; `out` a writable
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_guidance_parse(raw: *const c_char, variant: *const c_char, out: *mut *mut CcGuidance) -> CcStatus {
    guard(|| {
        let raw = text(raw, "raw")?;
        let variant: PrmVariant = text(variant, "variant")?.parse().map_err(invalid)?;
        let out = out_ptr(out, "out")?;
        let report = prm::parse_guidance(raw, &variant, &Taxonomy::default()).map_err(parse_err)?;
        *out = Box::into_raw(Box::new(CcGuidance { report, variant }));
        Ok(())
    })
}

/// The injection text the policy would receive.
///
/// # Safety
/// `g` must be a live handle; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_guidance_project(g: *const CcGuidance, out: *mut *mut c_char) -> CcStatus {
    guard(|| {
        let g = handle(g, "guidance")?;
        let out = out_ptr(out, "out")?;
        give_string(out, prm::project_for_policy(&g.report, &g.variant))
    })
}

/// The parsed report as JSON.
///
/// # Safety
/// `g` must be a live handle; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_guidance_to_json(g: *const CcGuidance, out: *mut *mut c_char) -> CcStatus {
    guard(|| {
        let g = handle(g, "guidance")?;
        let out = out_ptr(out, "out")?;
        give_string(out, serde_json::to_string(&g.report).map_err(invalid)?)
    })
}

/// # Safety
/// `g` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_guidance_free(g: *mut CcGuidance) {
    if !g.is_null() {
        // SAFETY: `g` came from Box::into_raw in this library.
        drop(Box::from_raw(g));
    }
}

/// Aggregates results (one JSON object per line) into run metrics JSON.
/// `price_table_json` may be NULL for the bundled prices.
///
/// # Safety
/// `results_jsonl` must be a NUL-terminated string, `price_table_json` NULL
/// or one; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_metrics_aggregate_json(
    results_jsonl: *const c_char,
    price_table_json: *const c_char,
    out: *mut *mut c_char,
) -> CcStatus {
    guard(|| {
        let results = text(results_jsonl, "results_jsonl")?;
        let prices = if price_table_json.is_null() {
            PriceTable::default()
        } else {
            PriceTable::from_json(text(price_table_json, "price_table_json")?).map_err(parse_err)?
        };
        let out = out_ptr(out, "out")?;
        let rows = results
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str::<InstanceMetrics>(l).map_err(|e| parse_err(format!("line {}: {e}", i + 1))))
            .collect::<FfiResult<Vec<_>>>()?;
        let m = metrics::aggregate(&rows, &prices).map_err(invalid)?;
        give_string(out, serde_json::to_string(&m).map_err(invalid)?)
    })
}
