//! C interface to the decoder.
//!
//! Every fallible function returns a [`CobaStatus`]; on failure the message
//! is available from [`coba_last_error`] on the same thread. Handles are
//! opaque and owned by the caller until passed to the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::Arc;

use coba::decode::{self, baseline_decode, CadConfig, DecodeConfig, DecodeResult, EventKind, Strategy, Termination};
use coba::detect::DetectorConfig;
use coba::harness::LmSpec;
use coba::lm::{LmProvider, RemoteOptions};
use coba::types::{cosine_distance, TokenSeq};
use coba::{Error, LmError};

/// A token id.
pub type CobaTokenId = u32;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CobaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Parse = 4,
    Io = 5,
    LmTransport = 6,
    LmProtocol = 7,
    LmTimeout = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CobaStrategy {
    Greedy = 0,
    Nucleus = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CobaTermination {
    Eos = 0,
    MaxLen = 1,
    Fallback = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CobaEventKind {
    Forward = 0,
    Backtrack = 1,
    ForcedRootAccept = 2,
    FallbackTriggered = 3,
    Eos = 4,
    MaxLenStop = 5,
}

/// Decoder settings. Start from [`coba_decode_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CobaDecodeOptions {
    pub strategy: CobaStrategy,
    pub top_p: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub budget_multiplier: usize,
    pub seed: u64,
    /// Backtrack with the detectors below; otherwise plain greedy or nucleus.
    pub backtrack: bool,
    pub delta: f64,
    pub use_phi: bool,
    pub phi: f64,
    pub use_cad: bool,
    pub alpha: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CobaRougeL {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// A language model.
pub struct CobaLm(Arc<dyn LmProvider>);

/// The outcome of one decode.
pub struct CobaDecodeResult(DecodeResult);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CobaStatus {
    match e {
        Error::Contract(_) => CobaStatus::InvalidArgument,
        Error::Domain(_) => CobaStatus::Domain,
        Error::Parse(_) => CobaStatus::Parse,
        Error::Io(_) => CobaStatus::Io,
        Error::Lm(LmError::Transport(_)) => CobaStatus::LmTransport,
        Error::Lm(LmError::Protocol(_)) => CobaStatus::LmProtocol,
        Error::Lm(LmError::Timeout(_)) => CobaStatus::LmTimeout,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (CobaStatus, String)>) -> CobaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CobaStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CobaStatus::Panic
        }
    }
}

fn fail(e: Error) -> (CobaStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (CobaStatus, String) {
    (CobaStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or point to `len` readable elements.
unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (CobaStatus, String)> {
    match (p.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(null(what)),
        (false, _) => Ok(slice::from_raw_parts(p, len)),
    }
}

/// Message for the most recent failure on this thread. Valid until the next
/// call into this library from the same thread.
#[no_mangle]
pub extern "C" fn coba_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn coba_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn coba_decode_options_default() -> CobaDecodeOptions {
    let d = DecodeConfig::default();
    let det = DetectorConfig::default();
    CobaDecodeOptions {
        strategy: CobaStrategy::Greedy,
        top_p: d.top_p,
        min_len: d.min_len,
        max_len: d.max_len,
        budget_multiplier: d.budget_multiplier,
        seed: d.seed,
        backtrack: true,
        delta: det.delta,
        use_phi: false,
        phi: 0.5,
        use_cad: false,
        alpha: CadConfig::default().alpha,
    }
}

/// Opens a model from a spec string: `table:PATH`, `ngram:k=v,...`,
/// `ngram:PATH.json` or `remote:URL`.
///
/// # Safety
/// `spec` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn coba_lm_open(spec: *const c_char, out: *mut *mut CobaLm) -> CobaStatus {
    guard(|| {
        if spec.is_null() {
            return Err(null("spec"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let spec = CStr::from_ptr(spec)
            .to_str()
            .map_err(|_| (CobaStatus::Parse, "spec is not UTF-8".to_string()))?;
        let lm = LmSpec::parse(spec)
            .and_then(|s| s.open(&RemoteOptions::default()))
            .map_err(fail)?;
        *out = Box::into_raw(Box::new(CobaLm(lm)));
        Ok(())
    })
}

/// # Safety
/// `lm` must be null or a handle from [`coba_lm_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coba_lm_free(lm: *mut CobaLm) {
    if !lm.is_null() {
        drop(Box::from_raw(lm));
    }
}

/// Vocabulary size, or 0 for a null handle.
///
/// # Safety
/// `lm` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coba_lm_vocab_size(lm: *const CobaLm) -> usize {
    lm.as_ref().map_or(0, |l| l.0.vocabulary().size())
}

/// # Safety
/// `lm` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coba_lm_sos_id(lm: *const CobaLm) -> CobaTokenId {
    lm.as_ref().map_or(0, |l| l.0.vocabulary().sos_id())
}

/// # Safety
/// `lm` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coba_lm_eos_id(lm: *const CobaLm) -> CobaTokenId {
    lm.as_ref().map_or(0, |l| l.0.vocabulary().eos_id())
}

fn decode_config(o: &CobaDecodeOptions) -> Result<DecodeConfig, Error> {
    let coba = if o.backtrack {
        Some(DetectorConfig::new(o.delta, o.use_phi.then_some(o.phi))?)
    } else {
        None
    };
    let cfg = DecodeConfig {
        strategy: match o.strategy {
            CobaStrategy::Greedy => Strategy::Greedy,
            CobaStrategy::Nucleus => Strategy::Nucleus,
        },
        top_p: o.top_p,
        cad: o.use_cad.then_some(CadConfig { alpha: o.alpha }),
        coba,
        min_len: o.min_len,
        max_len: o.max_len,
        budget_multiplier: o.budget_multiplier,
        seed: o.seed,
        stream: 0,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Decodes a summary of `context`. `options` may be null for the defaults.
///
/// # Safety
/// `lm` must be a live handle, `context` must point to `context_len` ids
/// (or be null when `context_len` is 0), and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn coba_decode(
    lm: *const CobaLm,
    context: *const CobaTokenId,
    context_len: usize,
    options: *const CobaDecodeOptions,
    out: *mut *mut CobaDecodeResult,
) -> CobaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let lm = lm.as_ref().ok_or_else(|| null("lm"))?;
        let ctx = TokenSeq::from(slice_arg(context, context_len, "context")?);
        let opts = options.as_ref().copied().unwrap_or_else(|| coba_decode_options_default());
        let cfg = decode_config(&opts).map_err(fail)?;
        let result = if cfg.coba.is_some() {
            decode::coba_decode(lm.0.as_ref(), &ctx, &cfg)
        } else {
            baseline_decode(lm.0.as_ref(), &ctx, &cfg)
        }
        .map_err(fail)?;
        *out = Box::into_raw(Box::new(CobaDecodeResult(result)));
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a handle from [`coba_decode`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coba_result_free(result: *mut CobaDecodeResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Number of generated tokens (EOS excluded).
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coba_result_len(result: *const CobaDecodeResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.output.len())
}

/// Generated tokens; valid while `result` is alive. Null for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coba_result_tokens(result: *const CobaDecodeResult) -> *const CobaTokenId {
    result.as_ref().map_or(ptr::null(), |r| r.0.output.ids().as_ptr())
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coba_result_steps_used(result: *const CobaDecodeResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.steps_used)
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coba_result_fallback(result: *const CobaDecodeResult) -> bool {
    result.as_ref().is_some_and(|r| r.0.fallback)
}

/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn coba_result_termination(result: *const CobaDecodeResult) -> CobaTermination {
    match result.as_ref().map(|r| r.0.termination) {
        Some(Termination::Eos) | None => CobaTermination::Eos,
        Some(Termination::MaxLen) => CobaTermination::MaxLen,
        Some(Termination::Fallback) => CobaTermination::Fallback,
    }
}

/// Number of trace events of one kind.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coba_result_event_count(result: *const CobaDecodeResult, kind: CobaEventKind) -> usize {
    let kind = match kind {
        CobaEventKind::Forward => EventKind::Forward,
        CobaEventKind::Backtrack => EventKind::Backtrack,
        CobaEventKind::ForcedRootAccept => EventKind::ForcedRootAccept,
        CobaEventKind::FallbackTriggered => EventKind::FallbackTriggered,
        CobaEventKind::Eos => EventKind::Eos,
        CobaEventKind::MaxLenStop => EventKind::MaxLenStop,
    };
    result.as_ref().map_or(0, |r| r.0.count(kind))
}

/// The trace as a JSON array; free with [`coba_string_free`].
///
/// # Safety
/// `result` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn coba_result_trace_json(result: *const CobaDecodeResult, out: *mut *mut c_char) -> CobaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        let json = serde_json::to_string(&r.0.trace).map_err(|e| fail(e.into()))?;
        *out = CString::new(json).map_err(|e| (CobaStatus::Domain, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn coba_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// ROUGE-L of `candidate` against `reference`; both must be non-empty.
///
/// # Safety
/// Each pointer must reference the stated number of ids; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn coba_rouge_l(
    candidate: *const CobaTokenId,
    candidate_len: usize,
    reference: *const CobaTokenId,
    reference_len: usize,
    out: *mut CobaRougeL,
) -> CobaStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let c = TokenSeq::from(slice_arg(candidate, candidate_len, "candidate")?);
        let r = TokenSeq::from(slice_arg(reference, reference_len, "reference")?);
        let s = coba::eval::rouge_l(&c, &r).map_err(fail)?;
        *out = CobaRougeL { precision: s.precision, recall: s.recall, f1: s.f1 };
        Ok(())
    })
}

/// Cosine distance `1 - cos(u, v)` of two `dim`-dimensional vectors.
///
/// # Safety
/// `u` and `v` must point to `dim` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn coba_cosine_distance(u: *const f64, v: *const f64, dim: usize, out: *mut f64) -> CobaStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (u, v) = (slice_arg(u, dim, "u")?, slice_arg(v, dim, "v")?);
        *out = cosine_distance(u, v).map_err(fail)?;
        Ok(())
    })
}
