use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use coba::fixtures::fig1_table_lm;
use coba_ffi::*;

fn open(spec: &str) -> *mut CobaLm {
    let spec = CString::new(spec).unwrap();
    let mut lm = ptr::null_mut();
    assert_eq!(unsafe { coba_lm_open(spec.as_ptr(), &mut lm) }, CobaStatus::Ok, "{}", last_error());
    lm
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(coba_last_error()) }.to_string_lossy().into_owned()
}

fn tokens(r: *const CobaDecodeResult) -> Vec<CobaTokenId> {
    unsafe { std::slice::from_raw_parts(coba_result_tokens(r), coba_result_len(r)) }.to_vec()
}

fn fig1_file(dir: &Path) -> String {
    let path = dir.join("fig1.json");
    std::fs::write(&path, serde_json::to_string(&fig1_table_lm().to_file()).unwrap()).unwrap();
    format!("table:{}", path.display())
}

#[test]
fn table_decode_backtracks() {
    let dir = tempfile::tempdir().unwrap();
    let lm = open(&fig1_file(dir.path()));
    unsafe {
        assert_eq!(coba_lm_vocab_size(lm), 12);
        assert_eq!((coba_lm_sos_id(lm), coba_lm_eos_id(lm)), (0, 1));

        let mut opts = coba_decode_options_default();
        opts.backtrack = false;
        let mut greedy = ptr::null_mut();
        assert_eq!(coba_decode(lm, ptr::null(), 0, &opts, &mut greedy), CobaStatus::Ok);
        assert_eq!(tokens(greedy), [2, 3, 4, 8]);
        assert_eq!(coba_result_event_count(greedy, CobaEventKind::Backtrack), 0);

        let mut coba = ptr::null_mut();
        assert_eq!(coba_decode(lm, ptr::null(), 0, ptr::null(), &mut coba), CobaStatus::Ok);
        assert_eq!(tokens(coba), [2, 3, 5, 6, 7]);
        assert_eq!(coba_result_termination(coba), CobaTermination::Eos);
        assert!(!coba_result_fallback(coba));
        assert_eq!(coba_result_event_count(coba, CobaEventKind::Backtrack), 1);
        assert!(coba_result_steps_used(coba) > coba_result_len(coba));

        let mut json = ptr::null_mut();
        assert_eq!(coba_result_trace_json(coba, &mut json), CobaStatus::Ok);
        let trace: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert!(trace.as_array().is_some_and(|a| !a.is_empty()));
        coba_string_free(json);

        coba_result_free(greedy);
        coba_result_free(coba);
        coba_lm_free(lm);
    }
}

#[test]
fn ngram_model_decodes() {
    let lm = open("ngram:vocab_size=64,memory_tokens=16");
    let ctx: Vec<CobaTokenId> = vec![5, 9, 5, 12, 9, 30, 5, 9];
    unsafe {
        assert_eq!(coba_lm_vocab_size(lm), 64);
        let mut opts = coba_decode_options_default();
        opts.max_len = 20;
        let mut r = ptr::null_mut();
        assert_eq!(coba_decode(lm, ctx.as_ptr(), ctx.len(), &opts, &mut r), CobaStatus::Ok, "{}", last_error());
        let n = coba_result_len(r);
        assert!(n <= 20);
        assert!(tokens(r).iter().all(|&t| (t as usize) < 64));
        assert!(coba_result_steps_used(r) <= 10 * opts.max_len);
        coba_result_free(r);
        coba_lm_free(lm);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut lm = ptr::null_mut();
        assert_eq!(coba_lm_open(ptr::null(), &mut lm), CobaStatus::NullPointer);
        assert!(last_error().contains("spec"));

        let bad = CString::new("nonsense:1").unwrap();
        let status = coba_lm_open(bad.as_ptr(), &mut lm);
        assert_ne!(status, CobaStatus::Ok);
        assert!(lm.is_null());
        assert!(!last_error().is_empty());

        let lm = open("ngram:vocab_size=32,memory_tokens=4");
        let mut r = ptr::null_mut();
        assert_eq!(coba_decode(ptr::null(), ptr::null(), 0, ptr::null(), &mut r), CobaStatus::NullPointer);
        assert_eq!(coba_decode(lm, ptr::null(), 3, ptr::null(), &mut r), CobaStatus::NullPointer);
        assert!(last_error().contains("context"));

        let mut opts = coba_decode_options_default();
        opts.delta = 1.5;
        assert_eq!(coba_decode(lm, ptr::null(), 0, &opts, &mut r), CobaStatus::InvalidArgument);
        let mut opts = coba_decode_options_default();
        opts.min_len = 10;
        opts.max_len = 3;
        assert_eq!(coba_decode(lm, ptr::null(), 0, &opts, &mut r), CobaStatus::InvalidArgument);
        assert!(r.is_null());
        coba_lm_free(lm);

        // Null handles are tolerated by accessors and destructors.
        assert_eq!(coba_result_len(ptr::null()), 0);
        assert!(coba_result_tokens(ptr::null()).is_null());
        coba_result_free(ptr::null_mut());
        coba_lm_free(ptr::null_mut());
        coba_string_free(ptr::null_mut());
    }
}

#[test]
fn metrics() {
    let c: [CobaTokenId; 4] = [1, 2, 3, 4];
    let r: [CobaTokenId; 3] = [2, 4, 9];
    let mut s = CobaRougeL::default();
    unsafe {
        assert_eq!(coba_rouge_l(c.as_ptr(), 4, r.as_ptr(), 3, &mut s), CobaStatus::Ok);
        assert!((s.precision - 0.5).abs() < 1e-12);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.f1 - 4.0 / 7.0).abs() < 1e-12);
        assert_eq!(coba_rouge_l(c.as_ptr(), 0, r.as_ptr(), 3, &mut s), CobaStatus::Domain);

        let (u, v) = ([1.0, 0.0], [0.0, 2.0]);
        let mut d = f64::NAN;
        assert_eq!(coba_cosine_distance(u.as_ptr(), v.as_ptr(), 2, &mut d), CobaStatus::Ok);
        assert!((d - 1.0).abs() < 1e-12);
        assert_eq!(coba_cosine_distance(u.as_ptr(), ptr::null(), 2, &mut d), CobaStatus::NullPointer);
    }
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(coba_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/coba.h");
    assert!(header.exists());
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"coba.h\"\nint main(void) { CobaDecodeOptions o = coba_decode_options_default(); return (int)o.max_len == 0; }\n",
    )
    .unwrap();
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
