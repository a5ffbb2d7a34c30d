//! The `tl_*` C API, exercised in-process against the core library as the
//! reference implementation.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use textlens::adapters::TraceProvider;
use textlens::analysis::{attention_cv, tendency_profile, HallucinationLocus};
use textlens::glc::{decode_with_correction, greedy_decode, select_grounded_layer, CorrectionConfig};
use textlens::toy::{ToyModel, ToyParams};
use textlens::trace::{boxes_to_tokens, rect_box};
use textlens::zoomtext::{glimpse, refocus, selection_iou};
use textlens::MultimodalTrace;
use textlens_ffi::*;

const PARAMS: &str =
    r#"{"layers":3,"heads":2,"d_model":16,"vocab":300,"n_image_tokens":9,"seed":11}"#;
const PROMPT: [u32; 5] = [65, 66, 67, 32, 63];

fn native_trace() -> MultimodalTrace {
    let mut model = ToyModel::new(ToyParams::from_json(PARAMS).unwrap()).unwrap();
    model.prefill(&PROMPT).unwrap()
}

fn ffi_trace() -> *mut TlTrace {
    let params = CString::new(PARAMS).unwrap();
    let mut trace: *mut TlTrace = ptr::null_mut();
    let st =
        unsafe { tl_toy_trace(params.as_ptr(), PROMPT.as_ptr(), PROMPT.len(), &mut trace) };
    assert_eq!(st, TlStatus::Ok, "{}", last_error());
    assert!(!trace.is_null());
    trace
}

fn last_error() -> String {
    let ptr = tl_last_error_message();
    if ptr.is_null() {
        "(no message)".into()
    } else {
        unsafe { CStr::from_ptr(ptr) }.to_string_lossy().into_owned()
    }
}

fn take_string(ptr: *mut c_char) -> String {
    assert!(!ptr.is_null());
    let s = unsafe { CStr::from_ptr(ptr) }.to_str().unwrap().to_string();
    unsafe { tl_string_free(ptr) };
    s
}

#[test]
fn version_and_schema_are_static_strings() {
    let v = unsafe { CStr::from_ptr(tl_version()) }.to_str().unwrap();
    assert!(!v.is_empty() && v.chars().next().unwrap().is_ascii_digit(), "{v}");
    let schema = unsafe { CStr::from_ptr(tl_manifest_schema()) }.to_str().unwrap();
    assert_eq!(schema, textlens::evalbench::MANIFEST_SCHEMA);
    let json: serde_json::Value = serde_json::from_str(schema).unwrap();
    assert_eq!(json["title"], "BenchmarkSample");
}

#[test]
fn toy_trace_matches_native_construction() {
    let native = native_trace();
    let trace = ffi_trace();
    unsafe {
        let (mut layers, mut seq, mut d_model, mut vocab) = (0usize, 0usize, 0usize, 0usize);
        assert_eq!(
            tl_trace_dims(trace, &mut layers, &mut seq, &mut d_model, &mut vocab),
            TlStatus::Ok
        );
        assert_eq!(
            (layers, seq, d_model, vocab),
            (native.n_layers(), native.seq_len(), native.d_model(), native.output_head().vocab)
        );

        let mut hex: *mut c_char = ptr::null_mut();
        assert_eq!(tl_trace_digest_hex(trace, &mut hex), TlStatus::Ok);
        assert_eq!(take_string(hex), native.digest_hex());

        let mut id: *mut c_char = ptr::null_mut();
        assert_eq!(tl_trace_model_id(trace, &mut id), TlStatus::Ok);
        assert_eq!(take_string(id), native.model_id());

        let mut layout_json: *mut c_char = ptr::null_mut();
        assert_eq!(tl_trace_layout_json(trace, &mut layout_json), TlStatus::Ok);
        let got: serde_json::Value = serde_json::from_str(&take_string(layout_json)).unwrap();
        assert_eq!(got, serde_json::to_value(native.layout()).unwrap());

        let mut ids = vec![0u32; seq];
        assert_eq!(tl_trace_token_ids(trace, ids.as_mut_ptr(), seq), TlStatus::Ok);
        assert_eq!(ids, native.token_ids());

        // Wrong buffer size is rejected before any write.
        assert_eq!(
            tl_trace_token_ids(trace, ids.as_mut_ptr(), seq + 1),
            TlStatus::SizeMismatch
        );
        tl_trace_free(trace);
    }
}

#[test]
fn trace_round_trips_through_archive() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace");
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let trace = ffi_trace();
    unsafe {
        assert_eq!(tl_trace_write(trace, cpath.as_ptr()), TlStatus::Ok, "{}", last_error());
        let mut reread: *mut TlTrace = ptr::null_mut();
        assert_eq!(tl_trace_read(cpath.as_ptr(), &mut reread), TlStatus::Ok, "{}", last_error());

        let mut a: *mut c_char = ptr::null_mut();
        let mut b: *mut c_char = ptr::null_mut();
        assert_eq!(tl_trace_digest_hex(trace, &mut a), TlStatus::Ok);
        assert_eq!(tl_trace_digest_hex(reread, &mut b), TlStatus::Ok);
        assert_eq!(take_string(a), take_string(b));

        tl_trace_free(reread);
        tl_trace_free(trace);
    }
}

#[test]
fn read_of_missing_archive_reports_io_error() {
    let cpath = CString::new("/nonexistent/archive").unwrap();
    let mut trace: *mut TlTrace = ptr::null_mut();
    let st = unsafe { tl_trace_read(cpath.as_ptr(), &mut trace) };
    assert_eq!(st, TlStatus::IoError);
    assert!(trace.is_null());
    assert!(last_error().contains("manifest"), "{}", last_error());
}

#[test]
fn null_arguments_are_rejected_with_named_message() {
    unsafe {
        let mut out: *mut TlTrace = ptr::null_mut();
        assert_eq!(tl_trace_read(ptr::null(), &mut out), TlStatus::NullArgument);
        assert!(last_error().contains("path"), "{}", last_error());

        let mut hex: *mut c_char = ptr::null_mut();
        assert_eq!(tl_trace_digest_hex(ptr::null(), &mut hex), TlStatus::NullArgument);
        assert!(last_error().contains("trace"), "{}", last_error());

        // Frees tolerate null.
        tl_trace_free(ptr::null_mut());
        tl_selection_free(ptr::null_mut());
        tl_adapter_free(ptr::null_mut());
        tl_string_free(ptr::null_mut());
    }
}

#[test]
fn invalid_toy_params_are_invalid_argument() {
    let params = CString::new("{not json").unwrap();
    let mut trace: *mut TlTrace = ptr::null_mut();
    let st = unsafe { tl_toy_trace(params.as_ptr(), PROMPT.as_ptr(), PROMPT.len(), &mut trace) };
    assert_eq!(st, TlStatus::InvalidArgument);
    assert!(last_error().contains("JSON"), "{}", last_error());
}

#[test]
fn boxes_selection_matches_library_geometry() {
    let native = native_trace();
    let trace = ffi_trace();
    // image is 3x3 patches of 16px: a box over the top-left patch plus one
    // spanning the right column.
    let b0 = rect_box(1.0, 1.0, 14.0, 14.0);
    let b1 = rect_box(33.0, 0.0, 47.0, 47.0);
    let expected = boxes_to_tokens(&[b0, b1], native.layout()).unwrap();

    let flat: Vec<f64> = [b0, b1].iter().flatten().flatten().copied().collect();
    unsafe {
        let mut sel: *mut TlSelection = ptr::null_mut();
        assert_eq!(
            tl_boxes_to_tokens(trace, flat.as_ptr(), 2, &mut sel),
            TlStatus::Ok,
            "{}",
            last_error()
        );
        let n = tl_selection_len(sel);
        assert_eq!(n, expected.len());
        let mut indices = vec![0usize; n];
        let mut scores = vec![0f32; n];
        assert_eq!(
            tl_selection_items(sel, indices.as_mut_ptr(), scores.as_mut_ptr(), n),
            TlStatus::Ok
        );
        assert_eq!(indices, expected.indices());
        assert_eq!(scores, expected.scores());
        tl_selection_free(sel);
        tl_trace_free(trace);
    }
}

#[test]
fn glimpse_refocus_and_iou_match_library() {
    let native = native_trace();
    let (map, selection) = glimpse(&native, 4).unwrap();
    let narrowed = refocus(&native, &selection, 1e-6, 0.5).unwrap();
    let expected_iou = selection_iou(&narrowed, &selection);

    let trace = ffi_trace();
    unsafe {
        let mut scores = vec![0f64; map.scores.len()];
        let mut sel: *mut TlSelection = ptr::null_mut();
        assert_eq!(
            tl_glimpse(trace, 4, scores.as_mut_ptr(), scores.len(), &mut sel),
            TlStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(scores, map.scores);
        let n = tl_selection_len(sel);
        assert_eq!(n, selection.len());

        let mut narrowed_ptr: *mut TlSelection = ptr::null_mut();
        assert_eq!(
            tl_refocus(trace, sel, 1e-6, 0.5, &mut narrowed_ptr),
            TlStatus::Ok,
            "{}",
            last_error()
        );
        let m = tl_selection_len(narrowed_ptr);
        assert_eq!(m, narrowed.len());
        let mut idx = vec![0usize; m];
        assert_eq!(
            tl_selection_items(narrowed_ptr, idx.as_mut_ptr(), ptr::null_mut(), m),
            TlStatus::Ok
        );
        assert_eq!(idx, narrowed.indices());

        let mut iou = -1.0f64;
        assert_eq!(tl_selection_iou(narrowed_ptr, sel, &mut iou), TlStatus::Ok);
        assert_eq!(iou, expected_iou);

        // k = 0 is rejected as an argument error.
        let mut bad: *mut TlSelection = ptr::null_mut();
        assert_eq!(
            tl_glimpse(trace, 0, ptr::null_mut(), 0, &mut bad),
            TlStatus::InvalidArgument
        );

        tl_selection_free(narrowed_ptr);
        tl_selection_free(sel);
        tl_trace_free(trace);
    }
}

#[test]
fn layer_analysis_matches_library() {
    let native = native_trace();
    let (_, selection) = glimpse(&native, 4).unwrap();
    let (expected_layer, expected_scores) = select_grounded_layer(&native, &selection).unwrap();
    let locus = HallucinationLocus::new(1, 7, 9).unwrap();
    let expected_profile = tendency_profile(&native, &locus, 2).unwrap();
    let expected_cv = attention_cv(&native, 0).unwrap();

    let trace = ffi_trace();
    unsafe {
        let mut sel: *mut TlSelection = ptr::null_mut();
        assert_eq!(
            tl_glimpse(trace, 4, ptr::null_mut(), 0, &mut sel),
            TlStatus::Ok
        );

        let mut layer = usize::MAX;
        let mut scores = vec![0f64; native.n_layers()];
        assert_eq!(
            tl_select_grounded_layer(trace, sel, &mut layer, scores.as_mut_ptr(), scores.len()),
            TlStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(layer, expected_layer);
        assert_eq!(scores, expected_scores);

        // Per-layer grounding agrees with the layer-scores vector.
        for (l, &expected) in expected_scores.iter().enumerate() {
            let mut value = -1.0f64;
            let mut degenerate = true;
            assert_eq!(
                tl_text_region_attention(trace, l, sel, &mut value, &mut degenerate),
                TlStatus::Ok
            );
            assert_eq!(value, expected);
        }
        let mut value = 0f64;
        assert_eq!(
            tl_text_region_attention(trace, native.n_layers(), sel, &mut value, ptr::null_mut()),
            TlStatus::InvalidArgument
        );

        let mut profile = vec![0f64; native.n_layers()];
        assert_eq!(
            tl_tendency_profile(trace, 1, 7, 9, 2, profile.as_mut_ptr(), profile.len()),
            TlStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(profile, expected_profile);
        // Identical candidate tokens cannot form a locus.
        assert_eq!(
            tl_tendency_profile(trace, 1, 7, 7, 2, profile.as_mut_ptr(), profile.len()),
            TlStatus::InvalidArgument
        );

        let mut cv = -1.0f64;
        assert_eq!(tl_attention_cv(trace, 0, &mut cv), TlStatus::Ok);
        assert_eq!(cv, expected_cv);

        tl_selection_free(sel);
        tl_trace_free(trace);
    }
}

#[test]
fn spearman_reports_value_and_definedness() {
    let xs = [1.0, 2.0, 3.0, 4.0];
    let ys = [2.0, 4.0, 8.0, 16.0];
    let mut rho = 0.0f64;
    let mut defined = false;
    unsafe {
        assert_eq!(
            tl_spearman(xs.as_ptr(), ys.as_ptr(), 4, &mut rho, &mut defined),
            TlStatus::Ok
        );
        assert!(defined);
        assert!((rho - 1.0).abs() < 1e-12);

        let flat = [5.0, 5.0, 5.0, 5.0];
        assert_eq!(
            tl_spearman(xs.as_ptr(), flat.as_ptr(), 4, &mut rho, &mut defined),
            TlStatus::Ok
        );
        assert!(!defined);
        assert!(rho.is_nan());

        // Too-short input is a data error.
        assert_eq!(
            tl_spearman(xs.as_ptr(), ys.as_ptr(), 1, &mut rho, &mut defined),
            TlStatus::DataError
        );
    }
}

#[test]
fn spotting_f1_matches_library_scoring() {
    let pred: Vec<CString> =
        ["MOTEL", "50%", "exit"].iter().map(|s| CString::new(*s).unwrap()).collect();
    let gt: Vec<CString> =
        ["motel", "50", "Exit!", "missing"].iter().map(|s| CString::new(*s).unwrap()).collect();
    let pred_ptrs: Vec<*const c_char> = pred.iter().map(|c| c.as_ptr()).collect();
    let gt_ptrs: Vec<*const c_char> = gt.iter().map(|c| c.as_ptr()).collect();

    let expected = textlens::evalbench::spotting_f1(
        &["MOTEL".into(), "50%".into(), "exit".into()],
        &["motel".into(), "50".into(), "Exit!".into(), "missing".into()],
    );

    let (mut p, mut r, mut f1) = (0f64, 0f64, 0f64);
    unsafe {
        assert_eq!(
            tl_spotting_f1(
                pred_ptrs.as_ptr(),
                pred_ptrs.len(),
                gt_ptrs.as_ptr(),
                gt_ptrs.len(),
                &mut p,
                &mut r,
                &mut f1
            ),
            TlStatus::Ok
        );
    }
    assert_eq!((p, r, f1), expected);
}

#[test]
fn default_config_round_trips() {
    let mut json: *mut c_char = ptr::null_mut();
    unsafe {
        assert_eq!(tl_default_config_json(&mut json), TlStatus::Ok);
    }
    let text = take_string(json);
    let parsed: CorrectionConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, CorrectionConfig::default());
}

#[test]
fn adapter_session_matches_library_decoding() {
    let name = CString::new("toy").unwrap();
    let params = CString::new(PARAMS).unwrap();
    let mut adapter: *mut TlAdapter = ptr::null_mut();
    unsafe {
        assert_eq!(
            tl_adapter_open(name.as_ptr(), params.as_ptr(), ptr::null(), &mut adapter),
            TlStatus::Ok,
            "{}",
            last_error()
        );

        let mut meta: *mut c_char = ptr::null_mut();
        assert_eq!(tl_adapter_metadata_json(adapter, &mut meta), TlStatus::Ok);
        let meta: serde_json::Value = serde_json::from_str(&take_string(meta)).unwrap();
        assert_eq!(meta["vocab"], 300);
        assert_eq!(meta["parallel_safe"], true);

        // Prefill through the C API produces the same trace as the library.
        let mut trace: *mut TlTrace = ptr::null_mut();
        assert_eq!(
            tl_adapter_prefill(adapter, PROMPT.as_ptr(), PROMPT.len(), &mut trace),
            TlStatus::Ok
        );
        let mut hex: *mut c_char = ptr::null_mut();
        assert_eq!(tl_trace_digest_hex(trace, &mut hex), TlStatus::Ok);
        assert_eq!(take_string(hex), native_trace().digest_hex());
        tl_trace_free(trace);

        // Greedy decode agrees with the library on a fresh model.
        let mut model = ToyModel::new(ToyParams::from_json(PARAMS).unwrap()).unwrap();
        let expected = greedy_decode(&mut model, &PROMPT, 6).unwrap();
        let mut tokens = vec![0u32; 6];
        let mut n = 0usize;
        assert_eq!(
            tl_adapter_greedy_decode(
                adapter,
                PROMPT.as_ptr(),
                PROMPT.len(),
                6,
                tokens.as_mut_ptr(),
                tokens.len(),
                &mut n
            ),
            TlStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(&tokens[..n], &expected[..]);

        // Corrected decode agrees with the library, outcome included.
        let mut model = ToyModel::new(ToyParams::from_json(PARAMS).unwrap()).unwrap();
        let config = CorrectionConfig { top_k: 4, ..CorrectionConfig::default() };
        let (expected_tokens, expected_outcome) =
            decode_with_correction(&mut model, &PROMPT, &config, 6).unwrap();
        let cfg = CString::new(r#"{"top_k":4}"#).unwrap();
        let mut outcome: *mut c_char = ptr::null_mut();
        assert_eq!(
            tl_adapter_decode_with_correction(
                adapter,
                PROMPT.as_ptr(),
                PROMPT.len(),
                cfg.as_ptr(),
                6,
                tokens.as_mut_ptr(),
                tokens.len(),
                &mut n,
                &mut outcome
            ),
            TlStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(&tokens[..n], &expected_tokens[..]);
        let outcome: serde_json::Value = serde_json::from_str(&take_string(outcome)).unwrap();
        assert_eq!(outcome, serde_json::to_value(&expected_outcome).unwrap());

        // A too-small token buffer is rejected up front.
        assert_eq!(
            tl_adapter_greedy_decode(
                adapter,
                PROMPT.as_ptr(),
                PROMPT.len(),
                6,
                tokens.as_mut_ptr(),
                2,
                &mut n
            ),
            TlStatus::SizeMismatch
        );
        // Malformed config JSON is an argument error.
        let bad = CString::new("{oops").unwrap();
        assert_eq!(
            tl_adapter_decode_with_correction(
                adapter,
                PROMPT.as_ptr(),
                PROMPT.len(),
                bad.as_ptr(),
                6,
                tokens.as_mut_ptr(),
                tokens.len(),
                &mut n,
                ptr::null_mut()
            ),
            TlStatus::InvalidArgument
        );

        tl_adapter_free(adapter);
    }
}

#[test]
fn unknown_adapter_name_is_adapter_error() {
    let name = CString::new("no-such-adapter").unwrap();
    let paths = CString::new("/nonexistent").unwrap();
    let mut adapter: *mut TlAdapter = ptr::null_mut();
    let st = unsafe { tl_adapter_open(name.as_ptr(), ptr::null(), paths.as_ptr(), &mut adapter) };
    assert_eq!(st, TlStatus::AdapterError);
    assert!(last_error().contains("no-such-adapter"), "{}", last_error());
}
