//! C ABI for the textlens toolkit.
//!
//! Two surfaces live in this crate:
//!
//! * The `tl_*` functions: a plain-C view of the core library — trace
//!   archives, box→token geometry, glimpse/refocus candidate selection,
//!   grounded-layer scoring, tendency profiles, rank correlation, decoding
//!   with correction, and spotting F1. Handles (`TlTrace`, `TlSelection`,
//!   `TlAdapter`) are opaque pointers owned by the library; every function
//!   returns a [`TlStatus`] (or a pointer that is null on failure) and leaves
//!   a human-readable message retrievable with [`tl_last_error_message`].
//! * The `textlens_adapter_v1_*` functions: a reference implementation of
//!   the versioned trace-provider plugin contract, backed by the built-in
//!   toy decoder. Building this crate as a `cdylib` therefore yields a
//!   shared library that the core crate can load by name like any
//!   third-party adapter, which is how the contract itself is tested.
//!
//! Thread-safety: a handle may be used from one thread at a time. Error
//! messages are thread-local and remain valid until the next failing call
//! on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;

use textlens::adapters::{default_search_paths, load_provider, TraceProvider};
use textlens::analysis::{attention_cv, tendency_profile, text_region_attention, HallucinationLocus};
use textlens::evalbench::{spotting_f1, MANIFEST_SCHEMA};
use textlens::glc::{decode_with_correction, greedy_decode, select_grounded_layer, CorrectionConfig};
use textlens::stats::spearman;
use textlens::toy::{ToyModel, ToyParams};
use textlens::trace::{boxes_to_tokens, QuadBox};
use textlens::zoomtext::{glimpse, refocus, selection_iou};
use textlens::{read_trace, write_trace, Error, MultimodalTrace, TokenSelection};

/// Result of every fallible `tl_*` call.
///
/// `TL_STATUS_OK` is zero; anything else indicates failure and leaves a
/// message for `tl_last_error_message`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument failed validation (bad range, malformed JSON, ...).
    InvalidArgument = 3,
    /// Input was structurally fine but unusable (empty set, undefined
    /// metric, malformed archive, ...).
    DataError = 4,
    /// A trace provider (built-in or plugin) reported a failure.
    AdapterError = 5,
    /// Filesystem access failed.
    IoError = 6,
    /// A caller-supplied buffer length does not match the required size.
    SizeMismatch = 7,
    /// The library caught an internal panic at the boundary.
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl AsRef<str>) {
    let clean: String = msg.as_ref().replace('\0', " ");
    let c = CString::new(clean).unwrap_or_else(|_| CString::new("error").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TlStatus {
    match e {
        Error::Io { .. } => TlStatus::IoError,
        Error::Validation(_) | Error::Shape(_) => TlStatus::InvalidArgument,
        Error::Manifest { .. } | Error::Data(_) => TlStatus::DataError,
        Error::Adapter(_) => TlStatus::AdapterError,
    }
}

fn fail(e: &Error) -> TlStatus {
    set_error(e.to_string());
    status_of(e)
}

fn null_arg(name: &str) -> TlStatus {
    set_error(format!("{name} must not be null"));
    TlStatus::NullArgument
}

fn size_mismatch(what: &str, given: usize, wanted: usize) -> TlStatus {
    set_error(format!("{what}: buffer holds {given} elements, {wanted} required"));
    TlStatus::SizeMismatch
}

fn guard(f: impl FnOnce() -> TlStatus) -> TlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic reached the C boundary");
            TlStatus::Panic
        }
    }
}

fn guard_ptr<T>(f: impl FnOnce() -> *mut T) -> *mut T {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(p) => p,
        Err(_) => {
            set_error("internal panic reached the C boundary");
            std::ptr::null_mut()
        }
    }
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(st) => return st,
        }
    };
}

macro_rules! c_try {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => return fail(&err),
        }
    };
}

unsafe fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, TlStatus> {
    if ptr.is_null() {
        return Err(null_arg(name));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(format!("{name} is not valid UTF-8"));
        TlStatus::InvalidUtf8
    })
}

/// Like `utf8_arg`, but a null pointer yields `default`.
unsafe fn utf8_opt<'a>(
    ptr: *const c_char,
    name: &str,
    default: &'a str,
) -> Result<&'a str, TlStatus> {
    if ptr.is_null() {
        return Ok(default);
    }
    utf8_arg(ptr, name)
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], TlStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null_arg(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out_string(s: String, out: *mut *mut c_char) -> TlStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            TlStatus::Ok
        }
        Err(_) => {
            set_error("result string contains an interior NUL byte");
            TlStatus::Panic
        }
    }
}

/// A loaded trace archive: attention, hidden states, token layout, output
/// head. Created by `tl_trace_read`, `tl_toy_trace`, or `tl_adapter_prefill`;
/// destroyed by `tl_trace_free`.
pub struct TlTrace(MultimodalTrace);

/// An ordered set of image-token positions with scores. Created by
/// `tl_boxes_to_tokens`, `tl_glimpse`, or `tl_refocus`; destroyed by
/// `tl_selection_free`.
pub struct TlSelection(TokenSelection);

/// One decoding session of a trace provider (the built-in toy decoder or a
/// shared-library plugin). Created by `tl_adapter_open`; destroyed by
/// `tl_adapter_free`.
pub struct TlAdapter(Box<dyn TraceProvider>);

// ---------------------------------------------------------------------------
// Library metadata and strings
// ---------------------------------------------------------------------------

/// Version of this library as a static NUL-terminated string. Never free it.
#[no_mangle]
pub extern "C" fn tl_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread;
/// never free it.
#[no_mangle]
pub extern "C" fn tl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        Some(c) => c.as_ptr(),
        None => std::ptr::null(),
    })
}

/// Free a string the library returned through a `char **` out-parameter.
/// Null is ignored.
///
/// # Safety
/// `s` must be a pointer previously returned by this library and not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn tl_string_free(s: *mut c_char) {
    if !s.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(CString::from_raw(s))));
    }
}

/// JSON Schema describing one line of a benchmark manifest, as a static
/// NUL-terminated string. Never free it.
#[no_mangle]
pub extern "C" fn tl_manifest_schema() -> *const c_char {
    static SCHEMA: OnceLock<CString> = OnceLock::new();
    SCHEMA
        .get_or_init(|| CString::new(MANIFEST_SCHEMA).expect("schema has no NUL"))
        .as_ptr()
}

/// Default correction configuration as a JSON string. Free with
/// `tl_string_free`. The same JSON shape is accepted by
/// `tl_adapter_decode_with_correction`; absent fields keep their defaults.
///
/// # Safety
/// `out_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_default_config_json(out_json: *mut *mut c_char) -> TlStatus {
    guard(|| {
        if out_json.is_null() {
            return null_arg("out_json");
        }
        let json = match serde_json::to_string(&CorrectionConfig::default()) {
            Ok(j) => j,
            Err(e) => {
                set_error(format!("serializing default config: {e}"));
                return TlStatus::Panic;
            }
        };
        out_string(json, out_json)
    })
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

/// Read a trace archive directory into a new `TlTrace` handle.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out_trace` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_trace_read(
    path: *const c_char,
    out_trace: *mut *mut TlTrace,
) -> TlStatus {
    guard(|| {
        if out_trace.is_null() {
            return null_arg("out_trace");
        }
        let path = try_status!(utf8_arg(path, "path"));
        let trace = c_try!(read_trace(std::path::Path::new(path)));
        *out_trace = Box::into_raw(Box::new(TlTrace(trace)));
        TlStatus::Ok
    })
}

/// Write the trace as an archive directory at `path`, replacing any archive
/// already there.
///
/// # Safety
/// `trace` must be a live handle, `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tl_trace_write(trace: *const TlTrace, path: *const c_char) -> TlStatus {
    guard(|| {
        if trace.is_null() {
            return null_arg("trace");
        }
        let path = try_status!(utf8_arg(path, "path"));
        c_try!(write_trace(&(*trace).0, std::path::Path::new(path)));
        TlStatus::Ok
    })
}

/// Destroy a trace handle. Null is ignored.
///
/// # Safety
/// `trace` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn tl_trace_free(trace: *mut TlTrace) {
    if !trace.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(trace))));
    }
}

/// Run the built-in toy decoder's prefill on `prompt` and return the trace.
/// `params_json` configures the decoder (layers, heads, d_model, vocab,
/// n_image_tokens, seed, eos_token_id); null or empty means defaults.
///
/// # Safety
/// `prompt` must point to `n_prompt` tokens; `out_trace` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_toy_trace(
    params_json: *const c_char,
    prompt: *const u32,
    n_prompt: usize,
    out_trace: *mut *mut TlTrace,
) -> TlStatus {
    guard(|| {
        if out_trace.is_null() {
            return null_arg("out_trace");
        }
        let params = try_status!(utf8_opt(params_json, "params_json", ""));
        let prompt = try_status!(slice_arg(prompt, n_prompt, "prompt"));
        let params = c_try!(ToyParams::from_json(params));
        let mut model = c_try!(ToyModel::new(params));
        let trace = c_try!(model.prefill(prompt));
        *out_trace = Box::into_raw(Box::new(TlTrace(trace)));
        TlStatus::Ok
    })
}

/// Report the trace's dimensions. Any out-pointer may be null to skip it.
///
/// # Safety
/// `trace` must be a live handle; non-null out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_trace_dims(
    trace: *const TlTrace,
    out_layers: *mut usize,
    out_seq: *mut usize,
    out_d_model: *mut usize,
    out_vocab: *mut usize,
) -> TlStatus {
    guard(|| {
        if trace.is_null() {
            return null_arg("trace");
        }
        let t = &(*trace).0;
        if !out_layers.is_null() {
            *out_layers = t.n_layers();
        }
        if !out_seq.is_null() {
            *out_seq = t.seq_len();
        }
        if !out_d_model.is_null() {
            *out_d_model = t.d_model();
        }
        if !out_vocab.is_null() {
            *out_vocab = t.output_head().vocab;
        }
        TlStatus::Ok
    })
}

/// Content digest of the trace as a lowercase hex string. Free with
/// `tl_string_free`.
///
/// # Safety
/// `trace` must be a live handle, `out_hex` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_trace_digest_hex(
    trace: *const TlTrace,
    out_hex: *mut *mut c_char,
) -> TlStatus {
    guard(|| {
        if trace.is_null() {
            return null_arg("trace");
        }
        if out_hex.is_null() {
            return null_arg("out_hex");
        }
        out_string((*trace).0.digest_hex(), out_hex)
    })
}

/// Model identifier recorded in the trace. Free with `tl_string_free`.
///
/// # Safety
/// `trace` must be a live handle, `out_id` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_trace_model_id(
    trace: *const TlTrace,
    out_id: *mut *mut c_char,
) -> TlStatus {
    guard(|| {
        if trace.is_null() {
            return null_arg("trace");
        }
        if out_id.is_null() {
            return null_arg("out_id");
        }
        out_string((*trace).0.model_id().to_string(), out_id)
    })
}

/// Token layout of the trace (image/query ranges, patch grid, image size)
/// as a JSON object. Free with `tl_string_free`.
///
/// # Safety
/// `trace` must be a live handle, `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_trace_layout_json(
    trace: *const TlTrace,
    out_json: *mut *mut c_char,
) -> TlStatus {
    guard(|| {
        if trace.is_null() {
            return null_arg("trace");
        }
        if out_json.is_null() {
            return null_arg("out_json");
        }
        let json = match serde_json::to_string((*trace).0.layout()) {
            Ok(j) => j,
            Err(e) => {
                set_error(format!("serializing layout: {e}"));
                return TlStatus::Panic;
            }
        };
        out_string(json, out_json)
    })
}

/// Copy the trace's token ids into `out_ids`, which must hold exactly
/// `seq_len` elements (see `tl_trace_dims`).
///
/// # Safety
/// `trace` must be a live handle; `out_ids` must point to `len` elements.
#[no_mangle]
pub unsafe extern "C" fn tl_trace_token_ids(
    trace: *const TlTrace,
    out_ids: *mut u32,
    len: usize,
) -> TlStatus {
    guard(|| {
        if trace.is_null() {
            return null_arg("trace");
        }
        if out_ids.is_null() {
            return null_arg("out_ids");
        }
        let ids = (*trace).0.token_ids();
        if len != ids.len() {
            return size_mismatch("token ids", len, ids.len());
        }
        std::slice::from_raw_parts_mut(out_ids, len).copy_from_slice(ids);
        TlStatus::Ok
    })
}

// ---------------------------------------------------------------------------
// Geometry and token selections
// ---------------------------------------------------------------------------

/// Map annotated text boxes to the image tokens they overlap.
///
/// `corners` holds `n_boxes` quadrilaterals as 8 doubles each
/// (x0,y0,x1,y1,x2,y2,x3,y3 in pixel coordinates). The resulting selection
/// is scored by overlap count and sorted by descending score.
///
/// # Safety
/// `trace` must be a live handle; `corners` must point to `n_boxes * 8`
/// doubles; `out_selection` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_boxes_to_tokens(
    trace: *const TlTrace,
    corners: *const f64,
    n_boxes: usize,
    out_selection: *mut *mut TlSelection,
) -> TlStatus {
    guard(|| {
        if trace.is_null() {
            return null_arg("trace");
        }
        if out_selection.is_null() {
            return null_arg("out_selection");
        }
        let n_doubles = match n_boxes.checked_mul(8) {
            Some(n) => n,
            None => {
                set_error("n_boxes overflows the corner buffer size");
                return TlStatus::InvalidArgument;
            }
        };
        let flat = try_status!(slice_arg(corners, n_doubles, "corners"));
        let boxes: Vec<QuadBox> = flat
            .chunks_exact(8)
            .map(|c| [[c[0], c[1]], [c[2], c[3]], [c[4], c[5]], [c[6], c[7]]])
            .collect();
        let sel = c_try!(boxes_to_tokens(&boxes, (*trace).0.layout()));
        *out_selection = Box::into_raw(Box::new(TlSelection(sel)));
        TlStatus::Ok
    })
}

/// Compute the glimpse map over image tokens and its top-`k` selection.
///
/// If `out_scores` is non-null it receives the full per-token map and
/// `scores_len` must equal the layout's image-token count. `out_selection`
/// may be null when only the map is wanted.
///
/// # Safety
/// `trace` must be a live handle; non-null out-pointers must be valid and
/// `out_scores`, when given, must hold `scores_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tl_glimpse(
    trace: *const TlTrace,
    k: usize,
    out_scores: *mut f64,
    scores_len: usize,
    out_selection: *mut *mut TlSelection,
) -> TlStatus {
    guard(|| {
        if trace.is_null() {
            return null_arg("trace");
        }
        let t = &(*trace).0;
        let (map, sel) = c_try!(glimpse(t, k));
        if !out_scores.is_null() {
            if scores_len != map.scores.len() {
                return size_mismatch("glimpse scores", scores_len, map.scores.len());
            }
            std::slice::from_raw_parts_mut(out_scores, scores_len).copy_from_slice(&map.scores);
        }
        if !out_selection.is_null() {
            *out_selection = Box::into_raw(Box::new(TlSelection(sel)));
        }
        TlStatus::Ok
    })
}

/// Narrow a candidate selection by cross-layer attention shift, keeping
/// `ceil(keep_fraction * len)` tokens. `epsilon` stabilizes the shift
/// denominator and must be positive; `keep_fraction` must be in (0, 1].
///
/// # Safety
/// `trace` and `candidates` must be live handles; `out_selection` must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn tl_refocus(
    trace: *const TlTrace,
    candidates: *const TlSelection,
    epsilon: f64,
    keep_fraction: f64,
    out_selection: *mut *mut TlSelection,
) -> TlStatus {
    guard(|| {
        if trace.is_null() {
            return null_arg("trace");
        }
        if candidates.is_null() {
            return null_arg("candidates");
        }
        if out_selection.is_null() {
            return null_arg("out_selection");
        }
        let sel = c_try!(refocus(&(*trace).0, &(*candidates).0, epsilon, keep_fraction));
        *out_selection = Box::into_raw(Box::new(TlSelection(sel)));
        TlStatus::Ok
    })
}

/// Number of tokens in a selection; 0 for null.
///
/// # Safety
/// `selection` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn tl_selection_len(selection: *const TlSelection) -> usize {
    if selection.is_null() {
        0
    } else {
        (*selection).0.len()
    }
}

/// Copy a selection's token indices and/or scores. Either out-pointer may
/// be null to skip it; `len` must equal `tl_selection_len`.
///
/// # Safety
/// `selection` must be a live handle; non-null out-pointers must hold `len`
/// elements.
#[no_mangle]
pub unsafe extern "C" fn tl_selection_items(
    selection: *const TlSelection,
    out_indices: *mut usize,
    out_scores: *mut f32,
    len: usize,
) -> TlStatus {
    guard(|| {
        if selection.is_null() {
            return null_arg("selection");
        }
        let sel = &(*selection).0;
        if len != sel.len() {
            return size_mismatch("selection", len, sel.len());
        }
        if !out_indices.is_null() && len > 0 {
            std::slice::from_raw_parts_mut(out_indices, len).copy_from_slice(sel.indices());
        }
        if !out_scores.is_null() && len > 0 {
            std::slice::from_raw_parts_mut(out_scores, len).copy_from_slice(sel.scores());
        }
        TlStatus::Ok
    })
}

/// Intersection-over-union of two selections' index sets. Both empty
/// yields 1.
///
/// # Safety
/// `a` and `b` must be live handles; `out_iou` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_selection_iou(
    a: *const TlSelection,
    b: *const TlSelection,
    out_iou: *mut f64,
) -> TlStatus {
    guard(|| {
        if a.is_null() {
            return null_arg("a");
        }
        if b.is_null() {
            return null_arg("b");
        }
        if out_iou.is_null() {
            return null_arg("out_iou");
        }
        *out_iou = selection_iou(&(*a).0, &(*b).0);
        TlStatus::Ok
    })
}

/// Destroy a selection handle. Null is ignored.
///
/// # Safety
/// `selection` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn tl_selection_free(selection: *mut TlSelection) {
    if !selection.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(selection))));
    }
}

// ---------------------------------------------------------------------------
// Layer analysis
// ---------------------------------------------------------------------------

/// Pick the layer whose attention is most grounded in `regions` (ties go to
/// the lowest index). If `out_scores` is non-null it receives the per-layer
/// grounding scores and `scores_len` must equal the trace's layer count.
///
/// # Safety
/// `trace` and `regions` must be live handles; `out_layer` must be valid;
/// `out_scores`, when given, must hold `scores_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tl_select_grounded_layer(
    trace: *const TlTrace,
    regions: *const TlSelection,
    out_layer: *mut usize,
    out_scores: *mut f64,
    scores_len: usize,
) -> TlStatus {
    guard(|| {
        if trace.is_null() {
            return null_arg("trace");
        }
        if regions.is_null() {
            return null_arg("regions");
        }
        if out_layer.is_null() {
            return null_arg("out_layer");
        }
        let (layer, scores) = c_try!(select_grounded_layer(&(*trace).0, &(*regions).0));
        if !out_scores.is_null() {
            if scores_len != scores.len() {
                return size_mismatch("layer scores", scores_len, scores.len());
            }
            std::slice::from_raw_parts_mut(out_scores, scores_len).copy_from_slice(&scores);
        }
        *out_layer = layer;
        TlStatus::Ok
    })
}

/// Share of one layer's attention mass that lands on the selected text
/// regions, averaged over heads. `out_degenerate` (nullable) is set when
/// the denominator vanished and the value defaulted to 0.
///
/// # Safety
/// `trace` and `regions` must be live handles; `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_text_region_attention(
    trace: *const TlTrace,
    layer: usize,
    regions: *const TlSelection,
    out_value: *mut f64,
    out_degenerate: *mut bool,
) -> TlStatus {
    guard(|| {
        if trace.is_null() {
            return null_arg("trace");
        }
        if regions.is_null() {
            return null_arg("regions");
        }
        if out_value.is_null() {
            return null_arg("out_value");
        }
        let t = &(*trace).0;
        if layer >= t.n_layers() {
            set_error(format!("layer {layer} out of range (trace has {})", t.n_layers()));
            return TlStatus::InvalidArgument;
        }
        let g = c_try!(text_region_attention(t.attention(layer), t.layout(), &(*regions).0));
        *out_value = g.value;
        if !out_degenerate.is_null() {
            *out_degenerate = g.degenerate;
        }
        TlStatus::Ok
    })
}

/// Per-layer tendency of the decoder toward a hallucinated token over the
/// ground-truth token at one generated position, read through the output
/// head. `position` indexes the generated suffix of length `generated_len`;
/// `out_profile` must hold exactly one value per layer.
///
/// # Safety
/// `trace` must be a live handle; `out_profile` must hold `profile_len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn tl_tendency_profile(
    trace: *const TlTrace,
    position: usize,
    hallucinated_token: u32,
    ground_truth_token: u32,
    generated_len: usize,
    out_profile: *mut f64,
    profile_len: usize,
) -> TlStatus {
    guard(|| {
        if trace.is_null() {
            return null_arg("trace");
        }
        if out_profile.is_null() {
            return null_arg("out_profile");
        }
        let t = &(*trace).0;
        if profile_len != t.n_layers() {
            return size_mismatch("tendency profile", profile_len, t.n_layers());
        }
        let locus = c_try!(HallucinationLocus::new(
            position,
            hallucinated_token,
            ground_truth_token
        ));
        let profile = c_try!(tendency_profile(t, &locus, generated_len));
        std::slice::from_raw_parts_mut(out_profile, profile_len).copy_from_slice(&profile);
        TlStatus::Ok
    })
}

/// Coefficient of variation of one image token's received attention across
/// layers (head-averaged column mass per layer).
///
/// # Safety
/// `trace` must be a live handle; `out_cv` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_attention_cv(
    trace: *const TlTrace,
    token_index: usize,
    out_cv: *mut f64,
) -> TlStatus {
    guard(|| {
        if trace.is_null() {
            return null_arg("trace");
        }
        if out_cv.is_null() {
            return null_arg("out_cv");
        }
        *out_cv = c_try!(attention_cv(&(*trace).0, token_index));
        TlStatus::Ok
    })
}

/// Spearman rank correlation with midrank ties. When either input has zero
/// rank variance the coefficient is undefined: `out_defined` is set false
/// and `out_rho` to NaN.
///
/// # Safety
/// `xs` and `ys` must each point to `len` doubles; `out_rho` and
/// `out_defined` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_spearman(
    xs: *const f64,
    ys: *const f64,
    len: usize,
    out_rho: *mut f64,
    out_defined: *mut bool,
) -> TlStatus {
    guard(|| {
        if out_rho.is_null() {
            return null_arg("out_rho");
        }
        if out_defined.is_null() {
            return null_arg("out_defined");
        }
        let xs = try_status!(slice_arg(xs, len, "xs"));
        let ys = try_status!(slice_arg(ys, len, "ys"));
        match c_try!(spearman(xs, ys)) {
            Some(rho) => {
                *out_rho = rho;
                *out_defined = true;
            }
            None => {
                *out_rho = f64::NAN;
                *out_defined = false;
            }
        }
        TlStatus::Ok
    })
}

/// Multiset word-spotting precision/recall/F1 after normalization (strip
/// non-alphanumeric edges, lowercase). Any out-pointer may be null.
///
/// # Safety
/// `predicted` and `ground_truth` must point to `n_predicted` /
/// `n_ground_truth` NUL-terminated strings; non-null out-pointers must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn tl_spotting_f1(
    predicted: *const *const c_char,
    n_predicted: usize,
    ground_truth: *const *const c_char,
    n_ground_truth: usize,
    out_precision: *mut f64,
    out_recall: *mut f64,
    out_f1: *mut f64,
) -> TlStatus {
    guard(|| {
        let pred_ptrs = try_status!(slice_arg(predicted, n_predicted, "predicted"));
        let gt_ptrs = try_status!(slice_arg(ground_truth, n_ground_truth, "ground_truth"));
        let mut pred = Vec::with_capacity(pred_ptrs.len());
        for (i, &p) in pred_ptrs.iter().enumerate() {
            pred.push(try_status!(utf8_arg(p, &format!("predicted[{i}]"))).to_string());
        }
        let mut gt = Vec::with_capacity(gt_ptrs.len());
        for (i, &p) in gt_ptrs.iter().enumerate() {
            gt.push(try_status!(utf8_arg(p, &format!("ground_truth[{i}]"))).to_string());
        }
        let (p, r, f1) = spotting_f1(&pred, &gt);
        if !out_precision.is_null() {
            *out_precision = p;
        }
        if !out_recall.is_null() {
            *out_recall = r;
        }
        if !out_f1.is_null() {
            *out_f1 = f1;
        }
        TlStatus::Ok
    })
}

// ---------------------------------------------------------------------------
// Adapters (decoding sessions)
// ---------------------------------------------------------------------------

/// Open a trace provider by name. `"toy"` builds the in-process toy decoder
/// from `params_json`; any other name loads a shared-library plugin.
/// `search_paths` is a `:`-separated directory list for plugin lookup; null
/// means the `TEXTLENS_ADAPTER_PATH` environment variable followed by the
/// current directory.
///
/// # Safety
/// `name` must be NUL-terminated; `out_adapter` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_adapter_open(
    name: *const c_char,
    params_json: *const c_char,
    search_paths: *const c_char,
    out_adapter: *mut *mut TlAdapter,
) -> TlStatus {
    guard(|| {
        if out_adapter.is_null() {
            return null_arg("out_adapter");
        }
        let name = try_status!(utf8_arg(name, "name"));
        let params = try_status!(utf8_opt(params_json, "params_json", "{}"));
        let paths: Vec<PathBuf> = if search_paths.is_null() {
            default_search_paths()
        } else {
            try_status!(utf8_arg(search_paths, "search_paths"))
                .split(':')
                .filter(|p| !p.is_empty())
                .map(PathBuf::from)
                .collect()
        };
        let provider = c_try!(load_provider(name, params, &paths));
        *out_adapter = Box::into_raw(Box::new(TlAdapter(provider)));
        TlStatus::Ok
    })
}

/// Destroy an adapter handle. Null is ignored.
///
/// # Safety
/// `adapter` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn tl_adapter_free(adapter: *mut TlAdapter) {
    if !adapter.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(adapter))));
    }
}

/// Provider metadata (model_id, token layout, vocab, eos_token_id,
/// parallel_safe) as JSON. Free with `tl_string_free`.
///
/// # Safety
/// `adapter` must be a live handle; `out_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_adapter_metadata_json(
    adapter: *const TlAdapter,
    out_json: *mut *mut c_char,
) -> TlStatus {
    guard(|| {
        if adapter.is_null() {
            return null_arg("adapter");
        }
        if out_json.is_null() {
            return null_arg("out_json");
        }
        let json = match serde_json::to_string(&(*adapter).0.metadata()) {
            Ok(j) => j,
            Err(e) => {
                set_error(format!("serializing metadata: {e}"));
                return TlStatus::Panic;
            }
        };
        out_string(json, out_json)
    })
}

/// Run the adapter's prefill on `prompt` and return the recorded trace.
///
/// # Safety
/// `adapter` must be a live handle; `prompt` must point to `n_prompt`
/// tokens; `out_trace` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_adapter_prefill(
    adapter: *mut TlAdapter,
    prompt: *const u32,
    n_prompt: usize,
    out_trace: *mut *mut TlTrace,
) -> TlStatus {
    guard(|| {
        if adapter.is_null() {
            return null_arg("adapter");
        }
        if out_trace.is_null() {
            return null_arg("out_trace");
        }
        let prompt = try_status!(slice_arg(prompt, n_prompt, "prompt"));
        let trace = c_try!((*adapter).0.prefill(prompt));
        *out_trace = Box::into_raw(Box::new(TlTrace(trace)));
        TlStatus::Ok
    })
}

/// Greedy decode up to `max_new_tokens` tokens (stopping at EOS if the
/// provider declares one). `out_tokens` must have capacity for
/// `max_new_tokens`; `*out_len` receives the count actually generated.
///
/// # Safety
/// `adapter` must be a live handle; `prompt` must point to `n_prompt`
/// tokens; `out_tokens` must hold `out_capacity` elements; `out_len` must
/// be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_adapter_greedy_decode(
    adapter: *mut TlAdapter,
    prompt: *const u32,
    n_prompt: usize,
    max_new_tokens: usize,
    out_tokens: *mut u32,
    out_capacity: usize,
    out_len: *mut usize,
) -> TlStatus {
    guard(|| {
        if adapter.is_null() {
            return null_arg("adapter");
        }
        if out_tokens.is_null() {
            return null_arg("out_tokens");
        }
        if out_len.is_null() {
            return null_arg("out_len");
        }
        if out_capacity < max_new_tokens {
            return size_mismatch("decoded tokens", out_capacity, max_new_tokens);
        }
        let prompt = try_status!(slice_arg(prompt, n_prompt, "prompt"));
        let tokens = c_try!(greedy_decode((*adapter).0.as_mut(), prompt, max_new_tokens));
        std::slice::from_raw_parts_mut(out_tokens, tokens.len()).copy_from_slice(&tokens);
        *out_len = tokens.len();
        TlStatus::Ok
    })
}

/// Decode with grounded-layer correction. `config_json` follows the shape
/// of `tl_default_config_json` (null or empty means defaults). If
/// `out_outcome_json` is non-null it receives a JSON report of the selected
/// layer, per-layer grounding, chosen tokens, and corrected positions; free
/// it with `tl_string_free`.
///
/// # Safety
/// `adapter` must be a live handle; `prompt` must point to `n_prompt`
/// tokens; `out_tokens` must hold `out_capacity` elements; `out_len` must
/// be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_adapter_decode_with_correction(
    adapter: *mut TlAdapter,
    prompt: *const u32,
    n_prompt: usize,
    config_json: *const c_char,
    max_new_tokens: usize,
    out_tokens: *mut u32,
    out_capacity: usize,
    out_len: *mut usize,
    out_outcome_json: *mut *mut c_char,
) -> TlStatus {
    guard(|| {
        if adapter.is_null() {
            return null_arg("adapter");
        }
        if out_tokens.is_null() {
            return null_arg("out_tokens");
        }
        if out_len.is_null() {
            return null_arg("out_len");
        }
        if out_capacity < max_new_tokens {
            return size_mismatch("decoded tokens", out_capacity, max_new_tokens);
        }
        let prompt = try_status!(slice_arg(prompt, n_prompt, "prompt"));
        let cfg_text = try_status!(utf8_opt(config_json, "config_json", ""));
        let config: CorrectionConfig = if cfg_text.trim().is_empty() {
            CorrectionConfig::default()
        } else {
            match serde_json::from_str(cfg_text.trim()) {
                Ok(c) => c,
                Err(e) => {
                    set_error(format!("config JSON: {e}"));
                    return TlStatus::InvalidArgument;
                }
            }
        };
        let (tokens, outcome) = c_try!(decode_with_correction(
            (*adapter).0.as_mut(),
            prompt,
            &config,
            max_new_tokens
        ));
        std::slice::from_raw_parts_mut(out_tokens, tokens.len()).copy_from_slice(&tokens);
        *out_len = tokens.len();
        if !out_outcome_json.is_null() {
            let json = match serde_json::to_string(&outcome) {
                Ok(j) => j,
                Err(e) => {
                    set_error(format!("serializing outcome: {e}"));
                    return TlStatus::Panic;
                }
            };
            return out_string(json, out_outcome_json);
        }
        TlStatus::Ok
    })
}

// ---------------------------------------------------------------------------
// Reference trace-provider plugin (contract v1), backed by the toy decoder
// ---------------------------------------------------------------------------

struct PluginSession {
    model: ToyModel,
    /// (layers, d_model, vocab) — fixed by the construction params.
    dims: (usize, usize, usize),
}

unsafe fn session<'a>(handle: *mut c_void) -> Result<&'a mut PluginSession, ()> {
    if handle.is_null() {
        set_error("plugin handle is null");
        return Err(());
    }
    Ok(&mut *(handle as *mut PluginSession))
}

/// Plugin contract version implemented by this library.
#[no_mangle]
pub extern "C" fn textlens_adapter_v1_version() -> u32 {
    1
}

/// Create a toy-decoder session from a JSON config (layers, heads, d_model,
/// vocab, n_image_tokens, seed, eos_token_id; all optional). Returns null
/// on failure — see `textlens_adapter_v1_last_error`.
///
/// # Safety
/// `config_json` must be NUL-terminated or null (null means defaults).
#[no_mangle]
pub unsafe extern "C" fn textlens_adapter_v1_create(config_json: *const c_char) -> *mut c_void {
    guard_ptr(|| {
        let cfg = if config_json.is_null() {
            ""
        } else {
            match CStr::from_ptr(config_json).to_str() {
                Ok(s) => s,
                Err(_) => {
                    set_error("config JSON is not valid UTF-8");
                    return std::ptr::null_mut();
                }
            }
        };
        let params = match ToyParams::from_json(cfg) {
            Ok(p) => p,
            Err(e) => {
                set_error(e.to_string());
                return std::ptr::null_mut();
            }
        };
        let arch = params.arch();
        let dims = (arch.layers, arch.d_model, arch.vocab);
        match ToyModel::new(params) {
            Ok(model) => Box::into_raw(Box::new(PluginSession { model, dims })) as *mut c_void,
            Err(e) => {
                set_error(e.to_string());
                std::ptr::null_mut()
            }
        }
    })
}

/// Destroy a session created by `textlens_adapter_v1_create`. Null is
/// ignored.
///
/// # Safety
/// `handle` must come from `textlens_adapter_v1_create` and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn textlens_adapter_v1_destroy(handle: *mut c_void) {
    if !handle.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| {
            drop(Box::from_raw(handle as *mut PluginSession))
        }));
    }
}

/// Thread-local message for the most recent plugin failure, or null.
#[no_mangle]
pub extern "C" fn textlens_adapter_v1_last_error() -> *const c_char {
    tl_last_error_message()
}

/// Provider metadata as JSON (model_id, layout, vocab, eos_token_id,
/// parallel_safe). Free with `textlens_adapter_v1_string_free`. Null on
/// failure.
///
/// # Safety
/// `handle` must be a live session.
#[no_mangle]
pub unsafe extern "C" fn textlens_adapter_v1_metadata(handle: *mut c_void) -> *mut c_char {
    guard_ptr(|| {
        let s = match session(handle) {
            Ok(s) => s,
            Err(()) => return std::ptr::null_mut(),
        };
        match serde_json::to_string(&s.model.metadata()) {
            Ok(json) => match CString::new(json) {
                Ok(c) => c.into_raw(),
                Err(_) => {
                    set_error("metadata contains NUL");
                    std::ptr::null_mut()
                }
            },
            Err(e) => {
                set_error(format!("serializing metadata: {e}"));
                std::ptr::null_mut()
            }
        }
    })
}

/// Free a string returned by `textlens_adapter_v1_metadata`. Null is
/// ignored.
///
/// # Safety
/// `s` must come from this plugin and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn textlens_adapter_v1_string_free(s: *mut c_char) {
    tl_string_free(s);
}

/// Run the prompt and write the recorded trace archive into `out_dir`.
/// Returns 0 on success, nonzero on failure.
///
/// # Safety
/// `handle` must be a live session; `tokens` must point to `n_tokens`
/// values; `out_dir` must be a NUL-terminated path to a writable directory.
#[no_mangle]
pub unsafe extern "C" fn textlens_adapter_v1_prefill(
    handle: *mut c_void,
    tokens: *const u32,
    n_tokens: usize,
    out_dir: *const c_char,
) -> i32 {
    let r = catch_unwind(AssertUnwindSafe(|| {
        let s = match session(handle) {
            Ok(s) => s,
            Err(()) => return -1,
        };
        if out_dir.is_null() {
            set_error("out_dir is null");
            return -1;
        }
        let dir = match CStr::from_ptr(out_dir).to_str() {
            Ok(d) => d,
            Err(_) => {
                set_error("out_dir is not valid UTF-8");
                return -1;
            }
        };
        let prompt = if n_tokens == 0 {
            &[][..]
        } else if tokens.is_null() {
            set_error("tokens is null");
            return -1;
        } else {
            std::slice::from_raw_parts(tokens, n_tokens)
        };
        let trace = match s.model.prefill(prompt) {
            Ok(t) => t,
            Err(e) => {
                set_error(e.to_string());
                return -1;
            }
        };
        match write_trace(&trace, std::path::Path::new(dir)) {
            Ok(()) => 0,
            Err(e) => {
                set_error(e.to_string());
                -1
            }
        }
    }));
    match r {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic reached the C boundary");
            -1
        }
    }
}

/// Advance one generated token. `out_hidden` receives `(layers + 1) *
/// d_model` floats, embeddings row first; `out_logits` receives `vocab`
/// floats. Returns 0 on success, nonzero on failure.
///
/// # Safety
/// `handle` must be a live session; the out buffers must hold `hidden_len`
/// and `logits_len` floats respectively.
#[no_mangle]
pub unsafe extern "C" fn textlens_adapter_v1_step(
    handle: *mut c_void,
    token: u32,
    out_hidden: *mut f32,
    hidden_len: usize,
    out_logits: *mut f32,
    logits_len: usize,
) -> i32 {
    let r = catch_unwind(AssertUnwindSafe(|| {
        let s = match session(handle) {
            Ok(s) => s,
            Err(()) => return -1,
        };
        let (layers, d_model, vocab) = s.dims;
        let want_hidden = (layers + 1) * d_model;
        if hidden_len != want_hidden || logits_len != vocab {
            set_error(format!(
                "step buffers: got hidden {hidden_len} / logits {logits_len}, \
                 need hidden {want_hidden} / logits {vocab}"
            ));
            return -1;
        }
        if out_hidden.is_null() || out_logits.is_null() {
            set_error("step output buffer is null");
            return -1;
        }
        let step = match s.model.step(token) {
            Ok(o) => o,
            Err(e) => {
                set_error(e.to_string());
                return -1;
            }
        };
        let hidden = std::slice::from_raw_parts_mut(out_hidden, hidden_len);
        for (row, chunk) in step.hidden_states.iter().zip(hidden.chunks_mut(d_model)) {
            chunk.copy_from_slice(row);
        }
        std::slice::from_raw_parts_mut(out_logits, logits_len).copy_from_slice(&step.logits);
        0
    }));
    match r {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic reached the C boundary");
            -1
        }
    }
}
