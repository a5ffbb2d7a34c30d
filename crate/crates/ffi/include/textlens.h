#ifndef TEXTLENS_H
#define TEXTLENS_H

/* Generated by cbindgen from the textlens-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>


// Result of every fallible `tl_*` call.
//
// `TL_STATUS_OK` is zero; anything else indicates failure and leaves a
// message for `tl_last_error_message`.
typedef enum TlStatus {
  TL_STATUS_OK = 0,
  // A required pointer argument was null.
  TL_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  TL_STATUS_INVALID_UTF8 = 2,
  // An argument failed validation (bad range, malformed JSON, ...).
  TL_STATUS_INVALID_ARGUMENT = 3,
  // Input was structurally fine but unusable (empty set, undefined
  // metric, malformed archive, ...).
  TL_STATUS_DATA_ERROR = 4,
  // A trace provider (built-in or plugin) reported a failure.
  TL_STATUS_ADAPTER_ERROR = 5,
  // Filesystem access failed.
  TL_STATUS_IO_ERROR = 6,
  // A caller-supplied buffer length does not match the required size.
  TL_STATUS_SIZE_MISMATCH = 7,
  // The library caught an internal panic at the boundary.
  TL_STATUS_PANIC = 8,
} TlStatus;

// One decoding session of a trace provider (the built-in toy decoder or a
// shared-library plugin). Created by `tl_adapter_open`; destroyed by
// `tl_adapter_free`.
typedef struct TlAdapter TlAdapter;

// An ordered set of image-token positions with scores. Created by
// `tl_boxes_to_tokens`, `tl_glimpse`, or `tl_refocus`; destroyed by
// `tl_selection_free`.
typedef struct TlSelection TlSelection;

// A loaded trace archive: attention, hidden states, token layout, output
// head. Created by `tl_trace_read`, `tl_toy_trace`, or `tl_adapter_prefill`;
// destroyed by `tl_trace_free`.
typedef struct TlTrace TlTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version of this library as a static NUL-terminated string. Never free it.
const char *tl_version(void);

// Message for the most recent failure on this thread, or null if none.
// The pointer stays valid until the next failing call on the same thread;
// never free it.
const char *tl_last_error_message(void);

// Free a string the library returned through a `char **` out-parameter.
// Null is ignored.
//
// # Safety
// `s` must be a pointer previously returned by this library and not yet
// freed.
void tl_string_free(char *s);

// JSON Schema describing one line of a benchmark manifest, as a static
// NUL-terminated string. Never free it.
const char *tl_manifest_schema(void);

// Default correction configuration as a JSON string. Free with
// `tl_string_free`. The same JSON shape is accepted by
// `tl_adapter_decode_with_correction`; absent fields keep their defaults.
//
// # Safety
// `out_json` must be a valid pointer.
enum TlStatus tl_default_config_json(char **out_json);

// Read a trace archive directory into a new `TlTrace` handle.
//
// # Safety
// `path` must be a NUL-terminated string, `out_trace` a valid pointer.
enum TlStatus tl_trace_read(const char *path, struct TlTrace **out_trace);

// Write the trace as an archive directory at `path`, replacing any archive
// already there.
//
// # Safety
// `trace` must be a live handle, `path` a NUL-terminated string.
enum TlStatus tl_trace_write(const struct TlTrace *trace, const char *path);

// Destroy a trace handle. Null is ignored.
//
// # Safety
// `trace` must be a live handle from this library or null.
void tl_trace_free(struct TlTrace *trace);

// Run the built-in toy decoder's prefill on `prompt` and return the trace.
// `params_json` configures the decoder (layers, heads, d_model, vocab,
// n_image_tokens, seed, eos_token_id); null or empty means defaults.
//
// # Safety
// `prompt` must point to `n_prompt` tokens; `out_trace` must be valid.
enum TlStatus tl_toy_trace(const char *params_json,
                           const uint32_t *prompt,
                           size_t n_prompt,
                           struct TlTrace **out_trace);

// Report the trace's dimensions. Any out-pointer may be null to skip it.
//
// # Safety
// `trace` must be a live handle; non-null out-pointers must be valid.
enum TlStatus tl_trace_dims(const struct TlTrace *trace,
                            size_t *out_layers,
                            size_t *out_seq,
                            size_t *out_d_model,
                            size_t *out_vocab);

// Content digest of the trace as a lowercase hex string. Free with
// `tl_string_free`.
//
// # Safety
// `trace` must be a live handle, `out_hex` a valid pointer.
enum TlStatus tl_trace_digest_hex(const struct TlTrace *trace, char **out_hex);

// Model identifier recorded in the trace. Free with `tl_string_free`.
//
// # Safety
// `trace` must be a live handle, `out_id` a valid pointer.
enum TlStatus tl_trace_model_id(const struct TlTrace *trace, char **out_id);

// Token layout of the trace (image/query ranges, patch grid, image size)
// as a JSON object. Free with `tl_string_free`.
//
// # Safety
// `trace` must be a live handle, `out_json` a valid pointer.
enum TlStatus tl_trace_layout_json(const struct TlTrace *trace, char **out_json);

// Copy the trace's token ids into `out_ids`, which must hold exactly
// `seq_len` elements (see `tl_trace_dims`).
//
// # Safety
// `trace` must be a live handle; `out_ids` must point to `len` elements.
enum TlStatus tl_trace_token_ids(const struct TlTrace *trace, uint32_t *out_ids, size_t len);

// Map annotated text boxes to the image tokens they overlap.
//
// `corners` holds `n_boxes` quadrilaterals as 8 doubles each
// (x0,y0,x1,y1,x2,y2,x3,y3 in pixel coordinates). The resulting selection
// is scored by overlap count and sorted by descending score.
//
// # Safety
// `trace` must be a live handle; `corners` must point to `n_boxes * 8`
// doubles; `out_selection` must be valid.
enum TlStatus tl_boxes_to_tokens(const struct TlTrace *trace,
                                 const double *corners,
                                 size_t n_boxes,
                                 struct TlSelection **out_selection);

// Compute the glimpse map over image tokens and its top-`k` selection.
//
// If `out_scores` is non-null it receives the full per-token map and
// `scores_len` must equal the layout's image-token count. `out_selection`
// may be null when only the map is wanted.
//
// # Safety
// `trace` must be a live handle; non-null out-pointers must be valid and
// `out_scores`, when given, must hold `scores_len` doubles.
enum TlStatus tl_glimpse(const struct TlTrace *trace,
                         size_t k,
                         double *out_scores,
                         size_t scores_len,
                         struct TlSelection **out_selection);

// Narrow a candidate selection by cross-layer attention shift, keeping
// `ceil(keep_fraction * len)` tokens. `epsilon` stabilizes the shift
// denominator and must be positive; `keep_fraction` must be in (0, 1].
//
// # Safety
// `trace` and `candidates` must be live handles; `out_selection` must be
// valid.
enum TlStatus tl_refocus(const struct TlTrace *trace,
                         const struct TlSelection *candidates,
                         double epsilon,
                         double keep_fraction,
                         struct TlSelection **out_selection);

// Number of tokens in a selection; 0 for null.
//
// # Safety
// `selection` must be a live handle or null.
size_t tl_selection_len(const struct TlSelection *selection);

// Copy a selection's token indices and/or scores. Either out-pointer may
// be null to skip it; `len` must equal `tl_selection_len`.
//
// # Safety
// `selection` must be a live handle; non-null out-pointers must hold `len`
// elements.
enum TlStatus tl_selection_items(const struct TlSelection *selection,
                                 size_t *out_indices,
                                 float *out_scores,
                                 size_t len);

// Intersection-over-union of two selections' index sets. Both empty
// yields 1.
//
// # Safety
// `a` and `b` must be live handles; `out_iou` must be valid.
enum TlStatus tl_selection_iou(const struct TlSelection *a,
                               const struct TlSelection *b,
                               double *out_iou);

// Destroy a selection handle. Null is ignored.
//
// # Safety
// `selection` must be a live handle from this library or null.
void tl_selection_free(struct TlSelection *selection);

// Pick the layer whose attention is most grounded in `regions` (ties go to
// the lowest index). If `out_scores` is non-null it receives the per-layer
// grounding scores and `scores_len` must equal the trace's layer count.
//
// # Safety
// `trace` and `regions` must be live handles; `out_layer` must be valid;
// `out_scores`, when given, must hold `scores_len` doubles.
enum TlStatus tl_select_grounded_layer(const struct TlTrace *trace,
                                       const struct TlSelection *regions,
                                       size_t *out_layer,
                                       double *out_scores,
                                       size_t scores_len);

// Share of one layer's attention mass that lands on the selected text
// regions, averaged over heads. `out_degenerate` (nullable) is set when
// the denominator vanished and the value defaulted to 0.
//
// # Safety
// `trace` and `regions` must be live handles; `out_value` must be valid.
enum TlStatus tl_text_region_attention(const struct TlTrace *trace,
                                       size_t layer,
                                       const struct TlSelection *regions,
                                       double *out_value,
                                       bool *out_degenerate);

// Per-layer tendency of the decoder toward a hallucinated token over the
// ground-truth token at one generated position, read through the output
// head. `position` indexes the generated suffix of length `generated_len`;
// `out_profile` must hold exactly one value per layer.
//
// # Safety
// `trace` must be a live handle; `out_profile` must hold `profile_len`
// doubles.
enum TlStatus tl_tendency_profile(const struct TlTrace *trace,
                                  size_t position,
                                  uint32_t hallucinated_token,
                                  uint32_t ground_truth_token,
                                  size_t generated_len,
                                  double *out_profile,
                                  size_t profile_len);

// Coefficient of variation of one image token's received attention across
// layers (head-averaged column mass per layer).
//
// # Safety
// `trace` must be a live handle; `out_cv` must be valid.
enum TlStatus tl_attention_cv(const struct TlTrace *trace, size_t token_index, double *out_cv);

// Spearman rank correlation with midrank ties. When either input has zero
// rank variance the coefficient is undefined: `out_defined` is set false
// and `out_rho` to NaN.
//
// # Safety
// `xs` and `ys` must each point to `len` doubles; `out_rho` and
// `out_defined` must be valid.
enum TlStatus tl_spearman(const double *xs,
                          const double *ys,
                          size_t len,
                          double *out_rho,
                          bool *out_defined);

// Multiset word-spotting precision/recall/F1 after normalization (strip
// non-alphanumeric edges, lowercase). Any out-pointer may be null.
//
// # Safety
// `predicted` and `ground_truth` must point to `n_predicted` /
// `n_ground_truth` NUL-terminated strings; non-null out-pointers must be
// valid.
enum TlStatus tl_spotting_f1(const char *const *predicted,
                             size_t n_predicted,
                             const char *const *ground_truth,
                             size_t n_ground_truth,
                             double *out_precision,
                             double *out_recall,
                             double *out_f1);

// Open a trace provider by name. `"toy"` builds the in-process toy decoder
// from `params_json`; any other name loads a shared-library plugin.
// `search_paths` is a `:`-separated directory list for plugin lookup; null
// means the `TEXTLENS_ADAPTER_PATH` environment variable followed by the
// current directory.
//
// # Safety
// `name` must be NUL-terminated; `out_adapter` must be valid.
enum TlStatus tl_adapter_open(const char *name,
                              const char *params_json,
                              const char *search_paths,
                              struct TlAdapter **out_adapter);

// Destroy an adapter handle. Null is ignored.
//
// # Safety
// `adapter` must be a live handle from this library or null.
void tl_adapter_free(struct TlAdapter *adapter);

// Provider metadata (model_id, token layout, vocab, eos_token_id,
// parallel_safe) as JSON. Free with `tl_string_free`.
//
// # Safety
// `adapter` must be a live handle; `out_json` must be valid.
enum TlStatus tl_adapter_metadata_json(const struct TlAdapter *adapter, char **out_json);

// Run the adapter's prefill on `prompt` and return the recorded trace.
//
// # Safety
// `adapter` must be a live handle; `prompt` must point to `n_prompt`
// tokens; `out_trace` must be valid.
enum TlStatus tl_adapter_prefill(struct TlAdapter *adapter,
                                 const uint32_t *prompt,
                                 size_t n_prompt,
                                 struct TlTrace **out_trace);

// Greedy decode up to `max_new_tokens` tokens (stopping at EOS if the
// provider declares one). `out_tokens` must have capacity for
// `max_new_tokens`; `*out_len` receives the count actually generated.
//
// # Safety
// `adapter` must be a live handle; `prompt` must point to `n_prompt`
// tokens; `out_tokens` must hold `out_capacity` elements; `out_len` must
// be valid.
enum TlStatus tl_adapter_greedy_decode(struct TlAdapter *adapter,
                                       const uint32_t *prompt,
                                       size_t n_prompt,
                                       size_t max_new_tokens,
                                       uint32_t *out_tokens,
                                       size_t out_capacity,
                                       size_t *out_len);

// Decode with grounded-layer correction. `config_json` follows the shape
// of `tl_default_config_json` (null or empty means defaults). If
// `out_outcome_json` is non-null it receives a JSON report of the selected
// layer, per-layer grounding, chosen tokens, and corrected positions; free
// it with `tl_string_free`.
//
// # Safety
// `adapter` must be a live handle; `prompt` must point to `n_prompt`
// tokens; `out_tokens` must hold `out_capacity` elements; `out_len` must
// be valid.
enum TlStatus tl_adapter_decode_with_correction(struct TlAdapter *adapter,
                                                const uint32_t *prompt,
                                                size_t n_prompt,
                                                const char *config_json,
                                                size_t max_new_tokens,
                                                uint32_t *out_tokens,
                                                size_t out_capacity,
                                                size_t *out_len,
                                                char **out_outcome_json);

// Plugin contract version implemented by this library.
uint32_t textlens_adapter_v1_version(void);

// Create a toy-decoder session from a JSON config (layers, heads, d_model,
// vocab, n_image_tokens, seed, eos_token_id; all optional). Returns null
// on failure — see `textlens_adapter_v1_last_error`.
//
// # Safety
// `config_json` must be NUL-terminated or null (null means defaults).
void *textlens_adapter_v1_create(const char *config_json);

// Destroy a session created by `textlens_adapter_v1_create`. Null is
// ignored.
//
// # Safety
// `handle` must come from `textlens_adapter_v1_create` and not be used
// afterwards.
void textlens_adapter_v1_destroy(void *handle);

// Thread-local message for the most recent plugin failure, or null.
const char *textlens_adapter_v1_last_error(void);

// Provider metadata as JSON (model_id, layout, vocab, eos_token_id,
// parallel_safe). Free with `textlens_adapter_v1_string_free`. Null on
// failure.
//
// # Safety
// `handle` must be a live session.
char *textlens_adapter_v1_metadata(void *handle);

// Free a string returned by `textlens_adapter_v1_metadata`. Null is
// ignored.
//
// # Safety
// `s` must come from this plugin and not be freed twice.
void textlens_adapter_v1_string_free(char *s);

// Run the prompt and write the recorded trace archive into `out_dir`.
// Returns 0 on success, nonzero on failure.
//
// # Safety
// `handle` must be a live session; `tokens` must point to `n_tokens`
// values; `out_dir` must be a NUL-terminated path to a writable directory.
int32_t textlens_adapter_v1_prefill(void *handle,
                                    const uint32_t *tokens,
                                    size_t n_tokens,
                                    const char *out_dir);

// Advance one generated token. `out_hidden` receives `(layers + 1) *
// d_model` floats, embeddings row first; `out_logits` receives `vocab`
// floats. Returns 0 on success, nonzero on failure.
//
// # Safety
// `handle` must be a live session; the out buffers must hold `hidden_len`
// and `logits_len` floats respectively.
int32_t textlens_adapter_v1_step(void *handle,
                                 uint32_t token,
                                 float *out_hidden,
                                 size_t hidden_len,
                                 float *out_logits,
                                 size_t logits_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TEXTLENS_H */
