//! Trace providers: the seam between analysis code and an actual model
//! runtime.
//!
//! A provider owns one decoding session. `prefill` runs the full prompt and
//! returns the recorded [`MultimodalTrace`]; `step` advances one generated
//! token and reports the new position's per-layer hidden states plus logits.
//! The built-in toy decoder implements the trait natively; real runtimes
//! attach as shared-library plugins speaking the versioned C contract
//! documented at [`plugin`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toy::{ToyModel, ToyParams};
use crate::trace::{MultimodalTrace, TokenLayout};

/// Static description of a provider.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub model_id: String,
    /// Token layout of the most recent prefill (query range empty before the
    /// first prefill).
    pub layout: TokenLayout,
    pub vocab: usize,
    /// Token that ends generation, if the model has one.
    pub eos_token_id: Option<u32>,
    /// Whether several instances of this provider may run concurrently in
    /// one process. The benchmark harness serializes providers that say no.
    pub parallel_safe: bool,
}

/// Hidden states and logits for one newly decoded position.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// L+1 vectors of length d_model: embeddings first, then each layer's
    /// output; the last entry is what the output head consumes.
    pub hidden_states: Vec<Vec<f32>>,
    /// Logits over the vocabulary for the *next* token.
    ///
    /// Contract: these must equal `output_head.project(hidden_states.last())`
    /// for the head recorded in the prefill trace, so that a zero-strength
    /// correction reproduces the provider's native decode bit-for-bit.
    pub logits: Vec<f32>,
}

/// One autoregressive decoding session that exposes its internals.
pub trait TraceProvider {
    fn metadata(&self) -> ProviderInfo;

    /// Run the prompt, reset any previous session, and return the full trace.
    fn prefill(&mut self, prompt_tokens: &[u32]) -> Result<MultimodalTrace>;

    /// Advance one token. Requires a prior `prefill`.
    fn step(&mut self, token: u32) -> Result<StepOutput>;
}

/// Factory used when the harness needs one provider per worker thread.
pub type ProviderFactory<'a> = &'a (dyn Fn() -> Result<Box<dyn TraceProvider>> + Sync);

/// Name of the built-in provider.
pub const TOY_PROVIDER: &str = "toy";

/// Environment variable holding a `:`-separated plugin search path.
pub const ADAPTER_PATH_ENV: &str = "TEXTLENS_ADAPTER_PATH";

/// Instantiate a provider by name.
///
/// `"toy"` builds the in-process toy decoder from `params_json` (see
/// [`ToyParams`]). Any other name is resolved to a shared library — the name
/// itself if it contains a path separator or `.so`, otherwise
/// `lib<name>.so` / `<name>.so` tried against each entry of `search_paths`.
pub fn load_provider(
    name: &str,
    params_json: &str,
    search_paths: &[PathBuf],
) -> Result<Box<dyn TraceProvider>> {
    if name == TOY_PROVIDER {
        let params = ToyParams::from_json(params_json)?;
        return Ok(Box::new(ToyModel::new(params)?));
    }
    let lib_path = find_plugin(name, search_paths)?;
    Ok(Box::new(plugin::PluginProvider::open(&lib_path, params_json)?))
}

/// Search-path list for plugins: the environment variable first, then the
/// current directory.
pub fn default_search_paths() -> Vec<PathBuf> {
    let mut paths = Vec::new();
    if let Ok(raw) = std::env::var(ADAPTER_PATH_ENV) {
        for part in raw.split(':').filter(|p| !p.is_empty()) {
            paths.push(PathBuf::from(part));
        }
    }
    paths.push(PathBuf::from("."));
    paths
}

fn find_plugin(name: &str, search_paths: &[PathBuf]) -> Result<PathBuf> {
    if name.contains(std::path::MAIN_SEPARATOR) || name.ends_with(".so") {
        let p = PathBuf::from(name);
        if p.exists() {
            return Ok(p);
        }
        return Err(Error::Adapter(format!("plugin library {name:?} not found")));
    }
    let candidates = [format!("lib{name}.so"), format!("{name}.so")];
    for dir in search_paths {
        for c in &candidates {
            let p = dir.join(c);
            if p.exists() {
                return Ok(p);
            }
        }
    }
    Err(Error::Adapter(format!(
        "no plugin named {name:?} under {search_paths:?} (set {ADAPTER_PATH_ENV})"
    )))
}

/// The C plugin contract, version 1.
///
/// A plugin is a shared library exporting the symbols below with C linkage.
/// All functions must be callable from any thread; a handle is used from one
/// thread at a time.
///
/// ```c
/// // Must return 1 (the contract version this module implements).
/// uint32_t textlens_adapter_v1_version(void);
///
/// // Create a session from a UTF-8 JSON config; NULL on failure (see
/// // ..._last_error). The config schema is plugin-defined.
/// void *textlens_adapter_v1_create(const char *config_json);
/// void  textlens_adapter_v1_destroy(void *handle);
///
/// // Thread-local message for the most recent failure, or NULL.
/// const char *textlens_adapter_v1_last_error(void);
///
/// // ProviderInfo as JSON (model_id, layout, vocab, eos_token_id,
/// // parallel_safe); free with ..._string_free. NULL on failure.
/// char *textlens_adapter_v1_metadata(void *handle);
/// void  textlens_adapter_v1_string_free(char *s);
///
/// // Run the prompt and write a trace archive into out_dir (an existing,
/// // empty directory). Returns 0 on success.
/// int32_t textlens_adapter_v1_prefill(void *handle, const uint32_t *tokens,
///                                     size_t n_tokens, const char *out_dir);
///
/// // Advance one token. out_hidden receives (L+1)*d_model floats
/// // (embeddings row first); out_logits receives vocab floats. The caller
/// // sizes both from the prefill trace. Returns 0 on success.
/// int32_t textlens_adapter_v1_step(void *handle, uint32_t token,
///                                  float *out_hidden, size_t hidden_len,
///                                  float *out_logits, size_t logits_len);
/// ```
///
/// The host reads the archive `prefill` wrote and deletes the directory
/// afterwards; the archive format is the same one `write_trace` produces.
pub mod plugin {
    use super::*;
    use std::ffi::{c_char, c_void, CStr, CString};

    pub const CONTRACT_VERSION: u32 = 1;

    pub const SYM_VERSION: &[u8] = b"textlens_adapter_v1_version";
    pub const SYM_CREATE: &[u8] = b"textlens_adapter_v1_create";
    pub const SYM_DESTROY: &[u8] = b"textlens_adapter_v1_destroy";
    pub const SYM_LAST_ERROR: &[u8] = b"textlens_adapter_v1_last_error";
    pub const SYM_METADATA: &[u8] = b"textlens_adapter_v1_metadata";
    pub const SYM_STRING_FREE: &[u8] = b"textlens_adapter_v1_string_free";
    pub const SYM_PREFILL: &[u8] = b"textlens_adapter_v1_prefill";
    pub const SYM_STEP: &[u8] = b"textlens_adapter_v1_step";

    type VersionFn = unsafe extern "C" fn() -> u32;
    type CreateFn = unsafe extern "C" fn(*const c_char) -> *mut c_void;
    type DestroyFn = unsafe extern "C" fn(*mut c_void);
    type LastErrorFn = unsafe extern "C" fn() -> *const c_char;
    type MetadataFn = unsafe extern "C" fn(*mut c_void) -> *mut c_char;
    type StringFreeFn = unsafe extern "C" fn(*mut c_char);
    type PrefillFn =
        unsafe extern "C" fn(*mut c_void, *const u32, usize, *const c_char) -> i32;
    type StepFn =
        unsafe extern "C" fn(*mut c_void, u32, *mut f32, usize, *mut f32, usize) -> i32;

    /// A provider backed by a loaded plugin library.
    pub struct PluginProvider {
        lib: libloading::Library,
        handle: *mut c_void,
        info: ProviderInfo,
        /// (n_layers, d_model, vocab) of the most recent prefill.
        dims: Option<(usize, usize, usize)>,
        lib_path: PathBuf,
    }

    impl PluginProvider {
        pub fn open(lib_path: &Path, params_json: &str) -> Result<Self> {
            let lib = unsafe { libloading::Library::new(lib_path) }.map_err(|e| {
                Error::Adapter(format!("loading {}: {e}", lib_path.display()))
            })?;
            let version = unsafe {
                lib.get::<VersionFn>(SYM_VERSION)
                    .map_err(|e| Error::Adapter(format!("{}: {e}", lib_path.display())))
                    .map(|f| f())?
            };
            if version != CONTRACT_VERSION {
                return Err(Error::Adapter(format!(
                    "{} speaks contract v{version}, host wants v{CONTRACT_VERSION}",
                    lib_path.display()
                )));
            }
            let cfg = CString::new(params_json)
                .map_err(|_| Error::Adapter("config JSON contains NUL".into()))?;
            let handle = unsafe {
                let create = lib
                    .get::<CreateFn>(SYM_CREATE)
                    .map_err(|e| Error::Adapter(format!("{}: {e}", lib_path.display())))?;
                create(cfg.as_ptr())
            };
            let mut p = PluginProvider {
                lib,
                handle,
                info: ProviderInfo {
                    model_id: String::new(),
                    layout: TokenLayout::contiguous(1, 1, 1, 0),
                    vocab: 0,
                    eos_token_id: None,
                    parallel_safe: false,
                },
                dims: None,
                lib_path: lib_path.to_path_buf(),
            };
            if p.handle.is_null() {
                return Err(Error::Adapter(format!(
                    "{}: create failed: {}",
                    lib_path.display(),
                    p.take_last_error()
                )));
            }
            p.info = p.fetch_metadata()?;
            Ok(p)
        }

        fn take_last_error(&self) -> String {
            unsafe {
                match self.lib.get::<LastErrorFn>(SYM_LAST_ERROR) {
                    Ok(f) => {
                        let ptr = f();
                        if ptr.is_null() {
                            "(no message)".into()
                        } else {
                            CStr::from_ptr(ptr).to_string_lossy().into_owned()
                        }
                    }
                    Err(_) => "(plugin has no last_error symbol)".into(),
                }
            }
        }

        fn fail(&self, what: &str) -> Error {
            Error::Adapter(format!(
                "{}: {what}: {}",
                self.lib_path.display(),
                self.take_last_error()
            ))
        }

        fn fetch_metadata(&self) -> Result<ProviderInfo> {
            unsafe {
                let f = self
                    .lib
                    .get::<MetadataFn>(SYM_METADATA)
                    .map_err(|e| Error::Adapter(e.to_string()))?;
                let ptr = f(self.handle);
                if ptr.is_null() {
                    return Err(self.fail("metadata"));
                }
                let json = CStr::from_ptr(ptr).to_string_lossy().into_owned();
                let free = self
                    .lib
                    .get::<StringFreeFn>(SYM_STRING_FREE)
                    .map_err(|e| Error::Adapter(e.to_string()))?;
                free(ptr);
                serde_json::from_str(&json)
                    .map_err(|e| Error::Adapter(format!("metadata JSON: {e}")))
            }
        }
    }

    impl Drop for PluginProvider {
        fn drop(&mut self) {
            if !self.handle.is_null() {
                unsafe {
                    if let Ok(f) = self.lib.get::<DestroyFn>(SYM_DESTROY) {
                        f(self.handle);
                    }
                }
            }
        }
    }

    impl TraceProvider for PluginProvider {
        fn metadata(&self) -> ProviderInfo {
            self.info.clone()
        }

        fn prefill(&mut self, prompt_tokens: &[u32]) -> Result<MultimodalTrace> {
            let dir = tempfile::Builder::new()
                .prefix("textlens-plugin-")
                .tempdir()
                .map_err(|e| Error::Adapter(format!("temp dir: {e}")))?;
            let cdir = CString::new(dir.path().to_string_lossy().into_owned())
                .map_err(|_| Error::Adapter("temp path contains NUL".into()))?;
            let status = unsafe {
                let f = self
                    .lib
                    .get::<PrefillFn>(SYM_PREFILL)
                    .map_err(|e| Error::Adapter(e.to_string()))?;
                f(self.handle, prompt_tokens.as_ptr(), prompt_tokens.len(), cdir.as_ptr())
            };
            if status != 0 {
                return Err(self.fail(&format!("prefill (status {status})")));
            }
            let trace = crate::trace::read_trace(dir.path())?;
            self.dims = Some((trace.n_layers(), trace.d_model(), trace.output_head().vocab));
            self.info = self.fetch_metadata()?;
            Ok(trace)
        }

        fn step(&mut self, token: u32) -> Result<StepOutput> {
            let (layers, d_model, vocab) = self
                .dims
                .ok_or_else(|| Error::Adapter("step before prefill".into()))?;
            let mut hidden = vec![0.0f32; (layers + 1) * d_model];
            let mut logits = vec![0.0f32; vocab];
            let status = unsafe {
                let f = self
                    .lib
                    .get::<StepFn>(SYM_STEP)
                    .map_err(|e| Error::Adapter(e.to_string()))?;
                f(
                    self.handle,
                    token,
                    hidden.as_mut_ptr(),
                    hidden.len(),
                    logits.as_mut_ptr(),
                    logits.len(),
                )
            };
            if status != 0 {
                return Err(self.fail(&format!("step (status {status})")));
            }
            let hidden_states = hidden.chunks(d_model).map(|c| c.to_vec()).collect();
            Ok(StepOutput { hidden_states, logits })
        }
    }
}
