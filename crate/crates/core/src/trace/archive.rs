//! On-disk trace archives.
//!
//! An archive is a directory holding `manifest.json` plus one raw `.f32`
//! file per tensor (little-endian IEEE-754 float32, row-major, no header).
//! The manifest carries `format_version`, `model_id`, `dtype`,
//! `endianness`, `layout`, and a `tensors` table mapping tensor name to
//! `{file, shape}`. Token ids ride along as the `token_ids` tensor (exact
//! for ids below 2^24). The format is deliberately dumb so any language can
//! read it with a JSON parser and a byte swap.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{
    AttentionTensor, HiddenStateTensor, MultimodalTrace, OutputHead, TokenLayout,
};

pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f32";
const ENDIANNESS: &str = "little";
/// Largest token id the f32-backed `token_ids` tensor can hold exactly.
const MAX_EXACT_TOKEN_ID: u32 = 1 << 24;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model_id: String,
    dtype: String,
    endianness: String,
    layout: TokenLayout,
    tensors: BTreeMap<String, TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    file: String,
    shape: Vec<usize>,
}

fn f32s_to_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn bytes_to_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Serialize `trace` to the archive directory at `path`.
///
/// The archive is first assembled in a temporary sibling directory and then
/// renamed into place, so readers never observe a half-written archive. An
/// existing archive at `path` is replaced.
pub fn write_trace(trace: &MultimodalTrace, path: &Path) -> Result<()> {
    trace.validate()?;
    if let Some(&id) = trace.token_ids().iter().find(|&&id| id > MAX_EXACT_TOKEN_ID) {
        return Err(Error::validation(format!(
            "token id {id} exceeds {MAX_EXACT_TOKEN_ID} and cannot be stored exactly"
        )));
    }

    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::validation(format!("archive path {} has no file name", path.display())))?;
    let unique = format!(
        ".{}.tmp-{}-{}",
        name.to_string_lossy(),
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0)
    );
    let tmp = parent.join(unique);
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;

    let result = write_archive_contents(trace, &tmp).and_then(|()| {
        if path.exists() {
            fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    });
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    result
}

fn write_archive_contents(trace: &MultimodalTrace, dir: &Path) -> Result<()> {
    let mut tensors = BTreeMap::new();
    let mut emit = |name: &str, shape: Vec<usize>, values: &[f32]| -> Result<()> {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        let file = format!("{name}.f32");
        let fp = dir.join(&file);
        let mut w = fs::File::create(&fp).map_err(|e| Error::io(&fp, e))?;
        w.write_all(&f32s_to_bytes(values)).map_err(|e| Error::io(&fp, e))?;
        tensors.insert(name.to_string(), TensorEntry { file, shape });
        Ok(())
    };

    for a in trace.attentions() {
        emit(
            &format!("attention_{}", a.layer_index),
            vec![a.heads, a.seq, a.seq],
            a.weights(),
        )?;
    }
    for h in trace.hidden_states() {
        emit(
            &format!("hidden_{}", h.layer_index),
            vec![h.seq, h.d_model],
            h.states(),
        )?;
    }
    let head = trace.output_head();
    emit("head_weight", vec![head.vocab, head.d_model], head.weight())?;
    emit("head_bias", vec![head.vocab], head.bias())?;
    emit("head_norm", vec![head.d_model], head.final_norm_gain())?;
    let ids: Vec<f32> = trace.token_ids().iter().map(|&id| id as f32).collect();
    emit("token_ids", vec![ids.len()], &ids)?;

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model_id: trace.model_id().to_string(),
        dtype: DTYPE.to_string(),
        endianness: ENDIANNESS.to_string(),
        layout: trace.layout().clone(),
        tensors,
    };
    let mp = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::validation(format!("manifest serialization: {e}")))?;
    fs::write(&mp, json).map_err(|e| Error::io(&mp, e))
}

/// Load the trace archive at `path`, validating every invariant on the way.
pub fn read_trace(path: &Path) -> Result<MultimodalTrace> {
    let mp = path.join("manifest.json");
    let mut raw = String::new();
    fs::File::open(&mp)
        .and_then(|mut f| f.read_to_string(&mut raw))
        .map_err(|e| Error::io(&mp, e))?;
    let manifest: Manifest = serde_json::from_str(&raw)
        .map_err(|e| Error::validation(format!("{}: bad manifest: {e}", mp.display())))?;

    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::validation(format!(
            "unsupported archive format_version {}",
            manifest.format_version
        )));
    }
    if manifest.dtype != DTYPE {
        return Err(Error::validation(format!("unsupported dtype {:?}", manifest.dtype)));
    }
    if manifest.endianness != ENDIANNESS {
        return Err(Error::validation(format!(
            "unsupported endianness {:?}",
            manifest.endianness
        )));
    }

    let load = |name: &str, want_rank: usize| -> Result<(Vec<usize>, Vec<f32>)> {
        let entry = manifest
            .tensors
            .get(name)
            .ok_or_else(|| Error::validation(format!("archive missing tensor {name:?}")))?;
        if entry.shape.len() != want_rank {
            return Err(Error::validation(format!(
                "tensor {name:?} has rank {}, expected {want_rank}",
                entry.shape.len()
            )));
        }
        let fp = path.join(&entry.file);
        let bytes = fs::read(&fp).map_err(|e| Error::io(&fp, e))?;
        let want: usize = entry.shape.iter().product();
        if bytes.len() != want * 4 {
            return Err(Error::validation(format!(
                "tensor {name:?}: file holds {} bytes, shape {:?} needs {}",
                bytes.len(),
                entry.shape,
                want * 4
            )));
        }
        Ok((entry.shape.clone(), bytes_to_f32s(&bytes)))
    };

    let n_layers = manifest
        .tensors
        .keys()
        .filter(|k| k.starts_with("attention_"))
        .count();
    if n_layers == 0 {
        return Err(Error::validation("archive declares no attention tensors"));
    }

    let mut attentions = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (shape, values) = load(&format!("attention_{l}"), 3)?;
        attentions.push(AttentionTensor::new(l, shape[0], shape[1], values)?);
    }
    let mut hidden = Vec::with_capacity(n_layers + 1);
    for l in 0..=n_layers {
        let (shape, values) = load(&format!("hidden_{l}"), 2)?;
        hidden.push(HiddenStateTensor::new(l, shape[0], shape[1], values)?);
    }
    let (wshape, weight) = load("head_weight", 2)?;
    let (_, bias) = load("head_bias", 1)?;
    let (_, norm) = load("head_norm", 1)?;
    let head = OutputHead::new(wshape[0], wshape[1], weight, bias, norm)?;

    let (_, id_floats) = load("token_ids", 1)?;
    let mut token_ids = Vec::with_capacity(id_floats.len());
    for v in id_floats {
        if !v.is_finite() || v.fract() != 0.0 || v < 0.0 || v > MAX_EXACT_TOKEN_ID as f32 {
            return Err(Error::validation(format!("token_ids entry {v} is not a token id")));
        }
        token_ids.push(v as u32);
    }

    MultimodalTrace::new(
        manifest.layout,
        attentions,
        hidden,
        token_ids,
        head,
        manifest.model_id,
    )
}

/// Convenience for tests and the CLI: the manifest path inside an archive.
pub fn manifest_path(archive: &Path) -> PathBuf {
    archive.join("manifest.json")
}
