//! A tiny deterministic decoder-only transformer.
//!
//! This is not a language model anyone would deploy; it exists so every
//! analysis and correction path can be exercised end-to-end — with real
//! softmax attention, real hidden-state trajectories, and a real output
//! head — without weights from disk. Pre-norm RMSNorm blocks, sinusoidal
//! position encodings, SiLU MLP, causal multi-head attention, and a final
//! RMSNorm before the output head, matching the prevailing decoder
//! convention so logit-lens readings behave representatively.
//!
//! All arithmetic accumulates in f64 and is recorded as f32, so identical
//! inputs give bit-identical traces on one platform and agree within 1e-6
//! across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adapters::{ProviderInfo, StepOutput, TraceProvider};
use crate::error::{Error, Result};
use crate::trace::{
    AttentionTensor, HiddenStateTensor, MultimodalTrace, OutputHead, TokenLayout,
};

pub const DEFAULT_PATCH_SIZE: usize = 16;

/// Architecture of the toy decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyArch {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub vocab: usize,
}

impl Default for ToyArch {
    fn default() -> Self {
        // Vocab holds all byte tokens (0..=255) with headroom.
        ToyArch { layers: 4, heads: 2, d_model: 32, vocab: 512 }
    }
}

/// Full construction parameters, also the plugin-config JSON schema for the
/// reference plugin.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyParams {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub vocab: usize,
    pub n_image_tokens: usize,
    pub seed: u64,
    pub eos_token_id: Option<u32>,
}

impl Default for ToyParams {
    fn default() -> Self {
        let a = ToyArch::default();
        ToyParams {
            layers: a.layers,
            heads: a.heads,
            d_model: a.d_model,
            vocab: a.vocab,
            n_image_tokens: 16,
            seed: 7,
            eos_token_id: None,
        }
    }
}

impl ToyParams {
    pub fn from_json(json: &str) -> Result<Self> {
        let trimmed = json.trim();
        if trimmed.is_empty() {
            return Ok(ToyParams::default());
        }
        serde_json::from_str(trimmed)
            .map_err(|e| Error::validation(format!("toy params JSON: {e}")))
    }

    pub fn arch(&self) -> ToyArch {
        ToyArch { layers: self.layers, heads: self.heads, d_model: self.d_model, vocab: self.vocab }
    }
}

/// Factor `n` image tokens into the squarest grid with `grid_w >= grid_h`.
pub fn image_grid(n: usize) -> (usize, usize) {
    let mut h = 1;
    let mut d = 1;
    while d * d <= n {
        if n % d == 0 {
            h = d;
        }
        d += 1;
    }
    (n / h, h)
}

struct LayerWeights {
    wq: Vec<f32>,
    wk: Vec<f32>,
    wv: Vec<f32>,
    wo: Vec<f32>,
    w_up: Vec<f32>,
    w_down: Vec<f32>,
    ln1: Vec<f32>,
    ln2: Vec<f32>,
}

struct ToyWeights {
    tok_embed: Vec<f32>,
    img_embed: Vec<f32>,
    layers: Vec<LayerWeights>,
    final_norm: Vec<f32>,
    w_out: Vec<f32>,
    b_out: Vec<f32>,
}

impl ToyWeights {
    /// Draw every parameter from one ChaCha8 stream seeded with `seed`, in
    /// this fixed order (row-major within each matrix):
    /// token embeddings, image-prefix embeddings, then per layer
    /// Wq, Wk, Wv, Wo, W_up, W_down, then head bias. Normalization gains are
    /// constant 1. Standard deviations: 0.1 for embeddings, 1/sqrt(fan_in)
    /// for matrices, 0.02 for the bias. The output projection reuses the
    /// token embedding matrix (tied head).
    fn draw(params: &ToyParams) -> Self {
        let ToyParams { layers, heads: _, d_model, vocab, n_image_tokens, .. } = *params;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut tensor = |len: usize, std: f64| -> Vec<f32> {
            (0..len)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (z * std) as f32
                })
                .collect()
        };
        let tok_embed = tensor(vocab * d_model, 0.1);
        let img_embed = tensor(n_image_tokens * d_model, 0.1);
        let matrix_std = 1.0 / (d_model as f64).sqrt();
        let hidden = 4 * d_model;
        let layer_weights = (0..layers)
            .map(|_| LayerWeights {
                wq: tensor(d_model * d_model, matrix_std),
                wk: tensor(d_model * d_model, matrix_std),
                wv: tensor(d_model * d_model, matrix_std),
                wo: tensor(d_model * d_model, matrix_std),
                w_up: tensor(hidden * d_model, matrix_std),
                w_down: tensor(d_model * hidden, 1.0 / (hidden as f64).sqrt()),
                ln1: vec![1.0; d_model],
                ln2: vec![1.0; d_model],
            })
            .collect();
        let b_out = tensor(vocab, 0.02);
        ToyWeights {
            w_out: tok_embed.clone(),
            tok_embed,
            img_embed,
            layers: layer_weights,
            final_norm: vec![1.0; d_model],
            b_out,
        }
    }
}

fn matvec(w: &[f32], x: &[f64], out_dim: usize, in_dim: usize) -> Vec<f64> {
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(x.len(), in_dim);
    let mut out = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = 0.0f64;
        for (wi, xi) in row.iter().zip(x) {
            acc += f64::from(*wi) * xi;
        }
        out.push(acc);
    }
    out
}

fn rmsnorm(x: &[f64], gain: &[f32]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + crate::trace::NORM_EPS).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * inv * f64::from(*g)).collect()
}

fn softmax64(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn sinusoidal(pos: usize, d_model: usize) -> Vec<f64> {
    let mut pe = vec![0.0; d_model];
    for i in 0..d_model / 2 {
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
        pe[2 * i] = (pos as f64 * freq).sin();
        pe[2 * i + 1] = (pos as f64 * freq).cos();
    }
    if d_model % 2 == 1 {
        let i = d_model / 2;
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
        pe[d_model - 1] = (pos as f64 * freq).sin();
    }
    pe
}

/// Per-layer key/value history for incremental decoding.
struct LayerCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

struct SessionState {
    caches: Vec<LayerCache>,
    /// Token ids of the whole sequence so far (image prefix as id 0).
    token_ids: Vec<u32>,
}

/// What `advance` records for one position.
struct PositionRecord {
    /// `[layer][head][0..=pos]` attention probabilities.
    attn_rows: Vec<Vec<Vec<f64>>>,
    /// L+1 hidden vectors, already rounded to the recorded f32 values.
    hiddens: Vec<Vec<f32>>,
}

pub struct ToyModel {
    params: ToyParams,
    weights: ToyWeights,
    head: OutputHead,
    state: Option<SessionState>,
}

impl ToyModel {
    pub fn new(params: ToyParams) -> Result<Self> {
        let ToyParams { layers, heads, d_model, vocab, n_image_tokens, .. } = params;
        if layers == 0 || heads == 0 || d_model == 0 || vocab == 0 || n_image_tokens == 0 {
            return Err(Error::validation("toy model dimensions must be positive"));
        }
        if d_model % heads != 0 {
            return Err(Error::validation(format!(
                "d_model {d_model} not divisible by heads {heads}"
            )));
        }
        if let Some(eos) = params.eos_token_id {
            if eos as usize >= vocab {
                return Err(Error::validation("eos_token_id outside vocab"));
            }
        }
        let weights = ToyWeights::draw(&params);
        let head = OutputHead::new(
            vocab,
            d_model,
            weights.w_out.clone(),
            weights.b_out.clone(),
            weights.final_norm.clone(),
        )?;
        Ok(ToyModel { params, weights, head, state: None })
    }

    pub fn params(&self) -> &ToyParams {
        &self.params
    }

    pub fn model_id(&self) -> String {
        let p = &self.params;
        format!(
            "toy-L{}-h{}-d{}-v{}-i{}-s{}",
            p.layers, p.heads, p.d_model, p.vocab, p.n_image_tokens, p.seed
        )
    }

    fn layout(&self, n_query: usize) -> TokenLayout {
        let (gw, gh) = image_grid(self.params.n_image_tokens);
        TokenLayout::contiguous(gw, gh, DEFAULT_PATCH_SIZE, n_query)
    }

    fn embed_position(&self, pos: usize, token_for_query: Option<u32>) -> Vec<f64> {
        let d = self.params.d_model;
        let base: &[f32] = match token_for_query {
            None => &self.weights.img_embed[pos * d..(pos + 1) * d],
            Some(t) => {
                let t = t as usize;
                &self.weights.tok_embed[t * d..(t + 1) * d]
            }
        };
        let pe = sinusoidal(pos, d);
        base.iter().zip(pe).map(|(b, p)| f64::from(*b) + p).collect()
    }

    /// Run one position through every block, extending the KV caches.
    fn advance(&mut self, x0: Vec<f64>) -> PositionRecord {
        let d = self.params.d_model;
        let heads = self.params.heads;
        let dh = d / heads;
        let state = self.state.as_mut().expect("advance requires a session");
        let pos = state.caches[0].keys.len();

        let mut hiddens = Vec::with_capacity(self.params.layers + 1);
        hiddens.push(x0.iter().map(|v| *v as f32).collect::<Vec<f32>>());
        let mut attn_rows = Vec::with_capacity(self.params.layers);
        let mut x = x0;

        for (l, lw) in self.weights.layers.iter().enumerate() {
            let cache = &mut state.caches[l];
            let xn = rmsnorm(&x, &lw.ln1);
            let q = matvec(&lw.wq, &xn, d, d);
            cache.keys.push(matvec(&lw.wk, &xn, d, d));
            cache.values.push(matvec(&lw.wv, &xn, d, d));

            let scale = 1.0 / (dh as f64).sqrt();
            let mut ctx = vec![0.0f64; d];
            let mut rows = Vec::with_capacity(heads);
            for h in 0..heads {
                let lo = h * dh;
                let hi = lo + dh;
                let scores: Vec<f64> = (0..=pos)
                    .map(|p| {
                        let k = &cache.keys[p][lo..hi];
                        q[lo..hi].iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale
                    })
                    .collect();
                let probs = softmax64(&scores);
                for (p, &w) in probs.iter().enumerate() {
                    let v = &cache.values[p][lo..hi];
                    for (c, vi) in ctx[lo..hi].iter_mut().zip(v) {
                        *c += w * vi;
                    }
                }
                rows.push(probs);
            }
            attn_rows.push(rows);
            let attn_out = matvec(&lw.wo, &ctx, d, d);
            for (xi, a) in x.iter_mut().zip(&attn_out) {
                *xi += a;
            }

            let xn2 = rmsnorm(&x, &lw.ln2);
            let mut up = matvec(&lw.w_up, &xn2, 4 * d, d);
            for v in &mut up {
                *v = silu(*v);
            }
            let down = matvec(&lw.w_down, &up, d, 4 * d);
            for (xi, m) in x.iter_mut().zip(&down) {
                *xi += m;
            }
            hiddens.push(x.iter().map(|v| *v as f32).collect());
        }
        PositionRecord { attn_rows, hiddens }
    }

    /// Full forward over image prefix + prompt, building the trace.
    fn run_prefill(&mut self, prompt_tokens: &[u32]) -> Result<MultimodalTrace> {
        let p = self.params.clone();
        for &t in prompt_tokens {
            if t as usize >= p.vocab {
                return Err(Error::validation(format!(
                    "token id {t} outside vocab {}",
                    p.vocab
                )));
            }
        }
        let n_img = p.n_image_tokens;
        let seq = n_img + prompt_tokens.len();
        // Image positions carry placeholder id 0; the layout ranges, not the
        // ids, define the partition.
        let mut token_ids = vec![0u32; n_img];
        token_ids.extend_from_slice(prompt_tokens);

        self.state = Some(SessionState {
            caches: (0..p.layers)
                .map(|_| LayerCache { keys: Vec::new(), values: Vec::new() })
                .collect(),
            token_ids: token_ids.clone(),
        });

        let mut attn: Vec<Vec<f32>> = vec![vec![0.0; p.heads * seq * seq]; p.layers];
        let mut hidden: Vec<Vec<f32>> = vec![Vec::with_capacity(seq * p.d_model); p.layers + 1];
        for pos in 0..seq {
            let x0 = if pos < n_img {
                self.embed_position(pos, None)
            } else {
                self.embed_position(pos, Some(token_ids[pos]))
            };
            let rec = self.advance(x0);
            for (l, rows) in rec.attn_rows.iter().enumerate() {
                for (h, row) in rows.iter().enumerate() {
                    for (k, &w) in row.iter().enumerate() {
                        attn[l][(h * seq + pos) * seq + k] = w as f32;
                    }
                }
            }
            for (l, hv) in rec.hiddens.iter().enumerate() {
                hidden[l].extend_from_slice(hv);
            }
        }

        let attentions = attn
            .into_iter()
            .enumerate()
            .map(|(l, w)| AttentionTensor::new(l, p.heads, seq, w))
            .collect::<Result<Vec<_>>>()?;
        let hidden_states = hidden
            .into_iter()
            .enumerate()
            .map(|(l, s)| HiddenStateTensor::new(l, seq, p.d_model, s))
            .collect::<Result<Vec<_>>>()?;
        MultimodalTrace::new(
            self.layout(prompt_tokens.len()),
            attentions,
            hidden_states,
            token_ids,
            self.head.clone(),
            self.model_id(),
        )
    }
}

impl TraceProvider for ToyModel {
    fn metadata(&self) -> ProviderInfo {
        let n_query = self
            .state
            .as_ref()
            .map(|s| s.token_ids.len() - self.params.n_image_tokens)
            .unwrap_or(0);
        ProviderInfo {
            model_id: self.model_id(),
            layout: self.layout(n_query),
            vocab: self.params.vocab,
            eos_token_id: self.params.eos_token_id,
            parallel_safe: true,
        }
    }

    fn prefill(&mut self, prompt_tokens: &[u32]) -> Result<MultimodalTrace> {
        self.run_prefill(prompt_tokens)
    }

    fn step(&mut self, token: u32) -> Result<StepOutput> {
        if token as usize >= self.params.vocab {
            return Err(Error::validation(format!(
                "token id {token} outside vocab {}",
                self.params.vocab
            )));
        }
        let pos = match &self.state {
            Some(s) => s.token_ids.len(),
            None => return Err(Error::Adapter("step before prefill".into())),
        };
        let x0 = self.embed_position(pos, Some(token));
        let rec = self.advance(x0);
        self.state.as_mut().expect("checked above").token_ids.push(token);
        let logits = self.head.project(rec.hiddens.last().expect("L+1 hiddens"));
        Ok(StepOutput { hidden_states: rec.hiddens, logits })
    }
}

/// One-shot convenience: build a toy model and record its prefill trace.
pub fn toy_model_forward(
    prompt_tokens: &[u32],
    n_image_tokens: usize,
    seed: u64,
    arch: ToyArch,
) -> Result<MultimodalTrace> {
    let params = ToyParams {
        layers: arch.layers,
        heads: arch.heads,
        d_model: arch.d_model,
        vocab: arch.vocab,
        n_image_tokens,
        seed,
        eos_token_id: None,
    };
    ToyModel::new(params)?.run_prefill(prompt_tokens)
}
