//! Grounded layer correction: pick the layer whose attention is most
//! concentrated on text regions, then steer decoding with its hidden states.
//!
//! The intervention is logits-only: every step's key/value history comes
//! from the uncorrected forward pass, and the corrected hidden state feeds
//! nothing but the output head. Region selection and the grounded layer are
//! computed once on the prefill trace and frozen for the whole generation.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::adapters::{ProviderFactory, TraceProvider};
use crate::analysis::text_region_attention;
use crate::error::{Error, Result};
use crate::evalbench::{run_benchmark, BenchmarkSample, EvalReport, RunOptions};
use crate::trace::{HiddenStateTensor, MultimodalTrace, TokenSelection};
use crate::zoomtext::{glimpse, refocus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Replacement,
    Fusion,
    SelectiveReplacement,
    Off,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Replacement => "replacement",
            Strategy::Fusion => "fusion",
            Strategy::SelectiveReplacement => "selective_replacement",
            Strategy::Off => "off",
        };
        write!(f, "{s}")
    }
}

/// How the corrected layer is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerPolicy {
    /// argmax of per-layer text-region attention (ties → lowest index).
    GroundedArgmax,
    Fixed(usize),
    /// Uniform draw from `[lo, hi)`, seeded; for layer-range ablations.
    RandomInRange { lo: usize, hi: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionConfig {
    pub strategy: Strategy,
    /// Fusion weight w: share of the grounded layer in the blend.
    pub fusion_weight: f64,
    /// Glimpse candidate count K.
    pub top_k: usize,
    /// Stabilizer in the refocus shift denominator.
    pub epsilon: f64,
    /// Fraction of candidates refocus keeps.
    pub keep_fraction: f64,
    pub layer_policy: LayerPolicy,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        CorrectionConfig {
            strategy: Strategy::Fusion,
            fusion_weight: 0.1,
            top_k: crate::zoomtext::DEFAULT_TOP_K,
            epsilon: crate::zoomtext::DEFAULT_EPSILON,
            keep_fraction: crate::zoomtext::DEFAULT_KEEP_FRACTION,
            layer_policy: LayerPolicy::GroundedArgmax,
        }
    }
}

impl CorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fusion_weight) {
            return Err(Error::validation(format!(
                "fusion_weight {} outside [0,1]",
                self.fusion_weight
            )));
        }
        if self.top_k == 0 {
            return Err(Error::validation("top_k must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::validation("epsilon must be positive"));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::validation(format!(
                "keep_fraction {} outside (0,1]",
                self.keep_fraction
            )));
        }
        if let LayerPolicy::RandomInRange { lo, hi, .. } = self.layer_policy {
            if lo >= hi {
                return Err(Error::validation(format!("empty layer range {lo}..{hi}")));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 over the serialized config, for report provenance.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// What a corrected decode did.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectionOutcome {
    /// ℓ*: the attention layer whose output fed the correction.
    pub selected_layer: usize,
    /// Sequence positions whose final hidden state was modified before the
    /// head (empty when the strategy never touched the emitting position).
    pub corrected_positions: Vec<usize>,
    pub strategy_used: Strategy,
    /// Text-region attention per layer, computed against the selection.
    pub per_layer_grounding: Vec<f64>,
    /// The refocused text-region token set the correction was grounded on.
    pub selected_tokens: Vec<usize>,
}

/// Per-layer text-region attention and its argmax (ties → lowest index).
pub fn select_grounded_layer(
    trace: &MultimodalTrace,
    regions: &TokenSelection,
) -> Result<(usize, Vec<f64>)> {
    if regions.is_empty() {
        return Err(Error::Data("cannot select a grounded layer from empty regions".into()));
    }
    let mut scores = Vec::with_capacity(trace.n_layers());
    for l in 0..trace.n_layers() {
        scores.push(text_region_attention(trace.attention(l), trace.layout(), regions)?.value);
    }
    let mut best = 0usize;
    for (l, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = l;
        }
    }
    Ok((best, scores))
}

/// Blend one hidden vector per the strategy. `w = 0` and `w = 1` return the
/// untouched input so that zero-strength corrections stay bit-exact.
fn fuse_vector(final_h: &[f32], grounded_h: &[f32], strategy: Strategy, w: f64) -> Vec<f32> {
    match strategy {
        Strategy::Off => final_h.to_vec(),
        Strategy::Replacement | Strategy::SelectiveReplacement => grounded_h.to_vec(),
        Strategy::Fusion => {
            if w == 0.0 {
                final_h.to_vec()
            } else if w == 1.0 {
                grounded_h.to_vec()
            } else {
                final_h
                    .iter()
                    .zip(grounded_h)
                    .map(|(&f, &g)| ((1.0 - w) * f64::from(f) + w * f64::from(g)) as f32)
                    .collect()
            }
        }
    }
}

/// Tensor-level correction: replacement and fusion act on every position,
/// selective replacement only on the selected token positions, off is the
/// identity.
pub fn correct_hidden_states(
    final_states: &HiddenStateTensor,
    grounded: &HiddenStateTensor,
    config: &CorrectionConfig,
    selection: &TokenSelection,
) -> Result<HiddenStateTensor> {
    config.validate()?;
    if final_states.seq != grounded.seq || final_states.d_model != grounded.d_model {
        return Err(Error::shape(format!(
            "final {}x{} vs grounded {}x{}",
            final_states.seq, final_states.d_model, grounded.seq, grounded.d_model
        )));
    }
    let d = final_states.d_model;
    let states = match config.strategy {
        Strategy::Off => final_states.states().to_vec(),
        Strategy::Replacement => grounded.states().to_vec(),
        Strategy::Fusion => {
            let w = config.fusion_weight;
            if w == 0.0 {
                final_states.states().to_vec()
            } else if w == 1.0 {
                grounded.states().to_vec()
            } else {
                final_states
                    .states()
                    .iter()
                    .zip(grounded.states())
                    .map(|(&f, &g)| ((1.0 - w) * f64::from(f) + w * f64::from(g)) as f32)
                    .collect()
            }
        }
        Strategy::SelectiveReplacement => {
            let mut states = final_states.states().to_vec();
            for &i in selection.indices() {
                if i >= final_states.seq {
                    return Err(Error::shape(format!(
                        "selection index {i} outside tensor of seq {}",
                        final_states.seq
                    )));
                }
                states[i * d..(i + 1) * d].copy_from_slice(grounded.position(i));
            }
            states
        }
    };
    HiddenStateTensor::new(final_states.layer_index, final_states.seq, d, states)
}

fn argmax_lowest(logits: &[f32]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Plain greedy decoding through a provider, no intervention. The reference
/// the `off` strategy must reproduce bit-for-bit.
pub fn greedy_decode(
    provider: &mut dyn TraceProvider,
    prompt: &[u32],
    max_new_tokens: usize,
) -> Result<Vec<u32>> {
    if prompt.is_empty() {
        return Err(Error::validation("cannot decode from an empty prompt"));
    }
    let trace = provider.prefill(prompt)?;
    let eos = provider.metadata().eos_token_id;
    let head = trace.output_head();
    let last = trace.seq_len() - 1;
    let mut logits = head.project(trace.final_hidden().position(last));
    let mut generated = Vec::new();
    for step in 0..max_new_tokens {
        let next = argmax_lowest(&logits);
        generated.push(next);
        if Some(next) == eos || step + 1 == max_new_tokens {
            break;
        }
        logits = provider
            .step(next)
            .map_err(|e| Error::Adapter(format!("step {step}: {e}")))?
            .logits;
    }
    Ok(generated)
}

/// Greedy decoding with grounded-layer correction of the emitting position's
/// final hidden state at every step.
pub fn decode_with_correction(
    provider: &mut dyn TraceProvider,
    prompt: &[u32],
    config: &CorrectionConfig,
    max_new_tokens: usize,
) -> Result<(Vec<u32>, CorrectionOutcome)> {
    config.validate()?;
    if prompt.is_empty() {
        return Err(Error::validation("cannot decode from an empty prompt"));
    }
    let trace = provider.prefill(prompt)?;
    let n_layers = trace.n_layers();

    let (_, candidates) = glimpse(&trace, config.top_k)?;
    let selection = refocus(&trace, &candidates, config.epsilon, config.keep_fraction)?;
    let (argmax_layer, grounding) = select_grounded_layer(&trace, &selection)?;
    let selected_layer = match config.layer_policy {
        LayerPolicy::GroundedArgmax => argmax_layer,
        LayerPolicy::Fixed(l) => {
            if l >= n_layers {
                return Err(Error::validation(format!(
                    "fixed layer {l} outside 0..{n_layers}"
                )));
            }
            l
        }
        LayerPolicy::RandomInRange { lo, hi, seed } => {
            let hi = hi.min(n_layers);
            if lo >= hi {
                return Err(Error::validation(format!(
                    "layer range {lo}..{hi} empty for a {n_layers}-layer model"
                )));
            }
            rand_chacha::ChaCha8Rng::seed_from_u64(seed).gen_range(lo..hi)
        }
    };

    let eos = provider.metadata().eos_token_id;
    let head = trace.output_head().clone();
    // Layer ℓ's output is hidden tensor ℓ+1 (index 0 is the embeddings).
    let grounded_index = selected_layer + 1;
    let selected_set = selection.index_set();
    let mut emitting_pos = trace.seq_len() - 1;
    let mut h_final = trace.final_hidden().position(emitting_pos).to_vec();
    let mut h_grounded = trace.hidden(grounded_index).position(emitting_pos).to_vec();
    // Native logits for the prefill position follow the provider contract:
    // head ∘ final hidden.
    let mut native_logits = head.project(&h_final);

    let mut generated = Vec::new();
    let mut corrected_positions = Vec::new();
    for step in 0..max_new_tokens {
        let position_is_corrected = match config.strategy {
            Strategy::Off => false,
            Strategy::Fusion => config.fusion_weight > 0.0,
            Strategy::Replacement => true,
            Strategy::SelectiveReplacement => selected_set.contains(&emitting_pos),
        };
        let logits = if position_is_corrected {
            corrected_positions.push(emitting_pos);
            let h_hat =
                fuse_vector(&h_final, &h_grounded, config.strategy, config.fusion_weight);
            head.project(&h_hat)
        } else {
            native_logits.clone()
        };
        let next = argmax_lowest(&logits);
        generated.push(next);
        if Some(next) == eos || step + 1 == max_new_tokens {
            break;
        }
        let out = provider
            .step(next)
            .map_err(|e| Error::Adapter(format!("step {step}: {e}")))?;
        h_final = out.hidden_states[n_layers].clone();
        h_grounded = out.hidden_states[grounded_index].clone();
        native_logits = out.logits;
        emitting_pos += 1;
    }

    Ok((
        generated,
        CorrectionOutcome {
            selected_layer,
            corrected_positions,
            strategy_used: config.strategy,
            per_layer_grounding: grounding,
            selected_tokens: selection.indices().to_vec(),
        },
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightSweepRow {
    pub weight: f64,
    pub report: EvalReport,
}

/// Evaluate the benchmark once per fusion weight.
pub fn sweep_fusion_weight(
    factory: ProviderFactory,
    samples: &[BenchmarkSample],
    weights: &[f64],
    base: &CorrectionConfig,
    opts: &RunOptions,
) -> Result<Vec<WeightSweepRow>> {
    if weights.is_empty() {
        return Err(Error::Data("weight sweep needs at least one weight".into()));
    }
    let mut rows = Vec::with_capacity(weights.len());
    for &w in weights {
        let config = CorrectionConfig { fusion_weight: w, ..base.clone() };
        config.validate()?;
        let report = run_benchmark(factory, samples, &config, opts)?;
        rows.push(WeightSweepRow { weight: w, report });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerRangeSweepRow {
    pub lo: usize,
    pub hi: usize,
    pub report: EvalReport,
}

/// Evaluate the benchmark once per layer range, drawing the corrected layer
/// from the range with a fixed seed.
pub fn sweep_layer_ranges(
    factory: ProviderFactory,
    samples: &[BenchmarkSample],
    ranges: &[(usize, usize)],
    seed: u64,
    base: &CorrectionConfig,
    opts: &RunOptions,
) -> Result<Vec<LayerRangeSweepRow>> {
    if ranges.is_empty() {
        return Err(Error::Data("layer sweep needs at least one range".into()));
    }
    let mut rows = Vec::with_capacity(ranges.len());
    for &(lo, hi) in ranges {
        let config = CorrectionConfig {
            layer_policy: LayerPolicy::RandomInRange { lo, hi, seed },
            ..base.clone()
        };
        config.validate()?;
        let report = run_benchmark(factory, samples, &config, opts)?;
        rows.push(LayerRangeSweepRow { lo, hi, report });
    }
    Ok(rows)
}
