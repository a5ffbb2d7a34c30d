//! Layer-level diagnosis: where in the stack a wrong token gets promoted,
//! and how strongly each layer attends to text regions.
//!
//! The pipeline: find the first divergence between a generated and a
//! reference answer, read each layer's next-token distribution at that
//! position through the output head (the "logit lens"), score each layer's
//! preference for the wrong token, score each layer's attention mass on
//! text-region tokens, and correlate the two series across layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::trace::{AttentionTensor, MultimodalTrace, OutputHead, TokenLayout, TokenSelection};

/// First position where a generated sequence departs from the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HallucinationLocus {
    /// Index into the generated sequence.
    pub position: usize,
    pub hallucinated_token_id: u32,
    pub ground_truth_token_id: u32,
}

impl HallucinationLocus {
    pub fn new(position: usize, hallucinated: u32, ground_truth: u32) -> Result<Self> {
        if hallucinated == ground_truth {
            return Err(Error::validation("locus tokens must differ"));
        }
        Ok(HallucinationLocus {
            position,
            hallucinated_token_id: hallucinated,
            ground_truth_token_id: ground_truth,
        })
    }
}

/// First index where the sequences disagree. `None` when they are identical
/// or one is a strict prefix of the other (no within-sequence divergence).
pub fn extract_hallucinated_token(
    generated: &[u32],
    ground_truth: &[u32],
) -> Result<Option<HallucinationLocus>> {
    if generated.is_empty() || ground_truth.is_empty() {
        return Err(Error::Data("cannot compare empty token sequences".into()));
    }
    for (t, (&g, &r)) in generated.iter().zip(ground_truth).enumerate() {
        if g != r {
            return Ok(Some(HallucinationLocus::new(t, g, r)?));
        }
    }
    Ok(None)
}

/// Probability distribution an intermediate hidden state implies: final
/// normalization, affine head, softmax. Computed in f64.
pub fn logit_lens(hidden: &[f32], head: &OutputHead) -> Result<Vec<f64>> {
    if hidden.len() != head.d_model {
        return Err(Error::shape(format!(
            "hidden length {} vs head d_model {}",
            hidden.len(),
            head.d_model
        )));
    }
    let logits = head.project64(hidden);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Per-layer preference for the hallucinated token over the ground-truth
/// token, each value in (0,1): p_hal / (p_hal + p_gt) read through the logit
/// lens at the position whose next-token distribution emitted the divergent
/// token.
///
/// `generated_len` says how many trailing positions of the trace are
/// generated tokens, anchoring `locus.position` (an index into the generated
/// sequence) to a trace position: the distribution for generated token t
/// lives at sequence position seq_len − generated_len + t − 1.
pub fn tendency_profile(
    trace: &MultimodalTrace,
    locus: &HallucinationLocus,
    generated_len: usize,
) -> Result<Vec<f64>> {
    let seq = trace.seq_len();
    if generated_len > seq || locus.position >= generated_len {
        return Err(Error::validation(format!(
            "locus position {} with {generated_len} generated tokens does not fit a trace of {seq}",
            locus.position
        )));
    }
    let anchor = seq - generated_len + locus.position;
    if anchor == 0 {
        return Err(Error::validation(
            "locus maps to position 0, which has no preceding context",
        ));
    }
    let pos = anchor - 1;
    let vocab = trace.output_head().vocab;
    let (hal, gt) = (
        locus.hallucinated_token_id as usize,
        locus.ground_truth_token_id as usize,
    );
    if hal >= vocab || gt >= vocab {
        return Err(Error::validation("locus token id outside vocabulary"));
    }
    // Layer ℓ's hidden state is the output of block ℓ: hidden index ℓ+1.
    let mut out = Vec::with_capacity(trace.n_layers());
    for l in 0..trace.n_layers() {
        let probs = logit_lens(trace.hidden(l + 1).position(pos), trace.output_head())?;
        let (ph, pg) = (probs[hal], probs[gt]);
        out.push(ph / (ph + pg));
    }
    Ok(out)
}

/// Attention concentration on text-region tokens with a degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingScore {
    pub value: f64,
    /// True when the image-to-image attention mass was zero and the score
    /// defaulted to 0.
    pub degenerate: bool,
}

/// Share of image-to-image attention mass that lands on the text-region
/// tokens: Σ_{i∈I, j∈T} ᾱ_ij / Σ_{i∈I, j∈I} ᾱ_ij with ᾱ the head-mean
/// attention, I the image tokens, T ⊆ I the text-region tokens.
pub fn text_region_attention(
    attn: &AttentionTensor,
    layout: &TokenLayout,
    text_tokens: &TokenSelection,
) -> Result<GroundingScore> {
    layout.validate()?;
    text_tokens.validate(layout)?;
    if layout.image_token_range.is_empty() {
        return Err(Error::Data("layout has no image tokens".into()));
    }
    if layout.image_token_range.end > attn.seq {
        return Err(Error::shape("attention tensor shorter than image range"));
    }
    let in_text = text_tokens.index_set();
    let mut denom = 0.0f64;
    let mut numer = 0.0f64;
    for i in layout.image_token_range.clone() {
        for j in layout.image_token_range.clone() {
            let a = attn.head_mean(i, j);
            denom += a;
            if in_text.contains(&j) {
                numer += a;
            }
        }
    }
    if denom == 0.0 {
        return Ok(GroundingScore { value: 0.0, degenerate: true });
    }
    Ok(GroundingScore { value: numer / denom, degenerate: false })
}

/// One layer's diagnostic pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub layer_index: usize,
    /// Preference for the hallucinated token, in [0,1].
    pub tendency: f64,
    /// Text-region attention share, in [0,1].
    pub grounding: f64,
}

/// Full per-layer diagnosis of one trace against one locus.
pub fn layer_profiles(
    trace: &MultimodalTrace,
    locus: &HallucinationLocus,
    generated_len: usize,
    text_tokens: &TokenSelection,
) -> Result<Vec<LayerProfile>> {
    let tendency = tendency_profile(trace, locus, generated_len)?;
    let mut out = Vec::with_capacity(trace.n_layers());
    for (l, t) in tendency.into_iter().enumerate() {
        let g = text_region_attention(trace.attention(l), trace.layout(), text_tokens)?;
        out.push(LayerProfile { layer_index: l, tendency: t, grounding: g.value });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleCorrelation {
    pub sample_id: String,
    /// Rank correlation between tendency and grounding across layers;
    /// `None` when undefined (a constant series).
    pub rho: Option<f64>,
    pub defined: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub per_sample: Vec<SampleCorrelation>,
    /// Mean rho over samples where it is defined.
    pub aggregate_rho: f64,
    pub n_defined: usize,
}

/// Correlate tendency against grounding per sample and aggregate.
pub fn correlation_report(samples: &[(String, Vec<LayerProfile>)]) -> Result<CorrelationReport> {
    if samples.is_empty() {
        return Err(Error::Data("correlation report over zero samples".into()));
    }
    let mut per_sample = Vec::with_capacity(samples.len());
    let mut sum = 0.0;
    let mut n_defined = 0usize;
    for (id, profiles) in samples {
        if profiles.len() < 2 {
            return Err(Error::Data(format!(
                "sample {id}: need at least 2 layers, got {}",
                profiles.len()
            )));
        }
        let xs: Vec<f64> = profiles.iter().map(|p| p.tendency).collect();
        let ys: Vec<f64> = profiles.iter().map(|p| p.grounding).collect();
        let rho = stats::spearman(&xs, &ys)?;
        if let Some(r) = rho {
            sum += r;
            n_defined += 1;
        }
        per_sample.push(SampleCorrelation {
            sample_id: id.clone(),
            rho,
            defined: rho.is_some(),
        });
    }
    if n_defined == 0 {
        return Err(Error::Data(
            "correlation undefined for every sample (constant layer series)".into(),
        ));
    }
    Ok(CorrelationReport { per_sample, aggregate_rho: sum / n_defined as f64, n_defined })
}

/// CSV rows of layer profiles: `layer,tendency,grounding`.
pub fn profiles_csv(profiles: &[LayerProfile]) -> String {
    let mut out = String::from("layer,tendency,grounding\n");
    for p in profiles {
        out.push_str(&format!("{},{},{}\n", p.layer_index, p.tendency, p.grounding));
    }
    out
}

/// Coefficient of variation, across layers, of the total head-mean attention
/// a given image token receives from all positions. Foreground (text)
/// tokens swing layer to layer; background tokens stay flat.
pub fn attention_cv(trace: &MultimodalTrace, token_index: usize) -> Result<f64> {
    if !trace.layout().image_token_range.contains(&token_index) {
        return Err(Error::validation(format!(
            "token {token_index} outside image range {:?}",
            trace.layout().image_token_range
        )));
    }
    if trace.n_layers() < 2 {
        return Err(Error::Data("attention_cv needs at least 2 layers".into()));
    }
    let series: Vec<f64> = trace
        .attentions()
        .iter()
        .map(|a| (0..a.seq).map(|i| a.head_mean(i, token_index)).sum())
        .collect();
    Ok(stats::coefficient_of_variation(&series))
}
