//! Core trace types: one recorded forward pass of a multimodal decoder.
//!
//! A [`MultimodalTrace`] bundles everything the analysis and correction
//! passes need — per-layer attention, per-layer hidden states, the
//! image/query token partition, and the output head — so that every
//! downstream computation is a pure function of the trace.

mod archive;
mod geometry;

pub use archive::{manifest_path, read_trace, write_trace};
pub use geometry::{boxes_to_tokens, rect_box, QuadBox};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for attention distributions.
pub const ATTENTION_ROW_SUM_TOL: f32 = 1e-5;

/// Epsilon used by the final RMS normalization of the output head.
pub const NORM_EPS: f64 = 1e-6;

/// How a sequence splits into image tokens and query (text) tokens, plus the
/// pixel geometry of the image patch grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub n_image_tokens: usize,
    pub n_query_tokens: usize,
    /// Half-open `[start, end)` positions of image tokens in the sequence.
    pub image_token_range: std::ops::Range<usize>,
    /// Half-open `[start, end)` positions of query tokens in the sequence.
    pub query_token_range: std::ops::Range<usize>,
    /// Patch grid width in tokens.
    pub grid_w: usize,
    /// Patch grid height in tokens.
    pub grid_h: usize,
    /// Pixels per patch side.
    pub patch_size: usize,
    pub image_w: usize,
    pub image_h: usize,
}

impl TokenLayout {
    /// A layout with image tokens first and query tokens immediately after,
    /// the arrangement used by the toy model and most test fixtures.
    pub fn contiguous(
        grid_w: usize,
        grid_h: usize,
        patch_size: usize,
        n_query_tokens: usize,
    ) -> Self {
        let n_image = grid_w * grid_h;
        TokenLayout {
            n_image_tokens: n_image,
            n_query_tokens,
            image_token_range: 0..n_image,
            query_token_range: n_image..n_image + n_query_tokens,
            grid_w,
            grid_h,
            patch_size,
            image_w: grid_w * patch_size,
            image_h: grid_h * patch_size,
        }
    }

    pub fn seq_len_lower_bound(&self) -> usize {
        self.image_token_range.end.max(self.query_token_range.end)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_image_tokens != self.grid_w * self.grid_h {
            return Err(Error::validation(format!(
                "n_image_tokens {} != grid {}x{}",
                self.n_image_tokens, self.grid_w, self.grid_h
            )));
        }
        if self.image_token_range.len() != self.n_image_tokens {
            return Err(Error::validation("image_token_range length != n_image_tokens"));
        }
        if self.query_token_range.len() != self.n_query_tokens {
            return Err(Error::validation("query_token_range length != n_query_tokens"));
        }
        let disjoint = self.image_token_range.end <= self.query_token_range.start
            || self.query_token_range.end <= self.image_token_range.start;
        if !disjoint {
            return Err(Error::validation("image and query token ranges overlap"));
        }
        if self.patch_size * self.grid_w < self.image_w || self.patch_size * self.grid_h < self.image_h
        {
            return Err(Error::validation("patch grid does not cover the image"));
        }
        if self.n_image_tokens == 0 {
            return Err(Error::validation("layout has no image tokens"));
        }
        Ok(())
    }

    /// Sequence position of the image token at grid cell `(row, col)`.
    pub fn grid_to_seq(&self, row: usize, col: usize) -> usize {
        self.image_token_range.start + row * self.grid_w + col
    }

    /// Grid cell `(row, col)` of the image token at sequence position `pos`.
    /// `pos` must lie in `image_token_range`.
    pub fn seq_to_grid(&self, pos: usize) -> (usize, usize) {
        debug_assert!(self.image_token_range.contains(&pos));
        let n = pos - self.image_token_range.start;
        (n / self.grid_w, n % self.grid_w)
    }
}

/// Attention weights of one layer: `[heads × seq × seq]`, row-major, each
/// (head, query-position) row a distribution over attended positions.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    pub layer_index: usize,
    pub heads: usize,
    pub seq: usize,
    weights: Vec<f32>,
}

impl AttentionTensor {
    pub fn new(layer_index: usize, heads: usize, seq: usize, weights: Vec<f32>) -> Result<Self> {
        let t = AttentionTensor { layer_index, heads, seq, weights };
        t.validate()?;
        Ok(t)
    }

    pub fn at(&self, head: usize, query: usize, key: usize) -> f32 {
        self.weights[(head * self.seq + query) * self.seq + key]
    }

    /// One (head, query-position) attention row.
    pub fn row(&self, head: usize, query: usize) -> &[f32] {
        let start = (head * self.seq + query) * self.seq;
        &self.weights[start..start + self.seq]
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    /// Attention at (query, key) averaged over heads.
    pub fn head_mean(&self, query: usize, key: usize) -> f64 {
        let mut acc = 0.0f64;
        for h in 0..self.heads {
            acc += f64::from(self.at(h, query, key));
        }
        acc / self.heads as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.seq == 0 {
            return Err(Error::validation("attention tensor with zero heads or seq"));
        }
        if self.weights.len() != self.heads * self.seq * self.seq {
            return Err(Error::shape(format!(
                "attention layer {}: {} weights, expected {}x{}x{}",
                self.layer_index,
                self.weights.len(),
                self.heads,
                self.seq,
                self.seq
            )));
        }
        for h in 0..self.heads {
            for q in 0..self.seq {
                let mut sum = 0.0f64;
                for &w in self.row(h, q) {
                    if !w.is_finite() || w < 0.0 {
                        return Err(Error::validation(format!(
                            "attention layer {} head {} row {}: entry {w} not a weight",
                            self.layer_index, h, q
                        )));
                    }
                    sum += f64::from(w);
                }
                if (sum - 1.0).abs() > f64::from(ATTENTION_ROW_SUM_TOL) {
                    return Err(Error::validation(format!(
                        "attention layer {} head {} row {} sums to {sum}, not 1",
                        self.layer_index, h, q
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Hidden states of one layer: `[seq × d_model]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateTensor {
    pub layer_index: usize,
    pub seq: usize,
    pub d_model: usize,
    states: Vec<f32>,
}

impl HiddenStateTensor {
    pub fn new(layer_index: usize, seq: usize, d_model: usize, states: Vec<f32>) -> Result<Self> {
        let t = HiddenStateTensor { layer_index, seq, d_model, states };
        t.validate()?;
        Ok(t)
    }

    /// Hidden vector at one sequence position.
    pub fn position(&self, pos: usize) -> &[f32] {
        &self.states[pos * self.d_model..(pos + 1) * self.d_model]
    }

    pub fn states(&self) -> &[f32] {
        &self.states
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq == 0 || self.d_model == 0 {
            return Err(Error::validation("hidden state tensor with zero dimension"));
        }
        if self.states.len() != self.seq * self.d_model {
            return Err(Error::shape(format!(
                "hidden layer {}: {} values, expected {}x{}",
                self.layer_index,
                self.states.len(),
                self.seq,
                self.d_model
            )));
        }
        if let Some(bad) = self.states.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "hidden layer {}: non-finite value {bad}",
                self.layer_index
            )));
        }
        Ok(())
    }
}

/// The decoder's output head: a final RMS normalization followed by an
/// affine projection to vocabulary logits.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead {
    pub vocab: usize,
    pub d_model: usize,
    /// `[vocab × d_model]`, row-major.
    weight: Vec<f32>,
    /// `[vocab]`.
    bias: Vec<f32>,
    /// RMS-norm gain, `[d_model]`.
    final_norm_gain: Vec<f32>,
}

impl OutputHead {
    pub fn new(
        vocab: usize,
        d_model: usize,
        weight: Vec<f32>,
        bias: Vec<f32>,
        final_norm_gain: Vec<f32>,
    ) -> Result<Self> {
        let h = OutputHead { vocab, d_model, weight, bias, final_norm_gain };
        h.validate()?;
        Ok(h)
    }

    pub fn weight(&self) -> &[f32] {
        &self.weight
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn final_norm_gain(&self) -> &[f32] {
        &self.final_norm_gain
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.d_model == 0 {
            return Err(Error::validation("output head with zero dimension"));
        }
        if self.weight.len() != self.vocab * self.d_model {
            return Err(Error::shape("output head weight shape"));
        }
        if self.bias.len() != self.vocab {
            return Err(Error::shape("output head bias shape"));
        }
        if self.final_norm_gain.len() != self.d_model {
            return Err(Error::shape("output head norm gain shape"));
        }
        let all = self
            .weight
            .iter()
            .chain(self.bias.iter())
            .chain(self.final_norm_gain.iter());
        for v in all {
            if !v.is_finite() {
                return Err(Error::validation("output head contains non-finite value"));
            }
        }
        Ok(())
    }

    /// Normalize `hidden` and project to logits, accumulating in f64.
    pub fn project64(&self, hidden: &[f32]) -> Vec<f64> {
        assert_eq!(hidden.len(), self.d_model, "hidden vector length != d_model");
        let mut ms = 0.0f64;
        for &v in hidden {
            let v = f64::from(v);
            ms += v * v;
        }
        let inv = 1.0 / (ms / self.d_model as f64 + NORM_EPS).sqrt();
        let normed: Vec<f64> = hidden
            .iter()
            .zip(&self.final_norm_gain)
            .map(|(&h, &g)| f64::from(h) * inv * f64::from(g))
            .collect();
        let mut logits = Vec::with_capacity(self.vocab);
        for v in 0..self.vocab {
            let row = &self.weight[v * self.d_model..(v + 1) * self.d_model];
            let mut acc = f64::from(self.bias[v]);
            for (w, x) in row.iter().zip(&normed) {
                acc += f64::from(*w) * x;
            }
            logits.push(acc);
        }
        logits
    }

    /// f32 logits; the decode path and the logit lens share [`Self::project64`],
    /// so both see exactly the same numbers.
    pub fn project(&self, hidden: &[f32]) -> Vec<f32> {
        self.project64(hidden).into_iter().map(|v| v as f32).collect()
    }
}

/// One recorded forward pass: everything needed to diagnose and correct the
/// decode that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalTrace {
    layout: TokenLayout,
    attentions: Vec<AttentionTensor>,
    hidden_states: Vec<HiddenStateTensor>,
    token_ids: Vec<u32>,
    output_head: OutputHead,
    model_id: String,
}

impl MultimodalTrace {
    pub fn new(
        layout: TokenLayout,
        attentions: Vec<AttentionTensor>,
        hidden_states: Vec<HiddenStateTensor>,
        token_ids: Vec<u32>,
        output_head: OutputHead,
        model_id: String,
    ) -> Result<Self> {
        let t = MultimodalTrace { layout, attentions, hidden_states, token_ids, output_head, model_id };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        let seq = self.token_ids.len();
        if seq == 0 {
            return Err(Error::validation("trace with empty token sequence"));
        }
        if self.attentions.is_empty() {
            return Err(Error::validation("trace with no attention layers"));
        }
        if self.hidden_states.len() != self.attentions.len() + 1 {
            return Err(Error::validation(format!(
                "{} hidden-state tensors for {} attention layers (want L+1)",
                self.hidden_states.len(),
                self.attentions.len()
            )));
        }
        if self.layout.seq_len_lower_bound() > seq {
            return Err(Error::validation("token ranges extend past sequence length"));
        }
        for (l, a) in self.attentions.iter().enumerate() {
            if a.layer_index != l {
                return Err(Error::validation(format!(
                    "attention layer {l} carries index {}",
                    a.layer_index
                )));
            }
            if a.seq != seq {
                return Err(Error::shape(format!(
                    "attention layer {l} seq {} != trace seq {seq}",
                    a.seq
                )));
            }
            a.validate()?;
        }
        let d_model = self.output_head.d_model;
        for (l, h) in self.hidden_states.iter().enumerate() {
            if h.layer_index != l {
                return Err(Error::validation(format!(
                    "hidden tensor {l} carries index {}",
                    h.layer_index
                )));
            }
            if h.seq != seq {
                return Err(Error::shape(format!("hidden tensor {l} seq {} != trace seq {seq}", h.seq)));
            }
            if h.d_model != d_model {
                return Err(Error::shape(format!(
                    "hidden tensor {l} d_model {} != head d_model {d_model}",
                    h.d_model
                )));
            }
            h.validate()?;
        }
        self.output_head.validate()?;
        Ok(())
    }

    /// Number of attention layers L.
    pub fn n_layers(&self) -> usize {
        self.attentions.len()
    }

    pub fn seq_len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn d_model(&self) -> usize {
        self.output_head.d_model
    }

    pub fn layout(&self) -> &TokenLayout {
        &self.layout
    }

    pub fn attention(&self, layer: usize) -> &AttentionTensor {
        &self.attentions[layer]
    }

    pub fn attentions(&self) -> &[AttentionTensor] {
        &self.attentions
    }

    /// Hidden states *entering* layer 0 are index 0 (the embeddings); the
    /// output of attention layer ℓ is index ℓ+1; index L is the final
    /// pre-norm hidden state the output head consumes.
    pub fn hidden(&self, index: usize) -> &HiddenStateTensor {
        &self.hidden_states[index]
    }

    pub fn hidden_states(&self) -> &[HiddenStateTensor] {
        &self.hidden_states
    }

    /// Final-layer hidden states (index L).
    pub fn final_hidden(&self) -> &HiddenStateTensor {
        self.hidden_states.last().expect("validated non-empty")
    }

    pub fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    pub fn output_head(&self) -> &OutputHead {
        &self.output_head
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// SHA-256 over every tensor's raw little-endian bytes plus layout and
    /// token ids. Two traces with equal digests are bit-identical.
    pub fn digest(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.model_id.as_bytes());
        h.update(serde_json::to_vec(&self.layout).expect("layout serializes"));
        for id in &self.token_ids {
            h.update(id.to_le_bytes());
        }
        let eat = |values: &[f32]| {
            let mut hasher = Sha256::new();
            for v in values {
                hasher.update(v.to_le_bytes());
            }
            hasher.finalize()
        };
        for a in &self.attentions {
            h.update(eat(a.weights()));
        }
        for s in &self.hidden_states {
            h.update(eat(s.states()));
        }
        h.update(eat(self.output_head.weight()));
        h.update(eat(self.output_head.bias()));
        h.update(eat(self.output_head.final_norm_gain()));
        h.finalize().into()
    }

    pub fn digest_hex(&self) -> String {
        self.digest().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Where a [`TokenSelection`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionOrigin {
    Glimpse,
    Refocus,
    GroundTruthBoxes,
}

/// An ordered set of image-token sequence positions with scores, sorted by
/// descending score (ties by ascending index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSelection {
    indices: Vec<usize>,
    scores: Vec<f32>,
    pub origin: SelectionOrigin,
}

impl TokenSelection {
    pub fn new(
        indices: Vec<usize>,
        scores: Vec<f32>,
        origin: SelectionOrigin,
        layout: &TokenLayout,
    ) -> Result<Self> {
        let s = TokenSelection { indices, scores, origin };
        s.validate(layout)?;
        Ok(s)
    }

    pub fn validate(&self, layout: &TokenLayout) -> Result<()> {
        if self.indices.len() != self.scores.len() {
            return Err(Error::validation("selection indices/scores length mismatch"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &i in &self.indices {
            if !layout.image_token_range.contains(&i) {
                return Err(Error::validation(format!(
                    "selection index {i} outside image token range {:?}",
                    layout.image_token_range
                )));
            }
            if !seen.insert(i) {
                return Err(Error::validation(format!("selection index {i} repeated")));
            }
        }
        for w in self.scores.windows(2) {
            if !(w[1] <= w[0]) {
                return Err(Error::validation("selection scores not non-increasing"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn index_set(&self) -> std::collections::BTreeSet<usize> {
        self.indices.iter().copied().collect()
    }
}

/// Sort (index, score) pairs into selection order: score descending, ties by
/// ascending index. Shared by every selection producer.
pub(crate) fn sort_selection_pairs(pairs: &mut Vec<(usize, f32)>) {
    pairs.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("selection scores must be comparable")
            .then(a.0.cmp(&b.0))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_attention(layer: usize, heads: usize, seq: usize) -> AttentionTensor {
        let w = vec![1.0 / seq as f32; heads * seq * seq];
        AttentionTensor::new(layer, heads, seq, w).unwrap()
    }

    #[test]
    fn layout_contiguous_is_valid_and_maps_grid_both_ways() {
        let l = TokenLayout::contiguous(4, 3, 16, 5);
        l.validate().unwrap();
        assert_eq!(l.n_image_tokens, 12);
        assert_eq!(l.image_token_range, 0..12);
        assert_eq!(l.query_token_range, 12..17);
        assert_eq!(l.grid_to_seq(2, 1), 9);
        assert_eq!(l.seq_to_grid(9), (2, 1));
        for pos in l.image_token_range.clone() {
            let (r, c) = l.seq_to_grid(pos);
            assert_eq!(l.grid_to_seq(r, c), pos);
        }
    }

    #[test]
    fn layout_rejects_overlapping_ranges() {
        let mut l = TokenLayout::contiguous(2, 2, 16, 3);
        l.query_token_range = 3..6;
        assert!(matches!(l.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn layout_rejects_grid_mismatch() {
        let mut l = TokenLayout::contiguous(2, 2, 16, 3);
        l.n_image_tokens = 5;
        assert!(l.validate().is_err());
    }

    #[test]
    fn attention_rejects_bad_row_sum() {
        let seq = 4;
        let mut w = vec![1.0 / seq as f32; 2 * seq * seq];
        w[0] += 1e-3;
        assert!(AttentionTensor::new(0, 2, seq, w).is_err());
    }

    #[test]
    fn attention_rejects_negative_weight() {
        let seq = 2;
        // Rows still sum to 1, but one entry is negative.
        let w = vec![1.5, -0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5];
        assert!(AttentionTensor::new(0, 2, seq, w).is_err());
    }

    #[test]
    fn attention_accepts_causal_rows_and_indexes_row_major() {
        // seq=3, one head, causal: row q puts mass only on 0..=q.
        // All weights dyadic so f32 storage is exact.
        let w = vec![
            1.0, 0.0, 0.0, //
            0.25, 0.75, 0.0, //
            0.125, 0.375, 0.5,
        ];
        let a = AttentionTensor::new(0, 1, 3, w).unwrap();
        assert_eq!(a.at(0, 1, 1), 0.75);
        assert_eq!(a.row(0, 2), &[0.125, 0.375, 0.5]);
        assert!((a.head_mean(2, 1) - 0.375).abs() < 1e-12);
    }

    #[test]
    fn hidden_rejects_non_finite() {
        let states = vec![0.0, f32::NAN, 1.0, 2.0];
        assert!(HiddenStateTensor::new(0, 2, 2, states).is_err());
    }

    #[test]
    fn head_projection_matches_hand_computation() {
        // d=2, vocab=2, gain ones: rmsnorm([3,4]) = [3,4]/sqrt(12.5+eps).
        let head = OutputHead::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.5, -0.5], vec![1.0, 1.0])
            .unwrap();
        let logits = head.project64(&[3.0, 4.0]);
        let inv = 1.0 / (12.5f64 + NORM_EPS).sqrt();
        assert!((logits[0] - (3.0 * inv + 0.5)).abs() < 1e-12);
        assert!((logits[1] - (4.0 * inv - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn head_norm_scales_components_equally() {
        // RMS norm with unit gain preserves the argmax of the raw vector.
        let head =
            OutputHead::new(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.], vec![0.; 3], vec![1.; 3])
                .unwrap();
        let logits = head.project64(&[0.2, -1.0, 0.9]);
        let argmax = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 2);
    }

    fn tiny_trace() -> MultimodalTrace {
        let layout = TokenLayout::contiguous(2, 2, 16, 2);
        let seq = 6;
        let d = 3;
        let vocab = 5;
        let attentions = vec![uniform_attention(0, 2, seq), uniform_attention(1, 2, seq)];
        let hidden = (0..3)
            .map(|l| {
                let states = (0..seq * d).map(|i| (i as f32 * 0.1) + l as f32).collect();
                HiddenStateTensor::new(l, seq, d, states).unwrap()
            })
            .collect();
        let head = OutputHead::new(
            vocab,
            d,
            (0..vocab * d).map(|i| i as f32 * 0.01).collect(),
            vec![0.0; vocab],
            vec![1.0; d],
        )
        .unwrap();
        MultimodalTrace::new(layout, attentions, hidden, vec![0, 0, 0, 0, 7, 9], head, "tiny".into())
            .unwrap()
    }

    #[test]
    fn trace_accessors_and_counts() {
        let t = tiny_trace();
        assert_eq!(t.n_layers(), 2);
        assert_eq!(t.seq_len(), 6);
        assert_eq!(t.d_model(), 3);
        assert_eq!(t.hidden_states().len(), 3);
        assert_eq!(t.final_hidden().layer_index, 2);
    }

    #[test]
    fn trace_rejects_wrong_hidden_count() {
        let t = tiny_trace();
        let mut hidden = t.hidden_states().to_vec();
        hidden.pop();
        let r = MultimodalTrace::new(
            t.layout().clone(),
            t.attentions().to_vec(),
            hidden,
            t.token_ids().to_vec(),
            t.output_head().clone(),
            "tiny".into(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn trace_rejects_seq_mismatch() {
        let t = tiny_trace();
        let r = MultimodalTrace::new(
            t.layout().clone(),
            t.attentions().to_vec(),
            t.hidden_states().to_vec(),
            vec![0, 0, 0, 0, 7], // one token short
            t.output_head().clone(),
            "tiny".into(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn digest_changes_when_any_tensor_changes() {
        let t = tiny_trace();
        let d0 = t.digest();
        assert_eq!(d0, tiny_trace().digest(), "digest is deterministic");

        let mut hidden = t.hidden_states().to_vec();
        let mut states = hidden[1].states().to_vec();
        states[0] += 1.0;
        hidden[1] = HiddenStateTensor::new(1, t.seq_len(), t.d_model(), states).unwrap();
        let t2 = MultimodalTrace::new(
            t.layout().clone(),
            t.attentions().to_vec(),
            hidden,
            t.token_ids().to_vec(),
            t.output_head().clone(),
            "tiny".into(),
        )
        .unwrap();
        assert_ne!(d0, t2.digest());
    }

    #[test]
    fn selection_enforces_order_uniqueness_and_range() {
        let layout = TokenLayout::contiguous(2, 2, 16, 2);
        let ok = TokenSelection::new(
            vec![1, 0, 3],
            vec![0.9, 0.5, 0.5],
            SelectionOrigin::Glimpse,
            &layout,
        );
        assert!(ok.is_ok());

        let dup = TokenSelection::new(
            vec![1, 1],
            vec![0.9, 0.5],
            SelectionOrigin::Glimpse,
            &layout,
        );
        assert!(dup.is_err());

        let out_of_range = TokenSelection::new(
            vec![4],
            vec![0.9],
            SelectionOrigin::Glimpse,
            &layout,
        );
        assert!(out_of_range.is_err());

        let increasing = TokenSelection::new(
            vec![0, 1],
            vec![0.1, 0.9],
            SelectionOrigin::Glimpse,
            &layout,
        );
        assert!(increasing.is_err());
    }

    #[test]
    fn selection_sort_breaks_ties_by_index() {
        let mut pairs = vec![(3, 0.5f32), (1, 0.5), (2, 0.9), (0, 0.5)];
        sort_selection_pairs(&mut pairs);
        assert_eq!(pairs.iter().map(|p| p.0).collect::<Vec<_>>(), vec![2, 0, 1, 3]);
    }
}
