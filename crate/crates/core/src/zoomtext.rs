//! Detector-free estimation of text-bearing image tokens, in two passes.
//!
//! Glimpse: average the final layer's query→image attention into one score
//! per image token and take the top K. Refocus: compare first- vs
//! last-layer image↔image attention over those candidates — tokens whose
//! attention shifts a lot across depth are foreground — and keep the most
//! dynamic fraction.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{
    sort_selection_pairs, MultimodalTrace, SelectionOrigin, TokenLayout, TokenSelection,
};

pub const DEFAULT_TOP_K: usize = 128;
pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_KEEP_FRACTION: f64 = 0.5;

/// Global attention map over image tokens (one score per grid cell).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlimpseMap {
    /// Length `n_image_tokens`, indexed in grid order.
    pub scores: Vec<f64>,
    /// False when some query row carried zero image attention mass and the
    /// map therefore is not a distribution.
    pub normalized: bool,
}

/// Compute the glimpse map and its top-`min(k, N)` token selection.
///
/// Each (head, query) attention row of the final layer is restricted to
/// image columns and renormalized, then all rows are averaged.
pub fn glimpse(trace: &MultimodalTrace, k: usize) -> Result<(GlimpseMap, TokenSelection)> {
    if k == 0 {
        return Err(Error::validation("glimpse requires k >= 1"));
    }
    let layout = trace.layout();
    let queries = layout.query_token_range.clone();
    if queries.is_empty() {
        return Err(Error::Data("trace has no query tokens to glimpse from".into()));
    }
    let images = layout.image_token_range.clone();
    let attn = trace.attention(trace.n_layers() - 1);
    let n = images.len();
    let mut scores = vec![0.0f64; n];
    let mut normalized = true;
    let rows = (attn.heads * queries.len()) as f64;
    for h in 0..attn.heads {
        for q in queries.clone() {
            let row = attn.row(h, q);
            let mass: f64 = images.clone().map(|j| f64::from(row[j])).sum();
            if mass > 0.0 {
                for (slot, j) in images.clone().enumerate() {
                    scores[slot] += f64::from(row[j]) / mass / rows;
                }
            } else {
                normalized = false;
            }
        }
    }
    let mut pairs: Vec<(usize, f32)> = scores
        .iter()
        .enumerate()
        .map(|(slot, &s)| (images.start + slot, s as f32))
        .collect();
    sort_selection_pairs(&mut pairs);
    pairs.truncate(k.min(n));
    let (indices, top_scores) = pairs.into_iter().unzip();
    let selection = TokenSelection::new(indices, top_scores, SelectionOrigin::Glimpse, layout)?;
    Ok((GlimpseMap { scores, normalized }, selection))
}

/// Relative attention change between the first and last layer over a
/// candidate set: `(last − first) / (first + ε)`, elementwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftScoreMatrix {
    /// Row-major `[K × K]` over `candidate_indices` order.
    pub values: Vec<f64>,
    /// Ascending image-token sequence positions.
    pub candidate_indices: Vec<usize>,
}

impl ShiftScoreMatrix {
    pub fn k(&self) -> usize {
        self.candidate_indices.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k() + j]
    }

    /// Per-token reduction: mean over the token's row and column (incoming
    /// plus outgoing shift), `(row_sum + col_sum) / 2K`.
    pub fn per_token_scores(&self) -> Vec<f64> {
        let k = self.k();
        (0..k)
            .map(|t| {
                let row: f64 = (0..k).map(|j| self.at(t, j)).sum();
                let col: f64 = (0..k).map(|i| self.at(i, t)).sum();
                (row + col) / (2 * k) as f64
            })
            .collect()
    }
}

/// Head-mean image↔image shift matrix over the candidate tokens. Candidate
/// order is canonicalized to ascending index, so any permutation of the same
/// candidate set produces the identical matrix.
pub fn shift_scores(
    trace: &MultimodalTrace,
    candidates: &TokenSelection,
    epsilon: f64,
) -> Result<ShiftScoreMatrix> {
    if candidates.is_empty() {
        return Err(Error::Data("refocus requires a non-empty candidate set".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::validation("epsilon must be positive"));
    }
    candidates.validate(trace.layout())?;
    let mut idx: Vec<usize> = candidates.indices().to_vec();
    idx.sort_unstable();
    let first = trace.attention(0);
    let last = trace.attention(trace.n_layers() - 1);
    let k = idx.len();
    let mut values = Vec::with_capacity(k * k);
    for &i in &idx {
        for &j in &idx {
            let a1 = first.head_mean(i, j);
            let al = last.head_mean(i, j);
            values.push((al - a1) / (a1 + epsilon));
        }
    }
    Ok(ShiftScoreMatrix { values, candidate_indices: idx })
}

/// Filter candidates down to the `ceil(keep_fraction · K)` tokens with the
/// highest shift scores (most dynamic across depth ⇒ foreground).
pub fn refocus(
    trace: &MultimodalTrace,
    candidates: &TokenSelection,
    epsilon: f64,
    keep_fraction: f64,
) -> Result<TokenSelection> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::validation(format!(
            "keep_fraction {keep_fraction} outside (0, 1]"
        )));
    }
    let matrix = shift_scores(trace, candidates, epsilon)?;
    let per_token = matrix.per_token_scores();
    let mut pairs: Vec<(usize, f32)> = matrix
        .candidate_indices
        .iter()
        .zip(&per_token)
        .map(|(&i, &s)| (i, s as f32))
        .collect();
    sort_selection_pairs(&mut pairs);
    let keep = (keep_fraction * matrix.k() as f64).ceil() as usize;
    pairs.truncate(keep.max(1));
    let (indices, scores) = pairs.into_iter().unzip();
    TokenSelection::new(indices, scores, SelectionOrigin::Refocus, trace.layout())
}

/// Jaccard overlap of two selections' index sets; both empty counts as 1.
pub fn selection_iou(predicted: &TokenSelection, reference: &TokenSelection) -> f64 {
    let a = predicted.index_set();
    let b = reference.index_set();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Render the glimpse map as a grid PNG: grayscale intensity is the score
/// (max-normalized), selected tokens get an outline.
pub fn render_heatmap(
    map: &GlimpseMap,
    layout: &TokenLayout,
    selection: Option<&TokenSelection>,
    cell_px: u32,
    path: &Path,
) -> Result<()> {
    if map.scores.len() != layout.n_image_tokens {
        return Err(Error::shape("glimpse map length != n_image_tokens"));
    }
    if cell_px == 0 {
        return Err(Error::validation("cell_px must be positive"));
    }
    let peak = map.scores.iter().copied().fold(0.0f64, f64::max);
    let selected: std::collections::BTreeSet<usize> =
        selection.map(|s| s.index_set()).unwrap_or_default();
    let (w, h) = (layout.grid_w as u32 * cell_px, layout.grid_h as u32 * cell_px);
    let mut img = image::RgbImage::new(w, h);
    for row in 0..layout.grid_h {
        for col in 0..layout.grid_w {
            let slot = row * layout.grid_w + col;
            let value = if peak > 0.0 { map.scores[slot] / peak } else { 0.0 };
            let gray = (value * 255.0).round().clamp(0.0, 255.0) as u8;
            let outlined = selected.contains(&(layout.image_token_range.start + slot));
            for dy in 0..cell_px {
                for dx in 0..cell_px {
                    let border = dy == 0 || dx == 0 || dy == cell_px - 1 || dx == cell_px - 1;
                    let px = if outlined && border {
                        image::Rgb([224, 40, 40])
                    } else {
                        image::Rgb([gray, gray, gray])
                    };
                    img.put_pixel(col as u32 * cell_px + dx, row as u32 * cell_px + dy, px);
                }
            }
        }
    }
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e)))
}

/// CSV of the two-pass result: one line per image token with its grid cell,
/// glimpse score, shift score (blank for non-candidates), and whether the
/// final selection kept it.
pub fn zoomtext_csv(
    map: &GlimpseMap,
    layout: &TokenLayout,
    shift: Option<(&ShiftScoreMatrix, &[f64])>,
    kept: &TokenSelection,
) -> String {
    let mut shift_of = std::collections::BTreeMap::new();
    if let Some((matrix, per_token)) = shift {
        for (&idx, &s) in matrix.candidate_indices.iter().zip(per_token) {
            shift_of.insert(idx, s);
        }
    }
    let kept_set = kept.index_set();
    let mut out = String::from("token_index,row,col,glimpse_score,shift_score,kept\n");
    for slot in 0..layout.n_image_tokens {
        let token = layout.image_token_range.start + slot;
        let (row, col) = layout.seq_to_grid(token);
        let shift_cell = shift_of.get(&token).map(|s| s.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{token},{row},{col},{},{shift_cell},{}\n",
            map.scores[slot],
            kept_set.contains(&token)
        ));
    }
    out
}
