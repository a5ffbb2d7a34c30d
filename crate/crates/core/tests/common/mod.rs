//! Shared fixture builders and independent reference implementations used by
//! the integration suites. The references here deliberately avoid calling the
//! library's own numeric kernels: they re-derive every quantity with plain
//! scalar loops so agreement is evidence, not tautology.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use textlens::trace::{
    AttentionTensor, HiddenStateTensor, MultimodalTrace, OutputHead, SelectionOrigin, TokenLayout,
    TokenSelection,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small random layout: image grid up to `max_image` tokens (grid picked from
/// its factorizations), 1..=max_query query tokens after them.
pub fn random_layout(r: &mut ChaCha8Rng, max_image: usize, max_query: usize) -> TokenLayout {
    loop {
        let n_image = r.gen_range(1..=max_image);
        let mut dims = Vec::new();
        for w in 1..=n_image {
            if n_image % w == 0 {
                dims.push((w, n_image / w));
            }
        }
        let (grid_w, grid_h) = dims[r.gen_range(0..dims.len())];
        let n_query = r.gen_range(1..=max_query);
        let layout = TokenLayout::contiguous(grid_w, grid_h, 16, n_query);
        if layout.validate().is_ok() {
            return layout;
        }
    }
}

/// Row-stochastic attention with strictly positive entries.
pub fn random_attention(r: &mut ChaCha8Rng, layer: usize, heads: usize, seq: usize) -> AttentionTensor {
    let mut weights = Vec::with_capacity(heads * seq * seq);
    for _ in 0..heads * seq {
        let row: Vec<f64> = (0..seq).map(|_| r.gen_range(0.05..1.0)).collect();
        let sum: f64 = row.iter().sum();
        weights.extend(row.iter().map(|v| (v / sum) as f32));
    }
    AttentionTensor::new(layer, heads, seq, weights).expect("random attention is valid")
}

pub fn random_hidden(r: &mut ChaCha8Rng, layer: usize, seq: usize, d: usize) -> HiddenStateTensor {
    let states: Vec<f32> = (0..seq * d).map(|_| r.gen_range(-2.0..2.0)).collect();
    HiddenStateTensor::new(layer, seq, d, states).expect("random hidden is valid")
}

pub fn random_head(r: &mut ChaCha8Rng, vocab: usize, d: usize) -> OutputHead {
    let weight: Vec<f32> = (0..vocab * d).map(|_| r.gen_range(-1.0..1.0)).collect();
    let bias: Vec<f32> = (0..vocab).map(|_| r.gen_range(-0.5..0.5)).collect();
    let gain: Vec<f32> = (0..d).map(|_| r.gen_range(0.5..1.5)).collect();
    OutputHead::new(vocab, d, weight, bias, gain).expect("random head is valid")
}

pub struct TraceSpec {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub vocab: usize,
    pub max_image: usize,
    pub max_query: usize,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec { layers: 3, heads: 2, d_model: 8, vocab: 24, max_image: 9, max_query: 4 }
    }
}

/// A fully valid random trace, sized by `spec`.
pub fn random_trace(r: &mut ChaCha8Rng, spec: &TraceSpec) -> MultimodalTrace {
    let layout = random_layout(r, spec.max_image, spec.max_query);
    let seq = layout.seq_len_lower_bound() + r.gen_range(0..3usize);
    let attentions: Vec<AttentionTensor> =
        (0..spec.layers).map(|l| random_attention(r, l, spec.heads, seq)).collect();
    let hidden: Vec<HiddenStateTensor> =
        (0..=spec.layers).map(|l| random_hidden(r, l, seq, spec.d_model)).collect();
    let token_ids: Vec<u32> = (0..seq).map(|_| r.gen_range(0..spec.vocab as u32)).collect();
    let head = random_head(r, spec.vocab, spec.d_model);
    MultimodalTrace::new(layout, attentions, hidden, token_ids, head, "fixture".into())
        .expect("random trace is valid")
}

/// Random non-empty selection of image tokens, scores sorted the way the
/// library requires (non-increasing, ties broken by ascending index).
pub fn random_selection(r: &mut ChaCha8Rng, layout: &TokenLayout) -> TokenSelection {
    let image: Vec<usize> = layout.image_token_range.clone().collect();
    let k = r.gen_range(1..=image.len());
    let mut indices = image;
    // Partial Fisher–Yates: the first k entries become the sample.
    for i in 0..k {
        let j = r.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    indices.truncate(k);
    let mut pairs: Vec<(usize, f32)> =
        indices.into_iter().map(|i| (i, r.gen_range(0.0..1.0f32))).collect();
    pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let (indices, scores): (Vec<usize>, Vec<f32>) = pairs.into_iter().unzip();
    TokenSelection::new(indices, scores, SelectionOrigin::GroundTruthBoxes, layout)
        .expect("random selection is valid")
}

// ---------------------------------------------------------------------------
// Reference implementations (scalar, quadratic, no shared code with the lib).
// ---------------------------------------------------------------------------

/// Text-region attention: head-averaged image→selection mass over
/// image→image mass, as two explicit nested loops.
pub fn oracle_text_region_attention(
    attention: &AttentionTensor,
    layout: &TokenLayout,
    selection: &TokenSelection,
) -> Option<f64> {
    let image: Vec<usize> = layout.image_token_range.clone().collect();
    let in_selection: std::collections::BTreeSet<usize> =
        selection.indices().iter().copied().collect();
    let mean = |q: usize, k: usize| -> f64 {
        let mut acc = 0.0;
        for h in 0..attention.heads {
            acc += f64::from(attention.at(h, q, k));
        }
        acc / attention.heads as f64
    };
    let mut numer = 0.0;
    let mut denom = 0.0;
    for &i in &image {
        for &j in &image {
            let w = mean(i, j);
            denom += w;
            if in_selection.contains(&j) {
                numer += w;
            }
        }
    }
    if denom == 0.0 {
        None
    } else {
        Some(numer / denom)
    }
}

/// Full-precision softmax-ratio recomputation of the per-layer tendency:
/// own RMS-norm, own matvec, own softmax.
pub fn oracle_tendency(
    trace: &MultimodalTrace,
    anchor: usize,
    hal: u32,
    gt: u32,
) -> Vec<f64> {
    let head = trace.output_head();
    let d = trace.d_model();
    let vocab = head.vocab;
    let project = |state: &[f32]| -> Vec<f64> {
        let ms = state.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / d as f64;
        let scale = 1.0 / (ms + 1e-6).sqrt();
        let normed: Vec<f64> = state
            .iter()
            .zip(head.final_norm_gain())
            .map(|(&v, &g)| f64::from(v) * scale * f64::from(g))
            .collect();
        (0..vocab)
            .map(|v| {
                let row = &head.weight()[v * d..(v + 1) * d];
                row.iter().zip(&normed).map(|(&w, &x)| f64::from(w) * x).sum::<f64>()
                    + f64::from(head.bias()[v])
            })
            .collect()
    };
    let softmax = |logits: &[f64]| -> Vec<f64> {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.iter().map(|&e| e / z).collect()
    };
    (0..trace.n_layers())
        .map(|l| {
            let state = trace.hidden(l + 1).position(anchor - 1);
            let p = softmax(&project(state));
            p[hal as usize] / (p[hal as usize] + p[gt as usize])
        })
        .collect()
}

/// Glimpse map by brute force: for every (head, query) pair renormalize the
/// image slice of the attention row, and average the renormalized rows.
/// Returns (scores, all_rows_had_mass).
pub fn oracle_glimpse(trace: &MultimodalTrace) -> (Vec<f64>, bool) {
    let layout = trace.layout();
    let attn = trace.attention(trace.n_layers() - 1);
    let image: Vec<usize> = layout.image_token_range.clone().collect();
    let queries: Vec<usize> = layout.query_token_range.clone().collect();
    let mut scores = vec![0.0f64; image.len()];
    let mut all_mass = true;
    let n_pairs = (attn.heads * queries.len()) as f64;
    for h in 0..attn.heads {
        for &q in &queries {
            let mass: f64 = image.iter().map(|&j| f64::from(attn.at(h, q, j))).sum();
            if mass == 0.0 {
                all_mass = false;
                continue;
            }
            for (slot, &j) in image.iter().enumerate() {
                scores[slot] += f64::from(attn.at(h, q, j)) / mass / n_pairs;
            }
        }
    }
    (scores, all_mass)
}

/// Pairwise attention shift between the first and last attention layers,
/// recomputed one scalar at a time over the candidate list (ascending).
pub fn oracle_shift(
    trace: &MultimodalTrace,
    candidates: &[usize],
    epsilon: f64,
) -> Vec<Vec<f64>> {
    let first = trace.attention(0);
    let last = trace.attention(trace.n_layers() - 1);
    let mean = |a: &AttentionTensor, q: usize, k: usize| -> f64 {
        let mut acc = 0.0;
        for h in 0..a.heads {
            acc += f64::from(a.at(h, q, k));
        }
        acc / a.heads as f64
    };
    candidates
        .iter()
        .map(|&i| {
            candidates
                .iter()
                .map(|&j| {
                    let a1 = mean(first, i, j);
                    let al = mean(last, i, j);
                    (al - a1) / (a1 + epsilon)
                })
                .collect()
        })
        .collect()
}

/// Counting-definition ranks (1 + #less + (#equal - 1)/2) and a plain
/// Pearson correlation over them.
pub fn oracle_spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let rank = |vals: &[f64]| -> Vec<f64> {
        vals.iter()
            .map(|&v| {
                let less = vals.iter().filter(|&&o| o < v).count() as f64;
                let equal = vals.iter().filter(|&&o| o == v).count() as f64;
                1.0 + less + (equal - 1.0) / 2.0
            })
            .collect()
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in rx.iter().zip(&ry) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// Population coefficient of variation, recomputed directly.
pub fn oracle_cv(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// A trace whose attention columns follow prescribed per-layer series:
/// `column_series[t][l]` is the share of every query row's attention that
/// lands on image token `t` at layer `l`. Rows distribute leftover mass
/// uniformly; hidden states and head are arbitrary but valid.
pub fn trace_with_column_series(column_series: &[Vec<f64>], heads: usize) -> MultimodalTrace {
    let n_image = column_series.len();
    let layers = column_series[0].len();
    let layout = TokenLayout::contiguous(n_image, 1, 16, 1);
    let seq = layout.seq_len_lower_bound();
    let mut attentions = Vec::new();
    for l in 0..layers {
        let shares: Vec<f64> = column_series.iter().map(|s| s[l]).collect();
        let total: f64 = shares.iter().sum();
        assert!(total <= 1.0 + 1e-12, "column shares at layer {l} exceed a row budget");
        let leftover = ((1.0 - total) / (seq - n_image) as f64).max(0.0);
        let mut weights = Vec::with_capacity(heads * seq * seq);
        for _h in 0..heads {
            for _q in 0..seq {
                for k in 0..seq {
                    let w = if k < n_image { shares[k] } else { leftover };
                    weights.push(w as f32);
                }
            }
        }
        attentions.push(AttentionTensor::new(l, heads, seq, weights).expect("series attention"));
    }
    let d = 4;
    let hidden: Vec<HiddenStateTensor> = (0..=layers)
        .map(|l| {
            HiddenStateTensor::new(l, seq, d, vec![0.5; seq * d]).expect("series hidden")
        })
        .collect();
    let head = OutputHead::new(3, d, vec![0.1; 3 * d], vec![0.0; 3], vec![1.0; d])
        .expect("series head");
    MultimodalTrace::new(layout, attentions, hidden, (0..seq as u32).collect(), head, "series".into())
        .expect("series trace is valid")
}
