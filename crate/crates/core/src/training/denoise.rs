//! Layout-aware span corruption.

use crate::model::vocab::{Vocab, END};
use crate::nn::BBox;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseExample {
    pub input_ids: Vec<usize>,
    /// One box per input position; a sentinel carries the box of the first
    /// token of the span it replaced.
    pub input_boxes: Vec<BBox>,
    /// `<s_i> span_i ...` for every span, then the end token.
    pub target: Vec<usize>,
}

/// Maximal runs of masked positions as `(start, len)`.
fn runs(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < mask.len() {
        if mask[i] {
            let start = i;
            while i < mask.len() && mask[i] {
                i += 1;
            }
            out.push((start, i - start));
        } else {
            i += 1;
        }
    }
    out
}

/// Replaces each `(start, len)` span by one sentinel. Spans must be sorted,
/// disjoint and non-adjacent, and no more than the vocabulary's sentinels.
pub fn corrupt_spans(ids: &[usize], boxes: &[BBox], spans: &[(usize, usize)], vocab: &Vocab) -> DenoiseExample {
    assert_eq!(ids.len(), boxes.len());
    let mut input_ids = Vec::with_capacity(ids.len());
    let mut input_boxes = Vec::with_capacity(ids.len());
    let mut target = Vec::new();
    let mut pos = 0;
    for (i, &(start, len)) in spans.iter().enumerate() {
        input_ids.extend_from_slice(&ids[pos..start]);
        input_boxes.extend_from_slice(&boxes[pos..start]);
        let s = vocab.sentinel(i);
        input_ids.push(s);
        input_boxes.push(boxes[start]);
        target.push(s);
        target.extend_from_slice(&ids[start..start + len]);
        pos = start + len;
    }
    input_ids.extend_from_slice(&ids[pos..]);
    input_boxes.extend_from_slice(&boxes[pos..]);
    target.push(END);
    DenoiseExample {
        input_ids,
        input_boxes,
        target,
    }
}

/// Span length with a geometric distribution of the given mean (support ≥ 1).
fn geometric_len(mean: f64, rng: &mut Rng) -> usize {
    if mean <= 1.0 {
        return 1;
    }
    let p = 1.0 / mean;
    let u = 1.0 - rng.uniform();
    1 + (u.ln() / (1.0 - p).ln()).floor() as usize
}

/// Masks `round(mask_ratio · n)` tokens (at most `n - 1`) in geometric-length
/// spans at random positions. Adjacent spans merge; spans beyond the
/// vocabulary's sentinel count are left unmasked.
pub fn make_denoise_example(
    ids: &[usize],
    boxes: &[BBox],
    mask_ratio: f64,
    mean_span: f64,
    vocab: &Vocab,
    rng: &mut Rng,
) -> DenoiseExample {
    let n = ids.len();
    let n_mask = ((mask_ratio * n as f64).round() as usize).min(n.saturating_sub(1));
    let mut mask = vec![false; n];
    let mut masked = 0;
    while masked < n_mask {
        let want = geometric_len(mean_span, rng).min(n_mask - masked);
        let start = rng.below(n);
        let len = (start..(start + want).min(n)).take_while(|&i| !mask[i]).count();
        if len == 0 {
            continue;
        }
        mask[start..start + len].iter_mut().for_each(|m| *m = true);
        masked += len;
    }
    let mut spans = runs(&mask);
    spans.truncate(vocab.n_sentinels());
    corrupt_spans(ids, boxes, &spans, vocab)
}

/// Undoes the corruption using the target spans.
pub fn reconstruct(example: &DenoiseExample, vocab: &Vocab) -> Vec<usize> {
    let mut spans: Vec<(usize, Vec<usize>)> = Vec::new();
    for &t in &example.target {
        if t == END {
            break;
        }
        if vocab.is_sentinel(t) {
            spans.push((t, Vec::new()));
        } else if let Some(last) = spans.last_mut() {
            last.1.push(t);
        }
    }
    let mut out = Vec::new();
    for &t in &example.input_ids {
        match spans.iter().find(|(s, _)| *s == t) {
            Some((_, toks)) => out.extend_from_slice(toks),
            None => out.push(t),
        }
    }
    out
}
