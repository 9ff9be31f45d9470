//! Per-cell softmax and class-weighted, masked cross-entropy.

use super::Tensor3;
use crate::error::{Error, Result};
use crate::kitti_io::ClassId;

/// Softmax over the channel axis of every cell.
pub fn softmax(logits: &Tensor3) -> Tensor3 {
    let mut out = logits.clone();
    for px in out.data.chunks_exact_mut(logits.c) {
        let max = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in px.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in px.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Weighted mean of `-log p[label]` over masked cells, normalized by the
/// total weight of those cells. Returns the loss and its gradient with
/// respect to the logits (zero at unmasked cells).
pub fn softmax_cross_entropy(
    logits: &Tensor3,
    labels: &[ClassId],
    class_weights: &[f64],
    mask: &[bool],
) -> Result<(f64, Tensor3)> {
    let cells = logits.h * logits.w;
    if labels.len() != cells || mask.len() != cells {
        return Err(Error::domain("labels/mask do not match logits"));
    }
    if class_weights.len() != logits.c {
        return Err(Error::domain(format!(
            "{} class weights for {} logit channels",
            class_weights.len(),
            logits.c
        )));
    }
    let total: f64 = labels
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(l, _)| class_weights.get(l.index()).copied().unwrap_or(0.0))
        .sum();
    if !mask.iter().any(|&m| m) {
        return Err(Error::domain("cross-entropy over an empty mask"));
    }
    if labels.iter().any(|l| l.index() >= logits.c) {
        return Err(Error::domain("label index exceeds number of classes"));
    }
    if !(total > 0.0) {
        return Err(Error::domain("masked cells carry zero total class weight"));
    }
    let probs = softmax(logits);
    let mut grad = logits.zeros_like();
    let mut loss = 0.0;
    for cell in 0..cells {
        if !mask[cell] {
            continue;
        }
        let l = labels[cell].index();
        let w = class_weights[l] / total;
        let p = &probs.data[cell * logits.c..(cell + 1) * logits.c];
        // log-sum-exp form keeps the loss finite for saturated cells
        let px = &logits.data[cell * logits.c..(cell + 1) * logits.c];
        let max = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + px.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += w * (lse - px[l]);
        let g = &mut grad.data[cell * logits.c..(cell + 1) * logits.c];
        for (k, gk) in g.iter_mut().enumerate() {
            *gk = w * (p[k] - if k == l { 1.0 } else { 0.0 });
        }
    }
    Ok((loss, grad))
}
