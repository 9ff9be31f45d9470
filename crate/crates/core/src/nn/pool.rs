//! Max pooling with same-padding semantics (padded taps are ignored).

use super::Tensor3;
use crate::error::{Error, Result};

/// Flat input index selected for every output element.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pub input_dims: (usize, usize, usize),
    pub argmax: Vec<usize>,
}

pub fn maxpool_forward(
    x: &Tensor3,
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
) -> Result<(Tensor3, PoolIndices)> {
    if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
        return Err(Error::domain("pool window and stride must be positive"));
    }
    if x.h == 0 || x.w == 0 {
        return Err(Error::domain("pooling an empty tensor"));
    }
    let out_h = x.h.div_ceil(sh);
    let out_w = x.w.div_ceil(sw);
    let pad_top = ((out_h - 1) * sh + kh).saturating_sub(x.h) / 2;
    let pad_left = ((out_w - 1) * sw + kw).saturating_sub(x.w) / 2;
    let mut out = Tensor3::zeros(out_h, out_w, x.c);
    let mut argmax = vec![0usize; out.data.len()];
    for oi in 0..out_h {
        for oj in 0..out_w {
            for k in 0..x.c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                // scan order: window rows, then columns; strict > keeps the first max
                for a in 0..kh {
                    let ii = (oi * sh + a) as isize - pad_top as isize;
                    if ii < 0 || ii as usize >= x.h {
                        continue;
                    }
                    for b in 0..kw {
                        let jj = (oj * sw + b) as isize - pad_left as isize;
                        if jj < 0 || jj as usize >= x.w {
                            continue;
                        }
                        let idx = x.idx(ii as usize, jj as usize, k);
                        if best_idx == usize::MAX || x.data[idx] > best {
                            best = x.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = out.idx(oi, oj, k);
                out.data[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            input_dims: x.dims(),
            argmax,
        },
    ))
}

pub fn maxpool_backward(indices: &PoolIndices, grad_out: &Tensor3) -> Result<Tensor3> {
    if grad_out.data.len() != indices.argmax.len() {
        return Err(Error::domain("pool gradient does not match forward output"));
    }
    let (h, w, c) = indices.input_dims;
    let mut gx = Tensor3::zeros(h, w, c);
    for (&i, &g) in indices.argmax.iter().zip(&grad_out.data) {
        gx.data[i] += g;
    }
    Ok(gx)
}
