//! Dense H x W x C tensor kernels with hand-derived backward passes.

pub mod conv;
pub mod fire;
pub mod init;
pub mod loss;
pub mod optim;
pub mod pool;

use std::ops::Range;

use crate::error::{Error, Result};

pub use conv::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, ConvParams,
    DeconvParams, Padding,
};
pub use fire::{
    fire_backward, fire_deconv_backward, fire_deconv_forward, fire_forward, FireCache,
    FireDeconvCache, FireDeconvParams, FireParams,
};
pub use loss::{softmax, softmax_cross_entropy};
pub use optim::{sgd_step, OptimizerState, ParamSet};
pub use pool::{maxpool_backward, maxpool_forward, PoolIndices};

/// Row-major (H, W, C) feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Tensor3 {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::domain(format!(
                "{} values cannot fill a {h}x{w}x{c} tensor",
                data.len()
            )));
        }
        Ok(Tensor3 { h, w, c, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.w + j) * self.c + k
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx(i, j, k)]
    }

    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let s = (i * self.w + j) * self.c;
        &self.data[s..s + self.c]
    }

    pub fn zeros_like(&self) -> Self {
        Tensor3::zeros(self.h, self.w, self.c)
    }

    pub fn dot(&self, other: &Tensor3) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Elementwise sum; shapes must agree.
    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.dims() != other.dims() {
            return Err(Error::domain(format!(
                "cannot add {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor3 { data, ..*self })
    }

    pub fn add_assign(&mut self, other: &Tensor3) {
        debug_assert_eq!(self.dims(), other.dims());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Reverse the W axis.
    pub fn flip_w(&self) -> Tensor3 {
        let mut out = self.zeros_like();
        for i in 0..self.h {
            for j in 0..self.w {
                let src = self.idx(i, j, 0);
                let dst = out.idx(i, self.w - 1 - j, 0);
                out.data[dst..dst + self.c].copy_from_slice(&self.data[src..src + self.c]);
            }
        }
        out
    }
}

impl Tensor3 {
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn relu(x: &Tensor3) -> Tensor3 {
    Tensor3 {
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        ..*x
    }
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(out: &Tensor3, grad: &Tensor3) -> Tensor3 {
    Tensor3 {
        data: out
            .data
            .iter()
            .zip(&grad.data)
            .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
            .collect(),
        ..*grad
    }
}

pub fn concat_channels(xs: &[&Tensor3]) -> Result<Tensor3> {
    let first = xs
        .first()
        .ok_or_else(|| Error::domain("concat of zero tensors"))?;
    let (h, w) = (first.h, first.w);
    if let Some(bad) = xs.iter().find(|t| (t.h, t.w) != (h, w)) {
        return Err(Error::domain(format!(
            "concat spatial mismatch: {h}x{w} vs {}x{}",
            bad.h, bad.w
        )));
    }
    let c: usize = xs.iter().map(|t| t.c).sum();
    let mut data = Vec::with_capacity(h * w * c);
    for p in 0..h * w {
        for t in xs {
            data.extend_from_slice(&t.data[p * t.c..(p + 1) * t.c]);
        }
    }
    Ok(Tensor3 { h, w, c, data })
}

pub fn slice_channels(x: &Tensor3, range: Range<usize>) -> Result<Tensor3> {
    if range.start > range.end || range.end > x.c {
        return Err(Error::domain(format!(
            "channel range {range:?} out of bounds for {} channels",
            x.c
        )));
    }
    let c = range.len();
    let mut data = Vec::with_capacity(x.h * x.w * c);
    for p in 0..x.h * x.w {
        data.extend_from_slice(&x.data[p * x.c + range.start..p * x.c + range.end]);
    }
    Ok(Tensor3 {
        h: x.h,
        w: x.w,
        c,
        data,
    })
}
