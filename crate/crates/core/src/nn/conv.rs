//! 2D cross-correlation and its transpose.
//!
//! Output size for `Same` padding is `ceil(in / stride)` with
//! `pad_total = max((out - 1) * stride + k - in, 0)` split as
//! `pad_before = pad_total / 2`, the remainder after. `Valid` uses
//! `(in - k) / stride + 1` with no padding. Padding is zero fill.
//!
//! A transpose convolution with kernel `K` and stride `s` is exactly the
//! adjoint of the convolution with the same `K` and `s` run from the larger
//! grid to the smaller one, so both share the three kernels below.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{ParamRef, ParamSet};
use super::Tensor3;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    pad_top: isize,
    pad_left: isize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

fn axis(n: usize, k: usize, s: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = n.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(n);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if n < k {
                return Err(Error::domain(format!("valid window {k} exceeds extent {n}")));
            }
            Ok(((n - k) / s + 1, 0))
        }
    }
}

fn geometry(
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    (sh, sw): (usize, usize),
    padding: Padding,
) -> Result<Geometry> {
    if in_h == 0 || in_w == 0 {
        return Err(Error::domain("convolution over an empty tensor"));
    }
    let (out_h, pt) = axis(in_h, kh, sh, padding)?;
    let (out_w, pl) = axis(in_w, kw, sw, padding)?;
    Ok(Geometry {
        kh,
        kw,
        sh,
        sw,
        pad_top: pt as isize,
        pad_left: pl as isize,
        in_h,
        in_w,
        out_h,
        out_w,
    })
}

impl Geometry {
    #[inline]
    fn src(&self, o: usize, tap: usize, stride: usize, pad: isize, extent: usize) -> Option<usize> {
        let i = (o * stride + tap) as isize - pad;
        (i >= 0 && (i as usize) < extent).then_some(i as usize)
    }
}

const PAR_MIN_OUTPUTS: usize = 1 << 14;

/// out[o, co] = sum over taps and ci of x[i, ci] * w[tap, ci, co]
fn correlate(x: &Tensor3, weight: &[f64], g: &Geometry, cout: usize) -> Tensor3 {
    let parallel = g.out_h * g.out_w * cout >= PAR_MIN_OUTPUTS;
    correlate_rows(x, weight, g, cout, parallel)
}

fn correlate_rows(x: &Tensor3, weight: &[f64], g: &Geometry, cout: usize, parallel: bool) -> Tensor3 {
    let cin = x.c;
    let mut out = Tensor3::zeros(g.out_h, g.out_w, cout);
    let row_len = g.out_w * cout;
    let row_kernel = |oi: usize, row: &mut [f64]| {
        for a in 0..g.kh {
            let Some(ii) = g.src(oi, a, g.sh, g.pad_top, g.in_h) else {
                continue;
            };
            for oj in 0..g.out_w {
                let acc = &mut row[oj * cout..(oj + 1) * cout];
                for b in 0..g.kw {
                    let Some(jj) = g.src(oj, b, g.sw, g.pad_left, g.in_w) else {
                        continue;
                    };
                    let xs = x.pixel(ii, jj);
                    let base = (a * g.kw + b) * cin * cout;
                    for (ci, &xv) in xs.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &weight[base + ci * cout..base + (ci + 1) * cout];
                        for (o, &wv) in acc.iter_mut().zip(wrow) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
    };
    // Rows are independent and each accumulates in a fixed order, so the
    // parallel and sequential paths are bit-identical.
    if parallel {
        out.data
            .par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(oi, row)| row_kernel(oi, row));
    } else {
        out.data
            .chunks_mut(row_len)
            .enumerate()
            .for_each(|(oi, row)| row_kernel(oi, row));
    }
    out
}

/// Adjoint of `correlate`: scatters `y` (out grid, cout) back to the in grid.
fn correlate_transpose(y: &Tensor3, weight: &[f64], g: &Geometry, cin: usize) -> Tensor3 {
    let cout = y.c;
    let mut out = Tensor3::zeros(g.in_h, g.in_w, cin);
    for oi in 0..g.out_h {
        for a in 0..g.kh {
            let Some(ii) = g.src(oi, a, g.sh, g.pad_top, g.in_h) else {
                continue;
            };
            for oj in 0..g.out_w {
                let ys = y.pixel(oi, oj);
                for b in 0..g.kw {
                    let Some(jj) = g.src(oj, b, g.sw, g.pad_left, g.in_w) else {
                        continue;
                    };
                    let base = (a * g.kw + b) * cin * cout;
                    let dst = out.idx(ii, jj, 0);
                    for ci in 0..cin {
                        let wrow = &weight[base + ci * cout..base + (ci + 1) * cout];
                        let s: f64 = ys.iter().zip(wrow).map(|(a, b)| a * b).sum();
                        out.data[dst + ci] += s;
                    }
                }
            }
        }
    }
    out
}

/// d/dw of <correlate(big, w), small>.
fn kernel_grad(big: &Tensor3, small: &Tensor3, g: &Geometry) -> Vec<f64> {
    let (cin, cout) = (big.c, small.c);
    let mut gw = vec![0.0; g.kh * g.kw * cin * cout];
    for oi in 0..g.out_h {
        for a in 0..g.kh {
            let Some(ii) = g.src(oi, a, g.sh, g.pad_top, g.in_h) else {
                continue;
            };
            for oj in 0..g.out_w {
                let ss = small.pixel(oi, oj);
                for b in 0..g.kw {
                    let Some(jj) = g.src(oj, b, g.sw, g.pad_left, g.in_w) else {
                        continue;
                    };
                    let base = (a * g.kw + b) * cin * cout;
                    for (ci, &bv) in big.pixel(ii, jj).iter().enumerate() {
                        if bv == 0.0 {
                            continue;
                        }
                        let row = &mut gw[base + ci * cout..base + (ci + 1) * cout];
                        for (o, &sv) in row.iter_mut().zip(ss) {
                            *o += bv * sv;
                        }
                    }
                }
            }
        }
    }
    gw
}

fn bias_grad(g: &Tensor3) -> Vec<f64> {
    let mut gb = vec![0.0; g.c];
    for px in g.data.chunks_exact(g.c) {
        for (b, v) in gb.iter_mut().zip(px) {
            *b += v;
        }
    }
    gb
}

fn add_bias(t: &mut Tensor3, bias: &[f64]) {
    for px in t.data.chunks_exact_mut(t.c) {
        for (v, b) in px.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Convolution weights in (kh, kw, c_in, c_out) layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub kh: usize,
    pub kw: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: (usize, usize),
    pub padding: Padding,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(
        (kh, kw): (usize, usize),
        c_in: usize,
        c_out: usize,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        if kh == 0 || kw == 0 || c_in == 0 || c_out == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Config("convolution dims and strides must be positive".into()));
        }
        if padding == Padding::Same && (kh % 2 == 0 || kw % 2 == 0) {
            return Err(Error::Config(format!(
                "same-padded convolution needs an odd kernel, got {kh}x{kw}"
            )));
        }
        Ok(ConvParams {
            kh,
            kw,
            c_in,
            c_out,
            stride,
            padding,
            weight: vec![0.0; kh * kw * c_in * c_out],
            bias: vec![0.0; c_out],
        })
    }

    pub fn zeros_like(&self) -> Self {
        ConvParams {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
            ..self.clone()
        }
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let g = geometry(h, w, self.kh, self.kw, self.stride, self.padding)?;
        Ok((g.out_h, g.out_w))
    }

    fn check_input(&self, x: &Tensor3) -> Result<Geometry> {
        if x.c != self.c_in {
            return Err(Error::domain(format!(
                "convolution expects {} input channels, got {}",
                self.c_in, x.c
            )));
        }
        geometry(x.h, x.w, self.kh, self.kw, self.stride, self.padding)
    }
}

impl ParamSet for ConvParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: super::optim::child(prefix, "weight"),
            shape: vec![self.kh, self.kw, self.c_in, self.c_out],
            data: &self.weight,
        });
        out.push(ParamRef {
            name: super::optim::child(prefix, "bias"),
            shape: vec![self.c_out],
            data: &self.bias,
        });
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<f64>>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

pub fn conv2d_forward(x: &Tensor3, p: &ConvParams) -> Result<Tensor3> {
    let g = p.check_input(x)?;
    let mut out = correlate(x, &p.weight, &g, p.c_out);
    add_bias(&mut out, &p.bias);
    Ok(out)
}

/// Returns (dL/dx, dL/dparams) with the gradient packed in a `ConvParams`.
pub fn conv2d_backward(
    x: &Tensor3,
    p: &ConvParams,
    grad_out: &Tensor3,
) -> Result<(Tensor3, ConvParams)> {
    let g = p.check_input(x)?;
    if grad_out.dims() != (g.out_h, g.out_w, p.c_out) {
        return Err(Error::domain(format!(
            "conv gradient has dims {:?}, expected {:?}",
            grad_out.dims(),
            (g.out_h, g.out_w, p.c_out)
        )));
    }
    let gx = correlate_transpose(grad_out, &p.weight, &g, p.c_in);
    let gp = ConvParams {
        weight: kernel_grad(x, grad_out, &g),
        bias: bias_grad(grad_out),
        ..p.zeros_like()
    };
    Ok((gx, gp))
}

/// Transpose-convolution weights in (kh, kw, c_out, c_in) layout, i.e. the
/// layout of the convolution this layer is the adjoint of.
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvParams {
    pub kh: usize,
    pub kw: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: (usize, usize),
    pub padding: Padding,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DeconvParams {
    pub fn zeros(
        (kh, kw): (usize, usize),
        c_in: usize,
        c_out: usize,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        if kh == 0 || kw == 0 || c_in == 0 || c_out == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Config("deconvolution dims and strides must be positive".into()));
        }
        Ok(DeconvParams {
            kh,
            kw,
            c_in,
            c_out,
            stride,
            padding,
            weight: vec![0.0; kh * kw * c_in * c_out],
            bias: vec![0.0; c_out],
        })
    }

    pub fn zeros_like(&self) -> Self {
        DeconvParams {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
            ..self.clone()
        }
    }

    /// Spatial size produced from an `h x w` input.
    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let up = |n: usize, k: usize, s: usize| match self.padding {
            Padding::Same => n * s,
            Padding::Valid => (n - 1) * s + k,
        };
        (up(h, self.kh, self.stride.0), up(w, self.kw, self.stride.1))
    }

    fn check_input(&self, x: &Tensor3) -> Result<Geometry> {
        if x.c != self.c_in {
            return Err(Error::domain(format!(
                "deconvolution expects {} input channels, got {}",
                self.c_in, x.c
            )));
        }
        if x.h == 0 || x.w == 0 {
            return Err(Error::domain("deconvolution over an empty tensor"));
        }
        let (oh, ow) = self.output_dims(x.h, x.w);
        let g = geometry(oh, ow, self.kh, self.kw, self.stride, self.padding)?;
        debug_assert_eq!((g.out_h, g.out_w), (x.h, x.w));
        Ok(g)
    }
}

impl ParamSet for DeconvParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: super::optim::child(prefix, "weight"),
            shape: vec![self.kh, self.kw, self.c_out, self.c_in],
            data: &self.weight,
        });
        out.push(ParamRef {
            name: super::optim::child(prefix, "bias"),
            shape: vec![self.c_out],
            data: &self.bias,
        });
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<f64>>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

pub fn deconv2d_forward(x: &Tensor3, p: &DeconvParams) -> Result<Tensor3> {
    let g = p.check_input(x)?;
    let mut out = correlate_transpose(x, &p.weight, &g, p.c_out);
    add_bias(&mut out, &p.bias);
    Ok(out)
}

pub fn deconv2d_backward(
    x: &Tensor3,
    p: &DeconvParams,
    grad_out: &Tensor3,
) -> Result<(Tensor3, DeconvParams)> {
    let g = p.check_input(x)?;
    if grad_out.dims() != (g.in_h, g.in_w, p.c_out) {
        return Err(Error::domain(format!(
            "deconv gradient has dims {:?}, expected {:?}",
            grad_out.dims(),
            (g.in_h, g.in_w, p.c_out)
        )));
    }
    let gx = correlate(grad_out, &p.weight, &g, p.c_in);
    let gp = DeconvParams {
        weight: kernel_grad(grad_out, x, &g),
        bias: bias_grad(grad_out),
        ..p.zeros_like()
    };
    Ok((gx, gp))
}
