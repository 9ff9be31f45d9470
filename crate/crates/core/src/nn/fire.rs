//! Fire and FireDeconv modules.
//!
//! fire:       relu(squeeze 1x1) -> [relu(expand 1x1) | relu(expand 3x3)]
//! fireDeconv: relu(squeeze 1x1) -> relu(deconv, stride (1,2)) -> expands

use rand::Rng;

use super::conv::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, ConvParams,
    DeconvParams, Padding,
};
use super::init::{init_conv, init_deconv, InitScheme};
use super::optim::{child, ParamRef, ParamSet};
use super::{concat_channels, relu, relu_backward, slice_channels, Tensor3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FireParams {
    pub squeeze: ConvParams,
    pub expand1: ConvParams,
    pub expand3: ConvParams,
}

#[derive(Debug, Clone)]
pub struct FireCache {
    input: Tensor3,
    squeezed: Tensor3,
    e1: Tensor3,
    e3: Tensor3,
}

fn check_widths(c_in: usize, s: usize, e1: usize, e3: usize) -> Result<()> {
    if c_in == 0 || s == 0 || e1 == 0 || e3 == 0 {
        return Err(Error::Config(format!(
            "fire widths must be positive (in {c_in}, squeeze {s}, expand {e1}+{e3})"
        )));
    }
    Ok(())
}

impl FireParams {
    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        scheme: InitScheme,
        c_in: usize,
        s: usize,
        e1: usize,
        e3: usize,
    ) -> Result<Self> {
        check_widths(c_in, s, e1, e3)?;
        Ok(FireParams {
            squeeze: init_conv(rng, scheme, (1, 1), c_in, s, (1, 1), Padding::Same)?,
            expand1: init_conv(rng, scheme, (1, 1), s, e1, (1, 1), Padding::Same)?,
            expand3: init_conv(rng, scheme, (3, 3), s, e3, (1, 1), Padding::Same)?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        FireParams {
            squeeze: self.squeeze.zeros_like(),
            expand1: self.expand1.zeros_like(),
            expand3: self.expand3.zeros_like(),
        }
    }

    pub fn c_in(&self) -> usize {
        self.squeeze.c_in
    }

    pub fn c_out(&self) -> usize {
        self.expand1.c_out + self.expand3.c_out
    }

    pub fn forward(&self, x: &Tensor3) -> Result<(Tensor3, FireCache)> {
        let squeezed = relu(&conv2d_forward(x, &self.squeeze)?);
        let e1 = relu(&conv2d_forward(&squeezed, &self.expand1)?);
        let e3 = relu(&conv2d_forward(&squeezed, &self.expand3)?);
        let out = concat_channels(&[&e1, &e3])?;
        Ok((
            out,
            FireCache {
                input: x.clone(),
                squeezed,
                e1,
                e3,
            },
        ))
    }
}

impl ParamSet for FireParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.squeeze.collect(&child(prefix, "squeeze"), out);
        self.expand1.collect(&child(prefix, "expand1"), out);
        self.expand3.collect(&child(prefix, "expand3"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<f64>>) {
        self.squeeze.collect_mut(out);
        self.expand1.collect_mut(out);
        self.expand3.collect_mut(out);
    }
}

pub fn fire_forward(x: &Tensor3, p: &FireParams) -> Result<Tensor3> {
    Ok(p.forward(x)?.0)
}

/// Gradient through both expand branches, summed at the squeeze output.
fn expand_backward(
    squeezed: &Tensor3,
    e1: &Tensor3,
    e3: &Tensor3,
    expand1: &ConvParams,
    expand3: &ConvParams,
    grad_out: &Tensor3,
) -> Result<(Tensor3, ConvParams, ConvParams)> {
    let n1 = expand1.c_out;
    let g1 = relu_backward(e1, &slice_channels(grad_out, 0..n1)?);
    let g3 = relu_backward(e3, &slice_channels(grad_out, n1..grad_out.c)?);
    let (gs1, gp1) = conv2d_backward(squeezed, expand1, &g1)?;
    let (gs3, gp3) = conv2d_backward(squeezed, expand3, &g3)?;
    Ok((gs1.add(&gs3)?, gp1, gp3))
}

pub fn fire_backward(
    cache: &FireCache,
    p: &FireParams,
    grad_out: &Tensor3,
) -> Result<(Tensor3, FireParams)> {
    if grad_out.dims() != (cache.e1.h, cache.e1.w, p.c_out()) {
        return Err(Error::domain("fire gradient does not match forward output"));
    }
    let (gs, gp1, gp3) = expand_backward(
        &cache.squeezed,
        &cache.e1,
        &cache.e3,
        &p.expand1,
        &p.expand3,
        grad_out,
    )?;
    let gs = relu_backward(&cache.squeezed, &gs);
    let (gx, gps) = conv2d_backward(&cache.input, &p.squeeze, &gs)?;
    Ok((
        gx,
        FireParams {
            squeeze: gps,
            expand1: gp1,
            expand3: gp3,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FireDeconvParams {
    pub squeeze: ConvParams,
    pub deconv: DeconvParams,
    pub expand1: ConvParams,
    pub expand3: ConvParams,
}

#[derive(Debug, Clone)]
pub struct FireDeconvCache {
    input: Tensor3,
    squeezed: Tensor3,
    upsampled: Tensor3,
    e1: Tensor3,
    e3: Tensor3,
}

impl FireDeconvParams {
    /// Width-doubling module; the deconv kernel is 1x4 with stride (1, 2).
    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        scheme: InitScheme,
        c_in: usize,
        s: usize,
        e1: usize,
        e3: usize,
    ) -> Result<Self> {
        check_widths(c_in, s, e1, e3)?;
        Ok(FireDeconvParams {
            squeeze: init_conv(rng, scheme, (1, 1), c_in, s, (1, 1), Padding::Same)?,
            deconv: init_deconv(rng, scheme, (1, 4), s, s, (1, 2), Padding::Same)?,
            expand1: init_conv(rng, scheme, (1, 1), s, e1, (1, 1), Padding::Same)?,
            expand3: init_conv(rng, scheme, (3, 3), s, e3, (1, 1), Padding::Same)?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        FireDeconvParams {
            squeeze: self.squeeze.zeros_like(),
            deconv: self.deconv.zeros_like(),
            expand1: self.expand1.zeros_like(),
            expand3: self.expand3.zeros_like(),
        }
    }

    pub fn c_in(&self) -> usize {
        self.squeeze.c_in
    }

    pub fn c_out(&self) -> usize {
        self.expand1.c_out + self.expand3.c_out
    }

    pub fn forward(&self, x: &Tensor3) -> Result<(Tensor3, FireDeconvCache)> {
        let squeezed = relu(&conv2d_forward(x, &self.squeeze)?);
        let upsampled = relu(&deconv2d_forward(&squeezed, &self.deconv)?);
        let e1 = relu(&conv2d_forward(&upsampled, &self.expand1)?);
        let e3 = relu(&conv2d_forward(&upsampled, &self.expand3)?);
        let out = concat_channels(&[&e1, &e3])?;
        Ok((
            out,
            FireDeconvCache {
                input: x.clone(),
                squeezed,
                upsampled,
                e1,
                e3,
            },
        ))
    }
}

impl ParamSet for FireDeconvParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.squeeze.collect(&child(prefix, "squeeze"), out);
        self.deconv.collect(&child(prefix, "deconv"), out);
        self.expand1.collect(&child(prefix, "expand1"), out);
        self.expand3.collect(&child(prefix, "expand3"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<f64>>) {
        self.squeeze.collect_mut(out);
        self.deconv.collect_mut(out);
        self.expand1.collect_mut(out);
        self.expand3.collect_mut(out);
    }
}

pub fn fire_deconv_forward(x: &Tensor3, p: &FireDeconvParams) -> Result<Tensor3> {
    Ok(p.forward(x)?.0)
}

pub fn fire_deconv_backward(
    cache: &FireDeconvCache,
    p: &FireDeconvParams,
    grad_out: &Tensor3,
) -> Result<(Tensor3, FireDeconvParams)> {
    if grad_out.dims() != (cache.e1.h, cache.e1.w, p.c_out()) {
        return Err(Error::domain("fireDeconv gradient does not match forward output"));
    }
    let (gu, gp1, gp3) = expand_backward(
        &cache.upsampled,
        &cache.e1,
        &cache.e3,
        &p.expand1,
        &p.expand3,
        grad_out,
    )?;
    let gu = relu_backward(&cache.upsampled, &gu);
    let (gs, gpd) = deconv2d_backward(&cache.squeezed, &p.deconv, &gu)?;
    let gs = relu_backward(&cache.squeezed, &gs);
    let (gx, gps) = conv2d_backward(&cache.input, &p.squeeze, &gs)?;
    Ok((
        gx,
        FireDeconvParams {
            squeeze: gps,
            deconv: gpd,
            expand1: gp1,
            expand3: gp3,
        },
    ))
}
