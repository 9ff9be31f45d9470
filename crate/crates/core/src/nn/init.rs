//! Seeded weight initialization with zero biases.
//!
//! Glorot: uniform in +-sqrt(6 / (fan_in + fan_out)).
//! He: uniform in +-sqrt(6 / fan_in), which keeps activation variance
//! constant through ReLU layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::{ConvParams, DeconvParams, Padding};
use super::Tensor3;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    #[default]
    Glorot,
    He,
}

impl InitScheme {
    pub fn parse(s: &str) -> Option<InitScheme> {
        match s.to_ascii_lowercase().as_str() {
            "glorot" | "xavier" => Some(InitScheme::Glorot),
            "he" | "kaiming" => Some(InitScheme::He),
            _ => None,
        }
    }

    fn limit(self, fan_in: f64, fan_out: f64) -> f64 {
        match self {
            InitScheme::Glorot => (6.0 / (fan_in + fan_out)).sqrt(),
            InitScheme::He => (6.0 / fan_in).sqrt(),
        }
    }
}

fn fill<R: Rng + ?Sized>(rng: &mut R, w: &mut [f64], limit: f64) {
    for v in w {
        *v = rng.random_range(-limit..limit);
    }
}

pub fn init_conv<R: Rng + ?Sized>(
    rng: &mut R,
    scheme: InitScheme,
    kernel: (usize, usize),
    c_in: usize,
    c_out: usize,
    stride: (usize, usize),
    padding: Padding,
) -> Result<ConvParams> {
    let mut p = ConvParams::zeros(kernel, c_in, c_out, stride, padding)?;
    let taps = (kernel.0 * kernel.1) as f64;
    fill(rng, &mut p.weight, scheme.limit(taps * c_in as f64, taps * c_out as f64));
    Ok(p)
}

/// For He, fan-in counts the taps that reach one output (taps / stride area).
pub fn init_deconv<R: Rng + ?Sized>(
    rng: &mut R,
    scheme: InitScheme,
    kernel: (usize, usize),
    c_in: usize,
    c_out: usize,
    stride: (usize, usize),
    padding: Padding,
) -> Result<DeconvParams> {
    let mut p = DeconvParams::zeros(kernel, c_in, c_out, stride, padding)?;
    let taps = (kernel.0 * kernel.1) as f64;
    let limit = match scheme {
        InitScheme::Glorot => scheme.limit(taps * c_in as f64, taps * c_out as f64),
        InitScheme::He => scheme.limit(taps * c_in as f64 / (stride.0 * stride.1) as f64, 0.0),
    };
    fill(rng, &mut p.weight, limit);
    Ok(p)
}

pub fn glorot_conv<R: Rng + ?Sized>(
    rng: &mut R,
    kernel: (usize, usize),
    c_in: usize,
    c_out: usize,
    stride: (usize, usize),
    padding: Padding,
) -> Result<ConvParams> {
    init_conv(rng, InitScheme::Glorot, kernel, c_in, c_out, stride, padding)
}

pub fn glorot_deconv<R: Rng + ?Sized>(
    rng: &mut R,
    kernel: (usize, usize),
    c_in: usize,
    c_out: usize,
    stride: (usize, usize),
    padding: Padding,
) -> Result<DeconvParams> {
    init_deconv(rng, InitScheme::Glorot, kernel, c_in, c_out, stride, padding)
}

/// Tensor with entries uniform in [-scale, scale).
pub fn random_tensor<R: Rng + ?Sized>(
    rng: &mut R,
    h: usize,
    w: usize,
    c: usize,
    scale: f64,
) -> Tensor3 {
    let data = (0..h * w * c).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor3 { h, w, c, data }
}
