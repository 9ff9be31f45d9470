//! Baseline, early-fusion and hybrid mid-fusion segmentation networks.
//!
//! All three share the SqueezeSeg-shaped layout: a strided conv1, three
//! width-halving max pools separating fire2-3, fire4-5 and fire6-9, four
//! width-doubling fireDeconv stages with additive skips from fire5, fire3 and
//! conv1, and a 1x1 classification head followed by softmax. The mid-fusion
//! variant runs two identical 5-channel encoders (XYZDI and DIRGB) and joins
//! them with a channel concat plus a 1x1 bottleneck before the decoder.

mod io;
mod network;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kitti_io::ClassId;
use crate::nn::init::InitScheme;
use crate::nn::{ParamSet, Tensor3};
use crate::pgm::{ChannelSchema, LabelGrid, PgmTensor, CH_D};

pub use io::{load_weights, load_weights_expecting, save_weights};
pub use network::{Encoder, Network};
pub use train::{train_toy, Frame, InputNorm, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Baseline,
    #[serde(rename = "early")]
    EarlyFusion,
    #[serde(rename = "mid")]
    MidFusion,
}

impl ArchKind {
    pub fn parse(s: &str) -> Option<ArchKind> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "xyzdi" => Some(ArchKind::Baseline),
            "early" | "xyzdirgb" => Some(ArchKind::EarlyFusion),
            "mid" | "xyzdi+dirgb" => Some(ArchKind::MidFusion),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Baseline => "baseline",
            ArchKind::EarlyFusion => "early",
            ArchKind::MidFusion => "mid",
        }
    }

    /// Schema of the PGM tensor this architecture consumes.
    pub fn input_schema(self) -> ChannelSchema {
        match self {
            ArchKind::Baseline => ChannelSchema::Xyzdi,
            ArchKind::EarlyFusion | ArchKind::MidFusion => ChannelSchema::Xyzdirgb,
        }
    }

    /// Channels fed to each encoder.
    pub fn encoder_inputs(self) -> &'static [usize] {
        match self {
            ArchKind::Baseline => &[5],
            ArchKind::EarlyFusion => &[8],
            ArchKind::MidFusion => &[5, 5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FireWidths {
    pub squeeze: usize,
    pub expand1: usize,
    pub expand3: usize,
}

impl FireWidths {
    pub const fn new(squeeze: usize, expand1: usize, expand3: usize) -> Self {
        FireWidths {
            squeeze,
            expand1,
            expand3,
        }
    }

    pub fn out(&self) -> usize {
        self.expand1 + self.expand3
    }
}

/// Channel widths of every stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthConfig {
    pub conv1: usize,
    /// fire2 .. fire9
    pub encoder: [FireWidths; 8],
    /// fireDeconv10 .. fireDeconv13
    pub decoder: [FireWidths; 4],
}

impl Default for WidthConfig {
    /// SqueezeNet fire2-9 widths with SqueezeSeg's decoder.
    fn default() -> Self {
        let f = FireWidths::new;
        WidthConfig {
            conv1: 64,
            encoder: [
                f(16, 64, 64),
                f(16, 64, 64),
                f(32, 128, 128),
                f(32, 128, 128),
                f(48, 192, 192),
                f(48, 192, 192),
                f(64, 256, 256),
                f(64, 256, 256),
            ],
            decoder: [f(64, 128, 128), f(32, 64, 64), f(16, 32, 32), f(16, 32, 32)],
        }
    }
}

impl WidthConfig {
    /// Reduced widths for gradient checks and toy training.
    pub fn tiny() -> Self {
        let f = FireWidths::new;
        WidthConfig {
            conv1: 8,
            encoder: [
                f(2, 4, 4),
                f(2, 4, 4),
                f(4, 8, 8),
                f(4, 8, 8),
                f(4, 8, 8),
                f(4, 8, 8),
                f(4, 8, 8),
                f(4, 8, 8),
            ],
            decoder: [f(4, 8, 8), f(2, 4, 4), f(2, 4, 4), f(2, 4, 4)],
        }
    }

    /// Proportional widths from one base channel count (a multiple of 4).
    ///
    /// conv1 and fire2-3 carry `base` channels, fire4-9 twice that; the
    /// decoder mirrors the encoder so every skip lines up.
    pub fn scaled(base: usize) -> Self {
        let f = FireWidths::new;
        let (q, h, b) = (base / 4, base / 2, base);
        WidthConfig {
            conv1: base,
            encoder: [
                f(q, h, h),
                f(q, h, h),
                f(q, b, b),
                f(q, b, b),
                f(h, b, b),
                f(h, b, b),
                f(h, b, b),
                f(h, b, b),
            ],
            decoder: [f(h, b, b), f(q, h, h), f(q, h, h), f(q, h, h)],
        }
    }

    pub fn fire3_out(&self) -> usize {
        self.encoder[1].out()
    }

    pub fn fire5_out(&self) -> usize {
        self.encoder[3].out()
    }

    pub fn fire9_out(&self) -> usize {
        self.encoder[7].out()
    }

    /// Every skip must join equal channel counts.
    pub fn validate(&self) -> Result<()> {
        let all = self.encoder.iter().chain(&self.decoder);
        if self.conv1 == 0 || all.clone().any(|w| w.squeeze == 0 || w.expand1 == 0 || w.expand3 == 0) {
            return Err(Error::Config("all widths must be positive".into()));
        }
        let skips = [
            ("fireDeconv10", self.decoder[0].out(), "fire5", self.fire5_out()),
            ("fireDeconv11", self.decoder[1].out(), "fire3", self.fire3_out()),
            ("fireDeconv12", self.decoder[2].out(), "conv1", self.conv1),
        ];
        for (dec, dw, enc, ew) in skips {
            if dw != ew {
                return Err(Error::Config(format!(
                    "{dec} produces {dw} channels but its skip from {enc} has {ew}"
                )));
            }
        }
        Ok(())
    }
}

/// Layer graph of one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub arch: ArchKind,
    pub widths: WidthConfig,
    pub num_classes: usize,
    #[serde(default)]
    pub init: InitScheme,
}

impl NetworkSpec {
    pub fn new(arch: ArchKind, widths: WidthConfig, num_classes: usize) -> Result<Self> {
        widths.validate()?;
        if num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        Ok(NetworkSpec {
            arch,
            widths,
            num_classes,
            init: InitScheme::default(),
        })
    }

    pub fn with_init(mut self, init: InitScheme) -> Self {
        self.init = init;
        self
    }

    /// Width must survive the 16x total downsampling exactly.
    pub const WIDTH_MULTIPLE: usize = 16;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub spec: NetworkSpec,
    pub seed: u64,
    #[serde(default)]
    pub training: Option<TrainConfig>,
    #[serde(default)]
    pub input_norm: Option<InputNorm>,
}

/// Learnable parameters of a network plus provenance metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub meta: BundleMeta,
    pub network: Network,
}

impl WeightBundle {
    pub fn arch(&self) -> ArchKind {
        self.meta.spec.arch
    }

    pub fn param_count(&self) -> usize {
        self.network.param_count()
    }
}

/// Construct a network with seeded initialization.
pub fn build_model(
    arch: ArchKind,
    widths: WidthConfig,
    num_classes: usize,
    seed: u64,
) -> Result<(NetworkSpec, WeightBundle)> {
    let spec = NetworkSpec::new(arch, widths, num_classes)?;
    let bundle = init_weights(&spec, seed)?;
    Ok((spec, bundle))
}

/// Seeded initialization of every layer of `spec`.
pub fn init_weights(spec: &NetworkSpec, seed: u64) -> Result<WeightBundle> {
    let network = Network::init(spec, seed)?;
    Ok(WeightBundle {
        meta: BundleMeta {
            spec: spec.clone(),
            seed,
            training: None,
            input_norm: None,
        },
        network,
    })
}

fn check_compatible(spec: &NetworkSpec, weights: &WeightBundle) -> Result<()> {
    if weights.meta.spec != *spec {
        return Err(Error::domain(format!(
            "weights were built for {} but the network spec is {}",
            weights.arch().name(),
            spec.arch.name()
        )));
    }
    Ok(())
}

/// Per-encoder input tensors for an architecture; unmasked cells are zero.
pub fn assemble_inputs(
    spec: &NetworkSpec,
    pgm: &PgmTensor,
    norm: Option<&InputNorm>,
) -> Result<Vec<Tensor3>> {
    let want = spec.arch.input_schema();
    if pgm.schema() != want {
        return Err(Error::domain(format!(
            "{} network expects {} input, got {}",
            spec.arch.name(),
            want.name(),
            pgm.schema().name()
        )));
    }
    let grid = pgm.spec();
    if grid.cols % NetworkSpec::WIDTH_MULTIPLE != 0 {
        return Err(Error::domain(format!(
            "grid width {} is not a multiple of {}",
            grid.cols,
            NetworkSpec::WIDTH_MULTIPLE
        )));
    }
    let c = pgm.channels();
    let mut full = Tensor3::zeros(grid.rows, grid.cols, c);
    for (cell, px) in pgm.data().chunks_exact(c).enumerate() {
        if !pgm.mask()[cell] {
            continue;
        }
        for (k, &v) in px.iter().enumerate() {
            let v = v as f64;
            full.data[cell * c + k] = match norm {
                Some(n) => (v - n.mean[k]) / n.std[k],
                None => v,
            };
        }
    }
    Ok(match spec.arch {
        ArchKind::Baseline | ArchKind::EarlyFusion => vec![full],
        ArchKind::MidFusion => vec![
            crate::nn::slice_channels(&full, 0..5)?,
            crate::nn::slice_channels(&full, CH_D..8)?,
        ],
    })
}

/// Class probabilities, (rows, cols, num_classes).
pub fn forward(spec: &NetworkSpec, weights: &WeightBundle, input: &PgmTensor) -> Result<Tensor3> {
    check_compatible(spec, weights)?;
    let inputs = assemble_inputs(spec, input, weights.meta.input_norm.as_ref())?;
    weights.network.probabilities(spec, &inputs)
}

/// Argmax per cell, ties to the lowest class id; unoccupied cells are Background.
pub fn labels_from_probabilities(probs: &Tensor3, pgm: &PgmTensor) -> Result<LabelGrid> {
    let grid = *pgm.spec();
    if (probs.h, probs.w) != (grid.rows, grid.cols) {
        return Err(Error::domain("probability field does not match grid"));
    }
    let labels = probs
        .data
        .chunks_exact(probs.c)
        .zip(pgm.mask())
        .map(|(p, &m)| {
            if !m {
                return ClassId::Background;
            }
            let mut best = 0;
            for k in 1..p.len() {
                if p[k] > p[best] {
                    best = k;
                }
            }
            ClassId::from_index(best).unwrap_or(ClassId::Background)
        })
        .collect();
    LabelGrid::from_labels(grid, labels)
}

pub fn predict(spec: &NetworkSpec, weights: &WeightBundle, input: &PgmTensor) -> Result<LabelGrid> {
    let probs = forward(spec, weights, input)?;
    labels_from_probabilities(&probs, input)
}
