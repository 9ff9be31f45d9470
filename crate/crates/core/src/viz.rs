//! PNG rendering of PGM channels and label grids.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kitti_io::{ClassId, RgbImage};
use crate::pgm::{ChannelSchema, LabelGrid, PgmTensor, CH_R};

/// Class colors; Background red, Car green, Cyclist violet, Pedestrian light blue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorMap {
    colors: [[u8; 3]; ClassId::COUNT],
}

impl Default for ColorMap {
    fn default() -> Self {
        let mut colors = [[0u8; 3]; ClassId::COUNT];
        colors[ClassId::Background.index()] = [255, 0, 0];
        colors[ClassId::Car.index()] = [0, 255, 0];
        colors[ClassId::Pedestrian.index()] = [173, 216, 230];
        colors[ClassId::Cyclist.index()] = [143, 0, 255];
        ColorMap { colors }
    }
}

impl ColorMap {
    pub fn new(colors: [[u8; 3]; ClassId::COUNT]) -> Result<Self> {
        for i in 0..colors.len() {
            for j in i + 1..colors.len() {
                if colors[i] == colors[j] {
                    return Err(Error::Config(format!(
                        "classes {} and {} share a color",
                        ClassId::ALL[i],
                        ClassId::ALL[j]
                    )));
                }
            }
        }
        Ok(ColorMap { colors })
    }

    pub fn color(&self, class: ClassId) -> [u8; 3] {
        self.colors[class.index()]
    }

    /// JSON object of class name to `[r, g, b]`; missing classes keep their default.
    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, [u8; 3]> = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("bad colormap: {e}")))?;
        let mut colors = ColorMap::default().colors;
        for (name, rgb) in map {
            let class = ClassId::parse(&name)
                .ok_or_else(|| Error::Config(format!("colormap names unknown class '{name}'")))?;
            colors[class.index()] = rgb;
        }
        ColorMap::new(colors)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// What to draw from a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelSelector {
    Scalar(usize),
    Rgb,
}

impl ChannelSelector {
    /// Channel name (`x`, `y`, `z`, `d`, `i`, `r`, `g`, `b`) or `rgb`.
    pub fn parse(s: &str, schema: ChannelSchema) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("rgb") {
            return match schema {
                ChannelSchema::Xyzdirgb => Ok(ChannelSelector::Rgb),
                ChannelSchema::Xyzdi => Err(Error::Config("tensor has no RGB channels".into())),
            };
        }
        schema
            .channel_names()
            .iter()
            .position(|n| n.eq_ignore_ascii_case(s))
            .map(ChannelSelector::Scalar)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown channel '{s}' for {} tensor (expected one of {} or rgb)",
                    schema.name(),
                    schema.channel_names().join(", ")
                ))
            })
    }
}

fn blank(pgm: &PgmTensor) -> (u32, u32, Vec<u8>) {
    let g = pgm.spec();
    (g.cols as u32, g.rows as u32, vec![0u8; g.cells() * 3])
}

/// Min-max grayscale over occupied cells, empty cells black; a constant channel is mid-gray.
pub fn render_channel(pgm: &PgmTensor, channel: usize) -> Result<RgbImage> {
    if channel >= pgm.channels() {
        return Err(Error::Config(format!(
            "channel {channel} out of range for {} channels",
            pgm.channels()
        )));
    }
    let c = pgm.channels();
    let values = pgm.data().chunks_exact(c).map(|px| px[channel]);
    let (lo, hi) = values
        .clone()
        .zip(pgm.mask())
        .filter(|(_, &m)| m)
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), (v, _)| (lo.min(v), hi.max(v)));
    let (w, h, mut pixels) = blank(pgm);
    for (cell, (v, &m)) in values.zip(pgm.mask()).enumerate() {
        if !m {
            continue;
        }
        let g = if hi > lo {
            (((v - lo) / (hi - lo)) * 255.0).round() as u8
        } else {
            128
        };
        pixels[cell * 3..cell * 3 + 3].fill(g);
    }
    RgbImage::new(w, h, pixels)
}

/// Fused camera colors, empty cells black.
pub fn render_rgb(pgm: &PgmTensor) -> Result<RgbImage> {
    if pgm.schema() != ChannelSchema::Xyzdirgb {
        return Err(Error::Config("tensor has no RGB channels".into()));
    }
    let c = pgm.channels();
    let (w, h, mut pixels) = blank(pgm);
    for (cell, (px, &m)) in pgm.data().chunks_exact(c).zip(pgm.mask()).enumerate() {
        if m {
            for k in 0..3 {
                pixels[cell * 3 + k] = (px[CH_R + k].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    RgbImage::new(w, h, pixels)
}

pub fn render_tensor(pgm: &PgmTensor, selector: ChannelSelector) -> Result<RgbImage> {
    match selector {
        ChannelSelector::Scalar(k) => render_channel(pgm, k),
        ChannelSelector::Rgb => render_rgb(pgm),
    }
}

pub fn render_labels(labels: &LabelGrid, colormap: &ColorMap) -> Result<RgbImage> {
    let g = labels.spec();
    let pixels = labels.labels().iter().flat_map(|&c| colormap.color(c)).collect();
    RgbImage::new(g.cols as u32, g.rows as u32, pixels)
}

/// Nearest-neighbour enlargement by an integer factor.
pub fn upscale(img: &RgbImage, factor: u32) -> Result<RgbImage> {
    if factor == 0 {
        return Err(Error::Config("upscale factor must be positive".into()));
    }
    let (w, h) = (img.width() * factor, img.height() * factor);
    let mut pixels = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        for x in 0..w {
            pixels.extend_from_slice(&img.pixel(x / factor, y / factor));
        }
    }
    RgbImage::new(w, h, pixels)
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    image::save_buffer_with_format(
        path,
        img.pixels(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(format!("cannot encode {}: {other}", path.display())),
    })
}
