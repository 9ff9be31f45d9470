//! Polar Grid Map projection of LiDAR scans, camera RGB remapping and the
//! y-axis flip augmentation.

use nalgebra::{Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::kitti_io::{CalibrationSet, ClassId, PointCloud, RgbImage};

/// Angular extent and resolution of the polar grid. Angles are in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub azimuth_min: f64,
    pub azimuth_max: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
}

impl Default for GridSpec {
    /// 64 layers by 512 columns over a 90 degree frontal field of view and
    /// the HDL-64E vertical span.
    fn default() -> Self {
        GridSpec {
            rows: 64,
            cols: 512,
            azimuth_min: (-45.0f64).to_radians(),
            azimuth_max: 45.0f64.to_radians(),
            elevation_min: (-24.8f64).to_radians(),
            elevation_max: 2.0f64.to_radians(),
        }
    }
}

impl GridSpec {
    /// Same angular extent as the default grid with a different resolution.
    pub fn with_dims(rows: usize, cols: usize) -> Self {
        GridSpec {
            rows,
            cols,
            ..GridSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.azimuth_min,
            self.azimuth_max,
            self.elevation_min,
            self.elevation_max,
        ]
        .iter()
        .all(|v| v.is_finite());
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("grid rows and cols must be positive".into()));
        }
        if !finite || self.azimuth_max <= self.azimuth_min || self.elevation_max <= self.elevation_min {
            return Err(Error::Config(format!("invalid grid angles: {self:?}")));
        }
        Ok(())
    }

    pub fn azimuth_bin(&self) -> f64 {
        (self.azimuth_max - self.azimuth_min) / self.cols as f64
    }

    pub fn elevation_bin(&self) -> f64 {
        (self.elevation_max - self.elevation_min) / self.rows as f64
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: GridSpec =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("grid config: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Cell of the grid that a point falls into, or `None` outside the field of
/// view. Column 0 is the leftmost (largest azimuth), row 0 the top layer.
pub fn spherical_index(point: [f64; 3], spec: &GridSpec) -> Result<Option<(usize, usize)>> {
    let [x, y, z] = point;
    let norm = (x * x + y * y + z * z).sqrt();
    if !(norm > 0.0) {
        return Err(Error::domain("spherical index of a zero-norm point"));
    }
    let azimuth = y.atan2(x);
    let elevation = (z / norm).asin();
    if !(spec.azimuth_min..spec.azimuth_max).contains(&azimuth)
        || !(spec.elevation_min..spec.elevation_max).contains(&elevation)
    {
        return Ok(None);
    }
    let col = ((spec.azimuth_max - azimuth) / spec.azimuth_bin()).floor() as usize;
    let row = ((spec.elevation_max - elevation) / spec.elevation_bin()).floor() as usize;
    Ok(Some((row.min(spec.rows - 1), col.min(spec.cols - 1))))
}

/// Channel layout of a PGM tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelSchema {
    #[serde(rename = "XYZDI")]
    Xyzdi,
    #[serde(rename = "XYZDIRGB")]
    Xyzdirgb,
}

impl ChannelSchema {
    pub fn channels(self) -> usize {
        match self {
            ChannelSchema::Xyzdi => 5,
            ChannelSchema::Xyzdirgb => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelSchema::Xyzdi => "XYZDI",
            ChannelSchema::Xyzdirgb => "XYZDIRGB",
        }
    }

    pub fn channel_names(self) -> &'static [&'static str] {
        &["X", "Y", "Z", "D", "I", "R", "G", "B"][..self.channels()]
    }
}

pub const CH_X: usize = 0;
pub const CH_Y: usize = 1;
pub const CH_Z: usize = 2;
pub const CH_D: usize = 3;
pub const CH_I: usize = 4;
pub const CH_R: usize = 5;

/// rows x cols x C grid of features plus the occupancy mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PgmTensor {
    spec: GridSpec,
    schema: ChannelSchema,
    data: Vec<f32>,
    mask: Vec<bool>,
}

impl PgmTensor {
    pub fn zeros(spec: GridSpec, schema: ChannelSchema) -> Self {
        PgmTensor {
            spec,
            schema,
            data: vec![0.0; spec.cells() * schema.channels()],
            mask: vec![false; spec.cells()],
        }
    }

    pub fn from_parts(
        spec: GridSpec,
        schema: ChannelSchema,
        data: Vec<f32>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if data.len() != spec.cells() * schema.channels() || mask.len() != spec.cells() {
            return Err(Error::domain(format!(
                "tensor buffers ({} values, {} mask cells) do not match {}x{}x{}",
                data.len(),
                mask.len(),
                spec.rows,
                spec.cols,
                schema.channels()
            )));
        }
        Ok(PgmTensor {
            spec,
            schema,
            data,
            mask,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn schema(&self) -> ChannelSchema {
        self.schema
    }

    pub fn channels(&self) -> usize {
        self.schema.channels()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_masked(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.spec.cols + col]
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let c = self.channels();
        let i = (row * self.spec.cols + col) * c;
        &self.data[i..i + c]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let c = self.channels();
        let i = (row * self.spec.cols + col) * c;
        &mut self.data[i..i + c]
    }

    pub fn set_masked(&mut self, row: usize, col: usize, masked: bool) {
        self.mask[row * self.spec.cols + col] = masked;
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.cell(row, col)[channel]
    }

    pub fn occupied(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn to_container(&self) -> Container {
        let meta = serde_json::json!({
            "schema": self.schema,
            "channels": self.channels(),
            "rows": self.spec.rows,
            "cols": self.spec.cols,
            "mask": true,
            "grid": self.spec,
        });
        let mut c = Container::new("pgm", meta);
        c.push_f32("data", &[self.spec.rows, self.spec.cols, self.channels()], &self.data);
        let mask: Vec<u8> = self.mask.iter().map(|&m| m as u8).collect();
        c.push_u8("mask", &[self.spec.rows, self.spec.cols], &mask);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("pgm")?;
        let meta: PgmMeta = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::format(format!("pgm manifest: {e}")))?;
        meta.grid.validate().map_err(|e| Error::format(e.to_string()))?;
        if meta.channels != meta.schema.channels() {
            return Err(Error::format(format!(
                "manifest declares {} channels for schema {}",
                meta.channels,
                meta.schema.name()
            )));
        }
        if (meta.rows, meta.cols) != (meta.grid.rows, meta.grid.cols) {
            return Err(Error::format("manifest dims disagree with grid spec"));
        }
        let (shape, data) = c.get_f32("data")?;
        if shape != [meta.rows, meta.cols, meta.channels] {
            return Err(Error::format(format!(
                "payload shape {shape:?} does not match declared {}x{}x{}",
                meta.rows, meta.cols, meta.channels
            )));
        }
        let mask = if meta.mask {
            let (mshape, mask) = c.get_u8("mask")?;
            if mshape != [meta.rows, meta.cols] || mask.iter().any(|&m| m > 1) {
                return Err(Error::format("malformed mask entry"));
            }
            mask.into_iter().map(|m| m == 1).collect()
        } else {
            vec![false; meta.rows * meta.cols]
        };
        PgmTensor::from_parts(meta.grid, meta.schema, data, mask)
            .map_err(|e| Error::format(e.to_string()))
    }
}

#[derive(Deserialize)]
struct PgmMeta {
    schema: ChannelSchema,
    channels: usize,
    rows: usize,
    cols: usize,
    mask: bool,
    grid: GridSpec,
}

/// Per-cell class labels on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    spec: GridSpec,
    labels: Vec<ClassId>,
}

impl LabelGrid {
    pub fn background(spec: GridSpec) -> Self {
        LabelGrid {
            spec,
            labels: vec![ClassId::Background; spec.cells()],
        }
    }

    pub fn from_labels(spec: GridSpec, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != spec.cells() {
            return Err(Error::domain(format!(
                "{} labels for a {}x{} grid",
                labels.len(),
                spec.rows,
                spec.cols
            )));
        }
        Ok(LabelGrid { spec, labels })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> ClassId {
        self.labels[row * self.spec.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, class: ClassId) {
        self.labels[row * self.spec.cols + col] = class;
    }

    pub fn count(&self, class: ClassId) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    pub fn to_container(&self) -> Container {
        let meta = serde_json::json!({
            "schema": "LABEL",
            "channels": 1,
            "rows": self.spec.rows,
            "cols": self.spec.cols,
            "grid": self.spec,
        });
        let mut c = Container::new("labels", meta);
        let bytes: Vec<u8> = self.labels.iter().map(|&l| l as u8).collect();
        c.push_u8("labels", &[self.spec.rows, self.spec.cols, 1], &bytes);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("labels")?;
        let grid: GridSpec = serde_json::from_value(c.meta["grid"].clone())
            .map_err(|e| Error::format(format!("label manifest: {e}")))?;
        let (shape, bytes) = c.get_u8("labels")?;
        if shape != [grid.rows, grid.cols, 1] {
            return Err(Error::format(format!("label payload shape {shape:?} does not match grid")));
        }
        let labels = bytes
            .into_iter()
            .map(|b| {
                ClassId::from_index(b as usize)
                    .ok_or_else(|| Error::format(format!("invalid class id {b}")))
            })
            .collect::<Result<Vec<_>>>()?;
        LabelGrid::from_labels(grid, labels).map_err(|e| Error::format(e.to_string()))
    }
}

/// Project a scan onto the grid as an XYZDI tensor. On collisions the
/// nearest return wins; exact depth ties keep the earlier point.
pub fn build_pgm(cloud: &PointCloud, spec: &GridSpec) -> PgmTensor {
    let mut winner: Vec<Option<(usize, f64)>> = vec![None; spec.cells()];
    for (i, p) in cloud.points.iter().enumerate() {
        let xyz = p.xyz();
        let Ok(Some((row, col))) = spherical_index(xyz, spec) else {
            continue;
        };
        let depth = (xyz[0] * xyz[0] + xyz[1] * xyz[1] + xyz[2] * xyz[2]).sqrt();
        let slot = &mut winner[row * spec.cols + col];
        match slot {
            Some((_, best)) if depth >= *best => {}
            _ => *slot = Some((i, depth)),
        }
    }
    let mut pgm = PgmTensor::zeros(*spec, ChannelSchema::Xyzdi);
    for (cell, w) in winner.iter().enumerate() {
        if let Some((i, depth)) = *w {
            let p = cloud.points[i];
            pgm.mask[cell] = true;
            pgm.data[cell * 5..cell * 5 + 5]
                .copy_from_slice(&[p.x, p.y, p.z, depth as f32, p.intensity]);
        }
    }
    pgm
}

/// Pixel coordinates of a LiDAR-frame point, or `None` behind the camera.
pub fn project_to_image(point: [f64; 3], calib: &CalibrationSet) -> Option<(f64, f64)> {
    let rect = calib.lidar_to_rect(Vector3::from(point));
    if rect.z <= 0.0 {
        return None;
    }
    let hom = calib.cam_proj * Vector4::new(rect.x, rect.y, rect.z, 1.0);
    if hom.z <= 0.0 {
        return None;
    }
    Some((hom.x / hom.z, hom.y / hom.z))
}

/// Nearest pixel to projected coordinates, if it lies inside the image.
pub fn nearest_pixel(uv: (f64, f64), image: &RgbImage) -> Option<(u32, u32)> {
    let u = (uv.0 + 0.5).floor();
    let v = (uv.1 + 0.5).floor();
    if u >= 0.0 && v >= 0.0 && u < image.width() as f64 && v < image.height() as f64 {
        Some((u as u32, v as u32))
    } else {
        None
    }
}

/// Append camera color to every occupied cell, producing an XYZDIRGB tensor.
pub fn fuse_rgb(pgm: &PgmTensor, image: &RgbImage, calib: &CalibrationSet) -> Result<PgmTensor> {
    if pgm.schema != ChannelSchema::Xyzdi {
        return Err(Error::domain(format!(
            "fuse_rgb expects an XYZDI tensor, got {}",
            pgm.schema.name()
        )));
    }
    let mut out = PgmTensor::zeros(pgm.spec, ChannelSchema::Xyzdirgb);
    out.mask.copy_from_slice(&pgm.mask);
    for cell in 0..pgm.spec.cells() {
        let src = &pgm.data[cell * 5..cell * 5 + 5];
        let dst = &mut out.data[cell * 8..cell * 8 + 8];
        dst[..5].copy_from_slice(src);
        if !pgm.mask[cell] {
            continue;
        }
        let xyz = [src[CH_X] as f64, src[CH_Y] as f64, src[CH_Z] as f64];
        if let Some((u, v)) = project_to_image(xyz, calib).and_then(|uv| nearest_pixel(uv, image)) {
            let [r, g, b] = image.pixel(u, v);
            dst[5] = r as f32 / 255.0;
            dst[6] = g as f32 / 255.0;
            dst[7] = b as f32 / 255.0;
        }
    }
    Ok(out)
}

fn flip_tensor(pgm: &PgmTensor) -> PgmTensor {
    let (rows, cols, c) = (pgm.spec.rows, pgm.spec.cols, pgm.channels());
    let mut out = PgmTensor::zeros(pgm.spec, pgm.schema);
    for r in 0..rows {
        for col in 0..cols {
            let src = r * cols + col;
            let dst = r * cols + (cols - 1 - col);
            out.mask[dst] = pgm.mask[src];
            out.data[dst * c..dst * c + c].copy_from_slice(&pgm.data[src * c..src * c + c]);
            out.data[dst * c + CH_Y] = -pgm.data[src * c + CH_Y];
        }
    }
    out
}

fn flip_grid(labels: &LabelGrid) -> LabelGrid {
    let cols = labels.spec.cols;
    let mut out = labels.clone();
    for row in out.labels.chunks_mut(cols) {
        row.reverse();
    }
    out
}

/// Mirror about the x-z plane: reverse columns and negate Y.
pub fn flip_y(pgm: &PgmTensor, labels: &LabelGrid) -> Result<(PgmTensor, LabelGrid)> {
    if pgm.spec != labels.spec {
        return Err(Error::domain("tensor and label grids have different specs"));
    }
    Ok((flip_tensor(pgm), flip_grid(labels)))
}
