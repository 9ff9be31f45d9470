//! KITTI ingestion (velodyne scans, calibration, images, object labels) and
//! the toolkit's own tensor files.

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Vector3};
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::pgm::{LabelGrid, PgmTensor};

/// Semantic classes. Background is the implicit class of unlabeled cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum ClassId {
    Background = 0,
    Car = 1,
    Pedestrian = 2,
    Cyclist = 3,
}

impl ClassId {
    pub const COUNT: usize = 4;
    pub const ALL: [ClassId; 4] = [
        ClassId::Background,
        ClassId::Car,
        ClassId::Pedestrian,
        ClassId::Cyclist,
    ];
    pub const FOREGROUND: [ClassId; 3] = [ClassId::Car, ClassId::Pedestrian, ClassId::Cyclist];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ClassId> {
        ClassId::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Background => "Background",
            ClassId::Car => "Car",
            ClassId::Pedestrian => "Pedestrian",
            ClassId::Cyclist => "Cyclist",
        }
    }

    /// Case-insensitive lookup by class name.
    pub fn parse(name: &str) -> Option<ClassId> {
        ClassId::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(name.trim()))
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One LiDAR return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Point { x, y, z, intensity }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Encode as a KITTI velodyne `.bin` payload.
    pub fn to_kitti_bytes(&self) -> Vec<u8> {
        self.points
            .iter()
            .flat_map(|p| [p.x, p.y, p.z, p.intensity])
            .flat_map(f32::to_le_bytes)
            .collect()
    }

    pub fn from_kitti_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 16 != 0 {
            return Err(Error::format(format!(
                "velodyne payload of {} bytes is not a multiple of 16",
                bytes.len()
            )));
        }
        let points = bytes
            .chunks_exact(16)
            .enumerate()
            .map(|(i, rec)| {
                let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
                let p = Point::new(f(0), f(1), f(2), f(3));
                if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                    return Err(Error::Validation(format!("point {i} has non-finite coordinates")));
                }
                if !(0.0..=1.0).contains(&p.intensity) {
                    return Err(Error::Validation(format!(
                        "point {i} intensity {} outside [0, 1]",
                        p.intensity
                    )));
                }
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PointCloud { points })
    }
}

/// Read a KITTI velodyne scan: consecutive little-endian `f32` quadruples.
pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    PointCloud::from_kitti_bytes(&bytes)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, cloud.to_kitti_bytes()).map_err(|e| Error::io(path, e))
}

/// Sensor chain LiDAR -> rectified camera -> pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub velo_to_cam: Matrix3x4<f64>,
    pub rect: Matrix3<f64>,
    pub cam_proj: Matrix3x4<f64>,
}

pub const DEFAULT_PROJECTION_KEY: &str = "P2";
const ORTHONORMAL_TOL: f64 = 1e-4;

fn check_orthonormal(name: &str, r: &Matrix3<f64>) -> Result<()> {
    let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
    if dev > ORTHONORMAL_TOL {
        return Err(Error::Validation(format!(
            "{name} rotation deviates from orthonormal by {dev:.3e}"
        )));
    }
    Ok(())
}

impl CalibrationSet {
    pub fn new(
        velo_to_cam: Matrix3x4<f64>,
        rect: Matrix3<f64>,
        cam_proj: Matrix3x4<f64>,
    ) -> Result<Self> {
        check_orthonormal("velo_to_cam", &velo_to_cam.fixed_view::<3, 3>(0, 0).into_owned())?;
        check_orthonormal("rect", &rect)?;
        Ok(CalibrationSet {
            velo_to_cam,
            rect,
            cam_proj,
        })
    }

    /// Identity extrinsics and rectification with an ideal pinhole camera.
    pub fn pinhole(focal: f64, cx: f64, cy: f64) -> Self {
        let mut proj = Matrix3x4::zeros();
        proj[(0, 0)] = focal;
        proj[(0, 2)] = cx;
        proj[(1, 1)] = focal;
        proj[(1, 2)] = cy;
        proj[(2, 2)] = 1.0;
        CalibrationSet {
            velo_to_cam: Matrix3x4::identity(),
            rect: Matrix3::identity(),
            cam_proj: proj,
        }
    }

    fn velo_rotation(&self) -> Matrix3<f64> {
        self.velo_to_cam.fixed_view::<3, 3>(0, 0).into_owned()
    }

    fn velo_translation(&self) -> Vector3<f64> {
        self.velo_to_cam.column(3).into_owned()
    }

    /// LiDAR frame -> rectified camera frame.
    pub fn lidar_to_rect(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rect * (self.velo_rotation() * p + self.velo_translation())
    }

    /// Rectified camera frame -> LiDAR frame (inverse rigid chain).
    pub fn rect_to_lidar(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.velo_rotation().transpose() * (self.rect.transpose() * p - self.velo_translation())
    }

    pub fn rect_dir_to_lidar(&self, d: Vector3<f64>) -> Vector3<f64> {
        self.velo_rotation().transpose() * (self.rect.transpose() * d)
    }

    /// Serialize in the KITTI object calibration layout.
    pub fn to_kitti_text(&self, proj_key: &str) -> String {
        fn row_major<const R: usize, const C: usize>(
            m: &nalgebra::SMatrix<f64, R, C>,
        ) -> String {
            let mut vals = Vec::with_capacity(R * C);
            for r in 0..R {
                for c in 0..C {
                    vals.push(format!("{:e}", m[(r, c)]));
                }
            }
            vals.join(" ")
        }
        format!(
            "{proj_key}: {}\nR0_rect: {}\nTr_velo_to_cam: {}\n",
            row_major(&self.cam_proj),
            row_major(&self.rect),
            row_major(&self.velo_to_cam)
        )
    }
}

fn parse_floats(key: &str, rest: &str, want: usize) -> Result<Vec<f64>> {
    let vals = rest
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format(format!("calibration key {key}: {e}")))?;
    if vals.len() != want {
        return Err(Error::format(format!(
            "calibration key {key} has {} values, expected {want}",
            vals.len()
        )));
    }
    Ok(vals)
}

/// Parse KITTI calibration text with camera 2 as the projection source.
pub fn read_calibration(path: &Path) -> Result<CalibrationSet> {
    read_calibration_with_key(path, DEFAULT_PROJECTION_KEY)
}

pub fn read_calibration_with_key(path: &Path, proj_key: &str) -> Result<CalibrationSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_calibration(&text, proj_key)
        .map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
}

pub fn parse_calibration(text: &str, proj_key: &str) -> Result<CalibrationSet> {
    let mut proj = None;
    let mut rect = None;
    let mut velo = None;
    for line in text.lines() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim();
        if key == proj_key {
            proj = Some(Matrix3x4::from_row_slice(&parse_floats(key, rest, 12)?));
        } else if key == "R0_rect" {
            rect = Some(Matrix3::from_row_slice(&parse_floats(key, rest, 9)?));
        } else if key == "Tr_velo_to_cam" {
            velo = Some(Matrix3x4::from_row_slice(&parse_floats(key, rest, 12)?));
        }
    }
    let missing = |k: &str| Error::format(format!("calibration is missing key '{k}'"));
    CalibrationSet::new(
        velo.ok_or_else(|| missing("Tr_velo_to_cam"))?,
        rect.ok_or_else(|| missing("R0_rect"))?,
        proj.ok_or_else(|| missing(proj_key))?,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation("image dimensions must be positive".into()));
        }
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(Error::Validation(format!(
                "pixel buffer has {} bytes, expected {}",
                pixels.len(),
                width as usize * height as usize * 3
            )));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Decode a PNG into 8-bit RGB. Grayscale is replicated, alpha dropped.
pub fn read_image(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    RgbImage::new(w, h, img.into_raw())
}

/// Oriented box in the LiDAR frame; `center` is the geometric center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub center: [f64; 3],
    /// (length, width, height)
    pub size: [f64; 3],
    pub yaw: f64,
    pub class_id: ClassId,
}

/// Wrap an angle into [-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r < -PI {
        r = -PI;
    }
    r
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64, class_id: ClassId) -> Result<Self> {
        if size.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Validation(format!("box size {size:?} must be positive")));
        }
        Ok(Box3D {
            center,
            size,
            yaw: wrap_angle(yaw),
            class_id,
        })
    }
}

const KITTI_TYPES: [&str; 9] = [
    "Car",
    "Van",
    "Truck",
    "Pedestrian",
    "Person_sitting",
    "Cyclist",
    "Tram",
    "Misc",
    "DontCare",
];

pub fn is_known_kitti_type(type_name: &str) -> bool {
    KITTI_TYPES.contains(&type_name)
}

/// Collapse KITTI object types onto the four segmentation classes.
pub fn map_kitti_type(type_name: &str) -> ClassId {
    match type_name {
        "Car" | "Van" | "Truck" => ClassId::Car,
        "Pedestrian" | "Person_sitting" => ClassId::Pedestrian,
        "Cyclist" => ClassId::Cyclist,
        _ => ClassId::Background,
    }
}

/// Label lines dropped while reading, with the reason they were skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLabel {
    pub line: usize,
    pub type_name: String,
    pub unknown_type: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelReport {
    pub boxes: Vec<Box3D>,
    pub skipped: Vec<SkippedLabel>,
}

/// Parse KITTI object labels into LiDAR-frame boxes.
pub fn read_boxes(path: &Path, calib: &CalibrationSet) -> Result<Vec<Box3D>> {
    Ok(read_boxes_report(path, calib)?.boxes)
}

pub fn read_boxes_report(path: &Path, calib: &CalibrationSet) -> Result<LabelReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_boxes(&text, calib).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_boxes(text: &str, calib: &CalibrationSet) -> Result<LabelReport> {
    let mut boxes = Vec::new();
    let mut skipped = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 15 && fields.len() != 16 {
            return Err(Error::format(format!(
                "line {lineno}: expected 15 or 16 fields, found {}",
                fields.len()
            )));
        }
        let num = |k: usize| -> Result<f64> {
            fields[k].parse::<f64>().map_err(|_| {
                Error::format(format!("line {lineno}: field {} ('{}') is not a number", k + 1, fields[k]))
            })
        };
        let type_name = fields[0];
        let class_id = map_kitti_type(type_name);
        if class_id == ClassId::Background {
            skipped.push(SkippedLabel {
                line: lineno,
                type_name: type_name.to_string(),
                unknown_type: !is_known_kitti_type(type_name),
            });
            continue;
        }
        let (h, w, l) = (num(8)?, num(9)?, num(10)?);
        let bottom = Vector3::new(num(11)?, num(12)?, num(13)?);
        let ry = num(14)?;
        // Camera y points down: the geometric center sits h/2 above the bottom face.
        let center_rect = bottom - Vector3::new(0.0, h / 2.0, 0.0);
        let center = calib.rect_to_lidar(center_rect);
        // Length axis of the object in the rectified camera frame.
        let heading = calib.rect_dir_to_lidar(Vector3::new(ry.cos(), 0.0, -ry.sin()));
        let yaw = heading.y.atan2(heading.x);
        let b = Box3D::new([center.x, center.y, center.z], [l, w, h], yaw, class_id)
            .map_err(|e| Error::format(format!("line {lineno}: {e}")))?;
        boxes.push(b);
    }
    Ok(LabelReport { boxes, skipped })
}

/// Write a PGM tensor container.
pub fn write_tensor(path: &Path, tensor: &PgmTensor) -> Result<()> {
    tensor.to_container().write(path)
}

pub fn read_tensor(path: &Path) -> Result<PgmTensor> {
    PgmTensor::from_container(&Container::read(path)?)
        .map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
}

pub fn write_labels(path: &Path, labels: &LabelGrid) -> Result<()> {
    labels.to_container().write(path)
}

pub fn read_labels(path: &Path) -> Result<LabelGrid> {
    LabelGrid::from_container(&Container::read(path)?)
}

/// Read a frame list: one frame id per line; blank lines and `#` comments ignored.
pub fn read_frame_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}
