//! Deterministic synthetic data: ray-cast LiDAR scenes in KITTI layout and
//! small labeled PGM datasets for toy training.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kitti_io::{wrap_angle, Box3D, CalibrationSet, ClassId, Point, PointCloud, RgbImage};
use crate::models::Frame;
use crate::pgm::{ChannelSchema, GridSpec, LabelGrid, PgmTensor, CH_D, CH_I, CH_R};

/// Sensor height of the KITTI Velodyne above the road.
pub const SENSOR_HEIGHT: f64 = 1.73;
pub const BEAMS: usize = 64;
pub const AZIMUTH_STEPS: usize = 2048;
const MAX_RANGE: f64 = 80.0;
const WALL_RADIUS: f64 = 45.0;

/// Calibration matching the layout of a KITTI raw-data drive.
pub fn kitti_like_calibration() -> CalibrationSet {
    let velo_to_cam = Matrix3x4::new(
        7.533745e-03, -9.999714e-01, -6.166020e-04, -4.069766e-03,
        1.480249e-02, 7.280733e-04, -9.998902e-01, -7.631618e-02,
        9.998621e-01, 7.523790e-03, 1.480755e-02, -2.717806e-01,
    );
    let rect = Matrix3::new(
        9.999239e-01, 9.837760e-03, -7.445048e-03,
        -9.869795e-03, 9.999421e-01, -4.278459e-03,
        7.402527e-03, 4.351614e-03, 9.999631e-01,
    );
    let cam_proj = Matrix3x4::new(
        7.215377e+02, 0.0, 6.095593e+02, 4.485728e+01,
        0.0, 7.215377e+02, 1.728540e+02, 2.163791e-01,
        0.0, 0.0, 1.0, 2.745884e-03,
    );
    CalibrationSet::new(velo_to_cam, rect, cam_proj).expect("fixture calibration is valid")
}

pub const IMAGE_WIDTH: u32 = 1242;
pub const IMAGE_HEIGHT: u32 = 375;

/// An object placed in a simulated scene, with the KITTI type string it is labeled as.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub kitti_type: &'static str,
    pub bbox: Box3D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedFrame {
    pub cloud: PointCloud,
    pub calib: CalibrationSet,
    pub image: RgbImage,
    pub objects: Vec<SceneObject>,
}

fn random_objects(rng: &mut ChaCha8Rng) -> Result<Vec<SceneObject>> {
    let kinds: [(&str, ClassId, [f64; 3]); 4] = [
        ("Car", ClassId::Car, [4.2, 1.7, 1.5]),
        ("Van", ClassId::Car, [5.0, 2.0, 2.1]),
        ("Pedestrian", ClassId::Pedestrian, [0.8, 0.6, 1.75]),
        ("Cyclist", ClassId::Cyclist, [1.8, 0.6, 1.7]),
    ];
    let count = rng.random_range(4..9);
    let mut out: Vec<SceneObject> = Vec::new();
    while out.len() < count {
        let (name, class, size) = kinds[rng.random_range(0..kinds.len())];
        let range = rng.random_range(6.0..35.0);
        let bearing = rng.random_range(-0.7f64..0.7);
        let center = [
            range * bearing.cos(),
            range * bearing.sin(),
            -SENSOR_HEIGHT + size[2] / 2.0,
        ];
        // keep footprints apart so labels stay unambiguous
        let clear = out.iter().all(|o| {
            let dx = o.bbox.center[0] - center[0];
            let dy = o.bbox.center[1] - center[1];
            (dx * dx + dy * dy).sqrt() > 6.0
        });
        if clear {
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            out.push(SceneObject {
                kitti_type: name,
                bbox: Box3D::new(center, size, yaw, class)?,
            });
        }
    }
    Ok(out)
}

/// Entry distance of a ray into an oriented box (slab test in the box frame).
fn ray_box(origin: Vector3<f64>, dir: Vector3<f64>, b: &Box3D) -> Option<f64> {
    let (s, c) = (-b.yaw).sin_cos();
    let rot = |v: Vector3<f64>| Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z);
    let o = rot(origin - Vector3::from(b.center));
    let d = rot(dir);
    let half = [b.size[0] / 2.0, b.size[1] / 2.0, b.size[2] / 2.0];
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() < 1e-12 {
            if o[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let a = (-half[k] - o[k]) / d[k];
        let bb = (half[k] - o[k]) / d[k];
        t0 = t0.max(a.min(bb));
        t1 = t1.min(a.max(bb));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

/// First hit along a ray: objects, flat road, then a cylindrical wall.
fn cast(dir: Vector3<f64>, objects: &[SceneObject]) -> Option<(f64, f64)> {
    let origin = Vector3::zeros();
    let mut best: Option<(f64, f64)> = None;
    let mut consider = |t: f64, refl: f64| {
        if t > 0.0 && t < MAX_RANGE && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, refl));
        }
    };
    for o in objects {
        if let Some(t) = ray_box(origin, dir, &o.bbox) {
            let refl = match o.bbox.class_id {
                ClassId::Car => 0.55,
                _ => 0.35,
            };
            consider(t, refl);
        }
    }
    if dir.z < 0.0 {
        consider(-SENSOR_HEIGHT / dir.z, 0.25);
    }
    let horiz = (dir.x * dir.x + dir.y * dir.y).sqrt();
    if horiz > 0.0 {
        let t = WALL_RADIUS / horiz;
        if (dir.z * t).abs() < 8.0 {
            consider(t, 0.15);
        }
    }
    best
}

/// A 360 degree, 64-beam scan of a random street scene.
pub fn simulate_scan(seed: u64) -> Result<SimulatedFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objects = random_objects(&mut rng)?;
    let spec = GridSpec::default();
    let el_bin = spec.elevation_bin();
    let mut points = Vec::with_capacity(BEAMS * AZIMUTH_STEPS);
    for beam in 0..BEAMS {
        let base_el = spec.elevation_max - (beam as f64 + 0.5) * el_bin;
        for step in 0..AZIMUTH_STEPS {
            let az = -std::f64::consts::PI
                + (step as f64 + rng.random_range(0.0..1.0)) * std::f64::consts::TAU / AZIMUTH_STEPS as f64;
            let el = base_el + rng.random_range(-0.3..0.3) * el_bin;
            let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            if let Some((t, refl)) = cast(dir, &objects) {
                let t = t + rng.random_range(-0.01..0.01);
                let p = dir * t;
                let intensity = (refl + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
                points.push(Point::new(p.x as f32, p.y as f32, p.z as f32, intensity as f32));
            }
        }
    }
    Ok(SimulatedFrame {
        cloud: PointCloud::new(points),
        calib: kitti_like_calibration(),
        image: synthetic_image(seed),
        objects,
    })
}

/// Smooth color field with a per-seed phase.
pub fn synthetic_image(seed: u64) -> RgbImage {
    let phase = (seed % 97) as f64 * 0.37;
    let (w, h) = (IMAGE_WIDTH, IMAGE_HEIGHT);
    let mut pixels = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        for x in 0..w {
            let u = x as f64 / w as f64;
            let v = y as f64 / h as f64;
            pixels.push((255.0 * u) as u8);
            pixels.push((127.5 * (1.0 + (6.0 * v + phase).sin())) as u8);
            pixels.push((255.0 * (1.0 - u) * v) as u8);
        }
    }
    RgbImage::new(w, h, pixels).expect("dimensions match")
}

/// One KITTI object-label line for a LiDAR-frame box.
pub fn kitti_label_line(kitti_type: &str, b: &Box3D, calib: &CalibrationSet) -> String {
    let [l, w, h] = b.size;
    let bottom = calib.lidar_to_rect(Vector3::from(b.center)) + Vector3::new(0.0, h / 2.0, 0.0);
    let heading = Vector3::new(b.yaw.cos(), b.yaw.sin(), 0.0);
    let rot = calib.rect * calib.velo_to_cam.fixed_view::<3, 3>(0, 0);
    let d = rot * heading;
    let ry = wrap_angle((-d.z).atan2(d.x));
    let alpha = wrap_angle(ry - bottom.x.atan2(bottom.z));
    format!(
        "{kitti_type} 0.00 0 {alpha:.6} 0.00 0.00 0.00 0.00 {h:.6} {w:.6} {l:.6} {:.6} {:.6} {:.6} {ry:.6}",
        bottom.x, bottom.y, bottom.z
    )
}

impl SimulatedFrame {
    pub fn label_text(&self) -> String {
        let mut s = String::new();
        for o in &self.objects {
            writeln!(s, "{}", kitti_label_line(o.kitti_type, &o.bbox, &self.calib)).unwrap();
        }
        s.push_str("DontCare -1 -1 -10 0.00 0.00 10.00 10.00 -1 -1 -1 -1000 -1000 -1000 -10\n");
        s
    }

    /// Writes `velodyne/<id>.bin`, `calib/<id>.txt`, `image_2/<id>.png` and `label_2/<id>.txt`.
    pub fn write_kitti(&self, root: &Path, id: &str) -> Result<()> {
        for sub in ["velodyne", "calib", "image_2", "label_2"] {
            let d = root.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        crate::kitti_io::write_point_cloud(&root.join("velodyne").join(format!("{id}.bin")), &self.cloud)?;
        let calib_path = root.join("calib").join(format!("{id}.txt"));
        std::fs::write(&calib_path, self.calib.to_kitti_text("P2")).map_err(|e| Error::io(&calib_path, e))?;
        crate::viz::write_png(&root.join("image_2").join(format!("{id}.png")), &self.image)?;
        let label_path = root.join("label_2").join(format!("{id}.txt"));
        std::fs::write(&label_path, self.label_text()).map_err(|e| Error::io(&label_path, e))?;
        Ok(())
    }
}

/// Unit vector through the center of a grid cell.
pub fn cell_direction(spec: &GridSpec, row: usize, col: usize) -> [f64; 3] {
    let az = spec.azimuth_max - (col as f64 + 0.5) * spec.azimuth_bin();
    let el = spec.elevation_max - (row as f64 + 0.5) * spec.elevation_bin();
    [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
}

fn set_geometry(pgm: &mut PgmTensor, row: usize, col: usize, depth: f64, intensity: f32) {
    let dir = cell_direction(pgm.spec(), row, col);
    pgm.set_masked(row, col, true);
    let cell = pgm.cell_mut(row, col);
    for k in 0..3 {
        cell[k] = (dir[k] * depth) as f32;
    }
    cell[CH_D] = depth as f32;
    cell[CH_I] = intensity;
}

/// Depth boundaries separating the four classes of the depth-threshold toy task.
pub const DEPTH_THRESHOLDS: [f64; 3] = [2.0, 3.0, 4.0];

/// Column bands of random width; each band's depth lies in the bin of its class.
///
/// Every cell is occupied. Labels are a pure function of D, so the task is
/// separable by thresholds on a single input channel.
pub fn depth_threshold_dataset(
    spec: GridSpec,
    frames: usize,
    seed: u64,
    schema: ChannelSchema,
) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames)
        .map(|_| {
            let mut pgm = PgmTensor::zeros(spec, schema);
            let mut labels = LabelGrid::background(spec);
            let mut col = 0;
            while col < spec.cols {
                let width = rng.random_range(6..=16).min(spec.cols - col);
                let class = ClassId::ALL[rng.random_range(0..ClassId::COUNT)];
                let lo = 1.0 + class.index() as f64;
                for c in col..col + width {
                    for r in 0..spec.rows {
                        let depth = lo + rng.random_range(0.15..0.85);
                        set_geometry(&mut pgm, r, c, depth, 0.5);
                        labels.set(r, c, class);
                    }
                }
                col += width;
            }
            Frame { input: pgm, labels }
        })
        .collect()
}

/// Camera color that marks each class in the RGB-only toy task.
pub fn class_color(class: ClassId) -> [f32; 3] {
    match class {
        ClassId::Background => [0.9, 0.1, 0.1],
        ClassId::Car => [0.1, 0.9, 0.1],
        ClassId::Pedestrian => [0.1, 0.1, 0.9],
        ClassId::Cyclist => [0.9, 0.9, 0.1],
    }
}

/// Direction along which the RGB-only task splits the grid into bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandAxis {
    Rows,
    Cols,
}

/// Identical geometry in every frame; class identity is carried only by RGB.
///
/// The grid is split into `bands` equal bands along `axis`. In frame `k`
/// band `b` has class `(b + k) mod 4`, so across any four consecutive frames
/// every cell takes each class exactly once and no function of XYZDI alone
/// can exceed 0.25 IoU on any class.
pub fn rgb_only_dataset(
    spec: GridSpec,
    frames: usize,
    axis: BandAxis,
    bands: usize,
    seed: u64,
) -> Result<Vec<Frame>> {
    let extent = match axis {
        BandAxis::Rows => spec.rows,
        BandAxis::Cols => spec.cols,
    };
    if bands == 0 || extent % bands != 0 {
        return Err(Error::Config(format!("{extent} cells do not split into {bands} bands")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut geometry = PgmTensor::zeros(spec, ChannelSchema::Xyzdirgb);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let depth = 2.0 + 2.0 * r as f64 / spec.rows as f64 + rng.random_range(0.0..0.2);
            set_geometry(&mut geometry, r, c, depth, 0.5);
        }
    }
    let band_width = extent / bands;
    Ok((0..frames)
        .map(|k| {
            let mut pgm = geometry.clone();
            let mut labels = LabelGrid::background(spec);
            for r in 0..spec.rows {
                for c in 0..spec.cols {
                    let pos = match axis {
                        BandAxis::Rows => r,
                        BandAxis::Cols => c,
                    };
                    let class = ClassId::ALL[(pos / band_width + k) % ClassId::COUNT];
                    labels.set(r, c, class);
                    let rgb = class_color(class);
                    let cell = pgm.cell_mut(r, c);
                    for j in 0..3 {
                        cell[CH_R + j] = (rgb[j] + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
                    }
                }
            }
            Frame { input: pgm, labels }
        })
        .collect())
}

/// XYZDI copy of an XYZDIRGB frame for the baseline network.
pub fn drop_rgb(frame: &Frame) -> Result<Frame> {
    let spec = *frame.input.spec();
    let mut pgm = PgmTensor::zeros(spec, ChannelSchema::Xyzdi);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            pgm.set_masked(r, c, frame.input.is_masked(r, c));
            pgm.cell_mut(r, c).copy_from_slice(&frame.input.cell(r, c)[..5]);
        }
    }
    if frame.input.schema() != ChannelSchema::Xyzdirgb {
        return Err(Error::domain("frame has no RGB channels to drop"));
    }
    Ok(Frame {
        input: pgm,
        labels: frame.labels.clone(),
    })
}
