//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use pgmfuse::kitti_io::{Box3D, ClassId, Point, PointCloud};
use pgmfuse::metrics::ConfusionMatrix;
use pgmfuse::models::{predict, Frame, NetworkSpec, WeightBundle};
use pgmfuse::nn::{ParamSet, Tensor3};
use pgmfuse::pgm::{GridSpec, LabelGrid, PgmTensor};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

/// max |a - n| / max(max |a|, max |n|); zero when both vanish.
pub fn normwise_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central difference of `f` at every coordinate of `x`.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn flatten<P: ParamSet>(p: &P) -> Vec<f64> {
    p.param_refs().iter().flat_map(|r| r.data.iter().copied()).collect()
}

/// Copy of `p` with its flattened parameters replaced by `values`.
pub fn with_params<P: ParamSet + Clone>(p: &P, values: &[f64]) -> P {
    let mut out = p.clone();
    let mut slots = Vec::new();
    out.collect_mut(&mut slots);
    let mut offset = 0;
    for s in slots {
        let n = s.len();
        s.copy_from_slice(&values[offset..offset + n]);
        offset += n;
    }
    assert_eq!(offset, values.len());
    out
}

pub fn with_data(t: &Tensor3, data: &[f64]) -> Tensor3 {
    Tensor3::from_vec(t.h, t.w, t.c, data.to_vec()).unwrap()
}

/// Column and row of a point computed from first principles, `None` outside the field of view.
pub fn reference_cell(p: [f64; 3], g: &GridSpec) -> Option<(usize, usize)> {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    if r == 0.0 {
        return None;
    }
    let theta = p[1].atan2(p[0]);
    let phi = (p[2] / r).asin();
    if theta < g.azimuth_min || theta >= g.azimuth_max || phi < g.elevation_min || phi >= g.elevation_max {
        return None;
    }
    let az_bin = (g.azimuth_max - g.azimuth_min) / g.cols as f64;
    let el_bin = (g.elevation_max - g.elevation_min) / g.rows as f64;
    let col = (((g.azimuth_max - theta) / az_bin).floor() as usize).min(g.cols - 1);
    let row = (((g.elevation_max - phi) / el_bin).floor() as usize).min(g.rows - 1);
    Some((row, col))
}

/// Group every point by cell and keep the (depth, index)-smallest member.
pub fn brute_force_pgm(cloud: &PointCloud, g: &GridSpec) -> BTreeMap<(usize, usize), usize> {
    let mut groups: BTreeMap<(usize, usize), Vec<(f64, usize)>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let xyz = [p.x as f64, p.y as f64, p.z as f64];
        if let Some(cell) = reference_cell(xyz, g) {
            let d = (xyz[0] * xyz[0] + xyz[1] * xyz[1] + xyz[2] * xyz[2]).sqrt();
            groups.entry(cell).or_default().push((d, i));
        }
    }
    groups
        .into_iter()
        .map(|(cell, mut members)| {
            members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            (cell, members[0].1)
        })
        .collect()
}

/// Random scan with duplicated points, exact depth ties along a ray and
/// returns outside the field of view.
pub fn random_cloud<R: Rng>(rng: &mut R, max_points: usize) -> PointCloud {
    let n = rng.random_range(1..=max_points);
    let mut points: Vec<Point> = Vec::with_capacity(n);
    while points.len() < n {
        let roll: f64 = rng.random();
        if roll < 0.1 && !points.is_empty() {
            let j = rng.random_range(0..points.len());
            let mut q = points[j];
            q.intensity = rng.random();
            points.push(q);
        } else if roll < 0.15 && !points.is_empty() {
            // closer return along the same ray
            let j = rng.random_range(0..points.len());
            let q = points[j];
            points.push(Point::new(q.x * 0.5, q.y * 0.5, q.z * 0.5, q.intensity));
        } else {
            let r = rng.random_range(1.0..60.0);
            let az = rng.random_range(-1.0..1.0f64);
            let el = rng.random_range(-0.5..0.1f64);
            points.push(Point::new(
                (r * el.cos() * az.cos()) as f32,
                (r * el.cos() * az.sin()) as f32,
                (r * el.sin()) as f32,
                rng.random(),
            ));
        }
    }
    PointCloud::new(points)
}

pub fn reference_in_box(p: [f64; 3], b: &Box3D) -> bool {
    let d = [p[0] - b.center[0], p[1] - b.center[1], p[2] - b.center[2]];
    let (s, c) = b.yaw.sin_cos();
    let along = c * d[0] + s * d[1];
    let across = -s * d[0] + c * d[1];
    along.abs() <= b.size[0] / 2.0 && across.abs() <= b.size[1] / 2.0 && d[2].abs() <= b.size[2] / 2.0
}

/// Per cell, try every box; the rarest class wins, then the earliest box.
pub fn brute_force_labels(pgm: &PgmTensor, boxes: &[Box3D]) -> Vec<ClassId> {
    let rank = |c: ClassId| match c {
        ClassId::Pedestrian => 0,
        ClassId::Cyclist => 1,
        ClassId::Car => 2,
        ClassId::Background => 3,
    };
    let g = pgm.spec();
    let mut out = vec![ClassId::Background; g.cells()];
    for row in 0..g.rows {
        for col in 0..g.cols {
            if !pgm.is_masked(row, col) {
                continue;
            }
            let v = pgm.cell(row, col);
            let p = [v[0] as f64, v[1] as f64, v[2] as f64];
            let mut best: Option<(u8, usize)> = None;
            for (k, b) in boxes.iter().enumerate() {
                if b.class_id == ClassId::Background || !reference_in_box(p, b) {
                    continue;
                }
                let key = (rank(b.class_id), k);
                if best.is_none_or(|cur| key < cur) {
                    best = Some(key);
                }
            }
            if let Some((_, k)) = best {
                out[row * g.cols + col] = boxes[k].class_id;
            }
        }
    }
    out
}

/// Boxes placed over points of the scan so that most boxes catch returns.
pub fn random_boxes<R: Rng>(rng: &mut R, cloud: &PointCloud, max_boxes: usize) -> Vec<Box3D> {
    let n = rng.random_range(0..=max_boxes);
    (0..n)
        .map(|_| {
            let anchor = cloud.points[rng.random_range(0..cloud.len())];
            let class = ClassId::ALL[rng.random_range(0..ClassId::COUNT)];
            Box3D::new(
                [
                    anchor.x as f64 + rng.random_range(-1.0..1.0),
                    anchor.y as f64 + rng.random_range(-1.0..1.0),
                    anchor.z as f64 + rng.random_range(-0.5..0.5),
                ],
                [
                    rng.random_range(0.5..6.0),
                    rng.random_range(0.5..3.0),
                    rng.random_range(0.5..2.5),
                ],
                rng.random_range(-3.2..3.2),
                class,
            )
            .unwrap()
        })
        .collect()
}

/// Foreground mIoU of a trained model on its own frames.
pub fn toy_miou(spec: &NetworkSpec, weights: &WeightBundle, frames: &[Frame]) -> f64 {
    let mut cm = ConfusionMatrix::default();
    for f in frames {
        let pred: LabelGrid = predict(spec, weights, &f.input).unwrap();
        cm = cm.accumulate(&pred, &f.labels, f.input.mask()).unwrap();
    }
    cm.miou(&ClassId::FOREGROUND).unwrap()
}
