//! Rasterization of 3D box annotations onto the polar grid.

use crate::kitti_io::{Box3D, ClassId};
use crate::pgm::{LabelGrid, PgmTensor, CH_X, CH_Y, CH_Z};

/// Boundary-inclusive containment test in the box's own frame.
pub fn point_in_box(point: [f64; 3], b: &Box3D) -> bool {
    let dx = point[0] - b.center[0];
    let dy = point[1] - b.center[1];
    let dz = point[2] - b.center[2];
    let (s, c) = b.yaw.sin_cos();
    // rotate by -yaw
    let lx = c * dx + s * dy;
    let ly = -s * dx + c * dy;
    lx.abs() <= b.size[0] / 2.0 && ly.abs() <= b.size[1] / 2.0 && dz.abs() <= b.size[2] / 2.0
}

/// Overlap priority; lower wins. Rare classes take precedence over Car.
pub fn class_priority(class: ClassId) -> u8 {
    match class {
        ClassId::Pedestrian => 0,
        ClassId::Cyclist => 1,
        ClassId::Car => 2,
        ClassId::Background => 3,
    }
}

/// Boxes in the order they are tried against each cell.
pub fn priority_order(boxes: &[Box3D]) -> Vec<&Box3D> {
    let mut ordered: Vec<&Box3D> = boxes
        .iter()
        .filter(|b| b.class_id != ClassId::Background)
        .collect();
    // stable: equal classes keep input order
    ordered.sort_by_key(|b| class_priority(b.class_id));
    ordered
}

/// Label every occupied cell with the first box (in priority order) that
/// contains its stored point. Unoccupied cells stay Background.
pub fn rasterize_labels(pgm: &PgmTensor, boxes: &[Box3D]) -> LabelGrid {
    let spec = *pgm.spec();
    let mut labels = LabelGrid::background(spec);
    let ordered = priority_order(boxes);
    if ordered.is_empty() {
        return labels;
    }
    for row in 0..spec.rows {
        for col in 0..spec.cols {
            if !pgm.is_masked(row, col) {
                continue;
            }
            let cell = pgm.cell(row, col);
            let p = [cell[CH_X] as f64, cell[CH_Y] as f64, cell[CH_Z] as f64];
            if let Some(b) = ordered.iter().find(|b| point_in_box(p, b)) {
                labels.set(row, col, b.class_id);
            }
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kitti_io::{Point, PointCloud};
    use crate::pgm::{build_pgm, GridSpec};
    use std::f64::consts::FRAC_PI_4;

    fn car(center: [f64; 3], size: [f64; 3], yaw: f64) -> Box3D {
        Box3D::new(center, size, yaw, ClassId::Car).unwrap()
    }

    #[test]
    fn center_and_faces() {
        let b = car([10.0, 2.0, -1.0], [4.0, 2.0, 1.5], 0.0);
        assert!(point_in_box(b.center, &b));
        assert!(point_in_box([12.0, 2.0, -1.0], &b));
        assert!(!point_in_box([12.0 + 1e-9, 2.0, -1.0], &b));
    }

    #[test]
    fn rotated_corner_matches_hand_rotation() {
        // A 2x2x2 cube at the origin yawed by 45 degrees: its corners in the
        // world frame sit at radius sqrt(2) along the axes.
        let b = car([0.0, 0.0, 0.0], [2.0, 2.0, 2.0], FRAC_PI_4);
        let r = 2f64.sqrt();
        assert!(point_in_box([r - 1e-9, 0.0, 0.0], &b));
        assert!(!point_in_box([r + 1e-6, 0.0, 0.0], &b));
        // The unrotated corner (1, 1) is now outside along the rotated diagonal.
        assert!(!point_in_box([1.0, 1.0, 0.0], &b));
        assert!(point_in_box([0.7, 0.7, 0.0], &b));
    }

    #[test]
    fn no_boxes_is_all_background() {
        let cloud = PointCloud::new(vec![Point::new(5.0, 0.0, 0.0, 0.5)]);
        let pgm = build_pgm(&cloud, &GridSpec::default());
        let labels = rasterize_labels(&pgm, &[]);
        assert_eq!(labels.count(ClassId::Background), GridSpec::default().cells());
    }

    #[test]
    fn pedestrian_beats_overlapping_car() {
        let cloud = PointCloud::new(vec![Point::new(5.0, 0.0, 0.0, 0.5)]);
        let pgm = build_pgm(&cloud, &GridSpec::default());
        let boxes = [
            car([5.0, 0.0, 0.0], [4.0, 2.0, 2.0], 0.0),
            Box3D::new([5.0, 0.0, 0.0], [1.0, 1.0, 2.0], 0.3, ClassId::Pedestrian).unwrap(),
        ];
        let labels = rasterize_labels(&pgm, &boxes);
        assert_eq!(labels.count(ClassId::Pedestrian), 1);
        assert_eq!(labels.count(ClassId::Car), 0);
    }

    #[test]
    fn cells_outside_every_box_are_background() {
        let cloud = PointCloud::new(vec![
            Point::new(5.0, 0.0, 0.0, 0.5),
            Point::new(20.0, 5.0, 0.0, 0.5),
        ]);
        let pgm = build_pgm(&cloud, &GridSpec::default());
        let labels = rasterize_labels(&pgm, &[car([5.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0)]);
        assert_eq!(labels.count(ClassId::Car), 1);
    }
}
