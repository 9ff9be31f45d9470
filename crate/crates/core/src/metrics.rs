//! Confusion-matrix accumulation and class-wise IoU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kitti_io::ClassId;
use crate::pgm::LabelGrid;

/// `counts[gt * n + pred]` over evaluated cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        Self::new(ClassId::COUNT)
    }
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::domain(format!(
                "{} counts for a {num_classes}x{num_classes} matrix",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { num_classes, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// New matrix with the masked cells of one frame added.
    pub fn accumulate(&self, pred: &LabelGrid, gt: &LabelGrid, mask: &[bool]) -> Result<Self> {
        let cells = gt.labels().len();
        if pred.spec() != gt.spec() || mask.len() != cells {
            return Err(Error::domain("prediction, ground truth and mask dimensions differ"));
        }
        let mut out = self.clone();
        for ((p, g), &m) in pred.labels().iter().zip(gt.labels()).zip(mask) {
            if !m {
                continue;
            }
            let (gi, pi) = (g.index(), p.index());
            if gi >= self.num_classes || pi >= self.num_classes {
                return Err(Error::domain(format!(
                    "class index beyond the {}-class matrix",
                    self.num_classes
                )));
            }
            out.counts[gi * self.num_classes + pi] += 1;
        }
        Ok(out)
    }

    pub fn merge(&self, other: &ConfusionMatrix) -> Result<Self> {
        if self.num_classes != other.num_classes {
            return Err(Error::domain("cannot merge matrices of different sizes"));
        }
        let counts = self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect();
        Ok(ConfusionMatrix {
            num_classes: self.num_classes,
            counts,
        })
    }

    /// (TP, FP, FN) of one class.
    pub fn class_counts(&self, class: usize) -> (u64, u64, u64) {
        let n = self.num_classes;
        let tp = self.get(class, class);
        let row: u64 = (0..n).map(|j| self.get(class, j)).sum();
        let col: u64 = (0..n).map(|i| self.get(i, class)).sum();
        (tp, col - tp, row - tp)
    }

    /// TP / (TP + FP + FN); `None` when the class never occurs in either labeling.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        (0..self.num_classes)
            .map(|c| {
                let (tp, fp, fn_) = self.class_counts(c);
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean of the defined IoUs over `classes`.
    pub fn miou(&self, classes: &[ClassId]) -> Result<f64> {
        if classes.is_empty() {
            return Err(Error::domain("mIoU over an empty class subset"));
        }
        let ious = self.iou_per_class();
        let mut picked = Vec::with_capacity(classes.len());
        for c in classes {
            let iou = ious
                .get(c.index())
                .ok_or_else(|| Error::domain(format!("class {c} outside the matrix")))?;
            picked.push(*iou);
        }
        miou_from_ious(&picked)
    }

    pub fn report(&self, classes: &[ClassId]) -> MetricsReport {
        let ious = self.iou_per_class();
        let per_class = ClassId::ALL
            .iter()
            .take(self.num_classes)
            .map(|&c| {
                let (tp, fp, fn_) = self.class_counts(c.index());
                ClassMetrics {
                    class: c.name().to_string(),
                    iou: ious[c.index()],
                    tp,
                    fp,
                    fn_,
                }
            })
            .collect();
        MetricsReport {
            per_class,
            miou_classes: classes.iter().map(|c| c.name().to_string()).collect(),
            miou: self.miou(classes).ok(),
            cells: self.total(),
            confusion: self.counts.clone(),
        }
    }
}

/// Mean of the defined entries; all undefined is a domain error.
pub fn miou_from_ious(ious: &[Option<f64>]) -> Result<f64> {
    let defined: Vec<f64> = ious.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::domain("no class in the subset has a defined IoU"));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub iou: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub miou_classes: Vec<String>,
    pub miou: Option<f64>,
    pub cells: u64,
    /// Row-major ground truth x prediction counts.
    pub confusion: Vec<u64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row in percent, columns as in the usual benchmark table.
    pub fn to_text(&self, row_name: &str) -> String {
        let pct = |v: Option<f64>| match v {
            Some(x) => format!("{:>10.1}", 100.0 * x),
            None => format!("{:>10}", "-"),
        };
        let mut head = format!("{:<16}", "");
        let mut row = format!("{row_name:<16}");
        for name in &self.miou_classes {
            let iou = self.per_class.iter().find(|m| &m.class == name).and_then(|m| m.iou);
            head.push_str(&format!("{name:>10}"));
            row.push_str(&pct(iou));
        }
        head.push_str(&format!("{:>10}", "mIoU"));
        row.push_str(&pct(self.miou));
        format!("{head}\n{row}\n{} evaluated cells\n", self.cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pgm::GridSpec;

    fn grid(labels: &[ClassId]) -> LabelGrid {
        LabelGrid::from_labels(GridSpec::with_dims(1, labels.len()), labels.to_vec()).unwrap()
    }

    #[test]
    fn hand_iou() {
        // class 1: TP 5, FP 3, FN 2
        let mut counts = vec![0u64; 16];
        counts[5] = 5;
        counts[4] = 3;
        counts[1 * 4 + 2] = 2;
        let cm = ConfusionMatrix::from_counts(4, counts).unwrap();
        assert_eq!(cm.iou_per_class()[1], Some(0.5));
        assert_eq!(cm.iou_per_class()[3], None);
        assert_eq!(cm.miou(&[ClassId::Car]).unwrap(), 0.5);
        assert!(cm.miou(&[ClassId::Cyclist]).is_err());
        assert!(cm.miou(&[]).is_err());
    }

    #[test]
    fn value_semantics_and_mask() {
        use ClassId::*;
        let g = grid(&[Car, Car, Pedestrian, Background]);
        let p = grid(&[Car, Cyclist, Pedestrian, Background]);
        let cm = ConfusionMatrix::default();
        let out = cm.accumulate(&p, &g, &[true, true, false, true]).unwrap();
        assert_eq!(cm.total(), 0);
        assert_eq!(out.total(), 3);
        assert_eq!(out.get(1, 1), 1);
        assert_eq!(out.get(1, 3), 1);
        let none = cm.accumulate(&p, &g, &[false; 4]).unwrap();
        assert_eq!(none, cm);
        let short = grid(&[Car]);
        assert!(cm.accumulate(&short, &g, &[true; 4]).is_err());
    }

    #[test]
    fn text_report_layout() {
        use ClassId::*;
        let g = grid(&[Car, Pedestrian, Cyclist]);
        let cm = ConfusionMatrix::default().accumulate(&g, &g, &[true; 3]).unwrap();
        let rep = cm.report(&ClassId::FOREGROUND);
        assert_eq!(rep.miou, Some(1.0));
        let text = rep.to_text("toy");
        assert!(text.contains("mIoU"));
        assert!(text.lines().nth(1).unwrap().ends_with("100.0"));
        let back: MetricsReport = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(back, rep);
    }
}
