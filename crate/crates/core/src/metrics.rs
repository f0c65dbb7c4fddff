//! Segmentation and grounding metrics.
//!
//! * cIoU: cumulative intersection over cumulative union across a dataset.
//! * gIoU: mean of per-image IoUs. An image whose prediction and ground truth
//!   are both empty scores 1.0; exactly one empty scores 0.0.
//! * mIoU: mean over classes of per-class cumulative IoU, skipping classes
//!   with zero union.
//! * Acc@0.5: share of predictions whose box IoU with the ground truth box is
//!   strictly greater than 0.5. Boxes come from masks via [`mask2box`].
//!
//! [`EvalAccumulator`] holds integer sums plus the multiset of per-image IoUs,
//! so sharded accumulation merged in any order finalizes to bit-identical
//! values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, IndexMask, LabelId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskIou {
    pub intersection: u64,
    pub union: u64,
    pub iou: f64,
}

pub fn mask_iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<MaskIou> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::invalid(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut intersection = 0u64;
    let mut union = 0u64;
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        intersection += (p && g) as u64;
        union += (p || g) as u64;
    }
    Ok(MaskIou {
        intersection,
        union,
        iou: ratio_or_one(intersection, union),
    })
}

fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Inclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        if x_min > x_max || y_min > y_max {
            return Err(Error::invalid(format!(
                "box ({x_min},{y_min})-({x_max},{y_max}) has negative extent"
            )));
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn area(&self) -> u64 {
        ((self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)) as u64
    }
}

/// Tightest box around the foreground, `None` for an empty mask.
pub fn mask2box(mask: &BinaryMask) -> Option<BBox> {
    let mut b: Option<BBox> = None;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if !mask.get(x, y) {
                continue;
            }
            b = Some(match b {
                None => BBox {
                    x_min: x,
                    y_min: y,
                    x_max: x,
                    y_max: y,
                },
                Some(b) => BBox {
                    x_min: b.x_min.min(x),
                    y_min: b.y_min.min(y),
                    x_max: b.x_max.max(x),
                    y_max: b.y_max.max(y),
                },
            });
        }
    }
    b
}

pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let ix0 = a.x_min.max(b.x_min);
    let iy0 = a.y_min.max(b.y_min);
    let ix1 = a.x_max.min(b.x_max);
    let iy1 = a.y_max.min(b.y_max);
    let inter = if ix0 > ix1 || iy0 > iy1 {
        0
    } else {
        ((ix1 - ix0 + 1) * (iy1 - iy0 + 1)) as u64
    };
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

pub const ACC_IOU_THRESHOLD: f64 = 0.5;

/// Mergeable dataset-level accumulator for every metric.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalAccumulator {
    pub intersection_sum: u64,
    pub union_sum: u64,
    pub per_image_ious: Vec<f64>,
    pub correct: u64,
    pub total: u64,
    /// class id → (intersection, union)
    pub per_class: BTreeMap<LabelId, (u64, u64)>,
}

impl EvalAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one referring-segmentation pair (feeds cIoU and gIoU).
    pub fn add_masks(&mut self, pred: &BinaryMask, gt: &BinaryMask) -> Result<MaskIou> {
        let m = mask_iou(pred, gt)?;
        self.intersection_sum += m.intersection;
        self.union_sum += m.union;
        self.per_image_ious.push(m.iou);
        Ok(m)
    }

    /// Adds one box prediction (feeds Acc@0.5). A missing prediction is wrong.
    pub fn add_boxes(&mut self, pred: Option<&BBox>, gt: &BBox) -> f64 {
        let iou = pred.map_or(0.0, |p| box_iou(p, gt));
        self.total += 1;
        if iou > ACC_IOU_THRESHOLD {
            self.correct += 1;
        }
        iou
    }

    /// mask2box on both masks, then [`EvalAccumulator::add_boxes`]. Returns
    /// `None` when the ground truth mask is empty (nothing to localize).
    pub fn add_mask_boxes(&mut self, pred: &BinaryMask, gt: &BinaryMask) -> Option<f64> {
        let gt_box = mask2box(gt)?;
        Some(self.add_boxes(mask2box(pred).as_ref(), &gt_box))
    }

    /// Adds one semantic label map pair (feeds mIoU). Pixels whose ground
    /// truth equals `ignore` are skipped.
    pub fn add_semantic(
        &mut self,
        pred: &IndexMask,
        gt: &IndexMask,
        ignore: Option<LabelId>,
    ) -> Result<()> {
        if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
            return Err(Error::invalid("prediction and ground truth sizes differ"));
        }
        let mut local: BTreeMap<LabelId, (u64, u64)> = BTreeMap::new();
        for (&p, &g) in pred.values().iter().zip(gt.values()) {
            if Some(g) == ignore {
                continue;
            }
            if p == g {
                let e = local.entry(p).or_default();
                e.0 += 1;
                e.1 += 1;
            } else {
                local.entry(p).or_default().1 += 1;
                local.entry(g).or_default().1 += 1;
            }
        }
        for (class, (i, u)) in local {
            let e = self.per_class.entry(class).or_default();
            e.0 += i;
            e.1 += u;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &EvalAccumulator) {
        self.intersection_sum += other.intersection_sum;
        self.union_sum += other.union_sum;
        self.per_image_ious.extend_from_slice(&other.per_image_ious);
        self.correct += other.correct;
        self.total += other.total;
        for (&class, &(i, u)) in &other.per_class {
            let e = self.per_class.entry(class).or_default();
            e.0 += i;
            e.1 += u;
        }
    }

    pub fn ciou(&self) -> Result<f64> {
        if self.union_sum == 0 {
            return Err(Error::invalid("cIoU of an accumulator with zero union"));
        }
        Ok(self.intersection_sum as f64 / self.union_sum as f64)
    }

    pub fn giou(&self) -> Result<f64> {
        if self.per_image_ious.is_empty() {
            return Err(Error::invalid("gIoU of an empty accumulator"));
        }
        // sort so the float sum does not depend on accumulation order
        let mut v = self.per_image_ious.clone();
        v.sort_by(f64::total_cmp);
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn acc_at_05(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::invalid("Acc@0.5 of an empty accumulator"));
        }
        Ok(self.correct as f64 / self.total as f64)
    }

    /// Mean per-class cumulative IoU over `classes`, skipping zero-union ones.
    pub fn miou(&self, classes: &[LabelId]) -> Result<f64> {
        let ious: Vec<f64> = classes
            .iter()
            .filter_map(|c| self.per_class.get(c))
            .filter(|(_, u)| *u > 0)
            .map(|&(i, u)| i as f64 / u as f64)
            .collect();
        if ious.is_empty() {
            return Err(Error::invalid("mIoU has no class with non-zero union"));
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }

    /// mIoU over every class seen so far.
    pub fn miou_all(&self) -> Result<f64> {
        let classes: Vec<LabelId> = self.per_class.keys().copied().collect();
        self.miou(&classes)
    }

    pub fn class_iou(&self, class: LabelId) -> Option<f64> {
        self.per_class
            .get(&class)
            .filter(|(_, u)| *u > 0)
            .map(|&(i, u)| i as f64 / u as f64)
    }
}
