//! Mean IoU over a dataset-level confusion matrix, and depth RMSE.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::feature::Task;
use crate::{Error, Result};

/// Accumulates a `num_classes × num_classes` confusion matrix
/// (rows: ground truth, columns: prediction).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    num_classes: usize,
    ignore_id: u16,
    counts: Vec<u64>,
    ignored: u64,
}

impl Confusion {
    pub fn new(num_classes: usize, ignore_id: u16) -> Self {
        Confusion {
            num_classes,
            ignore_id,
            counts: vec![0; num_classes * num_classes],
            ignored: 0,
        }
    }

    pub fn add(&mut self, pred: &[u16], gt: &[u16]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape(format!(
                "prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g == self.ignore_id {
                self.ignored += 1;
                continue;
            }
            let (p, g) = (p as usize, g as usize);
            if p >= self.num_classes || g >= self.num_classes {
                return Err(Error::input(format!(
                    "class pair ({g}, {p}) outside {} classes",
                    self.num_classes
                )));
            }
            self.counts[g * self.num_classes + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::shape("confusion matrices differ in class count"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.ignored += other.ignored;
        Ok(())
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn evaluated(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// IoU per class; `None` for classes absent from both prediction and
    /// ground truth.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        let n = self.num_classes;
        (0..n)
            .map(|c| {
                let tp = self.count(c, c);
                let fn_: u64 = (0..n).map(|p| self.count(c, p)).sum::<u64>() - tp;
                let fp: u64 = (0..n).map(|g| self.count(g, c)).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    pub fn report(&self) -> Result<EvalReport> {
        let evaluated = self.evaluated();
        if evaluated == 0 {
            return Err(Error::Empty("no evaluated pixels (all ignored)"));
        }
        let per_class = self.per_class_iou();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let miou = present.iter().sum::<f64>() / present.len() as f64;
        Ok(EvalReport {
            task: Task::Segmentation {
                num_classes: self.num_classes,
            },
            per_class_iou: per_class,
            miou: Some(miou),
            rmse: None,
            pixels_used: evaluated,
            pixels_ignored: self.ignored,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: Option<f64>,
    pub rmse: Option<f64>,
    pub pixels_used: u64,
    pub pixels_ignored: u64,
}

/// Mean IoU over all images, pooled into one confusion matrix.
pub fn mean_iou(
    preds: &[&[u16]],
    gts: &[&[u16]],
    num_classes: usize,
    ignore_id: u16,
) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} ground-truth maps",
            preds.len(),
            gts.len()
        )));
    }
    let mut confusion = Confusion::new(num_classes, ignore_id);
    for (p, g) in preds.iter().zip(gts) {
        confusion.add(p, g)?;
    }
    confusion.report()
}

/// Running sum of squared depth errors over valid pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SquaredError {
    pub sum: f64,
    pub count: u64,
    pub skipped: u64,
}

impl SquaredError {
    pub fn add(&mut self, pred: &[f32], gt: &[f32], valid: &[bool]) -> Result<()> {
        if pred.len() != gt.len() || gt.len() != valid.len() {
            return Err(Error::shape(format!(
                "depth maps of {}, {} and mask of {} pixels",
                pred.len(),
                gt.len(),
                valid.len()
            )));
        }
        for ((&p, &g), &v) in pred.iter().zip(gt).zip(valid) {
            if v {
                let e = p as f64 - g as f64;
                self.sum += e * e;
                self.count += 1;
            } else {
                self.skipped += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &SquaredError) {
        self.sum += other.sum;
        self.count += other.count;
        self.skipped += other.skipped;
    }

    pub fn report(&self) -> Result<EvalReport> {
        if self.count == 0 {
            return Err(Error::Empty("no valid depth pixels"));
        }
        Ok(EvalReport {
            task: Task::Depth,
            per_class_iou: Vec::new(),
            miou: None,
            rmse: Some(libm::sqrt(self.sum / self.count as f64)),
            pixels_used: self.count,
            pixels_ignored: self.skipped,
        })
    }
}

/// Root-mean-square depth error over valid pixels, pooled across images.
pub fn rmse_depth(preds: &[&[f32]], gts: &[&[f32]], valid: &[&[bool]]) -> Result<EvalReport> {
    if preds.len() != gts.len() || gts.len() != valid.len() {
        return Err(Error::shape("depth inputs differ in image count"));
    }
    let mut acc = SquaredError::default();
    for ((p, g), v) in preds.iter().zip(gts).zip(valid) {
        acc.add(p, g, v)?;
    }
    acc.report()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::IGNORE_ID;

    #[test]
    fn perfect_prediction() {
        let gt = [0u16, 1, 2, 1];
        let r = mean_iou(&[&gt], &[&gt], 3, IGNORE_ID).unwrap();
        assert_eq!(r.miou, Some(1.0));
    }

    #[test]
    fn half_and_half_against_all_a() {
        let gt = [0u16, 0, 1, 1];
        let pred = [0u16; 4];
        // Pixel-count oracle: A has TP 2, FP 2; B has TP 0, FN 2.
        let r = mean_iou(&[&pred], &[&gt], 2, IGNORE_ID).unwrap();
        assert_eq!(r.per_class_iou, vec![Some(0.5), Some(0.0)]);
        assert_eq!(r.miou, Some(0.25));
    }

    #[test]
    fn absent_classes_excluded() {
        let gt = [0u16, 0];
        let r = mean_iou(&[&gt], &[&gt], 5, IGNORE_ID).unwrap();
        assert_eq!(r.per_class_iou[3], None);
        assert_eq!(r.miou, Some(1.0));
    }

    #[test]
    fn all_ignored_is_an_error() {
        let gt = [IGNORE_ID; 3];
        let pred = [0u16; 3];
        assert!(matches!(
            mean_iou(&[&pred], &[&gt], 2, IGNORE_ID),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(mean_iou(&[&[0u16, 1][..]], &[&[0u16][..]], 2, IGNORE_ID).is_err());
    }

    #[test]
    fn rmse_cases() {
        let gt = [1.0f32, 2.0, 3.0];
        let ok = [true; 3];
        assert_eq!(rmse_depth(&[&gt], &[&gt], &[&ok]).unwrap().rmse, Some(0.0));
        let shifted = [2.0f32, 3.0, 4.0];
        assert_eq!(rmse_depth(&[&shifted], &[&gt], &[&ok]).unwrap().rmse, Some(1.0));
        let r = rmse_depth(&[&[1.0f32, 3.0][..]], &[&[1.0f32, 1.0][..]], &[&[true, true][..]])
            .unwrap();
        assert!((r.rmse.unwrap() - core::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn rmse_needs_valid_pixels() {
        assert!(rmse_depth(&[&[1.0f32][..]], &[&[1.0f32][..]], &[&[false][..]]).is_err());
    }
}
