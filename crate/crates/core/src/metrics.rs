//! Intersection-over-union, per image and accumulated over a dataset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassTable, HardMask, IGNORE, NUM_CLASSES};

fn check_pair(pred: &HardMask, reference: &HardMask) -> Result<()> {
    pred.check_same_shape(reference)?;
    if let Some(index) = pred.labels().iter().position(|&l| l == IGNORE) {
        return Err(Error::InvalidLabel {
            label: IGNORE,
            index,
        });
    }
    Ok(())
}

/// Per-class `(intersection, union)` over pixels where `reference` is not IGNORE.
fn pair_counts(pred: &HardMask, reference: &HardMask) -> ([u64; NUM_CLASSES], [u64; NUM_CLASSES]) {
    let mut inter = [0u64; NUM_CLASSES];
    let mut union = [0u64; NUM_CLASSES];
    for (&p, &r) in pred.labels().iter().zip(reference.labels()) {
        if r == IGNORE {
            continue;
        }
        if p == r {
            inter[p as usize] += 1;
            union[p as usize] += 1;
        } else {
            union[p as usize] += 1;
            union[r as usize] += 1;
        }
    }
    (inter, union)
}

/// IoU of one class; `None` when the class is absent from both masks.
pub fn iou(pred: &HardMask, reference: &HardMask, class_id: usize) -> Result<Option<f64>> {
    check_pair(pred, reference)?;
    if class_id >= NUM_CLASSES {
        return Err(Error::InvalidLabel {
            label: class_id.min(u8::MAX as usize) as u8,
            index: 0,
        });
    }
    let (inter, union) = pair_counts(pred, reference);
    Ok((union[class_id] > 0).then(|| inter[class_id] as f64 / union[class_id] as f64))
}

/// Mean IoU over the classes present in either mask; 0 when none is.
pub fn miou_image(pred: &HardMask, reference: &HardMask) -> Result<f64> {
    check_pair(pred, reference)?;
    let (inter, union) = pair_counts(pred, reference);
    let present: Vec<f64> = (0..NUM_CLASSES)
        .filter(|&c| union[c] > 0)
        .map(|c| inter[c] as f64 / union[c] as f64)
        .collect();
    if present.is_empty() {
        return Ok(0.0);
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Dataset-level IoU counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionAccumulator {
    pub intersections: [u64; NUM_CLASSES],
    pub unions: [u64; NUM_CLASSES],
    /// Reference pixels per class.
    pub pixel_counts: [u64; NUM_CLASSES],
}

impl ConfusionAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, pred: &HardMask, reference: &HardMask) -> Result<()> {
        check_pair(pred, reference)?;
        let (inter, union) = pair_counts(pred, reference);
        for c in 0..NUM_CLASSES {
            self.intersections[c] += inter[c];
            self.unions[c] += union[c];
        }
        for &r in reference.labels() {
            if r != IGNORE {
                self.pixel_counts[r as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionAccumulator) {
        for c in 0..NUM_CLASSES {
            self.intersections[c] += other.intersections[c];
            self.unions[c] += other.unions[c];
            self.pixel_counts[c] += other.pixel_counts[c];
        }
    }

    pub fn report(&self) -> IoUReport {
        let per_class: [Option<f64>; NUM_CLASSES] = std::array::from_fn(|c| {
            (self.unions[c] > 0).then(|| self.intersections[c] as f64 / self.unions[c] as f64)
        });
        let present_classes: Vec<usize> = (0..NUM_CLASSES)
            .filter(|&c| per_class[c].is_some())
            .collect();
        let mean = if present_classes.is_empty() {
            0.0
        } else {
            present_classes
                .iter()
                .map(|&c| per_class[c].unwrap())
                .sum::<f64>()
                / present_classes.len() as f64
        };
        IoUReport {
            per_class,
            mean,
            present_classes,
        }
    }
}

/// Functional form of [`ConfusionAccumulator::accumulate`].
pub fn accumulate(
    mut acc: ConfusionAccumulator,
    pred: &HardMask,
    reference: &HardMask,
) -> Result<ConfusionAccumulator> {
    acc.accumulate(pred, reference)?;
    Ok(acc)
}

pub fn report(acc: &ConfusionAccumulator) -> IoUReport {
    acc.report()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub per_class: [Option<f64>; NUM_CLASSES],
    pub mean: f64,
    pub present_classes: Vec<usize>,
}

impl IoUReport {
    pub const CSV_HEADER: &'static str = "BG,HD,TR,LH,RH,LL,RL,Avg.";

    /// One results-table row in percent, absent classes left empty.
    pub fn csv_row(&self) -> String {
        let mut cells: Vec<String> = self
            .per_class
            .iter()
            .map(|v| v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_default())
            .collect();
        cells.push(format!("{:.2}", 100.0 * self.mean));
        cells.join(",")
    }

    pub fn class_name(class: usize) -> &'static str {
        ClassTable::name(class)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, labels: &[u8]) -> HardMask {
        HardMask::new(h, w, labels.to_vec()).unwrap()
    }

    #[test]
    fn identical_masks_score_one() {
        let m = mask(2, 2, &[0, 1, 1, 2]);
        for c in 0..3 {
            assert_eq!(iou(&m, &m, c).unwrap(), Some(1.0));
        }
        assert_eq!(iou(&m, &m, 5).unwrap(), None);
        assert_eq!(
            miou_image(&mask(1, 2, &[0, 1]), &mask(1, 2, &[0, 1])).unwrap(),
            1.0
        );
    }

    #[test]
    fn disjoint_class_scores_zero() {
        let pred = HardMask::filled(3, 3, 0);
        let reference = HardMask::filled(3, 3, 1);
        assert_eq!(iou(&pred, &reference, 1).unwrap(), Some(0.0));
    }

    #[test]
    fn hand_counted_two_by_two() {
        let pred = mask(2, 2, &[0, 1, 1, 1]);
        let reference = mask(2, 2, &[0, 1, 0, 1]);
        let v = iou(&pred, &reference, 1).unwrap().unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn miou_averages_present_classes_only() {
        let pred = mask(1, 4, &[0, 0, 1, 1]);
        let reference = mask(1, 4, &[0, 0, 1, IGNORE]);
        // the IGNORE pixel drops out, leaving class 1 with inter 1 union 1
        assert_eq!(miou_image(&pred, &reference).unwrap(), 1.0);
        let reference = mask(1, 4, &[0, 0, 1, 2]);
        // class 2 is present only in the reference: IoU 0
        let v = miou_image(&pred, &reference).unwrap();
        assert!((v - (1.0 + 0.5 + 0.0) / 3.0).abs() < 1e-12);
        let pred = mask(1, 3, &[0, 1, 1]);
        let reference = mask(1, 3, &[0, 1, 0]);
        // class 0: 1/2, class 1: 1/2
        assert!((miou_image(&pred, &reference).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hand_counted_four_by_four_scores_three_quarters() {
        // class 0: 11 matched pixels -> 1.0
        // class 1: 3 matched + 1 predicted over a class-2 pixel -> 3/4
        // class 2: 1 matched, 1 stolen by class 1 -> 1/2
        #[rustfmt::skip]
        let pred = mask(4, 4, &[
            0, 0, 0, 0,
            0, 1, 1, 0,
            0, 1, 1, 0,
            0, 2, 0, 0,
        ]);
        #[rustfmt::skip]
        let reference = mask(4, 4, &[
            0, 0, 0, 0,
            0, 1, 1, 0,
            0, 1, 2, 0,
            0, 2, 0, 0,
        ]);
        assert_eq!(iou(&pred, &reference, 0).unwrap(), Some(1.0));
        assert_eq!(iou(&pred, &reference, 1).unwrap(), Some(0.75));
        assert_eq!(iou(&pred, &reference, 2).unwrap(), Some(0.5));
        assert_eq!(miou_image(&pred, &reference).unwrap(), 0.75);
    }

    #[test]
    fn all_ignore_reference_scores_zero() {
        let pred = HardMask::filled(2, 2, 3);
        let reference = HardMask::filled(2, 2, IGNORE);
        assert_eq!(miou_image(&pred, &reference).unwrap(), 0.0);
    }

    #[test]
    fn ignore_in_prediction_is_an_error() {
        let pred = mask(1, 2, &[0, IGNORE]);
        let reference = mask(1, 2, &[0, 1]);
        assert!(miou_image(&pred, &reference).is_err());
        assert!(ConfusionAccumulator::new()
            .accumulate(&pred, &reference)
            .is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = HardMask::filled(2, 2, 0);
        let b = HardMask::filled(2, 3, 0);
        assert!(matches!(iou(&a, &b, 0), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn empty_accumulator_reports_nothing() {
        let r = ConfusionAccumulator::new().report();
        assert!(r.per_class.iter().all(Option::is_none));
        assert_eq!(r.mean, 0.0);
        assert!(r.present_classes.is_empty());
    }

    #[test]
    fn report_divides_counts() {
        let mut acc = ConfusionAccumulator::new();
        acc.intersections[0] = 5;
        acc.unions[0] = 10;
        acc.intersections[1] = 5;
        acc.unions[1] = 5;
        let r = acc.report();
        assert_eq!(r.per_class[0], Some(0.5));
        assert_eq!(r.per_class[1], Some(1.0));
        assert_eq!(r.mean, 0.75);
        assert_eq!(r.present_classes, vec![0, 1]);
    }

    #[test]
    fn all_background_dataset() {
        let m = HardMask::filled(4, 4, 0);
        let acc = accumulate(ConfusionAccumulator::new(), &m, &m).unwrap();
        let r = report(&acc);
        assert_eq!(r.present_classes, vec![0]);
        assert_eq!(r.mean, r.per_class[0].unwrap());
    }

    #[test]
    fn single_pair_report_matches_image_miou() {
        let pred = mask(2, 3, &[0, 1, 2, 2, 1, 0]);
        let reference = mask(2, 3, &[0, 1, 1, 2, 2, 0]);
        let acc = accumulate(ConfusionAccumulator::new(), &pred, &reference).unwrap();
        assert!((acc.report().mean - miou_image(&pred, &reference).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn accumulation_order_is_irrelevant() {
        let pairs = [
            (mask(1, 3, &[0, 1, 2]), mask(1, 3, &[0, 2, 2])),
            (mask(1, 3, &[3, 3, 4]), mask(1, 3, &[3, 4, 4])),
            (mask(1, 3, &[5, 6, 0]), mask(1, 3, &[6, 6, 0])),
        ];
        let mut forward = ConfusionAccumulator::new();
        for (p, r) in &pairs {
            forward.accumulate(p, r).unwrap();
        }
        let mut backward = ConfusionAccumulator::new();
        for (p, r) in pairs.iter().rev() {
            backward.accumulate(p, r).unwrap();
        }
        assert_eq!(forward, backward);
        let mut left = ConfusionAccumulator::new();
        left.accumulate(&pairs[0].0, &pairs[0].1).unwrap();
        let mut right = ConfusionAccumulator::new();
        right.accumulate(&pairs[1].0, &pairs[1].1).unwrap();
        right.accumulate(&pairs[2].0, &pairs[2].1).unwrap();
        left.merge(&right);
        assert_eq!(left, forward);
    }

    #[test]
    fn csv_row_has_eight_cells() {
        let m = mask(1, 2, &[0, 1]);
        let acc = accumulate(ConfusionAccumulator::new(), &m, &m).unwrap();
        let row = acc.report().csv_row();
        assert_eq!(row.split(',').count(), 8);
        assert!(row.starts_with("100.00,100.00,,"));
    }
}
