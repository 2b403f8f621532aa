use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Foreground counts of two masks and of their intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overlap {
    pub a: usize,
    pub b: usize,
    pub both: usize,
}

pub fn overlap(a: &Array2<u8>, b: &Array2<u8>) -> Result<Overlap> {
    if a.dim() != b.dim() {
        return Err(Error::Input(format!("mask shapes {:?} and {:?} differ", a.dim(), b.dim())));
    }
    let mut counts = Overlap { a: 0, b: 0, both: 0 };
    for (&x, &y) in a.iter().zip(b.iter()) {
        let (x, y) = (x != 0, y != 0);
        counts.a += usize::from(x);
        counts.b += usize::from(y);
        counts.both += usize::from(x && y);
    }
    Ok(counts)
}

impl Overlap {
    pub fn dice(&self) -> f64 {
        if self.a + self.b == 0 {
            1.0
        } else {
            2.0 * self.both as f64 / (self.a + self.b) as f64
        }
    }

    pub fn iou(&self) -> f64 {
        let union = self.a + self.b - self.both;
        if union == 0 {
            1.0
        } else {
            self.both as f64 / union as f64
        }
    }
}

/// `2|a ∩ b| / (|a| + |b|)`; two empty masks score 1.
pub fn dice(a: &Array2<u8>, b: &Array2<u8>) -> Result<f64> {
    Ok(overlap(a, b)?.dice())
}

/// `|a ∩ b| / |a ∪ b|`; two empty masks score 1.
pub fn iou(a: &Array2<u8>, b: &Array2<u8>) -> Result<f64> {
    Ok(overlap(a, b)?.iou())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_pairs(preds: &[bool], gts: &[bool]) -> Result<Self> {
        if preds.len() != gts.len() {
            return Err(Error::Input(format!(
                "{} predictions for {} labels",
                preds.len(),
                gts.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &g) in preds.iter().zip(gts) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Confusion-matrix rates; a ratio with a zero denominator is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

impl DetectionMetrics {
    pub fn from_confusion(c: &Confusion) -> Result<Self> {
        let accuracy = ratio(c.tp + c.tn, c.total())
            .ok_or_else(|| Error::Input("detection metrics need at least one slice".into()))?;
        Ok(Self {
            accuracy,
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
            specificity: ratio(c.tn, c.tn + c.fp),
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        })
    }
}

pub fn detection_metrics(preds: &[bool], gts: &[bool]) -> Result<DetectionMetrics> {
    DetectionMetrics::from_confusion(&Confusion::from_pairs(preds, gts)?)
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties counting one half.
/// `None` when only one class is present.
pub fn auc_roc(scores: &[f64], gts: &[bool]) -> Result<Option<f64>> {
    if scores.len() != gts.len() {
        return Err(Error::Input(format!("{} scores for {} labels", scores.len(), gts.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Input("scores contain NaN".into()));
    }
    let positives = gts.iter().filter(|&&g| g).count();
    let negatives = gts.len() - positives;
    if positives == 0 || negatives == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // Sum of mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end) as f64 / 2.0 + 1.0;
        rank_sum += mid_rank * order[start..=end].iter().filter(|&&i| gts[i]).count() as f64;
        start = end + 1;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(Some(u / (p * negatives as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dice_and_iou_examples() {
        let a = array![[1u8, 1], [1, 1]];
        let b = array![[1u8, 1], [0, 0]];
        assert!((dice(&a, &b).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(iou(&a, &b).unwrap(), 0.5);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let c = array![[0u8, 0], [1, 1]];
        assert_eq!(dice(&b, &c).unwrap(), 0.0);
        let empty = Array2::<u8>::zeros((2, 2));
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
        assert!(matches!(dice(&a, &Array2::zeros((3, 2))), Err(Error::Input(_))));
    }

    #[test]
    fn detection_examples() {
        let m = detection_metrics(&[true, true, false, false], &[true, false, false, true]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!((m.precision, m.recall, m.specificity, m.f1), (Some(0.5), Some(0.5), Some(0.5), Some(0.5)));
        let perfect = detection_metrics(&[true, false], &[true, false]).unwrap();
        assert_eq!(perfect.accuracy, 1.0);
        assert_eq!(perfect.f1, Some(1.0));
        let silent = detection_metrics(&[false, false], &[true, false]).unwrap();
        assert_eq!(silent.precision, None);
        assert_eq!(silent.specificity, Some(1.0));
        assert!(matches!(detection_metrics(&[true], &[]), Err(Error::Input(_))));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&[0.2, 0.8], &[false, true]).unwrap(), Some(1.0));
        assert_eq!(auc_roc(&[0.8, 0.2], &[false, true]).unwrap(), Some(0.0));
        assert_eq!(auc_roc(&[0.5; 4], &[false, true, true, false]).unwrap(), Some(0.5));
        assert_eq!(auc_roc(&[0.1, 0.2], &[true, true]).unwrap(), None);
    }
}
