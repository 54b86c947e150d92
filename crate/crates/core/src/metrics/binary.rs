use crate::error::{Error, Result};

/// Binary scores with ground truth (`true` = positive).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLabels {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::shape(
                "scored_labels",
                format!("{} scores vs {} labels", scores.len(), labels.len()),
            ));
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    fn require_both(&self) -> Result<(usize, usize)> {
        let p = self.positives();
        let n = self.len() - p;
        if p == 0 || n == 0 {
            return Err(Error::SingleClass);
        }
        Ok((p, n))
    }

    /// Indices sorted by descending score (stable on ties).
    fn order_desc(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }

    /// Cumulative (tp, fp, threshold) at each distinct score, descending.
    fn steps(&self) -> Vec<(usize, usize, f64)> {
        let order = self.order_desc();
        let mut out = Vec::new();
        let (mut tp, mut fp) = (0, 0);
        let mut k = 0;
        while k < order.len() {
            let s = self.scores[order[k]];
            while k < order.len() && self.scores[order[k]] == s {
                if self.labels[order[k]] {
                    tp += 1;
                } else {
                    fp += 1;
                }
                k += 1;
            }
            out.push((tp, fp, s));
        }
        out
    }
}

/// Mann-Whitney AUC: (concordant + ½·tied) / (n_pos · n_neg).
pub fn auc(sl: &ScoredLabels) -> Result<f64> {
    let (np, nn) = sl.require_both()?;
    // Walk tie groups from the lowest score up; each positive is concordant
    // with every negative strictly below it and tied with negatives in its group.
    let mut concordant: u64 = 0;
    let mut tied: u64 = 0;
    let mut neg_below: u64 = 0;
    let steps = sl.steps();
    let mut prev = (0usize, 0usize);
    let mut groups: Vec<(u64, u64)> = steps
        .iter()
        .map(|&(tp, fp, _)| {
            let g = ((tp - prev.0) as u64, (fp - prev.1) as u64);
            prev = (tp, fp);
            g
        })
        .collect();
    groups.reverse();
    for (p, q) in groups {
        concordant += p * neg_below;
        tied += p * q;
        neg_below += q;
    }
    let denom = 2 * np as u64 * nn as u64;
    Ok((2 * concordant + tied) as f64 / denom as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC points from `(0, 0)` at threshold `+inf` through every distinct score.
pub fn roc_curve(sl: &ScoredLabels) -> Result<Vec<RocPoint>> {
    let (np, nn) = sl.require_both()?;
    let mut pts = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    for (tp, fp, s) in sl.steps() {
        pts.push(RocPoint {
            fpr: fp as f64 / nn as f64,
            tpr: tp as f64 / np as f64,
            threshold: s,
        });
    }
    Ok(pts)
}

pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Step-wise sum of precision over recall increments at each distinct threshold.
pub fn average_precision(sl: &ScoredLabels) -> Result<f64> {
    let np = sl.positives();
    if np == 0 {
        return Err(Error::SingleClass);
    }
    let mut ap = 0.0;
    let mut prev_tp = 0usize;
    for (tp, fp, _) in sl.steps() {
        if tp > prev_tp {
            let recall_inc = (tp - prev_tp) as f64 / np as f64;
            let precision = tp as f64 / (tp + fp) as f64;
            ap += recall_inc * precision;
            prev_tp = tp;
        }
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn from_predictions(pred: &[bool], labels: &[bool]) -> Result<Self> {
        if pred.len() != labels.len() {
            return Err(Error::shape(
                "confusion",
                format!("{} predictions vs {} labels", pred.len(), labels.len()),
            ));
        }
        let mut c = Confusion::default();
        for (&p, &l) in pred.iter().zip(labels) {
            match (p, l) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    /// `2TP / (2TP + FP + FN)`; 0 when the denominator vanishes.
    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / d as f64
        }
    }

    /// Matthews correlation; 0 when any marginal is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, tn, fp, fn_) = (
            self.tp as f64,
            self.tn as f64,
            self.fp as f64,
            self.fn_ as f64,
        );
        let d = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if d == 0.0 {
            return 0.0;
        }
        (tp * tn - fp * fn_) / d.sqrt()
    }
}

pub fn f1(pred: &[bool], labels: &[bool]) -> Result<f64> {
    Ok(Confusion::from_predictions(pred, labels)?.f1())
}

pub fn mcc(pred: &[bool], labels: &[bool]) -> Result<f64> {
    Ok(Confusion::from_predictions(pred, labels)?.mcc())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four() -> ScoredLabels {
        ScoredLabels::new(vec![0.9, 0.4, 0.6, 0.1], vec![true, true, false, false]).unwrap()
    }

    #[test]
    fn auc_examples() {
        let sep = ScoredLabels::new(vec![0.9, 0.8, 0.2, 0.1], vec![true, true, false, false])
            .unwrap();
        assert_eq!(auc(&sep).unwrap(), 1.0);
        let flat = ScoredLabels::new(vec![0.5; 4], vec![true, false, true, false]).unwrap();
        assert_eq!(auc(&flat).unwrap(), 0.5);
        assert_eq!(auc(&four()).unwrap(), 0.75);
    }

    #[test]
    fn single_class_errors() {
        let one = ScoredLabels::new(vec![0.1, 0.2], vec![true, true]).unwrap();
        assert!(matches!(auc(&one), Err(Error::SingleClass)));
        assert!(roc_curve(&one).is_err());
        assert_eq!(Error::SingleClass.to_string(), "AUC undefined for single class");
    }

    #[test]
    fn roc_examples() {
        let sep = ScoredLabels::new(vec![0.9, 0.8, 0.2, 0.1], vec![true, true, false, false])
            .unwrap();
        let pts = roc_curve(&sep).unwrap();
        assert!(pts.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        let flat = ScoredLabels::new(vec![0.5; 4], vec![true, false, true, false]).unwrap();
        let pts = roc_curve(&flat).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!((pts[1].fpr, pts[1].tpr), (1.0, 1.0));
        let pts = roc_curve(&four()).unwrap();
        assert_eq!(trapezoid_area(&pts), 0.75);
        let last = pts.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn ap_and_confusion_examples() {
        assert!((average_precision(&four()).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        let labels = [true, false, true, false];
        assert_eq!(f1(&labels, &labels).unwrap(), 1.0);
        assert_eq!(mcc(&labels, &labels).unwrap(), 1.0);
        let perfect = ScoredLabels::new(vec![1.0, 0.0, 1.0, 0.0], labels.to_vec()).unwrap();
        assert_eq!(average_precision(&perfect).unwrap(), 1.0);
        let sym = Confusion {
            tp: 1,
            tn: 1,
            fp: 1,
            fn_: 1,
        };
        assert_eq!(sym.mcc(), 0.0);
        let degenerate = Confusion {
            tp: 0,
            tn: 3,
            fp: 0,
            fn_: 1,
        };
        assert_eq!(degenerate.mcc(), 0.0);
    }
}
