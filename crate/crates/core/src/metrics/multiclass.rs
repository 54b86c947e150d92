use serde::{Deserialize, Serialize};

use super::binary::{auc, average_precision, Confusion, ScoredLabels};
use crate::error::{Error, Result};

/// Per-class score matrix (`n × classes`, row-major) with class-index labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScored {
    scores: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub auc: f64,
    pub f1: f64,
    pub ap: f64,
    pub mcc: f64,
}

impl MetricSet {
    pub const NAMES: [&'static str; 4] = ["auc", "f1", "ap", "mcc"];

    pub fn to_array(self) -> [f64; 4] {
        [self.auc, self.f1, self.ap, self.mcc]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            auc: v[0],
            f1: v[1],
            ap: v[2],
            mcc: v[3],
        }
    }
}

impl MultiScored {
    pub fn new(scores: Vec<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if classes == 0 || scores.len() != labels.len() * classes {
            return Err(Error::shape(
                "multi_scored",
                format!(
                    "{} scores for {} labels x {} classes",
                    scores.len(),
                    labels.len(),
                    classes
                ),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        Ok(Self {
            scores,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.classes..(i + 1) * self.classes]
    }

    /// Argmax prediction per sample; ties go to the lowest class index.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.len())
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn accuracy(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let hits = self
            .predictions()
            .iter()
            .zip(&self.labels)
            .filter(|(p, l)| p == l)
            .count();
        hits as f64 / self.len() as f64
    }

    pub fn one_vs_rest(&self, class: usize) -> ScoredLabels {
        ScoredLabels {
            scores: (0..self.len()).map(|i| self.row(i)[class]).collect(),
            labels: self.labels.iter().map(|&l| l == class).collect(),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut scores = Vec::with_capacity(idx.len() * self.classes);
        for &i in idx {
            scores.extend_from_slice(self.row(i));
        }
        Self {
            scores,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Shuffles labels (scores untouched) with the given permutation.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(self.scores.clone(), labels, self.classes)
    }

    /// One-vs-rest metrics per class. F1 and MCC use argmax predictions.
    pub fn per_class(&self) -> Result<Vec<MetricSet>> {
        let pred = self.predictions();
        (0..self.classes)
            .map(|c| {
                let sl = self.one_vs_rest(c);
                let hard: Vec<bool> = pred.iter().map(|&p| p == c).collect();
                let conf = Confusion::from_predictions(&hard, &sl.labels)?;
                Ok(MetricSet {
                    auc: auc(&sl)?,
                    f1: conf.f1(),
                    ap: average_precision(&sl)?,
                    mcc: conf.mcc(),
                })
            })
            .collect()
    }

    pub fn macro_metrics(&self) -> Result<MetricSet> {
        Ok(macro_mean(&self.per_class()?))
    }

    pub fn macro_auc(&self) -> Result<f64> {
        let mut s = 0.0;
        for c in 0..self.classes {
            s += auc(&self.one_vs_rest(c))?;
        }
        Ok(s / self.classes as f64)
    }
}

pub fn macro_mean(per_class: &[MetricSet]) -> MetricSet {
    let n = per_class.len() as f64;
    let mut acc = [0.0; 4];
    for m in per_class {
        for (a, v) in acc.iter_mut().zip(m.to_array()) {
            *a += v;
        }
    }
    MetricSet::from_slice(&acc.map(|v| v / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_three_class() {
        let ms = MultiScored::new(
            vec![
                0.8, 0.1, 0.1, //
                0.1, 0.8, 0.1, //
                0.1, 0.1, 0.8, //
                0.7, 0.2, 0.1,
            ],
            vec![0, 1, 2, 0],
            3,
        )
        .unwrap();
        let m = ms.macro_metrics().unwrap();
        assert_eq!(m, MetricSet { auc: 1.0, f1: 1.0, ap: 1.0, mcc: 1.0 });
        assert_eq!(ms.accuracy(), 1.0);
    }

    #[test]
    fn missing_class_is_single_class_error() {
        let ms = MultiScored::new(vec![0.5, 0.5, 0.4, 0.6], vec![0, 0], 2).unwrap();
        assert!(matches!(ms.macro_auc(), Err(Error::SingleClass)));
    }

    #[test]
    fn rejects_bad_label() {
        assert!(MultiScored::new(vec![0.5, 0.5], vec![3], 2).is_err());
    }
}
