use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binary::ScoredLabels;
use super::multiclass::MultiScored;
use super::stats::quantile_sorted;
use crate::error::{Error, Result};
use crate::rng;

/// Redraw budget for a single resample that keeps missing a class.
const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn point(v: f64) -> Self {
        Self { lower: v, upper: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Data that can be resampled by index.
pub trait Resample {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn take(&self, idx: &[usize]) -> Self;
}

impl Resample for ScoredLabels {
    fn len(&self) -> usize {
        self.scores.len()
    }

    fn take(&self, idx: &[usize]) -> Self {
        ScoredLabels {
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

impl Resample for MultiScored {
    fn len(&self) -> usize {
        MultiScored::len(self)
    }

    fn take(&self, idx: &[usize]) -> Self {
        self.subset(idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 2000,
            level: 0.95,
            seed: 0,
        }
    }
}

/// Percentile bootstrap for a vector-valued metric.
///
/// Resample `r` draws from its own derived stream, so the result does not
/// depend on thread scheduling. A resample on which the metric reports a
/// missing class is redrawn up to a fixed budget. Each interval is widened,
/// if needed, to contain the point estimate on the full data.
pub fn bootstrap_ci_multi<D, F>(metric: F, data: &D, cfg: &BootstrapConfig) -> Result<Vec<Interval>>
where
    D: Resample + Sync,
    F: Fn(&D) -> Result<Vec<f64>> + Sync,
{
    let n = data.len();
    if n < 10 {
        return Err(Error::InsufficientSamples(format!(
            "bootstrap needs n >= 10, got {n}"
        )));
    }
    if cfg.resamples == 0 || !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "bootstrap resamples {} level {}",
            cfg.resamples, cfg.level
        )));
    }
    let point = metric(data)?;
    let draws: Vec<Vec<f64>> = (0..cfg.resamples)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(cfg.seed, &[r as u64]);
            for _ in 0..MAX_REDRAWS {
                let idx: Vec<usize> = (0..n).map(|_| g.random_range(0..n)).collect();
                match metric(&data.take(&idx)) {
                    Ok(v) => return Ok(v),
                    Err(Error::SingleClass) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::InsufficientSamples(format!(
                "bootstrap resample {r} kept missing a class after {MAX_REDRAWS} redraws"
            )))
        })
        .collect::<Result<_>>()?;

    let alpha = (1.0 - cfg.level) / 2.0;
    Ok((0..point.len())
        .map(|k| {
            let mut col: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            col.sort_by(f64::total_cmp);
            let lo = quantile_sorted(&col, alpha);
            let hi = quantile_sorted(&col, 1.0 - alpha);
            Interval {
                lower: lo.min(point[k]),
                upper: hi.max(point[k]),
            }
        })
        .collect())
}

pub fn bootstrap_ci<D, F>(metric: F, data: &D, cfg: &BootstrapConfig) -> Result<Interval>
where
    D: Resample + Sync,
    F: Fn(&D) -> Result<f64> + Sync,
{
    let v = bootstrap_ci_multi(|d| Ok(vec![metric(d)?]), data, cfg)?;
    Ok(v[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc;

    fn separated(n: usize) -> ScoredLabels {
        let scores = (0..n).map(|i| i as f64).collect();
        let labels = (0..n).map(|i| i >= n / 2).collect();
        ScoredLabels::new(scores, labels).unwrap()
    }

    #[test]
    fn perfect_separation_zero_width() {
        let cfg = BootstrapConfig {
            resamples: 200,
            level: 0.95,
            seed: 3,
        };
        let ci = bootstrap_ci(auc, &separated(100), &cfg).unwrap();
        assert_eq!(ci, Interval::point(1.0));
    }

    #[test]
    fn deterministic_and_contains_point() {
        let sl = ScoredLabels::new(
            (0..40).map(|i| ((i * 37) % 17) as f64).collect(),
            (0..40).map(|i| i % 3 == 0).collect(),
        )
        .unwrap();
        let cfg = BootstrapConfig {
            resamples: 300,
            level: 0.95,
            seed: 11,
        };
        let a = bootstrap_ci(auc, &sl, &cfg).unwrap();
        let b = bootstrap_ci(auc, &sl, &cfg).unwrap();
        assert_eq!(a.lower.to_bits(), b.lower.to_bits());
        assert_eq!(a.upper.to_bits(), b.upper.to_bits());
        assert!(a.contains(auc(&sl).unwrap()));
    }

    #[test]
    fn small_n_rejected() {
        let r = bootstrap_ci(auc, &separated(8), &BootstrapConfig::default());
        assert!(matches!(r, Err(Error::InsufficientSamples(_))));
    }

    #[test]
    fn rare_class_resamples_are_redrawn() {
        let mut labels = vec![false; 12];
        labels[0] = true;
        let sl = ScoredLabels::new((0..12).map(f64::from).collect(), labels).unwrap();
        let cfg = BootstrapConfig {
            resamples: 50,
            level: 0.95,
            seed: 1,
        };
        assert!(bootstrap_ci(auc, &sl, &cfg).is_ok());
    }
}
