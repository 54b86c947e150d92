use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_ci_multi, BootstrapConfig, Interval};
use super::multiclass::{macro_mean, MetricSet, MultiScored};
use super::stats::{mean, std_dev};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    /// Caller-facing id of the class (e.g. a global concept id).
    pub class: usize,
    pub metrics: MetricSet,
    pub auc_ci: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub n: usize,
    pub mean: MetricSet,
    pub std: MetricSet,
}

impl RunStats {
    pub fn from_runs(runs: &[MetricSet]) -> Self {
        let col = |k: usize| -> Vec<f64> { runs.iter().map(|r| r.to_array()[k]).collect() };
        let means: Vec<f64> = (0..4).map(|k| mean(&col(k))).collect();
        let stds: Vec<f64> = (0..4).map(|k| std_dev(&col(k))).collect();
        Self {
            n: runs.len(),
            mean: MetricSet::from_slice(&means),
            std: MetricSet::from_slice(&stds),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub per_class: Vec<ClassReport>,
    pub macro_avg: MetricSet,
    /// Bootstrap intervals for the macro metrics, in `MetricSet::NAMES` order.
    pub macro_ci: [Interval; 4],
    pub runs: Option<RunStats>,
}

fn metric_vector(ms: &MultiScored) -> Result<Vec<f64>> {
    let per = ms.per_class()?;
    let mut v = macro_mean(&per).to_array().to_vec();
    v.extend(per.iter().map(|m| m.auc));
    Ok(v)
}

impl MetricsReport {
    /// Per-class one-vs-rest metrics, macro means and percentile-bootstrap CIs.
    pub fn evaluate(ms: &MultiScored, class_ids: &[usize], cfg: &BootstrapConfig) -> Result<Self> {
        if class_ids.len() != ms.classes() {
            return Err(Error::shape(
                "metrics_report",
                format!("{} class ids for {} classes", class_ids.len(), ms.classes()),
            ));
        }
        let per = ms.per_class()?;
        let ci = bootstrap_ci_multi(metric_vector, ms, cfg)?;
        Ok(Self {
            n_samples: ms.len(),
            per_class: per
                .iter()
                .zip(class_ids)
                .enumerate()
                .map(|(k, (m, &class))| ClassReport {
                    class,
                    metrics: *m,
                    auc_ci: ci[4 + k],
                })
                .collect(),
            macro_avg: macro_mean(&per),
            macro_ci: [ci[0], ci[1], ci[2], ci[3]],
            runs: None,
        })
    }

    pub fn with_runs(mut self, runs: &[MetricSet]) -> Self {
        self.runs = Some(RunStats::from_runs(runs));
        self
    }

    pub fn check_ranges(&self) -> bool {
        let ok = |m: &MetricSet| {
            (0.0..=1.0).contains(&m.auc)
                && (0.0..=1.0).contains(&m.f1)
                && (0.0..=1.0).contains(&m.ap)
                && (-1.0..=1.0).contains(&m.mcc)
        };
        ok(&self.macro_avg)
            && self.per_class.iter().all(|c| ok(&c.metrics) && c.auc_ci.contains(c.metrics.auc))
            && self
                .macro_ci
                .iter()
                .zip(self.macro_avg.to_array())
                .all(|(ci, v)| ci.contains(v))
    }

    /// Long-format records: `scope,class,metric,value,ci_lower,ci_upper`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scope,class,metric,value,ci_lower,ci_upper\n");
        for c in &self.per_class {
            for (name, v) in MetricSet::NAMES.iter().zip(c.metrics.to_array()) {
                if *name == "auc" {
                    let _ = writeln!(
                        s,
                        "class,{},{},{},{},{}",
                        c.class, name, v, c.auc_ci.lower, c.auc_ci.upper
                    );
                } else {
                    let _ = writeln!(s, "class,{},{},{},,", c.class, name, v);
                }
            }
        }
        for ((name, v), ci) in MetricSet::NAMES
            .iter()
            .zip(self.macro_avg.to_array())
            .zip(&self.macro_ci)
        {
            let _ = writeln!(s, "macro,,{},{},{},{}", name, v, ci.lower, ci.upper);
        }
        if let Some(r) = &self.runs {
            for (name, v) in MetricSet::NAMES.iter().zip(r.mean.to_array()) {
                let _ = writeln!(s, "run_mean,{},{},{},,", r.n, name, v);
            }
            for (name, v) in MetricSet::NAMES.iter().zip(r.std.to_array()) {
                let _ = writeln!(s, "run_std,{},{},{},,", r.n, name, v);
            }
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>19} {:>8} {:>8} {:>8}",
            "class", "AUC", "AUC 95% CI", "F1", "AP", "MCC"
        );
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<10} {:>8.4} {:>19} {:>8.4} {:>8.4} {:>8.4}",
                c.class,
                c.metrics.auc,
                format!("[{:.4}, {:.4}]", c.auc_ci.lower, c.auc_ci.upper),
                c.metrics.f1,
                c.metrics.ap,
                c.metrics.mcc
            );
        }
        let m = &self.macro_avg;
        let _ = writeln!(
            s,
            "{:<10} {:>8.4} {:>19} {:>8.4} {:>8.4} {:>8.4}",
            "macro",
            m.auc,
            format!("[{:.4}, {:.4}]", self.macro_ci[0].lower, self.macro_ci[0].upper),
            m.f1,
            m.ap,
            m.mcc
        );
        if let Some(r) = &self.runs {
            let _ = writeln!(
                s,
                "runs n={}: AUC {:.4}±{:.4}  F1 {:.4}±{:.4}  AP {:.4}±{:.4}  MCC {:.4}±{:.4}",
                r.n,
                r.mean.auc,
                r.std.auc,
                r.mean.f1,
                r.std.f1,
                r.mean.ap,
                r.std.ap,
                r.mean.mcc,
                r.std.mcc
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy(n: usize) -> MultiScored {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 3;
            labels.push(y);
            for c in 0..3 {
                let base = if c == y { 0.6 } else { 0.2 };
                scores.push(base + ((i * 7 + c * 13) % 10) as f64 * 0.05);
            }
        }
        MultiScored::new(scores, labels, 3).unwrap()
    }

    #[test]
    fn report_invariants_and_csv_shape() {
        let cfg = BootstrapConfig {
            resamples: 200,
            level: 0.95,
            seed: 5,
        };
        let r = MetricsReport::evaluate(&noisy(60), &[10, 11, 12], &cfg).unwrap();
        assert!(r.check_ranges());
        let runs = [r.macro_avg, r.macro_avg];
        let r = r.with_runs(&runs);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 12 + 4 + 8);
        assert!(csv.contains("class,10,auc,"));
        assert!(r.to_table().contains("macro"));
    }
}
