//! Classification metrics and run statistics: one-vs-rest AUC, F1, AP and
//! MCC, percentile-bootstrap confidence intervals, and Welch's t-test.

mod binary;
mod bootstrap;
mod multiclass;
mod report;
mod stats;

pub use binary::{
    auc, average_precision, f1, mcc, roc_curve, trapezoid_area, Confusion, RocPoint,
    ScoredLabels,
};
pub use bootstrap::{bootstrap_ci, bootstrap_ci_multi, BootstrapConfig, Interval, Resample};
pub use multiclass::{macro_mean, MetricSet, MultiScored};
pub use report::{ClassReport, MetricsReport, RunStats};
pub use stats::{
    incomplete_beta, ln_gamma, mean, pairwise_t_tests, quantile_sorted, std_dev, t_test,
    t_two_sided_p, variance, BoxStats, PairwiseTest, TTest,
};
