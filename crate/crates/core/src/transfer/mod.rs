//! Zero-shot transfer: predictions for an unseen domain aggregated from every
//! existing task head, weighted per sample by the relevance weights ω.
//!
//! Which head outputs correspond to which target category is declared in an
//! explicit [`CategoryMap`]; nothing is inferred. Heads with no mapped output
//! take no part in normalization.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::{features_of, Sample, TaskDataset};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::knowledge::RelevanceWeights;
use crate::metrics::{roc_curve, BootstrapConfig, MetricsReport, MultiScored, RocPoint};
use crate::model::{forward_all_heads, ModelState};
use crate::rng;
use crate::training::softmax_rows;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadOutput {
    pub task: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetCategory {
    /// Display name of the category.
    pub name: String,
    /// Global concept the category stands for, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<usize>,
    pub entries: Vec<HeadOutput>,
}

/// Target categories in target-label order, each with the head outputs that
/// predict it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryMap {
    #[serde(rename = "category")]
    pub categories: Vec<TargetCategory>,
}

impl CategoryMap {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidCategoryMap(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("category map serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidCategoryMap(msg) => Error::Parse {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }

    /// Maps each target concept to every pretraining head output carrying the
    /// same global concept.
    pub fn from_concepts(target_concepts: &[usize], tasks: &[&TaskDataset]) -> Self {
        let categories = target_concepts
            .iter()
            .map(|&c| TargetCategory {
                name: format!("concept-{c}"),
                concept: Some(c),
                entries: tasks
                    .iter()
                    .filter_map(|t| {
                        t.local_label_of(c).map(|label| HeadOutput {
                            task: t.task_id.clone(),
                            label,
                        })
                    })
                    .collect(),
            })
            .collect();
        Self { categories }
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// Checks every entry against the model's task registry and head widths.
    pub fn validate(&self, state: &ModelState) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::ZeroShotUnmappable("category map is empty".into()));
        }
        for (k, cat) in self.categories.iter().enumerate() {
            if cat.entries.is_empty() {
                return Err(Error::ZeroShotUnmappable(format!(
                    "category {k} (`{}`) has no mapped head output",
                    cat.name
                )));
            }
            for e in &cat.entries {
                let i = state.kb.index_of(&e.task).ok_or_else(|| {
                    Error::InvalidCategoryMap(format!(
                        "category `{}` references unregistered task `{}`",
                        cat.name, e.task
                    ))
                })?;
                let classes = state.heads[i].classes();
                if e.label >= classes {
                    return Err(Error::InvalidCategoryMap(format!(
                        "category `{}` references label {} of task `{}`, which has {classes} classes",
                        cat.name, e.label, e.task
                    )));
                }
            }
        }
        Ok(())
    }

    /// Resolved `(category, head index, label)` triples.
    fn resolve(&self, state: &ModelState) -> Result<Vec<(usize, usize, usize)>> {
        self.validate(state)?;
        let mut out = Vec::new();
        for (k, cat) in self.categories.iter().enumerate() {
            for e in &cat.entries {
                out.push((k, state.kb.index_of(&e.task).expect("validated"), e.label));
            }
        }
        Ok(out)
    }

    /// Target label for each sample, looked up by global concept.
    pub fn target_labels(&self, samples: &[Sample]) -> Result<Vec<usize>> {
        let by_concept: BTreeMap<usize, usize> = self
            .categories
            .iter()
            .enumerate()
            .filter_map(|(k, c)| c.concept.map(|cc| (cc, k)))
            .collect();
        samples
            .iter()
            .map(|s| {
                by_concept.get(&s.concept).copied().ok_or_else(|| {
                    Error::ZeroShotUnmappable(format!("concept {} has no target category", s.concept))
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub head: usize,
    pub omega: f64,
    /// `ω_i · Σ_ℓ p_i[ℓ]` over the head's mapped outputs, before
    /// normalization.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotPrediction {
    pub probs: Vec<f64>,
    pub attribution: Vec<Attribution>,
}

/// Aggregates one sample. `head_probs[i]` is head `i`'s softmax output.
pub fn aggregate_heads(
    omegas: &[f64],
    head_probs: &[&[f64]],
    resolved: &[(usize, usize, usize)],
    categories: usize,
) -> ZeroShotPrediction {
    let mut scores = vec![0.0; categories];
    let mut contrib = vec![0.0; omegas.len()];
    let mut mapped = vec![false; omegas.len()];
    for &(k, i, l) in resolved {
        let v = omegas[i] * head_probs[i][l];
        scores[k] += v;
        contrib[i] += v;
        mapped[i] = true;
    }
    let total: f64 = scores.iter().sum();
    let probs = if total > 0.0 {
        scores.iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / categories as f64; categories]
    };
    let attribution = (0..omegas.len())
        .filter(|&i| mapped[i])
        .map(|i| Attribution {
            head: i,
            omega: omegas[i],
            contribution: contrib[i],
        })
        .collect();
    ZeroShotPrediction { probs, attribution }
}

/// Per-sample zero-shot predictions. ω is recomputed from the cosine
/// similarities at temperature `tau`.
pub fn zero_shot_predict(
    state: &ModelState,
    features: &Tensor,
    map: &CategoryMap,
    tau: f64,
) -> Result<Vec<ZeroShotPrediction>> {
    let resolved = map.resolve(state)?;
    let all = forward_all_heads(state, features)?;
    let probs: Vec<Vec<f64>> = all.logits.iter().map(softmax_rows).collect();
    let widths: Vec<usize> = all.logits.iter().map(|l| l.cols()).collect();
    (0..all.sims.rows())
        .map(|n| {
            let w = RelevanceWeights::from_sims(all.sims.row(n).to_vec(), tau)?;
            let rows: Vec<&[f64]> = probs
                .iter()
                .zip(&widths)
                .map(|(p, &c)| &p[n * c..(n + 1) * c])
                .collect();
            Ok(aggregate_heads(&w.omegas, &rows, &resolved, map.len()))
        })
        .collect()
}

/// Predictions using head `head` alone (ω one-hot), under the same map.
/// Categories the head does not cover score zero before normalization.
pub fn single_head_predict(
    state: &ModelState,
    features: &Tensor,
    map: &CategoryMap,
    head: usize,
) -> Result<Vec<ZeroShotPrediction>> {
    let resolved = map.resolve(state)?;
    let all = forward_all_heads(state, features)?;
    let t = all.logits.len();
    if head >= t {
        return Err(Error::InvalidConfig(format!("head {head} out of range for {t} heads")));
    }
    let probs = softmax_rows(&all.logits[head]);
    let c = all.logits[head].cols();
    let mut omegas = vec![0.0; t];
    omegas[head] = 1.0;
    let empty: Vec<f64> = Vec::new();
    (0..all.sims.rows())
        .map(|n| {
            let rows: Vec<&[f64]> = (0..t)
                .map(|i| if i == head { &probs[n * c..(n + 1) * c] } else { &empty[..] })
                .collect();
            let only: Vec<_> = resolved.iter().copied().filter(|r| r.1 == head).collect();
            Ok(aggregate_heads(&omegas, &rows, &only, map.len()))
        })
        .collect()
}

fn to_scored(preds: &[ZeroShotPrediction], labels: Vec<usize>, classes: usize) -> Result<MultiScored> {
    let scores = preds.iter().flat_map(|p| p.probs.iter().copied()).collect();
    MultiScored::new(scores, labels, classes)
}

#[derive(Debug, Clone)]
pub struct ZeroShotReport {
    pub scores: MultiScored,
    pub report: MetricsReport,
    /// One ROC curve per target category.
    pub roc: Vec<Vec<RocPoint>>,
}

impl ZeroShotReport {
    /// `category,fpr,tpr,threshold` records.
    pub fn roc_csv(&self, map: &CategoryMap) -> String {
        let mut out = String::from("category,fpr,tpr,threshold\n");
        for (cat, pts) in map.categories.iter().zip(&self.roc) {
            for p in pts {
                out.push_str(&format!("{},{},{},{}\n", cat.name, p.fpr, p.tpr, p.threshold));
            }
        }
        out
    }
}

fn category_ids(map: &CategoryMap) -> Vec<usize> {
    map.categories
        .iter()
        .enumerate()
        .map(|(k, c)| c.concept.unwrap_or(k))
        .collect()
}

fn report_for(scores: MultiScored, map: &CategoryMap, cfg: &BootstrapConfig) -> Result<ZeroShotReport> {
    let report = MetricsReport::evaluate(&scores, &category_ids(map), cfg)?;
    let roc = (0..scores.classes())
        .map(|k| roc_curve(&scores.one_vs_rest(k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ZeroShotReport { scores, report, roc })
}

/// Zero-shot evaluation on `samples`, labelled through the map's concepts.
pub fn zero_shot_evaluate(
    state: &ModelState,
    samples: &[Sample],
    map: &CategoryMap,
    cfg: &BootstrapConfig,
) -> Result<ZeroShotReport> {
    let labels = map.target_labels(samples)?;
    let preds = zero_shot_predict(state, &features_of(samples), map, state.config.tau)?;
    report_for(to_scored(&preds, labels, map.len())?, map, cfg)
}

/// Macro AUC of every head used alone, for heads with at least one mapped
/// output; `(head index, macro AUC)` in head order.
pub fn single_head_baselines(
    state: &ModelState,
    samples: &[Sample],
    map: &CategoryMap,
) -> Result<Vec<(usize, f64)>> {
    let labels = map.target_labels(samples)?;
    let resolved = map.resolve(state)?;
    let features = features_of(samples);
    let mut out = Vec::new();
    for head in 0..state.heads.len() {
        if !resolved.iter().any(|r| r.1 == head) {
            continue;
        }
        let preds = single_head_predict(state, &features, map, head)?;
        let auc = to_scored(&preds, labels.clone(), map.len())?.macro_auc()?;
        out.push((head, auc));
    }
    Ok(out)
}

/// The same scores against a seeded permutation of the labels.
pub fn shuffled_label_control(
    scores: &MultiScored,
    map: &CategoryMap,
    seed: u64,
    cfg: &BootstrapConfig,
) -> Result<ZeroShotReport> {
    let mut labels = scores.labels().to_vec();
    labels.shuffle(&mut rng::seeded(seed));
    report_for(scores.with_labels(labels)?, map, cfg)
}
