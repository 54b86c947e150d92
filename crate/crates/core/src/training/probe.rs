//! Linear probing on frozen embeddings and the repeated-run protocols built
//! on it.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{draw_k_per_class, features_of, labels_of, subsample_fractions, Sample, TaskDataset};
use crate::diffcore::{sgd_step, SgdConfig, Tape, Tensor};
use crate::error::{Error, Result};
use crate::metrics::{BoxStats, MetricSet, MultiScored, RunStats};
use crate::model::{embed, ModelState};
use crate::rng;

use super::softmax_rows;

pub const DEFAULT_FRACTIONS: [f64; 5] = [0.05, 0.1, 0.25, 0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub sgd: SgdConfig,
    /// Standard deviation of the initial classifier weights.
    pub init_std: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            sgd: SgdConfig {
                learning_rate: 0.5,
                batch_size: 32,
            },
            init_std: 0.01,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("probe epochs must be >= 1".into()));
        }
        if self.init_std.is_nan() || self.init_std < 0.0 {
            return Err(Error::InvalidConfig("probe init_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Softmax classifier over embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearProbe {
    pub fn classes(&self) -> usize {
        self.weight.cols()
    }

    /// Class probabilities, `n × C` row-major.
    pub fn probabilities(&self, embeddings: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.constant(embeddings);
        let w = tape.constant(&self.weight);
        let b = tape.constant(&self.bias);
        let z = tape.affine(x, w, b)?;
        Ok(softmax_rows(tape.value(z)))
    }

    pub fn evaluate(&self, embeddings: &Tensor, labels: &[usize]) -> Result<MultiScored> {
        MultiScored::new(self.probabilities(embeddings)?, labels.to_vec(), self.classes())
    }
}

/// Mini-batch SGD on cross-entropy; the seed drives initialization and
/// shuffling.
pub fn train_probe(
    embeddings: &Tensor,
    labels: &[usize],
    classes: usize,
    config: &ProbeConfig,
    seed: u64,
) -> Result<LinearProbe> {
    config.validate()?;
    let (n, e) = (embeddings.rows(), embeddings.cols());
    if n == 0 || n != labels.len() {
        return Err(Error::shape(
            "linear_probe",
            format!("{n} embeddings for {} labels", labels.len()),
        ));
    }
    let mut g = rng::seeded(seed);
    let mut probe = LinearProbe {
        weight: Tensor::randn(&[e, classes], config.init_std, &mut g).with_grad(true),
        bias: Tensor::zeros(&[classes]).with_grad(true),
    };
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut g);
        for idx in order.chunks(config.sgd.batch_size) {
            let mut data = Vec::with_capacity(idx.len() * e);
            for &i in idx {
                data.extend_from_slice(embeddings.row(i));
            }
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let x = tape.constant(&Tensor::matrix(idx.len(), e, data)?);
            let w = tape.param(&probe.weight);
            let b = tape.param(&probe.bias);
            let z = tape.affine(x, w, b)?;
            let loss = tape.cross_entropy(z, &y)?;
            tape.backward(loss)?;
            probe.weight.set_grad(tape.grad(w).expect("param").to_vec())?;
            probe.bias.set_grad(tape.grad(b).expect("param").to_vec())?;
            sgd_step(
                &mut [("probe.weight", &mut probe.weight), ("probe.bias", &mut probe.bias)],
                &config.sgd,
            )?;
        }
    }
    Ok(probe)
}

#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub probe: LinearProbe,
    pub test_scores: MultiScored,
}

impl ProbeResult {
    pub fn accuracy(&self) -> f64 {
        self.test_scores.accuracy()
    }
}

/// Trains a probe on `embed(state, train)` and scores `test`. The state is
/// only read.
pub fn linear_probe(
    state: &ModelState,
    train: &[Sample],
    test: &[Sample],
    classes: usize,
    config: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::InsufficientSamples("probe needs train and test samples".into()));
    }
    let probe = train_probe(
        &embed(state, &features_of(train))?,
        &labels_of(train),
        classes,
        config,
        seed,
    )?;
    let test_scores = probe.evaluate(&embed(state, &features_of(test))?, &labels_of(test))?;
    Ok(ProbeResult { probe, test_scores })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotResult {
    pub k: usize,
    /// Macro one-vs-rest test AUC per run, in run order.
    pub aucs: Vec<f64>,
    /// All macro test metrics per run, in run order.
    pub metrics: Vec<MetricSet>,
    pub summary: BoxStats,
}

/// `runs` independent k-shot probes, each on a fresh seeded draw of `k`
/// training samples per class, all scored on the full test split. Runs fan
/// out across threads and are collected in run order.
pub fn few_shot_protocol(
    state: &ModelState,
    ds: &TaskDataset,
    k: usize,
    runs: usize,
    seed: u64,
    config: &ProbeConfig,
) -> Result<FewShotResult> {
    if runs == 0 {
        return Err(Error::InvalidConfig("runs must be >= 1".into()));
    }
    if ds.test.is_empty() {
        return Err(Error::EmptyDataset(ds.task_id.clone()));
    }
    let test_emb = embed(state, &features_of(&ds.test))?;
    let test_labels = labels_of(&ds.test);
    let metrics = (0..runs)
        .into_par_iter()
        .map(|r| {
            let path = [k as u64, r as u64];
            let shots = draw_k_per_class(&ds.train, ds.classes(), k, rng::derive(seed, &path))?;
            let probe = train_probe(
                &embed(state, &features_of(&shots))?,
                &labels_of(&shots),
                ds.classes(),
                config,
                rng::derive(seed, &[k as u64, r as u64, 1]),
            )?;
            probe.evaluate(&test_emb, &test_labels)?.macro_metrics()
        })
        .collect::<Result<Vec<MetricSet>>>()?;
    let aucs: Vec<f64> = metrics.iter().map(|m| m.auc).collect();
    let summary = BoxStats::from_values(&aucs)?;
    Ok(FewShotResult {
        k,
        aucs,
        metrics,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedRow {
    pub fraction: f64,
    pub repeat: usize,
    pub train_size: usize,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedData {
    pub rows: Vec<ReducedRow>,
    /// Mean and standard deviation of the macro metrics per fraction.
    pub summary: Vec<(f64, RunStats)>,
}

/// For each repeat, draws nested stratified subsets of the training split at
/// every fraction and probes each; macro metrics on the test split.
pub fn reduced_data_protocol(
    state: &ModelState,
    ds: &TaskDataset,
    fractions: &[f64],
    repeats: usize,
    seed: u64,
    config: &ProbeConfig,
) -> Result<ReducedData> {
    if repeats == 0 || fractions.is_empty() {
        return Err(Error::InvalidConfig("need at least one fraction and one repeat".into()));
    }
    let test_emb = embed(state, &features_of(&ds.test))?;
    let test_labels = labels_of(&ds.test);
    let per_repeat = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let subsets = subsample_fractions(&ds.train, ds.classes(), fractions, rng::derive(seed, &[r as u64]))?;
            subsets
                .iter()
                .zip(fractions)
                .enumerate()
                .map(|(fi, (sub, &fraction))| {
                    let probe = train_probe(
                        &embed(state, &features_of(sub))?,
                        &labels_of(sub),
                        ds.classes(),
                        config,
                        rng::derive(seed, &[r as u64, fi as u64, 1]),
                    )?;
                    Ok(ReducedRow {
                        fraction,
                        repeat: r,
                        train_size: sub.len(),
                        metrics: probe.evaluate(&test_emb, &test_labels)?.macro_metrics()?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(fractions.len() * repeats);
    for (fi, _) in fractions.iter().enumerate() {
        for r in &per_repeat {
            rows.push(r[fi].clone());
        }
    }
    let summary = fractions
        .iter()
        .enumerate()
        .map(|(fi, &f)| {
            let runs: Vec<MetricSet> = per_repeat.iter().map(|r| r[fi].metrics).collect();
            (f, RunStats::from_runs(&runs))
        })
        .collect();
    Ok(ReducedData { rows, summary })
}
