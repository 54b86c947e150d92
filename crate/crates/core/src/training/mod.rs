//! Cyclic multi-task pretraining with a teacher-student pair, fine-tuning,
//! incremental task addition and the probe-based evaluation protocols.
//!
//! One pretraining iteration visits every task in registration order: the
//! student runs one epoch of SGD on that task's composite loss, then the
//! teacher is EMA-updated.

mod probe;

use std::ops::Range;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::{features_of, labels_of, Sample, TaskDataset};
use crate::diffcore::{sgd_step, SgdConfig, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::knowledge::graph as rat;
use crate::metrics::MultiScored;
use crate::model::{
    consistency_graph, ema_update, forward_all_heads, forward_graph, BoundModel, GraphForward,
    ModelConfig, ModelState, TaskForward,
};
use crate::rng;

pub use probe::{
    few_shot_protocol, linear_probe, reduced_data_protocol, train_probe, FewShotResult,
    LinearProbe, ProbeConfig, ProbeResult, ReducedData, ReducedRow, DEFAULT_FRACTIONS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub ce: f64,
    pub ts: f64,
    pub orth: f64,
    pub cons: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ce: 1.0,
            ts: 0.5,
            orth: 0.1,
            cons: 0.5,
        }
    }
}

impl LossWeights {
    pub fn ce_only() -> Self {
        Self {
            ce: 1.0,
            ts: 0.0,
            orth: 0.0,
            cons: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.ce, self.ts, self.orth, self.cons];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be finite and nonnegative, got {all:?}"
            )));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidConfig("at least one loss weight must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmaFrequency {
    PerTaskEpoch,
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Pretraining iterations; each visits every task once.
    pub epochs: usize,
    pub sgd: SgdConfig,
    pub loss: LossWeights,
    pub ema_momentum: f64,
    pub ema_frequency: EmaFrequency,
    pub seed: u64,
    /// When false the consistency term is switched on only after the
    /// teacher has seen every task once.
    pub consistency_from_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            sgd: SgdConfig {
                learning_rate: 0.05,
                batch_size: 32,
            },
            loss: LossWeights::default(),
            ema_momentum: 0.9,
            ema_frequency: EmaFrequency::PerTaskEpoch,
            seed: 0,
            consistency_from_start: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        self.loss.validate()?;
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return Err(Error::InvalidConfig(format!(
                "ema_momentum must lie in [0, 1], got {}",
                self.ema_momentum
            )));
        }
        Ok(())
    }
}

/// Loss terms, unweighted, plus their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub ce: f64,
    pub ts: f64,
    pub orth: f64,
    pub cons: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub ce: Var,
    pub ts: Var,
    pub orth: Var,
    pub cons: Option<Var>,
    pub total: Var,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossParts {
        LossParts {
            ce: tape.item(self.ce),
            ts: tape.item(self.ts),
            orth: tape.item(self.orth),
            cons: self.cons.map_or(0.0, |v| tape.item(v)),
            total: tape.item(self.total),
        }
    }
}

/// `λ_ce·CE + λ_ts·L_ts + λ_orth·L_orth + λ_cons·L_cons` on the tape. The
/// consistency term is present only when a teacher projection is supplied.
pub fn composite_graph(
    tape: &mut Tape,
    kb: Var,
    fwd: &GraphForward,
    labels: &[usize],
    task: usize,
    teacher_projected: Option<&Tensor>,
    w: &LossWeights,
) -> Result<LossVars> {
    let logits = fwd
        .logits
        .ok_or_else(|| Error::InvalidConfig("composite loss needs head logits".into()))?;
    let ce = tape.cross_entropy(logits, labels)?;
    let ts = rat::task_similarity_loss(tape, fwd.k_a, kb, task)?;
    let orth = rat::orthogonality_loss(tape, kb)?;
    let cons = match teacher_projected {
        Some(t) => {
            let tv = tape.constant(t);
            Some(consistency_graph(tape, fwd.projected, tv)?)
        }
        None => None,
    };
    let mut total = tape.scale(ce, w.ce);
    for (v, wt) in [(Some(ts), w.ts), (Some(orth), w.orth), (cons, w.cons)] {
        if let Some(v) = v {
            let s = tape.scale(v, wt);
            total = tape.add(total, s)?;
        }
    }
    Ok(LossVars {
        ce,
        ts,
        orth,
        cons,
        total,
    })
}

/// Composite loss from already computed forward passes.
pub fn composite_loss(
    tf: &TaskForward,
    labels: &[usize],
    state: &ModelState,
    task_id: &str,
    teacher_tf: Option<&TaskForward>,
    w: &LossWeights,
) -> Result<LossParts> {
    let task = state.task_index(task_id)?;
    let mut tape = Tape::new();
    let kb = tape.constant(state.kb.matrix());
    let c = |tape: &mut Tape, t: &Tensor| tape.constant(t);
    let fwd = GraphForward {
        v_e: c(&mut tape, &tf.v_e),
        k_p: c(&mut tape, &tf.k_p),
        sims: c(&mut tape, &tf.sims),
        omegas: c(&mut tape, &tf.omegas),
        k_a: c(&mut tape, &tf.k_a),
        fused: c(&mut tape, &tf.fused),
        projected: c(&mut tape, &tf.projected),
        logits: Some(c(&mut tape, &tf.logits)),
    };
    let l = composite_graph(
        &mut tape,
        kb,
        &fwd,
        labels,
        task,
        teacher_tf.map(|t| &t.projected),
        w,
    )?;
    Ok(l.values(&tape))
}

/// One `(iteration, task)` entry of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iteration: usize,
    pub task: String,
    /// Sample-weighted epoch means of the loss terms.
    pub loss: LossParts,
    pub val_accuracy: Option<f64>,
    /// Mean relevance weight on the task's own KB row over validation data.
    pub own_weight: Option<f64>,
    pub gram_offdiag: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<RunRecord>,
    /// Wall time per record; kept apart from the reproducible CSV.
    pub wall_seconds: Vec<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunLog {
    pub const HEADER: &'static str =
        "iteration,task,ce,ts,orth,cons,total,val_accuracy,own_weight,gram_offdiag";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.records {
            let l = &r.loss;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.iteration,
                r.task,
                l.ce,
                l.ts,
                l.orth,
                l.cons,
                l.total,
                opt(r.val_accuracy),
                opt(r.own_weight),
                r.gram_offdiag
            ));
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("iteration,task,wall_seconds\n");
        for (r, s) in self.records.iter().zip(&self.wall_seconds) {
            out.push_str(&format!("{},{},{s:.6}\n", r.iteration, r.task));
        }
        out
    }

    pub fn extend(&mut self, other: RunLog) {
        self.records.extend(other.records);
        self.wall_seconds.extend(other.wall_seconds);
    }

    /// Latest record for `task`.
    pub fn last_for(&self, task: &str) -> Option<&RunRecord> {
        self.records.iter().rev().find(|r| r.task == task)
    }
}

pub(crate) fn softmax_rows(logits: &Tensor) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.numel());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|z| (z - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

/// Class probabilities from `task_id`'s head.
pub fn predict_scores(state: &ModelState, samples: &[Sample], task_id: &str) -> Result<MultiScored> {
    let task = state.task_index(task_id)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset(task_id.to_string()));
    }
    let all = forward_all_heads(state, &features_of(samples))?;
    let probs = softmax_rows(&all.logits[task]);
    MultiScored::new(probs, labels_of(samples), state.heads[task].classes())
}

pub fn accuracy(state: &ModelState, samples: &[Sample], task_id: &str) -> Result<f64> {
    Ok(predict_scores(state, samples, task_id)?.accuracy())
}

/// Mean relevance weight placed on `task_id`'s own KB row.
pub fn mean_own_weight(state: &ModelState, samples: &[Sample], task_id: &str) -> Result<f64> {
    let task = state.task_index(task_id)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset(task_id.to_string()));
    }
    let omegas = forward_all_heads(state, &features_of(samples))?.omegas;
    let n = omegas.rows();
    Ok((0..n).map(|i| omegas.get(i, task)).sum::<f64>() / n as f64)
}

fn batch_tensor(samples: &[Sample], idx: &[usize]) -> (Tensor, Vec<usize>) {
    let dim = samples[idx[0]].features.len();
    let mut data = Vec::with_capacity(idx.len() * dim);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        data.extend_from_slice(&samples[i].features);
        labels.push(samples[i].local_label);
    }
    (Tensor::matrix(idx.len(), dim, data).expect("rectangular batch"), labels)
}

fn teacher_projection(teacher: &ModelState, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let m = BoundModel::bind(teacher, &mut tape, false);
    let xv = tape.constant(x);
    let f = forward_graph(&mut tape, &m, xv, None)?;
    Ok(tape.value(f.projected).clone())
}

/// One epoch of student SGD on a single task. Returns sample-weighted mean
/// loss parts.
fn train_task_epoch(
    student: &mut ModelState,
    mut teacher: Option<&mut ModelState>,
    ds: &TaskDataset,
    iteration: usize,
    config: &TrainConfig,
    use_consistency: bool,
) -> Result<LossParts> {
    let task = student.task_index(&ds.task_id)?;
    if ds.train.is_empty() {
        return Err(Error::EmptyDataset(ds.task_id.clone()));
    }
    let mut order: Vec<usize> = (0..ds.train.len()).collect();
    order.shuffle(&mut rng::stream(
        config.seed,
        &[iteration as u64, rng::label_id(&ds.task_id)],
    ));
    let mut sum = LossParts::default();
    for (b, idx) in order.chunks(config.sgd.batch_size).enumerate() {
        let (x, labels) = batch_tensor(&ds.train, idx);
        let tproj = match teacher.as_deref() {
            Some(t) if use_consistency && config.loss.cons > 0.0 => Some(teacher_projection(t, &x)?),
            _ => None,
        };
        let mut tape = Tape::new();
        let m = BoundModel::bind(student, &mut tape, true);
        let xv = tape.constant(&x);
        let fwd = forward_graph(&mut tape, &m, xv, Some(task))?;
        let loss = composite_graph(&mut tape, m.kb, &fwd, &labels, task, tproj.as_ref(), &config.loss)?;
        let parts = loss.values(&tape);
        if !parts.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                task: ds.task_id.clone(),
                batch: b,
            });
        }
        tape.backward(loss.total)?;
        m.store_grads(&tape, student)?;
        let mut params = student.params_mut();
        let mut refs: Vec<(&str, &mut Tensor)> =
            params.iter_mut().map(|(n, t)| (n.as_str(), &mut **t)).collect();
        sgd_step(&mut refs, &config.sgd)?;
        if !student.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                task: ds.task_id.clone(),
                batch: b,
            });
        }
        if config.ema_frequency == EmaFrequency::PerStep {
            if let Some(t) = teacher.as_deref_mut() {
                ema_update(t, student, config.ema_momentum)?;
            }
        }
        let n = idx.len() as f64;
        sum.ce += n * parts.ce;
        sum.ts += n * parts.ts;
        sum.orth += n * parts.orth;
        sum.cons += n * parts.cons;
        sum.total += n * parts.total;
    }
    let n = ds.train.len() as f64;
    Ok(LossParts {
        ce: sum.ce / n,
        ts: sum.ts / n,
        orth: sum.orth / n,
        cons: sum.cons / n,
        total: sum.total / n,
    })
}

/// Runs the pretraining iterations in `iterations`. Shuffle seeds depend on
/// the absolute iteration index and the task id, so a run split into
/// consecutive ranges reproduces the unsplit run exactly.
pub fn cyclic_pretrain_range(
    student: &mut ModelState,
    mut teacher: Option<&mut ModelState>,
    tasks: &[&TaskDataset],
    config: &TrainConfig,
    iterations: Range<usize>,
) -> Result<RunLog> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(Error::InvalidConfig("pretraining needs at least one task".into()));
    }
    for ds in tasks {
        student.task_index(&ds.task_id)?;
        if ds.train.is_empty() {
            return Err(Error::EmptyDataset(ds.task_id.clone()));
        }
    }
    if let Some(t) = teacher.as_deref() {
        t.check_compatible(student)?;
    }
    let mut log = RunLog::default();
    for it in iterations {
        let use_consistency = config.consistency_from_start || it > 0;
        for ds in tasks {
            let start = Instant::now();
            let loss = train_task_epoch(
                student,
                teacher.as_deref_mut(),
                ds,
                it,
                config,
                use_consistency,
            )?;
            if config.ema_frequency == EmaFrequency::PerTaskEpoch {
                if let Some(t) = teacher.as_deref_mut() {
                    ema_update(t, student, config.ema_momentum)?;
                }
            }
            let (val_accuracy, own_weight) = if ds.val.is_empty() {
                (None, None)
            } else {
                (
                    Some(accuracy(student, &ds.val, &ds.task_id)?),
                    Some(mean_own_weight(student, &ds.val, &ds.task_id)?),
                )
            };
            log.records.push(RunRecord {
                iteration: it,
                task: ds.task_id.clone(),
                loss,
                val_accuracy,
                own_weight,
                gram_offdiag: student.kb.gram_offdiag_mean(),
            });
            log.wall_seconds.push(start.elapsed().as_secs_f64());
        }
    }
    Ok(log)
}

pub fn cyclic_pretrain(
    student: &mut ModelState,
    teacher: Option<&mut ModelState>,
    tasks: &[&TaskDataset],
    config: &TrainConfig,
) -> Result<RunLog> {
    if config.epochs == 0 {
        return Err(Error::InvalidConfig("epochs must be >= 1".into()));
    }
    cyclic_pretrain_range(student, teacher, tasks, config, 0..config.epochs)
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub student: ModelState,
    pub teacher: ModelState,
    pub log: RunLog,
}

/// Seed for model initialization derived from the training seed.
pub fn init_seed(config: &TrainConfig) -> u64 {
    rng::derive(config.seed, &[0x1417])
}

/// Task registry `(id, classes)` in the given order.
pub fn registry_of(tasks: &[&TaskDataset]) -> Vec<(String, usize)> {
    tasks.iter().map(|t| (t.task_id.clone(), t.classes())).collect()
}

/// Builds a seeded student, copies it into the teacher and pretrains both.
pub fn pretrain(tasks: &[&TaskDataset], model: ModelConfig, config: &TrainConfig) -> Result<Pretrained> {
    let mut student = ModelState::new(model, &registry_of(tasks), init_seed(config))?;
    let mut teacher = student.to_teacher();
    let log = cyclic_pretrain(&mut student, Some(&mut teacher), tasks, config)?;
    Ok(Pretrained {
        student,
        teacher,
        log,
    })
}

#[derive(Debug, Clone)]
pub struct FineTuned {
    pub state: ModelState,
    pub log: RunLog,
}

/// Adds a head and KB row for `target` and trains the whole model on it for
/// `config.epochs` epochs (zero leaves everything else untouched).
pub fn fine_tune(state: &ModelState, target: &TaskDataset, config: &TrainConfig) -> Result<FineTuned> {
    config.validate()?;
    check_every_class_present(target)?;
    let mut s = state.clone();
    s.role = crate::model::Role::Student;
    s.add_task(&target.task_id, target.classes(), rng::derive(config.seed, &[0xF7]))?;
    let log = if config.epochs == 0 {
        RunLog::default()
    } else {
        cyclic_pretrain_range(&mut s, None, &[target], config, 0..config.epochs)?
    };
    Ok(FineTuned { state: s, log })
}

fn check_every_class_present(ds: &TaskDataset) -> Result<()> {
    let mut seen = vec![false; ds.classes()];
    for s in &ds.train {
        seen[s.local_label] = true;
    }
    if let Some(c) = seen.iter().position(|&p| !p) {
        return Err(Error::InsufficientSamples(format!(
            "task `{}` has no training sample for class {c}",
            ds.task_id
        )));
    }
    Ok(())
}

/// Registers `new` on both models, then continues cyclic pretraining over the
/// old tasks followed by the new one.
pub fn incremental_pretrain(
    student: &mut ModelState,
    teacher: &mut ModelState,
    old: &[&TaskDataset],
    new: &TaskDataset,
    config: &TrainConfig,
) -> Result<RunLog> {
    config.validate()?;
    check_every_class_present(new)?;
    student.add_task(&new.task_id, new.classes(), rng::derive(config.seed, &[0x1C]))?;
    teacher.copy_task_from(student, &new.task_id)?;
    let mut all: Vec<&TaskDataset> = old.to_vec();
    all.push(new);
    cyclic_pretrain(student, Some(teacher), &all, config)
}
