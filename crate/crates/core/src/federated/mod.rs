//! In-process federated pretraining: sites train local students on private
//! task data, a server averages student parameters in fixed site order and
//! redistributes the global model.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::TaskDataset;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelState};
use crate::training::{cyclic_pretrain_range, init_seed, registry_of, TrainConfig};

#[cfg(test)]
mod tests;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    #[default]
    BySampleCount,
    Uniform,
}

/// How a site's EMA teacher is handled between rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherMode {
    /// The site teacher keeps its EMA state across rounds.
    #[default]
    Persistent,
    /// The site teacher is reset to the received global student each round.
    RestartFromGlobal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub rounds: usize,
    pub local_iterations: usize,
    pub weighting: Weighting,
    pub teacher: TeacherMode,
    /// Local training settings shared by all sites. Its seed is the master seed.
    pub train: TrainConfig,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            local_iterations: 5,
            weighting: Weighting::default(),
            teacher: TeacherMode::default(),
            train: TrainConfig::default(),
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be >= 1".into()));
        }
        if self.local_iterations == 0 {
            return Err(Error::InvalidConfig("local_iterations must be >= 1".into()));
        }
        self.train.validate()
    }
}

/// A site and its private task data. Datasets are reachable only through
/// [`Site::dataset`], which refuses tasks the site does not own.
#[derive(Debug, Clone)]
pub struct Site {
    id: String,
    tasks: Vec<TaskDataset>,
}

impl Site {
    pub fn new(id: impl Into<String>, tasks: Vec<TaskDataset>) -> Result<Self> {
        let id = id.into();
        if tasks.is_empty() {
            return Err(Error::InvalidConfig(format!("site `{id}` owns no tasks")));
        }
        for (i, t) in tasks.iter().enumerate() {
            if tasks[..i].iter().any(|o| o.task_id == t.task_id) {
                return Err(Error::DuplicateTask(t.task_id.clone()));
            }
        }
        Ok(Self { id, tasks })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn task_ids(&self) -> Vec<&str> {
        self.tasks.iter().map(|t| t.task_id.as_str()).collect()
    }

    pub fn owns(&self, task: &str) -> bool {
        self.tasks.iter().any(|t| t.task_id == task)
    }

    /// Training samples held by the site.
    pub fn sample_count(&self) -> usize {
        self.tasks.iter().map(|t| t.train.len()).sum()
    }

    pub fn dataset(&self, task: &str) -> Result<&TaskDataset> {
        self.tasks
            .iter()
            .find(|t| t.task_id == task)
            .ok_or_else(|| Error::DataIsolation {
                site: self.id.clone(),
                task: task.to_string(),
            })
    }

    fn train_local(
        &self,
        global: &ModelState,
        teacher: &mut ModelState,
        config: &TrainConfig,
        iterations: std::ops::Range<usize>,
    ) -> Result<(ModelState, Option<f64>)> {
        let mut student = global.clone();
        let tasks: Vec<&TaskDataset> = self.tasks.iter().collect();
        let log = cyclic_pretrain_range(&mut student, Some(teacher), &tasks, config, iterations)?;
        let accs: Vec<f64> = self
            .tasks
            .iter()
            .filter_map(|t| log.last_for(&t.task_id).and_then(|r| r.val_accuracy))
            .collect();
        let val = (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64);
        Ok((student, val))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRound {
    pub site: String,
    /// Checksum of the site student after local training.
    pub pre_aggregation: String,
    /// Checksum of the site student after adopting the global model.
    pub post_aggregation: String,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub sites: Vec<SiteRound>,
    pub global_checksum: String,
}

pub fn rounds_csv(records: &[RoundRecord]) -> String {
    let mut s = String::from("round,site,pre_checksum,post_checksum,global_checksum,val_accuracy\n");
    for r in records {
        for site in &r.sites {
            let acc = site.val_accuracy.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.round, site.site, site.pre_aggregation, site.post_aggregation, r.global_checksum, acc
            );
        }
    }
    s
}

/// Normalized aggregation weights in site order.
pub fn aggregation_weights(counts: &[usize], weighting: Weighting) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::InvalidConfig("no sites".into()));
    }
    match weighting {
        Weighting::Uniform => Ok(vec![1.0 / counts.len() as f64; counts.len()]),
        Weighting::BySampleCount => {
            let total: usize = counts.iter().sum();
            if total == 0 {
                return Err(Error::InvalidConfig("sites hold no samples".into()));
            }
            Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
        }
    }
}

/// Σ_s w_s·θ_s, summed in the given order starting from w_0·θ_0.
pub fn weighted_mean(values: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    let Some(first) = values.first() else {
        return Err(Error::InvalidConfig("nothing to average".into()));
    };
    if values.len() != weights.len() {
        return Err(Error::shape(
            "weighted_mean",
            format!("{} values, {} weights", values.len(), weights.len()),
        ));
    }
    let mut acc: Vec<f64> = first.iter().map(|v| weights[0] * v).collect();
    for (v, &w) in values.iter().zip(weights).skip(1) {
        if v.len() != acc.len() {
            return Err(Error::shape("weighted_mean", format!("{} vs {}", v.len(), acc.len())));
        }
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += w * x;
        }
    }
    Ok(acc)
}

/// Averages site students into a new global state. Heads and KB rows of tasks
/// owned by exactly one site are taken from that site; tasks owned by no site
/// keep the previous global values.
pub fn aggregate(
    global: &ModelState,
    students: &[ModelState],
    sites: &[Site],
    weights: &[f64],
) -> Result<ModelState> {
    for s in students {
        global.check_compatible(s)?;
    }
    let owners = |task: &str| -> Vec<usize> { (0..sites.len()).filter(|&i| sites[i].owns(task)).collect() };
    let mut out = global.clone();
    let site_params: Vec<Vec<(String, &crate::diffcore::Tensor)>> = students.iter().map(|s| s.params()).collect();
    for (k, (name, target)) in out.params_mut().into_iter().enumerate() {
        if let Some(task) = name.strip_prefix("head.").and_then(|r| r.rsplit_once('.')).map(|(t, _)| t) {
            match owners(task).as_slice() {
                [] => {}
                [only] => target.data_mut().copy_from_slice(site_params[*only][k].1.data()),
                many => {
                    let vals: Vec<&[f64]> = many.iter().map(|&i| site_params[i][k].1.data()).collect();
                    let w = renormalized(weights, many);
                    target.data_mut().copy_from_slice(&weighted_mean(&vals, &w)?);
                }
            }
        } else {
            let vals: Vec<&[f64]> = site_params.iter().map(|p| p[k].1.data()).collect();
            target.data_mut().copy_from_slice(&weighted_mean(&vals, weights)?);
        }
    }
    // KB rows follow task ownership, like heads.
    let width = out.kb.width();
    let ids: Vec<String> = out.kb.task_ids().to_vec();
    let global_kb = global.kb.matrix().data();
    for (row, task) in ids.iter().enumerate() {
        let span = row * width..(row + 1) * width;
        let value: Vec<f64> = match owners(task).as_slice() {
            [] => global_kb[span.clone()].to_vec(),
            [only] => students[*only].kb.matrix().data()[span.clone()].to_vec(),
            many => {
                let vals: Vec<&[f64]> = many
                    .iter()
                    .map(|&i| &students[i].kb.matrix().data()[span.clone()])
                    .collect();
                weighted_mean(&vals, &renormalized(weights, many))?
            }
        };
        out.kb.matrix_mut().data_mut()[span].copy_from_slice(&value);
    }
    Ok(out)
}

fn renormalized(weights: &[f64], subset: &[usize]) -> Vec<f64> {
    let total: f64 = subset.iter().map(|&i| weights[i]).sum();
    subset.iter().map(|&i| weights[i] / total).collect()
}

/// Federation state between rounds: the global student and one teacher per site.
#[derive(Debug, Clone)]
pub struct Federation {
    pub global: ModelState,
    pub teachers: Vec<ModelState>,
    pub rounds_done: usize,
}

impl Federation {
    /// Global registry is the union of site tasks in site order.
    pub fn init(sites: &[Site], model: ModelConfig, config: &FederationConfig) -> Result<Self> {
        config.validate()?;
        if sites.is_empty() {
            return Err(Error::InvalidConfig("federation needs at least one site".into()));
        }
        let mut tasks: Vec<&TaskDataset> = Vec::new();
        for s in sites {
            for t in &s.tasks {
                if !tasks.iter().any(|o| o.task_id == t.task_id) {
                    tasks.push(t);
                }
            }
        }
        let global = ModelState::new(model, &registry_of(&tasks), init_seed(&config.train))?;
        let teachers = sites.iter().map(|_| global.to_teacher()).collect();
        Ok(Self {
            global,
            teachers,
            rounds_done: 0,
        })
    }
}

/// One round: every site trains from the global student, then the server aggregates.
/// A failing site aborts the round before any aggregation.
pub fn fed_round(fed: &mut Federation, sites: &[Site], config: &FederationConfig) -> Result<RoundRecord> {
    if fed.teachers.len() != sites.len() {
        return Err(Error::InvalidConfig(format!(
            "{} teachers for {} sites",
            fed.teachers.len(),
            sites.len()
        )));
    }
    let k = config.local_iterations;
    let range = fed.rounds_done * k..(fed.rounds_done + 1) * k;
    if config.teacher == TeacherMode::RestartFromGlobal {
        for t in fed.teachers.iter_mut() {
            *t = fed.global.to_teacher();
        }
    }
    let global = &fed.global;
    let results: Vec<Result<(ModelState, Option<f64>)>> = sites
        .par_iter()
        .zip(fed.teachers.par_iter_mut())
        .map(|(site, teacher)| {
            site.train_local(global, teacher, &config.train, range.clone())
                .map_err(|e| Error::SiteFailure {
                    site: site.id.clone(),
                    source: Box::new(e),
                })
        })
        .collect();
    let mut students = Vec::with_capacity(sites.len());
    let mut vals = Vec::with_capacity(sites.len());
    for r in results {
        let (s, v) = r?;
        students.push(s);
        vals.push(v);
    }
    let counts: Vec<usize> = sites.iter().map(Site::sample_count).collect();
    let weights = aggregation_weights(&counts, config.weighting)?;
    let new_global = aggregate(&fed.global, &students, sites, &weights)?;
    let global_checksum = new_global.checksum();
    let record = RoundRecord {
        round: fed.rounds_done,
        sites: sites
            .iter()
            .zip(&students)
            .zip(vals)
            .map(|((site, s), v)| SiteRound {
                site: site.id.clone(),
                pre_aggregation: s.checksum(),
                post_aggregation: global_checksum.clone(),
                val_accuracy: v,
            })
            .collect(),
        global_checksum,
    };
    fed.global = new_global;
    fed.rounds_done += 1;
    Ok(record)
}

#[derive(Debug, Clone)]
pub struct FederationRun {
    pub global: ModelState,
    pub records: Vec<RoundRecord>,
}

pub fn run_federation(sites: &[Site], model: ModelConfig, config: &FederationConfig) -> Result<FederationRun> {
    let mut fed = Federation::init(sites, model, config)?;
    let mut records = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        records.push(fed_round(&mut fed, sites, config)?);
    }
    Ok(FederationRun {
        global: fed.global,
        records,
    })
}
