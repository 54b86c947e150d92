use serde::{Deserialize, Serialize};

use super::io::{dataset_to_csv, sha256_hex};
use super::registry::ConceptRegistry;
use super::task::{generate_task, ClassPriors, DomainTransform, SplitCounts, SyntheticTaskSpec, TaskDataset};
use crate::error::{Error, Result};
use crate::rng;

pub const MANIFEST_FORMAT: &str = "ratnet-benchmark/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZeroShotConfig {
    /// Explicit target concepts; by default `classes` concepts spread evenly
    /// over those covered by at least two pretraining tasks.
    pub concepts: Option<Vec<usize>>,
    pub classes: usize,
    pub counts: SplitCounts,
}

impl Default for ZeroShotConfig {
    fn default() -> Self {
        Self {
            concepts: None,
            classes: 4,
            counts: SplitCounts {
                train: 0,
                val: 0,
                test: 400,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FewShotConfig {
    pub classes: usize,
    pub counts: SplitCounts,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            counts: SplitCounts {
                train: 60,
                val: 0,
                test: 300,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LongTailConfig {
    pub classes: usize,
    pub ratio: f64,
    pub counts: SplitCounts,
}

impl Default for LongTailConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            ratio: 0.8,
            counts: SplitCounts {
                train: 2000,
                val: 200,
                test: 600,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IncrementalConfig {
    pub classes: usize,
    pub counts: SplitCounts,
}

impl Default for IncrementalConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            counts: SplitCounts {
                train: 500,
                val: 100,
                test: 200,
            },
        }
    }
}

/// Layout of the synthetic benchmark. Pretraining task `t` (0-based) owns
/// concepts `stride·t .. stride·t + classes_per_task`, so neighbouring tasks
/// share `classes_per_task − stride` concepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub dim: usize,
    pub prototype_scale: f64,
    pub concept_margin: f64,
    pub pretrain_tasks: usize,
    pub classes_per_task: usize,
    pub concept_stride: usize,
    /// Strength of each task's domain transform (0 = identity).
    pub shift: f64,
    /// Additive Gaussian noise σ on features.
    pub noise: f64,
    pub pretrain_counts: SplitCounts,
    pub zero_shot: ZeroShotConfig,
    pub few_shot: FewShotConfig,
    pub long_tail: LongTailConfig,
    pub incremental: IncrementalConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            dim: 16,
            prototype_scale: 1.0,
            concept_margin: 3.0,
            pretrain_tasks: 5,
            classes_per_task: 4,
            concept_stride: 2,
            shift: 0.25,
            noise: 0.5,
            pretrain_counts: SplitCounts {
                train: 500,
                val: 100,
                test: 200,
            },
            zero_shot: ZeroShotConfig::default(),
            few_shot: FewShotConfig::default(),
            long_tail: LongTailConfig::default(),
            incremental: IncrementalConfig::default(),
        }
    }
}

impl BenchmarkConfig {
    /// The three-task variant used for the pretraining efficacy checks.
    pub fn three_task() -> Self {
        Self {
            pretrain_tasks: 3,
            ..Self::default()
        }
    }

    pub fn shared_concepts(&self) -> usize {
        self.concept_stride * self.pretrain_tasks.saturating_sub(1) + self.classes_per_task
    }

    pub fn registry_size(&self) -> usize {
        (self.shared_concepts() + self.few_shot.classes).max(self.long_tail.classes)
    }

    pub fn pretrain_concepts(&self, t: usize) -> Vec<usize> {
        (0..self.classes_per_task)
            .map(|j| self.concept_stride * t + j)
            .collect()
    }

    fn coverage(&self, concept: usize) -> usize {
        (0..self.pretrain_tasks)
            .filter(|&t| self.pretrain_concepts(t).contains(&concept))
            .count()
    }

    pub fn zero_shot_concepts(&self) -> Result<Vec<usize>> {
        match &self.zero_shot.concepts {
            Some(c) => {
                if c.iter().all(|&k| self.coverage(k) == 0) {
                    return Err(Error::ZeroShotUnmappable(
                        "no zero-shot concept appears in any pretraining task".into(),
                    ));
                }
                Ok(c.clone())
            }
            None => {
                let overlap: Vec<usize> = (0..self.shared_concepts())
                    .filter(|&k| self.coverage(k) >= 2)
                    .collect();
                let n = self.zero_shot.classes.min(overlap.len());
                let shared: Vec<usize> = (0..n).map(|j| overlap[j * overlap.len() / n]).collect();
                if shared.is_empty() {
                    return Err(Error::ZeroShotUnmappable(
                        "no concept is shared by two pretraining tasks".into(),
                    ));
                }
                Ok(shared)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pretrain_tasks < 2 {
            return Err(Error::InvalidConfig("benchmark needs >= 2 pretraining tasks".into()));
        }
        if self.classes_per_task < 2 || self.concept_stride == 0 {
            return Err(Error::InvalidConfig(
                "classes_per_task must be >= 2 and concept_stride >= 1".into(),
            ));
        }
        let zs = self.zero_shot_concepts()?;
        let covering: Vec<usize> = (0..self.pretrain_tasks)
            .filter(|&t| self.pretrain_concepts(t).iter().any(|c| zs.contains(c)))
            .collect();
        if covering.len() < 2 {
            return Err(Error::ZeroShotUnmappable(
                "fewer than two pretraining tasks share a concept with the zero-shot domain".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskRole {
    Pretrain,
    ZeroShot,
    FewShot,
    LongTail,
    Incremental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestTask {
    pub id: String,
    pub role: TaskRole,
    pub file: String,
    pub concepts: Vec<usize>,
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub master_seed: u64,
    pub dim: usize,
    pub registry_size: usize,
    pub config: BenchmarkConfig,
    pub tasks: Vec<ManifestTask>,
}

impl Manifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("manifest: {e}")))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::InvalidConfig(format!(
                "unsupported manifest format `{}`",
                m.format
            )));
        }
        Ok(m)
    }

    pub fn task(&self, id: &str) -> Option<&ManifestTask> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn with_role(&self, role: TaskRole) -> impl Iterator<Item = &ManifestTask> {
        self.tasks.iter().filter(move |t| t.role == role)
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub config: BenchmarkConfig,
    pub registry: ConceptRegistry,
    pub pretrain: Vec<TaskDataset>,
    pub zero_shot: TaskDataset,
    pub few_shot: TaskDataset,
    pub long_tail: TaskDataset,
    pub incremental: TaskDataset,
    pub manifest: Manifest,
}

impl Benchmark {
    pub fn tasks(&self) -> impl Iterator<Item = (&TaskDataset, TaskRole)> {
        self.pretrain
            .iter()
            .map(|t| (t, TaskRole::Pretrain))
            .chain([
                (&self.zero_shot, TaskRole::ZeroShot),
                (&self.few_shot, TaskRole::FewShot),
                (&self.long_tail, TaskRole::LongTail),
                (&self.incremental, TaskRole::Incremental),
            ])
    }

    pub fn task(&self, id: &str) -> Option<&TaskDataset> {
        self.tasks().map(|(t, _)| t).find(|t| t.task_id == id)
    }
}

/// Builds the full synthetic benchmark deterministically from `config.seed`.
pub fn make_benchmark(config: &BenchmarkConfig) -> Result<Benchmark> {
    config.validate()?;
    let seed = config.seed;
    let registry = ConceptRegistry::generate(
        config.registry_size(),
        config.dim,
        config.prototype_scale,
        config.concept_margin,
        rng::derive(seed, &[1]),
    )?;

    let mut manifest_tasks = Vec::new();
    let mut build = |index: u64,
                     id: String,
                     role: TaskRole,
                     concepts: Vec<usize>,
                     priors: ClassPriors,
                     counts: SplitCounts|
     -> Result<TaskDataset> {
        let transform = DomainTransform::random(
            config.dim,
            config.shift,
            config.noise,
            rng::derive(seed, &[2, index]),
        );
        let spec = SyntheticTaskSpec {
            task_id: id.clone(),
            concepts: concepts.clone(),
            transform,
            priors,
            counts,
        };
        let task_seed = rng::derive(seed, &[3, index]);
        let ds = generate_task(&registry, &spec, task_seed)?;
        manifest_tasks.push(ManifestTask {
            file: format!("{id}.csv"),
            id,
            role,
            concepts,
            seed: task_seed,
            train: counts.train,
            val: counts.val,
            test: counts.test,
            checksum: sha256_hex(dataset_to_csv(&ds).as_bytes()),
        });
        Ok(ds)
    };

    let mut pretrain = Vec::with_capacity(config.pretrain_tasks);
    for t in 0..config.pretrain_tasks {
        pretrain.push(build(
            t as u64,
            format!("T{}", t + 1),
            TaskRole::Pretrain,
            config.pretrain_concepts(t),
            ClassPriors::Uniform,
            config.pretrain_counts,
        )?);
    }
    let base = config.pretrain_tasks as u64;
    let zero_shot = build(
        base,
        "ZS".into(),
        TaskRole::ZeroShot,
        config.zero_shot_concepts()?,
        ClassPriors::Uniform,
        config.zero_shot.counts,
    )?;
    let shared = config.shared_concepts();
    let few_shot = build(
        base + 1,
        "FS".into(),
        TaskRole::FewShot,
        (shared..shared + config.few_shot.classes).collect(),
        ClassPriors::Uniform,
        config.few_shot.counts,
    )?;
    let long_tail = build(
        base + 2,
        "LT".into(),
        TaskRole::LongTail,
        (0..config.long_tail.classes).collect(),
        ClassPriors::Geometric {
            ratio: config.long_tail.ratio,
        },
        config.long_tail.counts,
    )?;
    let inc_classes = config.incremental.classes.min(shared);
    let incremental = build(
        base + 3,
        "INC".into(),
        TaskRole::Incremental,
        (0..inc_classes).map(|j| j * shared / inc_classes).collect(),
        ClassPriors::Uniform,
        config.incremental.counts,
    )?;

    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        master_seed: seed,
        dim: config.dim,
        registry_size: registry.len(),
        config: config.clone(),
        tasks: manifest_tasks,
    };
    Ok(Benchmark {
        config: config.clone(),
        registry,
        pretrain,
        zero_shot,
        few_shot,
        long_tail,
        incremental,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout() {
        let b = make_benchmark(&BenchmarkConfig::default()).unwrap();
        assert_eq!(b.manifest.with_role(TaskRole::Pretrain).count(), 5);
        assert_eq!(b.manifest.with_role(TaskRole::ZeroShot).count(), 1);
        for c in &b.zero_shot.concepts {
            let covering = b.pretrain.iter().filter(|t| t.concepts.contains(c)).count();
            assert!(covering >= 2, "concept {c} covered by {covering}");
        }
        for c in &b.few_shot.concepts {
            assert!(b.pretrain.iter().all(|t| !t.concepts.contains(c)));
        }
        assert_eq!(b.pretrain[0].train.len(), 500);
    }

    #[test]
    fn deterministic() {
        let a = make_benchmark(&BenchmarkConfig::three_task()).unwrap();
        let b = make_benchmark(&BenchmarkConfig::three_task()).unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.pretrain, b.pretrain);
    }

    #[test]
    fn unmappable_zero_shot() {
        let mut cfg = BenchmarkConfig::three_task();
        cfg.zero_shot.concepts = Some(vec![cfg.registry_size() - 1]);
        let err = make_benchmark(&cfg).unwrap_err();
        assert!(err.to_string().contains("zero-shot target unmappable"));
    }

    #[test]
    fn manifest_round_trips() {
        let b = make_benchmark(&BenchmarkConfig::three_task()).unwrap();
        let text = b.manifest.to_toml();
        assert_eq!(Manifest::from_toml(&text).unwrap(), b.manifest);
    }
}
