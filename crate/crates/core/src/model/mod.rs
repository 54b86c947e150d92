//! Encoder, RAT module, projector and per-task heads assembled into a student
//! or teacher instance.
//!
//! The fused prior-posterior vector feeds both the task heads and the
//! projector; there is no residual connection back to the encoding.

mod checkpoint;
mod forward;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::knowledge::{
    FusionBlock, KnowledgeBase, PosteriorGenerator, PosteriorTemplate, TwoLayerMlp, DEFAULT_TAU,
};
use crate::rng;

pub use checkpoint::{checkpoint_load, checkpoint_save, from_bytes, to_bytes, CHECKPOINT_VERSION};
pub use forward::{
    consistency_graph, consistency_loss, embed, forward, forward_all_heads, forward_graph, AllHeads,
    BoundModel, GraphForward, TaskForward,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub embedding_dim: usize,
    pub depth: usize,
    pub hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            embedding_dim: 16,
            depth: 2,
            hidden: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Width `E` of knowledge rows, `k_p`, `k_a` and the fused vector.
    pub knowledge_dim: usize,
    /// Hidden width of the generator and fusion MLPs.
    pub mlp_hidden: usize,
    pub projector_dim: usize,
    pub tau: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            knowledge_dim: 16,
            mlp_hidden: 32,
            projector_dim: 16,
            tau: DEFAULT_TAU,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        for (name, v) in [
            ("encoder.input_dim", e.input_dim),
            ("encoder.embedding_dim", e.embedding_dim),
            ("encoder.depth", e.depth),
            ("encoder.hidden", e.hidden),
            ("knowledge_dim", self.knowledge_dim),
            ("mlp_hidden", self.mlp_hidden),
            ("projector_dim", self.projector_dim),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(Error::InvalidConfig(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

/// `x W + b`, weight `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn init(input: usize, output: usize, seed: u64) -> Self {
        let mut g = rng::seeded(seed);
        Self {
            weight: Tensor::randn(&[input, output], (input as f64).recip().sqrt(), &mut g),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.weight.cols()
    }
}

/// Stack of linear layers with tanh between them; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub layers: Vec<Linear>,
}

impl Encoder {
    pub fn init(config: &EncoderConfig, seed: u64) -> Self {
        let mut widths = vec![config.input_dim];
        widths.extend(std::iter::repeat_n(config.hidden, config.depth - 1));
        widths.push(config.embedding_dim);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::init(w[0], w[1], rng::derive(seed, &[i as u64])))
            .collect();
        Self { layers }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub task_id: String,
    pub linear: Linear,
}

impl TaskHead {
    pub fn classes(&self) -> usize {
        self.linear.output_width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Student,
    Teacher,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Student => "student",
            Role::Teacher => "teacher",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub template: PosteriorTemplate,
    pub generator: PosteriorGenerator,
    pub fusion: FusionBlock,
    pub kb: KnowledgeBase,
    /// `[E, P]`, no bias.
    pub projector: Tensor,
    /// One head per KB row, in KB order.
    pub heads: Vec<TaskHead>,
    pub role: Role,
}

impl ModelState {
    /// Seeded student for the given `(task_id, classes)` registry.
    pub fn new(config: ModelConfig, tasks: &[(String, usize)], seed: u64) -> Result<Self> {
        config.validate()?;
        let e = config.knowledge_dim;
        let h = config.mlp_hidden;
        let ids: Vec<String> = tasks.iter().map(|t| t.0.clone()).collect();
        let kb = KnowledgeBase::init(ids, e, rng::derive(seed, &[5]))?;
        let mut g = rng::stream(seed, &[6]);
        let projector = Tensor::randn(&[e, config.projector_dim], (e as f64).recip().sqrt(), &mut g);
        let mut state = Self {
            config,
            encoder: Encoder::init(&config.encoder, rng::derive(seed, &[1])),
            template: PosteriorTemplate::init(e, rng::derive(seed, &[2])),
            generator: PosteriorGenerator(TwoLayerMlp::init(
                config.encoder.embedding_dim + e,
                h,
                e,
                rng::derive(seed, &[3]),
            )),
            fusion: FusionBlock(TwoLayerMlp::init(2 * e, h, e, rng::derive(seed, &[4]))),
            kb,
            projector,
            heads: Vec::new(),
            role: Role::Student,
        };
        for (id, classes) in tasks {
            state.heads.push(state.new_head(id, *classes, seed)?);
        }
        state.mark_trainable();
        Ok(state)
    }

    fn new_head(&self, task_id: &str, classes: usize, seed: u64) -> Result<TaskHead> {
        if classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "task `{task_id}` needs at least 2 classes, got {classes}"
            )));
        }
        Ok(TaskHead {
            task_id: task_id.to_string(),
            linear: Linear::init(
                self.config.knowledge_dim,
                classes,
                rng::derive(seed, &[7, rng::label_id(task_id)]),
            ),
        })
    }

    fn mark_trainable(&mut self) {
        for (_, t) in self.params_mut() {
            t.set_requires_grad(true);
        }
    }

    /// Registers a new task: a KB row orthogonal to the existing ones and a
    /// fresh head. Existing parameters are untouched.
    pub fn add_task(&mut self, task_id: &str, classes: usize, seed: u64) -> Result<()> {
        let head = self.new_head(task_id, classes, seed)?;
        self.kb.append_task(task_id, rng::derive(seed, &[5]))?;
        self.heads.push(head);
        self.mark_trainable();
        Ok(())
    }

    /// Registers `task_id` with the KB row and head `other` holds for it, so
    /// a teacher can mirror a task just added to its student.
    pub fn copy_task_from(&mut self, other: &ModelState, task_id: &str) -> Result<()> {
        let i = other.task_index(task_id)?;
        if self.kb.index_of(task_id).is_some() {
            return Err(Error::DuplicateTask(task_id.to_string()));
        }
        let mut rows = self.kb.matrix().clone();
        rows.push_row(other.kb.row(i))?;
        let mut ids = self.task_ids().to_vec();
        ids.push(task_id.to_string());
        self.kb = KnowledgeBase::from_rows(ids, rows)?;
        self.heads.push(other.heads[i].clone());
        self.mark_trainable();
        Ok(())
    }

    pub fn task_ids(&self) -> &[String] {
        self.kb.task_ids()
    }

    pub fn task_index(&self, task_id: &str) -> Result<usize> {
        self.kb.index_of(task_id).ok_or_else(|| Error::UnknownTask {
            task: task_id.to_string(),
            known: self.task_ids().to_vec(),
        })
    }

    pub fn head(&self, task_id: &str) -> Result<&TaskHead> {
        Ok(&self.heads[self.task_index(task_id)?])
    }

    /// Teacher initialized as a copy of this state.
    pub fn to_teacher(&self) -> Self {
        let mut t = self.clone();
        t.role = Role::Teacher;
        t
    }

    /// Every parameter tensor with a stable dotted name, in a fixed order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for (i, l) in self.encoder.layers.iter().enumerate() {
            out.push((format!("encoder.{i}.weight"), &l.weight));
            out.push((format!("encoder.{i}.bias"), &l.bias));
        }
        out.push(("template".into(), &self.template.t_pk));
        for (n, t) in ["w1", "b1", "w2", "b2"].iter().zip(self.generator.0.tensors()) {
            out.push((format!("generator.{n}"), t));
        }
        for (n, t) in ["w1", "b1", "w2", "b2"].iter().zip(self.fusion.0.tensors()) {
            out.push((format!("fusion.{n}"), t));
        }
        out.push(("kb".into(), self.kb.matrix()));
        out.push(("projector".into(), &self.projector));
        for h in &self.heads {
            out.push((format!("head.{}.weight", h.task_id), &h.linear.weight));
            out.push((format!("head.{}.bias", h.task_id), &h.linear.bias));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        for (i, l) in self.encoder.layers.iter_mut().enumerate() {
            out.push((format!("encoder.{i}.weight"), &mut l.weight));
            out.push((format!("encoder.{i}.bias"), &mut l.bias));
        }
        out.push(("template".into(), &mut self.template.t_pk));
        for (n, t) in ["w1", "b1", "w2", "b2"].iter().zip(self.generator.0.tensors_mut()) {
            out.push((format!("generator.{n}"), t));
        }
        for (n, t) in ["w1", "b1", "w2", "b2"].iter().zip(self.fusion.0.tensors_mut()) {
            out.push((format!("fusion.{n}"), t));
        }
        out.push(("kb".into(), self.kb.matrix_mut()));
        out.push(("projector".into(), &mut self.projector));
        for h in &mut self.heads {
            out.push((format!("head.{}.weight", h.task_id), &mut h.linear.weight));
            out.push((format!("head.{}.bias", h.task_id), &mut h.linear.bias));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Checks that `other` has the same task registry and parameter shapes.
    pub fn check_compatible(&self, other: &ModelState) -> Result<()> {
        if self.task_ids() != other.task_ids() {
            return Err(Error::shape(
                "model",
                format!("task registries differ: {:?} vs {:?}", self.task_ids(), other.task_ids()),
            ));
        }
        for ((n, a), (_, b)) in self.params().iter().zip(other.params()) {
            if a.shape() != b.shape() {
                return Err(Error::shape(
                    "model",
                    format!("{n}: {:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 over every parameter's little-endian bytes in `params` order.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, t) in self.params() {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|(_, t)| t.is_finite())
    }
}

/// `θ_t ← m·θ_t + (1−m)·θ_s` on every parameter, KB and heads included.
pub fn ema_update(teacher: &mut ModelState, student: &ModelState, momentum: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::InvalidConfig(format!(
            "EMA momentum must lie in [0, 1], got {momentum}"
        )));
    }
    teacher.check_compatible(student)?;
    if momentum == 1.0 {
        return Ok(());
    }
    let src = student.params();
    for ((_, t), (_, s)) in teacher.params_mut().into_iter().zip(src) {
        if momentum == 0.0 {
            t.data_mut().copy_from_slice(s.data());
        } else {
            for (a, b) in t.data_mut().iter_mut().zip(s.data()) {
                *a = momentum * *a + (1.0 - momentum) * b;
            }
        }
    }
    Ok(())
}
