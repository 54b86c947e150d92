//! The relevance-knowledge acquisition and transfer (RAT) module.
//!
//! A learnable knowledge base holds one prior-knowledge row per task. For an
//! encoded input, a posterior-knowledge vector `k_p` is generated from the
//! encoding and a shared learnable template; its cosine similarities to the
//! KB rows, softmaxed at temperature `tau`, weight the rows into an
//! aggregated prior `k_a`. Training ties `k_a` to the current task's row and
//! keeps rows mutually orthogonal; `k_p` and `k_a` are fused by an MLP.
//!
//! Temperature enters inside the exponent, `softmax(sim / tau)`.

pub mod graph;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;

pub use graph::MlpVars;

/// Default relevance temperature.
pub const DEFAULT_TAU: f64 = 0.1;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthogonalizes `v` against unit rows `basis` (two passes).
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for u in basis {
            let d = dot(v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    rows: Tensor,
    task_ids: Vec<String>,
}

impl KnowledgeBase {
    pub fn empty(width: usize) -> Self {
        Self {
            rows: Tensor::zeros(&[0, width]),
            task_ids: Vec::new(),
        }
    }

    /// Seeded Gaussian rows without orthogonalization.
    pub fn init_raw(task_ids: Vec<String>, width: usize, seed: u64) -> Result<Self> {
        let mut g = rng::stream(seed, &[0xCB]);
        let rows = Tensor::randn(&[task_ids.len(), width], 1.0, &mut g);
        Self::from_rows(task_ids, rows)
    }

    /// Seeded Gaussian rows followed by Gram-Schmidt: rows start orthonormal.
    pub fn init(task_ids: Vec<String>, width: usize, seed: u64) -> Result<Self> {
        if task_ids.len() > width {
            return Err(Error::KbAtCapacity {
                tasks: task_ids.len(),
                width,
            });
        }
        let mut kb = Self::init_raw(task_ids, width, seed)?;
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for i in 0..kb.len() {
            let mut v = kb.rows.row(i).to_vec();
            orthogonalize(&mut v, &basis);
            let n = norm(&v);
            if n < 1e-12 {
                return Err(Error::DegenerateVector { op: "kb_init" });
            }
            v.iter_mut().for_each(|x| *x /= n);
            kb.rows.row_mut(i).copy_from_slice(&v);
            basis.push(v);
        }
        Ok(kb)
    }

    pub fn from_rows(task_ids: Vec<String>, rows: Tensor) -> Result<Self> {
        let (r, _) = rows
            .dims2()
            .ok_or_else(|| Error::shape("knowledge_base", format!("{:?}", rows.shape())))?;
        if r != task_ids.len() {
            return Err(Error::shape(
                "knowledge_base",
                format!("{} task ids for {} rows", task_ids.len(), r),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &task_ids {
            if !seen.insert(id) {
                return Err(Error::DuplicateTask(id.clone()));
            }
        }
        let rows = if rows.shape().len() == 1 {
            Tensor::matrix(r, rows.numel(), rows.into_data())?
        } else {
            rows
        };
        Ok(Self { rows, task_ids })
    }

    pub fn len(&self) -> usize {
        self.task_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.task_ids.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.cols()
    }

    pub fn task_ids(&self) -> &[String] {
        &self.task_ids
    }

    pub fn index_of(&self, task_id: &str) -> Option<usize> {
        self.task_ids.iter().position(|t| t == task_id)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    pub fn matrix(&self) -> &Tensor {
        &self.rows
    }

    pub fn matrix_mut(&mut self) -> &mut Tensor {
        &mut self.rows
    }

    /// Adds a row for `task_id`: a seeded Gaussian vector orthogonalized
    /// against the existing rows and scaled to their mean norm (unit norm for
    /// an empty base). Existing rows are untouched.
    pub fn append_task(&mut self, task_id: &str, seed: u64) -> Result<()> {
        if self.index_of(task_id).is_some() {
            return Err(Error::DuplicateTask(task_id.to_string()));
        }
        let width = self.width();
        if self.len() >= width {
            return Err(Error::KbAtCapacity {
                tasks: self.len(),
                width,
            });
        }
        // Orthonormal basis of the span of the existing rows, which need not
        // be mutually orthogonal after training.
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for i in 0..self.len() {
            let mut r = self.row(i).to_vec();
            orthogonalize(&mut r, &basis);
            let n = norm(&r);
            if n > 1e-10 {
                basis.push(r.into_iter().map(|x| x / n).collect());
            }
        }
        let target = if self.is_empty() {
            1.0
        } else {
            (0..self.len()).map(|i| norm(self.row(i))).sum::<f64>() / self.len() as f64
        };
        let mut g = rng::stream(seed, &[rng::label_id(task_id)]);
        let v = loop {
            let mut v: Vec<f64> = (0..width).map(|_| g.sample(StandardNormal)).collect();
            orthogonalize(&mut v, &basis);
            let n = norm(&v);
            if n > 1e-6 {
                break v.into_iter().map(|x| target * x / n).collect::<Vec<f64>>();
            }
        };
        self.rows.push_row(&v)?;
        self.task_ids.push(task_id.to_string());
        Ok(())
    }

    /// Mean absolute off-diagonal entry of the row-normalized Gram matrix.
    pub fn gram_offdiag_mean(&self) -> f64 {
        let t = self.len();
        if t < 2 {
            return 0.0;
        }
        let unit: Vec<Vec<f64>> = (0..t)
            .map(|i| {
                let r = self.row(i);
                let n = norm(r);
                r.iter().map(|x| x / n).collect()
            })
            .collect();
        let mut s = 0.0;
        for i in 0..t {
            for j in 0..t {
                if i != j {
                    s += dot(&unit[i], &unit[j]).abs();
                }
            }
        }
        s / (t * (t - 1)) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTemplate {
    pub t_pk: Tensor,
}

impl PosteriorTemplate {
    pub fn init(width: usize, seed: u64) -> Self {
        let mut g = rng::stream(seed, &[0x7E]);
        Self {
            t_pk: Tensor::randn(&[width], 1.0, &mut g),
        }
    }
}

/// `tanh(x W1 + b1) W2 + b2`; weights `[in, hidden]` and `[hidden, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerMlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl TwoLayerMlp {
    /// Gaussian weights with variance `1 / fan_in`, zero biases.
    pub fn init(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        let mut g = rng::seeded(seed);
        Self {
            w1: Tensor::randn(&[input, hidden], (input as f64).recip().sqrt(), &mut g),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::randn(&[hidden, output], (hidden as f64).recip().sqrt(), &mut g),
            b2: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: Tensor::zeros(&[input, hidden]),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden, output]),
            b2: Tensor::zeros(&[output]),
        }
    }

    pub fn input_width(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_width(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_width(&self) -> usize {
        self.w2.cols()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> MlpVars {
        let mut b = |t: &Tensor| {
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };
        MlpVars {
            w1: b(&self.w1),
            b1: b(&self.b1),
            w2: b(&self.w2),
            b2: b(&self.b2),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Generates `k_p` from `[v_e, t_pk]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGenerator(pub TwoLayerMlp);

/// Fuses `[k_p, k_a]` into the aligned prior-posterior feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionBlock(pub TwoLayerMlp);

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceWeights {
    pub sims: Vec<f64>,
    pub omegas: Vec<f64>,
    pub tau: f64,
}

fn row_var(tape: &mut Tape, v: &[f64]) -> Var {
    let t = Tensor::matrix(1, v.len(), v.to_vec()).expect("row length matches");
    tape.constant(&t)
}

fn check_len(op: &'static str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::shape(op, format!("width {got}, expected {want}")));
    }
    Ok(())
}

/// Single-sample `k_p`.
pub fn posterior_knowledge(
    v_e: &[f64],
    template: &PosteriorTemplate,
    gen: &PosteriorGenerator,
) -> Result<Vec<f64>> {
    check_len(
        "posterior_knowledge",
        v_e.len() + template.t_pk.numel(),
        gen.0.input_width(),
    )?;
    let mut tape = Tape::new();
    let v = row_var(&mut tape, v_e);
    let t = tape.constant(&template.t_pk);
    let p = gen.0.bind(&mut tape, false);
    let out = graph::posterior_knowledge(&mut tape, v, t, &p)?;
    Ok(tape.value(out).data().to_vec())
}

impl RelevanceWeights {
    /// Single-sample weights of `k_p` over the KB rows.
    pub fn compute(k_p: &[f64], kb: &KnowledgeBase, tau: f64) -> Result<Self> {
        check_len("relevance_weights", k_p.len(), kb.width())?;
        if kb.is_empty() {
            return Err(Error::InvalidConfig("knowledge base is empty".into()));
        }
        let mut tape = Tape::new();
        let k = row_var(&mut tape, k_p);
        let b = tape.constant(kb.matrix());
        let (s, w) = graph::relevance_weights(&mut tape, k, b, tau)?;
        Ok(Self {
            sims: tape.value(s).data().to_vec(),
            omegas: tape.value(w).data().to_vec(),
            tau,
        })
    }

    /// Weights from precomputed similarities.
    pub fn from_sims(sims: Vec<f64>, tau: f64) -> Result<Self> {
        let mut tape = Tape::new();
        let s = row_var(&mut tape, &sims);
        let w = tape.softmax(s, tau)?;
        Ok(Self {
            omegas: tape.value(w).data().to_vec(),
            sims,
            tau,
        })
    }
}

/// `k_a = Σ_i ω_i b_i` for one sample.
pub fn aggregate_prior(omegas: &[f64], kb: &KnowledgeBase) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let w = row_var(&mut tape, omegas);
    let b = tape.constant(kb.matrix());
    let out = graph::aggregate_prior(&mut tape, w, b)?;
    Ok(tape.value(out).data().to_vec())
}

/// `(1 − cos(k_a, b_i))²`.
pub fn task_similarity_loss(k_a: &[f64], b_i: &[f64]) -> Result<f64> {
    check_len("task_similarity_loss", k_a.len(), b_i.len())?;
    let mut tape = Tape::new();
    let a = row_var(&mut tape, k_a);
    let b = row_var(&mut tape, b_i);
    let out = graph::task_similarity_loss(&mut tape, a, b, 0)?;
    Ok(tape.item(out))
}

pub fn orthogonality_loss(kb: &KnowledgeBase) -> Result<f64> {
    let mut tape = Tape::new();
    let b = tape.constant(kb.matrix());
    let out = graph::orthogonality_loss(&mut tape, b)?;
    Ok(tape.item(out))
}

/// Single-sample fusion of `k_p` and `k_a`.
pub fn fuse(k_p: &[f64], k_a: &[f64], fusion: &FusionBlock) -> Result<Vec<f64>> {
    check_len("fuse", k_p.len() + k_a.len(), fusion.0.input_width())?;
    let mut tape = Tape::new();
    let p = row_var(&mut tape, k_p);
    let a = row_var(&mut tape, k_a);
    let f = fusion.0.bind(&mut tape, false);
    let out = graph::fuse(&mut tape, p, a, &f)?;
    Ok(tape.value(out).data().to_vec())
}

#[cfg(test)]
mod tests;
