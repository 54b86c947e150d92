use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::knowledge::{graph as rat, MlpVars};

use super::ModelState;

/// Tape handles for every parameter of a [`ModelState`].
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: Vec<(Var, Var)>,
    pub template: Var,
    pub generator: MlpVars,
    pub fusion: MlpVars,
    pub kb: Var,
    pub projector: Var,
    pub heads: Vec<(Var, Var)>,
    pub tau: f64,
    /// All handles in `ModelState::params` order.
    pub vars: Vec<Var>,
}

impl BoundModel {
    /// Records every parameter as a leaf, trainable or constant.
    pub fn bind(state: &ModelState, tape: &mut Tape, trainable: bool) -> Self {
        let vars: Vec<Var> = state
            .params()
            .into_iter()
            .map(|(_, t)| if trainable { tape.param(t) } else { tape.constant(t) })
            .collect();
        Self::from_vars(state, vars)
    }

    /// Structured handles over leaves already on a tape, given in
    /// `ModelState::params` order.
    pub fn from_vars(state: &ModelState, vars: Vec<Var>) -> Self {
        assert_eq!(vars.len(), state.params().len(), "one handle per parameter");
        let layers = state.encoder.layers.len();
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("params layout");
        let encoder = (0..layers).map(|_| (next(), next())).collect();
        let template = next();
        let mut mlp = || MlpVars {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        };
        let generator = mlp();
        let fusion = mlp();
        let kb = next();
        let projector = next();
        let heads = (0..state.heads.len()).map(|_| (next(), next())).collect();
        Self {
            encoder,
            template,
            generator,
            fusion,
            kb,
            projector,
            heads,
            tau: state.config.tau,
            vars,
        }
    }

    /// Copies tape gradients onto the state's tensors, ready for `sgd_step`.
    pub fn store_grads(&self, tape: &Tape, state: &mut ModelState) -> Result<()> {
        for ((name, t), &v) in state.params_mut().into_iter().zip(&self.vars) {
            let g = tape.grad(v).ok_or(Error::MissingGrad(name))?;
            t.set_grad(g.to_vec())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GraphForward {
    pub v_e: Var,
    pub k_p: Var,
    pub sims: Var,
    pub omegas: Var,
    pub k_a: Var,
    pub fused: Var,
    pub projected: Var,
    pub logits: Option<Var>,
}

/// Records the full pipeline for a batch `x` (`[n, D]`); logits come from
/// head `task` when given.
pub fn forward_graph(
    tape: &mut Tape,
    m: &BoundModel,
    x: Var,
    task: Option<usize>,
) -> Result<GraphForward> {
    let mut h = x;
    let last = m.encoder.len() - 1;
    for (i, &(w, b)) in m.encoder.iter().enumerate() {
        h = tape.affine(h, w, b)?;
        if i < last {
            h = tape.tanh(h);
        }
    }
    let v_e = h;
    let k_p = rat::posterior_knowledge(tape, v_e, m.template, &m.generator)?;
    let (sims, omegas) = rat::relevance_weights(tape, k_p, m.kb, m.tau)?;
    let k_a = rat::aggregate_prior(tape, omegas, m.kb)?;
    let fused = rat::fuse(tape, k_p, k_a, &m.fusion)?;
    let projected = tape.matmul(fused, m.projector)?;
    let logits = match task {
        Some(t) => {
            let (w, b) = m.heads[t];
            Some(tape.affine(fused, w, b)?)
        }
        None => None,
    };
    Ok(GraphForward {
        v_e,
        k_p,
        sims,
        omegas,
        k_a,
        fused,
        projected,
        logits,
    })
}

/// Batch mean of `1 − cos(student, teacher)`. Pass the teacher projection as
/// a constant so only the student receives gradient.
pub fn consistency_graph(tape: &mut Tape, student: Var, teacher: Var) -> Result<Var> {
    let cos = tape.cosine_similarity(student, teacher)?;
    let neg = tape.scale(cos, -1.0);
    let d = tape.add_scalar(neg, 1.0);
    Ok(tape.mean(d))
}

pub fn consistency_loss(student: &Tensor, teacher: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(&as_matrix(student));
    let t = tape.constant(&as_matrix(teacher));
    let l = consistency_graph(&mut tape, s, t)?;
    Ok(tape.item(l))
}

fn as_matrix(t: &Tensor) -> Tensor {
    if t.shape().len() == 2 {
        t.clone()
    } else {
        Tensor::matrix(t.rows(), t.cols(), t.data().to_vec()).expect("same element count")
    }
}

/// Intermediates of one forward pass; every field is `[n, ·]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskForward {
    pub v_e: Tensor,
    pub k_p: Tensor,
    pub sims: Tensor,
    pub omegas: Tensor,
    pub k_a: Tensor,
    pub fused: Tensor,
    pub projected: Tensor,
    pub logits: Tensor,
    pub tau: f64,
}

impl TaskForward {
    pub fn len(&self) -> usize {
        self.v_e.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_features(state: &ModelState, features: &Tensor) -> Result<Tensor> {
    let x = as_matrix(features);
    let d = state.config.encoder.input_dim;
    if x.cols() != d {
        return Err(Error::shape(
            "forward",
            format!("features have {} columns, model expects {d}", x.cols()),
        ));
    }
    Ok(x)
}

pub fn forward(state: &ModelState, features: &Tensor, task_id: &str) -> Result<TaskForward> {
    let task = state.task_index(task_id)?;
    let x = check_features(state, features)?;
    let mut tape = Tape::new();
    let m = BoundModel::bind(state, &mut tape, false);
    let xv = tape.constant(&x);
    let g = forward_graph(&mut tape, &m, xv, Some(task))?;
    let v = |var: Var| tape.value(var).clone();
    Ok(TaskForward {
        v_e: v(g.v_e),
        k_p: v(g.k_p),
        sims: v(g.sims),
        omegas: v(g.omegas),
        k_a: v(g.k_a),
        fused: v(g.fused),
        projected: v(g.projected),
        logits: v(g.logits.expect("head requested")),
        tau: state.config.tau,
    })
}

/// Relevance intermediates and every head's logits for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AllHeads {
    /// `[n, T]`
    pub sims: Tensor,
    /// `[n, T]`
    pub omegas: Tensor,
    /// Per head, `[n, C_t]`, in KB order.
    pub logits: Vec<Tensor>,
}

pub fn forward_all_heads(state: &ModelState, features: &Tensor) -> Result<AllHeads> {
    let x = check_features(state, features)?;
    let mut tape = Tape::new();
    let m = BoundModel::bind(state, &mut tape, false);
    let xv = tape.constant(&x);
    let g = forward_graph(&mut tape, &m, xv, None)?;
    let mut logits = Vec::with_capacity(m.heads.len());
    for &(w, b) in &m.heads {
        let l = tape.affine(g.fused, w, b)?;
        logits.push(tape.value(l).clone());
    }
    Ok(AllHeads {
        sims: tape.value(g.sims).clone(),
        omegas: tape.value(g.omegas).clone(),
        logits,
    })
}

/// Fused features `[n, E]`; task-independent.
pub fn embed(state: &ModelState, features: &Tensor) -> Result<Tensor> {
    let x = check_features(state, features)?;
    let mut tape = Tape::new();
    let m = BoundModel::bind(state, &mut tape, false);
    let xv = tape.constant(&x);
    let g = forward_graph(&mut tape, &m, xv, None)?;
    Ok(tape.value(g.fused).clone())
}
