//! Differentiable forms of the RAT computations. Every function records onto
//! a caller-supplied [`Tape`]; batch rows are samples.

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Tape handles of a two-layer MLP's parameters.
#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// `tanh(x W1 + b1) W2 + b2`.
pub fn mlp(tape: &mut Tape, p: &MlpVars, x: Var) -> Result<Var> {
    let h = tape.affine(x, p.w1, p.b1)?;
    let h = tape.tanh(h);
    tape.affine(h, p.w2, p.b2)
}

/// `k_p = MLP([v_e, t_pk])` with the template broadcast over the batch.
pub fn posterior_knowledge(tape: &mut Tape, v_e: Var, t_pk: Var, gen: &MlpVars) -> Result<Var> {
    let rows = tape.value(v_e).rows();
    let t = tape.broadcast_rows(t_pk, rows)?;
    let x = tape.concat(v_e, t)?;
    mlp(tape, gen, x)
}

/// Cosine similarity of each `k_p` row to each KB row, then row softmax at
/// temperature `tau`. Returns `(sims, omegas)`, both `[batch, T]`.
pub fn relevance_weights(tape: &mut Tape, k_p: Var, kb: Var, tau: f64) -> Result<(Var, Var)> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidConfig(format!("tau must be > 0, got {tau}")));
    }
    let sims = tape.cosine_matrix(k_p, kb)?;
    let omegas = tape.softmax(sims, tau)?;
    Ok((sims, omegas))
}

/// `k_a = Σ_i ω_i b_i` per row.
pub fn aggregate_prior(tape: &mut Tape, omegas: Var, kb: Var) -> Result<Var> {
    let t = tape.value(omegas).cols();
    let rows = tape.value(kb).rows();
    if t != rows {
        return Err(Error::shape(
            "aggregate_prior",
            format!("{t} weights for {rows} knowledge rows"),
        ));
    }
    tape.matmul(omegas, kb)
}

/// Batch mean of `(1 − cos(k_a, b_task))²`.
pub fn task_similarity_loss(tape: &mut Tape, k_a: Var, kb: Var, task: usize) -> Result<Var> {
    let n = tape.value(k_a).rows();
    let b = tape.select_rows(kb, &vec![task; n])?;
    let cos = tape.cosine_similarity(k_a, b)?;
    let neg = tape.scale(cos, -1.0);
    let gap = tape.add_scalar(neg, 1.0);
    let sq = tape.square(gap);
    Ok(tape.mean(sq))
}

/// `‖Ĝ − I‖²_F` for the Gram matrix of row-normalized KB.
pub fn orthogonality_loss(tape: &mut Tape, kb: Var) -> Result<Var> {
    let t = tape.value(kb).rows();
    let n = tape.l2_normalize(kb)?;
    let nt = tape.transpose(n)?;
    let gram = tape.matmul(n, nt)?;
    let mut eye = Tensor::zeros(&[t, t]);
    for i in 0..t {
        eye.data_mut()[i * t + i] = 1.0;
    }
    let eye = tape.constant(&eye);
    let diff = tape.sub(gram, eye)?;
    Ok(tape.frobenius_norm_squared(diff))
}

/// `MLP([k_p, k_a])`.
pub fn fuse(tape: &mut Tape, k_p: Var, k_a: Var, fusion: &MlpVars) -> Result<Var> {
    if tape.value(k_p).shape() != tape.value(k_a).shape() {
        return Err(Error::shape(
            "fuse",
            format!("{:?} vs {:?}", tape.value(k_p).shape(), tape.value(k_a).shape()),
        ));
    }
    let x = tape.concat(k_p, k_a)?;
    mlp(tape, fusion, x)
}
