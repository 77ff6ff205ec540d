//! Multi-head scaled dot-product attention built from tape primitives.

use crate::autodiff::{Tape, TapeVal};
use crate::error::{Result, TauError};
use crate::tensor::Tensor;

/// Learned projection weights for one attention layer over embeddings of
/// size `E`: row-vector convention, `x (tokens×E) · W (E×E) + b`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: TapeVal,
    pub bq: TapeVal,
    pub wk: TapeVal,
    pub bk: TapeVal,
    pub wv: TapeVal,
    pub bv: TapeVal,
    pub wo: TapeVal,
    pub bo: TapeVal,
}

/// Attention output plus the per-head row-stochastic weight matrices.
pub struct AttentionOutput {
    pub out: TapeVal,
    /// One `M×P` softmax matrix per head; each row sums to 1.
    pub head_probs: Vec<TapeVal>,
}

/// Multi-head attention: `query (M×E)`, `key`/`value (P×E)`, `E % heads == 0`.
pub fn multi_head_attention(
    tape: &mut Tape,
    query: TapeVal,
    key: TapeVal,
    value: TapeVal,
    heads: usize,
    params: &AttentionParams,
) -> Result<AttentionOutput> {
    let embed = tape.shape(query)[1];
    if heads == 0 || embed % heads != 0 {
        return Err(TauError::InvalidArgument(format!(
            "embedding size {} not divisible by {} heads",
            embed, heads
        )));
    }
    if tape.shape(key)[0] == 0 {
        return Err(TauError::InvalidArgument("attention over empty key set".into()));
    }
    if tape.shape(key) != tape.shape(value) || tape.shape(key)[1] != embed {
        return Err(TauError::ShapeMismatch(format!(
            "attention shapes: q {:?}, k {:?}, v {:?}",
            tape.shape(query),
            tape.shape(key),
            tape.shape(value)
        )));
    }
    let head_dim = embed / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let q = tape.matmul(query, params.wq)?;
    let q = tape.add_row_vector(q, params.bq)?;
    let k = tape.matmul(key, params.wk)?;
    let k = tape.add_row_vector(k, params.bk)?;
    let v = tape.matmul(value, params.wv)?;
    let v = tape.add_row_vector(v, params.bv)?;

    let mut head_outs = Vec::with_capacity(heads);
    let mut head_probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qs = tape.slice_cols(q, h * head_dim, head_dim)?;
        let ks = tape.slice_cols(k, h * head_dim, head_dim)?;
        let vs = tape.slice_cols(v, h * head_dim, head_dim)?;
        let scores = tape.matmul_trans_b(qs, ks)?;
        let scores = tape.scale(scores, scale)?;
        let probs = tape.softmax_rows(scores)?;
        let attended = tape.matmul(probs, vs)?;
        head_outs.push(attended);
        head_probs.push(probs);
    }
    let merged = tape.concat_cols(&head_outs)?;
    let out = tape.matmul(merged, params.wo)?;
    let out = tape.add_row_vector(out, params.bo)?;
    Ok(AttentionOutput { out, head_probs })
}

/// Plain multi-head attention on value tensors; used by tests and any
/// caller that does not need gradients.
pub struct AttentionWeights {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

impl AttentionWeights {
    /// Identity projections with zero biases; attention then mixes raw rows.
    pub fn identity(embed: usize) -> Self {
        let mut eye = Tensor::zeros(&[embed, embed]);
        for i in 0..embed {
            eye.data_mut()[i * embed + i] = 1.0;
        }
        let zero = Tensor::zeros(&[embed]);
        Self {
            wq: eye.clone(),
            bq: zero.clone(),
            wk: eye.clone(),
            bk: zero.clone(),
            wv: eye.clone(),
            bv: zero.clone(),
            wo: eye,
            bo: zero,
        }
    }
}

/// Evaluates attention without retaining a tape. Returns the output and the
/// per-head probability matrices.
pub fn multi_head_attention_eval(
    query: &Tensor,
    key: &Tensor,
    value: &Tensor,
    heads: usize,
    weights: &AttentionWeights,
) -> Result<(Tensor, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let q = tape.constant(query.clone());
    let k = tape.constant(key.clone());
    let v = tape.constant(value.clone());
    let params = AttentionParams {
        wq: tape.constant(weights.wq.clone()),
        bq: tape.constant(weights.bq.clone()),
        wk: tape.constant(weights.wk.clone()),
        bk: tape.constant(weights.bk.clone()),
        wv: tape.constant(weights.wv.clone()),
        bv: tape.constant(weights.bv.clone()),
        wo: tape.constant(weights.wo.clone()),
        bo: tape.constant(weights.bo.clone()),
    };
    let result = multi_head_attention(&mut tape, q, k, v, heads, &params)?;
    let out = tape.value(result.out).clone();
    let probs = result
        .head_probs
        .iter()
        .map(|p| tape.value(*p).clone())
        .collect();
    Ok((out, probs))
}
