//! Private forward pass. The server passes its weights, the client `None`;
//! both pass the same public config.

use super::bundle::{BlockWeights, ModelBundle};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::fixed::PlainTensor;
use crate::mpc::arith::p_trunc;
use crate::mpc::session::{Party, Session};
use crate::mpc::share::{split_local, ShareTensor};
use crate::mpc::transport::Tag;
use crate::nn::{activation, attention_norm, fc_forward, norm, shared_matmul, AffineParams, OperatorVariant, BOUND};

/// Client secret-shares its embedded input; the server learns only a
/// uniform half. `x` is `Some` on the client.
pub fn share_input(sess: &mut Session, x: Option<&PlainTensor>, shape: &[usize]) -> Result<ShareTensor> {
    let fp = sess.fixed();
    let n: usize = shape.iter().product();
    let local = match (sess.party(), x) {
        (Party::Client, Some(x)) => {
            if x.shape() != shape {
                return Err(Error::Shape {
                    expected: shape.to_vec(),
                    got: x.shape().to_vec(),
                });
            }
            let (own, peer) = split_local(x.data(), &fp, sess.rng());
            sess.send_elems(Tag::Control, &peer)?;
            own
        }
        (Party::Client, None) => return Err(Error::Config("client must supply the input".into())),
        (Party::Server, _) => sess.recv_elems(Tag::Control, n)?,
    };
    Ok(ShareTensor::new(sess.party(), fp, PlainTensor::new(shape.to_vec(), local)?))
}

/// Server sends its half; the client returns the reconstructed value.
pub fn reveal_to_client(sess: &mut Session, y: &ShareTensor) -> Result<Option<PlainTensor>> {
    match sess.party() {
        Party::Server => {
            sess.send_elems(Tag::Control, y.data())?;
            Ok(None)
        }
        Party::Client => {
            let peer = sess.recv_elems(Tag::Control, y.len())?;
            let other = y.from_data(y.shape().to_vec(), peer)?;
            Ok(Some(y.add(&other)?.into_local()))
        }
    }
}

/// Stacks equally wide 2-D shares vertically.
fn stack_rows(parts: &[ShareTensor]) -> Result<ShareTensor> {
    let cols = parts[0].dims2().1;
    let rows: usize = parts.iter().map(|p| p.dims2().0).sum();
    let data = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    parts[0].from_data(vec![rows, cols], data)
}

/// Key columns at or past `valid_len` are replaced by `-BOUND`.
fn mask_keys(sess: &Session, scores: &ShareTensor, valid_len: usize) -> Result<ShareTensor> {
    let fp = sess.fixed();
    let (rows, cols) = scores.dims2();
    if valid_len >= cols {
        return Ok(scores.clone());
    }
    let fill = match sess.party() {
        Party::Server => fp.encode_unchecked(-BOUND),
        Party::Client => 0,
    };
    let mut data = scores.data().to_vec();
    for r in 0..rows {
        data[r * cols + valid_len..(r + 1) * cols].fill(fill);
    }
    scores.from_data(vec![rows, cols], data)
}

/// One encoder block on `x` of shape `[S, E]`:
/// `x1 = LN1(x + MHA(x))`, `out = LN2(x1 + FFN(x1))`.
///
/// Only the first `valid_len` positions are attended to.
pub fn encoder_block_forward(
    sess: &mut Session,
    config: &ModelConfig,
    weights: Option<&BlockWeights>,
    x: &ShareTensor,
    variant: OperatorVariant,
    valid_len: usize,
) -> Result<ShareTensor> {
    let fp = sess.fixed();
    let (s, e) = x.dims2();
    if e != config.embed_dim {
        return Err(Error::Shape {
            expected: vec![s, config.embed_dim],
            got: x.shape().to_vec(),
        });
    }
    let (h, dh) = (config.n_heads, config.head_dim());
    let hidden = AffineParams::hidden(e, &fp);
    let ln1 = weights.map_or(&hidden, |w| &w.ln1);
    let ln2 = weights.map_or(&hidden, |w| &w.ln2);

    let qkv = fc_forward(sess, weights.map(|w| &w.qkv), x, 3 * e)?;
    let mut scores = Vec::with_capacity(h);
    for head in 0..h {
        let q = qkv.column_slice(head * dh, dh);
        let k = qkv.column_slice(e + head * dh, dh);
        scores.push(shared_matmul(sess, &q, &k.transpose())?);
    }
    let scale = fp.encode_scaled_round(1.0 / (dh as f64).sqrt(), fp.frac());
    let scores = p_trunc(sess, &stack_rows(&scores)?.mul_scalar(scale), fp.frac())?;
    let scores = mask_keys(sess, &scores, valid_len)?;
    let eps = ln1.epsilon_sm;
    let probs = attention_norm(sess, variant.attention_norm, &scores, eps)?;
    let mut ctx = Vec::with_capacity(h);
    for head in 0..h {
        let p = probs.row_slice(head * s, s);
        let v = qkv.column_slice(2 * e + head * dh, dh);
        ctx.push(shared_matmul(sess, &p, &v)?);
    }
    let ctx = ShareTensor::concat_columns(&ctx);
    let attn = fc_forward(sess, weights.map(|w| &w.out), &ctx, e)?;
    let x1 = norm(sess, variant.ln1, &x.add(&attn)?, ln1)?;

    let f1 = fc_forward(sess, weights.map(|w| &w.fc1), &x1, config.ffn_dim)?;
    let a = activation(sess, variant.activation, &f1)?;
    let f2 = fc_forward(sess, weights.map(|w| &w.fc2), &a, e)?;
    norm(sess, variant.ln2, &x1.add(&f2)?, ln2)
}

/// Blocks in order, then first-token pooling and the classifier head.
/// Returns `[1, num_labels]` logits, or the final hidden states when the
/// model has no head.
pub fn model_forward(
    sess: &mut Session,
    config: &ModelConfig,
    bundle: Option<&ModelBundle>,
    x: &ShareTensor,
    valid_len: usize,
) -> Result<ShareTensor> {
    let s = x.dims2().0;
    if s > config.max_seq_len || valid_len == 0 || valid_len > s {
        return Err(Error::Config(format!(
            "sequence length {s} (valid {valid_len}) outside 1..={}",
            config.max_seq_len
        )));
    }
    if sess.is_server() && bundle.is_none() {
        return Err(Error::Config("server must supply the model".into()));
    }
    let mut h = x.clone();
    for (i, &variant) in config.variants.iter().enumerate() {
        h = encoder_block_forward(sess, config, bundle.map(|b| b.block(i)), &h, variant, valid_len)?;
    }
    if config.num_labels == 0 {
        return Ok(h);
    }
    let pooled = h.row_slice(0, 1);
    fc_forward(sess, bundle.and_then(|b| b.head()), &pooled, config.num_labels)
}
