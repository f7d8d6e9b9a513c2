//! Single-process fixed-point oracle of the encoder stack.
//!
//! Linear layers use exact ring arithmetic with floor truncation; the
//! nonlinear operators are evaluated in `f64` on decoded values and
//! re-encoded. Any product or activation past the truncation headroom
//! `2^(ell-2-2f)` is reported as an overflow.

use super::bundle::{BlockWeights, ModelBundle};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::fixed::{FixedPointParams, PlainTensor};
use crate::math;
use crate::nn::{Activation, AffineParams, AttentionNorm, FcWeights, Norm, OperatorVariant, BOUND, EPSILON_LN};

fn headroom(fp: &FixedPointParams) -> f64 {
    2f64.powi(fp.ell() as i32 - 2 - 2 * fp.frac() as i32)
}

/// Fails if any decoded entry exceeds the headroom.
fn check(site: &str, x: &PlainTensor, fp: &FixedPointParams) -> Result<()> {
    let limit = headroom(fp);
    for &v in x.data() {
        let value = fp.decode_raw(v);
        if value.abs() >= limit {
            return Err(Error::Overflow {
                site: site.into(),
                value,
                limit,
            });
        }
    }
    Ok(())
}

/// `floor(A B / 2^f)` with the untruncated product checked in `i128`.
fn matmul_trunc(site: &str, a: &PlainTensor, b: &PlainTensor, fp: &FixedPointParams) -> Result<PlainTensor> {
    let (m, r) = a.dims2();
    let (r2, n) = b.dims2();
    if r != r2 {
        return Err(Error::Shape {
            expected: vec![r, n],
            got: b.shape().to_vec(),
        });
    }
    let sa: Vec<i128> = a.data().iter().map(|&v| fp.to_signed(v) as i128).collect();
    let sb: Vec<i128> = b.data().iter().map(|&v| fp.to_signed(v) as i128).collect();
    let limit = 1i128 << (fp.ell() - 2);
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        for k in 0..n {
            let acc: i128 = (0..r).map(|j| sa[i * r + j] * sb[j * n + k]).sum();
            if acc.abs() >= limit {
                return Err(Error::Overflow {
                    site: site.into(),
                    value: acc as f64 / 2f64.powi(2 * fp.frac() as i32),
                    limit: headroom(fp),
                });
            }
            out.push(fp.from_signed((acc >> fp.frac()) as i64));
        }
    }
    PlainTensor::new(vec![m, n], out)
}

fn fc(site: &str, w: &FcWeights, x: &PlainTensor, fp: &FixedPointParams) -> Result<PlainTensor> {
    let y = matmul_trunc(site, x, &w.weight.transpose(), fp)?;
    let (rows, cols) = y.dims2();
    let y = PlainTensor::from_fn(vec![rows, cols], |i| fp.add(y.data()[i], w.bias.data()[i % cols]));
    check(site, &y, fp)?;
    Ok(y)
}

/// Applies a real row function to each row and re-encodes by floor.
fn rowwise(x: &PlainTensor, fp: &FixedPointParams, f: impl Fn(&[f64]) -> Vec<f64>) -> PlainTensor {
    let (rows, cols) = x.dims2();
    let vals = x.decode(fp);
    let out: Vec<u64> = vals.chunks(cols).flat_map(f).map(|v| fp.encode_unchecked(v)).collect();
    PlainTensor::new(vec![rows, cols], out).expect("same shape")
}

fn layer_norm(kind: Norm, x: &PlainTensor, p: &AffineParams, fp: &FixedPointParams) -> PlainTensor {
    let gamma: Vec<f64> = p.gamma.iter().map(|&g| fp.decode_raw(g)).collect();
    let beta: Vec<f64> = p.beta.iter().map(|&b| fp.decode_raw(b)).collect();
    match kind {
        Norm::Layernorm => rowwise(x, fp, |r| math::layernorm(r, &gamma, &beta, EPSILON_LN)),
        Norm::LayernormSub => rowwise(x, fp, |r| math::layernorm_sub(r, &gamma, &beta)),
    }
}

/// Plaintext counterpart of [`super::encoder_block_forward`].
pub fn reference_block_forward(
    config: &ModelConfig,
    w: &BlockWeights,
    x: &PlainTensor,
    variant: OperatorVariant,
    valid_len: usize,
) -> Result<PlainTensor> {
    let fp = config.fixed()?;
    let (s, e) = x.dims2();
    let (h, dh) = (config.n_heads, config.head_dim());
    check("input", x, &fp)?;

    let qkv = fc("qkv", &w.qkv, x, &fp)?;
    let scale = fp.encode_scaled_round(1.0 / (dh as f64).sqrt(), fp.frac());
    let mut scores = Vec::with_capacity(h * s * s);
    for head in 0..h {
        let q = qkv.column_slice(head * dh, dh);
        let k = qkv.column_slice(e + head * dh, dh);
        let sc = matmul_trunc("scores", &q, &k.transpose(), &fp)?;
        scores.extend(sc.data().iter().map(|&v| fp.shift_floor(fp.mul(v, scale), fp.frac())));
    }
    let mut scores = PlainTensor::new(vec![h * s, s], scores)?;
    if valid_len < s {
        let fill = fp.encode_unchecked(-BOUND);
        for r in 0..h * s {
            scores.data_mut()[r * s + valid_len..(r + 1) * s].fill(fill);
        }
    }
    check("scores", &scores, &fp)?;
    let eps_sm = fp.decode_raw(w.ln1.epsilon_sm);
    let probs = match variant.attention_norm {
        AttentionNorm::Softmax => rowwise(&scores, &fp, math::softmax),
        AttentionNorm::SoftmaxSub => rowwise(&scores, &fp, |r| math::softmax_sub(r, eps_sm)),
    };
    let mut ctx = Vec::with_capacity(h);
    for head in 0..h {
        let p = PlainTensor::new(vec![s, s], probs.data()[head * s * s..(head + 1) * s * s].to_vec())?;
        let v = qkv.column_slice(2 * e + head * dh, dh);
        ctx.push(matmul_trunc("context", &p, &v, &fp)?);
    }
    let ctx = PlainTensor::concat_columns(&ctx);
    let attn = fc("attn_out", &w.out, &ctx, &fp)?;
    let r1 = x.add(&attn, &fp)?;
    check("residual1", &r1, &fp)?;
    let x1 = layer_norm(variant.ln1, &r1, &w.ln1, &fp);
    check("ln1", &x1, &fp)?;

    let f1 = fc("fc1", &w.fc1, &x1, &fp)?;
    let a = match variant.activation {
        Activation::Gelu => f1.map(|v| fp.encode_unchecked(math::gelu(fp.decode_raw(v)))),
        Activation::Relu => f1.map(|v| if fp.to_signed(v) < 0 { 0 } else { v }),
    };
    let f2 = fc("fc2", &w.fc2, &a, &fp)?;
    let r2 = x1.add(&f2, &fp)?;
    check("residual2", &r2, &fp)?;
    let out = layer_norm(variant.ln2, &r2, &w.ln2, &fp);
    check("ln2", &out, &fp)?;
    Ok(out)
}

/// Plaintext counterpart of [`super::model_forward`] with every position valid.
pub fn plaintext_reference_forward(bundle: &ModelBundle, x: &PlainTensor) -> Result<PlainTensor> {
    reference_forward(bundle, x, x.dims2().0)
}

/// Plaintext counterpart of [`super::model_forward`] attending to the first
/// `valid_len` positions.
pub fn reference_forward(bundle: &ModelBundle, x: &PlainTensor, valid_len: usize) -> Result<PlainTensor> {
    let config = bundle.config();
    let fp = bundle.fixed();
    let mut h = x.clone();
    for (i, &variant) in config.variants.iter().enumerate() {
        h = reference_block_forward(config, bundle.block(i), &h, variant, valid_len)?;
    }
    match bundle.head() {
        None => Ok(h),
        Some(head) => {
            let pooled = PlainTensor::new(vec![1, config.embed_dim], h.data()[..config.embed_dim].to_vec())?;
            fc("head", head, &pooled, &fp)
        }
    }
}
