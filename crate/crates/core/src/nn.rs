//! Transformer operators over shares: fully connected layers, shared x
//! shared products for attention, GELU, Softmax, LayerNorm and their
//! cheaper substitutes.
//!
//! Every operator books its traffic under the category of the slot it
//! fills, so a ReLU activation is charged to `Gelu` and `softmax_sub` to
//! `Softmax`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::{FixedPointParams, PlainTensor};
use crate::matmul::run_matmul_protocol;
use crate::math;
use crate::mpc::arith::{p_elemul, p_mul_trunc, p_square, p_trunc};
use crate::mpc::compare::{mux, p_drelu};
use crate::mpc::cost::Category;
use crate::mpc::ideal::{ideal_eval, IdealFn};
use crate::mpc::nonlinear::{internal_frac, p_exp, p_max, p_recip_frac, p_relu, p_rsqrt, p_tanh};
use crate::mpc::session::{Backend, Party, Session};
use crate::mpc::share::ShareTensor;

/// Hidden-state magnitude bound assumed by the public ranges below.
pub const BOUND: f64 = 16.0;
/// LayerNorm variance epsilon.
pub const EPSILON_LN: f64 = 1e-5;

/// Learnable LayerNorm affine part plus the two public epsilons, all
/// encoded. The client holds zero vectors of the right length.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineParams {
    pub gamma: Vec<u64>,
    pub beta: Vec<u64>,
    pub epsilon_ln: u64,
    pub epsilon_sm: u64,
}

impl AffineParams {
    pub fn new(gamma: Vec<u64>, beta: Vec<u64>, fp: &FixedPointParams) -> Result<Self> {
        if gamma.len() != beta.len() {
            return Err(Error::Shape {
                expected: vec![gamma.len()],
                got: vec![beta.len()],
            });
        }
        Ok(Self {
            gamma,
            beta,
            epsilon_ln: fp.encode_scaled_round(EPSILON_LN, fp.frac()),
            epsilon_sm: 1,
        })
    }

    /// Placeholder for the party that does not own the weights.
    pub fn hidden(dim: usize, fp: &FixedPointParams) -> Self {
        Self::new(vec![0; dim], vec![0; dim], fp).expect("equal lengths")
    }

    /// `gamma = 1`, `beta = 0`.
    pub fn identity(dim: usize, fp: &FixedPointParams) -> Self {
        Self::new(vec![fp.one(); dim], vec![0; dim], fp).expect("equal lengths")
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionNorm {
    #[default]
    Softmax,
    SoftmaxSub,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    Layernorm,
    LayernormSub,
}

/// Operator choice for one encoder block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorVariant {
    pub activation: Activation,
    pub attention_norm: AttentionNorm,
    pub ln1: Norm,
    pub ln2: Norm,
}

impl OperatorVariant {
    /// All four substitutions applied.
    pub fn substituted() -> Self {
        Self {
            activation: Activation::Relu,
            attention_norm: AttentionNorm::SoftmaxSub,
            ln1: Norm::LayernormSub,
            ln2: Norm::LayernormSub,
        }
    }
}

/// Server-held fully connected layer: `weight` is `[out, in]`, `bias` `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FcWeights {
    pub weight: PlainTensor,
    pub bias: PlainTensor,
}

impl FcWeights {
    pub fn new(weight: PlainTensor, bias: PlainTensor) -> Result<Self> {
        let (out, _) = weight.dims2();
        if bias.len() != out {
            return Err(Error::Shape {
                expected: vec![out],
                got: bias.shape().to_vec(),
            });
        }
        Ok(Self { weight, bias })
    }
}

fn ideal(sess: &Session) -> bool {
    sess.backend() == Backend::Ideal
}

/// Encodes a public real at `frac` bits, rounding to nearest.
fn constant(fp: &FixedPointParams, x: f64, frac: u32) -> u64 {
    fp.encode_scaled_round(x, frac)
}

/// Server-only public row vector repeated over `rows`, as a share.
fn server_rows(sess: &Session, like: &ShareTensor, row: &[u64]) -> Result<ShareTensor> {
    let (rows, cols) = like.dims2();
    let data = match sess.party() {
        Party::Server => (0..rows).flat_map(|_| row.iter().copied()).collect(),
        Party::Client => vec![0; rows * cols],
    };
    like.from_data(vec![rows, cols], data)
}

/// `y = x W^T + b` for `x` of shape `[S, in]`; output `[S, out]`.
///
/// One matmul run on the client half of `x^T`; the server adds
/// `W <x^T>_1` and the bias locally. The client passes `None`.
pub fn fc_forward(
    sess: &mut Session,
    fc: Option<&FcWeights>,
    x: &ShareTensor,
    out_dim: usize,
) -> Result<ShareTensor> {
    let fp = sess.fixed();
    let (s, r) = x.dims2();
    let xt = x.local().transpose();
    let wx = match (sess.party(), fc) {
        (Party::Client, _) => run_matmul_protocol(sess, &xt, (out_dim, r, s), true)?,
        (Party::Server, Some(fc)) => {
            if fc.weight.shape() != [out_dim, r] {
                return Err(Error::Shape {
                    expected: vec![out_dim, r],
                    got: fc.weight.shape().to_vec(),
                });
            }
            let cross = run_matmul_protocol(sess, &fc.weight, (out_dim, r, s), true)?;
            let own = fc.weight.matmul(&xt, &fp)?;
            cross.add(&ShareTensor::new(Party::Server, fp, own))?
        }
        (Party::Server, None) => {
            return Err(Error::Config("server must supply layer weights".into()));
        }
    };
    let y = p_trunc(sess, &wx.transpose(), fp.frac())?;
    let bias = fc.map(|fc| fc.bias.data().to_vec()).unwrap_or_else(|| vec![0; out_dim]);
    y.add(&server_rows(sess, &y, &bias)?)
}

/// `Z = X Y` for two shared matrices, truncated once.
///
/// The cross term `<X>_0 <Y>_1` is computed as `(<Y>_1^T <X>_0^T)^T` so the
/// client is always the key holder.
pub fn shared_matmul(sess: &mut Session, x: &ShareTensor, y: &ShareTensor) -> Result<ShareTensor> {
    let fp = sess.fixed();
    let (a, b) = x.dims2();
    let (b2, c) = y.dims2();
    if b != b2 {
        return Err(Error::Shape {
            expected: vec![b, c],
            got: y.shape().to_vec(),
        });
    }
    let (t1, t2) = match sess.party() {
        Party::Client => (
            run_matmul_protocol(sess, y.local(), (a, b, c), true)?,
            run_matmul_protocol(sess, &x.local().transpose(), (c, b, a), true)?,
        ),
        Party::Server => (
            run_matmul_protocol(sess, x.local(), (a, b, c), true)?,
            run_matmul_protocol(sess, &y.local().transpose(), (c, b, a), true)?,
        ),
    };
    let own = ShareTensor::new(sess.party(), fp, x.local().matmul(y.local(), &fp)?);
    let z = own.add(&t1)?.add(&t2.transpose())?;
    p_trunc(sess, &z, fp.frac())
}

/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
pub fn gelu_protocol(sess: &mut Session, x: &ShareTensor) -> Result<ShareTensor> {
    sess.scoped(Category::Gelu, |sess| {
        if ideal(sess) {
            return ideal_eval(sess, IdealFn::Gelu, x);
        }
        let fp = sess.fixed();
        let f = fp.frac();
        let sq = p_square(sess, x)?;
        let x2 = p_trunc(sess, &sq, f)?;
        let x3 = p_mul_trunc(sess, &x2, x, f)?;
        let cubic = p_trunc(sess, &x3.mul_scalar(constant(&fp, math::GELU_CUBIC, f)), f)?;
        let inner = x.add(&cubic)?;
        let arg = p_trunc(sess, &inner.mul_scalar(constant(&fp, math::SQRT_2_OVER_PI, f)), f)?;
        let th = p_tanh(sess, &arg)?.add_scalar(fp.one());
        let prod = p_elemul(sess, x, &th)?;
        p_trunc(sess, &prod, f + 1)
    })
}

/// ReLU in the activation slot.
pub fn relu_activation(sess: &mut Session, x: &ShareTensor) -> Result<ShareTensor> {
    sess.scoped(Category::Gelu, |sess| p_relu(sess, x))
}

/// `num / den` row-wise for a `[rows, 1]` denominator share in `[lo, hi]`.
/// The result has `f` fractional bits.
fn normalize_rows(
    sess: &mut Session,
    num: &ShareTensor,
    den: &ShareTensor,
    lo: f64,
    hi: f64,
) -> Result<ShareTensor> {
    let fp = sess.fixed();
    let frac = internal_frac(&fp);
    let r = if lo >= 1.0 {
        p_recip_frac(sess, den, lo, hi, frac)?
    } else {
        // A single Newton run over [lo, hi] would have to drop to a coarse
        // internal scale to keep 1/lo in range. Run [lo, 1] and [1, hi]
        // separately and pick one with a comparison against 1.
        let small = p_recip_frac(sess, den, lo, 1.0, frac)?;
        let large = p_recip_frac(sess, den, 1.0, hi.max(1.0), frac)?;
        let ge_one = p_drelu(sess, &den.add_scalar(fp.neg(fp.one())))?;
        mux(sess, &ge_one, &large.sub(&small)?)?.add(&small)?
    };
    let r = r.broadcast_columns(num.dims2().1);
    p_mul_trunc(sess, num, &r, frac)
}

/// Row-wise softmax of a `[rows, n]` share.
pub fn softmax_protocol(sess: &mut Session, x: &ShareTensor) -> Result<ShareTensor> {
    sess.scoped(Category::Softmax, |sess| {
        if ideal(sess) {
            return ideal_eval(sess, IdealFn::Softmax, x);
        }
        let n = x.dims2().1;
        let m = p_max(sess, x)?;
        let d = x.sub(&m.broadcast_columns(n))?;
        let e = p_exp(sess, &d)?;
        let s = e.row_sums();
        normalize_rows(sess, &e, &s, 1.0, n as f64)
    })
}

/// `relu(x_i) / (sum_j relu(x_j) + eps)` row-wise.
pub fn softmax_sub_protocol(sess: &mut Session, x: &ShareTensor, eps: u64) -> Result<ShareTensor> {
    sess.scoped(Category::Softmax, |sess| {
        let fp = sess.fixed();
        if ideal(sess) {
            let eps = fp.decode_raw(eps);
            return ideal_eval(sess, IdealFn::SoftmaxSub { eps }, x);
        }
        let n = x.dims2().1;
        let r = p_relu(sess, x)?;
        let s = r.row_sums().add_scalar(eps);
        let lo = fp.decode_raw(eps).max(fp.decode_raw(1));
        normalize_rows(sess, &r, &s, lo, n as f64 * BOUND)
    })
}

/// Per-row mean of an `[rows, E]` share, shape `[rows, 1]`.
fn row_mean(sess: &mut Session, x: &ShareTensor) -> Result<ShareTensor> {
    let fp = sess.fixed();
    let e = x.dims2().1;
    let inv = constant(&fp, 1.0 / e as f64, fp.frac());
    p_trunc(sess, &x.row_sums().mul_scalar(inv), fp.frac())
}

/// Multiplies by the server's `gamma` (entered as the server's half of a
/// sharing `(0, gamma)`), truncates by `shift` and adds `beta`.
fn affine(
    sess: &mut Session,
    x: &ShareTensor,
    gamma: &[u64],
    beta: &[u64],
    shift: u32,
) -> Result<ShareTensor> {
    let g = server_rows(sess, x, gamma)?;
    let prod = p_elemul(sess, x, &g)?;
    let y = p_trunc(sess, &prod, shift)?;
    y.add(&server_rows(sess, &y, beta)?)
}

fn check_affine(x: &ShareTensor, affine: &AffineParams) -> Result<()> {
    if x.dims2().1 != affine.dim() {
        return Err(Error::Shape {
            expected: vec![x.dims2().0, affine.dim()],
            got: x.shape().to_vec(),
        });
    }
    Ok(())
}

/// Row-wise LayerNorm of an `[rows, E]` share.
pub fn layernorm_protocol(sess: &mut Session, x: &ShareTensor, affine_p: &AffineParams) -> Result<ShareTensor> {
    check_affine(x, affine_p)?;
    sess.scoped(Category::LayerNorm, |sess| {
        let fp = sess.fixed();
        let f = fp.frac();
        let e = x.dims2().1;
        let normed = if ideal(sess) {
            let eps = fp.decode_raw(affine_p.epsilon_ln).max(EPSILON_LN);
            ideal_eval(sess, IdealFn::Normalize { eps }, x)?
        } else {
            let mean = row_mean(sess, x)?;
            let c = x.sub(&mean.broadcast_columns(e))?;
            let sq = p_square(sess, &c)?;
            let sq = p_trunc(sess, &sq, f)?;
            let var = row_mean(sess, &sq)?.add_scalar(affine_p.epsilon_ln);
            let lo = fp.decode_raw(affine_p.epsilon_ln.max(1));
            let r = p_rsqrt(sess, &var, lo, BOUND * BOUND)?;
            // The numerator is centred exactly as `E x - sum(x)` so that a
            // constant row gives exactly zero however large `r` gets; `1/E`
            // is folded into `r` at `f + k` bits.
            let k = e.next_power_of_two().trailing_zeros();
            let r_e = p_trunc(sess, &r.mul_scalar(constant(&fp, 1.0 / e as f64, f + k)), f)?;
            let exact = x.mul_scalar(e as u64).sub(&x.row_sums().broadcast_columns(e))?;
            p_mul_trunc(sess, &exact, &r_e.broadcast_columns(e), f + k)?
        };
        affine(sess, &normed, &affine_p.gamma, &affine_p.beta, f)
    })
}

/// `(x - mean) gamma + beta` row-wise.
///
/// Centering is done exactly as `E x - sum(x)`; the server folds `1/E`
/// into `gamma` at `f + ceil(log2 E)` bits so the only rounding is the
/// final truncation.
pub fn layernorm_sub_protocol(sess: &mut Session, x: &ShareTensor, affine_p: &AffineParams) -> Result<ShareTensor> {
    check_affine(x, affine_p)?;
    sess.scoped(Category::LayerNorm, |sess| {
        let fp = sess.fixed();
        let e = x.dims2().1;
        let extra = e.next_power_of_two().trailing_zeros();
        let c = x.mul_scalar(e as u64).sub(&x.row_sums().broadcast_columns(e))?;
        let scale = (1u64 << extra) as f64 / e as f64;
        let gamma: Vec<u64> = affine_p
            .gamma
            .iter()
            .map(|&g| fp.from_signed((fp.to_signed(g) as f64 * scale).round() as i64))
            .collect();
        affine(sess, &c, &gamma, &affine_p.beta, fp.frac() + extra)
    })
}

/// Dispatches the attention normalization for a variant.
pub fn attention_norm(
    sess: &mut Session,
    norm: AttentionNorm,
    x: &ShareTensor,
    eps: u64,
) -> Result<ShareTensor> {
    match norm {
        AttentionNorm::Softmax => softmax_protocol(sess, x),
        AttentionNorm::SoftmaxSub => softmax_sub_protocol(sess, x, eps),
    }
}

pub fn activation(sess: &mut Session, act: Activation, x: &ShareTensor) -> Result<ShareTensor> {
    match act {
        Activation::Gelu => gelu_protocol(sess, x),
        Activation::Relu => relu_activation(sess, x),
    }
}

pub fn norm(sess: &mut Session, kind: Norm, x: &ShareTensor, affine_p: &AffineParams) -> Result<ShareTensor> {
    match kind {
        Norm::Layernorm => layernorm_protocol(sess, x, affine_p),
        Norm::LayernormSub => layernorm_sub_protocol(sess, x, affine_p),
    }
}
