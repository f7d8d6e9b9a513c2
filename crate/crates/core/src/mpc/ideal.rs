//! Ideal-functionality backend: the client reveals its half to the server,
//! which evaluates in double precision and re-shares the result.
//!
//! This provides no privacy at all and exists only for differential tests.

use super::session::{Backend, Party, Session};
use super::share::{split_local, ShareTensor};
use super::transport::Tag;
use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IdealFn {
    Relu,
    Exp,
    /// `1/x`, encoded with `out_frac` fractional bits.
    Recip { out_frac: u32 },
    Rsqrt,
    Tanh,
    Gelu,
    /// Row maximum of a 2-D tensor; output shape `[rows, 1]`.
    Max,
    Softmax,
    SoftmaxSub { eps: f64 },
    /// Row normalization `(x - mean) / sqrt(var + eps)`.
    Normalize { eps: f64 },
}

impl IdealFn {
    fn rowwise(self) -> bool {
        matches!(
            self,
            IdealFn::Max | IdealFn::Softmax | IdealFn::SoftmaxSub { .. } | IdealFn::Normalize { .. }
        )
    }

    fn scalar(self, x: f64) -> f64 {
        match self {
            IdealFn::Relu => math::relu(x),
            IdealFn::Exp => x.exp(),
            IdealFn::Recip { .. } => 1.0 / x,
            IdealFn::Rsqrt => 1.0 / x.sqrt(),
            IdealFn::Tanh => x.tanh(),
            IdealFn::Gelu => math::gelu(x),
            _ => unreachable!("row function"),
        }
    }

    fn row(self, row: &[f64]) -> Vec<f64> {
        match self {
            IdealFn::Max => vec![row.iter().copied().fold(f64::NEG_INFINITY, f64::max)],
            IdealFn::Softmax => math::softmax(row),
            IdealFn::SoftmaxSub { eps } => math::softmax_sub(row, eps),
            IdealFn::Normalize { eps } => math::normalize(row, eps),
            _ => unreachable!("scalar function"),
        }
    }
}

/// Evaluates `f` on a shared input through the insecure oracle.
pub fn ideal_eval(sess: &mut Session, f: IdealFn, x: &ShareTensor) -> Result<ShareTensor> {
    if sess.backend() != Backend::Ideal {
        return Err(Error::Config(
            "ideal evaluation requested on a crypto-backend session".into(),
        ));
    }
    sess.mark_insecure();
    let fp = sess.fixed();
    let out_shape = match f {
        IdealFn::Max => vec![x.dims2().0, 1],
        _ => x.shape().to_vec(),
    };
    let out_len: usize = out_shape.iter().product();
    sess.tagged(Tag::Control, |sess| match sess.party() {
        Party::Client => {
            sess.send_elems(Tag::Control, x.data())?;
            let mine = sess.recv_elems(Tag::Control, out_len)?;
            x.from_data(out_shape, mine)
        }
        Party::Server => {
            let peer = sess.recv_elems(Tag::Control, x.len())?;
            let plain: Vec<f64> = x
                .data()
                .iter()
                .zip(&peer)
                .map(|(&a, &b)| fp.decode_raw(fp.add(a, b)))
                .collect();
            let values: Vec<f64> = if f.rowwise() {
                let cols = x.dims2().1;
                plain.chunks(cols).flat_map(|r| f.row(r)).collect()
            } else {
                plain.iter().map(|&v| f.scalar(v)).collect()
            };
            let frac = match f {
                IdealFn::Recip { out_frac } => out_frac,
                _ => fp.frac(),
            };
            let encoded: Vec<u64> = values
                .iter()
                .map(|&v| fp.from_signed((v * (1u64 << frac) as f64).floor() as i64))
                .collect();
            let (mine, theirs) = split_local(&encoded, &fp, sess.rng());
            sess.send_elems(Tag::Control, &theirs)?;
            x.from_data(out_shape, mine)
        }
    })
}
