//! Nonlinear primitives on fixed-point shares: ReLU, max, exp, reciprocal,
//! inverse square root and tanh.
//!
//! Polynomial and Newton steps run at a finer internal scale
//! (`(ell - 3) / 2` fractional bits) where the headroom allows it, so that
//! the products of two internal values still fit below `2^(ell-2)`.

use super::arith::{p_mul_trunc, p_square, p_trunc};
use super::compare::{mux, p_drelu};
use super::ideal::{ideal_eval, IdealFn};
use super::session::{Backend, Session};
use super::share::ShareTensor;
use super::transport::Tag;
use crate::error::{Error, Result};
use crate::fixed::FixedPointParams;

/// Input domain of [`p_exp`] is `[-EXP_BOUND, 0]`.
pub const EXP_BOUND: f64 = 32.0;
/// Number of squarings in [`p_exp`]: `log2(EXP_BOUND)`.
pub const EXP_SQUARINGS: u32 = 5;
/// Newton iterations in [`p_rsqrt`].
pub const RSQRT_ITERS: usize = 25;
/// [`p_tanh`] saturates its argument at this magnitude.
pub const TANH_CLAMP: f64 = 16.0;

/// Internal fractional bits for polynomial and Newton evaluation.
pub fn internal_frac(fp: &FixedPointParams) -> u32 {
    (fp.ell() - 3) / 2
}

fn ideal(sess: &Session) -> bool {
    sess.backend() == Backend::Ideal
}

/// Public real constant at `frac` fractional bits, rounded to nearest.
fn constant(fp: &FixedPointParams, x: f64, frac: u32) -> u64 {
    fp.from_signed((x * (1u64 << frac) as f64).round() as i64)
}

/// Rescales a share from `from` to `to` fractional bits.
fn rescale(sess: &mut Session, x: &ShareTensor, from: u32, to: u32) -> Result<ShareTensor> {
    if to >= from {
        Ok(x.mul_scalar(1u64 << (to - from)))
    } else {
        p_trunc(sess, x, from - to)
    }
}

pub fn p_relu(sess: &mut Session, x: &ShareTensor) -> Result<ShareTensor> {
    if ideal(sess) {
        return ideal_eval(sess, IdealFn::Relu, x);
    }
    sess.tagged(Tag::Relu, |sess| {
        let b = p_drelu(sess, x)?;
        mux(sess, &b, x)
    })
}

/// Row maxima of a `[rows, n]` share by a tournament of
/// `max(a, b) = b + relu(a - b)`; `ceil(log2 n)` comparison rounds.
pub fn p_max(sess: &mut Session, x: &ShareTensor) -> Result<ShareTensor> {
    let (rows, n) = x.dims2();
    if n == 0 {
        return Err(Error::Params("max of an empty vector".into()));
    }
    if ideal(sess) {
        return ideal_eval(sess, IdealFn::Max, x);
    }
    sess.tagged(Tag::Max, |sess| {
        let mut cols: Vec<Vec<u64>> = (0..n)
            .map(|c| (0..rows).map(|r| x.data()[r * n + c]).collect())
            .collect();
        while cols.len() > 1 {
            let pairs = cols.len() / 2;
            let mut a = Vec::with_capacity(pairs * rows);
            let mut b = Vec::with_capacity(pairs * rows);
            for p in 0..pairs {
                a.extend_from_slice(&cols[2 * p]);
                b.extend_from_slice(&cols[2 * p + 1]);
            }
            let a = x.from_data(vec![pairs * rows], a)?;
            let b = x.from_data(vec![pairs * rows], b)?;
            let m = b.add(&p_relu(sess, &a.sub(&b)?)?)?;
            let mut next: Vec<Vec<u64>> = m.data().chunks(rows).map(|c| c.to_vec()).collect();
            if cols.len() % 2 == 1 {
                next.push(cols.pop().expect("odd column"));
            }
            cols = next;
        }
        x.from_data(vec![rows, 1], cols.pop().expect("one column"))
    })
}

/// `e^x` for `x` in `[-EXP_BOUND, 0]`: scale down by `2^EXP_SQUARINGS`,
/// evaluate the cubic Taylor polynomial, then square repeatedly.
pub fn p_exp(sess: &mut Session, x: &ShareTensor) -> Result<ShareTensor> {
    if ideal(sess) {
        return ideal_eval(sess, IdealFn::Exp, x);
    }
    sess.tagged(Tag::Exp, |sess| {
        let fp = sess.fixed();
        let f = fp.frac();
        let hi = internal_frac(&fp);
        // y = x / 2^d at `hi` fractional bits.
        let y = if hi >= f + EXP_SQUARINGS {
            x.mul_scalar(1u64 << (hi - f - EXP_SQUARINGS))
        } else {
            p_trunc(sess, x, f + EXP_SQUARINGS - hi)?
        };
        let one = 1u64 << hi;
        // Horner: 1 + y(1 + y(1/2 + y/6)).
        let mut h = p_trunc(sess, &y.mul_scalar(constant(&fp, 1.0 / 6.0, hi)), hi)?;
        h = h.add_scalar(one >> 1);
        h = p_mul_trunc(sess, &y, &h, hi)?.add_scalar(one);
        h = p_mul_trunc(sess, &y, &h, hi)?.add_scalar(one);
        for i in 0..EXP_SQUARINGS {
            let shift = if i + 1 == EXP_SQUARINGS { hi + hi - f } else { hi };
            let sq = p_square(sess, &h)?;
            h = p_trunc(sess, &sq, shift)?;
        }
        if EXP_SQUARINGS == 0 {
            h = rescale(sess, &h, hi, f)?;
        }
        Ok(h)
    })
}

/// Newton iteration count for `1/x` on `[lo, hi]` from `y0 = 2/(lo+hi)`.
pub fn recip_iterations(lo: f64, hi: f64, frac: u32) -> usize {
    let e0 = (hi - lo) / (hi + lo);
    if e0 <= 0.0 {
        return 1;
    }
    let need = (-(frac as f64) * std::f64::consts::LN_2) / e0.ln();
    (need.log2().ceil().max(0.0) as usize) + 2
}

/// `1/x` at `f` fractional bits for `x` in the public range `[lo, hi]`.
pub fn p_recip(sess: &mut Session, x: &ShareTensor, lo: f64, hi: f64) -> Result<ShareTensor> {
    let f = sess.fixed().frac();
    p_recip_frac(sess, x, lo, hi, f)
}

/// `1/x` with `out_frac` fractional bits in the result.
pub fn p_recip_frac(sess: &mut Session, x: &ShareTensor, lo: f64, hi: f64, out_frac: u32) -> Result<ShareTensor> {
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::Params(format!("reciprocal range [{lo}, {hi}] must be positive")));
    }
    if ideal(sess) {
        return ideal_eval(sess, IdealFn::Recip { out_frac }, x);
    }
    sess.tagged(Tag::Recip, |sess| {
        let fp = sess.fixed();
        let f = fp.frac();
        // y <= 1/lo and y * (2 - xy) must stay below 2^(ell-2) at 2F bits.
        let limit = ((fp.ell() as f64 - 2.0 + lo.log2()) / 2.0).ceil() as i64 - 1;
        let big_f = (internal_frac(&fp) as i64).min(limit).max(1) as u32;
        let two = 2u64 << big_f;
        let y0 = constant(&fp, 2.0 / (lo + hi), big_f);
        let iters = recip_iterations(lo, hi, f);

        let e = p_trunc(sess, &x.mul_scalar(y0), f)?;
        let t = e.neg().add_scalar(two);
        let mut y = p_trunc(sess, &t.mul_scalar(y0), big_f)?;
        for _ in 1..iters {
            let e = p_mul_trunc(sess, x, &y, f)?;
            let t = e.neg().add_scalar(two);
            y = p_mul_trunc(sess, &y, &t, big_f)?;
        }
        rescale(sess, &y, big_f, out_frac)
    })
}

/// `1/sqrt(x)` for `x` in `[lo, hi]` via `y <- y (3 - x y^2) / 2` from
/// `y0 = 1/sqrt(hi)`.
pub fn p_rsqrt(sess: &mut Session, x: &ShareTensor, lo: f64, hi: f64) -> Result<ShareTensor> {
    if !(lo >= 0.0 && hi > 0.0 && hi >= lo) {
        return Err(Error::Params(format!("rsqrt range [{lo}, {hi}] is invalid")));
    }
    if ideal(sess) {
        return ideal_eval(sess, IdealFn::Rsqrt, x);
    }
    sess.tagged(Tag::Rsqrt, |sess| {
        let fp = sess.fixed();
        let f = fp.frac();
        let three = 3u64 << f;
        let y0 = constant(&fp, 1.0 / hi.sqrt(), f);
        // x*y first, then *y: never materialises y^2, which can be large.
        let a = p_trunc(sess, &x.mul_scalar(y0), f)?;
        let b = p_trunc(sess, &a.mul_scalar(y0), f)?;
        let c = b.neg().add_scalar(three);
        let mut y = p_trunc(sess, &c.mul_scalar(y0), f + 1)?;
        for _ in 1..RSQRT_ITERS {
            let a = p_mul_trunc(sess, x, &y, f)?;
            let b = p_mul_trunc(sess, &a, &y, f)?;
            let c = b.neg().add_scalar(three);
            y = p_mul_trunc(sess, &y, &c, f + 1)?;
        }
        Ok(y)
    })
}

/// `tanh(x) = sign(x) (1 - u) / (1 + u)` with `u = e^{-2|x|}`; `|x|` is
/// clamped to [`TANH_CLAMP`] first.
pub fn p_tanh(sess: &mut Session, x: &ShareTensor) -> Result<ShareTensor> {
    if ideal(sess) {
        return ideal_eval(sess, IdealFn::Tanh, x);
    }
    sess.tagged(Tag::Tanh, |sess| {
        let fp = sess.fixed();
        let f = fp.frac();
        let hi = internal_frac(&fp);
        let sign = p_drelu(sess, x)?;
        let abs = mux(sess, &sign, x)?.mul_scalar(2).sub(x)?;
        let clamp = constant(&fp, TANH_CLAMP, f);
        let excess = p_relu(sess, &abs.neg().add_scalar(clamp))?;
        let clamped = excess.neg().add_scalar(clamp);
        let u = p_exp(sess, &clamped.mul_scalar(fp.neg(2)))?;
        let one = 1u64 << f;
        let num = u.neg().add_scalar(one);
        let den = u.add_scalar(one);
        let r = p_recip_frac(sess, &den, 1.0, 2.0, hi)?;
        let t = p_mul_trunc(sess, &num, &r, hi)?;
        // sign * t = 2 * mux(b, t) - t.
        mux(sess, &sign, &t)?.mul_scalar(2).sub(&t)
    })
}
