//! Multiplication and truncation on arithmetic shares.
//!
//! Beaver triples come from Gilboa-style oblivious linear evaluation on
//! top of correlated OT: for each bit `j` of the receiver's operand one
//! correlated OT of width `ell - j` carries `x * 2^j`.

use rand::Rng;

use super::cost::Category;
use super::ot::{cot_recv, cot_send};
use super::session::{Party, Session};
use super::share::ShareTensor;
use super::transport::Tag;
use crate::error::{Error, Result};

/// Shares of `x * y` where this party, acting as sender, holds `x`.
fn ole_send(sess: &mut Session, x: &[u64]) -> Result<Vec<u64>> {
    let fp = sess.fixed();
    let ell = fp.ell();
    let mut corr = Vec::with_capacity(x.len() * ell as usize);
    let mut bits = Vec::with_capacity(x.len() * ell as usize);
    for &v in x {
        for j in 0..ell {
            corr.push(v);
            bits.push(ell - j);
        }
    }
    let m0 = cot_send(sess, &corr, &bits)?;
    Ok(m0
        .chunks_exact(ell as usize)
        .map(|row| {
            let acc = row
                .iter()
                .enumerate()
                .fold(0u64, |a, (j, &m)| a.wrapping_add(m << j));
            fp.neg(fp.reduce(acc))
        })
        .collect())
}

/// Shares of `x * y` where this party, acting as receiver, holds `y`.
fn ole_recv(sess: &mut Session, y: &[u64]) -> Result<Vec<u64>> {
    let fp = sess.fixed();
    let ell = fp.ell();
    let mut choices = Vec::with_capacity(y.len() * ell as usize);
    let mut bits = Vec::with_capacity(y.len() * ell as usize);
    for &v in y {
        for j in 0..ell {
            choices.push(v >> j & 1 == 1);
            bits.push(ell - j);
        }
    }
    let out = cot_recv(sess, &choices, &bits)?;
    Ok(out
        .chunks_exact(ell as usize)
        .map(|row| {
            let acc = row
                .iter()
                .enumerate()
                .fold(0u64, |a, (j, &m)| a.wrapping_add(m << j));
            fp.reduce(acc)
        })
        .collect())
}

/// Shares of `x_client * y_server + x_server * y_client`, each party
/// supplying its own `x` and `y`.
fn cross_products(sess: &mut Session, x: &[u64], y: &[u64]) -> Result<Vec<u64>> {
    let fp = sess.fixed();
    let (first, second) = match sess.party() {
        Party::Client => (ole_send(sess, x)?, ole_recv(sess, y)?),
        Party::Server => (ole_recv(sess, y)?, ole_send(sess, x)?),
    };
    Ok(first.iter().zip(&second).map(|(&a, &b)| fp.add(a, b)).collect())
}

/// Shares of a multiplication triple `c = a * b`, one per element.
#[derive(Clone, Debug)]
pub struct BeaverTriples {
    pub a: Vec<u64>,
    pub b: Vec<u64>,
    pub c: Vec<u64>,
}

pub fn beaver_triples(sess: &mut Session, n: usize) -> Result<BeaverTriples> {
    let fp = sess.fixed();
    let mask = fp.mask();
    let a: Vec<u64> = (0..n).map(|_| sess.rng().gen::<u64>() & mask).collect();
    let b: Vec<u64> = (0..n).map(|_| sess.rng().gen::<u64>() & mask).collect();
    let cross = cross_products(sess, &a, &b)?;
    let c = a
        .iter()
        .zip(&b)
        .zip(&cross)
        .map(|((&x, &y), &z)| fp.add(fp.mul(x, y), z))
        .collect();
    Ok(BeaverTriples { a, b, c })
}

/// Shares of `(a, a^2)` pairs; cheaper than a full triple.
pub fn square_pairs(sess: &mut Session, n: usize) -> Result<(Vec<u64>, Vec<u64>)> {
    let fp = sess.fixed();
    let mask = fp.mask();
    let a: Vec<u64> = (0..n).map(|_| sess.rng().gen::<u64>() & mask).collect();
    // a^2 = a0^2 + a1^2 + 2 a0 a1; only one cross product is needed.
    let cross = match sess.party() {
        Party::Client => ole_send(sess, &a)?,
        Party::Server => ole_recv(sess, &a)?,
    };
    let c = a
        .iter()
        .zip(&cross)
        .map(|(&x, &z)| fp.add(fp.mul(x, x), fp.mul(2, z)))
        .collect();
    Ok((a, c))
}

fn check_shapes(x: &ShareTensor, y: &ShareTensor) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::Shape {
            expected: x.shape().to_vec(),
            got: y.shape().to_vec(),
        });
    }
    Ok(())
}

/// Elementwise product of two shared tensors, without truncation.
pub fn p_elemul(sess: &mut Session, x: &ShareTensor, y: &ShareTensor) -> Result<ShareTensor> {
    check_shapes(x, y)?;
    sess.scoped(Category::EleMul, |sess| {
        sess.tagged(Tag::Elemul, |sess| {
            let fp = sess.fixed();
            let n = x.len();
            let t = beaver_triples(sess, n)?;
            let mut open = Vec::with_capacity(2 * n);
            open.extend(x.data().iter().zip(&t.a).map(|(&v, &a)| fp.sub(v, a)));
            open.extend(y.data().iter().zip(&t.b).map(|(&v, &b)| fp.sub(v, b)));
            let peer = sess.exchange_elems(Tag::Elemul, &open)?;
            let server = sess.is_server();
            let data = (0..n)
                .map(|i| {
                    let d = fp.add(open[i], peer[i]);
                    let e = fp.add(open[n + i], peer[n + i]);
                    let mut z = fp.add(t.c[i], fp.add(fp.mul(d, t.b[i]), fp.mul(e, t.a[i])));
                    if server {
                        z = fp.add(z, fp.mul(d, e));
                    }
                    z
                })
                .collect();
            x.from_data(x.shape().to_vec(), data)
        })
    })
}

/// Elementwise square, without truncation.
pub fn p_square(sess: &mut Session, x: &ShareTensor) -> Result<ShareTensor> {
    sess.scoped(Category::EleMul, |sess| {
        sess.tagged(Tag::Elemul, |sess| {
            let fp = sess.fixed();
            let (a, c) = square_pairs(sess, x.len())?;
            let open: Vec<u64> = x.data().iter().zip(&a).map(|(&v, &a)| fp.sub(v, a)).collect();
            let peer = sess.exchange_elems(Tag::Elemul, &open)?;
            let server = sess.is_server();
            let data = (0..x.len())
                .map(|i| {
                    let d = fp.add(open[i], peer[i]);
                    let mut z = fp.add(c[i], fp.mul(fp.mul(2, d), a[i]));
                    if server {
                        z = fp.add(z, fp.mul(d, d));
                    }
                    z
                })
                .collect();
            x.from_data(x.shape().to_vec(), data)
        })
    })
}

/// Local truncation: each party shifts its own half. Fails with
/// probability about `|x| / 2^ell` per element.
pub fn truncate_local(x: &ShareTensor, shift: u32) -> ShareTensor {
    let fp = *x.fixed();
    match x.party() {
        Party::Client => x.map_local(|v| v >> shift),
        Party::Server => x.map_local(|v| fp.neg(fp.neg(v) >> shift)),
    }
}

/// Interactive truncation by `shift` bits for `|x| < 2^(ell-2)`.
///
/// The server offsets its half by `K = 2^(ell-2)` so that the shared value
/// is non-negative; the wrap bit of the two halves is then the OR of their
/// top bits and is converted to arithmetic shares with one correlated OT.
/// The result is `floor(x / 2^shift)` or one more.
pub fn p_trunc(sess: &mut Session, x: &ShareTensor, shift: u32) -> Result<ShareTensor> {
    if shift == 0 {
        return Ok(x.clone());
    }
    let fp = sess.fixed();
    let ell = fp.ell();
    if shift > ell - 2 {
        return Err(Error::Params(format!("truncation by {shift} bits exceeds ring headroom")));
    }
    sess.scoped(Category::Truncation, |sess| {
        sess.tagged(Tag::Trunc, |sess| {
            let top = 1u64 << (ell - shift);
            match sess.party() {
                Party::Server => {
                    let k = 1u64 << (ell - 2);
                    let shifted: Vec<u64> = x.data().iter().map(|&v| fp.add(v, k)).collect();
                    let corr: Vec<u64> = shifted
                        .iter()
                        .map(|&v| if v >> (ell - 1) == 1 { 0 } else { top })
                        .collect();
                    let m0 = cot_send(sess, &corr, &vec![ell; corr.len()])?;
                    let k_shift = k >> shift;
                    let data = shifted
                        .iter()
                        .zip(&m0)
                        .map(|(&v, &m)| {
                            let msb = v >> (ell - 1);
                            let w = fp.sub(fp.mul(msb, top), m);
                            fp.add(fp.sub(fp.sub(v >> shift, w), k_shift), 1)
                        })
                        .collect();
                    x.from_data(x.shape().to_vec(), data)
                }
                Party::Client => {
                    let choices: Vec<bool> = x.data().iter().map(|&v| v >> (ell - 1) == 1).collect();
                    let out = cot_recv(sess, &choices, &vec![ell; choices.len()])?;
                    let data = x
                        .data()
                        .iter()
                        .zip(&out)
                        .map(|(&v, &w)| fp.sub(v >> shift, w))
                        .collect();
                    x.from_data(x.shape().to_vec(), data)
                }
            }
        })
    })
}

/// Elementwise product followed by truncation by `shift` bits.
pub fn p_mul_trunc(sess: &mut Session, x: &ShareTensor, y: &ShareTensor, shift: u32) -> Result<ShareTensor> {
    let z = p_elemul(sess, x, y)?;
    p_trunc(sess, &z, shift)
}
