//! Sign extraction and the Boolean machinery around it.
//!
//! DReLU reduces to the carry of the low `ell - 1` bits of the two halves,
//! which is a millionaires' comparison. The comparison works on 4-bit
//! blocks with one 1-of-16 OT per block and combines the per-block
//! `(greater, equal)` shares up a binary tree of ANDs.

use rand::Rng;

use super::ot::{cot_recv, cot_send, ot16_recv, ot16_send, rot_recv, rot_send};
use super::session::{Party, Session};
use super::share::ShareTensor;
use super::transport::Tag;
use crate::error::{Error, Result};

const BLOCK_BITS: u32 = 4;

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        out[i / 8] |= (b as u8) << (i % 8);
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Result<Vec<bool>> {
    if bytes.len() != n.div_ceil(8) {
        return Err(Error::Payload {
            tag: Tag::Ot,
            detail: "bit vector length".into(),
        });
    }
    Ok((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

/// Boolean triples from two random OTs each (one per direction).
fn bool_triples(sess: &mut Session, n: usize) -> Result<(Vec<bool>, Vec<bool>, Vec<bool>)> {
    let choices: Vec<bool> = (0..n).map(|_| sess.rng().gen()).collect();
    let (sent, got) = match sess.party() {
        Party::Client => (rot_send(sess, n)?, rot_recv(sess, &choices)?),
        Party::Server => {
            let got = rot_recv(sess, &choices)?;
            (rot_send(sess, n)?, got)
        }
    };
    let mut a = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    for i in 0..n {
        let s0 = sent[i].0 & 1 == 1;
        let s1 = sent[i].1 & 1 == 1;
        let ai = s0 ^ s1;
        let w = got[i] & 1 == 1;
        a.push(ai);
        c.push((ai & choices[i]) ^ s0 ^ w);
    }
    Ok((a, choices, c))
}

/// Shares of `x AND y` for XOR-shared bit vectors.
pub fn and_bits(sess: &mut Session, x: &[bool], y: &[bool]) -> Result<Vec<bool>> {
    let n = x.len();
    debug_assert_eq!(n, y.len());
    if n == 0 {
        return Ok(Vec::new());
    }
    let (a, b, c) = bool_triples(sess, n)?;
    let mut open: Vec<bool> = x.iter().zip(&a).map(|(&v, &m)| v ^ m).collect();
    open.extend(y.iter().zip(&b).map(|(&v, &m)| v ^ m));
    let peer = unpack_bits(&sess.exchange(Tag::Ot, pack_bits(&open))?, 2 * n)?;
    let server = sess.is_server();
    Ok((0..n)
        .map(|i| {
            let d = open[i] ^ peer[i];
            let e = open[n + i] ^ peer[n + i];
            c[i] ^ (d & b[i]) ^ (e & a[i]) ^ (server & d & e)
        })
        .collect())
}

/// XOR shares of `[x_server > y_client]` for `bits`-bit unsigned values.
/// The server passes its values in `mine` as `x`, the client as `y`.
pub fn millionaire(sess: &mut Session, mine: &[u64], bits: u32) -> Result<Vec<bool>> {
    let n = mine.len();
    let blocks = bits.div_ceil(BLOCK_BITS) as usize;
    let digit = |v: u64, k: usize| (v >> (BLOCK_BITS as usize * k) & 0xf) as u8;

    // Leaf shares, laid out as [block][element].
    let mut gt = vec![false; n * blocks];
    let mut eq = vec![false; n * blocks];
    match sess.party() {
        Party::Server => {
            let mut msgs = Vec::with_capacity(n * blocks);
            for k in 0..blocks {
                for (i, &v) in mine.iter().enumerate() {
                    let g: bool = sess.rng().gen();
                    let e: bool = sess.rng().gen();
                    gt[k * n + i] = g;
                    eq[k * n + i] = e;
                    let d = digit(v, k);
                    msgs.push(std::array::from_fn(|c| {
                        let c = c as u8;
                        ((g ^ (d > c)) as u8) | (((e ^ (d == c)) as u8) << 1)
                    }));
                }
            }
            ot16_send(sess, &msgs)?;
        }
        Party::Client => {
            let choices: Vec<u8> = (0..blocks)
                .flat_map(|k| mine.iter().map(move |&v| digit(v, k)))
                .collect();
            let got = ot16_recv(sess, &choices)?;
            for (j, m) in got.into_iter().enumerate() {
                gt[j] = m & 1 == 1;
                eq[j] = m >> 1 & 1 == 1;
            }
        }
    }

    // Combine adjacent blocks, low block first.
    let mut level = blocks;
    while level > 1 {
        let pairs = level / 2;
        let last = level == 2;
        let mut lhs = Vec::with_capacity(2 * pairs * n);
        let mut rhs = Vec::with_capacity(2 * pairs * n);
        for p in 0..pairs {
            let (lo, hi) = (2 * p * n, (2 * p + 1) * n);
            lhs.extend_from_slice(&eq[hi..hi + n]);
            rhs.extend_from_slice(&gt[lo..lo + n]);
        }
        if !last {
            for p in 0..pairs {
                let (lo, hi) = (2 * p * n, (2 * p + 1) * n);
                lhs.extend_from_slice(&eq[hi..hi + n]);
                rhs.extend_from_slice(&eq[lo..lo + n]);
            }
        }
        let prod = and_bits(sess, &lhs, &rhs)?;
        let next = level.div_ceil(2);
        let mut ngt = vec![false; next * n];
        let mut neq = vec![false; next * n];
        for p in 0..pairs {
            let hi = (2 * p + 1) * n;
            for i in 0..n {
                ngt[p * n + i] = gt[hi + i] ^ prod[p * n + i];
                if !last {
                    neq[p * n + i] = prod[(pairs + p) * n + i];
                }
            }
        }
        if level % 2 == 1 {
            let src = (level - 1) * n;
            ngt[pairs * n..].copy_from_slice(&gt[src..src + n]);
            neq[pairs * n..].copy_from_slice(&eq[src..src + n]);
        }
        gt = ngt;
        eq = neq;
        level = next;
    }
    gt.truncate(n);
    Ok(gt)
}

/// XOR shares of DReLU(x): 1 when the signed value is non-negative.
pub fn p_drelu(sess: &mut Session, x: &ShareTensor) -> Result<Vec<bool>> {
    sess.tagged(Tag::Relu, |sess| {
        let fp = sess.fixed();
        let ell = fp.ell();
        let low_mask = (1u64 << (ell - 1)) - 1;
        let server = sess.is_server();
        // carry = [low_s + low_c >= 2^(ell-1)] = [low_s > 2^(ell-1) - 1 - low_c].
        let operands: Vec<u64> = x
            .data()
            .iter()
            .map(|&v| if server { v & low_mask } else { low_mask - (v & low_mask) })
            .collect();
        let carry = millionaire(sess, &operands, ell - 1)?;
        Ok(x
            .data()
            .iter()
            .zip(carry)
            .map(|(&v, c)| (v >> (ell - 1) == 1) ^ c ^ server)
            .collect())
    })
}

/// Arithmetic shares of an XOR-shared bit.
pub fn b2a(sess: &mut Session, bits: &[bool]) -> Result<Vec<u64>> {
    let fp = sess.fixed();
    let ell = vec![fp.ell(); bits.len()];
    match sess.party() {
        Party::Server => {
            let corr: Vec<u64> = bits.iter().map(|&b| if b { fp.neg(1) } else { 1 }).collect();
            let m0 = cot_send(sess, &corr, &ell)?;
            Ok(bits.iter().zip(m0).map(|(&b, m)| fp.sub(b as u64, m)).collect())
        }
        Party::Client => cot_recv(sess, bits, &ell),
    }
}

/// Shares of `b * x` for an XOR-shared bit `b`.
pub fn mux(sess: &mut Session, bits: &[bool], x: &ShareTensor) -> Result<ShareTensor> {
    let fp = sess.fixed();
    if bits.len() != x.len() {
        return Err(Error::Shape {
            expected: vec![x.len()],
            got: vec![bits.len()],
        });
    }
    let ell = vec![fp.ell(); bits.len()];
    // b * x_p = (b_p ^ b_q) * x_p: party p sends with correlation (1 - 2 b_p) x_p.
    let corr: Vec<u64> = bits
        .iter()
        .zip(x.data())
        .map(|(&b, &v)| if b { fp.neg(v) } else { v })
        .collect();
    let own = |m0: Vec<u64>| -> Vec<u64> {
        bits.iter()
            .zip(x.data())
            .zip(m0)
            .map(|((&b, &v), m)| fp.sub(if b { v } else { 0 }, m))
            .collect()
    };
    let (mine, theirs) = match sess.party() {
        Party::Server => {
            let a = own(cot_send(sess, &corr, &ell)?);
            (a, cot_recv(sess, bits, &ell)?)
        }
        Party::Client => {
            let b = cot_recv(sess, bits, &ell)?;
            (own(cot_send(sess, &corr, &ell)?), b)
        }
    };
    let data = mine.iter().zip(&theirs).map(|(&a, &b)| fp.add(a, b)).collect();
    x.from_data(x.shape().to_vec(), data)
}
