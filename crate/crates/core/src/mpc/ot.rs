//! Oblivious transfer: Chou-Orlandi base OT over Ristretto and IKNP
//! extension, exposed as random OT and correlated OT over `Z_{2^k}`.

use aes::cipher::{generic_array::GenericArray, BlockEncrypt, KeyInit};
use aes::Aes128;
use curve25519_dalek::constants::RISTRETTO_BASEPOINT_TABLE;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::session::Session;
use super::transport::Tag;
use crate::error::{Error, Result};

/// Security parameter: number of base OTs per direction.
const KAPPA: usize = 128;
/// Extension batches are split to bound memory.
const MAX_BATCH: usize = 1 << 20;

fn base_key(index: usize, a: &RistrettoPoint, b: &CompressedRistretto, shared: &RistrettoPoint) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"ptinfer-base-ot");
    h.update((index as u64).to_le_bytes());
    h.update(a.compress().as_bytes());
    h.update(b.as_bytes());
    h.update(shared.compress().as_bytes());
    h.finalize().into()
}

fn keystream(key: &[u8; 32], len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    ChaCha20Rng::from_seed(*key).fill_bytes(&mut out);
    out
}

fn decompress(bytes: &[u8]) -> Result<RistrettoPoint> {
    CompressedRistretto::from_slice(bytes)
        .map_err(|_| Error::Group)?
        .decompress()
        .ok_or(Error::Group)
}

/// Base random OT, sender side: returns `(k0, k1)` per instance.
fn base_rot_send(sess: &mut Session, n: usize) -> Result<Vec<([u8; 32], [u8; 32])>> {
    let a = Scalar::random(sess.rng());
    let big_a = &a * RISTRETTO_BASEPOINT_TABLE;
    let t = a * big_a;
    sess.send(Tag::Ot, big_a.compress().as_bytes().to_vec())?;
    let payload = sess.recv(Tag::Ot)?;
    if payload.len() != 32 * n {
        return Err(Error::Payload {
            tag: Tag::Ot,
            detail: "base OT point count".into(),
        });
    }
    payload
        .chunks_exact(32)
        .enumerate()
        .map(|(i, c)| {
            let b = decompress(c)?;
            let cb = b.compress();
            let ab = a * b;
            Ok((base_key(i, &big_a, &cb, &ab), base_key(i, &big_a, &cb, &(ab - t))))
        })
        .collect()
}

/// Base random OT, receiver side.
fn base_rot_recv(sess: &mut Session, choices: &[bool]) -> Result<Vec<[u8; 32]>> {
    let big_a = decompress(&sess.recv(Tag::Ot)?)?;
    let mut payload = Vec::with_capacity(32 * choices.len());
    let mut keys = Vec::with_capacity(choices.len());
    for (i, &c) in choices.iter().enumerate() {
        let b = Scalar::random(sess.rng());
        let mut point = &b * RISTRETTO_BASEPOINT_TABLE;
        if c {
            point += big_a;
        }
        let cb = point.compress();
        payload.extend_from_slice(cb.as_bytes());
        keys.push(base_key(i, &big_a, &cb, &(b * big_a)));
    }
    sess.send(Tag::Ot, payload)?;
    Ok(keys)
}

/// Chosen-message base OT, sender side. Message pairs must have equal length.
pub fn base_ot_send(sess: &mut Session, msgs: &[(Vec<u8>, Vec<u8>)]) -> Result<()> {
    let keys = base_rot_send(sess, msgs.len())?;
    let mut payload = Vec::new();
    for ((m0, m1), (k0, k1)) in msgs.iter().zip(&keys) {
        if m0.len() != m1.len() {
            return Err(Error::Params("base OT messages must have equal length".into()));
        }
        payload.extend(m0.iter().zip(keystream(k0, m0.len())).map(|(a, b)| a ^ b));
        payload.extend(m1.iter().zip(keystream(k1, m1.len())).map(|(a, b)| a ^ b));
    }
    sess.send(Tag::Ot, payload)
}

/// Chosen-message base OT, receiver side; returns the chosen messages.
pub fn base_ot_recv(sess: &mut Session, choices: &[bool], len: usize) -> Result<Vec<Vec<u8>>> {
    let keys = base_rot_recv(sess, choices)?;
    let payload = sess.recv(Tag::Ot)?;
    if payload.len() != 2 * len * choices.len() {
        return Err(Error::Payload {
            tag: Tag::Ot,
            detail: "base OT ciphertext length".into(),
        });
    }
    Ok(payload
        .chunks_exact(2 * len)
        .zip(choices.iter().zip(&keys))
        .map(|(pair, (&c, k))| {
            let ct = if c { &pair[len..] } else { &pair[..len] };
            ct.iter().zip(keystream(k, len)).map(|(a, b)| a ^ b).collect()
        })
        .collect())
}

/// Fixed-key AES used as a tweakable correlation-robust hash.
#[derive(Clone)]
struct Tccr {
    aes: Aes128,
}

impl Tccr {
    fn new() -> Self {
        Self {
            aes: Aes128::new(GenericArray::from_slice(b"ptinfer-tccr-key")),
        }
    }

    /// `out[j] = pi(pi(x_j) ^ (tweak + j)) ^ pi(x_j)`.
    fn hash(&self, xs: &[u128], tweak: u64) -> Vec<u128> {
        let mut first: Vec<_> = xs
            .iter()
            .map(|x| GenericArray::clone_from_slice(&x.to_le_bytes()))
            .collect();
        self.aes.encrypt_blocks(&mut first);
        let mut second: Vec<_> = first
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let v = u128::from_le_bytes((*b).into()) ^ (tweak + j as u64) as u128;
                GenericArray::clone_from_slice(&v.to_le_bytes())
            })
            .collect();
        self.aes.encrypt_blocks(&mut second);
        first
            .iter()
            .zip(&second)
            .map(|(a, b)| u128::from_le_bytes((*a).into()) ^ u128::from_le_bytes((*b).into()))
            .collect()
    }
}

/// In-place transpose of a 128x128 bit matrix where bit `c` of `a[r]` is
/// entry `(r, c)`.
fn transpose128(a: &mut [u128; 128]) {
    let mut width = 64;
    let mut mask: u128 = u64::MAX as u128;
    while width != 0 {
        let mut k = 0;
        while k < 128 {
            for i in k..k + width {
                let t = ((a[i] >> width) ^ a[i + width]) & mask;
                a[i] ^= t << width;
                a[i + width] ^= t;
            }
            k += 2 * width;
        }
        width >>= 1;
        mask ^= mask << width;
    }
}

/// Transposes 128 column bit-vectors of `m` bits (m a multiple of 128) into
/// `m` rows of 128 bits.
fn columns_to_rows(cols: &[Vec<u8>], m: usize) -> Vec<u128> {
    let mut rows = Vec::with_capacity(m);
    let mut block = [0u128; 128];
    for b in 0..m / 128 {
        for (i, col) in cols.iter().enumerate() {
            block[i] = u128::from_le_bytes(col[16 * b..16 * b + 16].try_into().unwrap());
        }
        transpose128(&mut block);
        rows.extend_from_slice(&block);
    }
    rows
}

fn pack_bits(bits: &[bool], padded: usize) -> Vec<u8> {
    let mut out = vec![0u8; padded / 8];
    for (i, &b) in bits.iter().enumerate() {
        out[i / 8] |= (b as u8) << (i % 8);
    }
    out
}

struct ExtSender {
    delta: u128,
    prgs: Vec<ChaCha20Rng>,
    counter: u64,
}

struct ExtReceiver {
    prgs: Vec<(ChaCha20Rng, ChaCha20Rng)>,
    counter: u64,
}

/// Lazily initialised extension state for both directions.
#[derive(Default)]
pub struct OtState {
    sender: Option<ExtSender>,
    receiver: Option<ExtReceiver>,
    hash: Option<Tccr>,
}

impl OtState {
    fn hasher(&mut self) -> Tccr {
        self.hash.get_or_insert_with(Tccr::new).clone()
    }
}

fn ensure_sender(sess: &mut Session) -> Result<()> {
    if sess.ot.sender.is_some() {
        return Ok(());
    }
    let delta: u128 = sess.rng().gen();
    let choices: Vec<bool> = (0..KAPPA).map(|i| delta >> i & 1 == 1).collect();
    let keys = base_rot_recv(sess, &choices)?;
    sess.ot.sender = Some(ExtSender {
        delta,
        prgs: keys.into_iter().map(ChaCha20Rng::from_seed).collect(),
        counter: 0,
    });
    Ok(())
}

fn ensure_receiver(sess: &mut Session) -> Result<()> {
    if sess.ot.receiver.is_some() {
        return Ok(());
    }
    let keys = base_rot_send(sess, KAPPA)?;
    sess.ot.receiver = Some(ExtReceiver {
        prgs: keys
            .into_iter()
            .map(|(k0, k1)| (ChaCha20Rng::from_seed(k0), ChaCha20Rng::from_seed(k1)))
            .collect(),
        counter: 0,
    });
    Ok(())
}

/// Extension sender: returns `(H(q_j), H(q_j ^ delta))` for `n` OTs.
fn ext_send(sess: &mut Session, n: usize) -> Result<Vec<(u128, u128)>> {
    ensure_sender(sess)?;
    let hasher = sess.ot.hasher();
    let mut out = Vec::with_capacity(n);
    let mut done = 0;
    while done < n {
        let m = (n - done).min(MAX_BATCH);
        let padded = m.div_ceil(128) * 128;
        let u = sess.recv(Tag::Ot)?;
        if u.len() != KAPPA * padded / 8 {
            return Err(Error::Payload {
                tag: Tag::Ot,
                detail: "extension matrix size".into(),
            });
        }
        let st = sess.ot.sender.as_mut().expect("initialised");
        let cols: Vec<Vec<u8>> = st
            .prgs
            .iter_mut()
            .enumerate()
            .map(|(i, prg)| {
                let mut col = vec![0u8; padded / 8];
                prg.fill_bytes(&mut col);
                if st.delta >> i & 1 == 1 {
                    let ui = &u[i * padded / 8..(i + 1) * padded / 8];
                    col.iter_mut().zip(ui).for_each(|(c, x)| *c ^= x);
                }
                col
            })
            .collect();
        let mut q = columns_to_rows(&cols, padded);
        q.truncate(m);
        let q1: Vec<u128> = q.iter().map(|x| x ^ st.delta).collect();
        let tweak = st.counter;
        st.counter += m as u64;
        let h0 = hasher.hash(&q, tweak);
        let h1 = hasher.hash(&q1, tweak);
        out.extend(h0.into_iter().zip(h1));
        done += m;
    }
    Ok(out)
}

/// Extension receiver: returns `H(t_j)` which equals the sender's output for
/// choice `r_j`.
fn ext_recv(sess: &mut Session, choices: &[bool]) -> Result<Vec<u128>> {
    ensure_receiver(sess)?;
    let hasher = sess.ot.hasher();
    let mut out = Vec::with_capacity(choices.len());
    for chunk in choices.chunks(MAX_BATCH) {
        let m = chunk.len();
        let padded = m.div_ceil(128) * 128;
        let r = pack_bits(chunk, padded);
        let st = sess.ot.receiver.as_mut().expect("initialised");
        let mut u = Vec::with_capacity(KAPPA * padded / 8);
        let mut cols = Vec::with_capacity(KAPPA);
        for (p0, p1) in st.prgs.iter_mut() {
            let mut t = vec![0u8; padded / 8];
            let mut g = vec![0u8; padded / 8];
            p0.fill_bytes(&mut t);
            p1.fill_bytes(&mut g);
            u.extend(t.iter().zip(&g).zip(&r).map(|((a, b), c)| a ^ b ^ c));
            cols.push(t);
        }
        let tweak = st.counter;
        st.counter += m as u64;
        let mut rows = columns_to_rows(&cols, padded);
        rows.truncate(m);
        sess.send(Tag::Ot, u)?;
        out.extend(hasher.hash(&rows, tweak));
    }
    Ok(out)
}

/// Random OT, sender side.
pub fn rot_send(sess: &mut Session, n: usize) -> Result<Vec<(u128, u128)>> {
    ext_send(sess, n)
}

/// Random OT, receiver side with chosen `choices`.
pub fn rot_recv(sess: &mut Session, choices: &[bool]) -> Result<Vec<u128>> {
    ext_recv(sess, choices)
}

#[inline]
fn low_mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

fn width_bytes(bits: u32) -> usize {
    bits.div_ceil(8) as usize
}

/// Correlated OT over `Z_{2^{bits_j}}`. The sender learns `m0_j`, the
/// receiver learns `m0_j + c_j * corr_j`.
pub fn cot_send(sess: &mut Session, corr: &[u64], bits: &[u32]) -> Result<Vec<u64>> {
    debug_assert_eq!(corr.len(), bits.len());
    let pads = ext_send(sess, corr.len())?;
    let mut payload = Vec::with_capacity(bits.iter().map(|&b| width_bytes(b)).sum());
    let mut m0 = Vec::with_capacity(corr.len());
    for ((&(h0, h1), &c), &b) in pads.iter().zip(corr).zip(bits) {
        let mask = low_mask(b);
        let x0 = h0 as u64 & mask;
        let d = x0.wrapping_add(c).wrapping_sub(h1 as u64) & mask;
        payload.extend_from_slice(&d.to_le_bytes()[..width_bytes(b)]);
        m0.push(x0);
    }
    sess.send(Tag::Ot, payload)?;
    Ok(m0)
}

pub fn cot_recv(sess: &mut Session, choices: &[bool], bits: &[u32]) -> Result<Vec<u64>> {
    debug_assert_eq!(choices.len(), bits.len());
    let pads = ext_recv(sess, choices)?;
    let payload = sess.recv(Tag::Ot)?;
    let expected: usize = bits.iter().map(|&b| width_bytes(b)).sum();
    if payload.len() != expected {
        return Err(Error::Payload {
            tag: Tag::Ot,
            detail: format!("correlated OT payload {} bytes, expected {expected}", payload.len()),
        });
    }
    let mut pos = 0;
    Ok(pads
        .iter()
        .zip(choices)
        .zip(bits)
        .map(|((&h, &c), &b)| {
            let w = width_bytes(b);
            let mut buf = [0u8; 8];
            buf[..w].copy_from_slice(&payload[pos..pos + w]);
            pos += w;
            let d = u64::from_le_bytes(buf);
            let mask = low_mask(b);
            let base = h as u64 & mask;
            if c {
                base.wrapping_add(d) & mask
            } else {
                base
            }
        })
        .collect())
}

/// 1-of-16 OT on 2-bit messages built from four random OTs per instance.
/// `msgs[j][v]` is the message for choice `v` of instance `j`.
pub fn ot16_send(sess: &mut Session, msgs: &[[u8; 16]]) -> Result<()> {
    let pads = ext_send(sess, 4 * msgs.len())?;
    let hasher = sess.ot.hasher();
    let mut keys = Vec::with_capacity(16 * msgs.len());
    for quad in pads.chunks_exact(4) {
        for v in 0..16usize {
            let mut k = 0u128;
            for (bit, &(k0, k1)) in quad.iter().enumerate() {
                k ^= if v >> bit & 1 == 1 { k1 } else { k0 };
            }
            keys.push(k);
        }
    }
    let masks = hasher.hash(&keys, 1 << 62);
    let mut payload = Vec::with_capacity(4 * msgs.len());
    for (j, row) in msgs.iter().enumerate() {
        let mut word = 0u32;
        for (v, &m) in row.iter().enumerate() {
            let pad = (masks[16 * j + v] & 3) as u32;
            word |= ((m as u32 & 3) ^ pad) << (2 * v);
        }
        payload.extend_from_slice(&word.to_le_bytes());
    }
    sess.send(Tag::Ot, payload)
}

pub fn ot16_recv(sess: &mut Session, choices: &[u8]) -> Result<Vec<u8>> {
    let bits: Vec<bool> = choices
        .iter()
        .flat_map(|&c| (0..4).map(move |b| c >> b & 1 == 1))
        .collect();
    let pads = ext_recv(sess, &bits)?;
    let hasher = sess.ot.hasher();
    let payload = sess.recv(Tag::Ot)?;
    if payload.len() != 4 * choices.len() {
        return Err(Error::Payload {
            tag: Tag::Ot,
            detail: "1-of-16 OT payload length".into(),
        });
    }
    // Only the chosen key is needed, but hashing with the same tweak layout
    // as the sender keeps both sides aligned.
    let keys: Vec<u128> = pads.chunks_exact(4).map(|q| q.iter().fold(0, |a, k| a ^ k)).collect();
    let mut out = Vec::with_capacity(choices.len());
    for (j, (&c, &k)) in choices.iter().zip(&keys).enumerate() {
        let mask = hasher.hash(&[k], (1 << 62) + (16 * j + c as usize) as u64)[0];
        let word = u32::from_le_bytes(payload[4 * j..4 * j + 4].try_into().unwrap());
        out.push(((word >> (2 * c)) as u8 & 3) ^ (mask & 3) as u8);
    }
    Ok(out)
}
