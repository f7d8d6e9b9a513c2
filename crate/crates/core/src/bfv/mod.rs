//! Secret-key BFV over `Z_q[X]/(X^N + 1)` with an RNS modulus of three
//! word-size primes. Only what polynomial-encoded matrix multiplication
//! needs is provided: encryption, decryption, ciphertext/plaintext addition
//! and plaintext-ciphertext multiplication.

pub mod ntt;

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::fixed::FixedPointParams;
use ntt::{add_mod, inv_mod, mul_mod, ntt_primes, sub_mod, NttTable};

/// Bit size of each RNS prime.
pub const PRIME_BITS: u32 = 60;
/// Number of RNS primes; `q` is about 180 bits.
pub const PRIME_COUNT: usize = 3;
/// Binomial parameter of the error distribution (standard deviation `sqrt(21/2) ~ 3.24`).
const CBD_ETA: u32 = 21;

/// Ring parameters and all derived constants.
#[derive(Debug)]
pub struct BfvParams {
    degree: usize,
    plain: FixedPointParams,
    moduli: Vec<u64>,
    tables: Vec<NttTable>,
    /// `floor(q / t) mod p_i`.
    delta: Vec<u64>,
    /// `((q / p_i)^{-1}) mod p_i` for CRT scaling at decryption.
    crt_inv: Vec<u64>,
}

impl BfvParams {
    pub fn new(degree: usize, plain: FixedPointParams) -> Result<Arc<Self>> {
        if !degree.is_power_of_two() || !(1024..=32768).contains(&degree) {
            return Err(Error::Params(format!(
                "polynomial degree {degree} must be a power of two in [1024, 32768]"
            )));
        }
        let moduli = ntt_primes(PRIME_BITS, degree, PRIME_COUNT);
        let tables = moduli.iter().map(|&p| NttTable::new(p, degree)).collect();

        // q mod t with t a power of two is a wrapping product.
        let q_mod_t = moduli
            .iter()
            .fold(1u64, |acc, &p| acc.wrapping_mul(p))
            & plain.mask();
        let delta = moduli
            .iter()
            .map(|&p| {
                // floor(q/t) = (q - (q mod t)) / t and q = 0 mod p.
                let t_inv = inv_mod(plain.modulus() % p, p);
                mul_mod(sub_mod(0, q_mod_t % p, p), t_inv, p)
            })
            .collect();
        let crt_inv = moduli
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let star = moduli
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .fold(1u64, |acc, (_, &pj)| mul_mod(acc, pj % p, p));
                inv_mod(star, p)
            })
            .collect();
        Ok(Arc::new(Self {
            degree,
            plain,
            moduli,
            tables,
            delta,
            crt_inv,
        }))
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn plain(&self) -> &FixedPointParams {
        &self.plain
    }

    #[inline]
    pub fn moduli(&self) -> &[u64] {
        &self.moduli
    }

    /// Total bit length of `q`.
    pub fn q_bits(&self) -> f64 {
        self.moduli.iter().map(|&p| (p as f64).log2()).sum()
    }

    /// Wire bytes of one coefficient across all primes.
    pub fn coeff_row_bytes(&self) -> usize {
        8 * self.moduli.len()
    }

    /// Lifts a plaintext into NTT form modulo every prime (centered lift).
    pub fn plain_to_ntt(&self, m: &PlainPoly) -> NttPlain {
        let n = self.degree;
        let mut data = vec![0u64; n * self.moduli.len()];
        for (i, (&p, table)) in self.moduli.iter().zip(&self.tables).enumerate() {
            let dst = &mut data[i * n..(i + 1) * n];
            for (d, &c) in dst.iter_mut().zip(&m.coeffs) {
                let s = self.plain.to_signed(c);
                *d = if s >= 0 { s as u64 } else { p - (-s) as u64 };
            }
            table.forward(dst);
        }
        NttPlain { data }
    }

    fn scaled_plain(&self, m: &PlainPoly, prime: usize) -> impl Iterator<Item = u64> + '_ {
        let p = self.moduli[prime];
        let d = self.delta[prime];
        let coeffs = m.coeffs.clone();
        coeffs.into_iter().map(move |c| mul_mod(c % p, d, p))
    }
}

/// Plaintext polynomial over `Z_t`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlainPoly {
    pub coeffs: Vec<u64>,
}

impl PlainPoly {
    pub fn zero(degree: usize) -> Self {
        Self {
            coeffs: vec![0; degree],
        }
    }

    pub fn from_coeffs(coeffs: Vec<u64>, degree: usize) -> Result<Self> {
        if coeffs.len() != degree {
            return Err(Error::Shape {
                expected: vec![degree],
                got: vec![coeffs.len()],
            });
        }
        Ok(Self { coeffs })
    }

    pub fn monomial(degree: usize, exp: usize, coeff: u64) -> Self {
        let mut p = Self::zero(degree);
        p.coeffs[exp] = coeff;
        p
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len()
    }
}

/// Plaintext already lifted and transformed for multiplication.
#[derive(Clone, Debug)]
pub struct NttPlain {
    data: Vec<u64>,
}

/// Ternary secret key with its per-prime NTT form.
#[derive(Clone)]
pub struct SecretKey {
    seed: u64,
    coeffs: Vec<i8>,
    ntt: Vec<u64>,
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecretKey").field("seed", &self.seed).finish_non_exhaustive()
    }
}

impl SecretKey {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn coeffs(&self) -> &[i8] {
        &self.coeffs
    }
}

/// Deterministic ternary key generation from `seed`.
pub fn keygen(params: &BfvParams, seed: u64) -> SecretKey {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = params.degree;
    let coeffs: Vec<i8> = (0..n).map(|_| rng.gen_range(-1i8..=1)).collect();
    let mut ntt = vec![0u64; n * params.moduli.len()];
    for (i, (&p, table)) in params.moduli.iter().zip(&params.tables).enumerate() {
        let dst = &mut ntt[i * n..(i + 1) * n];
        for (d, &c) in dst.iter_mut().zip(&coeffs) {
            *d = match c {
                1 => 1,
                -1 => p - 1,
                _ => 0,
            };
        }
        table.forward(dst);
    }
    SecretKey { seed, coeffs, ntt }
}

/// RLWE ciphertext `(c0, c1)` in coefficient form, prime-major layout.
///
/// A compressed ciphertext keeps all of `c1` but only the `c0`
/// coefficients listed in `retained`; decryption is defined only there.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    degree: usize,
    primes: usize,
    c0: Vec<u64>,
    c1: Vec<u64>,
    retained: Option<Vec<usize>>,
}

impl Ciphertext {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn is_compressed(&self) -> bool {
        self.retained.is_some()
    }

    pub fn retained(&self) -> Option<&[usize]> {
        self.retained.as_deref()
    }

    /// Drops every `c0` coefficient not in `keep`.
    pub fn compress(mut self, keep: &[usize]) -> Result<Self> {
        let mut keep: Vec<usize> = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if keep.last().is_some_and(|&k| k >= self.degree) {
            return Err(Error::Ciphertext("retained index out of range".into()));
        }
        if let Some(prev) = &self.retained {
            if keep.iter().any(|k| prev.binary_search(k).is_err()) {
                return Err(Error::Ciphertext("cannot retain a dropped coefficient".into()));
            }
        }
        let mut flags = vec![false; self.degree];
        keep.iter().for_each(|&k| flags[k] = true);
        for chunk in self.c0.chunks_mut(self.degree) {
            for (v, &f) in chunk.iter_mut().zip(&flags) {
                if !f {
                    *v = 0;
                }
            }
        }
        self.retained = Some(keep);
        Ok(self)
    }

    /// Wire size in bytes of [`to_bytes`](Self::to_bytes).
    pub fn wire_len(&self) -> usize {
        let row = 8 * self.primes;
        let c0 = match &self.retained {
            Some(k) => self.degree.div_ceil(8) + k.len() * row,
            None => self.degree * row,
        };
        HEADER_LEN + self.degree * row + c0
    }

    /// Little-endian wire form: `{N: u32, primes: u8, flags: u8}`, then `c1`
    /// per prime, then either the full `c0` or a bitmap plus retained `c0`
    /// coefficients per prime.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        self.write_to(&mut out);
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.degree as u32).to_le_bytes());
        out.push(self.primes as u8);
        out.push(u8::from(self.retained.is_some()));
        for v in &self.c1 {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.retained {
            None => {
                for v in &self.c0 {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Some(keep) => {
                let mut bitmap = vec![0u8; self.degree.div_ceil(8)];
                keep.iter().for_each(|&k| bitmap[k / 8] |= 1 << (k % 8));
                out.extend_from_slice(&bitmap);
                for chunk in self.c0.chunks(self.degree) {
                    for &k in keep {
                        out.extend_from_slice(&chunk[k].to_le_bytes());
                    }
                }
            }
        }
    }

    /// Parses one ciphertext from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn from_bytes(bytes: &[u8], params: &BfvParams) -> Result<(Self, usize)> {
        let bad = |m: &str| Error::Ciphertext(m.to_string());
        if bytes.len() < HEADER_LEN {
            return Err(bad("short header"));
        }
        let degree = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let primes = bytes[4] as usize;
        let flags = bytes[5];
        if degree != params.degree || primes != params.moduli.len() {
            return Err(bad("parameter mismatch"));
        }
        if flags > 1 {
            return Err(bad("unknown flags"));
        }
        let mut pos = HEADER_LEN;
        let read_u64 = |pos: &mut usize| -> Result<u64> {
            let s = bytes.get(*pos..*pos + 8).ok_or_else(|| bad("truncated"))?;
            *pos += 8;
            Ok(u64::from_le_bytes(s.try_into().unwrap()))
        };
        let mut c1 = Vec::with_capacity(degree * primes);
        for i in 0..primes {
            for _ in 0..degree {
                let v = read_u64(&mut pos)?;
                if v >= params.moduli[i] {
                    return Err(bad("coefficient not reduced"));
                }
                c1.push(v);
            }
        }
        let mut c0 = vec![0u64; degree * primes];
        let retained = if flags & 1 == 0 {
            for (i, chunk) in c0.chunks_mut(degree).enumerate() {
                for v in chunk.iter_mut() {
                    *v = read_u64(&mut pos)?;
                    if *v >= params.moduli[i] {
                        return Err(bad("coefficient not reduced"));
                    }
                }
            }
            None
        } else {
            let bm_len = degree.div_ceil(8);
            let bitmap = bytes.get(pos..pos + bm_len).ok_or_else(|| bad("truncated bitmap"))?;
            pos += bm_len;
            let keep: Vec<usize> = (0..degree)
                .filter(|&k| bitmap[k / 8] >> (k % 8) & 1 == 1)
                .collect();
            for (i, chunk) in c0.chunks_mut(degree).enumerate() {
                for &k in &keep {
                    chunk[k] = read_u64(&mut pos)?;
                    if chunk[k] >= params.moduli[i] {
                        return Err(bad("coefficient not reduced"));
                    }
                }
            }
            Some(keep)
        };
        Ok((
            Self {
                degree,
                primes,
                c0,
                c1,
                retained,
            },
            pos,
        ))
    }

    /// Moves the ciphertext into NTT form for repeated plaintext products.
    pub fn to_ntt(&self, params: &BfvParams) -> NttCiphertext {
        let n = self.degree;
        let mut c0 = self.c0.clone();
        let mut c1 = self.c1.clone();
        for (i, table) in params.tables.iter().enumerate() {
            table.forward(&mut c0[i * n..(i + 1) * n]);
            table.forward(&mut c1[i * n..(i + 1) * n]);
        }
        NttCiphertext { c0, c1 }
    }
}

const HEADER_LEN: usize = 6;

/// Ciphertext in NTT form; the server-side accumulator for matrix products.
#[derive(Clone, Debug)]
pub struct NttCiphertext {
    c0: Vec<u64>,
    c1: Vec<u64>,
}

impl NttCiphertext {
    pub fn zero(params: &BfvParams) -> Self {
        let len = params.degree * params.moduli.len();
        Self {
            c0: vec![0; len],
            c1: vec![0; len],
        }
    }

    /// `self += ct * pt`.
    pub fn mul_plain_acc(&mut self, ct: &NttCiphertext, pt: &NttPlain, params: &BfvParams) {
        let n = params.degree;
        for (i, &p) in params.moduli.iter().enumerate() {
            let r = i * n..(i + 1) * n;
            let w = &pt.data[r.clone()];
            for ((acc, &c), &m) in self.c0[r.clone()].iter_mut().zip(&ct.c0[r.clone()]).zip(w) {
                *acc = add_mod(*acc, mul_mod(c, m, p), p);
            }
            for ((acc, &c), &m) in self.c1[r.clone()].iter_mut().zip(&ct.c1[r.clone()]).zip(w) {
                *acc = add_mod(*acc, mul_mod(c, m, p), p);
            }
        }
    }

    pub fn to_coeff(&self, params: &BfvParams) -> Ciphertext {
        let n = params.degree;
        let mut c0 = self.c0.clone();
        let mut c1 = self.c1.clone();
        for (i, table) in params.tables.iter().enumerate() {
            table.inverse(&mut c0[i * n..(i + 1) * n]);
            table.inverse(&mut c1[i * n..(i + 1) * n]);
        }
        Ciphertext {
            degree: n,
            primes: params.moduli.len(),
            c0,
            c1,
            retained: None,
        }
    }
}

fn sample_cbd(rng: &mut impl RngCore) -> i64 {
    let bits = rng.next_u64();
    let mask = (1u64 << CBD_ETA) - 1;
    (bits & mask).count_ones() as i64 - ((bits >> CBD_ETA) & mask).count_ones() as i64
}

/// Fresh symmetric encryption `c0 = -a*s + e + Delta*m`, `c1 = a`.
pub fn encrypt(m: &PlainPoly, sk: &SecretKey, params: &BfvParams, rng: &mut impl Rng) -> Ciphertext {
    let n = params.degree;
    let primes = params.moduli.len();
    let err: Vec<i64> = (0..n).map(|_| sample_cbd(rng)).collect();
    let mut c0 = vec![0u64; n * primes];
    let mut c1 = vec![0u64; n * primes];
    for (i, (&p, table)) in params.moduli.iter().zip(&params.tables).enumerate() {
        let a = &mut c1[i * n..(i + 1) * n];
        a.iter_mut().for_each(|v| *v = rng.gen_range(0..p));
        let mut as_ = a.to_vec();
        table.forward(&mut as_);
        let sk_ntt = &sk.ntt[i * n..(i + 1) * n];
        as_.iter_mut()
            .zip(sk_ntt)
            .for_each(|(x, &s)| *x = mul_mod(*x, s, p));
        table.inverse(&mut as_);
        let dst = &mut c0[i * n..(i + 1) * n];
        for (((d, &x), &e), dm) in dst
            .iter_mut()
            .zip(&as_)
            .zip(&err)
            .zip(params.scaled_plain(m, i))
        {
            let e = if e >= 0 { e as u64 } else { p - (-e) as u64 };
            *d = add_mod(sub_mod(e, x, p), dm, p);
        }
    }
    Ciphertext {
        degree: n,
        primes,
        c0,
        c1,
        retained: None,
    }
}

/// Decrypts; for a compressed ciphertext only retained positions are
/// computed and the rest are left at zero.
pub fn decrypt(ct: &Ciphertext, sk: &SecretKey, params: &BfvParams) -> Result<PlainPoly> {
    let n = params.degree;
    if ct.degree != n || ct.primes != params.moduli.len() {
        return Err(Error::Ciphertext("parameter mismatch".into()));
    }
    let primes = params.moduli.len();
    let mut phase = vec![0u64; n * primes];
    for (i, (&p, table)) in params.moduli.iter().zip(&params.tables).enumerate() {
        let dst = &mut phase[i * n..(i + 1) * n];
        dst.copy_from_slice(&ct.c1[i * n..(i + 1) * n]);
        table.forward(dst);
        dst.iter_mut()
            .zip(&sk.ntt[i * n..(i + 1) * n])
            .for_each(|(x, &s)| *x = mul_mod(*x, s, p));
        table.inverse(dst);
        dst.iter_mut()
            .zip(&ct.c0[i * n..(i + 1) * n])
            .for_each(|(x, &c)| *x = add_mod(*x, c, p));
    }
    let ell = params.plain.ell();
    let mask = params.plain.mask();
    let scale_one = |k: usize| -> Result<u64> {
        let mut int_sum = 0u64;
        let mut frac = 0f64;
        for (i, &p) in params.moduli.iter().enumerate() {
            let y = mul_mod(phase[i * n + k], params.crt_inv[i], p);
            let num = (y as u128) << ell;
            int_sum = int_sum.wrapping_add((num / p as u128) as u64);
            frac += (num % p as u128) as f64 / p as f64;
        }
        let rounded = frac.round();
        if (frac - rounded).abs() > 0.125 {
            return Err(Error::Noise { index: k });
        }
        Ok(int_sum.wrapping_add(rounded as u64) & mask)
    };
    let mut coeffs = vec![0u64; n];
    match &ct.retained {
        Some(keep) => {
            for &k in keep {
                coeffs[k] = scale_one(k)?;
            }
        }
        None => {
            for (k, c) in coeffs.iter_mut().enumerate() {
                *c = scale_one(k)?;
            }
        }
    }
    Ok(PlainPoly { coeffs })
}

fn check_compatible(a: &Ciphertext, b: &Ciphertext) -> Result<()> {
    if a.degree != b.degree || a.primes != b.primes {
        return Err(Error::Shape {
            expected: vec![a.degree, a.primes],
            got: vec![b.degree, b.primes],
        });
    }
    if a.retained.is_some() || b.retained.is_some() {
        return Err(Error::Ciphertext("arithmetic on compressed ciphertexts".into()));
    }
    Ok(())
}

/// Ciphertext addition.
pub fn he_add(a: &Ciphertext, b: &Ciphertext, params: &BfvParams) -> Result<Ciphertext> {
    check_compatible(a, b)?;
    let n = params.degree;
    let mut out = a.clone();
    for (i, &p) in params.moduli.iter().enumerate() {
        let r = i * n..(i + 1) * n;
        out.c0[r.clone()]
            .iter_mut()
            .zip(&b.c0[r.clone()])
            .for_each(|(x, &y)| *x = add_mod(*x, y, p));
        out.c1[r.clone()]
            .iter_mut()
            .zip(&b.c1[r])
            .for_each(|(x, &y)| *x = add_mod(*x, y, p));
    }
    Ok(out)
}

/// Adds (`negate = false`) or subtracts a plaintext.
pub fn he_add_plain(ct: &Ciphertext, m: &PlainPoly, negate: bool, params: &BfvParams) -> Result<Ciphertext> {
    if m.degree() != params.degree || ct.degree != params.degree {
        return Err(Error::Shape {
            expected: vec![params.degree],
            got: vec![m.degree()],
        });
    }
    if ct.retained.is_some() {
        return Err(Error::Ciphertext("arithmetic on compressed ciphertexts".into()));
    }
    let n = params.degree;
    let mut out = ct.clone();
    for (i, &p) in params.moduli.iter().enumerate() {
        let dst = &mut out.c0[i * n..(i + 1) * n];
        for (x, dm) in dst.iter_mut().zip(params.scaled_plain(m, i)) {
            *x = if negate { sub_mod(*x, dm, p) } else { add_mod(*x, dm, p) };
        }
    }
    Ok(out)
}

/// Plaintext-ciphertext product; decrypts to the negacyclic product mod `t`.
pub fn he_mul_plain(ct: &Ciphertext, m: &PlainPoly, params: &BfvParams) -> Result<Ciphertext> {
    if ct.retained.is_some() {
        return Err(Error::Ciphertext("arithmetic on compressed ciphertexts".into()));
    }
    if m.degree() != params.degree {
        return Err(Error::Shape {
            expected: vec![params.degree],
            got: vec![m.degree()],
        });
    }
    let mut acc = NttCiphertext::zero(params);
    acc.mul_plain_acc(&ct.to_ntt(params), &params.plain_to_ntt(m), params);
    Ok(acc.to_coeff(params))
}

/// Schoolbook negacyclic product over `Z_t`; test oracle for the NTT path.
pub fn polymul_reference(a: &PlainPoly, b: &PlainPoly, plain: &FixedPointParams) -> PlainPoly {
    let n = a.degree();
    let mut out = vec![0u64; n];
    for (i, &x) in a.coeffs.iter().enumerate() {
        if x == 0 {
            continue;
        }
        for (j, &y) in b.coeffs.iter().enumerate() {
            let prod = x.wrapping_mul(y);
            let k = i + j;
            if k < n {
                out[k] = out[k].wrapping_add(prod);
            } else {
                out[k - n] = out[k - n].wrapping_sub(prod);
            }
        }
    }
    PlainPoly {
        coeffs: out.into_iter().map(|v| plain.reduce(v)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(n: usize) -> (Arc<BfvParams>, SecretKey, ChaCha20Rng) {
        let params = BfvParams::new(n, FixedPointParams::default()).unwrap();
        let sk = keygen(&params, 42);
        (params, sk, ChaCha20Rng::seed_from_u64(9))
    }

    fn random_poly(n: usize, rng: &mut impl Rng, t: &FixedPointParams) -> PlainPoly {
        PlainPoly {
            coeffs: (0..n).map(|_| rng.gen::<u64>() & t.mask()).collect(),
        }
    }

    #[test]
    fn params_shape() {
        let (params, _, _) = setup(8192);
        assert_eq!(params.moduli().len(), 3);
        assert!(params.q_bits() > 179.0 && params.q_bits() <= 180.0);
        for &p in params.moduli() {
            assert_eq!(p % 16384, 1);
        }
        assert!(BfvParams::new(1000, FixedPointParams::default()).is_err());
        assert!(BfvParams::new(512, FixedPointParams::default()).is_err());
    }

    #[test]
    fn keygen_deterministic_and_ternary() {
        let (params, sk, _) = setup(1024);
        let again = keygen(&params, 42);
        assert_eq!(sk.coeffs(), again.coeffs());
        assert!(sk.coeffs().iter().all(|&c| (-1..=1).contains(&c)));
        for s in 0..100u64 {
            let a = keygen(&params, 1000 + 2 * s);
            let b = keygen(&params, 1001 + 2 * s);
            assert_ne!(a.coeffs(), b.coeffs());
        }
    }

    #[test]
    fn encrypt_decrypt_round_trips() {
        let (params, sk, mut rng) = setup(4096);
        let t = *params.plain();
        let zero = PlainPoly::zero(4096);
        assert_eq!(decrypt(&encrypt(&zero, &sk, &params, &mut rng), &sk, &params).unwrap(), zero);
        for _ in 0..100 {
            let m = random_poly(4096, &mut rng, &t);
            let ct = encrypt(&m, &sk, &params, &mut rng);
            assert_eq!(decrypt(&ct, &sk, &params).unwrap(), m);
        }
    }

    #[test]
    fn additions() {
        let (params, sk, mut rng) = setup(1024);
        let t = *params.plain();
        let m1 = random_poly(1024, &mut rng, &t);
        let m2 = random_poly(1024, &mut rng, &t);
        let c1 = encrypt(&m1, &sk, &params, &mut rng);
        let c2 = encrypt(&m2, &sk, &params, &mut rng);
        let cz = encrypt(&PlainPoly::zero(1024), &sk, &params, &mut rng);
        assert_eq!(decrypt(&he_add(&c1, &cz, &params).unwrap(), &sk, &params).unwrap(), m1);
        let sum: Vec<u64> = m1.coeffs.iter().zip(&m2.coeffs).map(|(&a, &b)| t.add(a, b)).collect();
        let ab = decrypt(&he_add(&c1, &c2, &params).unwrap(), &sk, &params).unwrap();
        let ba = decrypt(&he_add(&c2, &c1, &params).unwrap(), &sk, &params).unwrap();
        assert_eq!(ab.coeffs, sum);
        assert_eq!(ab, ba);
        let plus = he_add_plain(&c1, &m2, false, &params).unwrap();
        assert_eq!(decrypt(&plus, &sk, &params).unwrap().coeffs, sum);
        let back = he_add_plain(&plus, &m2, true, &params).unwrap();
        assert_eq!(decrypt(&back, &sk, &params).unwrap(), m1);
    }

    #[test]
    fn plain_products() {
        let (params, sk, mut rng) = setup(2048);
        let t = *params.plain();
        let m = random_poly(2048, &mut rng, &t);
        let ct = encrypt(&m, &sk, &params, &mut rng);
        let one = PlainPoly::monomial(2048, 0, 1);
        assert_eq!(decrypt(&he_mul_plain(&ct, &one, &params).unwrap(), &sk, &params).unwrap(), m);

        // X^{N-1} * X = -1.
        let top = PlainPoly::monomial(2048, 2047, 5);
        let ct_top = encrypt(&top, &sk, &params, &mut rng);
        let x = PlainPoly::monomial(2048, 1, 1);
        let wrapped = decrypt(&he_mul_plain(&ct_top, &x, &params).unwrap(), &sk, &params).unwrap();
        assert_eq!(wrapped.coeffs[0], t.modulus() - 5);
        assert!(wrapped.coeffs[1..].iter().all(|&c| c == 0));

        for _ in 0..3 {
            let p = random_poly(2048, &mut rng, &t);
            let got = decrypt(&he_mul_plain(&ct, &p, &params).unwrap(), &sk, &params).unwrap();
            assert_eq!(got, polymul_reference(&p, &m, &t));
        }
    }

    #[test]
    fn ternary_plain_product_exact() {
        let (params, sk, mut rng) = setup(1024);
        let t = *params.plain();
        let m = random_poly(1024, &mut rng, &t);
        let p = PlainPoly {
            coeffs: (0..1024).map(|_| t.from_signed(rng.gen_range(-1..=1))).collect(),
        };
        let ct = encrypt(&m, &sk, &params, &mut rng);
        let got = decrypt(&he_mul_plain(&ct, &p, &params).unwrap(), &sk, &params).unwrap();
        assert_eq!(got, polymul_reference(&p, &m, &t));
    }

    #[test]
    fn reference_product_examples() {
        let t = FixedPointParams::default();
        let n = 1024;
        let mut one_plus_x = PlainPoly::zero(n);
        one_plus_x.coeffs[0] = 1;
        one_plus_x.coeffs[1] = 1;
        let one = PlainPoly::monomial(n, 0, 1);
        assert_eq!(polymul_reference(&one_plus_x, &one, &t), one_plus_x);
        let wrapped = polymul_reference(&PlainPoly::monomial(n, n - 1, 1), &PlainPoly::monomial(n, 1, 1), &t);
        assert_eq!(wrapped.coeffs[0], t.modulus() - 1);
    }

    #[test]
    fn ntt_product_matches_reference() {
        let (params, _, mut rng) = setup(1024);
        let t = *params.plain();
        let p = params.moduli()[0];
        for _ in 0..50 {
            let a = random_poly(1024, &mut rng, &t);
            let b = random_poly(1024, &mut rng, &t);
            // Centered lift, one prime, product of |coeffs| < 2^80 * 2^10 < p^2... so reduce mod t
            // through the exact integer route instead: check the residue mod p agrees.
            let fa = params.plain_to_ntt(&a);
            let fb = params.plain_to_ntt(&b);
            let mut prod: Vec<u64> = fa.data[..1024]
                .iter()
                .zip(&fb.data[..1024])
                .map(|(&x, &y)| mul_mod(x, y, p))
                .collect();
            params.tables[0].inverse(&mut prod);
            let lift = |c: u64| {
                let s = t.to_signed(c);
                if s >= 0 { s as u64 } else { p - (-s) as u64 }
            };
            let la: Vec<u64> = a.coeffs.iter().map(|&c| lift(c)).collect();
            let lb: Vec<u64> = b.coeffs.iter().map(|&c| lift(c)).collect();
            let mut naive = vec![0u64; 1024];
            for i in 0..1024 {
                for j in 0..1024 {
                    let v = mul_mod(la[i], lb[j], p);
                    if i + j < 1024 {
                        naive[i + j] = add_mod(naive[i + j], v, p);
                    } else {
                        naive[i + j - 1024] = sub_mod(naive[i + j - 1024], v, p);
                    }
                }
            }
            assert_eq!(prod, naive);
        }
    }

    #[test]
    fn compressed_decrypt_agrees_on_retained() {
        let (params, sk, mut rng) = setup(1024);
        let t = *params.plain();
        let m = random_poly(1024, &mut rng, &t);
        let ct = encrypt(&m, &sk, &params, &mut rng);
        let full = decrypt(&ct, &sk, &params).unwrap();
        let keep: Vec<usize> = (0..1024).filter(|_| rng.gen_bool(0.1)).collect();
        let small = ct.clone().compress(&keep).unwrap();
        let part = decrypt(&small, &sk, &params).unwrap();
        for &k in &keep {
            assert_eq!(part.coeffs[k], full.coeffs[k]);
        }
        let bytes = small.to_bytes();
        assert_eq!(bytes.len(), small.wire_len());
        let (parsed, used) = Ciphertext::from_bytes(&bytes, &params).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(parsed, small);
        assert!(he_add(&small, &ct, &params).is_err());
    }

    #[test]
    fn serialization_round_trip_and_rejects_garbage() {
        let (params, sk, mut rng) = setup(1024);
        let ct = encrypt(&PlainPoly::zero(1024), &sk, &params, &mut rng);
        let bytes = ct.to_bytes();
        assert_eq!(bytes.len(), 6 + 2 * 1024 * 24);
        assert_eq!(&bytes[0..6], &[0, 4, 0, 0, 3, 0]);
        assert_eq!(Ciphertext::from_bytes(&bytes, &params).unwrap().0, ct);
        assert!(Ciphertext::from_bytes(&bytes[..100], &params).is_err());
        let mut bad = bytes.clone();
        bad[6..14].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(Ciphertext::from_bytes(&bad, &params).is_err());
    }

    #[test]
    fn wrong_key_is_detected_as_noise() {
        let (params, sk, mut rng) = setup(1024);
        let other = keygen(&params, 7);
        let ct = encrypt(&PlainPoly::zero(1024), &sk, &params, &mut rng);
        assert!(matches!(decrypt(&ct, &other, &params), Err(Error::Noise { .. })));
    }
}
