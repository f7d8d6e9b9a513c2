//! Private matrix multiplication by polynomial coefficient encoding.
//!
//! With `a = sum a_ij X^(i r0 + r0 - 1 - j)` and `b = sum b_jk X^(k m0 r0 + j)`
//! the product `a * b` carries `(AB)_ik` at `X^(k m0 r0 + i r0 + r0 - 1)`.
//! The B-holder (client, key owner) uploads encrypted B tiles; the A-holder
//! (server) multiplies by its plaintext tiles, accumulates over the shared
//! dimension, masks with a uniform polynomial and returns one ciphertext
//! per output tile.

use rand::Rng;

use crate::bfv::{decrypt, encrypt, he_add_plain, BfvParams, Ciphertext, NttCiphertext, PlainPoly, PRIME_COUNT};
use crate::error::{Error, Result};
use crate::fixed::PlainTensor;
use crate::mpc::cost::Category;
use crate::mpc::session::{Party, Session};
use crate::mpc::share::ShareTensor;
use crate::mpc::transport::Tag;

/// Tiling of an `m x r` by `r x n` product into polynomial-sized blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TilePlan {
    pub m: usize,
    pub r: usize,
    pub n: usize,
    pub m0: usize,
    pub r0: usize,
    pub n0: usize,
    pub degree: usize,
}

impl TilePlan {
    pub fn m_tiles(&self) -> usize {
        self.m.div_ceil(self.m0)
    }

    pub fn r_tiles(&self) -> usize {
        self.r.div_ceil(self.r0)
    }

    pub fn n_tiles(&self) -> usize {
        self.n.div_ceil(self.n0)
    }

    /// Number of `m0 x r0 x n0` tile products.
    pub fn tile_count(&self) -> usize {
        self.m_tiles() * self.r_tiles() * self.n_tiles()
    }

    /// Ciphertexts sent by the B-holder.
    pub fn uploads(&self) -> usize {
        self.r_tiles() * self.n_tiles()
    }

    /// Ciphertexts returned by the A-holder.
    pub fn responses(&self) -> usize {
        self.m_tiles() * self.n_tiles()
    }

    /// Coefficient index holding output entry `(i, k)` of a tile.
    #[inline]
    pub fn output_index(&self, i: usize, k: usize) -> usize {
        k * self.m0 * self.r0 + i * self.r0 + self.r0 - 1
    }

    /// All `m0 * n0` output coefficient indices of a tile, sorted.
    pub fn output_positions(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.n0)
            .flat_map(|k| (0..self.m0).map(move |i| (i, k)))
            .map(|(i, k)| self.output_index(i, k))
            .collect();
        v.sort_unstable();
        v
    }

    /// Wire cost in units of one polynomial's coefficients.
    fn cost(&self) -> usize {
        2 * self.uploads() * self.degree + self.responses() * (self.degree + self.m0 * self.n0)
    }
}

/// Chooses power-of-two tile dims with `m0 * r0 * n0 <= N` minimising
/// ciphertext traffic (with compressed responses); ties go to the larger
/// `r0`, then the larger `n0`.
pub fn plan_tiles(m: usize, r: usize, n: usize, degree: usize) -> Result<TilePlan> {
    if m == 0 || r == 0 || n == 0 {
        return Err(Error::Params(format!("empty matrix product {m}x{r}x{n}")));
    }
    if !degree.is_power_of_two() {
        return Err(Error::Params(format!("degree {degree} is not a power of two")));
    }
    let cap = |d: usize| d.next_power_of_two().min(degree);
    let pows = |c: usize| (0..=c.trailing_zeros()).map(|e| 1usize << e);
    let mut best: Option<TilePlan> = None;
    for r0 in pows(cap(r)) {
        for n0 in pows(cap(n)) {
            if r0 * n0 > degree {
                continue;
            }
            let m0 = cap(m).min(degree / (r0 * n0));
            let plan = TilePlan { m, r, n, m0, r0, n0, degree };
            let better = match &best {
                None => true,
                Some(b) => (plan.cost(), std::cmp::Reverse(r0), std::cmp::Reverse(n0))
                    < (b.cost(), std::cmp::Reverse(b.r0), std::cmp::Reverse(b.n0)),
            };
            if better {
                best = Some(plan);
            }
        }
    }
    Ok(best.expect("at least the 1x1x1 tiling fits"))
}

/// Encodes an `m0 x r0` tile: `a_ij` at exponent `i r0 + r0 - 1 - j`.
pub fn encode_matrix_a(a: &PlainTensor, degree: usize) -> Result<PlainPoly> {
    let (m0, r0) = a.dims2();
    if m0 * r0 > degree {
        return Err(Error::TileTooLarge {
            degree,
            detail: format!("A tile {m0}x{r0}"),
        });
    }
    let mut p = PlainPoly::zero(degree);
    for i in 0..m0 {
        for j in 0..r0 {
            p.coeffs[i * r0 + r0 - 1 - j] = a.at(i, j);
        }
    }
    Ok(p)
}

/// Encodes an `r0 x n0` tile: `b_jk` at exponent `k m0 r0 + j`.
pub fn encode_matrix_b(b: &PlainTensor, m0: usize, degree: usize) -> Result<PlainPoly> {
    let (r0, n0) = b.dims2();
    if m0 * r0 * n0 > degree {
        return Err(Error::TileTooLarge {
            degree,
            detail: format!("tile {m0}x{r0}x{n0}"),
        });
    }
    let mut p = PlainPoly::zero(degree);
    for j in 0..r0 {
        for k in 0..n0 {
            p.coeffs[k * m0 * r0 + j] = b.at(j, k);
        }
    }
    Ok(p)
}

/// Reads the `m0 x n0` output tile from a product polynomial.
pub fn decode_matrix_c(c: &PlainPoly, plan: &TilePlan) -> PlainTensor {
    PlainTensor::from_fn(vec![plan.m0, plan.n0], |idx| {
        let (i, k) = (idx / plan.n0, idx % plan.n0);
        c.coeffs[plan.output_index(i, k)]
    })
}

/// Predicted compressed/uncompressed size of one response ciphertext.
pub fn response_bytes_ratio(plan: &TilePlan, compress: bool) -> f64 {
    if !compress {
        return 1.0;
    }
    let row = (8 * PRIME_COUNT) as f64;
    let n = plan.degree as f64;
    let bitmap = plan.degree.div_ceil(8) as f64;
    (n * row + bitmap + (plan.m0 * plan.n0) as f64 * row) / (2.0 * n * row)
}

/// Zero-padded `rows x cols` block starting at `(r, c)`.
fn block(x: &PlainTensor, r: usize, c: usize, rows: usize, cols: usize) -> PlainTensor {
    let (xr, xc) = x.dims2();
    PlainTensor::from_fn(vec![rows, cols], |idx| {
        let (i, j) = (r + idx / cols, c + idx % cols);
        if i < xr && j < xc {
            x.at(i, j)
        } else {
            0
        }
    })
}

/// Scatters an `m0 x n0` tile into the `m x n` output, dropping padding.
fn place(out: &mut [u64], n: usize, m: usize, tile: &[u64], plan: &TilePlan, ti: usize, tk: usize) {
    for i in 0..plan.m0 {
        for k in 0..plan.n0 {
            let (gi, gk) = (ti * plan.m0 + i, tk * plan.n0 + k);
            if gi < m && gk < n {
                out[gi * n + gk] = tile[i * plan.n0 + k];
            }
        }
    }
}

fn parse_cts(payload: &[u8], count: usize, params: &BfvParams) -> Result<Vec<Ciphertext>> {
    let mut pos = 0;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (ct, used) = Ciphertext::from_bytes(&payload[pos..], params)?;
        pos += used;
        out.push(ct);
    }
    if pos != payload.len() {
        return Err(Error::Ciphertext("trailing bytes after ciphertexts".into()));
    }
    Ok(out)
}

/// Additive shares of `A B mod t`. The server passes `A` (`m x r`), the
/// client passes `B` (`r x n`); `dims = (m, r, n)` is public. No truncation.
pub fn run_matmul_protocol(
    sess: &mut Session,
    operand: &PlainTensor,
    dims: (usize, usize, usize),
    compress: bool,
) -> Result<ShareTensor> {
    let (m, r, n) = dims;
    let expected = match sess.party() {
        Party::Server => vec![m, r],
        Party::Client => vec![r, n],
    };
    if operand.shape() != expected.as_slice() {
        return Err(Error::Shape {
            expected,
            got: operand.shape().to_vec(),
        });
    }
    let params = sess.bfv().clone();
    let plan = plan_tiles(m, r, n, params.degree())?;
    sess.scoped(Category::MatMul, |sess| {
        sess.tagged(Tag::Matmul, |sess| match sess.party() {
            Party::Client => matmul_client(sess, operand, &plan, &params, compress),
            Party::Server => matmul_server(sess, operand, &plan, &params, compress),
        })
    })
}

fn matmul_client(
    sess: &mut Session,
    b: &PlainTensor,
    plan: &TilePlan,
    params: &BfvParams,
    compress: bool,
) -> Result<ShareTensor> {
    let sk = sess.secret_key()?.clone();
    let mut payload = Vec::new();
    for tk in 0..plan.n_tiles() {
        for tj in 0..plan.r_tiles() {
            let tile = block(b, tj * plan.r0, tk * plan.n0, plan.r0, plan.n0);
            let poly = encode_matrix_b(&tile, plan.m0, plan.degree)?;
            encrypt(&poly, &sk, params, sess.rng()).write_to(&mut payload);
        }
    }
    sess.send(Tag::Matmul, payload)?;
    let resp = sess.recv(Tag::Matmul)?;
    let cts = parse_cts(&resp, plan.responses(), params)?;
    let mut out = vec![0u64; plan.m * plan.n];
    for (idx, ct) in cts.iter().enumerate() {
        if compress != ct.is_compressed() {
            return Err(Error::Ciphertext("unexpected compression flag".into()));
        }
        let (ti, tk) = (idx / plan.n_tiles(), idx % plan.n_tiles());
        let poly = decrypt(ct, &sk, params)?;
        let tile = decode_matrix_c(&poly, plan);
        place(&mut out, plan.n, plan.m, tile.data(), plan, ti, tk);
    }
    Ok(ShareTensor::new(
        Party::Client,
        sess.fixed(),
        PlainTensor::new(vec![plan.m, plan.n], out)?,
    ))
}

fn matmul_server(
    sess: &mut Session,
    a: &PlainTensor,
    plan: &TilePlan,
    params: &BfvParams,
    compress: bool,
) -> Result<ShareTensor> {
    let fp = sess.fixed();
    let payload = sess.recv(Tag::Matmul)?;
    let uploads: Vec<NttCiphertext> = parse_cts(&payload, plan.uploads(), params)?
        .iter()
        .map(|ct| {
            if ct.is_compressed() {
                Err(Error::Ciphertext("uploaded ciphertext is compressed".into()))
            } else {
                Ok(ct.to_ntt(params))
            }
        })
        .collect::<Result<_>>()?;
    let a_tiles: Vec<_> = (0..plan.m_tiles())
        .flat_map(|ti| (0..plan.r_tiles()).map(move |tj| (ti, tj)))
        .map(|(ti, tj)| {
            let tile = block(a, ti * plan.m0, tj * plan.r0, plan.m0, plan.r0);
            encode_matrix_a(&tile, plan.degree).map(|p| params.plain_to_ntt(&p))
        })
        .collect::<Result<_>>()?;
    let keep = plan.output_positions();
    let mut out = vec![0u64; plan.m * plan.n];
    let mut resp = Vec::new();
    for ti in 0..plan.m_tiles() {
        for tk in 0..plan.n_tiles() {
            let mut acc = NttCiphertext::zero(params);
            for tj in 0..plan.r_tiles() {
                let ct = &uploads[tk * plan.r_tiles() + tj];
                acc.mul_plain_acc(ct, &a_tiles[ti * plan.r_tiles() + tj], params);
            }
            let mask = PlainPoly {
                coeffs: (0..plan.degree).map(|_| sess.rng().gen::<u64>() & fp.mask()).collect(),
            };
            let mut ct = he_add_plain(&acc.to_coeff(params), &mask, true, params)?;
            if compress {
                ct = ct.compress(&keep)?;
            }
            ct.write_to(&mut resp);
            let tile = decode_matrix_c(&mask, plan);
            place(&mut out, plan.n, plan.m, tile.data(), plan, ti, tk);
        }
    }
    sess.send(Tag::Matmul, resp)?;
    Ok(ShareTensor::new(
        Party::Server,
        fp,
        PlainTensor::new(vec![plan.m, plan.n], out)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfv::polymul_reference;
    use crate::fixed::FixedPointParams;
    use crate::mpc::session::{run_local, SessionConfig};
    use crate::mpc::share::reconstruct;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(rows: usize, cols: usize, v: &[u64]) -> PlainTensor {
        PlainTensor::new(vec![rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn encoding_examples() {
        let fp = FixedPointParams::default();
        let a = encode_matrix_a(&t(1, 1, &[2]), 1024).unwrap();
        assert_eq!(a, PlainPoly::monomial(1024, 0, 2));
        let a = encode_matrix_a(&t(2, 2, &[1, 2, 3, 4]), 1024).unwrap();
        assert_eq!(&a.coeffs[..5], &[2, 1, 4, 3, 0]);
        assert_eq!(encode_matrix_a(&t(2, 2, &[0; 4]), 1024).unwrap(), PlainPoly::zero(1024));

        let b = encode_matrix_b(&t(1, 1, &[3]), 1, 1024).unwrap();
        assert_eq!(b, PlainPoly::monomial(1024, 0, 3));
        let b = encode_matrix_b(&t(2, 1, &[5, 6]), 2, 1024).unwrap();
        assert_eq!(&b.coeffs[..3], &[5, 6, 0]);

        let plan = TilePlan { m: 1, r: 1, n: 1, m0: 1, r0: 1, n0: 1, degree: 1024 };
        let c = polymul_reference(
            &encode_matrix_a(&t(1, 1, &[2]), 1024).unwrap(),
            &encode_matrix_b(&t(1, 1, &[3]), 1, 1024).unwrap(),
            &fp,
        );
        assert_eq!(decode_matrix_c(&c, &plan).data(), &[6]);

        let plan = TilePlan { m: 2, r: 2, n: 1, m0: 2, r0: 2, n0: 1, degree: 1024 };
        let c = polymul_reference(&a, &b, &fp);
        assert_eq!(decode_matrix_c(&c, &plan).data(), &[17, 39]);

        assert!(matches!(
            encode_matrix_a(&PlainTensor::zeros(vec![64, 32]), 1024),
            Err(Error::TileTooLarge { .. })
        ));
    }

    #[test]
    fn identity_decodes_to_b() {
        let fp = FixedPointParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (m0, r0, n0) = (4, 4, 8);
        let id = PlainTensor::from_fn(vec![m0, r0], |i| (i / r0 == i % r0) as u64);
        let b = PlainTensor::from_fn(vec![r0, n0], |_| rng.gen::<u64>() & fp.mask());
        let plan = TilePlan { m: m0, r: r0, n: n0, m0, r0, n0, degree: 1024 };
        let c = polymul_reference(
            &encode_matrix_a(&id, 1024).unwrap(),
            &encode_matrix_b(&b, m0, 1024).unwrap(),
            &fp,
        );
        assert_eq!(decode_matrix_c(&c, &plan), b);
    }

    #[test]
    fn plan_examples() {
        let p = plan_tiles(8, 8, 8, 8192).unwrap();
        assert_eq!((p.m0, p.r0, p.n0, p.tile_count()), (8, 8, 8, 1));
        let p = plan_tiles(128, 128, 128, 8192).unwrap();
        assert_eq!(p.tile_count(), 256);
        assert_eq!(p.m0 * p.r0 * p.n0, 8192);
        let p = plan_tiles(1, 8192, 1, 8192).unwrap();
        assert_eq!((p.m0, p.r0, p.n0, p.tile_count()), (1, 8192, 1, 1));
        let p = plan_tiles(5, 7, 3, 1024).unwrap();
        assert_eq!(p.tile_count(), 1);
        assert!(plan_tiles(0, 1, 1, 1024).is_err());
    }

    #[test]
    fn ratio_formula() {
        let plan = TilePlan { m: 64, r: 2, n: 64, m0: 64, r0: 2, n0: 64, degree: 8192 };
        let r = response_bytes_ratio(&plan, true);
        assert!((r - (0.75 + 1024.0 / (2.0 * 8192.0 * 24.0))).abs() < 1e-12);
        let plan = TilePlan { m0: 1, n0: 1, ..plan };
        assert!((response_bytes_ratio(&plan, true) - 0.5).abs() < 0.01);
        assert_eq!(response_bytes_ratio(&plan, false), 1.0);
    }

    fn run(a: &PlainTensor, b: &PlainTensor, compress: bool, seed: u64) -> PlainTensor {
        let dims = (a.dims2().0, a.dims2().1, b.dims2().1);
        let cfg = SessionConfig {
            poly_degree: 1024,
            seed,
            ..Default::default()
        };
        let (c, s) = run_local(
            cfg,
            |s| run_matmul_protocol(s, b, dims, compress),
            |s| run_matmul_protocol(s, a, dims, compress),
        )
        .unwrap();
        reconstruct(&c, &s).unwrap()
    }

    #[test]
    fn protocol_is_exact() {
        let fp = FixedPointParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (m, r, n) in [(1, 1, 1), (3, 5, 2), (16, 16, 16), (33, 20, 9), (64, 64, 4)] {
            let a = PlainTensor::from_fn(vec![m, r], |_| rng.gen::<u64>() & fp.mask());
            let b = PlainTensor::from_fn(vec![r, n], |_| rng.gen::<u64>() & fp.mask());
            let want = a.matmul(&b, &fp).unwrap();
            assert_eq!(run(&a, &b, true, m as u64), want, "{m}x{r}x{n}");
            assert_eq!(run(&a, &b, false, m as u64), want, "{m}x{r}x{n} uncompressed");
        }
        let zero = PlainTensor::zeros(vec![4, 4]);
        let b = PlainTensor::from_fn(vec![4, 4], |_| rng.gen::<u64>() & fp.mask());
        assert_eq!(run(&zero, &b, true, 9), zero);
        let id = PlainTensor::from_fn(vec![16, 16], |i| (i / 16 == i % 16) as u64);
        let b = PlainTensor::from_fn(vec![16, 16], |_| rng.gen::<u64>() & fp.mask());
        assert_eq!(run(&id, &b, true, 10), b);
    }

    #[test]
    fn shares_look_uniform() {
        let fp = FixedPointParams::default();
        let a = PlainTensor::from_fn(vec![4, 4], |i| i as u64);
        let b = PlainTensor::from_fn(vec![4, 4], |i| 3 * i as u64);
        let cfg = SessionConfig {
            poly_degree: 1024,
            seed: 77,
            ..Default::default()
        };
        let runs = 250;
        let (samples, _) = run_local(
            cfg,
            |s| {
                let mut v = Vec::new();
                for _ in 0..runs {
                    v.extend_from_slice(run_matmul_protocol(s, &b, (4, 4, 4), true)?.data());
                }
                Ok(v)
            },
            |s| {
                for _ in 0..runs {
                    run_matmul_protocol(s, &a, (4, 4, 4), true)?;
                }
                Ok(())
            },
        )
        .unwrap();
        let mut buckets = [0f64; 16];
        for v in &samples {
            buckets[(v >> (fp.ell() - 4)) as usize] += 1.0;
        }
        let e = samples.len() as f64 / 16.0;
        let chi2: f64 = buckets.iter().map(|o| (o - e) * (o - e) / e).sum();
        assert!(chi2 < 37.7, "chi2 {chi2}");
    }
}
