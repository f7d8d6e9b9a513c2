//! Additive secret shares over `Z_t` and the local (non-interactive)
//! operations on them.

use rand::Rng;

use super::session::Party;
use crate::error::{Error, Result};
use crate::fixed::{FixedPointParams, PlainTensor};

/// One party's half of an additively shared tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareTensor {
    party: Party,
    fixed: FixedPointParams,
    local: PlainTensor,
}

impl ShareTensor {
    pub fn new(party: Party, fixed: FixedPointParams, local: PlainTensor) -> Self {
        Self { party, fixed, local }
    }

    pub fn zeros(party: Party, fixed: FixedPointParams, shape: Vec<usize>) -> Self {
        Self::new(party, fixed, PlainTensor::zeros(shape))
    }

    /// Shares of a public tensor: the server holds the value, the client zero.
    pub fn public(party: Party, fixed: FixedPointParams, value: &PlainTensor) -> Self {
        let local = match party {
            Party::Server => value.clone(),
            Party::Client => PlainTensor::zeros(value.shape().to_vec()),
        };
        Self::new(party, fixed, local)
    }

    pub fn party(&self) -> Party {
        self.party
    }

    pub fn fixed(&self) -> &FixedPointParams {
        &self.fixed
    }

    pub fn local(&self) -> &PlainTensor {
        &self.local
    }

    pub fn into_local(self) -> PlainTensor {
        self.local
    }

    pub fn shape(&self) -> &[usize] {
        self.local.shape()
    }

    pub fn data(&self) -> &[u64] {
        self.local.data()
    }

    pub fn len(&self) -> usize {
        self.local.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local.is_empty()
    }

    pub fn dims2(&self) -> (usize, usize) {
        self.local.dims2()
    }

    fn with_local(&self, local: PlainTensor) -> Self {
        Self::new(self.party, self.fixed, local)
    }

    fn with_data(&self, data: Vec<u64>) -> Self {
        self.with_local(PlainTensor::new(self.shape().to_vec(), data).expect("same length"))
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                expected: self.shape().to_vec(),
                got: other.shape().to_vec(),
            });
        }
        debug_assert_eq!(self.party, other.party);
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(self.with_local(self.local.add(&other.local, &self.fixed)?))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(self.with_local(self.local.sub(&other.local, &self.fixed)?))
    }

    pub fn neg(&self) -> Self {
        let fp = self.fixed;
        self.with_local(self.local.map(|v| fp.neg(v)))
    }

    /// Adds a public tensor (only the server's half changes).
    pub fn add_public(&self, value: &PlainTensor) -> Result<Self> {
        if value.shape() != self.shape() {
            return Err(Error::Shape {
                expected: self.shape().to_vec(),
                got: value.shape().to_vec(),
            });
        }
        match self.party {
            Party::Server => Ok(self.with_local(self.local.add(value, &self.fixed)?)),
            Party::Client => Ok(self.clone()),
        }
    }

    /// Adds the same public ring element to every entry.
    pub fn add_scalar(&self, c: u64) -> Self {
        match self.party {
            Party::Server => {
                let fp = self.fixed;
                self.with_local(self.local.map(|v| fp.add(v, c)))
            }
            Party::Client => self.clone(),
        }
    }

    /// Multiplies every entry by a public ring element (no truncation).
    pub fn mul_scalar(&self, c: u64) -> Self {
        let fp = self.fixed;
        self.with_local(self.local.map(|v| fp.mul(v, c)))
    }

    /// Elementwise product with a public tensor (no truncation).
    pub fn mul_public(&self, value: &PlainTensor) -> Result<Self> {
        if value.shape() != self.shape() {
            return Err(Error::Shape {
                expected: self.shape().to_vec(),
                got: value.shape().to_vec(),
            });
        }
        let fp = self.fixed;
        let data = self.data().iter().zip(value.data()).map(|(&a, &b)| fp.mul(a, b)).collect();
        Ok(self.with_data(data))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Ok(self.with_local(self.local.clone().reshape(shape)?))
    }

    pub fn transpose(&self) -> Self {
        self.with_local(self.local.transpose())
    }

    pub fn column_slice(&self, start: usize, width: usize) -> Self {
        self.with_local(self.local.column_slice(start, width))
    }

    pub fn concat_columns(parts: &[ShareTensor]) -> Self {
        let locals: Vec<PlainTensor> = parts.iter().map(|p| p.local.clone()).collect();
        parts[0].with_local(PlainTensor::concat_columns(&locals))
    }

    /// Rows `start..start+count` of a 2-D share.
    pub fn row_slice(&self, start: usize, count: usize) -> Self {
        let (_, cols) = self.dims2();
        let data = self.data()[start * cols..(start + count) * cols].to_vec();
        self.with_local(PlainTensor::new(vec![count, cols], data).expect("row slice"))
    }

    /// Per-row sums of a 2-D share, shape `[rows, 1]`.
    pub fn row_sums(&self) -> Self {
        let (rows, cols) = self.dims2();
        let fp = self.fixed;
        let data = (0..rows)
            .map(|r| {
                self.data()[r * cols..(r + 1) * cols]
                    .iter()
                    .fold(0u64, |a, &v| fp.add(a, v))
            })
            .collect();
        self.with_local(PlainTensor::new(vec![rows, 1], data).expect("row sums"))
    }

    /// Repeats a `[rows, 1]` column `cols` times.
    pub fn broadcast_columns(&self, cols: usize) -> Self {
        let data = self.data().iter().flat_map(|&v| std::iter::repeat_n(v, cols)).collect();
        self.with_local(PlainTensor::new(vec![self.len(), cols], data).expect("broadcast"))
    }

    /// Elementwise combination of `self` with another local half.
    pub fn zip_map(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Result<Self> {
        self.check_same(other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
        Ok(self.with_data(data))
    }

    /// Applies `f` to every local entry.
    pub fn map_local(&self, f: impl Fn(u64) -> u64) -> Self {
        self.with_local(self.local.map(f))
    }

    pub fn from_data(&self, shape: Vec<usize>, data: Vec<u64>) -> Result<Self> {
        Ok(self.with_local(PlainTensor::new(shape, data)?))
    }
}

/// Splits `x` into `(client, server)` halves; the client half is uniform.
pub fn share_secret(x: &PlainTensor, fixed: &FixedPointParams, rng: &mut impl Rng) -> (ShareTensor, ShareTensor) {
    let mask = fixed.mask();
    let s0: Vec<u64> = (0..x.len()).map(|_| rng.gen::<u64>() & mask).collect();
    let s1: Vec<u64> = x.data().iter().zip(&s0).map(|(&v, &r)| fixed.sub(v, r)).collect();
    let shape = x.shape().to_vec();
    (
        ShareTensor::new(Party::Client, *fixed, PlainTensor::new(shape.clone(), s0).expect("shape")),
        ShareTensor::new(Party::Server, *fixed, PlainTensor::new(shape, s1).expect("shape")),
    )
}

/// Splits `x` with a fresh uniform mask, returning `(own, peer)` where
/// `own` is the uniform half. Used by a party that knows `x` outright.
pub fn split_local(x: &[u64], fixed: &FixedPointParams, rng: &mut impl Rng) -> (Vec<u64>, Vec<u64>) {
    let mask = fixed.mask();
    let own: Vec<u64> = (0..x.len()).map(|_| rng.gen::<u64>() & mask).collect();
    let peer = x.iter().zip(&own).map(|(&v, &r)| fixed.sub(v, r)).collect();
    (own, peer)
}

/// Recombines the two halves.
pub fn reconstruct(a: &ShareTensor, b: &ShareTensor) -> Result<PlainTensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    a.local.add(&b.local, &a.fixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn share_then_reconstruct() {
        let fp = FixedPointParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = PlainTensor::from_fn(vec![4, 5], |i| fp.from_signed(i as i64 * 977 - 9000));
        let (a, b) = share_secret(&x, &fp, &mut rng);
        assert_eq!(reconstruct(&a, &b).unwrap(), x);
        let z = PlainTensor::zeros(vec![3]);
        let (a, b) = share_secret(&z, &fp, &mut rng);
        assert_eq!(reconstruct(&a, &b).unwrap(), z);
        assert!(reconstruct(&a, &a.reshape(vec![1, 3]).unwrap()).is_err());
    }

    #[test]
    fn client_half_is_uniform() {
        let fp = FixedPointParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = PlainTensor::from_fn(vec![100_000], |i| (i as u64 * 31) & fp.mask());
        let (a, _) = share_secret(&x, &fp, &mut rng);
        let mut buckets = [0f64; 16];
        for &v in a.data() {
            buckets[(v >> (fp.ell() - 4)) as usize] += 1.0;
        }
        let expected = 100_000.0 / 16.0;
        let chi2: f64 = buckets.iter().map(|&o| (o - expected).powi(2) / expected).sum();
        // 15 degrees of freedom, p = 0.001 critical value.
        assert!(chi2 < 37.7, "chi2 = {chi2}");
    }

    #[test]
    fn local_linear_ops() {
        let fp = FixedPointParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = PlainTensor::from_fn(vec![2, 3], |i| fp.from_signed(i as i64 - 2));
        let c = PlainTensor::from_fn(vec![2, 3], |i| i as u64);
        let (a, b) = share_secret(&x, &fp, &mut rng);
        let sum = reconstruct(&a.add_public(&c).unwrap(), &b.add_public(&c).unwrap()).unwrap();
        assert_eq!(sum, x.add(&c, &fp).unwrap());
        let rs = reconstruct(&a.row_sums(), &b.row_sums()).unwrap();
        assert_eq!(rs.data(), &[fp.from_signed(-3), fp.from_signed(6)]);
        let neg = reconstruct(&a.neg(), &b.neg()).unwrap();
        assert_eq!(neg.data()[0], 2);
        let t = reconstruct(&a.transpose(), &b.transpose()).unwrap();
        assert_eq!(t, x.transpose());
    }
}
