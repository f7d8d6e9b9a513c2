//! Fixed-point encoding of reals into `Z_t`, `t = 2^ell`, and the exact
//! plaintext arithmetic that every protocol is checked against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ring and precision parameters shared by every encoding in a session.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointParams {
    ell: u32,
    frac: u32,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        Self { ell: 41, frac: 13 }
    }
}

/// An element of `Z_t`, always held in `[0, t)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FieldElement(pub u64);

impl FixedPointParams {
    /// Minimum integer headroom `ell - 2 * frac`.
    pub const MIN_HEADROOM_BITS: u32 = 8;

    pub fn new(ell: u32, frac: u32) -> Result<Self> {
        if ell > 62 {
            return Err(Error::Params(format!("ell = {ell} exceeds 62 bits")));
        }
        if ell < 2 * frac + Self::MIN_HEADROOM_BITS {
            return Err(Error::Params(format!(
                "ell - 2f = {} below the {} bit minimum",
                ell as i64 - 2 * frac as i64,
                Self::MIN_HEADROOM_BITS
            )));
        }
        Ok(Self { ell, frac })
    }

    #[inline]
    pub fn ell(&self) -> u32 {
        self.ell
    }

    #[inline]
    pub fn frac(&self) -> u32 {
        self.frac
    }

    /// The modulus `t = 2^ell`.
    #[inline]
    pub fn modulus(&self) -> u64 {
        1u64 << self.ell
    }

    #[inline]
    pub fn mask(&self) -> u64 {
        self.modulus() - 1
    }

    /// `2^frac`, the encoding of `1.0`.
    #[inline]
    pub fn one(&self) -> u64 {
        1u64 << self.frac
    }

    /// Bytes needed to carry one ring element on the wire.
    #[inline]
    pub fn element_bytes(&self) -> usize {
        self.ell.div_ceil(8) as usize
    }

    #[inline]
    pub fn reduce(&self, v: u64) -> u64 {
        v & self.mask()
    }

    #[inline]
    pub fn from_signed(&self, v: i64) -> u64 {
        (v as u64) & self.mask()
    }

    /// Signed interpretation: `[t/2, t)` maps to negative values.
    #[inline]
    pub fn to_signed(&self, v: u64) -> i64 {
        let v = v & self.mask();
        if v >> (self.ell - 1) == 1 {
            v as i64 - self.modulus() as i64
        } else {
            v as i64
        }
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        a.wrapping_add(b) & self.mask()
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        a.wrapping_sub(b) & self.mask()
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        a.wrapping_mul(b) & self.mask()
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        0u64.wrapping_sub(a) & self.mask()
    }

    /// Largest magnitude accepted by [`encode`](Self::encode): `t / 2^(f+1)`.
    pub fn encode_bound(&self) -> f64 {
        (self.modulus() as f64) / (1u64 << (self.frac + 1)) as f64
    }

    /// `floor(x * 2^f)` embedded into `Z_t`.
    pub fn encode(&self, x: f64) -> Result<FieldElement> {
        let bound = self.encode_bound();
        if !x.is_finite() || x.abs() >= bound {
            return Err(Error::Range { value: x, bound });
        }
        Ok(FieldElement(self.encode_unchecked(x)))
    }

    /// Encoding without the range check; the caller guarantees `|x|` is in range.
    #[inline]
    pub fn encode_unchecked(&self, x: f64) -> u64 {
        self.from_signed((x * self.one() as f64).floor() as i64)
    }

    /// Encoding at an arbitrary scale `2^scale`, rounding to nearest.
    #[inline]
    pub fn encode_scaled_round(&self, x: f64, scale: u32) -> u64 {
        self.from_signed((x * (1u64 << scale) as f64).round() as i64)
    }

    #[inline]
    pub fn decode(&self, x: FieldElement) -> f64 {
        self.decode_raw(x.0)
    }

    #[inline]
    pub fn decode_raw(&self, x: u64) -> f64 {
        self.to_signed(x) as f64 / self.one() as f64
    }

    /// Arithmetic (floor) shift of the signed interpretation by `shift` bits.
    #[inline]
    pub fn shift_floor(&self, x: u64, shift: u32) -> u64 {
        self.from_signed(self.to_signed(x) >> shift)
    }

    /// `trunc_f(a * b mod t)`: the exact oracle for share-level truncation.
    pub fn fixed_mul(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        FieldElement(self.shift_floor(self.mul(a.0, b.0), self.frac))
    }
}

/// Row-major tensor of ring elements in `[0, t)`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct PlainTensor {
    shape: Vec<usize>,
    data: Vec<u64>,
}

impl PlainTensor {
    pub fn new(shape: Vec<usize>, data: Vec<u64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                expected: shape,
                got: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0; len],
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> u64) -> Self {
        let len: usize = shape.iter().product();
        Self {
            shape,
            data: (0..len).map(&mut f).collect(),
        }
    }

    /// Encodes reals with [`FixedPointParams::encode`].
    pub fn encode(shape: Vec<usize>, values: &[f64], params: &FixedPointParams) -> Result<Self> {
        let data = values
            .iter()
            .map(|&v| params.encode(v).map(|e| e.0))
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, data)
    }

    pub fn decode(&self, params: &FixedPointParams) -> Vec<f64> {
        self.data.iter().map(|&v| params.decode_raw(v)).collect()
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[u64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u64> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape {
                expected: shape,
                got: self.shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Rows and columns of a 2-D tensor (a 1-D tensor is one row).
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            s => {
                let c = *s.last().unwrap_or(&0);
                (self.data.len() / c.max(1), c)
            }
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> u64 {
        let (_, c) = self.dims2();
        self.data[row * c + col]
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = self.dims2();
        let mut out = vec![0u64; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self {
            shape: vec![c, r],
            data: out,
        }
    }

    /// Columns `[start, start + width)` of a 2-D tensor.
    pub fn column_slice(&self, start: usize, width: usize) -> Self {
        let (r, c) = self.dims2();
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            out.extend_from_slice(&self.data[i * c + start..i * c + start + width]);
        }
        Self {
            shape: vec![r, width],
            data: out,
        }
    }

    /// Horizontal concatenation of equally tall 2-D tensors.
    pub fn concat_columns(parts: &[PlainTensor]) -> Self {
        let rows = parts.first().map(|p| p.dims2().0).unwrap_or(0);
        let width: usize = parts.iter().map(|p| p.dims2().1).sum();
        let mut out = Vec::with_capacity(rows * width);
        for i in 0..rows {
            for p in parts {
                let (_, c) = p.dims2();
                out.extend_from_slice(&p.data[i * c..(i + 1) * c]);
            }
        }
        Self {
            shape: vec![rows, width],
            data: out,
        }
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self, params: &FixedPointParams) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(self.zip_map(other, |a, b| params.add(a, b)))
    }

    pub fn sub(&self, other: &Self, params: &FixedPointParams) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(self.zip_map(other, |a, b| params.sub(a, b)))
    }

    fn zip_map(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(u64) -> u64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Exact product over `Z_t` (no truncation).
    pub fn matmul(&self, other: &Self, params: &FixedPointParams) -> Result<Self> {
        let (m, r) = self.dims2();
        let (r2, n) = other.dims2();
        if r != r2 {
            return Err(Error::Shape {
                expected: vec![r, n],
                got: vec![r2, n],
            });
        }
        let mut out = vec![0u64; m * n];
        for i in 0..m {
            let row = &self.data[i * r..(i + 1) * r];
            let acc = &mut out[i * n..(i + 1) * n];
            for (j, &a) in row.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                let brow = &other.data[j * n..(j + 1) * n];
                for (o, &b) in acc.iter_mut().zip(brow) {
                    *o = o.wrapping_add(a.wrapping_mul(b));
                }
            }
        }
        let mask = params.mask();
        out.iter_mut().for_each(|v| *v &= mask);
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Floor-truncation of every element by `shift` bits.
    pub fn truncate(&self, shift: u32, params: &FixedPointParams) -> Self {
        self.map(|v| params.shift_floor(v, shift))
    }
}
