//! Arithmetic in Z_{2^Λ} for configurable Λ up to 128 bits.
//!
//! Elements are stored as `u128` reduced mod 2^Λ; all operations wrap.

use crate::error::{Error, Result};

/// A power-of-two ring Z_{2^Λ}, 2 ≤ Λ ≤ 128.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct Ring(u32);

impl Ring {
    pub const Z64: Ring = Ring(64);
    pub const Z128: Ring = Ring(128);

    pub fn new(width: u32) -> Self {
        assert!(
            (2..=128).contains(&width),
            "ring width {width} outside 2..=128"
        );
        Ring(width)
    }

    #[inline]
    pub fn width(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn mask(self) -> u128 {
        if self.0 == 128 {
            u128::MAX
        } else {
            (1u128 << self.0) - 1
        }
    }

    #[inline]
    pub fn reduce(self, v: u128) -> u128 {
        v & self.mask()
    }

    #[inline]
    pub fn add(self, a: u128, b: u128) -> u128 {
        a.wrapping_add(b) & self.mask()
    }

    #[inline]
    pub fn sub(self, a: u128, b: u128) -> u128 {
        a.wrapping_sub(b) & self.mask()
    }

    #[inline]
    pub fn mul(self, a: u128, b: u128) -> u128 {
        a.wrapping_mul(b) & self.mask()
    }

    #[inline]
    pub fn neg(self, a: u128) -> u128 {
        a.wrapping_neg() & self.mask()
    }

    /// Two's-complement reading of an element.
    #[inline]
    pub fn signed(self, v: u128) -> i128 {
        debug_assert_eq!(v, self.reduce(v));
        if self.0 == 128 {
            v as i128
        } else if (v >> (self.0 - 1)) & 1 == 1 {
            v as i128 - (1i128 << self.0)
        } else {
            v as i128
        }
    }

    /// Bit at 1-based position `pos` (pos = 1 is the LSB, pos = Λ the MSB).
    #[inline]
    pub fn bit(self, v: u128, pos: u32) -> bool {
        debug_assert!(pos >= 1 && pos <= self.0);
        (v >> (pos - 1)) & 1 == 1
    }

    /// Bytes used per element on the wire.
    #[inline]
    pub fn wire_bytes(self) -> usize {
        if self.0 <= 64 {
            8
        } else {
            16
        }
    }

    pub fn check(self, other: Ring) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::RingMismatch(self.0, other.0))
        }
    }
}

/// A vector of ring elements (one party's shares, or plaintext values).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingVec {
    ring: Ring,
    v: Vec<u128>,
}

impl RingVec {
    pub fn new(ring: Ring, mut v: Vec<u128>) -> Self {
        for x in &mut v {
            *x &= ring.mask();
        }
        RingVec { ring, v }
    }

    pub fn zeros(ring: Ring, n: usize) -> Self {
        RingVec {
            ring,
            v: vec![0; n],
        }
    }

    pub fn from_fn(ring: Ring, n: usize, mut f: impl FnMut(usize) -> u128) -> Self {
        RingVec::new(ring, (0..n).map(|i| f(i)).collect())
    }

    #[inline]
    pub fn ring(&self) -> Ring {
        self.ring
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.v.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> u128 {
        self.v[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, x: u128) {
        self.v[i] = self.ring.reduce(x);
    }

    pub fn as_slice(&self) -> &[u128] {
        &self.v
    }

    pub fn into_vec(self) -> Vec<u128> {
        self.v
    }

    pub fn add(&self, other: &RingVec) -> RingVec {
        self.zip(other, |a, b| self.ring.add(a, b))
    }

    pub fn sub(&self, other: &RingVec) -> RingVec {
        self.zip(other, |a, b| self.ring.sub(a, b))
    }

    pub fn neg(&self) -> RingVec {
        self.map(|a| self.ring.neg(a))
    }

    pub fn scale(&self, c: u128) -> RingVec {
        self.map(|a| self.ring.mul(a, c))
    }

    pub fn add_scalar(&self, c: u128) -> RingVec {
        self.map(|a| self.ring.add(a, c))
    }

    pub fn map(&self, f: impl Fn(u128) -> u128) -> RingVec {
        RingVec {
            ring: self.ring,
            v: self.v.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn zip(&self, other: &RingVec, f: impl Fn(u128, u128) -> u128) -> RingVec {
        assert_eq!(self.ring, other.ring, "ring mismatch");
        assert_eq!(self.len(), other.len(), "length mismatch");
        RingVec {
            ring: self.ring,
            v: self
                .v
                .iter()
                .zip(&other.v)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sum(&self) -> u128 {
        self.v
            .iter()
            .fold(0u128, |acc, &x| self.ring.add(acc, x))
    }

    pub fn concat(parts: &[&RingVec]) -> RingVec {
        assert!(!parts.is_empty());
        let ring = parts[0].ring;
        let mut v = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            assert_eq!(p.ring, ring, "ring mismatch");
            v.extend_from_slice(&p.v);
        }
        RingVec { ring, v }
    }

    pub fn extract(&self, start: usize, len: usize) -> RingVec {
        RingVec {
            ring: self.ring,
            v: self.v[start..start + len].to_vec(),
        }
    }

    /// Splits a vector of `k * m` elements into `k` vectors of `m`.
    pub fn split_into(&self, k: usize) -> Vec<RingVec> {
        assert_eq!(self.len() % k, 0);
        let m = self.len() / k;
        (0..k).map(|i| self.extract(i * m, m)).collect()
    }

    pub fn logical_bits(&self) -> u64 {
        self.ring.width() as u64 * self.len() as u64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let w = self.ring.wire_bytes();
        let mut out = Vec::with_capacity(w * self.len());
        for &x in &self.v {
            if w == 8 {
                out.extend_from_slice(&(x as u64).to_le_bytes());
            } else {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(ring: Ring, n: usize, bytes: &[u8]) -> Result<RingVec> {
        let w = ring.wire_bytes();
        if bytes.len() != n * w {
            return Err(Error::data(format!(
                "ring vector payload: expected {} bytes, got {}",
                n * w,
                bytes.len()
            )));
        }
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            let chunk = &bytes[i * w..(i + 1) * w];
            let x = if w == 8 {
                u64::from_le_bytes(chunk.try_into().unwrap()) as u128
            } else {
                u128::from_le_bytes(chunk.try_into().unwrap())
            };
            v.push(ring.reduce(x));
        }
        Ok(RingVec { ring, v })
    }
}

/// Row-major matrix of ring elements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mat {
    ring: Ring,
    rows: usize,
    cols: usize,
    data: Vec<u128>,
}

impl Mat {
    pub fn zeros(ring: Ring, rows: usize, cols: usize) -> Mat {
        Mat {
            ring,
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_vec(ring: Ring, rows: usize, cols: usize, data: Vec<u128>) -> Mat {
        assert_eq!(data.len(), rows * cols);
        let mut m = Mat {
            ring,
            rows,
            cols,
            data,
        };
        for x in &mut m.data {
            *x &= ring.mask();
        }
        m
    }

    pub fn from_ringvec(v: RingVec, rows: usize, cols: usize) -> Mat {
        assert_eq!(v.len(), rows * cols);
        Mat {
            ring: v.ring(),
            rows,
            cols,
            data: v.into_vec(),
        }
    }

    pub fn from_fn(
        ring: Ring,
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> u128,
    ) -> Mat {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(ring.reduce(f(r, c)));
            }
        }
        Mat {
            ring,
            rows,
            cols,
            data,
        }
    }

    #[inline]
    pub fn ring(&self) -> Ring {
        self.ring
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> u128 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, x: u128) {
        self.data[r * self.cols + c] = self.ring.reduce(x);
    }

    pub fn row(&self, r: usize) -> &[u128] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> RingVec {
        RingVec::new(self.ring, (0..self.rows).map(|r| self.at(r, c)).collect())
    }

    pub fn as_ringvec(&self) -> RingVec {
        RingVec::new(self.ring, self.data.clone())
    }

    pub fn into_ringvec(self) -> RingVec {
        RingVec::new(self.ring, self.data)
    }

    pub fn add(&self, other: &Mat) -> Mat {
        self.zip(other, |a, b| self.ring.add(a, b))
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.zip(other, |a, b| self.ring.sub(a, b))
    }

    fn zip(&self, other: &Mat, f: impl Fn(u128, u128) -> u128) -> Mat {
        assert_eq!(self.ring, other.ring, "ring mismatch");
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            ring: self.ring,
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Plain (wrapping) matrix product.
    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.ring, other.ring, "ring mismatch");
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = Mat::zeros(self.ring, self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(r, k);
                if a == 0 {
                    continue;
                }
                let orow = other.row(k);
                let out_row = &mut out.data[r * out.cols..(r + 1) * out.cols];
                for (o, &b) in out_row.iter_mut().zip(orow) {
                    *o = o.wrapping_add(a.wrapping_mul(b));
                }
            }
        }
        for x in &mut out.data {
            *x &= self.ring.mask();
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.ring, self.cols, self.rows, |r, c| self.at(c, r))
    }

    pub fn logical_bits(&self) -> u64 {
        self.ring.width() as u64 * (self.rows * self.cols) as u64
    }
}
