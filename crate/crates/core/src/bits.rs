//! Packed Z₂ vectors and matrices (64 shares per word).

use crate::error::{Error, Result};

/// A vector of bits packed into u64 words, LSB-first within each word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitVec {
    len: usize,
    words: Vec<u64>,
}

#[inline]
fn words_for(len: usize) -> usize {
    (len + 63) / 64
}

impl BitVec {
    pub fn zeros(len: usize) -> BitVec {
        BitVec {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn ones(len: usize) -> BitVec {
        let mut v = BitVec {
            len,
            words: vec![u64::MAX; words_for(len)],
        };
        v.mask_tail();
        v
    }

    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> bool) -> BitVec {
        let mut v = BitVec::zeros(len);
        for i in 0..len {
            if f(i) {
                v.set(i, true);
            }
        }
        v
    }

    pub fn from_bools(bits: &[bool]) -> BitVec {
        BitVec::from_fn(bits.len(), |i| bits[i])
    }

    fn mask_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, b: bool) {
        debug_assert!(i < self.len);
        if b {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn xor(&self, other: &BitVec) -> BitVec {
        assert_eq!(self.len, other.len, "length mismatch");
        BitVec {
            len: self.len,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a ^ b)
                .collect(),
        }
    }

    pub fn and(&self, other: &BitVec) -> BitVec {
        assert_eq!(self.len, other.len, "length mismatch");
        BitVec {
            len: self.len,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a & b)
                .collect(),
        }
    }

    pub fn not(&self) -> BitVec {
        let mut v = BitVec {
            len: self.len,
            words: self.words.iter().map(|a| !a).collect(),
        };
        v.mask_tail();
        v
    }

    pub fn xor_assign(&mut self, other: &BitVec) {
        assert_eq!(self.len, other.len, "length mismatch");
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn concat(parts: &[&BitVec]) -> BitVec {
        let total = parts.iter().map(|p| p.len).sum();
        let mut out = BitVec::zeros(total);
        let mut off = 0;
        for p in parts {
            out.splice(off, p);
            off += p.len;
        }
        out
    }

    /// Copies `src` into `self` starting at bit offset `off`.
    pub fn splice(&mut self, off: usize, src: &BitVec) {
        assert!(off + src.len <= self.len);
        let shift = off % 64;
        let base = off / 64;
        if shift == 0 {
            for (i, &w) in src.words.iter().enumerate() {
                self.words[base + i] |= w;
            }
        } else {
            for (i, &w) in src.words.iter().enumerate() {
                self.words[base + i] |= w << shift;
                if base + i + 1 < self.words.len() {
                    self.words[base + i + 1] |= w >> (64 - shift);
                }
            }
        }
        self.mask_tail();
    }

    /// Extracts `len` bits starting at `start` into a fresh vector.
    pub fn extract(&self, start: usize, len: usize) -> BitVec {
        assert!(start + len <= self.len);
        let mut out = BitVec::zeros(len);
        let shift = start % 64;
        let base = start / 64;
        for i in 0..out.words.len() {
            let lo = self.words.get(base + i).copied().unwrap_or(0) >> shift;
            let hi = if shift == 0 {
                0
            } else {
                self.words.get(base + i + 1).copied().unwrap_or(0) << (64 - shift)
            };
            out.words[i] = lo | hi;
        }
        out.mask_tail();
        out
    }

    /// Splits a vector of `k * m` bits into `k` vectors of `m`.
    pub fn split_into(&self, k: usize) -> Vec<BitVec> {
        assert_eq!(self.len % k, 0);
        let m = self.len / k;
        (0..k).map(|i| self.extract(i * m, m)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; (self.len + 7) / 8];
        for (i, w) in self.words.iter().enumerate() {
            let bytes = w.to_le_bytes();
            let start = i * 8;
            let take = (out.len() - start).min(8);
            out[start..start + take].copy_from_slice(&bytes[..take]);
        }
        out
    }

    pub fn from_bytes(len: usize, bytes: &[u8]) -> Result<BitVec> {
        if bytes.len() != (len + 7) / 8 {
            return Err(Error::data(format!(
                "bit payload: expected {} bytes, got {}",
                (len + 7) / 8,
                bytes.len()
            )));
        }
        let mut v = BitVec::zeros(len);
        for (i, chunk) in bytes.chunks(8).enumerate() {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            v.words[i] = u64::from_le_bytes(buf);
        }
        v.mask_tail();
        Ok(v)
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

/// Row-major packed bit matrix; each row starts on a word boundary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMat {
    rows: usize,
    cols: usize,
    row_words: usize,
    words: Vec<u64>,
}

impl BitMat {
    pub fn zeros(rows: usize, cols: usize) -> BitMat {
        let row_words = words_for(cols);
        BitMat {
            rows,
            cols,
            row_words,
            words: vec![0; rows * row_words],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> BitMat {
        let mut m = BitMat::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                if f(r, c) {
                    m.set(r, c, true);
                }
            }
        }
        m
    }

    pub fn from_rows(rows: &[BitVec]) -> BitMat {
        assert!(!rows.is_empty());
        let cols = rows[0].len();
        let mut m = BitMat::zeros(rows.len(), cols);
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), cols);
            let start = r * m.row_words;
            m.words[start..start + m.row_words].copy_from_slice(row.words());
        }
        m
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
    pub fn get(&self, r: usize, c: usize) -> bool {
        debug_assert!(r < self.rows && c < self.cols);
        (self.words[r * self.row_words + c / 64] >> (c % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, b: bool) {
        debug_assert!(r < self.rows && c < self.cols);
        let w = &mut self.words[r * self.row_words + c / 64];
        if b {
            *w |= 1 << (c % 64);
        } else {
            *w &= !(1 << (c % 64));
        }
    }

    pub fn row(&self, r: usize) -> BitVec {
        let start = r * self.row_words;
        let mut v = BitVec {
            len: self.cols,
            words: self.words[start..start + self.row_words].to_vec(),
        };
        v.mask_tail();
        v
    }

    pub fn col(&self, c: usize) -> BitVec {
        BitVec::from_fn(self.rows, |r| self.get(r, c))
    }

    pub fn xor(&self, other: &BitMat) -> BitMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        BitMat {
            rows: self.rows,
            cols: self.cols,
            row_words: self.row_words,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a ^ b)
                .collect(),
        }
    }

    /// Flattens row-major into one BitVec (no padding between rows).
    pub fn flatten(&self) -> BitVec {
        let rows: Vec<BitVec> = (0..self.rows).map(|r| self.row(r)).collect();
        let refs: Vec<&BitVec> = rows.iter().collect();
        BitVec::concat(&refs)
    }

    pub fn from_flat(rows: usize, cols: usize, flat: &BitVec) -> BitMat {
        assert_eq!(flat.len(), rows * cols);
        let parts = flat.split_into(rows.max(1));
        BitMat::from_rows(&parts)
    }

    /// Matrix product over GF(2): out[r][c] = ⊕_k self[r][k] · other[k][c].
    pub fn mul(&self, other: &BitMat) -> BitMat {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = BitMat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_start = r * out.row_words;
            for k in 0..self.cols {
                if self.get(r, k) {
                    let src = k * other.row_words;
                    for i in 0..other.row_words {
                        out.words[out_start + i] ^= other.words[src + i];
                    }
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> BitMat {
        BitMat::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn logical_bits(&self) -> u64 {
        (self.rows * self.cols) as u64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.flatten().to_bytes()
    }

    pub fn from_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<BitMat> {
        let flat = BitVec::from_bytes(rows * cols, bytes)?;
        Ok(BitMat::from_flat(rows, cols, &flat))
    }
}
