//! Core secure-computation primitives: openings, Beaver (matrix)
//! multiplication, Z₂ products, bit-to-ring conversion, and oblivious
//! selection. All operations are batched; one call is one round.

use crate::bits::{BitMat, BitVec};
use crate::error::{Error, Result};
use crate::ring::{Mat, Ring, RingVec};
use crate::sharing::Role;
use crate::ti::{FixedId, Randomness};
use crate::transport::Channel;

pub struct Session<'a> {
    pub chan: &'a mut dyn Channel,
    pub rand: &'a mut dyn Randomness,
}

/// A secret matrix registered for repeated multiplication: its mask was
/// dealt once and E = M − R was opened once; later products against fresh
/// operands reuse E instead of opening M again.
#[derive(Clone, Debug)]
pub struct FixedMat {
    id: FixedId,
    /// Public difference E = M − R (both parties hold the same values).
    e: Mat,
    /// This party's share of the mask R.
    r: Mat,
}

impl FixedMat {
    pub fn rows(&self) -> usize {
        self.e.rows()
    }

    pub fn cols(&self) -> usize {
        self.e.cols()
    }

    pub fn ring(&self) -> Ring {
        self.e.ring()
    }
}

impl<'a> Session<'a> {
    pub fn new(chan: &'a mut dyn Channel, rand: &'a mut dyn Randomness) -> Session<'a> {
        Session { chan, rand }
    }

    pub fn role(&self) -> Role {
        self.chan.role()
    }

    fn is_a(&self) -> bool {
        self.role().is_a()
    }

    /// Opens a shared vector: both parties learn the plaintext.
    pub fn open_vec(&mut self, x: &RingVec) -> Result<RingVec> {
        let theirs = self.chan.exchange(&x.to_bytes(), x.logical_bits())?;
        let theirs = RingVec::from_bytes(x.ring(), x.len(), &theirs)?;
        Ok(x.add(&theirs))
    }

    pub fn open_mat(&mut self, x: &Mat) -> Result<Mat> {
        let v = self.open_vec(&x.as_ringvec())?;
        Ok(Mat::from_ringvec(v, x.rows(), x.cols()))
    }

    pub fn open_bits(&mut self, x: &BitVec) -> Result<BitVec> {
        let theirs = self.chan.exchange(&x.to_bytes(), x.len() as u64)?;
        let theirs = BitVec::from_bytes(x.len(), &theirs)?;
        Ok(x.xor(&theirs))
    }

    pub fn open_bitmat(&mut self, x: &BitMat) -> Result<BitMat> {
        let flat = self.open_bits(&x.flatten())?;
        Ok(BitMat::from_flat(x.rows(), x.cols(), &flat))
    }

    /// π_DM, elementwise and batched: one round, opens x−a and y−b only.
    pub fn mul_vec(&mut self, x: &RingVec, y: &RingVec) -> Result<RingVec> {
        x.ring().check(y.ring())?;
        if x.len() != y.len() {
            return Err(Error::usage("mul_vec length mismatch"));
        }
        let ring = x.ring();
        let n = x.len();
        let (a, b, c) = self.rand.ring_triple(ring, n)?;
        let d_e = RingVec::concat(&[&x.sub(&a), &y.sub(&b)]);
        let opened = self.open_vec(&d_e)?;
        let d = opened.extract(0, n);
        let e = opened.extract(n, n);
        // z = c + d·b + e·a (+ d·e carried by party A)
        let mut z = Vec::with_capacity(n);
        let asym = self.is_a();
        for i in 0..n {
            let mut zi = ring.add(c.get(i), ring.mul(d.get(i), b.get(i)));
            zi = ring.add(zi, ring.mul(e.get(i), a.get(i)));
            if asym {
                zi = ring.add(zi, ring.mul(d.get(i), e.get(i)));
            }
            z.push(zi);
        }
        Ok(RingVec::new(ring, z))
    }

    /// π_DMM: secure matrix product, one round.
    pub fn matmul(&mut self, x: &Mat, y: &Mat) -> Result<Mat> {
        x.ring().check(y.ring())?;
        if x.cols() != y.rows() {
            return Err(Error::usage("matmul dimension mismatch"));
        }
        let ring = x.ring();
        let (a, b, c) = self.rand.mat_triple(ring, x.rows(), x.cols(), y.cols())?;
        let d_share = x.sub(&a).into_ringvec();
        let e_share = y.sub(&b).into_ringvec();
        let opened = self.open_vec(&RingVec::concat(&[&d_share, &e_share]))?;
        let d = Mat::from_ringvec(opened.extract(0, x.rows() * x.cols()), x.rows(), x.cols());
        let e = Mat::from_ringvec(
            opened.extract(x.rows() * x.cols(), y.rows() * y.cols()),
            y.rows(),
            y.cols(),
        );
        let mut z = c.add(&d.mul(&b)).add(&a.mul(&e));
        if self.is_a() {
            z = z.add(&d.mul(&e));
        }
        Ok(z)
    }

    /// Elementwise product of Z₂ sharings, batched: one round.
    pub fn bit_and(&mut self, x: &BitVec, y: &BitVec) -> Result<BitVec> {
        if x.len() != y.len() {
            return Err(Error::usage("bit_and length mismatch"));
        }
        let n = x.len();
        let (a, b, c) = self.rand.bit_triple(n)?;
        let d_e = BitVec::concat(&[&x.xor(&a), &y.xor(&b)]);
        let opened = self.open_bits(&d_e)?;
        let d = opened.extract(0, n);
        let e = opened.extract(n, n);
        let mut z = c.xor(&d.and(&b)).xor(&e.and(&a));
        if self.is_a() {
            z.xor_assign(&d.and(&e));
        }
        Ok(z)
    }

    /// Secure matrix product over GF(2), one round.
    pub fn bitmat_mul(&mut self, x: &BitMat, y: &BitMat) -> Result<BitMat> {
        if x.cols() != y.rows() {
            return Err(Error::usage("bitmat_mul dimension mismatch"));
        }
        let (a, b, c) = self.rand.bitmat_triple(x.rows(), x.cols(), y.cols())?;
        let d_share = x.xor(&a).flatten();
        let e_share = y.xor(&b).flatten();
        let opened = self.open_bits(&BitVec::concat(&[&d_share, &e_share]))?;
        let d = BitMat::from_flat(x.rows(), x.cols(), &opened.extract(0, x.rows() * x.cols()));
        let e = BitMat::from_flat(
            y.rows(),
            y.cols(),
            &opened.extract(x.rows() * x.cols(), y.rows() * y.cols()),
        );
        let mut z = c.xor(&d.mul(&b)).xor(&a.mul(&e));
        if self.is_a() {
            z = z.xor(&d.mul(&e));
        }
        Ok(z)
    }

    /// π_2toQ, batched: converts Z₂ sharings to Z_q sharings of 0/1.
    /// b = b₀ + b₁ − 2·b₀·b₁ where b₀ is A's bit and b₁ is B's.
    pub fn bit_to_ring(&mut self, bits: &BitVec, ring: Ring) -> Result<RingVec> {
        let n = bits.len();
        let own = RingVec::from_fn(ring, n, |i| bits.get(i) as u128);
        let zero = RingVec::zeros(ring, n);
        let (x, y) = if self.is_a() {
            (own.clone(), zero)
        } else {
            (zero, own.clone())
        };
        let t = self.mul_vec(&x, &y)?;
        Ok(own.sub(&t.scale(2)))
    }

    /// Oblivious select, batched: z_i = x_i if c_i = 1 else y_i, with c a
    /// Z_q sharing of 0/1. One multiplication round: z = y + c·(x − y).
    pub fn select_vec(&mut self, c: &RingVec, x: &RingVec, y: &RingVec) -> Result<RingVec> {
        let t = self.mul_vec(c, &x.sub(y))?;
        Ok(y.add(&t))
    }

    /// Registers a secret matrix for reuse: deals its mask and opens
    /// E = M − R once.
    pub fn register_fixed(&mut self, m: &Mat) -> Result<FixedMat> {
        let (id, r) = self.rand.fixed_mask(m.ring(), m.rows(), m.cols())?;
        let e = self.open_mat(&m.sub(&r))?;
        Ok(FixedMat { id, e, r })
    }

    /// W·F for fresh W against a registered F: opens only D = W − A.
    pub fn mul_fixed_rhs(&mut self, w: &Mat, f: &FixedMat) -> Result<Mat> {
        if w.cols() != f.rows() {
            return Err(Error::usage("mul_fixed_rhs dimension mismatch"));
        }
        let (a, c) = self.rand.fixed_mul_rhs(f.id, w.rows())?;
        let d = self.open_mat(&w.sub(&a))?;
        // W·F = D·E + D·R + A·E + A·R
        let mut z = c.add(&d.mul(&f.r)).add(&a.mul(&f.e));
        if self.is_a() {
            z = z.add(&d.mul(&f.e));
        }
        Ok(z)
    }

    /// F·S for fresh S against a registered F: opens only D = S − B.
    pub fn mul_fixed_lhs(&mut self, f: &FixedMat, s: &Mat) -> Result<Mat> {
        if f.cols() != s.rows() {
            return Err(Error::usage("mul_fixed_lhs dimension mismatch"));
        }
        let (b, c) = self.rand.fixed_mul_lhs(f.id, s.cols())?;
        let d = self.open_mat(&s.sub(&b))?;
        // F·S = E·D + R·D + E·B + R·B
        let mut z = c.add(&f.r.mul(&d)).add(&f.e.mul(&b));
        if self.is_a() {
            z = z.add(&f.e.mul(&d));
        }
        Ok(z)
    }

    /// Batched `mul_fixed_rhs`: every W_i · F in one opening round.
    pub fn mul_fixed_rhs_many(&mut self, ws: &[Mat], f: &FixedMat) -> Result<Vec<Mat>> {
        if ws.is_empty() {
            return Ok(Vec::new());
        }
        let mut randomness = Vec::with_capacity(ws.len());
        let mut d_shares = Vec::with_capacity(ws.len());
        for w in ws {
            if w.cols() != f.rows() {
                return Err(Error::usage("mul_fixed_rhs dimension mismatch"));
            }
            let (a, c) = self.rand.fixed_mul_rhs(f.id, w.rows())?;
            d_shares.push(w.sub(&a).into_ringvec());
            randomness.push((a, c));
        }
        let refs: Vec<&RingVec> = d_shares.iter().collect();
        let opened = self.open_vec(&RingVec::concat(&refs))?;
        let mut out = Vec::with_capacity(ws.len());
        let mut off = 0;
        for (w, (a, c)) in ws.iter().zip(randomness) {
            let len = w.rows() * w.cols();
            let d = Mat::from_ringvec(opened.extract(off, len), w.rows(), w.cols());
            off += len;
            let mut z = c.add(&d.mul(&f.r)).add(&a.mul(&f.e));
            if self.is_a() {
                z = z.add(&d.mul(&f.e));
            }
            out.push(z);
        }
        Ok(out)
    }

    /// Batched `mul_fixed_lhs`: every F · S_i in one opening round.
    pub fn mul_fixed_lhs_many(&mut self, f: &FixedMat, ss: &[Mat]) -> Result<Vec<Mat>> {
        if ss.is_empty() {
            return Ok(Vec::new());
        }
        let mut randomness = Vec::with_capacity(ss.len());
        let mut d_shares = Vec::with_capacity(ss.len());
        for s in ss {
            if f.cols() != s.rows() {
                return Err(Error::usage("mul_fixed_lhs dimension mismatch"));
            }
            let (b, c) = self.rand.fixed_mul_lhs(f.id, s.cols())?;
            d_shares.push(s.sub(&b).into_ringvec());
            randomness.push((b, c));
        }
        let refs: Vec<&RingVec> = d_shares.iter().collect();
        let opened = self.open_vec(&RingVec::concat(&refs))?;
        let mut out = Vec::with_capacity(ss.len());
        let mut off = 0;
        for (s, (b, c)) in ss.iter().zip(randomness) {
            let len = s.rows() * s.cols();
            let d = Mat::from_ringvec(opened.extract(off, len), s.rows(), s.cols());
            off += len;
            let mut z = c.add(&f.r.mul(&d)).add(&f.e.mul(&b));
            if self.is_a() {
                z = z.add(&f.e.mul(&d));
            }
            out.push(z);
        }
        Ok(out)
    }

    /// Batched `hadamard_fixed`: every w_i ⊙ F in one opening round.
    pub fn hadamard_fixed_many(&mut self, ws: &[RingVec], f: &FixedMat) -> Result<Vec<Mat>> {
        if ws.is_empty() {
            return Ok(Vec::new());
        }
        let ring = f.ring();
        let mut randomness = Vec::with_capacity(ws.len());
        let mut d_shares = Vec::with_capacity(ws.len());
        for w in ws {
            if w.len() != f.rows() {
                return Err(Error::usage("hadamard_fixed length mismatch"));
            }
            let (a, c) = self.rand.fixed_hadamard(f.id)?;
            d_shares.push(w.sub(&a));
            randomness.push((a, c));
        }
        let refs: Vec<&RingVec> = d_shares.iter().collect();
        let opened = self.open_vec(&RingVec::concat(&refs))?;
        let asym = self.is_a();
        let mut out = Vec::with_capacity(ws.len());
        for (i, (a, c)) in randomness.into_iter().enumerate() {
            let d = opened.extract(i * f.rows(), f.rows());
            let mut z = Mat::zeros(ring, f.rows(), f.cols());
            for r in 0..f.rows() {
                for cc in 0..f.cols() {
                    let mut v = ring.add(c.at(r, cc), ring.mul(d.get(r), f.r.at(r, cc)));
                    v = ring.add(v, ring.mul(a.get(r), f.e.at(r, cc)));
                    if asym {
                        v = ring.add(v, ring.mul(d.get(r), f.e.at(r, cc)));
                    }
                    z.set(r, cc, v);
                }
            }
            out.push(z);
        }
        Ok(out)
    }

    /// w ⊙ F per column for fresh w against a registered F: one opening of
    /// d = w − a serves every column.
    pub fn hadamard_fixed(&mut self, w: &RingVec, f: &FixedMat) -> Result<Mat> {
        if w.len() != f.rows() {
            return Err(Error::usage("hadamard_fixed length mismatch"));
        }
        let ring = w.ring();
        let (a, c) = self.rand.fixed_hadamard(f.id)?;
        let d = self.open_vec(&w.sub(&a))?;
        // w·F[r][c] = d·E + d·R + a·E + a·R   (elementwise per row)
        let mut z = Mat::zeros(ring, f.rows(), f.cols());
        let asym = self.is_a();
        for r in 0..f.rows() {
            for cc in 0..f.cols() {
                let mut v = ring.add(c.at(r, cc), ring.mul(d.get(r), f.r.at(r, cc)));
                v = ring.add(v, ring.mul(a.get(r), f.e.at(r, cc)));
                if asym {
                    v = ring.add(v, ring.mul(d.get(r), f.e.at(r, cc)));
                }
                z.set(r, cc, v);
            }
        }
        Ok(z)
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::sharing;
    use crate::ti::SharedDealer;
    use crate::transport::inproc_pair;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    /// Runs the same protocol body on two threads over an in-process pair
    /// and returns both results.
    pub fn run_pair<T: Send + 'static>(
        seed: u64,
        f: impl Fn(&mut Session) -> Result<T> + Send + Sync + 'static,
    ) -> (T, T) {
        let dealer = SharedDealer::new(seed);
        let (mut ca, mut cb) = inproc_pair();
        let mut ra = dealer.handle(Role::A);
        let mut rb = dealer.handle(Role::B);
        let f = std::sync::Arc::new(f);
        let fa = f.clone();
        let ta = std::thread::spawn(move || {
            let mut s = Session::new(&mut ca, &mut ra);
            fa(&mut s).unwrap()
        });
        let out_b = {
            let mut s = Session::new(&mut cb, &mut rb);
            f(&mut s).unwrap()
        };
        (ta.join().unwrap(), out_b)
    }

    pub fn share_pair(ring: Ring, vals: &[u128], seed: u64) -> (RingVec, RingVec) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        sharing::split_ring_vec(&RingVec::new(ring, vals.to_vec()), &mut rng)
    }
}
