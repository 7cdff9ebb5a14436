//! Secure comparison via single-bit extraction.
//!
//! The carry into bit α of a two-party share sum is computed with a
//! matrix composition network over cells M_j = [[p_j, g_j], [0, 1]] where
//! p_j = a_j ⊕ b_j and g_j = a_j·b_j; composing M₂∘M₁ = (p₂p₁, g₂ ⊕ p₂g₁)
//! pairwise until M_{1.(α−1)} remains yields c_{α−1}, and the extracted
//! bit is p_α ⊕ c_{α−1}. Everything here is batched: one invocation over
//! N values costs the same rounds as over one.

use crate::bits::BitVec;
use crate::error::{Error, Result};
use crate::proto::Session;
use crate::ring::RingVec;
use crate::sharing::Role;

/// Propagate/generate cells for one bit position across a batch.
#[derive(Clone)]
struct Cell {
    p: BitVec,
    g: BitVec,
}

/// Flips a shared bit vector: party A xors 1 into its share.
fn flip(sess: &Session, v: &BitVec) -> BitVec {
    match sess.role() {
        Role::A => v.not(),
        Role::B => v.clone(),
    }
}

/// Extracts this party's share bits at positions 1..=count.
fn share_bit_planes(vals: &RingVec, count: u32) -> Vec<BitVec> {
    let ring = vals.ring();
    (1..=count)
        .map(|j| BitVec::from_fn(vals.len(), |i| ring.bit(vals.get(i), j)))
        .collect()
}

/// The g-round of the composition network: g_j = a_j·b_j where a_j is
/// party A's share bit and b_j party B's, computed as a Z₂ product of the
/// sharings (a_j, 0) and (0, b_j).
fn g_round(sess: &mut Session, planes: &[BitVec]) -> Result<Vec<BitVec>> {
    let n = planes.first().map(|p| p.len()).unwrap_or(0);
    let refs: Vec<&BitVec> = planes.iter().collect();
    let mine = BitVec::concat(&refs);
    let zero = BitVec::zeros(mine.len());
    let (x, y) = if sess.role().is_a() {
        (mine, zero)
    } else {
        (zero, mine)
    };
    let g = sess.bit_and(&x, &y)?;
    Ok(g
        .split_into(planes.len())
        .into_iter()
        .map(|v| {
            debug_assert_eq!(v.len(), n);
            v
        })
        .collect())
}

/// One layer of pairwise compositions: cells[2i+1] ∘ cells[2i]; an odd
/// trailing cell passes through. Both products of every composition are
/// batched into a single round.
fn compose_layer(sess: &mut Session, cells: Vec<Cell>) -> Result<Vec<Cell>> {
    let pairs = cells.len() / 2;
    if pairs == 0 {
        return Ok(cells);
    }
    let mut xs = Vec::with_capacity(2 * pairs);
    let mut ys = Vec::with_capacity(2 * pairs);
    for i in 0..pairs {
        let hi = &cells[2 * i + 1];
        let lo = &cells[2 * i];
        // p₂·p₁ then p₂·g₁
        xs.push(&hi.p);
        ys.push(&lo.p);
    }
    for i in 0..pairs {
        xs.push(&cells[2 * i + 1].p);
        ys.push(&cells[2 * i].g);
    }
    let prod = sess.bit_and(&BitVec::concat(&xs), &BitVec::concat(&ys))?;
    let parts = prod.split_into(2 * pairs);
    let mut out = Vec::with_capacity(pairs + cells.len() % 2);
    for i in 0..pairs {
        let new_p = parts[i].clone();
        let new_g = cells[2 * i + 1].g.xor(&parts[pairs + i]);
        out.push(Cell { p: new_p, g: new_g });
    }
    if cells.len() % 2 == 1 {
        out.push(cells[cells.len() - 1].clone());
    }
    Ok(out)
}

/// π_BTX, batched: extracts bit α (1-based) of each shared value.
/// Rounds: 0 for α = 1, else ⌈log(α−1)⌉ + 1.
pub fn extract_bit(sess: &mut Session, vals: &RingVec, alpha: u32) -> Result<BitVec> {
    let lambda = vals.ring().width();
    if alpha < 1 || alpha > lambda {
        return Err(Error::usage(format!(
            "bit position α={alpha} outside 1..={lambda}"
        )));
    }
    let planes = share_bit_planes(vals, alpha);
    if alpha == 1 {
        return Ok(planes.into_iter().next().unwrap());
    }
    let g = g_round(sess, &planes[..(alpha - 1) as usize])?;
    let mut cells: Vec<Cell> = planes[..(alpha - 1) as usize]
        .iter()
        .zip(g)
        .map(|(p, g)| Cell { p: p.clone(), g })
        .collect();
    while cells.len() > 1 {
        cells = compose_layer(sess, cells)?;
    }
    let carry = &cells[0].g;
    Ok(planes[(alpha - 1) as usize].xor(carry))
}

/// π_decompOPT, batched: full bit decomposition. Returns Λ bit planes,
/// LSB first; plane j holds bit j+1 of every value.
pub fn decompose_bits(sess: &mut Session, vals: &RingVec) -> Result<Vec<BitVec>> {
    let lambda = vals.ring().width();
    let planes = share_bit_planes(vals, lambda);
    if lambda == 1 {
        return Ok(planes);
    }
    let g = g_round(sess, &planes[..(lambda - 1) as usize])?;
    let mut pre: Vec<Cell> = planes[..(lambda - 1) as usize]
        .iter()
        .zip(g)
        .map(|(p, g)| Cell { p: p.clone(), g })
        .collect();
    // Sklansky prefix network over the composition: after level t, entry j
    // composes the cells of its 2^(t+1)-aligned block up to j.
    let count = pre.len();
    let mut block = 1usize;
    while block < count {
        let mut xs: Vec<BitVec> = Vec::new();
        let mut ys: Vec<BitVec> = Vec::new();
        let mut targets: Vec<usize> = Vec::new();
        let mut start = 0;
        while start < count {
            let pivot = start + block - 1;
            if pivot + 1 < count {
                for j in pivot + 1..(start + 2 * block).min(count) {
                    targets.push(j);
                    xs.push(pre[j].p.clone());
                    ys.push(pre[pivot].p.clone());
                }
            }
            start += 2 * block;
        }
        if !targets.is_empty() {
            let mut gx = Vec::new();
            let mut gy = Vec::new();
            let mut start = 0;
            while start < count {
                let pivot = start + block - 1;
                if pivot + 1 < count {
                    for j in pivot + 1..(start + 2 * block).min(count) {
                        gx.push(pre[j].p.clone());
                        gy.push(pre[pivot].g.clone());
                    }
                }
                start += 2 * block;
            }
            let all_x: Vec<&BitVec> = xs.iter().chain(gx.iter()).collect();
            let all_y: Vec<&BitVec> = ys.iter().chain(gy.iter()).collect();
            let prod = sess.bit_and(&BitVec::concat(&all_x), &BitVec::concat(&all_y))?;
            let parts = prod.split_into(2 * targets.len());
            for (i, &j) in targets.iter().enumerate() {
                let new_p = parts[i].clone();
                let new_g = pre[j].g.xor(&parts[targets.len() + i]);
                pre[j] = Cell { p: new_p, g: new_g };
            }
        }
        block *= 2;
    }
    // s_1 = p_1; s_j = p_j ⊕ c_{j−1} with c_j the g of prefix j
    let mut out = Vec::with_capacity(lambda as usize);
    out.push(planes[0].clone());
    for j in 1..lambda as usize {
        out.push(planes[j].xor(&pre[j - 1].g));
    }
    Ok(out)
}

/// π_GEQ, batched: returns Z₂ shares of [x ≥ y], requiring |x−y| < 2^{Λ−1}
/// and both values confined so that bit α equals the sign bit.
pub fn geq(sess: &mut Session, x: &RingVec, y: &RingVec, alpha: u32) -> Result<BitVec> {
    let diff = x.sub(y);
    let msb = extract_bit(sess, &diff, alpha)?;
    Ok(flip(sess, &msb))
}

/// π_GEQ against public constants (subtracted locally by party A).
pub fn geq_const(sess: &mut Session, x: &RingVec, y: u128, alpha: u32) -> Result<BitVec> {
    let ring = x.ring();
    let diff = match sess.role() {
        Role::A => x.map(|v| ring.sub(v, y)),
        Role::B => x.clone(),
    };
    let msb = extract_bit(sess, &diff, alpha)?;
    Ok(flip(sess, &msb))
}

/// π_EQ, batched: returns Z₂ shares of [x = y]. The two bit extractions
/// run in one combined batch, so rounds equal a single extraction.
pub fn eq(sess: &mut Session, x: &RingVec, y: &RingVec, alpha: u32) -> Result<BitVec> {
    let n = x.len();
    let d1 = x.sub(y);
    let d2 = y.sub(x);
    let both = RingVec::concat(&[&d1, &d2]);
    let msb = extract_bit(sess, &both, alpha)?;
    let m1 = msb.extract(0, n);
    let m2 = msb.extract(n, n);
    Ok(flip(sess, &m1.xor(&m2)))
}

/// π_EQ against public constants.
pub fn eq_const(sess: &mut Session, x: &RingVec, y: u128, alpha: u32) -> Result<BitVec> {
    let ring = x.ring();
    let shifted = match sess.role() {
        Role::A => x.map(|v| ring.sub(v, y)),
        Role::B => x.clone(),
    };
    let zero = RingVec::zeros(ring, x.len());
    eq(sess, &shifted, &zero, alpha)
}

/// Shared-bit OR, batched: x ∨ y = ¬(¬x ∧ ¬y). One round.
pub fn bit_or(sess: &mut Session, x: &BitVec, y: &BitVec) -> Result<BitVec> {
    let nx = flip(sess, x);
    let ny = flip(sess, y);
    let nand = sess.bit_and(&nx, &ny)?;
    Ok(flip(sess, &nand))
}

/// Rounds taken by one batched extraction at position α.
pub fn extract_rounds(alpha: u32) -> u64 {
    if alpha <= 1 {
        0
    } else {
        (alpha as u64 - 1).next_power_of_two().trailing_zeros() as u64 + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proto::testutil::run_pair;
    use crate::ring::Ring;
    use crate::sharing;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn share_vals(ring: Ring, vals: &[u128], seed: u64) -> (RingVec, RingVec) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        sharing::split_ring_vec(&RingVec::new(ring, vals.to_vec()), &mut rng)
    }

    #[test]
    fn extract_bit_small_ring_exhaustive() {
        // all values x in Z_{2^8}, all α, many share splits
        let ring = Ring::new(8);
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        for alpha in 1..=8u32 {
            let vals: Vec<u128> = (0..256u128).collect();
            let (xa, xb) = sharing::split_ring_vec(&RingVec::new(ring, vals.clone()), &mut rng);
            let (ba, bb) = run_pair(alpha as u64, move |s| {
                let x = if s.role().is_a() { xa.clone() } else { xb.clone() };
                extract_bit(s, &x, alpha)
            });
            let bits = ba.xor(&bb);
            for (i, &v) in vals.iter().enumerate() {
                assert_eq!(bits.get(i), ring.bit(v, alpha), "v={v} α={alpha}");
            }
        }
    }

    #[test]
    fn extract_bit_spec_example() {
        // x = 6 : α=1 → 0, α=2 → 1, α=3 → 1
        let ring = Ring::new(8);
        let (xa, xb) = share_vals(ring, &[6, 6, 6, 0], 7);
        let results: Vec<bool> = (1..=3)
            .map(|alpha| {
                let (xa, xb) = (xa.clone(), xb.clone());
                let (ba, bb) = run_pair(alpha as u64 + 100, move |s| {
                    let x = if s.role().is_a() { xa.clone() } else { xb.clone() };
                    extract_bit(s, &x, alpha)
                });
                ba.xor(&bb).get(0)
            })
            .collect();
        assert_eq!(results, vec![false, true, true]);
    }

    #[test]
    fn decompose_spec_examples() {
        let ring = Ring::new(4);
        let vals = vec![5u128, 0, 15];
        let (xa, xb) = share_vals(ring, &vals, 9);
        let (pa, pb) = run_pair(200, move |s| {
            let x = if s.role().is_a() { xa.clone() } else { xb.clone() };
            decompose_bits(s, &x)
        });
        let planes: Vec<BitVec> = pa.iter().zip(&pb).map(|(a, b)| a.xor(b)).collect();
        // x = 5 → bits (1,0,1,0) LSB-first
        assert_eq!(
            (0..4).map(|j| planes[j].get(0)).collect::<Vec<_>>(),
            vec![true, false, true, false]
        );
        // x = 0 → all zero
        assert!((0..4).all(|j| !planes[j].get(1)));
        // x = 2^Λ′ − 1 → all one
        assert!((0..4).all(|j| planes[j].get(2)));
    }

    #[test]
    fn decompose_agrees_with_extract_randomized() {
        let ring = Ring::new(64);
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let vals: Vec<u128> = (0..32).map(|_| rng.gen::<u64>() as u128).collect();
        let (xa, xb) = share_vals(ring, &vals, 10);
        let (pa, pb) = {
            let (xa, xb) = (xa.clone(), xb.clone());
            run_pair(201, move |s| {
                let x = if s.role().is_a() { xa.clone() } else { xb.clone() };
                decompose_bits(s, &x)
            })
        };
        let planes: Vec<BitVec> = pa.iter().zip(&pb).map(|(a, b)| a.xor(b)).collect();
        for alpha in [1u32, 2, 3, 17, 33, 64] {
            let (xa, xb) = (xa.clone(), xb.clone());
            let (ba, bb) = run_pair(300 + alpha as u64, move |s| {
                let x = if s.role().is_a() { xa.clone() } else { xb.clone() };
                extract_bit(s, &x, alpha)
            });
            let bits = ba.xor(&bb);
            for i in 0..vals.len() {
                assert_eq!(bits.get(i), planes[(alpha - 1) as usize].get(i));
            }
        }
    }

    #[test]
    fn geq_eq_consistency_randomized() {
        // for x≠y exactly one of geq(x,y), geq(y,x) is 1; for x=y both are
        let ring = Ring::new(16);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut xs: Vec<u128> = (0..500).map(|_| rng.gen_range(0..1u128 << 14)).collect();
        let ys: Vec<u128> = (0..500).map(|_| rng.gen_range(0..1u128 << 14)).collect();
        xs[0] = ys[0]; // force an equality case
        let (xa, xb) = share_vals(ring, &xs, 1);
        let (ya, yb) = share_vals(ring, &ys, 2);
        let (ra, rb) = run_pair(400, move |s| {
            let (x, y) = if s.role().is_a() {
                (xa.clone(), ya.clone())
            } else {
                (xb.clone(), yb.clone())
            };
            let g1 = geq(s, &x, &y, 16)?;
            let g2 = geq(s, &y, &x, 16)?;
            let e = eq(s, &x, &y, 16)?;
            Ok((g1, g2, e))
        });
        let g1 = ra.0.xor(&rb.0);
        let g2 = ra.1.xor(&rb.1);
        let e = ra.2.xor(&rb.2);
        for i in 0..xs.len() {
            assert_eq!(g1.get(i), xs[i] >= ys[i]);
            assert_eq!(g2.get(i), ys[i] >= xs[i]);
            assert_eq!(e.get(i), xs[i] == ys[i]);
            if xs[i] != ys[i] {
                assert!(g1.get(i) ^ g2.get(i));
            } else {
                assert!(g1.get(i) && g2.get(i));
            }
        }
    }

    #[test]
    fn round_counts_match_formula() {
        let ring = Ring::new(64);
        for alpha in [2u32, 9, 17, 33] {
            let (xa, xb) = share_vals(ring, &[12345; 8], alpha as u64);
            let ((rounds, _), _) = run_pair(500 + alpha as u64, move |s| {
                let x = if s.role().is_a() { xa.clone() } else { xb.clone() };
                let before = s.chan.metrics().rounds;
                let b = extract_bit(s, &x, alpha)?;
                Ok((s.chan.metrics().rounds - before, b))
            });
            assert_eq!(rounds, extract_rounds(alpha), "α={alpha}");
            let expect = ((alpha - 1) as f64).log2().ceil() as u64 + 1;
            assert_eq!(rounds, expect, "α={alpha}");
        }
    }

    #[test]
    fn eq_costs_same_rounds_as_geq() {
        let ring = Ring::new(64);
        let (xa, xb) = share_vals(ring, &[5; 4], 1);
        let (ya, yb) = share_vals(ring, &[9; 4], 2);
        let ((geq_rounds, eq_rounds), _) = run_pair(600, move |s| {
            let (x, y) = if s.role().is_a() {
                (xa.clone(), ya.clone())
            } else {
                (xb.clone(), yb.clone())
            };
            let t0 = s.chan.metrics().rounds;
            let _ = geq(s, &x, &y, 33)?;
            let t1 = s.chan.metrics().rounds;
            let _ = eq(s, &x, &y, 33)?;
            let t2 = s.chan.metrics().rounds;
            Ok((t1 - t0, t2 - t1))
        });
        assert_eq!(geq_rounds, eq_rounds);
    }
}
