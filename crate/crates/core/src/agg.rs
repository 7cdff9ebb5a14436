//! Vector-level secure aggregates: tournament min/max and equal-width
//! discretization into one-hot encodings.

use crate::bits::{BitMat, BitVec};
use crate::compare::{extract_rounds, geq};
use crate::error::{Error, Result};
use crate::fixed::Codec;
use crate::proto::Session;
use crate::ring::{Mat, RingVec};
use crate::sharing::Role;

/// Pairwise tournament state for simultaneous min/max over many columns.
struct Tournament {
    mins: Vec<RingVec>,
    maxs: Vec<RingVec>,
}

/// π_minmax over several equal-ring columns at once; each layer compares
/// pairs of candidates, halving until one remains per column. Odd
/// leftovers pass through. Returns per-column (min, max) shares.
pub fn minmax_cols(
    sess: &mut Session,
    cols: &[RingVec],
    codec: &Codec,
) -> Result<(RingVec, RingVec)> {
    if cols.is_empty() {
        return Err(Error::usage("minmax needs at least one column"));
    }
    let ring = cols[0].ring();
    for c in cols {
        if c.is_empty() {
            return Err(Error::usage("minmax needs n ≥ 1"));
        }
        ring.check(c.ring())?;
    }
    let alpha = codec.alpha();
    let mut st = Tournament {
        mins: cols.to_vec(),
        maxs: cols.to_vec(),
    };
    let mut first = true;
    while st.mins.iter().any(|v| v.len() > 1) {
        // gather comparison operands: on the first layer one comparison per
        // pair serves both min and max; afterwards candidates differ
        let mut cmp_lhs: Vec<u128> = Vec::new();
        let mut cmp_rhs: Vec<u128> = Vec::new();
        for j in 0..st.mins.len() {
            let pairs = st.mins[j].len() / 2;
            for i in 0..pairs {
                cmp_lhs.push(st.mins[j].get(2 * i + 1));
                cmp_rhs.push(st.mins[j].get(2 * i));
            }
            if !first {
                for i in 0..pairs {
                    cmp_lhs.push(st.maxs[j].get(2 * i + 1));
                    cmp_rhs.push(st.maxs[j].get(2 * i));
                }
            }
        }
        let lhs = RingVec::new(ring, cmp_lhs);
        let rhs = RingVec::new(ring, cmp_rhs);
        // c = [hi ≥ lo]; min = select(c, lo, hi), max = select(c, hi, lo)
        let c_bits = geq(sess, &lhs, &rhs, alpha)?;
        let c_ring = sess.bit_to_ring(&c_bits, ring)?;

        // one batched select round for every min and max choice
        let mut sel_c: Vec<u128> = Vec::new();
        let mut sel_x: Vec<u128> = Vec::new();
        let mut sel_y: Vec<u128> = Vec::new();
        let mut cursor = 0usize;
        for j in 0..st.mins.len() {
            let pairs = st.mins[j].len() / 2;
            for i in 0..pairs {
                let c = c_ring.get(cursor + i);
                // min: c=1 → keep low element
                sel_c.push(c);
                sel_x.push(st.mins[j].get(2 * i));
                sel_y.push(st.mins[j].get(2 * i + 1));
            }
            let max_base = if first { cursor } else { cursor + pairs };
            for i in 0..pairs {
                let c = c_ring.get(max_base + i);
                // max: c=1 → keep high element
                sel_c.push(c);
                sel_x.push(st.maxs[j].get(2 * i + 1));
                sel_y.push(st.maxs[j].get(2 * i));
            }
            cursor += if first { pairs } else { 2 * pairs };
        }
        let chosen = sess.select_vec(
            &RingVec::new(ring, sel_c),
            &RingVec::new(ring, sel_x),
            &RingVec::new(ring, sel_y),
        )?;
        // rebuild candidate lists
        let mut offset = 0usize;
        for j in 0..st.mins.len() {
            let len = st.mins[j].len();
            let pairs = len / 2;
            let mut new_min = Vec::with_capacity(pairs + len % 2);
            let mut new_max = Vec::with_capacity(pairs + len % 2);
            for i in 0..pairs {
                new_min.push(chosen.get(offset + i));
            }
            for i in 0..pairs {
                new_max.push(chosen.get(offset + pairs + i));
            }
            if len % 2 == 1 {
                new_min.push(st.mins[j].get(len - 1));
                new_max.push(st.maxs[j].get(len - 1));
            }
            st.mins[j] = RingVec::new(ring, new_min);
            st.maxs[j] = RingVec::new(ring, new_max);
            offset += 2 * pairs;
        }
        first = false;
    }
    let mins = RingVec::new(ring, st.mins.iter().map(|v| v.get(0)).collect());
    let maxs = RingVec::new(ring, st.maxs.iter().map(|v| v.get(0)).collect());
    Ok((mins, maxs))
}

/// π_minmax for a single vector (n = 1 returns the element as both).
pub fn minmax(sess: &mut Session, d: &RingVec, codec: &Codec) -> Result<(u128, u128)> {
    let (mins, maxs) = minmax_cols(sess, std::slice::from_ref(d), codec)?;
    Ok((mins.get(0), maxs.get(0)))
}

/// Equal-width thresholds h_i = min + π_trunc((i/p)·(max−min)) for
/// i = 1..p−1, per column. Entirely local: i/p is a public fixed-point
/// constant and π_trunc is local. Returns an f × (p−1) matrix of shares.
pub fn thresholds(
    role: Role,
    mins: &RingVec,
    maxs: &RingVec,
    p: usize,
    codec: &Codec,
) -> Mat {
    let ring = mins.ring();
    let range = maxs.sub(mins);
    Mat::from_fn(ring, mins.len(), p - 1, |j, i| {
        let q = codec.encode_public_ratio((i + 1) as u64, p as u64);
        let scaled = ring.mul(q, range.get(j));
        ring.add(codec.trunc_share(scaled, role), mins.get(j))
    })
}

/// Output of the discretization of a full feature matrix.
#[derive(Clone, Debug)]
pub struct Discretized {
    /// n × (f·p) one-hot bin bits, feature-major blocks.
    pub ohe: BitMat,
    /// f × (p−1) bin thresholds (codec-ring shares).
    pub thresholds: Mat,
    /// Per-column (min, max) shares.
    pub mins: RingVec,
    pub maxs: RingVec,
}

/// π_DISC over all columns at once: min/max, thresholds, then batched
/// comparisons and one product round assemble the one-hot encodings.
pub fn discretize_cols(
    sess: &mut Session,
    cols: &[RingVec],
    p: usize,
    codec: &Codec,
) -> Result<Discretized> {
    if p < 2 {
        return Err(Error::usage("discretization needs p ≥ 2"));
    }
    let f = cols.len();
    let n = cols[0].len();
    let ring = cols[0].ring();
    let (mins, maxs) = minmax_cols(sess, cols, codec)?;
    let th = thresholds(sess.role(), &mins, &maxs, p, codec);

    // e[j][t][i] = [d_i ≥ h_t] for every feature j, batched in one call
    let mut lhs = Vec::with_capacity(f * (p - 1) * n);
    let mut rhs = Vec::with_capacity(f * (p - 1) * n);
    for j in 0..f {
        for t in 0..p - 1 {
            for i in 0..n {
                lhs.push(cols[j].get(i));
                rhs.push(th.at(j, t));
            }
        }
    }
    let e = geq(
        sess,
        &RingVec::new(ring, lhs),
        &RingVec::new(ring, rhs),
        codec.alpha(),
    )?;
    let e_at = |j: usize, t: usize, i: usize| e.get((j * (p - 1) + t) * n + i);

    // middle bins e_t ∧ ¬e_{t+1}, one round (p = 2 needs no products)
    let mid = if p > 2 {
        let mut xs = Vec::with_capacity(f * (p - 2));
        let mut ys = Vec::with_capacity(f * (p - 2));
        for j in 0..f {
            for t in 0..p - 2 {
                xs.push(e.extract((j * (p - 1) + t) * n, n));
                let next = e.extract((j * (p - 1) + t + 1) * n, n);
                ys.push(flip_bits(sess.role(), &next));
            }
        }
        let xs_ref: Vec<&BitVec> = xs.iter().collect();
        let ys_ref: Vec<&BitVec> = ys.iter().collect();
        Some(sess.bit_and(&BitVec::concat(&xs_ref), &BitVec::concat(&ys_ref))?)
    } else {
        None
    };
    let mid_at = |j: usize, t: usize, i: usize| {
        mid.as_ref()
            .map(|m| m.get((j * (p - 2) + t) * n + i))
            .unwrap_or(false)
    };

    let is_a = sess.role().is_a();
    let mut ohe = BitMat::zeros(n, f * p);
    for j in 0..f {
        for i in 0..n {
            // bin 0: 1 − e_1 (A flips)
            let b0 = e_at(j, 0, i) ^ is_a;
            ohe.set(i, j * p, b0);
            for v in 1..p - 1 {
                ohe.set(i, j * p + v, mid_at(j, v - 1, i));
            }
            ohe.set(i, j * p + (p - 1), e_at(j, p - 2, i));
        }
    }
    Ok(Discretized {
        ohe,
        thresholds: th,
        mins,
        maxs,
    })
}

fn flip_bits(role: Role, v: &BitVec) -> BitVec {
    match role {
        Role::A => v.not(),
        Role::B => v.clone(),
    }
}

/// Communication rounds of one minmax layer: comparison, conversion,
/// selection.
pub fn minmax_layer_rounds(codec: &Codec) -> u64 {
    extract_rounds(codec.alpha()) + 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proto::testutil::run_pair;
    use crate::sharing;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn enc_all(codec: &Codec, vals: &[f64]) -> RingVec {
        RingVec::new(
            codec.ring(),
            vals.iter().map(|&x| codec.encode(x).unwrap()).collect(),
        )
    }

    fn share(v: &RingVec, seed: u64) -> (RingVec, RingVec) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        sharing::split_ring_vec(v, &mut rng)
    }

    #[test]
    fn minmax_spec_examples() {
        let codec = Codec::default64();
        let d = enc_all(&codec, &[3.0, 1.0, 4.0, 1.0, 5.0]);
        let (da, db) = share(&d, 1);
        let ((mna, mxa), (mnb, mxb)) = run_pair(1, move |s| {
            let d = if s.role().is_a() { da.clone() } else { db.clone() };
            minmax(s, &d, &codec)
        });
        let ring = codec.ring();
        assert_eq!(codec.decode(ring.add(mna, mnb)), 1.0);
        assert_eq!(codec.decode(ring.add(mxa, mxb)), 5.0);

        let d = enc_all(&codec, &[-2.0, 7.0]);
        let (da, db) = share(&d, 2);
        let ((mna, mxa), (mnb, mxb)) = run_pair(2, move |s| {
            let d = if s.role().is_a() { da.clone() } else { db.clone() };
            minmax(s, &d, &codec)
        });
        assert_eq!(codec.decode(ring.add(mna, mnb)), -2.0);
        assert_eq!(codec.decode(ring.add(mxa, mxb)), 7.0);
    }

    #[test]
    fn minmax_random_vectors_match_plaintext() {
        let codec = Codec::default64();
        let ring = codec.ring();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for trial in 0..40 {
            let n = rng.gen_range(1..40);
            let vals: Vec<f64> = (0..n)
                .map(|_| (rng.gen_range(-1_000_000i64..1_000_000) as f64) / 500.0)
                .collect();
            let want_min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let want_max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let d = enc_all(&codec, &vals);
            let (da, db) = share(&d, 100 + trial);
            let ((mna, mxa), (mnb, mxb)) = run_pair(200 + trial, move |s| {
                let d = if s.role().is_a() { da.clone() } else { db.clone() };
                minmax(s, &d, &codec)
            });
            // encode is monotone, so the secure min/max must equal the
            // encoding of the plaintext min/max exactly
            assert_eq!(ring.add(mna, mnb), codec.encode(want_min).unwrap());
            assert_eq!(ring.add(mxa, mxb), codec.encode(want_max).unwrap());
        }
    }

    #[test]
    fn minmax_round_budget() {
        let codec = Codec::default64();
        let d = enc_all(&codec, &(0..32).map(|i| i as f64).collect::<Vec<_>>());
        let (da, db) = share(&d, 5);
        let ((rounds, _), _) = run_pair(3, move |s| {
            let d = if s.role().is_a() { da.clone() } else { db.clone() };
            let before = s.chan.metrics().rounds;
            let mm = minmax(s, &d, &codec)?;
            Ok((s.chan.metrics().rounds - before, mm))
        });
        // ⌈log n⌉ layers at ≤ ⌈log(a+b)⌉ + 3 rounds each (comparison
        // ⌈log(a+b)⌉+1, conversion 1, select 1)
        let layers = 5;
        assert_eq!(rounds, layers * minmax_layer_rounds(&codec));
        assert!(minmax_layer_rounds(&codec) <= ((32f64).log2().ceil() as u64) + 3);
    }

    #[test]
    fn thresholds_spec_example() {
        // min=0, max=150, p=6 → thresholds near (25, 50, 75, 100, 125);
        // the public i/p constants carry a ≤ 2^-a quantization, so assert
        // within (range + 2)·2^-a rather than exactly
        let codec = Codec::default64();
        let mins = enc_all(&codec, &[0.0]);
        let maxs = enc_all(&codec, &[150.0]);
        let (mina, minb) = share(&mins, 11);
        let (maxa, maxb) = share(&maxs, 12);
        let ring = codec.ring();
        let ha = thresholds(Role::A, &mina, &maxa, 6, &codec);
        let hb = thresholds(Role::B, &minb, &maxb, 6, &codec);
        let tol = (150.0 + 2.0) / 1024.0;
        for (i, expect) in [25.0, 50.0, 75.0, 100.0, 125.0].iter().enumerate() {
            let got = codec.decode(ring.add(ha.at(0, i), hb.at(0, i)));
            assert!((got - expect).abs() <= tol, "h{i}: {got} vs {expect}");
        }

        // min = max → all thresholds equal min
        let (mina, minb) = share(&enc_all(&codec, &[42.0]), 13);
        let ha = thresholds(Role::A, &mina, &mina.clone(), 4, &codec);
        let hb = thresholds(Role::B, &minb, &minb.clone(), 4, &codec);
        for i in 0..3 {
            let got = codec.decode(ring.add(ha.at(0, i), hb.at(0, i)));
            assert!((got - 42.0).abs() <= 2.0 / 1024.0);
        }
    }

    #[test]
    fn discretize_spec_example() {
        // thresholds 25..125 (p=6, data spanning 0..150): d = 80 → bin 3
        let codec = Codec::default64();
        let vals = vec![0.0, 150.0, 80.0, 24.0, 149.0];
        let d = enc_all(&codec, &vals);
        let (da, db) = share(&d, 21);
        let (ra, rb) = run_pair(4, move |s| {
            let d = if s.role().is_a() { da.clone() } else { db.clone() };
            let out = discretize_cols(s, &[d], 6, &codec)?;
            Ok(out.ohe)
        });
        let ohe = ra.xor(&rb);
        let bins: Vec<usize> = (0..vals.len())
            .map(|i| (0..6).position(|v| ohe.get(i, v)).unwrap())
            .collect();
        assert_eq!(bins, vec![0, 5, 3, 0, 5]);
        // every row is one-hot
        for i in 0..vals.len() {
            assert_eq!((0..6).filter(|&v| ohe.get(i, v)).count(), 1);
        }
    }

    #[test]
    fn discretize_matches_plaintext_binning() {
        let codec = Codec::default64();
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        for &p in &[2usize, 3, 5, 8] {
            let n = 200;
            let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-500.0..500.0)).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let range = hi - lo;
            let d = enc_all(&codec, &vals);
            let (da, db) = share(&d, 300 + p as u64);
            let (ra, rb) = run_pair(300 + p as u64, move |s| {
                let d = if s.role().is_a() { da.clone() } else { db.clone() };
                Ok(discretize_cols(s, &[d], p, &codec)?.ohe)
            });
            let ohe = ra.xor(&rb);
            let mut mismatch = 0;
            for i in 0..n {
                let got = (0..p).position(|v| ohe.get(i, v)).unwrap();
                let ideal = (((vals[i] - lo) / range) * p as f64).floor() as usize;
                let ideal = ideal.min(p - 1);
                if got != ideal {
                    // only boundary-adjacent values may disagree
                    let near = (1..p).any(|t| {
                        let h = lo + range * t as f64 / p as f64;
                        (vals[i] - h).abs() <= range * 2.0 / 1024.0
                    });
                    assert!(near, "value {} binned {} vs {}", vals[i], got, ideal);
                    mismatch += 1;
                }
            }
            assert!(mismatch * 1000 < n, "too many boundary mismatches");
        }
    }
}
