//! Deterministic synthetic dataset generators used by the test and
//! benchmark harnesses where the original benchmark CSVs cannot be
//! redistributed. Shapes and difficulty are modeled on the published
//! benchmarks; see the README for pointing the harness at real data.

use crate::oracle::PlainDataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

/// ECG-like surrogate: n × 188 raw columns of which the trailing block is
/// ≥80% zeros (exercising the sparse-column drop), dense noise columns,
/// and a block of cleanly separated informative columns. Binary labels,
/// roughly 72/28 imbalance, values in [0, 1].
pub fn ecg_like(seed: u64, n: usize) -> PlainDataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xec6);
    let fraw = 188;
    let informative = 40;
    let dense = 140;
    let y: Vec<usize> = (0..n).map(|_| (rng.gen::<f64>() < 0.72) as usize).collect();
    let perm = permutation(fraw, &mut rng);
    let mut x = vec![vec![0f64; fraw]; n];
    for (slot, &col) in perm.iter().enumerate() {
        for i in 0..n {
            let v = if col < informative {
                if y[i] == 1 {
                    0.62 + rng.gen::<f64>() * 0.36
                } else {
                    0.05 + rng.gen::<f64>() * 0.30
                }
            } else if col < dense {
                rng.gen::<f64>()
            } else if rng.gen::<f64>() < 0.10 {
                rng.gen::<f64>()
            } else {
                0.0
            };
            x[i][slot] = v;
        }
    }
    PlainDataset { x, y, classes: 2 }
}

/// BACK-like surrogate: 310 × 12 with a 100/210 class imbalance and two
/// overlapping class blobs whose mean separation fades across features,
/// then per-feature affine rescaling to spread the value ranges.
pub fn back_like(seed: u64) -> PlainDataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xbac);
    let (n, f, n_pos) = (310usize, 12usize, 100usize);
    let mu = [2.2, 1.8, 1.6, 1.5, 1.3, 1.2, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let unit = Normal::new(0.0, 1.0).unwrap();
    let scales: Vec<f64> = (0..f).map(|_| rng.gen_range(5.0..60.0)).collect();
    let offsets: Vec<f64> = (0..f).map(|_| rng.gen_range(-20.0..100.0)).collect();
    let mut rows: Vec<(Vec<f64>, usize)> = (0..n)
        .map(|i| {
            let label = (i < n_pos) as usize;
            let row: Vec<f64> = (0..f)
                .map(|j| {
                    let base = unit.sample(&mut rng) + mu[j] * label as f64;
                    base * scales[j] + offsets[j]
                })
                .collect();
            (row, label)
        })
        .collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        rows.swap(i, j);
    }
    let (x, y) = rows.into_iter().unzip();
    PlainDataset { x, y, classes: 2 }
}

/// Small random dataset for protocol-equivalence checks: values drawn on
/// a coarse lattice so bin boundaries rarely graze data points, labels
/// correlated with the first feature plus noise.
pub fn small_random(seed: u64, n: usize, f: usize, classes: usize) -> PlainDataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5a11);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..f)
            .map(|_| (rng.gen_range(0..640) as f64) / 16.0)
            .collect();
        let signal = row[0] / 40.0 + rng.gen::<f64>() * 0.6;
        y.push(((signal * classes as f64 / 1.6) as usize).min(classes - 1));
        x.push(row);
    }
    PlainDataset { x, y, classes }
}

fn permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
    v
}
