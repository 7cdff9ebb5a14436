//! In-the-clear reference pipelines used for equivalence testing and
//! accuracy baselines. These mirror the secure protocols' arithmetic
//! exactly: fixed-point binning, the division-free Gini comparison over
//! exact integers, lowest-index tie-breaks, the classify-bit cascade, and
//! raw per-node frequencies.

use crate::error::{Error, Result};
use crate::fixed::Codec;
use crate::model::{ModelKind, RevealedModel, RevealedNode, RevealedTree};
use crate::ring::Ring;

/// Continuous training data (already scaled, as the data owners would
/// feed it to the sharing step) plus categorical labels in 0..classes.
#[derive(Clone, Debug)]
pub struct PlainDataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl PlainDataset {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn f(&self) -> usize {
        self.x.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn check(&self) -> Result<()> {
        if self.x.is_empty() {
            return Err(Error::data("empty dataset"));
        }
        let f = self.f();
        if self.x.iter().any(|r| r.len() != f) {
            return Err(Error::data("ragged feature rows"));
        }
        if self.y.len() != self.n() {
            return Err(Error::data("label count mismatch"));
        }
        if self.y.iter().any(|&y| y >= self.classes) {
            return Err(Error::data("label out of range"));
        }
        Ok(())
    }
}

/// Equal-width binning in the encoded domain, mirroring π_DISC without
/// the ±1 truncation jitter: h_i = enc(min) + (⌊2^a·i/p⌋·(enc(max)−enc(min)) >> a).
pub fn fixedpoint_thresholds(col_enc: &[u128], p: usize, codec: &Codec) -> Vec<u128> {
    let ring = codec.ring();
    let lo = *col_enc
        .iter()
        .min_by_key(|&&v| ring.signed(v))
        .expect("non-empty column");
    let hi = *col_enc
        .iter()
        .max_by_key(|&&v| ring.signed(v))
        .expect("non-empty column");
    let range = ring.sub(hi, lo);
    (1..p)
        .map(|i| {
            let q = codec.encode_public_ratio(i as u64, p as u64);
            ring.add(q.wrapping_mul(range) >> codec.frac_bits(), lo)
        })
        .collect()
}

/// Bin of an encoded value against encoded thresholds; ties go up.
pub fn bin_of(v: u128, thresholds: &[u128], ring: Ring) -> usize {
    thresholds
        .iter()
        .filter(|&&h| ring.signed(v) >= ring.signed(h))
        .count()
}

pub fn encode_column(col: &[f64], codec: &Codec) -> Result<Vec<u128>> {
    col.iter().map(|&x| codec.encode(x)).collect()
}

/// Categorical (binned) training set for the tree grower.
#[derive(Clone, Debug)]
pub struct BinnedData {
    /// bin index per (instance, column), row-major n × f.
    pub bins: Vec<usize>,
    pub labels: Vec<usize>,
    pub n: usize,
    pub f: usize,
    pub p: usize,
    pub classes: usize,
}

/// Exact stop threshold: the node stops when its instance count is
/// strictly below ⌈ε·n⌉ (ε given as the exact rational num/den).
pub fn epsilon_threshold(eps_num: u64, eps_den: u64, n: usize) -> u128 {
    ((eps_num as u128 * n as u128) + eps_den as u128 - 1) / eps_den as u128
}

/// The division-free Gini score of one feature at one node, as the exact
/// fraction (N, D): score = Σ_v g_v / t̃_v with t̃_v = max(t_v, 1),
/// N = Σ_v g_v·Π_{v'≠v} t̃_{v'} and D = Π_v t̃_v.
fn gini_fraction(counts: &[u128], p: usize, c: usize) -> (u128, u128) {
    let t: Vec<u128> = (0..p)
        .map(|v| (0..c).map(|y| counts[v * c + y]).sum())
        .collect();
    let tt: Vec<u128> = t.iter().map(|&x| if x == 0 { 1 } else { x }).collect();
    let mut den: u128 = 1;
    for &x in &tt {
        den *= x;
    }
    let mut num: u128 = 0;
    for v in 0..p {
        let g: u128 = (0..c).map(|y| counts[v * c + y] * counts[v * c + y]).sum();
        let mut excl: u128 = 1;
        for (v2, &x) in tt.iter().enumerate() {
            if v2 != v {
                excl *= x;
            }
        }
        num += g * excl;
    }
    (num, den)
}

/// Lowest-index argmax over the per-feature Gini fractions, compared by
/// cross-multiplication (exact in u128 under the training-ring bound).
fn gini_argmax(node_counts: &[u128], f: usize, p: usize, c: usize) -> usize {
    let mut best = 0usize;
    let (mut bn, mut bd) = gini_fraction(&node_counts[0..p * c], p, c);
    for j in 1..f {
        let (n, d) = gini_fraction(&node_counts[j * p * c..(j + 1) * p * c], p, c);
        if n * bd > bn * d {
            best = j;
            bn = n;
            bd = d;
        }
    }
    best
}

/// The in-the-clear twin of the secure tree grower: complete p-ary tree
/// of exact depth, per-node indicator subsets, Gini split selection with
/// lowest-index ties, stopping on label purity or the ε cutoff, and a
/// cascaded classify bit so descendants of a classifying node are dummies.
pub fn oracle_id3(data: &BinnedData, depth: usize, eps_thresh: u128) -> RevealedTree {
    let (n, f, p, c) = (data.n, data.f, data.p, data.classes);
    let mut levels: Vec<Vec<RevealedNode>> = Vec::with_capacity(depth + 1);
    let mut indicators: Vec<Vec<bool>> = vec![(0..n).map(|_| true).collect()];
    let mut already: Vec<bool> = vec![false];
    for level in 0..=depth {
        let mut nodes = Vec::with_capacity(indicators.len());
        let mut next_ind = Vec::new();
        let mut next_already = Vec::new();
        for (u, w) in indicators.iter().enumerate() {
            let mut freqs = vec![0u128; c];
            for i in 0..n {
                if w[i] {
                    freqs[data.labels[i]] += 1;
                }
            }
            let total: u128 = freqs.iter().sum();
            if level == depth {
                nodes.push(RevealedNode {
                    selector: None,
                    freqs,
                    classify: !already[u],
                });
                continue;
            }
            let stop = freqs.iter().any(|&fy| fy == total) || total < eps_thresh;
            let classify = stop && !already[u];
            let mut counts = vec![0u128; f * p * c];
            for i in 0..n {
                if w[i] {
                    for j in 0..f {
                        let v = data.bins[i * f + j];
                        counts[(j * p + v) * c + data.labels[i]] += 1;
                    }
                }
            }
            let sel = gini_argmax(&counts, f, p, c);
            nodes.push(RevealedNode {
                selector: Some(sel),
                freqs,
                classify,
            });
            for v in 0..p {
                next_ind.push(
                    (0..n)
                        .map(|i| w[i] && data.bins[i * f + sel] == v)
                        .collect(),
                );
                next_already.push(already[u] || classify);
            }
        }
        levels.push(nodes);
        indicators = next_ind;
        already = next_already;
    }
    RevealedTree {
        levels,
        cols: (0..f).collect(),
        cuts: None,
    }
}

/// Parameters shared by the ensemble oracles.
#[derive(Clone, Debug)]
pub struct OracleConfig {
    pub p: usize,
    pub depth: usize,
    pub eps_num: u64,
    pub eps_den: u64,
    pub codec: Codec,
    pub scale: f64,
}

/// In-the-clear random forest with injected feature/instance selections:
/// discretize once, then per tree select features and bagged rows and
/// grow an ID3 tree.
pub fn oracle_rf(
    data: &PlainDataset,
    cfg: &OracleConfig,
    features_per_tree: &[Vec<usize>],
    rows_per_tree: &[Vec<usize>],
) -> Result<RevealedModel> {
    data.check()?;
    if features_per_tree.len() != rows_per_tree.len() {
        return Err(Error::usage("selection shapes differ"));
    }
    let (n, f, c, p) = (data.n(), data.f(), data.classes, cfg.p);
    let mut thresholds = Vec::with_capacity(f);
    let mut bins_all = vec![0usize; n * f];
    let ring = cfg.codec.ring();
    for j in 0..f {
        let col: Vec<f64> = (0..n).map(|i| data.x[i][j]).collect();
        let enc = encode_column(&col, &cfg.codec)?;
        let hs = fixedpoint_thresholds(&enc, p, &cfg.codec);
        for i in 0..n {
            bins_all[i * f + j] = bin_of(enc[i], &hs, ring);
        }
        thresholds.push(hs);
    }
    let mut trees = Vec::new();
    for (feats, rows) in features_per_tree.iter().zip(rows_per_tree) {
        let k = feats.len();
        let s = rows.len();
        let bins_ref = &bins_all;
        let binned = BinnedData {
            bins: rows
                .iter()
                .flat_map(|&r| feats.iter().map(move |&j| bins_ref[r * f + j]))
                .collect(),
            labels: rows.iter().map(|&r| data.y[r]).collect(),
            n: s,
            f: k,
            p,
            classes: c,
        };
        let eps = epsilon_threshold(cfg.eps_num, cfg.eps_den, s);
        let mut tree = oracle_id3(&binned, cfg.depth, eps);
        tree.cols = feats.clone();
        trees.push(tree);
    }
    Ok(RevealedModel {
        kind: ModelKind::Rf,
        p,
        classes: c,
        depth: cfg.depth,
        features: f,
        codec: cfg.codec,
        scale: cfg.scale,
        feature_thresholds: Some(thresholds),
        trees,
    })
}

/// In-the-clear single decision tree: discretize every feature, no
/// selection, one ID3 tree over all instances.
pub fn oracle_dt(data: &PlainDataset, cfg: &OracleConfig) -> Result<RevealedModel> {
    let f = data.f();
    let rows: Vec<usize> = (0..data.n()).collect();
    let mut m = oracle_rf(data, cfg, &[(0..f).collect()], &[rows])?;
    m.kind = ModelKind::Dt;
    Ok(m)
}

/// In-the-clear extra-trees with injected feature selections and raw
/// cut-point ratios r ∈ [1, 2^a − 1]: per tree, binarize each selected
/// column at α = min + ((r·(max−min)) >> a) and grow a binary ID3 tree.
pub fn oracle_xt(
    data: &PlainDataset,
    cfg: &OracleConfig,
    features_per_tree: &[Vec<usize>],
    ratios_per_tree: &[Vec<u128>],
) -> Result<RevealedModel> {
    data.check()?;
    if features_per_tree.len() != ratios_per_tree.len() {
        return Err(Error::usage("selection shapes differ"));
    }
    let (n, f, c) = (data.n(), data.f(), data.classes);
    let ring = cfg.codec.ring();
    let mut enc_cols = Vec::with_capacity(f);
    let mut mins = Vec::with_capacity(f);
    let mut maxs = Vec::with_capacity(f);
    for j in 0..f {
        let col: Vec<f64> = (0..n).map(|i| data.x[i][j]).collect();
        let enc = encode_column(&col, &cfg.codec)?;
        mins.push(*enc.iter().min_by_key(|&&v| ring.signed(v)).unwrap());
        maxs.push(*enc.iter().max_by_key(|&&v| ring.signed(v)).unwrap());
        enc_cols.push(enc);
    }
    let eps = epsilon_threshold(cfg.eps_num, cfg.eps_den, n);
    let mut trees = Vec::new();
    for (feats, ratios) in features_per_tree.iter().zip(ratios_per_tree) {
        let k = feats.len();
        if ratios.len() != k {
            return Err(Error::usage("ratio count differs from selected features"));
        }
        let cuts: Vec<u128> = feats
            .iter()
            .zip(ratios)
            .map(|(&j, &r)| {
                let range = ring.sub(maxs[j], mins[j]);
                ring.add(r.wrapping_mul(range) >> cfg.codec.frac_bits(), mins[j])
            })
            .collect();
        let binned = BinnedData {
            bins: (0..n)
                .flat_map(|i| {
                    let enc_cols = &enc_cols;
                    let cuts = &cuts;
                    feats.iter().enumerate().map(move |(l, &j)| {
                        (ring.signed(enc_cols[j][i]) >= ring.signed(cuts[l])) as usize
                    })
                })
                .collect(),
            labels: data.y.clone(),
            n,
            f: k,
            p: 2,
            classes: c,
        };
        let mut tree = oracle_id3(&binned, cfg.depth, eps);
        tree.cols = feats.clone();
        tree.cuts = Some(cuts);
        trees.push(tree);
    }
    Ok(RevealedModel {
        kind: ModelKind::Xt,
        p: 2,
        classes: c,
        depth: cfg.depth,
        features: f,
        codec: cfg.codec,
        scale: cfg.scale,
        feature_thresholds: None,
        trees,
    })
}

/// Accuracy of a model over a raw plaintext set.
pub fn accuracy(model: &RevealedModel, x: &[Vec<f64>], y: &[usize]) -> Result<f64> {
    let mut hits = 0usize;
    for (row, &label) in x.iter().zip(y) {
        let (pred, _) = model.predict(row)?;
        if pred == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / x.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perfect_separator_data() -> PlainDataset {
        // feature 1 perfectly separates; feature 0 is constant
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let cls = (i % 2) as usize;
            x.push(vec![3.0, if cls == 0 { 1.0 } else { 9.0 }]);
            y.push(cls);
        }
        PlainDataset { x, y, classes: 2 }
    }

    fn cfg(p: usize, depth: usize) -> OracleConfig {
        OracleConfig {
            p,
            depth,
            eps_num: 5,
            eps_den: 100,
            codec: Codec::default64(),
            scale: 1.0,
        }
    }

    #[test]
    fn perfect_separator_wins_root() {
        let data = perfect_separator_data();
        let m = oracle_dt(&data, &cfg(2, 2)).unwrap();
        assert_eq!(m.trees[0].levels[0][0].selector, Some(1));
        // and the split is clean: root not classifying, children pure
        assert!(!m.trees[0].levels[0][0].classify);
        assert!(m.trees[0].levels[1][0].classify);
        assert!(m.trees[0].levels[1][1].classify);
        assert_eq!(m.trees[0].levels[1][0].freqs, vec![20, 0]);
        assert_eq!(m.trees[0].levels[1][1].freqs, vec![0, 20]);
        // prediction is perfect
        assert_eq!(accuracy(&m, &data.x, &data.y).unwrap(), 1.0);
    }

    #[test]
    fn all_same_label_root_classifies() {
        let mut data = perfect_separator_data();
        data.y = vec![0; data.y.len()];
        let m = oracle_dt(&data, &cfg(2, 2)).unwrap();
        let root = &m.trees[0].levels[0][0];
        assert!(root.classify);
        assert_eq!(root.freqs, vec![40, 0]);
        // descendants are dummies: no other classifying node on any path
        for level in &m.trees[0].levels[1..] {
            for node in level {
                assert!(!node.classify);
            }
        }
    }

    #[test]
    fn identical_features_tie_break_lowest() {
        let mut data = perfect_separator_data();
        // make both features identical columns
        for (i, row) in data.x.iter_mut().enumerate() {
            let v = if i % 2 == 0 { 1.0 } else { 9.0 };
            row[0] = v;
            row[1] = v;
        }
        let m = oracle_dt(&data, &cfg(2, 1)).unwrap();
        assert_eq!(m.trees[0].levels[0][0].selector, Some(0));
    }

    #[test]
    fn pure_function_repeatable() {
        let data = perfect_separator_data();
        let a = oracle_dt(&data, &cfg(3, 2)).unwrap();
        let b = oracle_dt(&data, &cfg(3, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_selection_reduces_rf_to_dt() {
        let data = perfect_separator_data();
        let n = data.n();
        let f = data.f();
        let dt = oracle_dt(&data, &cfg(2, 2)).unwrap();
        let rf = oracle_rf(
            &data,
            &cfg(2, 2),
            &[(0..f).collect()],
            &[(0..n).collect()],
        )
        .unwrap();
        assert!(dt.trees_identical(&rf));
    }

    #[test]
    fn xt_half_ratio_threshold_midpoint() {
        // r = 512 with a = 10 puts the cut at min + 0.5·range
        let data = PlainDataset {
            x: (0..20)
                .map(|i| vec![if i < 10 { 0.0 } else { 100.0 }])
                .collect(),
            y: (0..20).map(|i| (i >= 10) as usize).collect(),
            classes: 2,
        };
        let m = oracle_xt(&data, &cfg(2, 1), &[vec![0]], &[vec![512]]).unwrap();
        let cut = m.trees[0].cuts.as_ref().unwrap()[0];
        assert_eq!(m.codec.decode(cut), 50.0);
        assert_eq!(accuracy(&m, &data.x, &data.y).unwrap(), 1.0);
    }

    #[test]
    fn xt_constant_feature_binarizes_high() {
        // min = max → α = min, and geq includes equality: every value → 1
        let data = PlainDataset {
            x: (0..10).map(|_| vec![7.0]).collect(),
            y: (0..10).map(|i| (i % 2 == 0) as usize).collect(),
            classes: 2,
        };
        let m = oracle_xt(&data, &cfg(2, 1), &[vec![0]], &[vec![700]]).unwrap();
        let cut = m.trees[0].cuts.as_ref().unwrap()[0];
        assert_eq!(m.codec.decode(cut), 7.0);
        // root freqs live entirely in the high bin: the root split keeps
        // all instances in child 1
        assert_eq!(m.trees[0].levels[1][0].freqs, vec![0, 0]);
        assert_eq!(m.trees[0].levels[1][1].freqs, vec![5, 5]);
    }

    #[test]
    fn frequency_conservation() {
        let data = perfect_separator_data();
        let m = oracle_dt(&data, &cfg(3, 2)).unwrap();
        let tree = &m.trees[0];
        for (l, level) in tree.levels.iter().enumerate() {
            if l + 1 >= tree.levels.len() {
                break;
            }
            for (u, node) in level.iter().enumerate() {
                let mut child_sum = vec![0u128; m.classes];
                for v in 0..m.p {
                    let ch = &tree.levels[l + 1][u * m.p + v];
                    for y in 0..m.classes {
                        child_sum[y] += ch.freqs[y];
                    }
                }
                assert_eq!(child_sum, node.freqs);
            }
        }
        // root freqs sum to n
        let root_total: u128 = tree.levels[0][0].freqs.iter().sum();
        assert_eq!(root_total, data.n() as u128);
    }
}
