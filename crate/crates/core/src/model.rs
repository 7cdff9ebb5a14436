//! Revealed tree-ensemble models: structure, soft-voting prediction, and
//! the versioned model file format.

use crate::error::{Error, Result};
use crate::fixed::Codec;
use crate::ring::Ring;
use std::fmt::Write as _;
use std::path::Path;

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Dt,
    Rf,
    Xt,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dt => "dt",
            ModelKind::Rf => "rf",
            ModelKind::Xt => "xt",
        }
    }

    pub fn parse(s: &str) -> Result<ModelKind> {
        match s {
            "dt" => Ok(ModelKind::Dt),
            "rf" => Ok(ModelKind::Rf),
            "xt" => Ok(ModelKind::Xt),
            _ => Err(Error::config(format!("unknown model kind {s:?}"))),
        }
    }
}

/// One revealed node. `selector` is the split column in the tree's own
/// feature space (None for leaf-level nodes), `freqs` the per-class
/// instance counts of the subset reaching the node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RevealedNode {
    pub selector: Option<usize>,
    pub freqs: Vec<u128>,
    pub classify: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RevealedTree {
    /// levels[0] is the root level; level l holds p^l nodes.
    pub levels: Vec<Vec<RevealedNode>>,
    /// Original feature index per tree-space column.
    pub cols: Vec<usize>,
    /// XT only: encoded cut-point per tree-space column.
    pub cuts: Option<Vec<u128>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RevealedModel {
    pub kind: ModelKind,
    pub p: usize,
    pub classes: usize,
    pub depth: usize,
    pub features: usize,
    pub codec: Codec,
    /// Scale applied to raw data before encoding (data owners must apply
    /// the same at prediction time).
    pub scale: f64,
    /// DT/RF: per original feature, the p−1 encoded bin thresholds.
    pub feature_thresholds: Option<Vec<Vec<u128>>>,
    pub trees: Vec<RevealedTree>,
}

impl RevealedModel {
    /// Structural equality on splits, frequencies, and classify flags
    /// (thresholds carry probabilistic ±1 truncation and are excluded).
    pub fn trees_identical(&self, other: &RevealedModel) -> bool {
        if self.trees.len() != other.trees.len() {
            return false;
        }
        self.trees.iter().zip(&other.trees).all(|(a, b)| {
            a.levels == b.levels && a.cols == b.cols
        })
    }

    /// Soft-voting prediction for one raw (unscaled) instance.
    /// Each tree votes the normalized frequency vector of the first
    /// classifying node on the instance's path; votes are summed and the
    /// highest class wins, ties toward the lower index.
    pub fn predict(&self, raw: &[f64]) -> Result<(usize, Vec<f64>)> {
        if raw.len() != self.features {
            return Err(Error::model(format!(
                "instance has {} features, model expects {}",
                raw.len(),
                self.features
            )));
        }
        let ring = self.codec.ring();
        let enc: Vec<u128> = raw
            .iter()
            .map(|&x| self.codec.encode(x * self.scale))
            .collect::<Result<_>>()?;
        let mut scores = vec![0f64; self.classes];
        for tree in &self.trees {
            let vote = self.tree_vote(tree, &enc, ring)?;
            for (s, v) in scores.iter_mut().zip(&vote) {
                *s += v;
            }
        }
        let mut best = 0;
        for y in 1..self.classes {
            if scores[y] > scores[best] {
                best = y;
            }
        }
        Ok((best, scores))
    }

    fn tree_vote(&self, tree: &RevealedTree, enc: &[u128], ring: Ring) -> Result<Vec<f64>> {
        let mut idx = 0usize;
        for level in &tree.levels {
            let node = level
                .get(idx)
                .ok_or_else(|| Error::model("malformed tree: node index out of range"))?;
            if node.classify {
                let total: u128 = node.freqs.iter().sum();
                if total == 0 {
                    return Ok(vec![0.0; self.classes]);
                }
                return Ok(node
                    .freqs
                    .iter()
                    .map(|&f| f as f64 / total as f64)
                    .collect());
            }
            let col = node
                .selector
                .ok_or_else(|| Error::model("malformed tree: split node without selector"))?;
            let orig = *tree
                .cols
                .get(col)
                .ok_or_else(|| Error::model("malformed tree: selector column out of range"))?;
            let x = enc[orig];
            let bin = match (&tree.cuts, &self.feature_thresholds) {
                (Some(cuts), _) => {
                    // XT: binary split on the column's cut
                    (ring.signed(x) >= ring.signed(cuts[col])) as usize
                }
                (None, Some(ths)) => ths[orig]
                    .iter()
                    .filter(|&&h| ring.signed(x) >= ring.signed(h))
                    .count(),
                (None, None) => {
                    return Err(Error::model("model has neither cuts nor thresholds"))
                }
            };
            idx = idx * self.p + bin;
        }
        // every root-to-leaf path carries exactly one classifying node, so
        // reaching past the leaf level means the model is malformed
        Err(Error::model("no classifying node on path"))
    }

    /// Writes the versioned structured-text model file: header lines, one
    /// `fthresh`/`cuts` table per scope, and one record per node
    /// `(node id, feature index or −1, cut or -, class frequencies,
    /// classify flag)`.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "grove-model v{MODEL_FILE_VERSION}");
        let _ = writeln!(
            out,
            "kind={} p={} classes={} depth={} features={} trees={} lambda={} a={} b={} scale={}",
            self.kind.as_str(),
            self.p,
            self.classes,
            self.depth,
            self.features,
            self.trees.len(),
            self.codec.lambda(),
            self.codec.frac_bits(),
            self.codec.int_bits(),
            self.scale,
        );
        if let Some(ths) = &self.feature_thresholds {
            for (j, hs) in ths.iter().enumerate() {
                let vals: Vec<String> = hs
                    .iter()
                    .map(|&h| format!("{}", self.codec.decode(h)))
                    .collect();
                let _ = writeln!(out, "fthresh {} {}", j, vals.join(","));
            }
        }
        for (t, tree) in self.trees.iter().enumerate() {
            let _ = writeln!(out, "tree {t}");
            let cols: Vec<String> = tree.cols.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "cols {}", cols.join(","));
            if let Some(cuts) = &tree.cuts {
                let vals: Vec<String> = cuts
                    .iter()
                    .map(|&c| format!("{}", self.codec.decode(c)))
                    .collect();
                let _ = writeln!(out, "cuts {}", vals.join(","));
            }
            let mut id = 0usize;
            for level in &tree.levels {
                for node in level {
                    let feat = match node.selector {
                        Some(col) => tree.cols[col] as i64,
                        None => -1,
                    };
                    let cut = match (&tree.cuts, node.selector) {
                        (Some(cuts), Some(col)) => format!("{}", self.codec.decode(cuts[col])),
                        _ => "-".to_string(),
                    };
                    let freqs: Vec<String> =
                        node.freqs.iter().map(|f| f.to_string()).collect();
                    let _ = writeln!(
                        out,
                        "node {} {} {} {} {}",
                        id,
                        feat,
                        cut,
                        freqs.join(","),
                        node.classify as u8
                    );
                    id += 1;
                }
            }
        }
        let _ = writeln!(out, "end");
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<RevealedModel> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let head = lines
            .next()
            .ok_or_else(|| Error::model("empty model file"))?;
        if head.trim() != format!("grove-model v{MODEL_FILE_VERSION}") {
            return Err(Error::model(format!("unsupported model header {head:?}")));
        }
        let meta = lines
            .next()
            .ok_or_else(|| Error::model("missing model metadata"))?;
        let mut kv = std::collections::HashMap::new();
        for part in meta.split_whitespace() {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::model(format!("bad metadata field {part:?}")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<String> {
            kv.get(k)
                .cloned()
                .ok_or_else(|| Error::model(format!("missing metadata key {k}")))
        };
        let kind = ModelKind::parse(&get("kind")?)?;
        let p: usize = parse_num(&get("p")?)?;
        let classes: usize = parse_num(&get("classes")?)?;
        let depth: usize = parse_num(&get("depth")?)?;
        let features: usize = parse_num(&get("features")?)?;
        let ntrees: usize = parse_num(&get("trees")?)?;
        let codec = Codec::new(
            parse_num::<u32>(&get("lambda")?)?,
            parse_num::<u32>(&get("a")?)?,
            parse_num::<u32>(&get("b")?)?,
        )?;
        let scale: f64 = get("scale")?
            .parse()
            .map_err(|_| Error::model("bad scale"))?;

        let mut feature_thresholds: Option<Vec<Vec<u128>>> = None;
        let mut trees: Vec<RevealedTree> = Vec::new();
        let mut current: Option<RevealedTree> = None;
        let mut flat_nodes: Vec<RevealedNode> = Vec::new();

        let finish_tree = |tree: Option<RevealedTree>,
                           flat: &mut Vec<RevealedNode>,
                           trees: &mut Vec<RevealedTree>|
         -> Result<()> {
            if let Some(mut t) = tree {
                t.levels = levels_from_flat(std::mem::take(flat), p, depth)?;
                trees.push(t);
            }
            Ok(())
        };

        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            match it.next().unwrap() {
                "fthresh" => {
                    let j: usize = parse_num(it.next().unwrap_or(""))?;
                    let vals = it.next().unwrap_or("");
                    let hs: Vec<u128> = vals
                        .split(',')
                        .map(|v| {
                            v.parse::<f64>()
                                .map_err(|_| Error::model("bad threshold"))
                                .and_then(|x| codec.encode(x))
                        })
                        .collect::<Result<_>>()?;
                    let ths = feature_thresholds.get_or_insert_with(|| vec![Vec::new(); features]);
                    if j >= features {
                        return Err(Error::model("fthresh feature out of range"));
                    }
                    ths[j] = hs;
                }
                "tree" => {
                    finish_tree(current.take(), &mut flat_nodes, &mut trees)?;
                    current = Some(RevealedTree {
                        levels: Vec::new(),
                        cols: Vec::new(),
                        cuts: None,
                    });
                }
                "cols" => {
                    let t = current
                        .as_mut()
                        .ok_or_else(|| Error::model("cols before tree"))?;
                    t.cols = it
                        .next()
                        .unwrap_or("")
                        .split(',')
                        .map(parse_num)
                        .collect::<Result<_>>()?;
                }
                "cuts" => {
                    let t = current
                        .as_mut()
                        .ok_or_else(|| Error::model("cuts before tree"))?;
                    t.cuts = Some(
                        it.next()
                            .unwrap_or("")
                            .split(',')
                            .map(|v| {
                                v.parse::<f64>()
                                    .map_err(|_| Error::model("bad cut"))
                                    .and_then(|x| codec.encode(x))
                            })
                            .collect::<Result<_>>()?,
                    );
                }
                "node" => {
                    let _id: usize = parse_num(it.next().unwrap_or(""))?;
                    let feat: i64 = it
                        .next()
                        .unwrap_or("")
                        .parse()
                        .map_err(|_| Error::model("bad node feature"))?;
                    let cut_field = it.next().unwrap_or("-");
                    let freqs: Vec<u128> = it
                        .next()
                        .unwrap_or("")
                        .split(',')
                        .map(parse_num)
                        .collect::<Result<_>>()?;
                    let classify = it.next().unwrap_or("0") == "1";
                    let tree = current
                        .as_ref()
                        .ok_or_else(|| Error::model("node before tree"))?;
                    let selector = if feat < 0 {
                        None
                    } else {
                        let orig = feat as usize;
                        // with-replacement XT trees can hold one original
                        // feature in several columns; the cut value pins
                        // down which column the record means
                        let col = match (&tree.cuts, cut_field) {
                            (Some(cuts), cut) if cut != "-" => {
                                let cut: f64 =
                                    cut.parse().map_err(|_| Error::model("bad node cut"))?;
                                tree.cols.iter().enumerate().position(|(i, &c)| {
                                    c == orig && codec.decode(cuts[i]) == cut
                                })
                            }
                            _ => tree.cols.iter().position(|&c| c == orig),
                        };
                        Some(col.ok_or_else(|| Error::model("node feature not in tree cols"))?)
                    };
                    flat_nodes.push(RevealedNode {
                        selector,
                        freqs,
                        classify,
                    });
                }
                "end" => break,
                other => {
                    return Err(Error::model(format!("unknown model line {other:?}")));
                }
            }
        }
        finish_tree(current.take(), &mut flat_nodes, &mut trees)?;
        if trees.len() != ntrees {
            return Err(Error::model(format!(
                "model file announced {} trees, found {}",
                ntrees,
                trees.len()
            )));
        }
        Ok(RevealedModel {
            kind,
            p,
            classes,
            depth,
            features,
            codec,
            scale,
            feature_thresholds,
            trees,
        })
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse::<T>()
        .map_err(|_| Error::model(format!("bad numeric field {s:?}")))
}

fn levels_from_flat(
    flat: Vec<RevealedNode>,
    p: usize,
    depth: usize,
) -> Result<Vec<Vec<RevealedNode>>> {
    let mut expect = 0usize;
    let mut width = 1usize;
    for _ in 0..=depth {
        expect += width;
        width *= p;
    }
    if flat.len() != expect {
        return Err(Error::model(format!(
            "tree has {} nodes, expected {expect}",
            flat.len()
        )));
    }
    let mut levels = Vec::new();
    let mut it = flat.into_iter();
    let mut width = 1usize;
    for _ in 0..=depth {
        levels.push((&mut it).take(width).collect());
        width *= p;
    }
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> RevealedModel {
        RevealedModel {
            kind: ModelKind::Dt,
            p: 2,
            classes: 2,
            depth: 1,
            features: 3,
            codec: Codec::default64(),
            scale: 1.0,
            feature_thresholds: Some(vec![
                vec![Codec::default64().encode(5.0).unwrap()],
                vec![Codec::default64().encode(1.5).unwrap()],
                vec![Codec::default64().encode(-2.0).unwrap()],
            ]),
            trees: vec![RevealedTree {
                levels: vec![
                    vec![RevealedNode {
                        selector: Some(1),
                        freqs: vec![70, 30],
                        classify: false,
                    }],
                    vec![
                        RevealedNode {
                            selector: None,
                            freqs: vec![60, 5],
                            classify: true,
                        },
                        RevealedNode {
                            selector: None,
                            freqs: vec![10, 25],
                            classify: true,
                        },
                    ],
                ],
                cols: vec![0, 1, 2],
                cuts: None,
            }],
        }
    }

    #[test]
    fn predict_descends_and_votes() {
        let m = tiny_model();
        // feature 1 below 1.5 → left leaf (60, 5) → class 0
        let (label, scores) = m.predict(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(label, 0);
        assert!((scores[0] - 60.0 / 65.0).abs() < 1e-12);
        // feature 1 at the threshold goes to the upper bin
        let (label, _) = m.predict(&[0.0, 1.5, 0.0]).unwrap();
        assert_eq!(label, 1);
    }

    #[test]
    fn classifying_root_short_circuits() {
        let mut m = tiny_model();
        m.trees[0].levels[0][0].classify = true;
        let (label, scores) = m.predict(&[9.0, 9.0, 9.0]).unwrap();
        assert_eq!(label, 0);
        assert!((scores[0] - 0.7).abs() < 1e-12);
        assert!((scores[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn soft_vote_averages_trees() {
        let mut m = tiny_model();
        let mut t2 = m.trees[0].clone();
        t2.levels[0][0].classify = true;
        t2.levels[0][0].freqs = vec![20, 80];
        let mut t1 = m.trees[0].clone();
        t1.levels[0][0].classify = true;
        t1.levels[0][0].freqs = vec![70, 30];
        m.trees = vec![t1, t2];
        let (label, scores) = m.predict(&[0.0; 3]).unwrap();
        // (0.7, 0.3) + (0.2, 0.8) = (0.9, 1.1)
        assert_eq!(label, 1);
        assert!((scores[0] - 0.9).abs() < 1e-12);
        assert!((scores[1] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn zero_total_classifier_votes_zero() {
        let mut m = tiny_model();
        m.trees[0].levels[0][0].classify = true;
        m.trees[0].levels[0][0].freqs = vec![0, 0];
        let (_, scores) = m.predict(&[0.0; 3]).unwrap();
        assert_eq!(scores, vec![0.0, 0.0]);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        let m = tiny_model();
        m.write_file(&path).unwrap();
        let m2 = RevealedModel::read_file(&path).unwrap();
        assert_eq!(m, m2);
        // idempotent reveal-to-file
        m.write_file(&path).unwrap();
        assert_eq!(RevealedModel::read_file(&path).unwrap(), m2);
    }
}
