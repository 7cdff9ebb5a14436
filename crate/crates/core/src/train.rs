//! Secure tree training: the modified SID3T grower (fixed-depth p-ary
//! trees, oblivious Gini splits, classify-bit cascade, per-node class
//! frequencies), the random-forest and extra-trees pipelines around it,
//! and model reveal.

use crate::agg::{self, Discretized};
use crate::bits::{BitMat, BitVec};
use crate::compare::{bit_or, eq, eq_const, geq, geq_const};
use crate::error::{Error, Result};
use crate::fixed::Codec;
use crate::model::{ModelKind, RevealedModel, RevealedNode, RevealedTree};
use crate::oracle::epsilon_threshold;
use crate::proto::Session;
use crate::ring::{Mat, Ring, RingVec};
use crate::sharing::Role;
use crate::ti::Domain;
use sha2::{Digest, Sha256};

/// Public hyperparameters of one training session. Both parties must hold
/// byte-identical configurations (enforced by the handshake fingerprint).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub bins: usize,
    pub trees: usize,
    pub sel_feat: usize,
    pub sel_inst: usize,
    pub depth: usize,
    pub eps_num: u64,
    pub eps_den: u64,
    pub lambda: u32,
    pub frac: u32,
    pub int: u32,
    pub seed: u64,
    pub xt_strict_fs: bool,
}

/// Public shape of the shared dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataShape {
    pub n: usize,
    pub f: usize,
    pub classes: usize,
    pub scale: f64,
}

/// One party's view of the secret-shared training data.
#[derive(Clone, Debug)]
pub struct SharedDataset {
    /// n × f feature matrix in the codec ring.
    pub features: Mat,
    /// n × c one-hot label bits.
    pub labels: BitMat,
}

impl TrainConfig {
    pub fn codec(&self) -> Result<Codec> {
        Codec::new(self.lambda, self.frac, self.int)
    }

    /// Parses the flat key=value config format.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut kv = std::collections::HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("config line {}: expected key=value", lineno + 1))
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<String> {
            kv.get(k)
                .cloned()
                .ok_or_else(|| Error::config(format!("config missing key {k}")))
        };
        let opt = |k: &str, default: &str| kv.get(k).cloned().unwrap_or_else(|| default.into());
        let num = |k: &str, v: &str| -> Result<u64> {
            v.parse()
                .map_err(|_| Error::config(format!("config key {k}: bad number {v:?}")))
        };
        let model = ModelKind::parse(&get("model")?)?;
        let (eps_num, eps_den) = parse_decimal_fraction(&get("epsilon")?)?;
        let cfg = TrainConfig {
            model,
            bins: num("bins", &opt("bins", "2"))? as usize,
            trees: num("trees", &opt("trees", "1"))? as usize,
            sel_feat: num("sel_feat", &opt("sel_feat", "0"))? as usize,
            sel_inst: num("sel_inst", &opt("sel_inst", "0"))? as usize,
            depth: num("depth", &get("depth")?)? as usize,
            eps_num,
            eps_den,
            lambda: num("lambda", &opt("lambda", "64"))? as u32,
            frac: num("a", &opt("a", "10"))? as u32,
            int: num("b", &opt("b", "22"))? as u32,
            seed: num("seed", &opt("seed", "1"))?,
            xt_strict_fs: opt("xt_strict_fs", "false") == "true",
        };
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        format!(
            "model={}\nbins={}\ntrees={}\nsel_feat={}\nsel_inst={}\ndepth={}\nepsilon={}\nlambda={}\na={}\nb={}\nseed={}\nxt_strict_fs={}\n",
            self.model.as_str(),
            self.bins,
            self.trees,
            self.sel_feat,
            self.sel_inst,
            self.depth,
            self.epsilon_text(),
            self.lambda,
            self.frac,
            self.int,
            self.seed,
            self.xt_strict_fs,
        )
    }

    fn epsilon_text(&self) -> String {
        format!("{}", self.eps_num as f64 / self.eps_den as f64)
    }

    /// Effective bin count of the trees this config grows.
    pub fn p_effective(&self) -> usize {
        match self.model {
            ModelKind::Xt => 2,
            _ => self.bins,
        }
    }

    /// Instance count of one tree's training set.
    pub fn tree_instances(&self, n: usize) -> usize {
        match self.model {
            ModelKind::Rf => self.sel_inst,
            _ => n,
        }
    }

    pub fn tree_features(&self, f: usize) -> usize {
        match self.model {
            ModelKind::Dt => f,
            _ => self.sel_feat,
        }
    }

    pub fn tree_count(&self) -> usize {
        match self.model {
            ModelKind::Dt => 1,
            _ => self.trees,
        }
    }

    pub fn validate(&self, shape: &DataShape) -> Result<()> {
        let codec = self.codec()?;
        if shape.n == 0 || shape.f == 0 || shape.classes < 2 {
            return Err(Error::config("dataset needs n ≥ 1, f ≥ 1, classes ≥ 2"));
        }
        if self.eps_den == 0 || self.eps_num >= self.eps_den {
            return Err(Error::config("epsilon must lie in [0, 1)"));
        }
        match self.model {
            ModelKind::Dt => {
                if self.bins < 2 {
                    return Err(Error::config("dt needs bins ≥ 2"));
                }
            }
            ModelKind::Rf => {
                if self.bins < 2 {
                    return Err(Error::config("rf needs bins ≥ 2"));
                }
                if self.trees < 1 {
                    return Err(Error::config("rf needs trees ≥ 1"));
                }
                if self.sel_feat < 1 || self.sel_feat > shape.f {
                    return Err(Error::config(format!(
                        "rf needs 1 ≤ sel_feat ≤ f (sel_feat={}, f={})",
                        self.sel_feat, shape.f
                    )));
                }
                if self.sel_inst < 1 || self.sel_inst > shape.n {
                    return Err(Error::config(format!(
                        "rf needs 1 ≤ sel_inst ≤ n (sel_inst={}, n={})",
                        self.sel_inst, shape.n
                    )));
                }
            }
            ModelKind::Xt => {
                if self.trees < 1 || self.sel_feat < 1 {
                    return Err(Error::config("xt needs trees ≥ 1 and sel_feat ≥ 1"));
                }
                if self.xt_strict_fs && self.sel_feat > shape.f {
                    return Err(Error::config(
                        "xt strict feature selection needs sel_feat ≤ f",
                    ));
                }
            }
        }
        let _ = codec;
        self.training_ring(shape)?;
        Ok(())
    }

    /// The training-ring width: the smallest multiple of 64 such that the
    /// Gini cross-multiplication bound p·(n+1)^{2p+1} < 2^{Λ−1} holds for
    /// this config's bin count and per-tree instance count.
    pub fn training_ring(&self, shape: &DataShape) -> Result<Ring> {
        let p = self.p_effective() as f64;
        let n = self.tree_instances(shape.n) as f64;
        let bits = p.log2() + (2.0 * p + 1.0) * (n + 1.0).log2();
        if bits < 62.0 {
            Ok(Ring::new(64))
        } else if bits < 126.0 {
            Ok(Ring::new(128))
        } else {
            Err(Error::config(format!(
                "Gini bound p·n^(2p+1) needs {} bits, above the 128-bit ring cap \
                 (reduce bins or per-tree instances)",
                bits.ceil() + 1.0
            )))
        }
    }

    /// Session-plan fingerprint: config plus data shape. Parties abort in
    /// the handshake when these differ.
    pub fn fingerprint(&self, shape: &DataShape) -> u64 {
        let mut h = Sha256::new();
        h.update(b"grove-plan-v1");
        h.update(self.to_text().as_bytes());
        h.update(shape.n.to_le_bytes());
        h.update(shape.f.to_le_bytes());
        h.update(shape.classes.to_le_bytes());
        h.update(shape.scale.to_le_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[0..8].try_into().unwrap())
    }
}

/// Parses a decimal like "0.05" into the exact fraction (5, 100).
pub fn parse_decimal_fraction(s: &str) -> Result<(u64, u64)> {
    let s = s.trim();
    let bad = || Error::config(format!("bad decimal {s:?}"));
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    let int_val: u64 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().map_err(|_| bad())?
    };
    if frac_part.len() > 15 || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let den = 10u64.pow(frac_part.len() as u32);
    let frac_val: u64 = if frac_part.is_empty() {
        0
    } else {
        frac_part.parse().map_err(|_| bad())?
    };
    Ok((int_val * den + frac_val, den))
}

/// One party's share of a trained tree.
#[derive(Clone, Debug)]
pub struct SecretNode {
    pub selector: Option<RingVec>,
    pub freqs: RingVec,
    pub classify: u128,
}

#[derive(Clone, Debug)]
pub enum TreeSelection {
    /// DT: the tree's columns are the original features.
    All,
    /// RF: share of the f·p × k·p block selection matrix.
    RfShare(BitMat),
    /// XT: share of the f × k selection matrix in the codec ring.
    XtShare(Mat),
}

#[derive(Clone, Debug)]
pub struct SecretTree {
    pub levels: Vec<Vec<SecretNode>>,
    pub selection: TreeSelection,
    /// XT: share of the per-column cut points (codec ring).
    pub cuts: Option<RingVec>,
}

/// One party's share of a trained model plus the public metadata needed
/// to reveal and evaluate it.
#[derive(Clone, Debug)]
pub struct SecretModel {
    pub kind: ModelKind,
    pub p: usize,
    pub classes: usize,
    pub depth: usize,
    pub features: usize,
    pub codec: Codec,
    pub scale: f64,
    pub train_ring: Ring,
    /// DT/RF: f × (p−1) bin thresholds (codec-ring shares).
    pub thresholds: Option<Mat>,
    pub trees: Vec<SecretTree>,
}

/// Dataset-wide work shared by every tree.
#[derive(Clone, Debug)]
pub enum MainPhase {
    Disc(Discretized),
    MinMax { mins: RingVec, maxs: RingVec },
}

/// Runs the once-per-session aggregate phase (discretization for DT/RF,
/// per-feature min/max for XT) in the Main randomness domain.
pub fn main_phase(
    sess: &mut Session,
    data: &SharedDataset,
    cfg: &TrainConfig,
    shape: &DataShape,
) -> Result<MainPhase> {
    sess.rand.set_domain(Domain::Main);
    let codec = cfg.codec()?;
    let cols: Vec<RingVec> = (0..shape.f).map(|j| data.features.col(j)).collect();
    match cfg.model {
        ModelKind::Dt | ModelKind::Rf => {
            let d = agg::discretize_cols(sess, &cols, cfg.bins, &codec)?;
            Ok(MainPhase::Disc(d))
        }
        ModelKind::Xt => {
            let (mins, maxs) = agg::minmax_cols(sess, &cols, &codec)?;
            Ok(MainPhase::MinMax { mins, maxs })
        }
    }
}

/// Trains tree `tree` in its own randomness domain.
pub fn train_one_tree(
    sess: &mut Session,
    data: &SharedDataset,
    main: &MainPhase,
    cfg: &TrainConfig,
    shape: &DataShape,
    tree: u32,
) -> Result<SecretTree> {
    sess.rand.set_domain(Domain::Tree(tree));
    let codec = cfg.codec()?;
    let ring = cfg.training_ring(shape)?;
    let out = match (cfg.model, main) {
        (ModelKind::Dt, MainPhase::Disc(d)) => {
            let eps = epsilon_threshold(cfg.eps_num, cfg.eps_den, shape.n);
            let levels = sid3t(sess, &d.ohe, &data.labels, cfg.bins, cfg.depth, eps, ring)?;
            SecretTree {
                levels,
                selection: TreeSelection::All,
                cuts: None,
            }
        }
        (ModelKind::Rf, MainPhase::Disc(d)) => {
            let (p, k, s) = (cfg.bins, cfg.sel_feat, cfg.sel_inst);
            let fs = sess.rand.rf_fs(shape.f, p, k)?;
            let ss = sess.rand.rf_ss(s, shape.n)?;
            let s_fs = sess.bitmat_mul(&d.ohe, &fs)?;
            let with_labels = hconcat(&s_fs, &data.labels);
            let bag = sess.bitmat_mul(&ss, &with_labels)?;
            let x_bag = slice_cols(&bag, 0, k * p);
            let l_bag = slice_cols(&bag, k * p, shape.classes);
            let eps = epsilon_threshold(cfg.eps_num, cfg.eps_den, s);
            let levels = sid3t(sess, &x_bag, &l_bag, p, cfg.depth, eps, ring)?;
            SecretTree {
                levels,
                selection: TreeSelection::RfShare(fs),
                cuts: None,
            }
        }
        (ModelKind::Xt, MainPhase::MinMax { mins, maxs }) => {
            let k = cfg.sel_feat;
            let data_ring = codec.ring();
            let fs = sess.rand.xt_fs(data_ring, shape.f, k, !cfg.xt_strict_fs)?;
            let ratios = sess.rand.ratios(data_ring, k, codec.frac_bits())?;
            let s_fs = sess.matmul(&data.features, &fs)?;
            // α = π_trunc(r * ((max−min)·FS)) + min·FS
            let stacked = Mat::from_fn(data_ring, 2, shape.f, |r, j| {
                if r == 0 {
                    data_ring.sub(maxs.get(j), mins.get(j))
                } else {
                    mins.get(j)
                }
            });
            let proj = sess.matmul(&stacked, &fs)?;
            let range_sel = RingVec::new(data_ring, proj.row(0).to_vec());
            let min_sel = RingVec::new(data_ring, proj.row(1).to_vec());
            let scaled = sess.mul_vec(&ratios, &range_sel)?;
            let role = sess.role();
            let cuts = scaled
                .map(|v| codec.trunc_share(v, role))
                .add(&min_sel);
            // binarize: D[i,ℓ,1] = [S_FS[i,ℓ] ≥ α_ℓ]
            let n = shape.n;
            let mut lhs = Vec::with_capacity(n * k);
            let mut rhs = Vec::with_capacity(n * k);
            for i in 0..n {
                for l in 0..k {
                    lhs.push(s_fs.at(i, l));
                    rhs.push(cuts.get(l));
                }
            }
            let hi = geq(
                sess,
                &RingVec::new(data_ring, lhs),
                &RingVec::new(data_ring, rhs),
                codec.alpha(),
            )?;
            let is_a = sess.role().is_a();
            let mut ohe = BitMat::zeros(n, k * 2);
            for i in 0..n {
                for l in 0..k {
                    let b = hi.get(i * k + l);
                    ohe.set(i, l * 2, b ^ is_a);
                    ohe.set(i, l * 2 + 1, b);
                }
            }
            let eps = epsilon_threshold(cfg.eps_num, cfg.eps_den, shape.n);
            let levels = sid3t(sess, &ohe, &data.labels, 2, cfg.depth, eps, ring)?;
            SecretTree {
                levels,
                selection: TreeSelection::XtShare(fs),
                cuts: Some(cuts),
            }
        }
        _ => return Err(Error::usage("main phase does not match model kind")),
    };
    sess.rand.set_domain(Domain::Main);
    Ok(out)
}

/// Full sequential training of one party.
pub fn train_party(
    sess: &mut Session,
    data: &SharedDataset,
    cfg: &TrainConfig,
    shape: &DataShape,
) -> Result<SecretModel> {
    cfg.validate(shape)?;
    let main = main_phase(sess, data, cfg, shape)?;
    let mut trees = Vec::with_capacity(cfg.tree_count());
    for t in 0..cfg.tree_count() {
        trees.push(train_one_tree(sess, data, &main, cfg, shape, t as u32)?);
    }
    Ok(assemble_model(cfg, shape, &main, trees)?)
}

pub fn assemble_model(
    cfg: &TrainConfig,
    shape: &DataShape,
    main: &MainPhase,
    trees: Vec<SecretTree>,
) -> Result<SecretModel> {
    Ok(SecretModel {
        kind: cfg.model,
        p: cfg.p_effective(),
        classes: shape.classes,
        depth: cfg.depth,
        features: shape.f,
        codec: cfg.codec()?,
        scale: shape.scale,
        train_ring: cfg.training_ring(shape)?,
        thresholds: match main {
            MainPhase::Disc(d) => Some(d.thresholds.clone()),
            MainPhase::MinMax { .. } => None,
        },
        trees,
    })
}

fn hconcat(a: &BitMat, b: &BitMat) -> BitMat {
    assert_eq!(a.rows(), b.rows());
    BitMat::from_fn(a.rows(), a.cols() + b.cols(), |r, c| {
        if c < a.cols() {
            a.get(r, c)
        } else {
            b.get(r, c - a.cols())
        }
    })
}

fn slice_cols(m: &BitMat, start: usize, width: usize) -> BitMat {
    BitMat::from_fn(m.rows(), width, |r, c| m.get(r, start + c))
}

fn public_ones(ring: Ring, n: usize, role: Role) -> RingVec {
    match role {
        Role::A => RingVec::new(ring, vec![1; n]),
        Role::B => RingVec::zeros(ring, n),
    }
}

/// 1 − x for a shared vector (party A subtracts from one).
fn public_complement(ring: Ring, v: &RingVec, role: Role) -> RingVec {
    match role {
        Role::A => v.map(|x| ring.sub(1, x)),
        Role::B => v.neg(),
    }
}

/// π_SID3T. Grows a complete p-ary tree of exact depth `depth` over
/// one-hot data: per level, per-node class counts via the node indicator,
/// stopping tests (label purity, ε cutoff) folded into the classify
/// cascade, Gini split selection, and indicator updates — all batched per
/// level so the message trace depends only on public shapes.
pub fn sid3t(
    sess: &mut Session,
    x_bits: &BitMat,
    l_bits: &BitMat,
    p: usize,
    depth: usize,
    eps_thresh: u128,
    ring: Ring,
) -> Result<Vec<Vec<SecretNode>>> {
    let n = x_bits.rows();
    let c = l_bits.cols();
    let fp = x_bits.cols();
    if fp % p != 0 {
        return Err(Error::usage("OHE width is not a multiple of p"));
    }
    let f = fp / p;
    if l_bits.rows() != n {
        return Err(Error::usage("label rows differ from data rows"));
    }
    let role = sess.role();
    let alpha = ring.width();

    // lift the OHE bits into the training ring in one conversion round
    let flat = BitVec::concat(&[&x_bits.flatten(), &l_bits.flatten()]);
    let lifted = sess.bit_to_ring(&flat, ring)?;
    let x = Mat::from_ringvec(lifted.extract(0, n * fp), n, fp);
    let l = Mat::from_ringvec(lifted.extract(n * fp, n * c), n, c);
    let fixed_x = sess.register_fixed(&x)?;
    let fixed_l = sess.register_fixed(&l)?;

    let mut levels: Vec<Vec<SecretNode>> = Vec::with_capacity(depth + 1);
    // per-node state for the current level
    let mut indicators: Vec<RingVec> = vec![public_ones(ring, n, role)];
    let mut freqs: Vec<RingVec> = vec![RingVec::new(
        ring,
        (0..c).map(|y| l.col(y).sum()).collect(),
    )];
    let mut already = RingVec::zeros(ring, 1);

    for level in 0..=depth {
        let nodes = freqs.len();
        let totals = RingVec::new(ring, freqs.iter().map(|fr| fr.sum()).collect());

        if level == depth {
            let classify = public_complement(ring, &already, role);
            let level_nodes = (0..nodes)
                .map(|u| SecretNode {
                    selector: None,
                    freqs: freqs[u].clone(),
                    classify: classify.get(u),
                })
                .collect();
            levels.push(level_nodes);
            break;
        }

        // stopping condition (2): some class count equals the node total
        let freqs_flat = {
            let refs: Vec<&RingVec> = freqs.iter().collect();
            RingVec::concat(&refs)
        };
        let totals_exp = RingVec::from_fn(ring, nodes * c, |i| totals.get(i / c));
        let eq_bits = eq(sess, &freqs_flat, &totals_exp, alpha)?;
        let mut stop2 = eq_bits.extract(0, nodes * c);
        // OR-fold across classes (chunks of c)
        let mut width = c;
        while width > 1 {
            let half = width / 2;
            let mut lo = BitVec::zeros(nodes * half);
            let mut hi = BitVec::zeros(nodes * half);
            let mut rest = BitVec::zeros(nodes * (width % 2));
            for u in 0..nodes {
                for i in 0..half {
                    lo.set(u * half + i, stop2.get(u * width + 2 * i));
                    hi.set(u * half + i, stop2.get(u * width + 2 * i + 1));
                }
                if width % 2 == 1 {
                    rest.set(u, stop2.get(u * width + width - 1));
                }
            }
            let merged = bit_or(sess, &lo, &hi)?;
            let new_width = half + width % 2;
            let mut next = BitVec::zeros(nodes * new_width);
            for u in 0..nodes {
                for i in 0..half {
                    next.set(u * new_width + i, merged.get(u * half + i));
                }
                if width % 2 == 1 {
                    next.set(u * new_width + new_width - 1, rest.get(u));
                }
            }
            stop2 = next;
            width = new_width;
        }

        // stopping condition (3): node total below the ε cutoff
        let geq_eps = geq_const(sess, &totals, eps_thresh, alpha)?;
        let stop3 = match role {
            Role::A => geq_eps.not(),
            Role::B => geq_eps,
        };
        let stop = bit_or(sess, &stop2, &stop3)?;
        let stop_q = sess.bit_to_ring(&stop, ring)?;
        let not_already = public_complement(ring, &already, role);
        let classify = sess.mul_vec(&stop_q, &not_already)?;
        let already_child_base = already.add(&classify);

        // per-node class counts: wl = w ⊙ L (one opening for the level),
        // then counts = (wl)ᵀ · X against the registered data matrix
        let wls: Vec<Mat> = if level == 0 {
            vec![l.clone()]
        } else {
            sess.hadamard_fixed_many(&indicators, &fixed_l)?
        };
        let wl_t: Vec<Mat> = wls.iter().map(|m| m.transpose()).collect();
        let counts = sess.mul_fixed_rhs_many(&wl_t, &fixed_x)?;

        // split selection
        let selectors = gini_argmax_level(sess, &counts, f, p, c, ring)?;

        // spawn child frequencies from the parent count tensors:
        // freq_child[(u,v),y] = Σ_j sel_u[j] · counts_u[y][(j,v)]
        let mut sel_b = Vec::with_capacity(nodes * p * c * f);
        let mut cnt_b = Vec::with_capacity(nodes * p * c * f);
        for u in 0..nodes {
            for v in 0..p {
                for y in 0..c {
                    for j in 0..f {
                        sel_b.push(selectors[u].get(j));
                        cnt_b.push(counts[u].at(y, j * p + v));
                    }
                }
            }
        }
        let prods = sess.mul_vec(&RingVec::new(ring, sel_b), &RingVec::new(ring, cnt_b))?;
        let mut freqs_next = Vec::with_capacity(nodes * p);
        for u in 0..nodes {
            for v in 0..p {
                let mut fr = Vec::with_capacity(c);
                for y in 0..c {
                    let base = ((u * p + v) * c + y) * f;
                    let mut acc = 0u128;
                    for j in 0..f {
                        acc = ring.add(acc, prods.get(base + j));
                    }
                    fr.push(acc);
                }
                freqs_next.push(RingVec::new(ring, fr));
            }
        }

        // child indicators, needed only while the children are internal
        let indicators_next: Vec<RingVec> = if level + 1 < depth {
            let ts: Vec<Mat> = selectors
                .iter()
                .map(|sel| {
                    Mat::from_fn(ring, fp, p, |row, v| {
                        if row % p == v {
                            sel.get(row / p)
                        } else {
                            0
                        }
                    })
                })
                .collect();
            let cols = sess.mul_fixed_lhs_many(&fixed_x, &ts)?;
            let mut wb = Vec::with_capacity(nodes * p * n);
            let mut cb = Vec::with_capacity(nodes * p * n);
            for u in 0..nodes {
                for v in 0..p {
                    for i in 0..n {
                        wb.push(indicators[u].get(i));
                        cb.push(cols[u].at(i, v));
                    }
                }
            }
            let w_next = sess.mul_vec(&RingVec::new(ring, wb), &RingVec::new(ring, cb))?;
            (0..nodes * p).map(|i| w_next.extract(i * n, n)).collect()
        } else {
            Vec::new()
        };

        let level_nodes = (0..nodes)
            .map(|u| SecretNode {
                selector: Some(selectors[u].clone()),
                freqs: freqs[u].clone(),
                classify: classify.get(u),
            })
            .collect();
        levels.push(level_nodes);

        indicators = indicators_next;
        freqs = freqs_next;
        already = RingVec::from_fn(ring, nodes * p, |i| already_child_base.get(i / p));
    }
    Ok(levels)
}

/// Oblivious lowest-index Gini argmax for every node of a level.
/// counts[u] is the c × (f·p) tensor of the node; the result per node is
/// a one-hot selector over the f candidate features.
fn gini_argmax_level(
    sess: &mut Session,
    counts: &[Mat],
    f: usize,
    p: usize,
    c: usize,
    ring: Ring,
) -> Result<Vec<RingVec>> {
    let nodes = counts.len();
    let alpha = ring.width();
    let role = sess.role();

    // bin totals t[u][j][v] = Σ_y counts, locally
    let t_flat = RingVec::from_fn(ring, nodes * f * p, |i| {
        let (u, rest) = (i / (f * p), i % (f * p));
        let mut acc = 0u128;
        for y in 0..c {
            acc = ring.add(acc, counts[u].at(y, rest));
        }
        acc
    });
    // empty-bin fixup: t̃ = t + [t = 0] keeps the score Σ g_v/t_v exact on
    // occupied bins and maps 0/0 to 0
    let zero = eq_const(sess, &t_flat, 0, alpha)?;
    let zero_q = sess.bit_to_ring(&zero, ring)?;
    let tt = t_flat.add(&zero_q);

    // g[u][j][v] = Σ_y counts²
    let counts_flat = RingVec::from_fn(ring, nodes * f * p * c, |i| {
        let u = i / (f * p * c);
        let rest = i % (f * p * c);
        let jv = rest / c;
        let y = rest % c;
        counts[u].at(y, jv)
    });
    let sq = sess.mul_vec(&counts_flat, &counts_flat)?;
    let g_flat = RingVec::from_fn(ring, nodes * f * p, |i| {
        let mut acc = 0u128;
        for y in 0..c {
            acc = ring.add(acc, sq.get(i * c + y));
        }
        acc
    });

    // per (node, feature): D = Π_v t̃_v and excl_v = Π_{v'≠v} t̃_{v'}
    let m = nodes * f;
    let at = |v: &RingVec, uj: usize, bin: usize| v.get(uj * p + bin);
    let (d_vec, excl): (RingVec, Vec<RingVec>) = if p == 2 {
        let lhs = RingVec::from_fn(ring, m, |uj| at(&tt, uj, 0));
        let rhs = RingVec::from_fn(ring, m, |uj| at(&tt, uj, 1));
        let d = sess.mul_vec(&lhs, &rhs)?;
        (d, vec![rhs, lhs])
    } else {
        // prefix and suffix chains, batched per step
        let mut pre: Vec<RingVec> = vec![RingVec::from_fn(ring, m, |uj| at(&tt, uj, 0))];
        let mut suf_rev: Vec<RingVec> = vec![RingVec::from_fn(ring, m, |uj| at(&tt, uj, p - 1))];
        for step in 1..p {
            let pre_rhs = RingVec::from_fn(ring, m, |uj| at(&tt, uj, step));
            let suf_rhs = RingVec::from_fn(ring, m, |uj| at(&tt, uj, p - 1 - step));
            let lhs = RingVec::concat(&[&pre[step - 1], &suf_rev[step - 1]]);
            let rhs = RingVec::concat(&[&pre_rhs, &suf_rhs]);
            let prod = sess.mul_vec(&lhs, &rhs)?;
            pre.push(prod.extract(0, m));
            suf_rev.push(prod.extract(m, m));
        }
        let d = pre[p - 1].clone();
        // middle exclusions pre[v−1]·suf[v+1] in one round
        let mut mid_lhs = Vec::new();
        let mut mid_rhs = Vec::new();
        for v in 1..p - 1 {
            mid_lhs.push(pre[v - 1].clone());
            mid_rhs.push(suf_rev[p - 2 - v].clone());
        }
        let mids = if mid_lhs.is_empty() {
            RingVec::zeros(ring, 0)
        } else {
            let lr: Vec<&RingVec> = mid_lhs.iter().collect();
            let rr: Vec<&RingVec> = mid_rhs.iter().collect();
            sess.mul_vec(&RingVec::concat(&lr), &RingVec::concat(&rr))?
        };
        let mut excl = Vec::with_capacity(p);
        excl.push(suf_rev[p - 2].clone());
        for v in 1..p - 1 {
            excl.push(mids.extract((v - 1) * m, m));
        }
        excl.push(pre[p - 2].clone());
        (d, excl)
    };

    // N = Σ_v g_v · excl_v
    let mut num_lhs = Vec::with_capacity(p * m);
    let mut num_rhs = Vec::with_capacity(p * m);
    for v in 0..p {
        for uj in 0..m {
            num_lhs.push(g_flat.get(uj * p + v));
            num_rhs.push(excl[v].get(uj));
        }
    }
    let num_prod = sess.mul_vec(&RingVec::new(ring, num_lhs), &RingVec::new(ring, num_rhs))?;
    let n_vec = RingVec::from_fn(ring, m, |uj| {
        let mut acc = 0u128;
        for v in 0..p {
            acc = ring.add(acc, num_prod.get(v * m + uj));
        }
        acc
    });

    // lowest-index tournament over features, batched across nodes
    struct Cand {
        n: RingVec,
        d: RingVec,
        sel: Mat,
    }
    let mut cands: Vec<Cand> = (0..f)
        .map(|j| Cand {
            n: RingVec::from_fn(ring, nodes, |u| n_vec.get(u * f + j)),
            d: RingVec::from_fn(ring, nodes, |u| d_vec.get(u * f + j)),
            sel: Mat::from_fn(ring, nodes, f, |_, col| {
                if col == j && role.is_a() {
                    1
                } else {
                    0
                }
            }),
        })
        .collect();
    while cands.len() > 1 {
        let pairs = cands.len() / 2;
        // cross products N_lo·D_hi and N_hi·D_lo
        let mut xl = Vec::with_capacity(2 * pairs * nodes);
        let mut xr = Vec::with_capacity(2 * pairs * nodes);
        for i in 0..pairs {
            let (lo, hi) = (&cands[2 * i], &cands[2 * i + 1]);
            xl.extend(lo.n.as_slice());
            xr.extend(hi.d.as_slice());
            xl.extend(hi.n.as_slice());
            xr.extend(lo.d.as_slice());
        }
        let cross = sess.mul_vec(&RingVec::new(ring, xl), &RingVec::new(ring, xr))?;
        let mut a_all = Vec::with_capacity(pairs * nodes);
        let mut b_all = Vec::with_capacity(pairs * nodes);
        for i in 0..pairs {
            a_all.extend(cross.extract(2 * i * nodes, nodes).as_slice());
            b_all.extend(cross.extract((2 * i + 1) * nodes, nodes).as_slice());
        }
        // keep the lower index on ties: c = [score_lo ≥ score_hi]
        let cbits = geq(
            sess,
            &RingVec::new(ring, a_all),
            &RingVec::new(ring, b_all),
            alpha,
        )?;
        let cq = sess.bit_to_ring(&cbits, ring)?;
        // one batched select round for N, D, and the selector rows
        let mut sc = Vec::new();
        let mut sx = Vec::new();
        let mut sy = Vec::new();
        for i in 0..pairs {
            let (lo, hi) = (&cands[2 * i], &cands[2 * i + 1]);
            for u in 0..nodes {
                let cv = cq.get(i * nodes + u);
                sc.push(cv);
                sx.push(lo.n.get(u));
                sy.push(hi.n.get(u));
                sc.push(cv);
                sx.push(lo.d.get(u));
                sy.push(hi.d.get(u));
                for col in 0..f {
                    sc.push(cv);
                    sx.push(lo.sel.at(u, col));
                    sy.push(hi.sel.at(u, col));
                }
            }
        }
        let chosen = sess.select_vec(
            &RingVec::new(ring, sc),
            &RingVec::new(ring, sx),
            &RingVec::new(ring, sy),
        )?;
        let stride = 2 + f;
        let mut next = Vec::with_capacity(pairs + cands.len() % 2);
        for i in 0..pairs {
            let base = i * nodes * stride;
            let n = RingVec::from_fn(ring, nodes, |u| chosen.get(base + u * stride));
            let d = RingVec::from_fn(ring, nodes, |u| chosen.get(base + u * stride + 1));
            let sel = Mat::from_fn(ring, nodes, f, |u, col| {
                chosen.get(base + u * stride + 2 + col)
            });
            next.push(Cand { n, d, sel });
        }
        if cands.len() % 2 == 1 {
            next.push(cands.pop().unwrap());
        }
        cands = next;
    }
    let winner = &cands[0];
    Ok((0..nodes)
        .map(|u| RingVec::new(ring, winner.sel.row(u).to_vec()))
        .collect())
}

/// Opens every component of a trained model. Both parties run this with
/// their shares; possession of both reveal outputs defines consent.
pub fn reveal_model(sess: &mut Session, m: &SecretModel) -> Result<RevealedModel> {
    let codec = m.codec;
    let feature_thresholds = match &m.thresholds {
        Some(th) => {
            let opened = sess.open_mat(th)?;
            Some(
                (0..opened.rows())
                    .map(|j| opened.row(j).to_vec())
                    .collect::<Vec<Vec<u128>>>(),
            )
        }
        None => None,
    };
    let mut trees = Vec::with_capacity(m.trees.len());
    for tree in &m.trees {
        // open the whole tree in one round: selectors, freqs, classify
        let mut parts: Vec<RingVec> = Vec::new();
        for level in &tree.levels {
            for node in level {
                if let Some(sel) = &node.selector {
                    parts.push(sel.clone());
                }
                parts.push(node.freqs.clone());
                parts.push(RingVec::new(m.train_ring, vec![node.classify]));
            }
        }
        let refs: Vec<&RingVec> = parts.iter().collect();
        let opened = sess.open_vec(&RingVec::concat(&refs))?;
        let mut off = 0usize;
        let mut take = |len: usize| {
            let v = opened.extract(off, len);
            off += len;
            v
        };
        let mut levels = Vec::with_capacity(tree.levels.len());
        for level in &tree.levels {
            let mut nodes = Vec::with_capacity(level.len());
            for node in level {
                let selector = match &node.selector {
                    Some(sel) => Some(ohe_to_index(&take(sel.len()))?),
                    None => None,
                };
                let freqs = take(node.freqs.len()).as_slice().to_vec();
                let classify = match take(1).get(0) {
                    0 => false,
                    1 => true,
                    other => {
                        return Err(Error::model(format!(
                            "classify bit revealed as {other}"
                        )))
                    }
                };
                nodes.push(RevealedNode {
                    selector,
                    freqs,
                    classify,
                });
            }
            levels.push(nodes);
        }
        let cols = match &tree.selection {
            TreeSelection::All => (0..m.features).collect(),
            TreeSelection::RfShare(fs) => {
                let opened = sess.open_bitmat(fs)?;
                rf_cols(&opened, m.features, m.p)?
            }
            TreeSelection::XtShare(fs) => {
                let opened = sess.open_mat(fs)?;
                xt_cols(&opened)?
            }
        };
        let cuts = match &tree.cuts {
            Some(cuts) => Some(sess.open_vec(cuts)?.as_slice().to_vec()),
            None => None,
        };
        trees.push(RevealedTree { levels, cols, cuts });
    }
    Ok(RevealedModel {
        kind: m.kind,
        p: m.p,
        classes: m.classes,
        depth: m.depth,
        features: m.features,
        codec,
        scale: m.scale,
        feature_thresholds,
        trees,
    })
}

/// Offline reveal from both parties' model-share files (possession of
/// both files is the consent signal).
pub fn reveal_from_shares(a: &SecretModel, b: &SecretModel) -> Result<RevealedModel> {
    if a.kind != b.kind
        || a.p != b.p
        || a.classes != b.classes
        || a.depth != b.depth
        || a.features != b.features
        || a.trees.len() != b.trees.len()
    {
        return Err(Error::model("model share files disagree on shape"));
    }
    let feature_thresholds = match (&a.thresholds, &b.thresholds) {
        (Some(ta), Some(tb)) => {
            let m = ta.add(tb);
            Some((0..m.rows()).map(|j| m.row(j).to_vec()).collect::<Vec<_>>())
        }
        (None, None) => None,
        _ => return Err(Error::model("model share files disagree on thresholds")),
    };
    let mut trees = Vec::with_capacity(a.trees.len());
    for (ta, tb) in a.trees.iter().zip(&b.trees) {
        let mut levels = Vec::with_capacity(ta.levels.len());
        for (la, lb) in ta.levels.iter().zip(&tb.levels) {
            let mut nodes = Vec::with_capacity(la.len());
            for (na, nb) in la.iter().zip(lb) {
                let selector = match (&na.selector, &nb.selector) {
                    (Some(sa), Some(sb)) => Some(ohe_to_index(&sa.add(sb))?),
                    (None, None) => None,
                    _ => return Err(Error::model("selector shares disagree")),
                };
                let freqs = na.freqs.add(&nb.freqs).as_slice().to_vec();
                let classify = match a.train_ring.add(na.classify, nb.classify) {
                    0 => false,
                    1 => true,
                    v => return Err(Error::model(format!("classify bit revealed as {v}"))),
                };
                nodes.push(RevealedNode {
                    selector,
                    freqs,
                    classify,
                });
            }
            levels.push(nodes);
        }
        let cols = match (&ta.selection, &tb.selection) {
            (TreeSelection::All, TreeSelection::All) => (0..a.features).collect(),
            (TreeSelection::RfShare(fa), TreeSelection::RfShare(fb)) => {
                rf_cols(&fa.xor(fb), a.features, a.p)?
            }
            (TreeSelection::XtShare(fa), TreeSelection::XtShare(fb)) => xt_cols(&fa.add(fb))?,
            _ => return Err(Error::model("selection shares disagree")),
        };
        let cuts = match (&ta.cuts, &tb.cuts) {
            (Some(ca), Some(cb)) => Some(ca.add(cb).as_slice().to_vec()),
            (None, None) => None,
            _ => return Err(Error::model("cut shares disagree")),
        };
        trees.push(RevealedTree { levels, cols, cuts });
    }
    Ok(RevealedModel {
        kind: a.kind,
        p: a.p,
        classes: a.classes,
        depth: a.depth,
        features: a.features,
        codec: a.codec,
        scale: a.scale,
        feature_thresholds,
        trees,
    })
}

pub const MODEL_SHARES_MAGIC: &[u8; 8] = b"GRVMSHR1";

impl SecretModel {
    /// Binary model-share file, one per party.
    pub fn write_file(&self, path: &std::path::Path, role: Role) -> Result<()> {
        use crate::wire::*;
        use std::io::Write as _;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MODEL_SHARES_MAGIC)?;
        put_u32(&mut w, 1)?;
        put_u32(&mut w, role.index() as u32)?;
        put_u32(
            &mut w,
            match self.kind {
                ModelKind::Dt => 0,
                ModelKind::Rf => 1,
                ModelKind::Xt => 2,
            },
        )?;
        for v in [
            self.p as u64,
            self.classes as u64,
            self.depth as u64,
            self.features as u64,
        ] {
            put_u64(&mut w, v)?;
        }
        put_u32(&mut w, self.codec.lambda())?;
        put_u32(&mut w, self.codec.frac_bits())?;
        put_u32(&mut w, self.codec.int_bits())?;
        w.write_all(&self.scale.to_le_bytes())?;
        put_u32(&mut w, self.train_ring.width())?;
        match &self.thresholds {
            Some(t) => {
                put_u32(&mut w, 1)?;
                put_mat(&mut w, t)?;
            }
            None => put_u32(&mut w, 0)?,
        }
        put_u64(&mut w, self.trees.len() as u64)?;
        for tree in &self.trees {
            match &tree.selection {
                TreeSelection::All => put_u32(&mut w, 0)?,
                TreeSelection::RfShare(m) => {
                    put_u32(&mut w, 1)?;
                    put_bitmat(&mut w, m)?;
                }
                TreeSelection::XtShare(m) => {
                    put_u32(&mut w, 2)?;
                    put_mat(&mut w, m)?;
                }
            }
            match &tree.cuts {
                Some(c) => {
                    put_u32(&mut w, 1)?;
                    put_ringvec(&mut w, c)?;
                }
                None => put_u32(&mut w, 0)?,
            }
            put_u64(&mut w, tree.levels.len() as u64)?;
            for level in &tree.levels {
                put_u64(&mut w, level.len() as u64)?;
                for node in level {
                    match &node.selector {
                        Some(s) => {
                            put_u32(&mut w, 1)?;
                            put_ringvec(&mut w, s)?;
                        }
                        None => put_u32(&mut w, 0)?,
                    }
                    put_ringvec(&mut w, &node.freqs)?;
                    put_ringvec(&mut w, &RingVec::new(self.train_ring, vec![node.classify]))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_file(path: &std::path::Path) -> Result<(SecretModel, Role)> {
        use crate::wire::*;
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        use std::io::Read as _;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_SHARES_MAGIC {
            return Err(Error::model("not a model share file"));
        }
        if get_u32(&mut r)? != 1 {
            return Err(Error::model("unsupported model share version"));
        }
        let role = if get_u32(&mut r)? == 0 { Role::A } else { Role::B };
        let kind = match get_u32(&mut r)? {
            0 => ModelKind::Dt,
            1 => ModelKind::Rf,
            2 => ModelKind::Xt,
            k => return Err(Error::model(format!("bad model kind {k}"))),
        };
        let p = get_u64(&mut r)? as usize;
        let classes = get_u64(&mut r)? as usize;
        let depth = get_u64(&mut r)? as usize;
        let features = get_u64(&mut r)? as usize;
        let codec = Codec::new(get_u32(&mut r)?, get_u32(&mut r)?, get_u32(&mut r)?)?;
        let mut f8 = [0u8; 8];
        r.read_exact(&mut f8)?;
        let scale = f64::from_le_bytes(f8);
        let train_ring = Ring::new(get_u32(&mut r)?);
        let thresholds = if get_u32(&mut r)? == 1 {
            Some(get_mat(&mut r)?)
        } else {
            None
        };
        let ntrees = get_u64(&mut r)? as usize;
        let mut trees = Vec::with_capacity(ntrees);
        for _ in 0..ntrees {
            let selection = match get_u32(&mut r)? {
                0 => TreeSelection::All,
                1 => TreeSelection::RfShare(get_bitmat(&mut r)?),
                2 => TreeSelection::XtShare(get_mat(&mut r)?),
                k => return Err(Error::model(format!("bad selection tag {k}"))),
            };
            let cuts = if get_u32(&mut r)? == 1 {
                Some(get_ringvec(&mut r)?)
            } else {
                None
            };
            let nlevels = get_u64(&mut r)? as usize;
            let mut levels = Vec::with_capacity(nlevels);
            for _ in 0..nlevels {
                let nn = get_u64(&mut r)? as usize;
                let mut nodes = Vec::with_capacity(nn);
                for _ in 0..nn {
                    let selector = if get_u32(&mut r)? == 1 {
                        Some(get_ringvec(&mut r)?)
                    } else {
                        None
                    };
                    let freqs = get_ringvec(&mut r)?;
                    let classify = get_ringvec(&mut r)?.get(0);
                    nodes.push(SecretNode {
                        selector,
                        freqs,
                        classify,
                    });
                }
                levels.push(nodes);
            }
            trees.push(SecretTree {
                levels,
                selection,
                cuts,
            });
        }
        Ok((
            SecretModel {
                kind,
                p,
                classes,
                depth,
                features,
                codec,
                scale,
                train_ring,
                thresholds,
                trees,
            },
            role,
        ))
    }
}

fn ohe_to_index(v: &RingVec) -> Result<usize> {
    let mut found = None;
    for i in 0..v.len() {
        match v.get(i) {
            0 => {}
            1 => {
                if found.is_some() {
                    return Err(Error::model("selector revealed with two active entries"));
                }
                found = Some(i);
            }
            _ => return Err(Error::model("selector revealed with non-bit entry")),
        }
    }
    found.ok_or_else(|| Error::model("selector revealed as all-zero"))
}

fn rf_cols(fs: &BitMat, f: usize, p: usize) -> Result<Vec<usize>> {
    let k = fs.cols() / p;
    let mut cols = Vec::with_capacity(k);
    for l in 0..k {
        let mut hit = None;
        for j in 0..f {
            if fs.get(j * p, l * p) {
                if hit.is_some() {
                    return Err(Error::model("feature selection column has two blocks"));
                }
                hit = Some(j);
            }
        }
        cols.push(hit.ok_or_else(|| Error::model("empty feature selection column"))?);
    }
    Ok(cols)
}

fn xt_cols(fs: &Mat) -> Result<Vec<usize>> {
    let mut cols = Vec::with_capacity(fs.cols());
    for l in 0..fs.cols() {
        let mut hit = None;
        for j in 0..fs.rows() {
            match fs.at(j, l) {
                0 => {}
                1 => {
                    if hit.is_some() {
                        return Err(Error::model("selection column has two entries"));
                    }
                    hit = Some(j);
                }
                _ => return Err(Error::model("selection entry is not a bit")),
            }
        }
        cols.push(hit.ok_or_else(|| Error::model("empty selection column"))?);
    }
    Ok(cols)
}
