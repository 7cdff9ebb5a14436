//! Trusted initializer: generation and consumption of correlated randomness.
//!
//! Items are drawn from deterministic per-domain ChaCha20 streams keyed by
//! (seed, domain), so tree sessions are dealt independently and byte
//! identically regardless of scheduling. The in-process dealer serves both
//! parties lazily; tape files persist one party's view of the same streams
//! for two-machine runs.

use crate::bits::{BitMat, BitVec};
use crate::error::{Error, Result};
use crate::ring::{Mat, Ring, RingVec};
use crate::sharing::{self, Role};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, VecDeque};
use crate::wire::*;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

pub const TAPE_MAGIC: &[u8; 8] = b"GRVTAPE1";
pub const TAPE_VERSION: u32 = 1;

/// Logical randomness stream. Each ensemble tree gets its own domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Domain {
    Main,
    Tree(u32),
}

impl Domain {
    pub fn id(self) -> u32 {
        match self {
            Domain::Main => 0,
            Domain::Tree(i) => 1 + i,
        }
    }
}

/// Identifier of a registered fixed-operand mask within a domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedId {
    pub domain: u32,
    pub index: u32,
}

/// Tag describing an item; both parties must request identical sequences
/// per domain, and tapes verify the tags on consumption.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ItemKind {
    RingTriple { width: u32, n: u64 },
    BitTriple { n: u64 },
    Masks { width: u32, n: u64 },
    MatTriple { width: u32, l: u64, m: u64, r: u64 },
    BitMatTriple { l: u64, m: u64, r: u64 },
    FixedMask { width: u32, rows: u64, cols: u64 },
    FixedMulRhs { fixed: u32, l: u64 },
    FixedMulLhs { fixed: u32, r: u64 },
    FixedHadamard { fixed: u32 },
    RfFs { f: u64, p: u64, k: u64 },
    RfSs { s: u64, n: u64 },
    XtFs { width: u32, f: u64, k: u64, replace: bool },
    Ratios { width: u32, k: u64, frac: u32 },
}

/// One party's payload for a dealt item.
#[derive(Clone, Debug)]
pub enum Item {
    Ring3(RingVec, RingVec, RingVec),
    Bit3(BitVec, BitVec, BitVec),
    Masks(RingVec),
    Mat3(Mat, Mat, Mat),
    BitMat3(BitMat, BitMat, BitMat),
    FixedMask(u32, Mat),
    FixedMul(Mat, Mat),
    FixedHadamard(RingVec, Mat),
    FsRf(BitMat),
    Ss(BitMat),
    FsXt(Mat),
    Ratios(RingVec),
}

/// Plaintext draws of the data-shaped randomness, recorded by the
/// generator so equivalence harnesses can inject them into the oracles.
#[derive(Clone, Debug, Default)]
pub struct SelectionLog {
    /// Per RF tree: original feature index per selected column block.
    pub rf_features: BTreeMap<u32, Vec<usize>>,
    /// Per RF tree: source instance per bagged row.
    pub rf_rows: BTreeMap<u32, Vec<usize>>,
    /// Per XT tree: original feature index per selected column.
    pub xt_features: BTreeMap<u32, Vec<usize>>,
    /// Per XT tree: raw ratio integers in [1, 2^a − 1].
    pub xt_ratios: BTreeMap<u32, Vec<u128>>,
}

fn domain_rng(seed: u64, domain: u32) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(b"grove-ti-v1");
    h.update(seed.to_le_bytes());
    h.update(domain.to_le_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

pub fn seed_fingerprint(seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"grove-seed-fp");
    h.update(seed.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[0..8].try_into().unwrap())
}

struct DomainGen {
    rng: ChaCha20Rng,
    fixed_masks: Vec<Mat>,
    domain: u32,
}

impl DomainGen {
    fn new(seed: u64, domain: u32) -> DomainGen {
        DomainGen {
            rng: domain_rng(seed, domain),
            fixed_masks: Vec::new(),
            domain,
        }
    }

    fn tree(&self) -> u32 {
        self.domain.wrapping_sub(1)
    }

    fn gen_ring_vec(&mut self, ring: Ring, n: usize) -> RingVec {
        RingVec::from_fn(ring, n, |_| self.rng.gen::<u128>())
    }

    fn gen_mat(&mut self, ring: Ring, rows: usize, cols: usize) -> Mat {
        Mat::from_fn(ring, rows, cols, |_, _| self.rng.gen::<u128>())
    }

    fn gen_bits(&mut self, n: usize) -> BitVec {
        BitVec::from_fn(n, |_| self.rng.gen::<bool>())
    }

    fn fixed(&self, id: u32) -> Result<&Mat> {
        self.fixed_masks
            .get(id as usize)
            .ok_or_else(|| Error::randomness(format!("unknown fixed mask {id}")))
    }

    /// Generates one item, returning the two party payloads.
    fn deal(&mut self, kind: &ItemKind, log: &mut SelectionLog) -> Result<(Item, Item)> {
        match *kind {
            ItemKind::RingTriple { width, n } => {
                let ring = Ring::new(width);
                let a = self.gen_ring_vec(ring, n as usize);
                let b = self.gen_ring_vec(ring, n as usize);
                let c = a.zip(&b, |x, y| ring.mul(x, y));
                let (a0, a1) = sharing::split_ring_vec(&a, &mut self.rng);
                let (b0, b1) = sharing::split_ring_vec(&b, &mut self.rng);
                let (c0, c1) = sharing::split_ring_vec(&c, &mut self.rng);
                Ok((Item::Ring3(a0, b0, c0), Item::Ring3(a1, b1, c1)))
            }
            ItemKind::BitTriple { n } => {
                let a = self.gen_bits(n as usize);
                let b = self.gen_bits(n as usize);
                let c = a.and(&b);
                let (a0, a1) = sharing::split_bits(&a, &mut self.rng);
                let (b0, b1) = sharing::split_bits(&b, &mut self.rng);
                let (c0, c1) = sharing::split_bits(&c, &mut self.rng);
                Ok((Item::Bit3(a0, b0, c0), Item::Bit3(a1, b1, c1)))
            }
            ItemKind::Masks { width, n } => {
                let ring = Ring::new(width);
                // Input masks go to one party in full; the peer gets an
                // independent pool of the same size so tapes stay aligned.
                let a = self.gen_ring_vec(ring, n as usize);
                let b = self.gen_ring_vec(ring, n as usize);
                Ok((Item::Masks(a), Item::Masks(b)))
            }
            ItemKind::MatTriple { width, l, m, r } => {
                let ring = Ring::new(width);
                let a = self.gen_mat(ring, l as usize, m as usize);
                let b = self.gen_mat(ring, m as usize, r as usize);
                let c = a.mul(&b);
                let (a0, a1) = split_mat(&a, &mut self.rng);
                let (b0, b1) = split_mat(&b, &mut self.rng);
                let (c0, c1) = split_mat(&c, &mut self.rng);
                Ok((Item::Mat3(a0, b0, c0), Item::Mat3(a1, b1, c1)))
            }
            ItemKind::BitMatTriple { l, m, r } => {
                let a = BitMat::from_fn(l as usize, m as usize, |_, _| self.rng.gen::<bool>());
                let b = BitMat::from_fn(m as usize, r as usize, |_, _| self.rng.gen::<bool>());
                let c = a.mul(&b);
                let (a0, a1) = split_bitmat(&a, &mut self.rng);
                let (b0, b1) = split_bitmat(&b, &mut self.rng);
                let (c0, c1) = split_bitmat(&c, &mut self.rng);
                Ok((Item::BitMat3(a0, b0, c0), Item::BitMat3(a1, b1, c1)))
            }
            ItemKind::FixedMask { width, rows, cols } => {
                let ring = Ring::new(width);
                let r = self.gen_mat(ring, rows as usize, cols as usize);
                let (r0, r1) = split_mat(&r, &mut self.rng);
                let index = self.fixed_masks.len() as u32;
                self.fixed_masks.push(r);
                Ok((Item::FixedMask(index, r0), Item::FixedMask(index, r1)))
            }
            ItemKind::FixedMulRhs { fixed, l } => {
                let r = self.fixed(fixed)?.clone();
                let a = self.gen_mat(r.ring(), l as usize, r.rows());
                let c = a.mul(&r);
                let (a0, a1) = split_mat(&a, &mut self.rng);
                let (c0, c1) = split_mat(&c, &mut self.rng);
                Ok((Item::FixedMul(a0, c0), Item::FixedMul(a1, c1)))
            }
            ItemKind::FixedMulLhs { fixed, r: rdim } => {
                let rm = self.fixed(fixed)?.clone();
                let b = self.gen_mat(rm.ring(), rm.cols(), rdim as usize);
                let c = rm.mul(&b);
                let (b0, b1) = split_mat(&b, &mut self.rng);
                let (c0, c1) = split_mat(&c, &mut self.rng);
                Ok((Item::FixedMul(b0, c0), Item::FixedMul(b1, c1)))
            }
            ItemKind::FixedHadamard { fixed } => {
                let rm = self.fixed(fixed)?.clone();
                let ring = rm.ring();
                let a = self.gen_ring_vec(ring, rm.rows());
                let c = Mat::from_fn(ring, rm.rows(), rm.cols(), |r, cc| {
                    ring.mul(a.get(r), rm.at(r, cc))
                });
                let (a0, a1) = sharing::split_ring_vec(&a, &mut self.rng);
                let (c0, c1) = split_mat(&c, &mut self.rng);
                Ok((Item::FixedHadamard(a0, c0), Item::FixedHadamard(a1, c1)))
            }
            ItemKind::RfFs { f, p, k } => {
                let (f, p, k) = (f as usize, p as usize, k as usize);
                if k > f {
                    return Err(Error::randomness(format!(
                        "RF feature selection needs k ≤ f (k={k}, f={f})"
                    )));
                }
                let feats = sample_without_replacement(f, k, &mut self.rng);
                let mut m = BitMat::zeros(f * p, k * p);
                for (col, &j) in feats.iter().enumerate() {
                    for v in 0..p {
                        m.set(j * p + v, col * p + v, true);
                    }
                }
                log.rf_features.insert(self.tree(), feats);
                let (m0, m1) = split_bitmat(&m, &mut self.rng);
                Ok((Item::FsRf(m0), Item::FsRf(m1)))
            }
            ItemKind::RfSs { s, n } => {
                let (s, n) = (s as usize, n as usize);
                let rows: Vec<usize> = (0..s).map(|_| self.rng.gen_range(0..n)).collect();
                let mut m = BitMat::zeros(s, n);
                for (r, &src) in rows.iter().enumerate() {
                    m.set(r, src, true);
                }
                log.rf_rows.insert(self.tree(), rows);
                let (m0, m1) = split_bitmat(&m, &mut self.rng);
                Ok((Item::Ss(m0), Item::Ss(m1)))
            }
            ItemKind::XtFs {
                width,
                f,
                k,
                replace,
            } => {
                let ring = Ring::new(width);
                let (f, k) = (f as usize, k as usize);
                let feats: Vec<usize> = if replace {
                    (0..k).map(|_| self.rng.gen_range(0..f)).collect()
                } else {
                    if k > f {
                        return Err(Error::randomness(format!(
                            "XT strict mode needs k ≤ f (k={k}, f={f})"
                        )));
                    }
                    sample_without_replacement(f, k, &mut self.rng)
                };
                let mut m = Mat::zeros(ring, f, k);
                for (col, &j) in feats.iter().enumerate() {
                    m.set(j, col, 1);
                }
                log.xt_features.insert(self.tree(), feats);
                let (m0, m1) = split_mat(&m, &mut self.rng);
                Ok((Item::FsXt(m0), Item::FsXt(m1)))
            }
            ItemKind::Ratios { width, k, frac } => {
                let ring = Ring::new(width);
                let hi = (1u128 << frac) - 1;
                let plain = RingVec::from_fn(ring, k as usize, |_| self.rng.gen_range(1..=hi));
                log.xt_ratios.insert(self.tree(), plain.as_slice().to_vec());
                let (r0, r1) = sharing::split_ring_vec(&plain, &mut self.rng);
                Ok((Item::Ratios(r0), Item::Ratios(r1)))
            }
        }
    }
}

fn split_mat(m: &Mat, rng: &mut impl Rng) -> (Mat, Mat) {
    let a = Mat::from_fn(m.ring(), m.rows(), m.cols(), |_, _| rng.gen::<u128>());
    let b = m.sub(&a);
    (a, b)
}

fn split_bitmat(m: &BitMat, rng: &mut impl Rng) -> (BitMat, BitMat) {
    let a = BitMat::from_fn(m.rows(), m.cols(), |_, _| rng.gen::<bool>());
    let b = m.xor(&a);
    (a, b)
}

fn sample_without_replacement(n: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Party-side access to the correlated randomness of one session.
pub trait Randomness: Send {
    fn role(&self) -> Role;

    fn set_domain(&mut self, domain: Domain);

    fn current_domain(&self) -> Domain;

    fn next(&mut self, kind: ItemKind) -> Result<Item>;

    fn ring_triple(&mut self, ring: Ring, n: usize) -> Result<(RingVec, RingVec, RingVec)> {
        match self.next(ItemKind::RingTriple {
            width: ring.width(),
            n: n as u64,
        })? {
            Item::Ring3(a, b, c) => Ok((a, b, c)),
            _ => Err(Error::randomness("item kind mismatch")),
        }
    }

    fn bit_triple(&mut self, n: usize) -> Result<(BitVec, BitVec, BitVec)> {
        match self.next(ItemKind::BitTriple { n: n as u64 })? {
            Item::Bit3(a, b, c) => Ok((a, b, c)),
            _ => Err(Error::randomness("item kind mismatch")),
        }
    }

    fn masks(&mut self, ring: Ring, n: usize) -> Result<RingVec> {
        match self.next(ItemKind::Masks {
            width: ring.width(),
            n: n as u64,
        })? {
            Item::Masks(r) => Ok(r),
            _ => Err(Error::randomness("item kind mismatch")),
        }
    }

    fn mat_triple(&mut self, ring: Ring, l: usize, m: usize, r: usize) -> Result<(Mat, Mat, Mat)> {
        match self.next(ItemKind::MatTriple {
            width: ring.width(),
            l: l as u64,
            m: m as u64,
            r: r as u64,
        })? {
            Item::Mat3(a, b, c) => Ok((a, b, c)),
            _ => Err(Error::randomness("item kind mismatch")),
        }
    }

    fn bitmat_triple(&mut self, l: usize, m: usize, r: usize) -> Result<(BitMat, BitMat, BitMat)> {
        match self.next(ItemKind::BitMatTriple {
            l: l as u64,
            m: m as u64,
            r: r as u64,
        })? {
            Item::BitMat3(a, b, c) => Ok((a, b, c)),
            _ => Err(Error::randomness("item kind mismatch")),
        }
    }

    fn fixed_mask(&mut self, ring: Ring, rows: usize, cols: usize) -> Result<(FixedId, Mat)> {
        let domain = self.current_domain().id();
        match self.next(ItemKind::FixedMask {
            width: ring.width(),
            rows: rows as u64,
            cols: cols as u64,
        })? {
            Item::FixedMask(index, r) => Ok((FixedId { domain, index }, r)),
            _ => Err(Error::randomness("item kind mismatch")),
        }
    }

    fn fixed_mul_rhs(&mut self, id: FixedId, l: usize) -> Result<(Mat, Mat)> {
        self.check_fixed_domain(id)?;
        match self.next(ItemKind::FixedMulRhs {
            fixed: id.index,
            l: l as u64,
        })? {
            Item::FixedMul(a, c) => Ok((a, c)),
            _ => Err(Error::randomness("item kind mismatch")),
        }
    }

    fn fixed_mul_lhs(&mut self, id: FixedId, r: usize) -> Result<(Mat, Mat)> {
        self.check_fixed_domain(id)?;
        match self.next(ItemKind::FixedMulLhs {
            fixed: id.index,
            r: r as u64,
        })? {
            Item::FixedMul(b, c) => Ok((b, c)),
            _ => Err(Error::randomness("item kind mismatch")),
        }
    }

    fn fixed_hadamard(&mut self, id: FixedId) -> Result<(RingVec, Mat)> {
        self.check_fixed_domain(id)?;
        match self.next(ItemKind::FixedHadamard { fixed: id.index })? {
            Item::FixedHadamard(a, c) => Ok((a, c)),
            _ => Err(Error::randomness("item kind mismatch")),
        }
    }

    fn check_fixed_domain(&self, id: FixedId) -> Result<()> {
        if id.domain != self.current_domain().id() {
            return Err(Error::randomness(format!(
                "fixed mask {} belongs to domain {}, current domain is {}",
                id.index,
                id.domain,
                self.current_domain().id()
            )));
        }
        Ok(())
    }

    fn rf_fs(&mut self, f: usize, p: usize, k: usize) -> Result<BitMat> {
        match self.next(ItemKind::RfFs {
            f: f as u64,
            p: p as u64,
            k: k as u64,
        })? {
            Item::FsRf(m) => Ok(m),
            _ => Err(Error::randomness("item kind mismatch")),
        }
    }

    fn rf_ss(&mut self, s: usize, n: usize) -> Result<BitMat> {
        match self.next(ItemKind::RfSs {
            s: s as u64,
            n: n as u64,
        })? {
            Item::Ss(m) => Ok(m),
            _ => Err(Error::randomness("item kind mismatch")),
        }
    }

    fn xt_fs(&mut self, ring: Ring, f: usize, k: usize, replace: bool) -> Result<Mat> {
        match self.next(ItemKind::XtFs {
            width: ring.width(),
            f: f as u64,
            k: k as u64,
            replace,
        })? {
            Item::FsXt(m) => Ok(m),
            _ => Err(Error::randomness("item kind mismatch")),
        }
    }

    fn ratios(&mut self, ring: Ring, k: usize, frac: u32) -> Result<RingVec> {
        match self.next(ItemKind::Ratios {
            width: ring.width(),
            k: k as u64,
            frac,
        })? {
            Item::Ratios(r) => Ok(r),
            _ => Err(Error::randomness("item kind mismatch")),
        }
    }
}

struct DomainState {
    gen: DomainGen,
    pending: [VecDeque<(ItemKind, Item)>; 2],
}

struct DealerState {
    seed: u64,
    domains: BTreeMap<u32, DomainState>,
    log: SelectionLog,
    recording: Option<BTreeMap<u32, Vec<(ItemKind, Item, Item)>>>,
}

/// In-process trusted initializer shared by both party handles.
#[derive(Clone)]
pub struct SharedDealer {
    state: Arc<Mutex<DealerState>>,
}

impl SharedDealer {
    pub fn new(seed: u64) -> SharedDealer {
        SharedDealer {
            state: Arc::new(Mutex::new(DealerState {
                seed,
                domains: BTreeMap::new(),
                log: SelectionLog::default(),
                recording: None,
            })),
        }
    }

    /// A dealer that also records every dealt item pair for tape writing.
    pub fn new_recording(seed: u64) -> SharedDealer {
        let d = SharedDealer::new(seed);
        d.state.lock().unwrap().recording = Some(BTreeMap::new());
        d
    }

    pub fn handle(&self, role: Role) -> DealerHandle {
        DealerHandle {
            shared: self.clone(),
            role,
            domain: Domain::Main,
        }
    }

    /// Plaintext selection draws, for equivalence harnesses.
    pub fn selection_log(&self) -> SelectionLog {
        self.state.lock().unwrap().log.clone()
    }

    pub fn seed(&self) -> u64 {
        self.state.lock().unwrap().seed
    }

    /// Writes the recorded items as one tape file per party.
    pub fn write_tapes(&self, lambda: u32, path_a: &Path, path_b: &Path) -> Result<()> {
        let st = self.state.lock().unwrap();
        let sections = st
            .recording
            .as_ref()
            .ok_or_else(|| Error::randomness("dealer was not recording"))?;
        for (role, path) in [(Role::A, path_a), (Role::B, path_b)] {
            let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
            write_tape(&mut w, st.seed, lambda, role, sections)?;
            w.flush()?;
        }
        Ok(())
    }

    fn next_item(&self, role: Role, domain: Domain, kind: ItemKind) -> Result<Item> {
        let mut guard = self.state.lock().unwrap();
        let st = &mut *guard;
        let seed = st.seed;
        let dom = st
            .domains
            .entry(domain.id())
            .or_insert_with(|| DomainState {
                gen: DomainGen::new(seed, domain.id()),
                pending: [VecDeque::new(), VecDeque::new()],
            });
        let idx = role.index();
        if let Some((k, item)) = dom.pending[idx].pop_front() {
            if k != kind {
                return Err(Error::randomness(format!(
                    "randomness desync in domain {:?}: peer drew {:?}, this party wants {:?}",
                    domain, k, kind
                )));
            }
            return Ok(item);
        }
        let (a, b) = dom.gen.deal(&kind, &mut st.log)?;
        if let Some(rec) = &mut st.recording {
            rec.entry(domain.id())
                .or_default()
                .push((kind.clone(), a.clone(), b.clone()));
        }
        let (mine, theirs) = match role {
            Role::A => (a, b),
            Role::B => (b, a),
        };
        dom.pending[1 - idx].push_back((kind, theirs));
        Ok(mine)
    }
}

/// One party's view of a `SharedDealer`.
pub struct DealerHandle {
    shared: SharedDealer,
    role: Role,
    domain: Domain,
}

impl Randomness for DealerHandle {
    fn role(&self) -> Role {
        self.role
    }

    fn set_domain(&mut self, domain: Domain) {
        self.domain = domain;
    }

    fn current_domain(&self) -> Domain {
        self.domain
    }

    fn next(&mut self, kind: ItemKind) -> Result<Item> {
        self.shared.next_item(self.role, self.domain, kind)
    }
}

// ---------------------------------------------------------------------------
// Tape files: little-endian binary, one per party, per-domain sections.
// Header: magic, version, party, Λ, section count, seed fingerprint.
// ---------------------------------------------------------------------------

fn put_kind(w: &mut impl Write, k: &ItemKind) -> Result<()> {
    match *k {
        ItemKind::RingTriple { width, n } => {
            put_u32(w, 1)?;
            put_u32(w, width)?;
            put_u64(w, n)?;
        }
        ItemKind::BitTriple { n } => {
            put_u32(w, 2)?;
            put_u64(w, n)?;
        }
        ItemKind::Masks { width, n } => {
            put_u32(w, 3)?;
            put_u32(w, width)?;
            put_u64(w, n)?;
        }
        ItemKind::MatTriple { width, l, m, r } => {
            put_u32(w, 4)?;
            put_u32(w, width)?;
            put_u64(w, l)?;
            put_u64(w, m)?;
            put_u64(w, r)?;
        }
        ItemKind::BitMatTriple { l, m, r } => {
            put_u32(w, 5)?;
            put_u64(w, l)?;
            put_u64(w, m)?;
            put_u64(w, r)?;
        }
        ItemKind::FixedMask { width, rows, cols } => {
            put_u32(w, 6)?;
            put_u32(w, width)?;
            put_u64(w, rows)?;
            put_u64(w, cols)?;
        }
        ItemKind::FixedMulRhs { fixed, l } => {
            put_u32(w, 7)?;
            put_u32(w, fixed)?;
            put_u64(w, l)?;
        }
        ItemKind::FixedMulLhs { fixed, r } => {
            put_u32(w, 8)?;
            put_u32(w, fixed)?;
            put_u64(w, r)?;
        }
        ItemKind::FixedHadamard { fixed } => {
            put_u32(w, 9)?;
            put_u32(w, fixed)?;
        }
        ItemKind::RfFs { f, p, k } => {
            put_u32(w, 10)?;
            put_u64(w, f)?;
            put_u64(w, p)?;
            put_u64(w, k)?;
        }
        ItemKind::RfSs { s, n } => {
            put_u32(w, 11)?;
            put_u64(w, s)?;
            put_u64(w, n)?;
        }
        ItemKind::XtFs {
            width,
            f,
            k,
            replace,
        } => {
            put_u32(w, 12)?;
            put_u32(w, width)?;
            put_u64(w, f)?;
            put_u64(w, k)?;
            put_u32(w, replace as u32)?;
        }
        ItemKind::Ratios { width, k, frac } => {
            put_u32(w, 13)?;
            put_u32(w, width)?;
            put_u64(w, k)?;
            put_u32(w, frac)?;
        }
    }
    Ok(())
}

fn get_kind(r: &mut impl Read) -> Result<ItemKind> {
    Ok(match get_u32(r)? {
        1 => ItemKind::RingTriple {
            width: get_u32(r)?,
            n: get_u64(r)?,
        },
        2 => ItemKind::BitTriple { n: get_u64(r)? },
        3 => ItemKind::Masks {
            width: get_u32(r)?,
            n: get_u64(r)?,
        },
        4 => ItemKind::MatTriple {
            width: get_u32(r)?,
            l: get_u64(r)?,
            m: get_u64(r)?,
            r: get_u64(r)?,
        },
        5 => ItemKind::BitMatTriple {
            l: get_u64(r)?,
            m: get_u64(r)?,
            r: get_u64(r)?,
        },
        6 => ItemKind::FixedMask {
            width: get_u32(r)?,
            rows: get_u64(r)?,
            cols: get_u64(r)?,
        },
        7 => ItemKind::FixedMulRhs {
            fixed: get_u32(r)?,
            l: get_u64(r)?,
        },
        8 => ItemKind::FixedMulLhs {
            fixed: get_u32(r)?,
            r: get_u64(r)?,
        },
        9 => ItemKind::FixedHadamard { fixed: get_u32(r)? },
        10 => ItemKind::RfFs {
            f: get_u64(r)?,
            p: get_u64(r)?,
            k: get_u64(r)?,
        },
        11 => ItemKind::RfSs {
            s: get_u64(r)?,
            n: get_u64(r)?,
        },
        12 => ItemKind::XtFs {
            width: get_u32(r)?,
            f: get_u64(r)?,
            k: get_u64(r)?,
            replace: get_u32(r)? != 0,
        },
        13 => ItemKind::Ratios {
            width: get_u32(r)?,
            k: get_u64(r)?,
            frac: get_u32(r)?,
        },
        t => return Err(Error::data(format!("unknown tape item tag {t}"))),
    })
}

fn put_item(w: &mut impl Write, item: &Item) -> Result<()> {
    match item {
        Item::Ring3(a, b, c) => {
            put_ringvec(w, a)?;
            put_ringvec(w, b)?;
            put_ringvec(w, c)?;
        }
        Item::Bit3(a, b, c) => {
            put_bits(w, a)?;
            put_bits(w, b)?;
            put_bits(w, c)?;
        }
        Item::Masks(r) => put_ringvec(w, r)?,
        Item::Mat3(a, b, c) => {
            put_mat(w, a)?;
            put_mat(w, b)?;
            put_mat(w, c)?;
        }
        Item::BitMat3(a, b, c) => {
            put_bitmat(w, a)?;
            put_bitmat(w, b)?;
            put_bitmat(w, c)?;
        }
        Item::FixedMask(id, r) => {
            put_u32(w, *id)?;
            put_mat(w, r)?;
        }
        Item::FixedMul(a, c) => {
            put_mat(w, a)?;
            put_mat(w, c)?;
        }
        Item::FixedHadamard(a, c) => {
            put_ringvec(w, a)?;
            put_mat(w, c)?;
        }
        Item::FsRf(m) | Item::Ss(m) => put_bitmat(w, m)?,
        Item::FsXt(m) => put_mat(w, m)?,
        Item::Ratios(r) => put_ringvec(w, r)?,
    }
    Ok(())
}

fn get_item(r: &mut impl Read, kind: &ItemKind) -> Result<Item> {
    Ok(match kind {
        ItemKind::RingTriple { .. } => {
            Item::Ring3(get_ringvec(r)?, get_ringvec(r)?, get_ringvec(r)?)
        }
        ItemKind::BitTriple { .. } => Item::Bit3(get_bits(r)?, get_bits(r)?, get_bits(r)?),
        ItemKind::Masks { .. } => Item::Masks(get_ringvec(r)?),
        ItemKind::MatTriple { .. } => Item::Mat3(get_mat(r)?, get_mat(r)?, get_mat(r)?),
        ItemKind::BitMatTriple { .. } => {
            Item::BitMat3(get_bitmat(r)?, get_bitmat(r)?, get_bitmat(r)?)
        }
        ItemKind::FixedMask { .. } => Item::FixedMask(get_u32(r)?, get_mat(r)?),
        ItemKind::FixedMulRhs { .. } | ItemKind::FixedMulLhs { .. } => {
            Item::FixedMul(get_mat(r)?, get_mat(r)?)
        }
        ItemKind::FixedHadamard { .. } => Item::FixedHadamard(get_ringvec(r)?, get_mat(r)?),
        ItemKind::RfFs { .. } => Item::FsRf(get_bitmat(r)?),
        ItemKind::RfSs { .. } => Item::Ss(get_bitmat(r)?),
        ItemKind::XtFs { .. } => Item::FsXt(get_mat(r)?),
        ItemKind::Ratios { .. } => Item::Ratios(get_ringvec(r)?),
    })
}

fn write_tape(
    w: &mut impl Write,
    seed: u64,
    lambda: u32,
    role: Role,
    sections: &BTreeMap<u32, Vec<(ItemKind, Item, Item)>>,
) -> Result<()> {
    w.write_all(TAPE_MAGIC)?;
    put_u32(w, TAPE_VERSION)?;
    put_u32(w, role.index() as u32)?;
    put_u32(w, lambda)?;
    put_u64(w, seed_fingerprint(seed))?;
    put_u32(w, sections.len() as u32)?;
    for (domain, items) in sections {
        put_u32(w, *domain)?;
        put_u64(w, items.len() as u64)?;
        for (kind, a, b) in items {
            put_kind(w, kind)?;
            put_item(w, if role.is_a() { a } else { b })?;
        }
    }
    Ok(())
}

/// Reads one party's tape file and serves items from per-domain queues.
pub struct TapeReader {
    role: Role,
    domain: Domain,
    pub lambda: u32,
    pub seed_fp: u64,
    queues: BTreeMap<u32, VecDeque<(ItemKind, Item)>>,
}

impl TapeReader {
    /// Splits off the queues of the given domains into a new reader, so
    /// tree workers can consume their domains independently.
    pub fn take_domains(&mut self, domains: &[Domain]) -> TapeReader {
        let mut queues = BTreeMap::new();
        for d in domains {
            if let Some(q) = self.queues.remove(&d.id()) {
                queues.insert(d.id(), q);
            }
        }
        TapeReader {
            role: self.role,
            domain: Domain::Main,
            lambda: self.lambda,
            seed_fp: self.seed_fp,
            queues,
        }
    }

    pub fn open(path: &Path, role: Role) -> Result<TapeReader> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TAPE_MAGIC {
            return Err(Error::data("not a randomness tape"));
        }
        let version = get_u32(&mut r)?;
        if version != TAPE_VERSION {
            return Err(Error::data(format!("unsupported tape version {version}")));
        }
        let file_party = get_u32(&mut r)?;
        if file_party as usize != role.index() {
            return Err(Error::usage(format!(
                "tape belongs to party {}, running as {}",
                if file_party == 0 { "A" } else { "B" },
                role
            )));
        }
        let lambda = get_u32(&mut r)?;
        let seed_fp = get_u64(&mut r)?;
        let nsections = get_u32(&mut r)?;
        let mut queues = BTreeMap::new();
        for _ in 0..nsections {
            let domain = get_u32(&mut r)?;
            let count = get_u64(&mut r)?;
            let q: &mut VecDeque<(ItemKind, Item)> = queues.entry(domain).or_default();
            for _ in 0..count {
                let kind = get_kind(&mut r)?;
                let item = get_item(&mut r, &kind)?;
                q.push_back((kind, item));
            }
        }
        Ok(TapeReader {
            role,
            domain: Domain::Main,
            lambda,
            seed_fp,
            queues,
        })
    }
}

impl Randomness for TapeReader {
    fn role(&self) -> Role {
        self.role
    }

    fn set_domain(&mut self, domain: Domain) {
        self.domain = domain;
    }

    fn current_domain(&self) -> Domain {
        self.domain
    }

    fn next(&mut self, kind: ItemKind) -> Result<Item> {
        let q = self
            .queues
            .get_mut(&self.domain.id())
            .ok_or_else(|| Error::randomness(format!("tape has no domain {:?}", self.domain)))?;
        match q.pop_front() {
            None => Err(Error::randomness(format!(
                "randomness exhausted in domain {:?} (wanted {:?})",
                self.domain, kind
            ))),
            Some((k, item)) if k == kind => Ok(item),
            Some((k, _)) => Err(Error::randomness(format!(
                "tape item mismatch in domain {:?}: tape has {:?}, protocol wants {:?}",
                self.domain, k, kind
            ))),
        }
    }

    fn fixed_mask(&mut self, ring: Ring, rows: usize, cols: usize) -> Result<(FixedId, Mat)> {
        let domain = self.domain.id();
        match self.next(ItemKind::FixedMask {
            width: ring.width(),
            rows: rows as u64,
            cols: cols as u64,
        })? {
            Item::FixedMask(index, r) => Ok((FixedId { domain, index }, r)),
            _ => Err(Error::randomness("item kind mismatch")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triple_property_holds() {
        let dealer = SharedDealer::new(7);
        let mut ha = dealer.handle(Role::A);
        let mut hb = dealer.handle(Role::B);
        let ring = Ring::new(64);
        let (aa, ba, ca) = ha.ring_triple(ring, 4).unwrap();
        let (ab, bb, cb) = hb.ring_triple(ring, 4).unwrap();
        for i in 0..4 {
            let a = ring.add(aa.get(i), ab.get(i));
            let b = ring.add(ba.get(i), bb.get(i));
            let c = ring.add(ca.get(i), cb.get(i));
            assert_eq!(c, ring.mul(a, b));
        }
    }

    #[test]
    fn same_seed_same_bundles() {
        for _ in 0..2 {
            let d1 = SharedDealer::new(99);
            let d2 = SharedDealer::new(99);
            let ring = Ring::new(64);
            let t1 = d1.handle(Role::A).ring_triple(ring, 8).unwrap();
            let t2 = d2.handle(Role::A).ring_triple(ring, 8).unwrap();
            assert_eq!(t1.0, t2.0);
            assert_eq!(t1.2, t2.2);
        }
    }

    #[test]
    fn rf_fs_structure() {
        // the §5 example class: f=3, p=3, k=2 gives a 9×6 selection matrix
        let dealer = SharedDealer::new(3);
        let mut ha = dealer.handle(Role::A);
        let mut hb = dealer.handle(Role::B);
        ha.set_domain(Domain::Tree(0));
        hb.set_domain(Domain::Tree(0));
        let ma = ha.rf_fs(3, 3, 2).unwrap();
        let mb = hb.rf_fs(3, 3, 2).unwrap();
        assert_eq!((ma.rows(), ma.cols()), (9, 6));
        let m = ma.xor(&mb);
        let feats = &dealer.selection_log().rf_features[&0];
        assert_eq!(feats.len(), 2);
        assert_ne!(feats[0], feats[1], "features chosen without replacement");
        // each selected feature contributes exactly one p×p identity block
        for (col_block, &j) in feats.iter().enumerate() {
            for v in 0..3 {
                for row in 0..9 {
                    let expect = row == j * 3 + v;
                    assert_eq!(m.get(row, col_block * 3 + v), expect);
                }
            }
        }
    }

    #[test]
    fn ss_rows_sum_to_one() {
        let dealer = SharedDealer::new(5);
        let mut ha = dealer.handle(Role::A);
        let mut hb = dealer.handle(Role::B);
        ha.set_domain(Domain::Tree(2));
        hb.set_domain(Domain::Tree(2));
        let m = ha.rf_ss(20, 50).unwrap().xor(&hb.rf_ss(20, 50).unwrap());
        for r in 0..20 {
            assert_eq!(m.row(r).count_ones(), 1);
        }
    }

    #[test]
    fn ratios_in_range() {
        let dealer = SharedDealer::new(11);
        let mut ha = dealer.handle(Role::A);
        let mut hb = dealer.handle(Role::B);
        ha.set_domain(Domain::Tree(0));
        hb.set_domain(Domain::Tree(0));
        let ring = Ring::new(64);
        let ra = ha.ratios(ring, 100, 10).unwrap();
        let rb = hb.ratios(ring, 100, 10).unwrap();
        let plain = ra.add(&rb);
        for i in 0..100 {
            let v = plain.get(i);
            assert!(v >= 1 && v <= 1023, "ratio {v} out of [1, 2^a-1]");
        }
    }

    #[test]
    fn desync_detected() {
        let dealer = SharedDealer::new(1);
        let mut ha = dealer.handle(Role::A);
        let mut hb = dealer.handle(Role::B);
        let ring = Ring::new(64);
        let _ = ha.ring_triple(ring, 2).unwrap();
        assert!(hb.bit_triple(2).is_err());
    }

    #[test]
    fn tape_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let pa = dir.path().join("a.tape");
        let pb = dir.path().join("b.tape");
        let ring = Ring::new(64);
        let dealer = SharedDealer::new_recording(42);
        {
            let mut ha = dealer.handle(Role::A);
            let mut hb = dealer.handle(Role::B);
            let _ = ha.ring_triple(ring, 3).unwrap();
            let _ = hb.ring_triple(ring, 3).unwrap();
            let (ida, _ra) = ha.fixed_mask(ring, 2, 2).unwrap();
            let (idb, _rb) = hb.fixed_mask(ring, 2, 2).unwrap();
            assert_eq!(ida, idb);
            let _ = ha.fixed_mul_rhs(ida, 1).unwrap();
            let _ = hb.fixed_mul_rhs(idb, 1).unwrap();
            ha.set_domain(Domain::Tree(0));
            hb.set_domain(Domain::Tree(0));
            let _ = ha.bit_triple(10).unwrap();
            let _ = hb.bit_triple(10).unwrap();
        }
        dealer.write_tapes(64, &pa, &pb).unwrap();

        let mut ra = TapeReader::open(&pa, Role::A).unwrap();
        let mut rb = TapeReader::open(&pb, Role::B).unwrap();
        assert_eq!(ra.seed_fp, seed_fingerprint(42));
        let (ta, tb) = (
            ra.ring_triple(ring, 3).unwrap(),
            rb.ring_triple(ring, 3).unwrap(),
        );
        for i in 0..3 {
            let a = ring.add(ta.0.get(i), tb.0.get(i));
            let b = ring.add(ta.1.get(i), tb.1.get(i));
            let c = ring.add(ta.2.get(i), tb.2.get(i));
            assert_eq!(c, ring.mul(a, b));
        }
        let (id, _) = ra.fixed_mask(ring, 2, 2).unwrap();
        let _ = rb.fixed_mask(ring, 2, 2).unwrap();
        let _ = ra.fixed_mul_rhs(id, 1).unwrap();
        let _ = rb.fixed_mul_rhs(id, 1).unwrap();
        ra.set_domain(Domain::Tree(0));
        rb.set_domain(Domain::Tree(0));
        assert!(ra.bit_triple(10).is_ok());
        assert!(rb.bit_triple(10).is_ok());
        // exhaustion
        assert!(ra.bit_triple(10).is_err());
        // wrong party file
        assert!(TapeReader::open(&pa, Role::B).is_err());
    }

    #[test]
    fn bundle_marginals_look_uniform() {
        // per-item-class marginal uniformity smoke test over many seeds:
        // bucket the low byte of each share of `a` and chi-square it
        let mut counts = [0u64; 16];
        let ring = Ring::new(64);
        let mut total = 0u64;
        for seed in 0..64 {
            let dealer = SharedDealer::new(seed);
            let (a, _b, _c) = dealer.handle(Role::A).ring_triple(ring, 64).unwrap();
            for i in 0..a.len() {
                counts[(a.get(i) & 0xf) as usize] += 1;
                total += 1;
            }
        }
        let expect = total as f64 / 16.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expect;
                d * d / expect
            })
            .sum();
        // 15 dof; 99.9th percentile ≈ 37.7
        assert!(chi2 < 37.7, "chi2 = {chi2}, counts = {counts:?}");
    }
}
