//! Data-owner tooling: CSV ingestion, scaling, fixed-point encoding,
//! secret-share splitting into per-party share files, and k-fold split
//! generation.

use crate::bits::BitMat;
use crate::error::{Error, Result};
use crate::fixed::Codec;
use crate::oracle::PlainDataset;
use crate::ring::{Mat, RingVec};
use crate::sharing::{self, Role};
use crate::train::{DataShape, SharedDataset};
use crate::ti::seed_fingerprint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

pub const SHARES_MAGIC: &[u8; 8] = b"GRVSHRD1";
pub const SHARES_VERSION: u32 = 1;

/// Reads a numeric CSV: every column a feature except the last, which is
/// the class label. A non-numeric first row is treated as a header.
pub fn read_csv(path: &Path) -> Result<PlainDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::data(format!("csv open: {e}")))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels_raw: Vec<String> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::data(format!("csv row {}: {e}", i + 1)))?;
        if rec.len() < 2 {
            return Err(Error::data("csv needs at least one feature and a label"));
        }
        let mut vals = Vec::with_capacity(rec.len() - 1);
        let mut numeric = true;
        for cell in rec.iter().take(rec.len() - 1) {
            match cell.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => vals.push(v),
                _ => {
                    numeric = false;
                    break;
                }
            }
        }
        if !numeric {
            if i == 0 {
                continue; // header row
            }
            return Err(Error::data(format!("csv row {}: non-numeric cell", i + 1)));
        }
        rows.push(vals);
        labels_raw.push(rec.get(rec.len() - 1).unwrap().trim().to_string());
    }
    if rows.is_empty() {
        return Err(Error::data("csv has no data rows"));
    }
    let f = rows[0].len();
    if rows.iter().any(|r| r.len() != f) {
        return Err(Error::data("csv rows have differing widths"));
    }
    // distinct label values, sorted, define the class indices
    let mut classes: Vec<String> = labels_raw.clone();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::data("csv needs at least two distinct labels"));
    }
    let y = labels_raw
        .iter()
        .map(|l| classes.iter().position(|c| c == l).unwrap())
        .collect();
    Ok(PlainDataset {
        x: rows,
        y,
        classes: classes.len(),
    })
}

/// Drops features whose zero fraction is at least `threshold`.
/// Returns the kept column indices.
pub fn drop_sparse(data: &mut PlainDataset, threshold: f64) -> Vec<usize> {
    let n = data.n() as f64;
    let keep: Vec<usize> = (0..data.f())
        .filter(|&j| {
            let zeros = data.x.iter().filter(|r| r[j] == 0.0).count() as f64;
            zeros / n < threshold
        })
        .collect();
    for row in &mut data.x {
        *row = keep.iter().map(|&j| row[j]).collect();
    }
    keep
}

/// Scales and encodes a dataset and splits it into the two parties'
/// in-memory shares. The scaled magnitudes must stay below 2^{b−1} so
/// pairwise comparisons remain inside the injected subring.
pub fn share_dataset(
    data: &PlainDataset,
    codec: &Codec,
    scale: f64,
    seed: u64,
) -> Result<(SharedDataset, SharedDataset, DataShape)> {
    data.check()?;
    let (n, f, c) = (data.n(), data.f(), data.classes);
    let ring = codec.ring();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let limit = codec.max_input_magnitude();
    let mut fa = Mat::zeros(ring, n, f);
    let mut fb = Mat::zeros(ring, n, f);
    for i in 0..n {
        for j in 0..f {
            let v = data.x[i][j] * scale;
            if !v.is_finite() || v.abs() >= limit {
                return Err(Error::data(format!(
                    "value {} at row {i} col {j} exceeds ±{limit} after scaling",
                    data.x[i][j]
                )));
            }
            let enc = codec.encode(v)?;
            let (a, b) = sharing::split_ring(ring, enc, &mut rng);
            fa.set(i, j, a);
            fb.set(i, j, b);
        }
    }
    let mut la = BitMat::zeros(n, c);
    let mut lb = BitMat::zeros(n, c);
    for i in 0..n {
        for y in 0..c {
            let bit = data.y[i] == y;
            let r: bool = rng.gen();
            la.set(i, y, r);
            lb.set(i, y, bit ^ r);
        }
    }
    let shape = DataShape {
        n,
        f,
        classes: c,
        scale,
    };
    Ok((
        SharedDataset {
            features: fa,
            labels: la,
        },
        SharedDataset {
            features: fb,
            labels: lb,
        },
        shape,
    ))
}

/// Deterministic k-fold partition: a seeded shuffle split into k
/// near-equal disjoint index sets.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(Error::usage(format!("kfold needs 2 ≤ k ≤ n (k={k}, n={n})")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xf01d);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    Ok(folds)
}

/// Per-party share file: header (magic, version, λ, a, b, n, f, c, scale,
/// seed fingerprint, fold ids) followed by little-endian share words and
/// packed label-share bits.
pub struct ShareFile {
    pub role: Role,
    pub shape: DataShape,
    pub codec: Codec,
    pub folds: Vec<u8>,
    pub data: SharedDataset,
    pub seed_fp: u64,
}

pub fn write_share_files(
    data: &PlainDataset,
    codec: &Codec,
    scale: f64,
    seed: u64,
    folds: usize,
    path_a: &Path,
    path_b: &Path,
) -> Result<DataShape> {
    let (da, db, shape) = share_dataset(data, codec, scale, seed)?;
    let fold_sets = kfold(shape.n, folds, seed)?;
    let mut fold_ids = vec![0u8; shape.n];
    for (fi, rows) in fold_sets.iter().enumerate() {
        for &r in rows {
            fold_ids[r] = fi as u8;
        }
    }
    for (role, path, d) in [(Role::A, path_a, &da), (Role::B, path_b, &db)] {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(SHARES_MAGIC)?;
        w.write_all(&SHARES_VERSION.to_le_bytes())?;
        w.write_all(&[role.index() as u8])?;
        w.write_all(&codec.lambda().to_le_bytes())?;
        w.write_all(&codec.frac_bits().to_le_bytes())?;
        w.write_all(&codec.int_bits().to_le_bytes())?;
        w.write_all(&(shape.n as u64).to_le_bytes())?;
        w.write_all(&(shape.f as u64).to_le_bytes())?;
        w.write_all(&(shape.classes as u64).to_le_bytes())?;
        w.write_all(&scale.to_le_bytes())?;
        w.write_all(&seed_fingerprint(seed).to_le_bytes())?;
        w.write_all(&fold_ids)?;
        w.write_all(&d.features.as_ringvec().to_bytes())?;
        w.write_all(&d.labels.to_bytes())?;
        w.flush()?;
    }
    Ok(shape)
}

pub fn read_share_file(path: &Path, expect_role: Role) -> Result<ShareFile> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SHARES_MAGIC {
        return Err(Error::data("not a share file"));
    }
    let mut u32b = [0u8; 4];
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u32b)?;
    if u32::from_le_bytes(u32b) != SHARES_VERSION {
        return Err(Error::data("unsupported share file version"));
    }
    let mut roleb = [0u8; 1];
    r.read_exact(&mut roleb)?;
    let role = if roleb[0] == 0 { Role::A } else { Role::B };
    if role != expect_role {
        return Err(Error::usage(format!(
            "share file belongs to party {role}, running as {expect_role}"
        )));
    }
    r.read_exact(&mut u32b)?;
    let lambda = u32::from_le_bytes(u32b);
    r.read_exact(&mut u32b)?;
    let frac = u32::from_le_bytes(u32b);
    r.read_exact(&mut u32b)?;
    let int = u32::from_le_bytes(u32b);
    let codec = Codec::new(lambda, frac, int)?;
    r.read_exact(&mut u64b)?;
    let n = u64::from_le_bytes(u64b) as usize;
    r.read_exact(&mut u64b)?;
    let f = u64::from_le_bytes(u64b) as usize;
    r.read_exact(&mut u64b)?;
    let c = u64::from_le_bytes(u64b) as usize;
    r.read_exact(&mut u64b)?;
    let scale = f64::from_le_bytes(u64b);
    r.read_exact(&mut u64b)?;
    let seed_fp = u64::from_le_bytes(u64b);
    let mut folds = vec![0u8; n];
    r.read_exact(&mut folds)?;
    let ring = codec.ring();
    let mut feat_bytes = vec![0u8; n * f * ring.wire_bytes()];
    r.read_exact(&mut feat_bytes)?;
    let features = Mat::from_ringvec(RingVec::from_bytes(ring, n * f, &feat_bytes)?, n, f);
    let mut label_bytes = vec![0u8; (n * c + 7) / 8];
    r.read_exact(&mut label_bytes)?;
    let labels = BitMat::from_bytes(n, c, &label_bytes)?;
    Ok(ShareFile {
        role,
        shape: DataShape {
            n,
            f,
            classes: c,
            scale,
        },
        codec,
        folds,
        data: SharedDataset { features, labels },
        seed_fp,
    })
}

/// Restricts a shared dataset to the rows outside the held-out fold.
pub fn training_rows(file_folds: &[u8], holdout: usize) -> Vec<usize> {
    file_folds
        .iter()
        .enumerate()
        .filter(|(_, &fid)| fid as usize != holdout)
        .map(|(i, _)| i)
        .collect()
}

pub fn select_rows(d: &SharedDataset, rows: &[usize]) -> SharedDataset {
    let f = d.features.cols();
    let c = d.labels.cols();
    SharedDataset {
        features: Mat::from_fn(d.features.ring(), rows.len(), f, |r, j| {
            d.features.at(rows[r], j)
        }),
        labels: BitMat::from_fn(rows.len(), c, |r, y| d.labels.get(rows[r], y)),
    }
}

/// Fingerprint of a dataset's public shape, mixed into session plans.
pub fn dataset_fingerprint(shape: &DataShape) -> u64 {
    let mut h = Sha256::new();
    h.update(b"grove-data-fp");
    h.update(shape.n.to_le_bytes());
    h.update(shape.f.to_le_bytes());
    h.update(shape.classes.to_le_bytes());
    h.update(shape.scale.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[0..8].try_into().unwrap())
}
