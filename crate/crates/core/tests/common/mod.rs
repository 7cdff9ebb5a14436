//! Shared harness for the integration and acceptance suites: runs both
//! parties in-process or over loopback TCP and exposes the dealer's
//! plaintext selection draws for oracle injection.

#![allow(dead_code)]

use grove_core::bench::{run_two_party_training, BenchTransport};
use grove_core::fixed::Codec;
use grove_core::ingest::share_dataset;
use grove_core::model::RevealedModel;
use grove_core::oracle::{encode_column, fixedpoint_thresholds, OracleConfig, PlainDataset};
use grove_core::ti::{SelectionLog, SharedDealer};
use grove_core::train::TrainConfig;
use grove_core::Ring;

pub fn oracle_cfg(cfg: &TrainConfig, scale: f64) -> OracleConfig {
    OracleConfig {
        p: cfg.p_effective(),
        depth: cfg.depth,
        eps_num: cfg.eps_num,
        eps_den: cfg.eps_den,
        codec: Codec::new(cfg.lambda, cfg.frac, cfg.int).unwrap(),
        scale,
    }
}

pub fn scaled(data: &PlainDataset, scale: f64) -> PlainDataset {
    PlainDataset {
        x: data
            .x
            .iter()
            .map(|r| r.iter().map(|v| v * scale).collect())
            .collect(),
        y: data.y.clone(),
        classes: data.classes,
    }
}

pub fn run_mpc(
    data: &PlainDataset,
    cfg: &TrainConfig,
    scale: f64,
    transport: BenchTransport,
) -> (RevealedModel, SelectionLog) {
    let codec = Codec::new(cfg.lambda, cfg.frac, cfg.int).unwrap();
    let (da, db, shape) = share_dataset(data, &codec, scale, cfg.seed ^ 0xd47a).unwrap();
    let dealer = SharedDealer::new(cfg.seed);
    let out = run_two_party_training(transport, &dealer, da, db, cfg, &shape, 1).unwrap();
    (out.model, dealer.selection_log())
}

pub fn enc_all_cols(data: &PlainDataset, codec: &Codec, scale: f64) -> Vec<Vec<u128>> {
    (0..data.f())
        .map(|j| {
            let col: Vec<f64> = (0..data.n()).map(|i| data.x[i][j] * scale).collect();
            encode_column(&col, codec).unwrap()
        })
        .collect()
}

/// Minimum signed distance (in ring LSBs) from any encoded data value to
/// any encoded cut; below ~3 the ±1 truncation jitter could flip a bin.
pub fn min_cut_distance(enc_cols: &[Vec<u128>], cuts: &[(usize, u128)], ring: Ring) -> i128 {
    let mut best = i128::MAX;
    for &(col, cut) in cuts {
        for &v in &enc_cols[col] {
            let d = (ring.signed(v) - ring.signed(cut)).abs();
            best = best.min(d);
        }
    }
    best
}

pub fn disc_cuts(enc_cols: &[Vec<u128>], p: usize, codec: &Codec) -> Vec<(usize, u128)> {
    let mut out = Vec::new();
    for (j, col) in enc_cols.iter().enumerate() {
        for h in fixedpoint_thresholds(col, p, codec) {
            out.push((j, h));
        }
    }
    out
}

pub fn xt_cuts(
    enc_cols: &[Vec<u128>],
    feats: &[Vec<usize>],
    ratios: &[Vec<u128>],
    codec: &Codec,
) -> Vec<(usize, u128)> {
    let ring = codec.ring();
    let mut out = Vec::new();
    for (tf, tr) in feats.iter().zip(ratios) {
        for (&j, &r) in tf.iter().zip(tr) {
            let lo = *enc_cols[j].iter().min_by_key(|&&v| ring.signed(v)).unwrap();
            let hi = *enc_cols[j].iter().max_by_key(|&&v| ring.signed(v)).unwrap();
            out.push((j, ring.add(r.wrapping_mul(ring.sub(hi, lo)) >> codec.frac_bits(), lo)));
        }
    }
    out
}
