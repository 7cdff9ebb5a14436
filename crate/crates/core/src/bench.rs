//! Cross-validated two-party benchmark runs: sharing, training over
//! loopback or in-process channels, reveal, and held-out evaluation.

use crate::error::{Error, Result};
use crate::ingest::{self, kfold};
use crate::model::RevealedModel;
use crate::oracle::{accuracy, PlainDataset};
use crate::proto::Session;
use crate::sharing::Role;
use crate::ti::{Randomness, SharedDealer};
use crate::train::{
    self, assemble_model, main_phase, train_one_tree, DataShape, SecretModel, SharedDataset,
    TrainConfig,
};
use crate::transport::{inproc_pair, Channel, Handshake, TcpChannel, PROTOCOL_VERSION};
use std::fmt::Write as _;
use std::net::TcpListener;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchTransport {
    InProc,
    TcpLoopback,
}

#[derive(Clone, Debug)]
pub struct FoldReport {
    pub fold: usize,
    pub accuracy: f64,
    pub wall_s: f64,
    pub rounds: u64,
    pub payload_bits: u64,
    pub frame_bytes: u64,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub dataset: String,
    pub config: String,
    pub folds: Vec<FoldReport>,
    pub mean_accuracy: f64,
    pub total_wall_s: f64,
    pub total_rounds: u64,
    pub total_payload_bits: u64,
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "grove-bench v1");
        let _ = writeln!(out, "dataset={}", self.dataset);
        for line in self.config.lines() {
            let _ = writeln!(out, "config.{line}");
        }
        for f in &self.folds {
            let _ = writeln!(
                out,
                "fold {} acc={:.4} time_s={:.3} rounds={} payload_mib={:.3}",
                f.fold,
                f.accuracy,
                f.wall_s,
                f.rounds,
                f.payload_bits as f64 / 8.0 / 1048576.0
            );
        }
        let _ = writeln!(out, "mean_acc={:.4}", self.mean_accuracy);
        let _ = writeln!(out, "total_time_s={:.3}", self.total_wall_s);
        let _ = writeln!(out, "total_rounds={}", self.total_rounds);
        let _ = writeln!(
            out,
            "total_payload_mib={:.3}",
            self.total_payload_bits as f64 / 8.0 / 1048576.0
        );
        out
    }
}

/// Builds a connected channel pair of the requested flavor, with the
/// handshake already verified for TCP.
pub fn channel_pair(
    transport: BenchTransport,
    hs: &Handshake,
) -> Result<(Box<dyn Channel>, Box<dyn Channel>)> {
    match transport {
        BenchTransport::InProc => {
            let (a, b) = inproc_pair();
            Ok((Box::new(a), Box::new(b)))
        }
        BenchTransport::TcpLoopback => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let hs_b = hs.clone();
            let tb = std::thread::spawn(move || -> Result<TcpChannel> {
                let (stream, _) = listener.accept()?;
                TcpChannel::establish_from_stream(stream, Role::B, &hs_b)
            });
            let a = TcpChannel::connect(addr, Role::A, hs)?;
            let b = tb.join().map_err(|_| Error::usage("listener panicked"))??;
            Ok((Box::new(a), Box::new(b)))
        }
    }
}

pub fn handshake_for(cfg: &TrainConfig, shape: &DataShape) -> Handshake {
    Handshake {
        version: PROTOCOL_VERSION,
        lambda: cfg.lambda,
        frac_bits: cfg.frac,
        int_bits: cfg.int,
        plan_fingerprint: cfg.fingerprint(shape),
    }
}

/// Trains this party's model, optionally spreading trees over extra
/// worker channels (tree i runs on worker i mod T; randomness domains
/// make the result identical to the sequential schedule).
pub fn train_party_with_workers(
    chan: &mut dyn Channel,
    rand: &mut dyn Randomness,
    workers: Vec<(Box<dyn Channel>, Box<dyn Randomness>)>,
    data: &SharedDataset,
    cfg: &TrainConfig,
    shape: &DataShape,
) -> Result<SecretModel> {
    cfg.validate(shape)?;
    let mut sess = Session::new(chan, rand);
    let main = main_phase(&mut sess, data, cfg, shape)?;
    let m = cfg.tree_count();
    let t_workers = 1 + workers.len();
    let mut trees: Vec<Option<train::SecretTree>> = vec![None; m];
    if workers.is_empty() {
        for (i, slot) in trees.iter_mut().enumerate() {
            *slot = Some(train_one_tree(&mut sess, data, &main, cfg, shape, i as u32)?);
        }
    } else {
        let mut handles = Vec::new();
        for (w, (mut wchan, mut wrand)) in workers.into_iter().enumerate() {
            let worker_id = w + 1;
            let data = data.clone();
            let cfg = cfg.clone();
            let shape = *shape;
            let main = main.clone();
            handles.push(std::thread::spawn(move || -> Result<Vec<(usize, train::SecretTree)>> {
                let mut out = Vec::new();
                let mut sess = Session::new(wchan.as_mut(), wrand.as_mut());
                let mut i = worker_id;
                while i < m {
                    out.push((i, train_one_tree(&mut sess, &data, &main, &cfg, &shape, i as u32)?));
                    i += t_workers;
                }
                Ok(out)
            }));
        }
        let mut i = 0;
        while i < m {
            trees[i] = Some(train_one_tree(&mut sess, data, &main, cfg, shape, i as u32)?);
            i += t_workers;
        }
        for h in handles {
            for (i, t) in h.join().map_err(|_| Error::usage("tree worker panicked"))?? {
                trees[i] = Some(t);
            }
        }
    }
    let trees = trees.into_iter().map(|t| t.unwrap()).collect();
    assemble_model(cfg, shape, &main, trees)
}

pub struct FoldOutcome {
    pub model: RevealedModel,
    pub rounds: u64,
    pub payload_bits: u64,
    pub frame_bytes: u64,
}

/// Runs one full two-party training on split shares and reveals the model.
/// Returns party A's channel metrics (the parties' counters are symmetric
/// in rounds and near-symmetric in bits).
pub fn run_two_party_training(
    transport: BenchTransport,
    dealer: &SharedDealer,
    data_a: SharedDataset,
    data_b: SharedDataset,
    cfg: &TrainConfig,
    shape: &DataShape,
    parallel_trees: usize,
) -> Result<FoldOutcome> {
    let hs = handshake_for(cfg, shape);
    let (mut ca, mut cb) = channel_pair(transport, &hs)?;
    let extra = parallel_trees.saturating_sub(1).min(cfg.tree_count().saturating_sub(1));
    let mut workers_a = Vec::new();
    let mut workers_b = Vec::new();
    for _ in 0..extra {
        let (wa, wb) = channel_pair(transport, &hs)?;
        workers_a.push((wa, Box::new(dealer.handle(Role::A)) as Box<dyn Randomness>));
        workers_b.push((wb, Box::new(dealer.handle(Role::B)) as Box<dyn Randomness>));
    }
    let cfg_b = cfg.clone();
    let shape_b = *shape;
    let dealer_b = dealer.clone();
    let tb = std::thread::spawn(move || -> Result<RevealedModel> {
        let mut rand_b = dealer_b.handle(Role::B);
        let secret = train_party_with_workers(
            cb.as_mut(),
            &mut rand_b,
            workers_b,
            &data_b,
            &cfg_b,
            &shape_b,
        )?;
        let mut sess = Session::new(cb.as_mut(), &mut rand_b);
        train::reveal_model(&mut sess, &secret)
    });
    let mut rand_a = dealer.handle(Role::A);
    let secret = train_party_with_workers(
        ca.as_mut(),
        &mut rand_a,
        workers_a,
        &data_a,
        cfg,
        shape,
    )?;
    let mut sess = Session::new(ca.as_mut(), &mut rand_a);
    let model_a = train::reveal_model(&mut sess, &secret)?;
    let model_b = tb.join().map_err(|_| Error::usage("party B panicked"))??;
    if model_a != model_b {
        return Err(Error::model("parties revealed different models"));
    }
    let m = ca.metrics();
    Ok(FoldOutcome {
        model: model_a,
        rounds: m.rounds,
        payload_bits: m.payload_bits,
        frame_bytes: m.frame_bytes,
    })
}

/// ti-gen: derives the exact per-domain randomness a session will consume
/// by dry-running the protocols on zero-valued dummy shares over an
/// in-process pair (message traces depend only on public shapes), then
/// writes one tape file per party.
pub fn generate_tapes(
    cfg: &TrainConfig,
    shape: &DataShape,
    path_a: &std::path::Path,
    path_b: &std::path::Path,
) -> Result<()> {
    cfg.validate(shape)?;
    let codec = cfg.codec()?;
    let zero = SharedDataset {
        features: crate::ring::Mat::zeros(codec.ring(), shape.n, shape.f),
        labels: crate::bits::BitMat::zeros(shape.n, shape.classes),
    };
    let dealer = SharedDealer::new_recording(cfg.seed);
    run_two_party_training(
        BenchTransport::InProc,
        &dealer,
        zero.clone(),
        zero,
        cfg,
        shape,
        1,
    )?;
    dealer.write_tapes(cfg.lambda, path_a, path_b)
}

/// 5-fold (or k-fold) cross-validated benchmark: per fold, share the
/// training rows, train both parties, reveal, and score the held-out rows
/// in the clear.
pub fn bench(
    data: &PlainDataset,
    dataset_name: &str,
    cfg: &TrainConfig,
    scale: f64,
    folds: usize,
    transport: BenchTransport,
    parallel_trees: usize,
) -> Result<RunReport> {
    data.check()?;
    let codec = cfg.codec()?;
    let fold_sets = kfold(data.n(), folds, cfg.seed)?;
    let mut reports = Vec::new();
    let total_start = Instant::now();
    for (fi, holdout) in fold_sets.iter().enumerate() {
        let train_rows: Vec<usize> = (0..data.n())
            .filter(|i| !holdout.contains(i))
            .collect();
        let sub = PlainDataset {
            x: train_rows.iter().map(|&i| data.x[i].clone()).collect(),
            y: train_rows.iter().map(|&i| data.y[i]).collect(),
            classes: data.classes,
        };
        let (da, db, shape) =
            ingest::share_dataset(&sub, &codec, scale, cfg.seed.wrapping_add(fi as u64))?;
        let dealer = SharedDealer::new(cfg.seed.wrapping_mul(1000).wrapping_add(fi as u64));
        let start = Instant::now();
        let out = run_two_party_training(transport, &dealer, da, db, cfg, &shape, parallel_trees)?;
        let wall = start.elapsed().as_secs_f64();
        let test_x: Vec<Vec<f64>> = holdout.iter().map(|&i| data.x[i].clone()).collect();
        let test_y: Vec<usize> = holdout.iter().map(|&i| data.y[i]).collect();
        let acc = accuracy(&out.model, &test_x, &test_y)?;
        reports.push(FoldReport {
            fold: fi,
            accuracy: acc,
            wall_s: wall,
            rounds: out.rounds,
            payload_bits: out.payload_bits,
            frame_bytes: out.frame_bytes,
        });
    }
    let mean_accuracy = reports.iter().map(|r| r.accuracy).sum::<f64>() / reports.len() as f64;
    Ok(RunReport {
        dataset: dataset_name.to_string(),
        config: cfg.to_text(),
        mean_accuracy,
        total_wall_s: total_start.elapsed().as_secs_f64(),
        total_rounds: reports.iter().map(|r| r.rounds).sum(),
        total_payload_bits: reports.iter().map(|r| r.payload_bits).sum(),
        folds: reports,
    })
}
