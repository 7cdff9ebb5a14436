//! grove: two-party secure training of tree ensembles over secret shares.
//!
//! Verbs: ti-gen | share-data | train | reveal | evaluate | bench.
//! Log level via GROVE_LOG (error|warn|info|debug).
//! Exit codes: 0 ok, 2 config/handshake mismatch, 3 transport failure,
//! 4 correlated randomness exhausted or desynchronized, 1 other errors.

use clap::{Parser, Subcommand};
use grove_core::bench::{self, BenchTransport};
use grove_core::ingest;
use grove_core::model::RevealedModel;
use grove_core::oracle::accuracy;
use grove_core::proto::Session;
use grove_core::sharing::Role;
use grove_core::ti::{Domain, Randomness, TapeReader};
use grove_core::train::{self, reveal_from_shares, DataShape, SecretModel, TrainConfig};
use grove_core::transport::{tcp_connect_channels, tcp_serve_channels, Channel};
use grove_core::{Codec, Error};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "grove",
    version,
    about = "secure two-party training of decision trees, random forests, and extra-trees over secret-shared data"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the trusted initializer's correlated-randomness tapes.
    #[command(name = "ti-gen")]
    TiGen {
        /// Seed for all correlated randomness.
        #[arg(long)]
        seed: u64,
        /// Session plan: a config file extended with n=, f=, classes= (and
        /// optionally scale=) describing the shared dataset shape.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long = "out-a")]
        out_a: PathBuf,
        #[arg(long = "out-b")]
        out_b: PathBuf,
    },
    /// Scale, encode, and secret-share a CSV into per-party share files.
    #[command(name = "share-data")]
    ShareData {
        #[arg(long = "in")]
        input: PathBuf,
        /// Fixed-point codec as lambda:a:b.
        #[arg(long, default_value = "64:10:22")]
        codec: String,
        /// Multiplier applied before encoding.
        #[arg(long, default_value_t = 1000.0)]
        scale: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long = "out-a")]
        out_a: PathBuf,
        #[arg(long = "out-b")]
        out_b: PathBuf,
        /// Drop features with at least this fraction of zero values.
        #[arg(long = "drop-sparse")]
        drop_sparse: Option<f64>,
        /// Number of cross-validation folds recorded in the share files.
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Run one computing party of a training session.
    Train {
        /// a or b.
        #[arg(long)]
        role: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        shares: PathBuf,
        /// Correlated-randomness tape from ti-gen.
        #[arg(long)]
        tape: PathBuf,
        /// Listen for the peer on host:port.
        #[arg(long)]
        listen: Option<String>,
        /// Connect to the peer at host:port.
        #[arg(long)]
        connect: Option<String>,
        /// Hold out this fold (trains on the rest).
        #[arg(long)]
        fold: Option<usize>,
        /// Open this many channels and train trees in parallel.
        #[arg(long = "parallel-trees", default_value_t = 1)]
        parallel_trees: usize,
        /// Output path for this party's model shares.
        #[arg(long)]
        out: PathBuf,
        /// Also run the reveal protocol with the peer.
        #[arg(long)]
        reveal: bool,
        /// Where to write the revealed model (with --reveal).
        #[arg(long = "model-out")]
        model_out: Option<PathBuf>,
    },
    /// Combine both parties' model-share files into a plaintext model.
    Reveal {
        #[arg(long = "in-a")]
        in_a: PathBuf,
        #[arg(long = "in-b")]
        in_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a revealed model against a CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Restrict scoring to one held-out fold (needs --folds/--seed to
        /// match the sharing step).
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long = "drop-sparse")]
        drop_sparse: Option<f64>,
    },
    /// Cross-validated single-host benchmark over loopback TCP.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 1000.0)]
        scale: f64,
        #[arg(long = "drop-sparse")]
        drop_sparse: Option<f64>,
        /// tcp (loopback sockets) or inproc.
        #[arg(long, default_value = "tcp")]
        transport: String,
        #[arg(long = "parallel-trees", default_value_t = 1)]
        parallel_trees: usize,
        /// Dataset name echoed into the report.
        #[arg(long)]
        name: Option<String>,
        /// Also write the report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GROVE_LOG", "warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) | Some(Error::Handshake { .. }) => 2,
        Some(Error::Transport(_)) | Some(Error::Timeout) => 3,
        Some(Error::Randomness(_)) => 4,
        _ => 1,
    }
}

fn parse_codec(s: &str) -> anyhow::Result<Codec> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::config("codec must be lambda:a:b").into());
    }
    Ok(Codec::new(
        parts[0].parse().map_err(|_| Error::config("bad lambda"))?,
        parts[1].parse().map_err(|_| Error::config("bad a"))?,
        parts[2].parse().map_err(|_| Error::config("bad b"))?,
    )?)
}

/// Plan files are config files with extra n=, f=, classes=, scale= keys.
fn parse_plan(path: &Path) -> anyhow::Result<(TrainConfig, DataShape)> {
    let text = std::fs::read_to_string(path)?;
    let cfg = TrainConfig::parse(&text)?;
    let mut n = None;
    let mut f = None;
    let mut classes = None;
    let mut scale = 1000.0f64;
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            let v = v.trim();
            match k.trim() {
                "n" => n = Some(v.parse::<usize>().map_err(|_| Error::config("bad n"))?),
                "f" => f = Some(v.parse::<usize>().map_err(|_| Error::config("bad f"))?),
                "classes" => {
                    classes = Some(v.parse::<usize>().map_err(|_| Error::config("bad classes"))?)
                }
                "scale" => scale = v.parse::<f64>().map_err(|_| Error::config("bad scale"))?,
                _ => {}
            }
        }
    }
    let shape = DataShape {
        n: n.ok_or_else(|| Error::config("plan missing n"))?,
        f: f.ok_or_else(|| Error::config("plan missing f"))?,
        classes: classes.ok_or_else(|| Error::config("plan missing classes"))?,
        scale,
    };
    Ok((cfg, shape))
}

fn load_data(
    path: &Path,
    drop_sparse: Option<f64>,
) -> anyhow::Result<grove_core::oracle::PlainDataset> {
    let mut data = ingest::read_csv(path)?;
    if let Some(th) = drop_sparse {
        let before = data.f();
        let kept = ingest::drop_sparse(&mut data, th);
        log::info!("drop-sparse kept {} of {} features", kept.len(), before);
    }
    Ok(data)
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::TiGen {
            seed,
            plan,
            out_a,
            out_b,
        } => {
            let (mut cfg, shape) = parse_plan(&plan)?;
            cfg.seed = seed;
            bench::generate_tapes(&cfg, &shape, &out_a, &out_b)?;
            println!(
                "tapes written: {} {} (plan fingerprint {:016x})",
                out_a.display(),
                out_b.display(),
                cfg.fingerprint(&shape)
            );
            Ok(())
        }
        Cmd::ShareData {
            input,
            codec,
            scale,
            seed,
            out_a,
            out_b,
            drop_sparse,
            folds,
        } => {
            let codec = parse_codec(&codec)?;
            let data = load_data(&input, drop_sparse)?;
            let shape =
                ingest::write_share_files(&data, &codec, scale, seed, folds, &out_a, &out_b)?;
            println!(
                "shared {}x{} ({} classes) into {} and {}",
                shape.n,
                shape.f,
                shape.classes,
                out_a.display(),
                out_b.display()
            );
            Ok(())
        }
        Cmd::Train {
            role,
            config,
            shares,
            tape,
            listen,
            connect,
            fold,
            parallel_trees,
            out,
            reveal,
            model_out,
        } => {
            let role = match role.as_str() {
                "a" | "A" => Role::A,
                "b" | "B" => Role::B,
                other => {
                    return Err(Error::usage(format!("role must be a or b, got {other}")).into())
                }
            };
            let cfg = TrainConfig::parse(&std::fs::read_to_string(&config)?)?;
            let file = ingest::read_share_file(&shares, role)?;
            let (data, shape) = match fold {
                Some(holdout) => {
                    let rows = ingest::training_rows(&file.folds, holdout);
                    let d = ingest::select_rows(&file.data, &rows);
                    (
                        d,
                        DataShape {
                            n: rows.len(),
                            ..file.shape
                        },
                    )
                }
                None => (file.data, file.shape),
            };
            cfg.validate(&shape)?;
            let hs = bench::handshake_for(&cfg, &shape);
            let nchan = parallel_trees.max(1).min(cfg.tree_count().max(1));
            let mut chans: Vec<_> = match (&listen, &connect) {
                (Some(addr), None) => tcp_serve_channels(addr.as_str(), role, &hs, nchan)?,
                (None, Some(addr)) => tcp_connect_channels(addr.as_str(), role, &hs, nchan)?,
                _ => {
                    return Err(
                        Error::usage("exactly one of --listen/--connect is required").into(),
                    )
                }
            };
            let mut tape_main = TapeReader::open(&tape, role)?;
            let m = cfg.tree_count();
            let workers: Vec<(Box<dyn Channel>, Box<dyn Randomness>)> = chans
                .drain(1..)
                .enumerate()
                .map(|(w, ch)| {
                    let worker_id = w + 1;
                    let domains: Vec<Domain> = (0..m)
                        .filter(|i| i % nchan == worker_id)
                        .map(|i| Domain::Tree(i as u32))
                        .collect();
                    let reader = tape_main.take_domains(&domains);
                    (
                        Box::new(ch) as Box<dyn Channel>,
                        Box::new(reader) as Box<dyn Randomness>,
                    )
                })
                .collect();
            let mut chan0 = chans.into_iter().next().unwrap();
            let secret = bench::train_party_with_workers(
                &mut chan0,
                &mut tape_main,
                workers,
                &data,
                &cfg,
                &shape,
            )?;
            secret.write_file(&out, role)?;
            println!("model shares written to {}", out.display());
            if reveal {
                let mut sess = Session::new(&mut chan0, &mut tape_main);
                let revealed = train::reveal_model(&mut sess, &secret)?;
                let path = model_out.ok_or_else(|| Error::usage("--reveal needs --model-out"))?;
                revealed.write_file(&path)?;
                println!("revealed model written to {}", path.display());
            }
            let metrics = chan0.metrics();
            println!(
                "rounds={} payload_mib={:.3}",
                metrics.rounds,
                metrics.payload_bits as f64 / 8.0 / 1048576.0
            );
            Ok(())
        }
        Cmd::Reveal { in_a, in_b, out } => {
            let (ma, ra) = SecretModel::read_file(&in_a)?;
            let (mb, rb) = SecretModel::read_file(&in_b)?;
            if ra != Role::A || rb != Role::B {
                return Err(Error::usage("reveal needs one A file and one B file").into());
            }
            let revealed = reveal_from_shares(&ma, &mb)?;
            revealed.write_file(&out)?;
            println!("revealed model written to {}", out.display());
            Ok(())
        }
        Cmd::Evaluate {
            model,
            data,
            fold,
            folds,
            seed,
            drop_sparse,
        } => {
            let model = RevealedModel::read_file(&model)?;
            let dataset = load_data(&data, drop_sparse)?;
            let (x, y): (Vec<Vec<f64>>, Vec<usize>) = match fold {
                Some(holdout) => {
                    let sets = ingest::kfold(dataset.n(), folds, seed)?;
                    let rows = sets
                        .get(holdout)
                        .ok_or_else(|| Error::usage("fold out of range"))?;
                    (
                        rows.iter().map(|&i| dataset.x[i].clone()).collect(),
                        rows.iter().map(|&i| dataset.y[i]).collect(),
                    )
                }
                None => (dataset.x.clone(), dataset.y.clone()),
            };
            let acc = accuracy(&model, &x, &y)?;
            println!("instances={} accuracy={:.4}", x.len(), acc);
            Ok(())
        }
        Cmd::Bench {
            data,
            config,
            folds,
            scale,
            drop_sparse,
            transport,
            parallel_trees,
            name,
            report,
        } => {
            let cfg = TrainConfig::parse(&std::fs::read_to_string(&config)?)?;
            let dataset = load_data(&data, drop_sparse)?;
            let transport = match transport.as_str() {
                "tcp" => BenchTransport::TcpLoopback,
                "inproc" => BenchTransport::InProc,
                other => {
                    return Err(Error::usage(format!(
                        "transport must be tcp or inproc, got {other}"
                    ))
                    .into())
                }
            };
            let dataset_name = name.unwrap_or_else(|| {
                data.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "dataset".into())
            });
            let rep = bench::bench(
                &dataset,
                &dataset_name,
                &cfg,
                scale,
                folds,
                transport,
                parallel_trees,
            )?;
            let text = rep.to_text();
            print!("{text}");
            if let Some(path) = report {
                std::fs::write(path, text)?;
            }
            Ok(())
        }
    }
}
