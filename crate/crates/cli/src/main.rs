use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use cam_forge::cam::FusionMode;
use cam_forge::metrics::MetricOptions;
use cam_forge::pipeline::{self, PipelineError, RunConfig, Variant};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

/// Ensemble CAM fusion, refiner training and pseudo-mask evaluation.
///
/// Exit codes: 0 ok, 2 usage, 3 config, 4 i/o, 5 missing input,
/// 6 malformed file, 7 invalid data, 8 model/training, 9 output locked.
#[derive(Debug, Parser)]
#[command(name = "cam-forge", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed for the corpus and the refiner.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Corpus directory [default: <out>/corpus].
    #[arg(long, value_name = "DIR")]
    corpus_dir: Option<PathBuf>,
    /// Refiner checkpoint [default: <out>/checkpoint.npz].
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Score a CAM must exceed to beat background.
    #[arg(long)]
    bg_threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    /// Number of OR/AND training pairs.
    #[arg(long)]
    train_pairs: Option<usize>,
    /// Fusion fed to the refiner (or, and, avg).
    #[arg(long)]
    refiner_input: Option<FusionMode>,
    /// Fusion the refiner learns (or, and, avg).
    #[arg(long)]
    refiner_target: Option<FusionMode>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        num_images: Option<usize>,
        /// Images kept out of training and used for scoring.
        #[arg(long)]
        held_out: Option<usize>,
    },
    /// Write OR, AND and AVG fusions of the corpus CAMs.
    Fuse {
        #[command(flatten)]
        common: Common,
    },
    /// Train the refiner.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Run the refiner over every image.
    Infer {
        #[command(flatten)]
        common: Common,
    },
    /// Write per-epoch downsampled curriculum datasets.
    Schedule {
        #[command(flatten)]
        common: Common,
        /// Variant supplying the pseudo-masks (cam_a, cam_b, or, and, avg, orandnet).
        #[arg(long)]
        source: Option<Variant>,
    },
    /// Score all variants, or a directory of predicted masks against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Predicted label PNGs; requires --gt-dir.
        #[arg(long, value_name = "DIR", requires = "gt_dir")]
        pred_dir: Option<PathBuf>,
        /// Ground-truth label PNGs; requires --pred-dir.
        #[arg(long, value_name = "DIR", requires = "pred_dir")]
        gt_dir: Option<PathBuf>,
        /// Classes including background [default: largest label + 1].
        #[arg(long)]
        num_classes: Option<usize>,
        /// Leave background out of the precision and recall means.
        #[arg(long)]
        no_background_pr: bool,
    },
    /// synth, fuse, train, infer and eval in one go.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        num_images: Option<usize>,
        #[arg(long)]
        held_out: Option<usize>,
        #[command(flatten)]
        train: TrainFlags,
    },
}

fn load(common: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_json_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.paths.out_dir = out.clone();
    }
    if let Some(dir) = &common.corpus_dir {
        cfg.paths.corpus_dir = Some(dir.clone());
    }
    if let Some(ckpt) = &common.checkpoint {
        cfg.paths.checkpoint = Some(ckpt.clone());
    }
    if let Some(t) = common.bg_threshold {
        cfg.bg_threshold = t;
    }
    Ok(cfg)
}

fn apply_corpus(cfg: &mut RunConfig, num_images: Option<usize>, held_out: Option<usize>) {
    if let Some(n) = num_images {
        cfg.corpus.num_images = n;
    }
    if let Some(h) = held_out {
        cfg.held_out = h;
    }
}

fn apply_train(cfg: &mut RunConfig, t: &TrainFlags) {
    if let Some(e) = t.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = t.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = t.lr0 {
        cfg.train.lr0 = lr;
    }
    if let Some(p) = t.train_pairs {
        cfg.train_pairs = p;
    }
    if let Some(m) = t.refiner_input {
        cfg.refiner_input = m;
    }
    if let Some(m) = t.refiner_target {
        cfg.refiner_target = m;
    }
}

fn run(cli: Cli) -> Result<serde_json::Value, PipelineError> {
    Ok(match cli.command {
        Command::Synth {
            common,
            num_images,
            held_out,
        } => {
            let mut cfg = load(&common)?;
            apply_corpus(&mut cfg, num_images, held_out);
            let index = pipeline::cmd_synth(&cfg)?;
            json!({"command": "synth", "images": index.images.len(), "corpus_dir": cfg.corpus_dir()})
        }
        Command::Fuse { common } => {
            let cfg = load(&common)?;
            pipeline::cmd_fuse(&cfg)?;
            json!({"command": "fuse", "out": cfg.out_dir().join("fused")})
        }
        Command::Train { common, train } => {
            let mut cfg = load(&common)?;
            apply_train(&mut cfg, &train);
            let record = pipeline::cmd_train(&cfg)?;
            let losses: Vec<f64> = record.epochs.iter().map(|e| e.mean_loss).collect();
            json!({
                "command": "train",
                "pairs": record.pairs.len(),
                "first_loss": losses.first(),
                "final_loss": losses.last(),
                "checkpoint": cfg.checkpoint_path(),
            })
        }
        Command::Infer { common } => {
            let cfg = load(&common)?;
            pipeline::cmd_infer(&cfg)?;
            json!({"command": "infer", "out": cfg.out_dir().join("refined")})
        }
        Command::Schedule { common, source } => {
            let mut cfg = load(&common)?;
            if let Some(s) = source {
                cfg.schedule_source = s;
            }
            let manifest = pipeline::cmd_schedule(&cfg)?;
            json!({"command": "schedule", "epochs": manifest.epochs.len(), "images": manifest.images.len()})
        }
        Command::Eval {
            common,
            pred_dir,
            gt_dir,
            num_classes,
            no_background_pr,
        } => {
            let mut cfg = load(&common)?;
            if no_background_pr {
                cfg.metrics.background_in_precision_recall = false;
            }
            match (pred_dir, gt_dir) {
                (Some(pred), Some(gt)) => {
                    let opts = MetricOptions {
                        background_in_precision_recall: cfg.metrics.background_in_precision_recall,
                    };
                    let report = pipeline::eval_mask_dirs(&pred, &gt, num_classes, opts)?;
                    let value = serde_json::to_value(&report).expect("report serializes");
                    if common.out.is_some() {
                        pipeline::write_mask_report(cfg.out_dir(), &report)?;
                    }
                    value
                }
                _ => {
                    let report = pipeline::cmd_eval(&cfg)?;
                    let summary: serde_json::Map<String, serde_json::Value> = report
                        .variants
                        .iter()
                        .map(|(v, m)| {
                            (
                                v.name().to_string(),
                                json!({"miou": m.miou, "precision": m.mean_precision, "recall": m.mean_recall}),
                            )
                        })
                        .collect();
                    json!({"command": "eval", "report": cfg.out_dir().join("report.json"), "variants": summary})
                }
            }
        }
        Command::Run {
            common,
            num_images,
            held_out,
            train,
        } => {
            let mut cfg = load(&common)?;
            apply_corpus(&mut cfg, num_images, held_out);
            apply_train(&mut cfg, &train);
            let report = pipeline::cmd_run(&cfg)?;
            json!({
                "command": "run",
                "report": cfg.out_dir().join("report.json"),
                "miou": report
                    .variants
                    .iter()
                    .map(|(v, m)| (v.name().to_string(), json!(m.miou)))
                    .collect::<serde_json::Map<_, _>>(),
            })
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            // A closed stdout (e.g. piped into `head`) is not a failure.
            let _ = writeln!(std::io::stdout(), "{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string(), "exit_code": code}));
            ExitCode::from(code as u8)
        }
    }
}
