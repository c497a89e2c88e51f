use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use tgnn_core::config::{load_config, RunConfig};
use tgnn_core::data::{
    compute_domain_stats, load_split, stats_csv, write_synthetic_domain, SequenceSample,
    SyntheticDomainSpec,
};
use tgnn_core::eval::{
    best_of_k_eval, emit_report, export_features, run_ablations, run_task_matrix, MatrixReport,
    ReportFormat, TaskReport,
};
use tgnn_core::train::{load_task_data, Checkpoint, TaskSpec, Trainer};

/// Cross-domain pedestrian trajectory prediction.
#[derive(Parser, Debug)]
#[command(name = "tgnn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Config file of `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,

    /// Seed for training and best-of-K sampling
    #[arg(long)]
    seed: Option<u64>,

    /// Maximum number of tasks run at once
    #[arg(long, default_value_t = 1)]
    jobs: usize,

    /// Override one config field, e.g. `--set lambda=0.1`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn required_seed(&self, command: &str) -> Result<u64> {
        self.seed.with_context(|| {
            format!("`{command}` needs --seed so best-of-K sampling is reproducible")
        })
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on one source domain with a target domain's observed trajectories
    Train {
        #[command(flatten)]
        common: Common,
        /// Source domain directory (uses its train split)
        #[arg(long)]
        source: PathBuf,
        /// Target domain directory (uses the observed part of its val split)
        #[arg(long)]
        target: PathBuf,
        /// Output directory for checkpoints and the training log
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Best-of-K evaluation of a checkpoint on a domain's test split
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Domain directory to evaluate on
        #[arg(long)]
        domain: PathBuf,
        /// Report file; `.md` selects markdown, anything else CSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every ordered pair of domains
    Matrix {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Domain directories, labeled A, B, ... in the order given
        #[arg(required = true, num_args = 2..)]
        domains: Vec<PathBuf>,
    },
    /// Sweep lambda, adjacency, alignment, normalization and divisor variants
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true, num_args = 2..)]
        domains: Vec<PathBuf>,
    },
    /// Per-domain crowd and motion statistics as CSV
    Stats {
        #[command(flatten)]
        common: Common,
        /// CSV file; printed to stdout when absent
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        domains: Vec<PathBuf>,
    },
    /// Write a synthetic domain with train/val/test splits
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        scenes: usize,
        #[arg(long, default_value_t = 1)]
        peds_min: usize,
        #[arg(long, default_value_t = 4)]
        peds_max: usize,
        #[arg(long, default_value_t = 24)]
        frames_per_scene: usize,
        /// Mean walking speed, m/s
        #[arg(long, default_value_t = 1.0)]
        speed_mean: f64,
        #[arg(long, default_value_t = 0.2)]
        speed_std: f64,
        /// Heading drift per frame, radians
        #[arg(long, default_value_t = 0.05)]
        heading_noise: f64,
        /// Measurement jitter on recorded positions, meters
        #[arg(long, default_value_t = 0.0)]
        position_noise: f64,
        /// Seconds between frames
        #[arg(long, default_value_t = 0.4)]
        frame_interval: f64,
        /// Half-width of the start area, meters
        #[arg(long, default_value_t = 5.0)]
        extent: f64,
    },
    /// Write encoder feature vectors of a source and target domain as CSV
    ExportFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Split read from both domains
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn format_for(path: &Path) -> ReportFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("md") => ReportFormat::Markdown,
        _ => ReportFormat::Csv,
    }
}

fn domain_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn train(
    common: &Common,
    source: PathBuf,
    target: PathBuf,
    out: PathBuf,
    resume: Option<PathBuf>,
) -> Result<()> {
    let task = TaskSpec {
        source,
        target,
        out_dir: out,
    };
    let ckpt = match resume {
        Some(path) => {
            let mut ckpt = Checkpoint::load(&path)?;
            let mut run = RunConfig {
                train: ckpt.config.clone(),
                ..RunConfig::default()
            };
            run.apply_overrides(&common.overrides)?;
            ckpt.config = run.train;
            let (src, tgt) = load_task_data(&task, &ckpt.config)?;
            info!("resuming {task} from epoch {}", ckpt.epoch);
            Trainer::resume(ckpt, &src, &tgt)?.run(Some(&task.out_dir))?
        }
        None => {
            let cfg = common.run_config()?;
            let (src, tgt) = load_task_data(&task, &cfg.train)?;
            info!(
                "training {task}: {} source samples, {} target samples",
                src.len(),
                tgt.len()
            );
            Trainer::new(cfg.train, &src, &tgt)?.run(Some(&task.out_dir))?
        }
    };
    if let Some(last) = ckpt.history.last() {
        println!(
            "epoch {}: L_pre {:.6} L_align {:.6} L {:.6}",
            last.epoch, last.l_pre, last.l_align, last.l
        );
    }
    Ok(())
}

fn eval(common: &Common, checkpoint: PathBuf, domain: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let seed = common.required_seed("eval")?;
    let run = common.run_config()?;
    let ckpt = Checkpoint::load(&checkpoint)?;
    let cfg = &ckpt.config;
    let test = load_split(&domain, "test", cfg.frame_interval, cfg.window())?;
    let r = best_of_k_eval(&ckpt.params, cfg, &test, run.k, run.selection, seed)?;
    let report = MatrixReport {
        rows: vec![TaskReport {
            source: domain_name(checkpoint.parent().unwrap_or(Path::new("checkpoint"))),
            target: domain_name(&domain),
            ade: r.ade,
            fde: r.fde,
            k: r.k,
            samples: r.samples,
            seed,
            config_hash: cfg.hash(),
            error: None,
        }],
    };
    match out {
        Some(path) => emit_report(&report, format_for(&path), &path)?,
        None => print!("{}", report.to_csv()),
    }
    Ok(())
}

fn stats(common: &Common, out: Option<PathBuf>, domains: &[PathBuf]) -> Result<()> {
    let cfg = common.run_config()?.train;
    let mut rows = Vec::new();
    for dir in domains {
        let mut samples: Vec<SequenceSample> = Vec::new();
        for split in ["train", "val", "test"] {
            samples.extend(load_split(dir, split, cfg.frame_interval, cfg.window())?);
        }
        rows.push((
            domain_name(dir),
            compute_domain_stats(&samples, cfg.frame_interval)?,
        ));
    }
    let csv = stats_csv(&rows)?;
    match out {
        Some(path) => {
            fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train {
            common,
            source,
            target,
            out,
            resume,
        } => train(&common, source, target, out, resume),
        Command::Eval {
            common,
            checkpoint,
            domain,
            out,
        } => eval(&common, checkpoint, domain, out),
        Command::Matrix {
            common,
            out,
            domains,
        } => {
            let seed = common.required_seed("matrix")?;
            let report = run_task_matrix(&domains, &common.run_config()?, seed, &out, common.jobs)?;
            print!("{}", report.to_csv());
            if report.failed() == report.rows.len() {
                bail!("every task failed");
            }
            Ok(())
        }
        Command::Ablate {
            common,
            out,
            domains,
        } => {
            let seed = common.required_seed("ablate")?;
            for sweep in run_ablations(&domains, &common.run_config()?, seed, &out, common.jobs)? {
                println!("# {}", sweep.name);
                print!("{}", sweep.to_csv());
            }
            Ok(())
        }
        Command::Stats {
            common,
            out,
            domains,
        } => stats(&common, out, &domains),
        Command::Synth {
            out,
            seed,
            scenes,
            peds_min,
            peds_max,
            frames_per_scene,
            speed_mean,
            speed_std,
            heading_noise,
            position_noise,
            frame_interval,
            extent,
        } => {
            let spec = SyntheticDomainSpec {
                scenes,
                peds_min,
                peds_max,
                frames_per_scene,
                speed_mean,
                speed_std,
                heading_noise,
                position_noise,
                frame_interval,
                extent,
                seed,
            };
            write_synthetic_domain(&out, &spec)?;
            info!("wrote synthetic domain to {}", out.display());
            Ok(())
        }
        Command::ExportFeatures {
            checkpoint,
            source,
            target,
            split,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = &ckpt.config;
            let load = |dir: &Path| -> Result<Vec<_>> {
                Ok(load_split(dir, &split, cfg.frame_interval, cfg.window())?
                    .iter()
                    .map(SequenceSample::observed)
                    .collect())
            };
            export_features(&ckpt.params, cfg, &load(&source)?, &load(&target)?, &out)?;
            Ok(())
        }
    }
}
