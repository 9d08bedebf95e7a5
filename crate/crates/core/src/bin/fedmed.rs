use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedmed::cli::{self, EvalModel, ExperimentConfig, Overrides, Variant};
use fedmed::mud::NoiseKind;

#[derive(Parser)]
#[command(name = "fedmed", version, about = "Federated cross-modality MRI synthesis on misaligned data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: $FEDMED_OUT, then ./fedmed-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// baseline, atl, ar-only, at-only, as-only or reggan.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Views per transform kind: 1, 2 or 4.
    #[arg(long, global = true)]
    views: Option<usize>,
    /// none, slight or severe.
    #[arg(long, global = true)]
    noise: Option<NoiseKind>,
    /// 256x256 inputs and the larger networks.
    #[arg(long, global = true)]
    paper_scale: bool,
    #[arg(long, global = true, overrides_with = "no_dp")]
    dp: bool,
    #[arg(long, global = true, overrides_with = "dp")]
    no_dp: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-modality corpus.
    Phantom,
    /// Split the corpus into hospitals and misalign their samples.
    Prepare,
    /// Federated training on the prepared scenario.
    Train,
    /// Score a checkpoint (or a reference model) on the held-out test set.
    Eval {
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        /// identity or remap instead of a checkpoint.
        #[arg(long, value_parser = ["identity", "remap"])]
        baseline: Option<String>,
    },
    /// Input / generated / target image grid.
    Montage {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 4)]
        samples: usize,
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Variant x views x noise grid.
    Ablate,
}

fn run(args: Cli) -> fedmed::Result<()> {
    let c = args.common;
    let base = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let dp = match (c.dp, c.no_dp) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    };
    let overrides =
        Overrides { seed: c.seed, out: c.out, variant: c.variant, views: c.views, noise: c.noise, paper_scale: c.paper_scale, dp };
    let cfg = base.resolve(&overrides)?;
    match args.command {
        Command::Phantom => println!("{}", cli::cmd_phantom(&cfg)?.display()),
        Command::Prepare => println!("{}", cli::cmd_prepare(&cfg)?.display()),
        Command::Train => {
            let m = cli::cmd_train(&cfg)?;
            if let Some(p) = m.metrics_csv {
                println!("{}", p.display());
            }
        }
        Command::Eval { checkpoint, baseline } => {
            let model = match (checkpoint, baseline.as_deref()) {
                (_, Some("identity")) => EvalModel::Identity,
                (_, Some(_)) => EvalModel::GroundTruthRemap,
                (Some(p), None) => EvalModel::Checkpoint(p),
                (None, None) => unreachable!("clap requires one of them"),
            };
            let (r, path) = cli::cmd_eval(&cfg, &model)?;
            println!("mae {:.4} psnr {:.4} ssim {:.4} ({} images) -> {}", r.mae, r.psnr, r.ssim, r.n_images, path.display());
        }
        Command::Montage { checkpoint, samples, png } => {
            println!("{}", cli::cmd_montage(&cfg, &checkpoint, samples, png.as_deref())?.display())
        }
        Command::Ablate => {
            let (cells, path) = cli::cmd_ablate(&cfg)?;
            let failed = cells.iter().filter(|c| c.result.is_err()).count();
            println!("{} cells, {failed} failed -> {}", cells.len(), path.display());
            if failed > 0 {
                return Err(fedmed::Error::InvalidState(format!("{failed} ablation cells failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
