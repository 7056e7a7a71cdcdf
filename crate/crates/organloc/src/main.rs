use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use organloc::config::{HeatmapSource, PredictorKind};
use organloc::pipeline::{self, RunPaths};
use organloc::{PipelineConfig, Result};

/// Two-stage organ localization and segmentation on 3D volumes.
#[derive(Parser)]
#[command(name = "organloc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the configuration file.
#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration JSON; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Heatmap threshold for the centroid region.
    #[arg(long)]
    tau: Option<f64>,
    /// Extra voxels added on each side of localization boxes.
    #[arg(long)]
    margin_v: Option<usize>,
    /// Variance of the Gaussian heatmaps, mm^2.
    #[arg(long)]
    sigma_sq: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg: PipelineConfig = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.tau {
            cfg.localization.tau = v;
        }
        if let Some(v) = self.margin_v {
            cfg.localization.margin_v = v;
        }
        if let Some(v) = self.sigma_sq {
            cfg.localization.sigma_sq = v;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom corpus with its manifest.
    Phantom {
        #[command(flatten)]
        common: Common,
    },
    /// Per-organ mean box sizes over the training split.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train the heatmap regression network.
    TrainLocalizer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train the segmenter of one organ on its region of interest.
    TrainSegmenter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        organ: u16,
        /// Precomputed organ statistics (otherwise derived from the training split).
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Localize, segment, aggregate and score the test split.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Directory with localizer.ckpt and segmenter_<id>.ckpt.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Use heatmaps built from the true centroids instead of the localizer.
        #[arg(long)]
        truth_heatmaps: bool,
        /// Use the intensity-band reference predictor instead of trained segmenters.
        #[arg(long)]
        oracle: bool,
        /// Reuse the localization results of an earlier run directory.
        #[arg(long)]
        resume_localization: Option<PathBuf>,
    },
    /// Score the label maps of an earlier run.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory of the run to score.
        #[arg(long)]
        predictions: PathBuf,
    },
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Phantom { common } => {
            let m = pipeline::cmd_phantom(&common.load()?, &common.out)?;
            println!("wrote {} volumes to {}", m.members.len(), common.out.display());
        }
        Command::Stats { common, corpus } => {
            let stats = pipeline::cmd_stats(&common.load()?, &corpus, &common.out)?;
            for (id, s) in &stats.organs {
                println!("organ {id}: mean box {:?} mm over {} volumes", s.mean_size_mm, s.count);
            }
        }
        Command::TrainLocalizer { common, corpus } => {
            let s = pipeline::cmd_train_localizer(&common.load()?, &corpus, &common.out)?;
            println!("localizer: {} steps, loss {:.6} -> {:.6}", s.steps, s.initial_loss, s.final_loss);
        }
        Command::TrainSegmenter { common, corpus, organ, stats } => {
            let s = pipeline::cmd_train_segmenter(&common.load()?, &corpus, organ, stats.as_deref(), &common.out)?;
            println!("segmenter {organ}: {} steps, loss {:.6} -> {:.6}", s.steps, s.initial_loss, s.final_loss);
        }
        Command::Run { common, corpus, stats, models, truth_heatmaps, oracle, resume_localization } => {
            let mut cfg = common.load()?;
            if truth_heatmaps {
                cfg.localization.heatmaps = HeatmapSource::GroundTruth;
            }
            if oracle {
                cfg.segmentation.predictor = PredictorKind::Oracle;
            }
            let paths = RunPaths { corpus, out: common.out.clone(), stats, models, resume_localization };
            let s = pipeline::cmd_run(&cfg, &paths)?;
            println!(
                "{} volumes, {} failed, {} localization misses, global dice {:.4} +/- {:.4}",
                s.volumes,
                s.failures.len(),
                s.localization_misses.len(),
                s.global_dice_mean,
                s.global_dice_std
            );
        }
        Command::Evaluate { common, corpus, predictions } => {
            let r = pipeline::cmd_evaluate(&common.load()?, &corpus, &predictions, &common.out)?;
            println!("global dice {:.4} +/- {:.4}", r.global_mean, r.global_std);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
