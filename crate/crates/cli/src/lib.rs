//! Command-line front end and annotation service.

pub mod server;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use clicklift_core::maskprovider::MaskNoise;
use clicklift_core::pipeline::{
    parse_stages, simulate_clicks, write_synthetic_dataset, PipelineConfig, PipelineStage, PipelineSummary,
    SyntheticDatasetOptions, Workspace,
};
use clicklift_core::synthgen::RandomSceneOptions;

#[derive(Debug, Parser)]
#[command(name = "clicklift", version, about = "Click-to-3D pseudo labels for LiDAR sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct ConfigArgs {
    /// Pipeline configuration (JSON, layered over the built-in defaults).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                PipelineConfig::load(path).with_context(|| format!("loading configuration {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args, Clone)]
pub struct GenArgs {
    /// Output directory for the dataset.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long, default_value_t = 10)]
    pub instances: usize,
    /// Share of instances placed next to a wall.
    #[arg(long, default_value_t = 0.3)]
    pub wall_adjacent: f64,
    /// Share of instances that move.
    #[arg(long, default_value_t = 0.2)]
    pub moving: f64,
    /// Ego speed in m/s.
    #[arg(long, default_value_t = 2.0)]
    pub ego_speed: f64,
    /// Mask dilation in pixels applied by the synthetic mask oracle.
    #[arg(long, default_value_t = 0)]
    pub bleed: u32,
    /// Return only the prompted part of composite instances.
    #[arg(long)]
    pub split_composites: bool,
    #[arg(long, default_value_t = 0.0)]
    pub click_error: f64,
    #[arg(long, default_value_t = 0.1)]
    pub prediction_corruption: f64,
    #[arg(long, default_value_t = 0.1)]
    pub instance_corruption: f64,
}

impl GenArgs {
    pub fn options(&self) -> SyntheticDatasetOptions {
        SyntheticDatasetOptions {
            scene: RandomSceneOptions {
                seed: self.seed,
                num_frames: self.frames,
                num_instances: self.instances,
                wall_adjacent: self.wall_adjacent,
                moving: self.moving,
                ego_speed: self.ego_speed,
                separate_bearings: true,
            },
            prediction_corruption: self.prediction_corruption,
            instance_corruption: self.instance_corruption,
            click_error_range: self.click_error,
            mask_noise: MaskNoise {
                bleed_pixels: self.bleed,
                composite_merge: !self.split_composites,
            },
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic sequence with masks, predictions, clicks and a config.
    GenSynthetic(GenArgs),
    /// Write one simulated click per ground-truth instance.
    SimulateClicks {
        #[command(flatten)]
        config: ConfigArgs,
        /// Overrides the configured click error range, in meters.
        #[arg(long)]
        error_range: Option<f64>,
    },
    /// Lift clicks to pseudo labels.
    Plg(ConfigArgs),
    /// Temporal voxel voting over adjacent frames.
    Tsu(ConfigArgs),
    /// IoU-guided replacement with predicted instances.
    Ile(ConfigArgs),
    /// Score labels against ground truth.
    Eval(ConfigArgs),
    /// Run several stages in order.
    Pipeline {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated subset of plg,tsu,ile,eval.
        #[arg(long, default_value = "plg,tsu,ile,eval")]
        stages: String,
    },
    /// Serve the annotation API.
    Serve {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn run_stages(cfg: PipelineConfig, stages: &[PipelineStage]) -> Result<PipelineSummary> {
    let ws = Workspace::open(cfg)?;
    let summary = ws.run(stages)?;
    for s in &summary.stages {
        match s.stage {
            PipelineStage::Plg => println!("plg: {} of {} clicks accepted", s.changed, s.total),
            PipelineStage::Tsu => println!("tsu: {} of {} points relabelled", s.changed, s.total),
            PipelineStage::Ile => println!("ile: {} of {} instances replaced", s.changed, s.total),
            PipelineStage::Eval => {}
        }
    }
    if let Some(report) = &summary.report {
        print!("{}", report.to_table());
    }
    Ok(summary)
}

fn gen_synthetic(args: &GenArgs) -> Result<PathBuf> {
    let path = write_synthetic_dataset(&args.options(), &args.out)
        .with_context(|| format!("writing synthetic dataset to {}", args.out.display()))?;
    println!("{}", path.display());
    Ok(path)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynthetic(args) => {
            gen_synthetic(&args)?;
        }
        Command::SimulateClicks { config, error_range } => {
            let mut cfg = config.load()?;
            if let Some(r) = error_range {
                cfg.clicks.error_range = r;
            }
            let clicks = simulate_clicks(&cfg)?;
            println!("{} clicks written to {}", clicks.len(), cfg.paths.clicks.display());
        }
        Command::Plg(c) => {
            run_stages(c.load()?, &[PipelineStage::Plg])?;
        }
        Command::Tsu(c) => {
            run_stages(c.load()?, &[PipelineStage::Tsu])?;
        }
        Command::Ile(c) => {
            run_stages(c.load()?, &[PipelineStage::Ile])?;
        }
        Command::Eval(c) => {
            run_stages(c.load()?, &[PipelineStage::Eval])?;
        }
        Command::Pipeline { config, stages } => {
            run_stages(config.load()?, &parse_stages(&stages)?)?;
        }
        Command::Serve { config, port, host } => {
            let cfg = config.load()?;
            let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
            runtime.block_on(server::serve(cfg, &host, port))?;
        }
    }
    Ok(())
}

/// Directory that holds labels accepted through the service.
pub fn accepted_dir(output: &Path) -> PathBuf {
    output.join("accepted")
}
