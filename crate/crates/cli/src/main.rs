//! `boxdiff` command-line driver.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use boxdiff_core::data::{self, load_dataset, load_detections, save_detections, save_scene, Config};
use boxdiff_core::pipeline::{
    self, evaluate_ap, infer_dataset, parse_loss_csv, run_training, scene_rng, Detector, EvalMode,
    TrainOptions,
};
use boxdiff_core::Checkpoint;

#[derive(Parser, Debug)]
#[command(name = "boxdiff", version, about = "Diffusion-based 3D box detection at desk scale")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the decoder on a dataset directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Extra `key=value` overrides applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Detect boxes in every scene of a dataset directory.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score detection files against ground-truth labels.
    Eval {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        iou: f64,
        #[arg(long, default_value_t = 40)]
        recall: usize,
        #[arg(long, value_enum, default_value_t = Mode::ThreeD)]
        mode: Mode,
    },
    /// Write plot data as CSV.
    Plot {
        #[arg(long, value_enum)]
        what: PlotKind,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Samples per kind for `sizes`.
        #[arg(long, default_value_t = 5000)]
        samples: usize,
        /// Loss CSV written by `train` (for `loss`).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        dets: Option<PathBuf>,
        #[arg(long)]
        gts: Option<PathBuf>,
        #[arg(long, default_value_t = 0.7)]
        iou: f64,
        #[arg(long, default_value_t = 40)]
        recall: usize,
        #[arg(long, value_enum, default_value_t = Mode::ThreeD)]
        mode: Mode,
    },
    /// Generate synthetic scenes in dataset layout.
    GenData {
        #[arg(long)]
        scenes: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Mode {
    #[value(name = "3d")]
    ThreeD,
    Bev,
}

impl From<Mode> for EvalMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::ThreeD => EvalMode::ThreeD,
            Mode::Bev => EvalMode::Bev,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PlotKind {
    Schedule,
    Sizes,
    Pr,
    Loss,
}

fn read_config(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            data::load_config(&text).with_context(|| format!("loading {}", p.display()))?
        }
        None => Config::default(),
    };
    for kv in overrides {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("override `{kv}` is not KEY=VALUE");
        };
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let seed = cli.seed;
    match cli.command {
        Command::Train {
            config,
            data,
            out,
            overrides,
        } => {
            let cfg = read_config(config.as_deref(), &overrides)?;
            let scenes = load_dataset(&data)?;
            log::info!("training on {} scenes from {}", scenes.len(), data.display());
            let report = run_training(
                &cfg,
                &scenes,
                &TrainOptions {
                    seed,
                    initial: None,
                },
            )?;
            create_dir(&out)?;
            report.checkpoint.save(out.join("model.ckpt"))?;
            pipeline::write_loss_csv(&out.join("loss.csv"), &report.epochs)?;
            fs::write(out.join("config.txt"), cfg.to_text())?;
            println!("wrote {}", out.join("model.ckpt").display());
        }
        Command::Infer {
            checkpoint,
            data,
            steps,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let steps = steps.unwrap_or(ck.config.infer.steps);
            let detector = Detector::from_checkpoint(&ck)?;
            let scenes = load_dataset(&data)?;
            let outputs = infer_dataset(&detector, &scenes, &ck.config, steps, seed)?;
            create_dir(&out)?;
            let mut total = 0;
            for (id, o) in &outputs {
                total += o.detections.len();
                save_detections(&out, id, &o.detections)?;
            }
            println!("{total} detections over {} scenes written to {}", outputs.len(), out.display());
        }
        Command::Eval {
            dets,
            gts,
            iou,
            recall,
            mode,
        } => {
            let report = evaluate_ap(&load_detections(&dets)?, &load_dataset(&gts)?, iou, recall, mode.into())?;
            println!("{}", report.summary());
        }
        Command::Plot {
            what,
            out,
            config,
            samples,
            input,
            dets,
            gts,
            iou,
            recall,
            mode,
        } => {
            let cfg = read_config(config.as_deref(), &[])?;
            match what {
                PlotKind::Schedule => pipeline::write_schedule_csv(&out, &cfg)?,
                PlotKind::Sizes => pipeline::write_sizes_csv(&out, &cfg, samples, &mut scene_rng(seed, 0))?,
                PlotKind::Pr => {
                    let (Some(dets), Some(gts)) = (dets, gts) else {
                        bail!("--what pr needs --dets and --gts");
                    };
                    let report = evaluate_ap(&load_detections(&dets)?, &load_dataset(&gts)?, iou, recall, mode.into())?;
                    pipeline::write_pr_csv(&out, &report)?;
                }
                PlotKind::Loss => {
                    let Some(input) = input else {
                        bail!("--what loss needs --input <loss.csv>");
                    };
                    let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
                    pipeline::write_loss_csv(&out, &parse_loss_csv(&text)?)?;
                }
            }
            println!("wrote {}", out.display());
        }
        Command::GenData { scenes, out, config } => {
            let cfg = read_config(config.as_deref(), &[])?;
            create_dir(&out)?;
            for k in 0..scenes {
                let scene = data::generate_synthetic_scene(&mut scene_rng(seed, k as u64), &cfg, format!("{k:06}"));
                save_scene(&out, &scene)?;
            }
            println!("wrote {scenes} scenes to {}", out.display());
        }
    }
    Ok(())
}
