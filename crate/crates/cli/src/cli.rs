//! Argument parsing and dispatch for the `laeo` binary.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use laeo::eval::MatchMode;

use crate::commands;
use crate::config::{EvalLevel, RunConfig};
use crate::frames::{DirFrameProvider, FrameProvider};

#[derive(Debug, Parser)]
#[command(name = "laeo", version, about = "Detect people looking at each other in video")]
pub struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every stage; overrides the configured one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Configuration override `dotted.key=value`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    IouHeads,
    IohaBodies,
}

impl From<ModeArg> for MatchMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::IouHeads => MatchMode::IouHeads,
            ModeArg::IohaBodies => MatchMode::IohaBodies,
        }
    }
}

#[derive(Debug, Args)]
pub struct Output {
    /// Output path.
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Link head detections into tracks.
    Track {
        /// Annotation file with `detection` records.
        #[arg(long)]
        detections: PathBuf,
        #[command(flatten)]
        out: Output,
    },
    /// Score every track pair with a trained model.
    Score {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Frame directory root; defaults to `paths.frames_root`.
        #[arg(long)]
        frames: Option<PathBuf>,
        #[command(flatten)]
        out: Output,
    },
    /// Average precision of scores against annotations.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// Defaults to `eval.mode`.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Defaults to `eval.level`.
        #[arg(long, value_enum)]
        level: Option<EvalLevel>,
        #[command(flatten)]
        out: Output,
    },
    /// Pretrain the head-pose branch on labeled heads.
    Pretrain {
        #[command(flatten)]
        out: Output,
    },
    /// Train the pair classifier.
    Train {
        /// Pretrained head-pose checkpoint; defaults to `paths.pose_checkpoint`.
        #[arg(long)]
        pose_checkpoint: Option<PathBuf>,
        #[command(flatten)]
        out: Output,
    },
    /// Generate a synthetic sample archive.
    Synth {
        #[command(flatten)]
        out: Output,
    },
    /// Build the character graph from tracks, scores and track labels.
    Social {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        /// CSV with columns `[video_id,]track_id,name`.
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        out: Output,
    },
    /// Render the head map of two tracks at one frame as a PNG.
    RenderHeadmap {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        video: String,
        #[arg(long)]
        frame: usize,
        #[arg(long)]
        left: usize,
        #[arg(long)]
        right: usize,
        /// `WIDTHxHEIGHT`; read from the frame image when omitted.
        #[arg(long)]
        frame_size: Option<String>,
        #[command(flatten)]
        out: Output,
    },
}

fn parse_size(s: &str) -> Result<(f64, f64)> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| anyhow!("frame size {s:?} is not WIDTHxHEIGHT"))?;
    Ok((w.trim().parse()?, h.trim().parse()?))
}

fn frames_root(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| cfg.paths.frames_root.clone())
        .ok_or_else(|| anyhow!("no frame directory: pass --frames or set paths.frames_root"))
}

/// Runs a parsed command line, writing progress lines to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    match cli.command {
        Command::Track { detections, out: o } => {
            let t = commands::track(&cfg, &detections, &o.output)?;
            writeln!(out, "{} tracks written to {}", t.len(), o.output.display())?;
        }
        Command::Score {
            tracks,
            checkpoint,
            frames,
            out: o,
        } => {
            let provider = DirFrameProvider::new(frames_root(&cfg, frames)?);
            let s = commands::score(&cfg, &tracks, &checkpoint, &provider, &o.output)?;
            writeln!(out, "{} score records written to {}", s.len(), o.output.display())?;
        }
        Command::Eval {
            scores,
            ground_truth,
            mode,
            level,
            out: o,
        } => {
            let mode = mode.map(MatchMode::from).unwrap_or(cfg.eval.mode);
            let level = level.unwrap_or(cfg.eval.level);
            let r = commands::eval(&cfg, &scores, &ground_truth, mode, level, &o.output)?;
            match r.ap {
                Some(ap) => writeln!(out, "AP {ap:.6} over {} predictions, {} positives", r.num_predictions, r.num_positives)?,
                None => writeln!(out, "no positives in the ground truth; AP undefined")?,
            }
        }
        Command::Pretrain { out: o } => {
            let log = commands::pretrain(&cfg, &o.output)?;
            for e in &log {
                let val = e.val_loss.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
                writeln!(out, "epoch {} steps {} train_loss {:.6} val_loss {val}", e.epoch, e.steps, e.train_loss)?;
            }
        }
        Command::Train { pose_checkpoint, out: o } => {
            let log = commands::train(&cfg, pose_checkpoint.as_deref(), &o.output)?;
            for e in &log.epochs {
                writeln!(out, "{}", commands::epoch_line(e))?;
            }
        }
        Command::Synth { out: o } => {
            let n = commands::synth(&cfg, &o.output)?;
            writeln!(out, "{n} samples written to {}", o.output.display())?;
        }
        Command::Social {
            tracks,
            scores,
            labels,
            out: o,
        } => {
            let g = commands::social(&cfg, &tracks, &scores, &labels, &o.output)?;
            for e in &g.edges {
                writeln!(out, "{} - {}: weight {:.4} ratio {:.4} over {} frames", e.a, e.b, e.weight, e.ratio, e.frames)?;
            }
        }
        Command::RenderHeadmap {
            tracks,
            video,
            frame,
            left,
            right,
            frame_size,
            out: o,
        } => {
            let size = match frame_size {
                Some(s) => parse_size(&s)?,
                None => {
                    let root = frames_root(&cfg, None).context("frame size unknown")?;
                    let img = DirFrameProvider::new(root).frame(&video, frame)?;
                    (img.width() as f64, img.height() as f64)
                }
            };
            commands::render_headmap(&cfg, &tracks, &video, frame, (left, right), size, &o.output)?;
            writeln!(out, "head map written to {}", o.output.display())?;
        }
    }
    Ok(())
}
