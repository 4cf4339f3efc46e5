use std::ffi::OsString;
use std::path::PathBuf;

use aet_core::bench::BenchStage;
use aet_core::efn::EvalMode;
use aet_core::encoder::EncoderMode;
use aet_core::synth::TaskKind;
use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "aetefn", version, about = "Aligned event tensors and two-branch event classification")]
pub struct Cli {
    /// Worker threads for encoding, training and evaluation.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// `key=value` file whose entries act as flags given before the
    /// command line ones.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with a manifest.
    Gen(GenArgs),
    /// Encode event files into AETF tensors.
    Encode(EncodeArgs),
    /// Train a model on a manifest's train and val splits.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Time the encoder or the full pipeline.
    Bench(BenchArgs),
    /// Export an AETF tensor as one PPM image per frame.
    Viz(VizArgs),
}

pub const SUBCOMMANDS: [&str; 6] = ["gen", "encode", "train", "eval", "bench", "viz"];

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: TaskKind,
    #[arg(long, default_value_t = 20)]
    pub per_class: usize,
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    /// Train, val and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0.6,0.2,0.2")]
    pub split: Vec<f64>,
    #[arg(long, default_value_t = 32)]
    pub width: u16,
    #[arg(long, default_value_t = 32)]
    pub height: u16,
    #[arg(long, default_value_t = 100.0)]
    pub duration_ms: f64,
    /// Virtual frames per second fed to the simulator.
    #[arg(long, default_value_t = 1000.0)]
    pub frame_rate: f64,
    /// Contrast threshold in log intensity.
    #[arg(long, default_value_t = 0.2)]
    pub threshold: f64,
    /// Noise events per pixel per second; defaults depend on the task.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Class count for the direction task (2 or 4).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Time slots for the temporal-order task.
    #[arg(long, default_value_t = 10)]
    pub slots: usize,
}

#[derive(Args, Debug, Clone)]
pub struct EncoderArgs {
    /// Quantization bins.
    #[arg(long, default_value_t = 100)]
    pub mhat: usize,
    /// Frames merged by each compression stage.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "2,5")]
    pub groups: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub kernel: usize,
    /// Channel counts from input through each stage; the first entry must
    /// match the mode (2 for spike-accum, else 1).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub channels: Option<Vec<usize>>,
    #[arg(long, default_value = "aet", value_parser = parse_mode)]
    pub mode: EncoderMode,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// One event file, or a manifest when `--manifest` is set.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub manifest: bool,
    /// Output file for a single input, output directory for a manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    /// EFNW file holding `stage{i}.weight` and `stage{i}.bias`; a trained
    /// checkpoint works.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Read the input as `x,y,t,p` CSV.
    #[arg(long)]
    pub csv: bool,
    /// Sensor width for CSV input.
    #[arg(long)]
    pub width: Option<u16>,
    /// Sensor height for CSV input.
    #[arg(long)]
    pub height: Option<u16>,
    #[arg(long)]
    pub label: Option<u32>,
    /// Split a single input into windows of this length before encoding.
    #[arg(long)]
    pub window_us: Option<u64>,
    /// Window step; defaults to the window length.
    #[arg(long)]
    pub step_us: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint path; the model configuration goes to `<out>.cfg`.
    #[arg(long, default_value = "model.efnw")]
    pub out: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Fraction of steps spent in linear warm-up.
    #[arg(long, default_value_t = 0.1)]
    pub warmup: f64,
    #[arg(long, default_value_t = 64)]
    pub feature_dim: usize,
    /// Backbone block widths.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "16,32,64")]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub k1: usize,
    #[arg(long, default_value_t = 3)]
    pub k2: usize,
    #[arg(long, default_value_t = 2)]
    pub pool: usize,
    /// Channels between the temporal convolutions; defaults to the feature width.
    #[arg(long)]
    pub video_hidden: Option<usize>,
    /// One classifier for every frame instead of one per frame.
    #[arg(long)]
    pub shared_frame_classifier: bool,
    /// Write per-epoch `epoch,train_loss,val_accuracy` rows here.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "synthesis", value_parser = parse_eval_mode)]
    pub mode: EvalMode,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Write a `key=value` summary here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Time samples from this manifest; otherwise random samples are used.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Needed for the full stage; its encoder replaces the flags.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "encode-only", value_parser = parse_stage)]
    pub stage: BenchStage,
    /// Random sample count.
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    /// Events per random sample.
    #[arg(long, default_value_t = 20_000)]
    pub events: usize,
    /// Sensor side for random samples.
    #[arg(long, default_value_t = 64)]
    pub side: u16,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    /// Also time these event counts and print how latency scales.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub scaling: Option<Vec<usize>>,
    /// Write a `key=value` summary here.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VizArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse().map_err(|e: aet_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<EncoderMode, String> {
    s.parse().map_err(|e: aet_core::Error| e.to_string())
}

fn parse_eval_mode(s: &str) -> Result<EvalMode, String> {
    s.parse().map_err(|e: aet_core::Error| e.to_string())
}

fn parse_stage(s: &str) -> Result<BenchStage, String> {
    s.parse().map_err(|e: aet_core::Error| e.to_string())
}

/// Turns `key=value` lines into flags. `#` starts a comment, `true`
/// becomes a bare switch and `false` drops the key.
pub fn config_flags(text: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected key=value, got {raw:?}", i + 1);
        };
        let (k, v) = (k.trim().trim_start_matches("--").replace('_', "-"), v.trim());
        if k.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        match v {
            "true" => out.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{k}").into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

/// Parses the command line, splicing in config file flags right after the
/// subcommand so explicit flags override them.
pub fn parse(args: Vec<OsString>) -> Result<Cli> {
    let config = find_config(&args);
    let args = match config {
        Some(path) => {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
            let extra = config_flags(&text)?;
            let pos = args
                .iter()
                .skip(1)
                .position(|a| a.to_str().is_some_and(|s| SUBCOMMANDS.contains(&s)))
                .map(|p| p + 2);
            match pos {
                Some(p) => {
                    let mut v = args[..p].to_vec();
                    v.extend(extra);
                    v.extend_from_slice(&args[p..]);
                    v
                }
                None => args,
            }
        }
        None => args,
    };
    let cmd = Cli::command()
        .args_override_self(true)
        .mut_subcommands(|s| s.args_override_self(true));
    let matches = cmd.try_get_matches_from(args).unwrap_or_else(|e| e.exit());
    Ok(Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit()))
}

fn find_config(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}
