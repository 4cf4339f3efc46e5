//! Event-to-tensor encoding.
//!
//! The default [`EncoderMode::Aet`] pipeline quantizes timestamps into
//! `m_hat` bins, accumulates signed events per pixel along time, and
//! compresses the resulting frames with one or more aligned compression
//! stages. The other modes are ablations that swap out one of those steps.

mod compress;
mod voxel;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

pub use compress::{aligned_compress, avg_compress};
pub use voxel::{quantize_timestamps, voxelize_accumulative, voxelize_spike, QuantizedEvent, QuantizedEvents, VoxelGrid};

use crate::error::{shape_err, Error, Result};
use crate::event::EventSample;

pub const DEFAULT_SLOPE: f32 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EncoderMode {
    /// Accumulative voxelization then aligned compression.
    Aet,
    /// Per-bin event counts then aligned compression.
    Spike,
    /// Accumulative and per-bin grids as two channels, then aligned compression.
    SpikeAccum,
    /// Accumulative voxelization then plain frame averaging.
    AvgCompress,
    /// Per-bin counts directly at the output frame count.
    QuantizeOnly,
}

impl EncoderMode {
    pub const ALL: [EncoderMode; 5] = [
        EncoderMode::Aet,
        EncoderMode::Spike,
        EncoderMode::SpikeAccum,
        EncoderMode::AvgCompress,
        EncoderMode::QuantizeOnly,
    ];

    /// Whether this mode runs the trainable compression stages.
    pub fn uses_conv_stages(self) -> bool {
        matches!(self, EncoderMode::Aet | EncoderMode::Spike | EncoderMode::SpikeAccum)
    }

    /// Channel count entering the first stage.
    pub fn input_channels(self) -> usize {
        match self {
            EncoderMode::SpikeAccum => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for EncoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderMode::Aet => "aet",
            EncoderMode::Spike => "spike",
            EncoderMode::SpikeAccum => "spike-accum",
            EncoderMode::AvgCompress => "avg",
            EncoderMode::QuantizeOnly => "quantize-only",
        })
    }
}

impl FromStr for EncoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aet" => Ok(EncoderMode::Aet),
            "spike" => Ok(EncoderMode::Spike),
            "spike-accum" => Ok(EncoderMode::SpikeAccum),
            "avg" | "avg-compress" => Ok(EncoderMode::AvgCompress),
            "quantize-only" => Ok(EncoderMode::QuantizeOnly),
            other => Err(Error::Config(format!(
                "unknown encoder mode {other:?} (expected aet, spike, spike-accum, avg, quantize-only)"
            ))),
        }
    }
}

/// One aligned compression step: `group_size` frames of `in_channels`
/// become one frame of `out_channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStage {
    pub group_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `out_channels x (group_size * in_channels) x kernel x kernel`
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub slope: f32,
}

impl ConvStage {
    /// Uniform fan-in initialization, `±1/sqrt(G * C_in * K^2)`.
    pub fn init<R: Rng>(
        group_size: usize,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = group_size * in_channels * kernel * kernel;
        if fan_in == 0 || out_channels == 0 {
            return Err(Error::Config("stage dimensions must be positive".into()));
        }
        let bound = 1.0 / (fan_in as f32).sqrt();
        let stage = Self {
            group_size,
            in_channels,
            out_channels,
            kernel,
            weights: (0..out_channels * fan_in).map(|_| rng.random_range(-bound..bound)).collect(),
            bias: (0..out_channels).map(|_| rng.random_range(-bound..bound)).collect(),
            slope: DEFAULT_SLOPE,
        };
        stage.validate()?;
        Ok(stage)
    }

    pub fn weight_dims(&self) -> Vec<usize> {
        vec![self.out_channels, self.group_size * self.in_channels, self.kernel, self.kernel]
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 {
            return Err(Error::Config("group size must be at least 1".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel)));
        }
        let expected: usize = self.weight_dims().iter().product();
        if self.weights.len() != expected || self.bias.len() != self.out_channels {
            return Err(shape_err!(
                "stage weights hold {} values and bias {}, expected {expected} and {}",
                self.weights.len(),
                self.bias.len(),
                self.out_channels
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub m_hat: usize,
    pub stages: Vec<ConvStage>,
    pub mode: EncoderMode,
}

impl EncoderConfig {
    /// Builds randomly initialized stages. `out_channels[i]` is the width
    /// of stage `i`; stage inputs chain from the mode's input channels.
    pub fn build<R: Rng>(
        m_hat: usize,
        mode: EncoderMode,
        groups: &[usize],
        out_channels: &[usize],
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if groups.len() != out_channels.len() {
            return Err(Error::Config(format!(
                "{} group sizes but {} stage widths",
                groups.len(),
                out_channels.len()
            )));
        }
        let mut stages = Vec::with_capacity(groups.len());
        let mut c_in = mode.input_channels();
        for (&g, &c_out) in groups.iter().zip(out_channels) {
            stages.push(ConvStage::init(g, c_in, c_out, kernel, rng)?);
            c_in = c_out;
        }
        let cfg = Self { m_hat, stages, mode };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `m_hat = 100`, stages `(G=2, 1->4, K=5)` and `(G=5, 4->3, K=5)`.
    pub fn standard<R: Rng>(rng: &mut R) -> Self {
        Self::build(100, EncoderMode::Aet, &[2, 5], &[4, 3], 5, rng).expect("standard configuration is valid")
    }

    pub fn with_mode(&self, mode: EncoderMode) -> Self {
        Self { mode, ..self.clone() }
    }

    pub fn group_product(&self) -> usize {
        self.stages.iter().map(|s| s.group_size).product()
    }

    /// Output frame count `m_hat / prod(G)`.
    pub fn num_frames(&self) -> usize {
        self.m_hat / self.group_product().max(1)
    }

    pub fn out_channels(&self) -> usize {
        if self.mode.uses_conv_stages() {
            self.stages.last().map_or(self.mode.input_channels(), |s| s.out_channels)
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_hat == 0 {
            return Err(Error::Config("bin count must be at least 1".into()));
        }
        if self.stages.iter().any(|s| s.group_size == 0) {
            return Err(Error::Config("group size must be at least 1".into()));
        }
        let prod = self.group_product();
        if self.m_hat % prod != 0 {
            return Err(Error::Config(format!(
                "product of group sizes {prod} does not divide the bin count {}",
                self.m_hat
            )));
        }
        if self.mode.uses_conv_stages() {
            let mut c = self.mode.input_channels();
            for (i, s) in self.stages.iter().enumerate() {
                s.validate()?;
                if s.in_channels != c {
                    return Err(Error::Config(format!(
                        "stage {i} expects {} input channels but receives {c}",
                        s.in_channels
                    )));
                }
                c = s.out_channels;
            }
        }
        Ok(())
    }
}

/// Frame-major stack `frames x channels x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStack {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FrameStack {
    pub fn from_grid(grid: VoxelGrid) -> Self {
        Self {
            frames: grid.m_hat,
            channels: 1,
            height: grid.geometry.height as usize,
            width: grid.geometry.width as usize,
            data: grid.data,
        }
    }

    /// Interleaves equally sized single-channel grids as channels.
    pub fn stack_channels(grids: &[VoxelGrid]) -> Result<Self> {
        let first = grids.first().ok_or_else(|| Error::Empty("no grids to stack".into()))?;
        if grids.iter().any(|g| g.m_hat != first.m_hat || g.geometry != first.geometry) {
            return Err(shape_err!("grids to stack differ in shape"));
        }
        let p = first.geometry.pixels();
        let c = grids.len();
        let mut data = Vec::with_capacity(first.data.len() * c);
        for m in 0..first.m_hat {
            for g in grids {
                data.extend_from_slice(&g.data[m * p..(m + 1) * p]);
            }
        }
        Ok(Self {
            frames: first.m_hat,
            channels: c,
            height: first.geometry.height as usize,
            width: first.geometry.width as usize,
            data,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * self.frame_len()..(i + 1) * self.frame_len()]
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }
}

/// Encoder output laid out `C x M* x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct AETensor {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl AETensor {
    pub fn from_frames(stack: &FrameStack) -> Self {
        let (m, c, p) = (stack.frames, stack.channels, stack.height * stack.width);
        let mut data = vec![0.0; stack.data.len()];
        for f in 0..m {
            for ch in 0..c {
                let src = &stack.data[(f * c + ch) * p..(f * c + ch + 1) * p];
                data[(ch * m + f) * p..(ch * m + f + 1) * p].copy_from_slice(src);
            }
        }
        Self {
            channels: c,
            frames: m,
            height: stack.height,
            width: stack.width,
            data,
        }
    }

    pub fn to_frames(&self) -> FrameStack {
        let (m, c, p) = (self.frames, self.channels, self.height * self.width);
        let mut data = vec![0.0; self.data.len()];
        for ch in 0..c {
            for f in 0..m {
                let src = &self.data[(ch * m + f) * p..(ch * m + f + 1) * p];
                data[(f * c + ch) * p..(f * c + ch + 1) * p].copy_from_slice(src);
            }
        }
        FrameStack {
            frames: m,
            channels: c,
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.channels, self.frames, self.height, self.width]
    }

    pub fn from_dims(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        let [c, m, h, w] = <[usize; 4]>::try_from(dims).map_err(|_| shape_err!("an encoded tensor has 4 axes, got {dims:?}"))?;
        if c * m * h * w != data.len() {
            return Err(shape_err!("dims {dims:?} do not match {} values", data.len()));
        }
        Ok(Self {
            channels: c,
            frames: m,
            height: h,
            width: w,
            data,
        })
    }
}

/// Everything before the compression convolutions: the frame stack that
/// the trainable stages consume, or for stage-free modes the final frames.
pub fn prepare_frames(sample: &EventSample, cfg: &EncoderConfig) -> Result<FrameStack> {
    cfg.validate()?;
    match cfg.mode {
        EncoderMode::Aet => {
            let q = quantize_timestamps(sample, cfg.m_hat)?;
            Ok(FrameStack::from_grid(voxelize_accumulative(&q)))
        }
        EncoderMode::Spike => {
            let q = quantize_timestamps(sample, cfg.m_hat)?;
            Ok(FrameStack::from_grid(voxelize_spike(&q)))
        }
        EncoderMode::SpikeAccum => {
            let q = quantize_timestamps(sample, cfg.m_hat)?;
            FrameStack::stack_channels(&[voxelize_accumulative(&q), voxelize_spike(&q)])
        }
        EncoderMode::AvgCompress => {
            let q = quantize_timestamps(sample, cfg.m_hat)?;
            let mut frames = FrameStack::from_grid(voxelize_accumulative(&q));
            for s in &cfg.stages {
                frames = avg_compress(&frames, s.group_size)?;
            }
            Ok(frames)
        }
        EncoderMode::QuantizeOnly => {
            let q = quantize_timestamps(sample, cfg.num_frames())?;
            Ok(FrameStack::from_grid(voxelize_spike(&q)))
        }
    }
}

/// Runs the full encoder and returns frame-major output.
pub fn encode_frames(sample: &EventSample, cfg: &EncoderConfig) -> Result<FrameStack> {
    let mut frames = prepare_frames(sample, cfg)?;
    if cfg.mode.uses_conv_stages() {
        for stage in &cfg.stages {
            frames = aligned_compress(&frames, stage)?;
        }
    }
    Ok(frames)
}

pub fn encode(sample: &EventSample, cfg: &EncoderConfig) -> Result<AETensor> {
    Ok(AETensor::from_frames(&encode_frames(sample, cfg)?))
}

/// Encodes samples on a pool of `workers` threads, preserving input order.
pub fn encode_batch(samples: &[EventSample], cfg: &EncoderConfig, workers: usize) -> Result<Vec<AETensor>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| samples.par_iter().map(|s| encode(s, cfg)).collect())
}

#[cfg(test)]
mod tests;
