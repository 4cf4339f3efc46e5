//! Event Frame Net.
//!
//! A shared per-frame CNN turns each of the `M*` encoded frames into a
//! `D`-dimensional embedding. The frame branch classifies every embedding
//! with its own affine map; the video branch runs two temporal convolutions
//! over the embedding sequence. Training averages all `M* + 1` logit
//! vectors; inference can instead weight them by per-class validation
//! accuracy (see [`synthesize`]).
//!
//! The trainable aligned compression stages of the encoder are part of the
//! model and are optimized together with the network.

mod synthesis;
mod train;

use rand::Rng;

pub use synthesis::{average_predictions, synthesize, AccuracyMatrix};
pub use train::{evaluate, predict_all, prepare_inputs, train, EpochStats, EvalMode, EvalReport, TrainConfig, TrainResult};

use crate::encoder::{ConvStage, EncoderConfig, FrameStack};
use crate::error::{shape_err, Error, Result};
use crate::nn::{init_uniform, ParamId, ParamStore, Real, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EfnConfig {
    pub num_classes: usize,
    /// Embedding width `D`.
    pub feature_dim: usize,
    /// Output widths of the backbone blocks (conv 3x3, leaky, max-pool 2).
    pub backbone_widths: Vec<usize>,
    pub k1: usize,
    pub k2: usize,
    pub pool: usize,
    /// Channels between the two temporal convolutions.
    pub video_hidden: usize,
    /// One classifier for all frames instead of one per frame.
    pub shared_frame_classifier: bool,
    pub slope: f64,
}

impl EfnConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            feature_dim: 64,
            backbone_widths: vec![16, 32, 64],
            k1: 5,
            k2: 3,
            pool: 2,
            video_hidden: 64,
            shared_frame_classifier: false,
            slope: 0.01,
        }
    }

    /// Temporal length after both valid convolutions and pooling, before the
    /// final global max.
    pub fn video_length(&self, num_frames: usize) -> Option<usize> {
        let l1 = num_frames.checked_sub(self.k1)? + 1;
        let l2 = l1.checked_sub(self.k2)? + 1;
        let l3 = l2 / self.pool.max(1);
        (l3 >= 1).then_some(l3)
    }

    pub fn validate(&self, num_frames: usize, height: usize, width: usize) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if num_frames == 0 || self.feature_dim == 0 || self.video_hidden == 0 || self.k1 == 0 || self.k2 == 0 || self.pool == 0 {
            return Err(Error::Config("frame count, widths, kernels and pool size must be positive".into()));
        }
        if self.backbone_widths.contains(&0) {
            return Err(Error::Config("backbone widths must be positive".into()));
        }
        let shrink = 1usize << self.backbone_widths.len();
        if height < shrink || width < shrink {
            return Err(Error::Config(format!(
                "{height}x{width} frames are too small for {} pooling blocks",
                self.backbone_widths.len()
            )));
        }
        if self.video_length(num_frames).is_none() {
            return Err(Error::Config(format!(
                "video branch with k1={}, k2={}, pool={} leaves no element for {num_frames} frames",
                self.k1, self.k2, self.pool
            )));
        }
        Ok(())
    }
}

/// Logits of every classifier: the `M*` frame classifiers in frame order,
/// then the video classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub logits: Vec<Vec<f32>>,
}

impl PredictionSet {
    pub fn num_classifiers(&self) -> usize {
        self.logits.len()
    }

    pub fn video(&self) -> &[f32] {
        self.logits.last().map_or(&[], |v| v)
    }

    pub fn frames(&self) -> &[Vec<f32>] {
        &self.logits[..self.logits.len().saturating_sub(1)]
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Tape handles for the two heads of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Heads {
    /// `M* x classes`
    pub frames: Var,
    /// `classes`
    pub video: Var,
}

#[derive(Clone, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
pub struct Efn<T> {
    cfg: EfnConfig,
    encoder: EncoderConfig,
    height: usize,
    width: usize,
    store: ParamStore<T>,
    stages: Vec<Layer>,
    blocks: Vec<Layer>,
    proj: Layer,
    frame_head: Layer,
    video1: Layer,
    video2: Layer,
}

impl<T: Real> Efn<T> {
    /// Builds a model for `height x width` inputs. Stage parameters start
    /// from the weights in `encoder` when its mode trains them.
    pub fn new<R: Rng>(cfg: EfnConfig, encoder: EncoderConfig, height: usize, width: usize, rng: &mut R) -> Result<Self> {
        encoder.validate()?;
        let m_star = encoder.num_frames();
        cfg.validate(m_star, height, width)?;
        let mut store = ParamStore::new();
        let mut stages = Vec::new();
        if encoder.mode.uses_conv_stages() {
            for (i, s) in encoder.stages.iter().enumerate() {
                let w = Tensor::new(s.weight_dims(), s.weights.iter().map(|&v| T::of(v as f64)).collect())?;
                let b = Tensor::new(vec![s.out_channels], s.bias.iter().map(|&v| T::of(v as f64)).collect())?;
                stages.push(Layer {
                    w: store.add(format!("stage{i}.weight"), w, true)?,
                    b: store.add(format!("stage{i}.bias"), b, true)?,
                });
            }
        }
        let mut add = |store: &mut ParamStore<T>, name: &str, wdims: Vec<usize>, bdims: Vec<usize>, fan_in: usize| -> Result<Layer> {
            Ok(Layer {
                w: store.add(format!("{name}.weight"), init_uniform(rng, wdims, fan_in), true)?,
                b: store.add(format!("{name}.bias"), init_uniform(rng, bdims, fan_in), true)?,
            })
        };
        let mut blocks = Vec::new();
        let mut c = encoder.out_channels();
        for (i, &width_out) in cfg.backbone_widths.iter().enumerate() {
            blocks.push(add(&mut store, &format!("backbone.block{i}"), vec![width_out, c, 3, 3], vec![width_out], c * 9)?);
            c = width_out;
        }
        let d = cfg.feature_dim;
        let k = cfg.num_classes;
        let proj = add(&mut store, "backbone.proj", vec![d, c], vec![d], c)?;
        let frame_head = if cfg.shared_frame_classifier {
            add(&mut store, "frame.classifier", vec![k, d], vec![k], d)?
        } else {
            add(&mut store, "frame.classifier", vec![m_star, k, d], vec![m_star, k], d)?
        };
        let h = cfg.video_hidden;
        let video1 = add(&mut store, "video.conv1", vec![h, d, cfg.k1], vec![h], d * cfg.k1)?;
        let video2 = add(&mut store, "video.conv2", vec![k, h, cfg.k2], vec![k], h * cfg.k2)?;
        Ok(Self {
            cfg,
            encoder,
            height,
            width,
            store,
            stages,
            blocks,
            proj,
            frame_head,
            video1,
            video2,
        })
    }

    pub fn config(&self) -> &EfnConfig {
        &self.cfg
    }

    pub fn num_frames(&self) -> usize {
        self.encoder.num_frames()
    }

    pub fn frame_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// The encoder configuration with the model's current stage weights.
    pub fn encoder_config(&self) -> EncoderConfig {
        let mut enc = self.encoder.clone();
        for (s, layer) in enc.stages.iter_mut().zip(&self.stages) {
            s.weights = self.store.tensor(layer.w).data().iter().map(|v| v.as_f64() as f32).collect();
            s.bias = self.store.tensor(layer.b).data().iter().map(|v| v.as_f64() as f32).collect();
        }
        enc
    }

    pub fn cast<U: Real>(&self) -> Efn<U> {
        Efn {
            cfg: self.cfg.clone(),
            encoder: self.encoder.clone(),
            height: self.height,
            width: self.width,
            store: self.store.cast(),
            stages: self.stages.clone(),
            blocks: self.blocks.clone(),
            proj: self.proj.clone(),
            frame_head: self.frame_head.clone(),
            video1: self.video1.clone(),
            video2: self.video2.clone(),
        }
    }

    fn leaf(&self, tape: &mut Tape<T>, layer: &Layer) -> (Var, Var) {
        (tape.param(&self.store, layer.w), tape.param(&self.store, layer.b))
    }

    /// Runs the trainable compression stages on prepared frames and
    /// returns the `M* x C x H x W` encoded frames.
    pub fn compress(&self, tape: &mut Tape<T>, frames: &FrameStack) -> Result<Var> {
        if frames.height != self.height || frames.width != self.width {
            return Err(shape_err!(
                "model expects {}x{} frames, got {}x{}",
                self.height,
                self.width,
                frames.height,
                frames.width
            ));
        }
        let data = frames.data.iter().map(|&v| T::of(v as f64)).collect();
        let mut x = tape.constant(Tensor::new(frames.dims().to_vec(), data)?);
        let (h, w) = (self.height, self.width);
        let mut n = frames.frames;
        let mut c = frames.channels;
        for (stage, layer) in self.encoder.stages.iter().zip(&self.stages) {
            let ConvStage { group_size: g, .. } = *stage;
            if n % g != 0 || c != stage.in_channels {
                return Err(shape_err!("{n} frames of {c} channels do not fit stage ({g}, {})", stage.in_channels));
            }
            x = tape.reshape(x, vec![n / g, g * c, h, w])?;
            let (wv, bv) = self.leaf(tape, layer);
            x = tape.conv2d(x, wv, Some(bv), stage.kernel / 2)?;
            x = tape.leaky_relu(x, stage.slope as f64);
            n /= g;
            c = stage.out_channels;
        }
        if n != self.num_frames() {
            return Err(shape_err!("expected {} encoded frames, got {n}", self.num_frames()));
        }
        Ok(x)
    }

    /// Shared backbone over `M* x C x H x W`, giving `M* x D`.
    pub fn cnn_encode(&self, tape: &mut Tape<T>, frames: Var) -> Result<Var> {
        let mut x = frames;
        for layer in &self.blocks {
            let (w, b) = self.leaf(tape, layer);
            x = tape.conv2d(x, w, Some(b), 1)?;
            x = tape.leaky_relu(x, self.cfg.slope);
            x = tape.max_pool2d(x, 2)?;
        }
        let pooled = tape.global_avg(x, 2)?;
        let (w, b) = self.leaf(tape, &self.proj);
        tape.linear(pooled, w, Some(b))
    }

    /// `M* x D` embeddings to `M* x classes`; row `i` reads only row `i`.
    pub fn frame_branch(&self, tape: &mut Tape<T>, emb: Var) -> Result<Var> {
        let (w, b) = self.leaf(tape, &self.frame_head);
        if self.cfg.shared_frame_classifier {
            tape.linear(emb, w, Some(b))
        } else {
            tape.grouped_linear(emb, w, Some(b))
        }
    }

    /// `M* x D` embeddings to one `classes` vector.
    pub fn video_branch(&self, tape: &mut Tape<T>, emb: Var) -> Result<Var> {
        let seq = tape.transpose(emb)?;
        let (w1, b1) = self.leaf(tape, &self.video1);
        let x = tape.conv1d(seq, w1, Some(b1), 0)?;
        let x = tape.leaky_relu(x, self.cfg.slope);
        let (w2, b2) = self.leaf(tape, &self.video2);
        let x = tape.conv1d(x, w2, Some(b2), 0)?;
        let x = tape.max_pool1d(x, self.cfg.pool)?;
        tape.global_max(x, 1)
    }

    pub fn forward(&self, tape: &mut Tape<T>, frames: &FrameStack) -> Result<Heads> {
        let x = self.compress(tape, frames)?;
        let emb = self.cnn_encode(tape, x)?;
        Ok(Heads {
            frames: self.frame_branch(tape, emb)?,
            video: self.video_branch(tape, emb)?,
        })
    }

    /// Mean of all classifier logits, the training-time prediction.
    pub fn averaged_logits(&self, tape: &mut Tape<T>, heads: Heads) -> Result<Var> {
        let all = tape.concat_rows(&[heads.frames, heads.video])?;
        tape.mean_rows(all)
    }

    pub fn loss(&self, tape: &mut Tape<T>, frames: &FrameStack, label: usize) -> Result<Var> {
        let heads = self.forward(tape, frames)?;
        let avg = self.averaged_logits(tape, heads)?;
        tape.softmax_cross_entropy(avg, label)
    }

    pub fn predict(&self, frames: &FrameStack) -> Result<PredictionSet> {
        let mut tape = Tape::new();
        let heads = self.forward(&mut tape, frames)?;
        let k = self.cfg.num_classes;
        let to_f32 = |v: &[T]| v.iter().map(|x| x.as_f64() as f32).collect::<Vec<f32>>();
        let mut logits: Vec<Vec<f32>> = tape.value(heads.frames).data().chunks(k).map(to_f32).collect();
        logits.push(to_f32(tape.value(heads.video).data()));
        Ok(PredictionSet { logits })
    }
}
