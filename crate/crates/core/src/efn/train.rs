use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::synthesis::synthesize_subset;
use super::{argmax, average_predictions, synthesize, AccuracyMatrix, Efn, PredictionSet};
use crate::encoder::{prepare_frames, EncoderConfig, FrameStack};
use crate::error::{Error, Result};
use crate::event::EventSample;
use crate::nn::{adam_step, cosine_warmup_lr, AdamState, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_frac: f64,
    pub seed: u64,
    /// Threads for per-sample gradients and evaluation.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            base_lr: 1e-4,
            warmup_frac: 0.1,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub accuracy: AccuracyMatrix,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs the weight-free part of the encoder on every sample and pairs the
/// result with its label.
pub fn prepare_inputs(samples: &[EventSample], encoder: &EncoderConfig, workers: usize) -> Result<Vec<(FrameStack, u32)>> {
    pool(workers)?.install(|| {
        samples
            .par_iter()
            .map(|s| {
                let label = s
                    .label()
                    .ok_or_else(|| Error::Validation(format!("sample {:?} has no label", s.sample_id())))?;
                Ok((prepare_frames(s, encoder)?, label))
            })
            .collect()
    })
}

pub fn predict_all(model: &Efn<f32>, inputs: &[(FrameStack, u32)], workers: usize) -> Result<Vec<PredictionSet>> {
    pool(workers)?.install(|| inputs.par_iter().map(|(f, _)| model.predict(f)).collect())
}

fn check_labels(inputs: &[(FrameStack, u32)], classes: usize) -> Result<()> {
    match inputs.iter().find(|(_, l)| *l as usize >= classes) {
        Some((_, l)) => Err(Error::Validation(format!("label {l} out of range for {classes} classes"))),
        None => Ok(()),
    }
}

fn averaged_accuracy(preds: &[PredictionSet], inputs: &[(FrameStack, u32)]) -> Result<f64> {
    let mut correct = 0;
    for (p, (_, label)) in preds.iter().zip(inputs) {
        if argmax(&average_predictions(p)?) == *label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / preds.len() as f64)
}

/// Trains on prepared inputs with Adam under a warm-up cosine schedule,
/// keeps the parameters with the best averaged validation accuracy, and
/// records the accuracy table for synthesis into the model.
pub fn train(
    model: &mut Efn<f32>,
    train_set: &[(FrameStack, u32)],
    val_set: &[(FrameStack, u32)],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Empty("training needs non-empty train and validation splits".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("epochs and batch size must be positive".into()));
    }
    let classes = model.config().num_classes;
    check_labels(train_set, classes)?;
    check_labels(val_set, classes)?;
    let workers = pool(cfg.workers)?;
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, crate::nn::ParamStore<f32>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let m = &*model;
            let per_sample: Vec<(f64, Vec<Vec<f32>>)> = workers.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let (frames, label) = &train_set[i];
                        let mut tape = Tape::new();
                        let loss = m.loss(&mut tape, frames, *label as usize)?;
                        let grads = tape.backward(loss)?;
                        Ok((tape.value(loss).item() as f64, grads.for_params(m.params())))
                    })
                    .collect::<Result<_>>()
            })?;
            // fixed summation order keeps results independent of threading
            let scale = 1.0 / batch.len() as f32;
            let mut iter = per_sample.into_iter();
            let (l0, mut grads) = iter.next().expect("batches are non-empty");
            loss_sum += l0;
            for (l, g) in iter {
                loss_sum += l;
                for (a, b) in grads.iter_mut().zip(g) {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
            }
            grads.iter_mut().flatten().for_each(|v| *v *= scale);
            step += 1;
            let lr = cosine_warmup_lr(step, total, cfg.base_lr, cfg.warmup_frac)?;
            adam_step(model.params_mut(), &grads, &mut adam, lr)?;
        }
        let preds = workers.install(|| val_set.par_iter().map(|(f, _)| model.predict(f)).collect::<Result<Vec<_>>>())?;
        let val_accuracy = averaged_accuracy(&preds, val_set)?;
        let train_loss = loss_sum / train_set.len() as f64;
        log::info!("epoch {epoch}: train_loss={train_loss:.4} val_acc={val_accuracy:.4}");
        history.push(EpochStats {
            epoch,
            train_loss,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(_, acc, _)| val_accuracy > *acc) {
            best = Some((epoch, val_accuracy, model.params().clone()));
        }
    }

    let (best_epoch, best_val_accuracy, params) = best.expect("at least one epoch ran");
    *model.params_mut() = params;
    let preds = predict_all(model, val_set, cfg.workers)?;
    let labels: Vec<u32> = val_set.iter().map(|(_, l)| *l).collect();
    let accuracy = AccuracyMatrix::from_predictions(&preds, &labels, classes)?;
    accuracy.store_into(model.params_mut())?;
    Ok(TrainResult {
        history,
        best_epoch,
        best_val_accuracy,
        accuracy,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EvalMode {
    /// Accuracy-weighted sum over every classifier.
    Synthesis,
    /// Plain mean of every classifier's logits.
    Average,
    /// Accuracy-weighted sum over the frame classifiers only.
    FrameOnly,
    /// The video classifier alone.
    VideoOnly,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] = [EvalMode::Synthesis, EvalMode::Average, EvalMode::FrameOnly, EvalMode::VideoOnly];

    pub fn combine(self, preds: &PredictionSet, acc: &AccuracyMatrix) -> Result<Vec<f32>> {
        match self {
            EvalMode::Synthesis => synthesize(preds, acc),
            EvalMode::Average => average_predictions(preds),
            EvalMode::FrameOnly => synthesize_subset(preds, acc, 0..preds.frames().len()),
            EvalMode::VideoOnly => Ok(preds.video().to_vec()),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Synthesis => "synthesis",
            EvalMode::Average => "average",
            EvalMode::FrameOnly => "frame-only",
            EvalMode::VideoOnly => "video-only",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthesis" => Ok(EvalMode::Synthesis),
            "average" => Ok(EvalMode::Average),
            "frame-only" => Ok(EvalMode::FrameOnly),
            "video-only" => Ok(EvalMode::VideoOnly),
            other => Err(Error::Config(format!(
                "unknown evaluation mode {other:?} (expected synthesis, average, frame-only, video-only)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u32>>,
    /// Recall per true class; 0 for classes absent from the set.
    pub per_class_accuracy: Vec<f64>,
}

impl EvalReport {
    pub fn from_predictions(preds: &[PredictionSet], labels: &[u32], acc: &AccuracyMatrix, mode: EvalMode) -> Result<Self> {
        if preds.is_empty() {
            return Err(Error::Empty("no samples to evaluate".into()));
        }
        let classes = acc.classes;
        let mut confusion = vec![vec![0u32; classes]; classes];
        for (p, &label) in preds.iter().zip(labels) {
            let q = argmax(&mode.combine(p, acc)?);
            let row = confusion
                .get_mut(label as usize)
                .ok_or_else(|| Error::Validation(format!("label {label} out of range for {classes} classes")))?;
            row[q] += 1;
        }
        let correct: u32 = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: u32 = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[c] as f64 / n as f64
                }
            })
            .collect();
        Ok(Self {
            mode,
            accuracy: correct as f64 / preds.len() as f64,
            confusion,
            per_class_accuracy,
        })
    }

    pub fn total(&self) -> u32 {
        self.confusion.iter().flatten().sum()
    }

    /// Human-readable report with the confusion matrix.
    pub fn to_text(&self) -> String {
        let mut s = format!("mode: {}\naccuracy: {:.4} ({} samples)\n", self.mode, self.accuracy, self.total());
        s.push_str("confusion (rows true, columns predicted):\n");
        for (c, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>5}")).collect();
            s.push_str(&format!("  {c:>3} |{}   acc {:.4}\n", cells.join(""), self.per_class_accuracy[c]));
        }
        s
    }

    /// `key=value` lines.
    pub fn summary(&self) -> String {
        let mut s = format!("mode={}\naccuracy={:.6}\nsamples={}\n", self.mode, self.accuracy, self.total());
        for (c, a) in self.per_class_accuracy.iter().enumerate() {
            s.push_str(&format!("per_class_acc_{c}={a:.6}\n"));
        }
        s
    }
}

pub fn evaluate(
    model: &Efn<f32>,
    acc: &AccuracyMatrix,
    inputs: &[(FrameStack, u32)],
    mode: EvalMode,
    workers: usize,
) -> Result<EvalReport> {
    if inputs.is_empty() {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    let preds = predict_all(model, inputs, workers)?;
    let labels: Vec<u32> = inputs.iter().map(|(_, l)| *l).collect();
    EvalReport::from_predictions(&preds, &labels, acc, mode)
}
