mod args;
mod checkpoint;

use std::fs;
use std::path::{Path, PathBuf};

use aet_core::bench::{bench_pipeline, random_sample, scaling_check, scaling_table, BenchStage};
use aet_core::dataset::{class_count, load_dataset, load_split, write_dataset, SplitName};
use aet_core::efn::{evaluate, prepare_inputs, train, Efn, EfnConfig, TrainConfig};
use aet_core::encoder::{encode_batch, EncoderConfig};
use aet_core::event::{load_events, window_slice, EventFormat, EventSample, SensorGeometry};
use aet_core::nn::ParamStore;
use aet_core::synth::{make_dataset, Split, TaskOptions, TaskSpec};
use aet_core::tensor_io::{load_tensor, save_tensor};
use aet_core::viz::export_frames;
use anyhow::{anyhow, bail, ensure, Context, Result};
use args::{BenchArgs, Cli, Command, EncodeArgs, EncoderArgs, EvalArgs, GenArgs, TrainArgs, VizArgs};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let result = args::parse(std::env::args_os().collect()).and_then(run);
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers as usize;
    match cli.command {
        Command::Gen(a) => cmd_gen(a, cli.seed),
        Command::Encode(a) => cmd_encode(a, cli.seed, workers),
        Command::Train(a) => cmd_train(a, cli.seed, workers),
        Command::Eval(a) => cmd_eval(a, workers),
        Command::Bench(a) => cmd_bench(a, cli.seed),
        Command::Viz(a) => cmd_viz(a),
    }
}

fn cmd_gen(a: GenArgs, seed: u64) -> Result<()> {
    let [train, val, test] = <[f64; 3]>::try_from(a.split.as_slice())
        .map_err(|_| anyhow!("--split takes three fractions, got {}", a.split.len()))?;
    ensure!(a.duration_ms > 0.0, "--duration-ms must be positive");
    let opts = TaskOptions {
        geometry: SensorGeometry::new(a.width, a.height)?,
        duration_us: (a.duration_ms * 1000.0).round() as u64,
        frame_rate: a.frame_rate,
        threshold: a.threshold,
        noise_rate: a.noise,
        num_classes: a.classes,
        slots: a.slots,
    };
    let spec = TaskSpec::preset(a.task, a.per_class, Split::new(train, val, test)?, &opts)?;
    let ds = make_dataset(&spec, seed)?;
    let manifest = write_dataset(&ds, &a.out)?;
    println!(
        "wrote {} train, {} val, {} test samples of {} classes; manifest {}",
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        spec.classes.len(),
        manifest.display()
    );
    Ok(())
}

/// Builds the encoder from flags, optionally replacing stage weights.
fn encoder_from(a: &EncoderArgs, weights: Option<&Path>, seed: u64) -> Result<EncoderConfig> {
    let input = a.mode.input_channels();
    let widths = match &a.channels {
        Some(c) => {
            ensure!(
                c.len() == a.groups.len() + 1,
                "--channels needs {} entries (input plus one per group), got {}",
                a.groups.len() + 1,
                c.len()
            );
            ensure!(c[0] == input, "mode {} takes {input} input channel(s), --channels starts with {}", a.mode, c[0]);
            c[1..].to_vec()
        }
        None => {
            ensure!(a.groups.len() == 2, "--channels is required unless there are exactly two groups");
            vec![4, 3]
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = EncoderConfig::build(a.mhat, a.mode, &a.groups, &widths, a.kernel, &mut rng)?;
    if let Some(path) = weights {
        let store = ParamStore::<f32>::load(path).with_context(|| format!("loading weights {}", path.display()))?;
        for (i, stage) in cfg.stages.iter_mut().enumerate() {
            for (name, dst) in [(format!("stage{i}.weight"), &mut stage.weights), (format!("stage{i}.bias"), &mut stage.bias)] {
                let id = store.id(&name).ok_or_else(|| anyhow!("{} has no {name:?}", path.display()))?;
                let src = store.tensor(id).data();
                ensure!(src.len() == dst.len(), "{name:?} holds {} values, the encoder needs {}", src.len(), dst.len());
                dst.copy_from_slice(src);
            }
        }
    }
    Ok(cfg)
}

fn cmd_encode(a: EncodeArgs, seed: u64, workers: usize) -> Result<()> {
    let cfg = encoder_from(&a.encoder, a.weights.as_deref(), seed)?;
    let (samples, out_dir): (Vec<EventSample>, bool) = if a.manifest {
        let ds = load_dataset(&a.input)?;
        (ds.train.into_iter().chain(ds.val).chain(ds.test).collect(), true)
    } else {
        let format = if a.csv {
            let (w, h) = a
                .width
                .zip(a.height)
                .ok_or_else(|| anyhow!("CSV input needs --width and --height"))?;
            EventFormat::Csv {
                geometry: SensorGeometry::new(w, h)?,
                label: a.label,
            }
        } else {
            EventFormat::Binary
        };
        let sample = load_events(&a.input, format)?;
        match a.window_us {
            Some(w) => (window_slice(&sample, w, a.step_us.unwrap_or(w))?, true),
            None => (vec![sample], false),
        }
    };
    let tensors = encode_batch(&samples, &cfg, workers)?;
    if out_dir {
        fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
        for (i, (s, t)) in samples.iter().zip(&tensors).enumerate() {
            let name = if a.manifest { s.sample_id().to_string() } else { format!("window_{i:04}") };
            save_tensor(a.out.join(format!("{name}.aetf")), t)?;
        }
    } else {
        save_tensor(&a.out, &tensors[0])?;
    }
    let d = tensors[0].dims();
    println!(
        "encoded {} sample(s) to {} as {}x{}x{}x{} (channels x frames x height x width)",
        tensors.len(),
        a.out.display(),
        d[0],
        d[1],
        d[2],
        d[3]
    );
    Ok(())
}

fn cmd_train(a: TrainArgs, seed: u64, workers: usize) -> Result<()> {
    let ds = load_dataset(&a.manifest)?;
    ensure!(!ds.train.is_empty(), "manifest has no train samples");
    ensure!(!ds.val.is_empty(), "manifest has no val samples");
    let classes = class_count(ds.train.iter().chain(&ds.val).chain(&ds.test));
    ensure!(classes >= 2, "need at least two classes, found {classes}");
    let geom = ds.train[0].geometry();
    let encoder = encoder_from(&a.encoder, None, seed)?;
    let cfg = EfnConfig {
        feature_dim: a.feature_dim,
        backbone_widths: a.widths.clone(),
        k1: a.k1,
        k2: a.k2,
        pool: a.pool,
        video_hidden: a.video_hidden.unwrap_or(a.feature_dim),
        shared_frame_classifier: a.shared_frame_classifier,
        ..EfnConfig::new(classes)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut model = Efn::<f32>::new(cfg, encoder.clone(), geom.height as usize, geom.width as usize, &mut rng)?;
    info!("encoding {} train and {} val samples", ds.train.len(), ds.val.len());
    let tr = prepare_inputs(&ds.train, &encoder, workers)?;
    let va = prepare_inputs(&ds.val, &encoder, workers)?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        base_lr: a.lr,
        warmup_frac: a.warmup,
        seed,
        workers,
    };
    let res = train(&mut model, &tr, &va, &tc)?;
    if let Some(p) = &a.history {
        let mut s = String::from("epoch,train_loss,val_accuracy\n");
        for e in &res.history {
            s.push_str(&format!("{},{:.6},{:.6}\n", e.epoch, e.train_loss, e.val_accuracy));
        }
        fs::write(p, s).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    checkpoint::save(&model, &a.out)?;
    println!(
        "best epoch {} with val accuracy {:.4}; checkpoint {}",
        res.best_epoch,
        res.best_val_accuracy,
        a.out.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs, workers: usize) -> Result<()> {
    let (model, acc) = checkpoint::load(&a.checkpoint)?;
    let split: SplitName = a.split.parse()?;
    let samples = load_split(&a.manifest, split)?;
    ensure!(!samples.is_empty(), "split {split} of {} is empty", a.manifest.display());
    let inputs = prepare_inputs(&samples, &model.encoder_config(), workers)?;
    let report = evaluate(&model, &acc, &inputs, a.mode, workers)?;
    print!("{}", report.to_text());
    if let Some(p) = &a.report {
        fs::write(p, report.summary()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs, seed: u64) -> Result<()> {
    let loaded = a.checkpoint.as_deref().map(checkpoint::load).transpose()?;
    if a.stage == BenchStage::Full && loaded.is_none() {
        bail!("--stage full needs --checkpoint");
    }
    let encoder = match &loaded {
        Some((m, _)) => m.encoder_config(),
        None => encoder_from(&a.encoder, None, seed)?,
    };
    let samples: Vec<EventSample> = match &a.manifest {
        Some(m) => {
            let ds = load_dataset(m)?;
            ds.train.into_iter().chain(ds.val).chain(ds.test).collect()
        }
        None => {
            let geom = match &loaded {
                Some((m, _)) => {
                    let (h, w) = m.frame_size();
                    SensorGeometry::new(w as u16, h as u16)?
                }
                None => SensorGeometry::new(a.side, a.side)?,
            };
            (0..a.samples as u64)
                .map(|i| random_sample(a.events, geom, seed.wrapping_add(i)))
                .collect::<aet_core::Result<_>>()?
        }
    };
    let report = bench_pipeline(&samples, loaded.as_ref().map(|(m, acc)| (m, acc)), &encoder, a.stage)?;
    print!("{}", report.to_table());
    if let Some(counts) = &a.scaling {
        let rows = scaling_check(counts, samples[0].geometry(), &encoder, 5, seed)?;
        print!("{}", scaling_table(&rows));
    }
    if let Some(p) = &a.summary {
        fs::write(p, report.summary()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_viz(a: VizArgs) -> Result<()> {
    let t = load_tensor(&a.input)?;
    let files: Vec<PathBuf> = export_frames(&t, &a.out)?;
    println!("wrote {} images to {}", files.len(), a.out.display());
    Ok(())
}
