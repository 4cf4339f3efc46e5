//! Checkpoints are an EFNW parameter file plus a `<path>.cfg` sidecar of
//! `key=value` lines describing the architecture.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use aet_core::efn::{AccuracyMatrix, Efn, EfnConfig};
use aet_core::encoder::{EncoderConfig, EncoderMode};
use aet_core::nn::ParamStore;
use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn describe(model: &Efn<f32>) -> String {
    let enc = model.encoder_config();
    let cfg = model.config();
    let (h, w) = model.frame_size();
    let groups: Vec<usize> = enc.stages.iter().map(|s| s.group_size).collect();
    let channels: Vec<usize> = enc.stages.iter().map(|s| s.out_channels).collect();
    let kernel = enc.stages.first().map_or(1, |s| s.kernel);
    format!(
        "height={h}\nwidth={w}\nmhat={}\nmode={}\ngroups={}\nchannels={}\nkernel={kernel}\nclasses={}\nfeature_dim={}\nwidths={}\nk1={}\nk2={}\npool={}\nvideo_hidden={}\nshared_frame_classifier={}\nslope={}\n",
        enc.m_hat,
        enc.mode,
        join(&groups),
        join(&channels),
        cfg.num_classes,
        cfg.feature_dim,
        join(&cfg.backbone_widths),
        cfg.k1,
        cfg.k2,
        cfg.pool,
        cfg.video_hidden,
        cfg.shared_frame_classifier,
        cfg.slope,
    )
}

pub fn save(model: &Efn<f32>, path: &Path) -> Result<()> {
    model.params().save(path)?;
    let side = sidecar_path(path);
    std::fs::write(&side, describe(model)).with_context(|| format!("writing {}", side.display()))
}

struct Sidecar(BTreeMap<String, String>);

impl Sidecar {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.0.get(key).ok_or_else(|| anyhow!("checkpoint config lacks {key:?}"))?;
        v.parse().map_err(|_| anyhow!("checkpoint config: bad value {v:?} for {key:?}"))
    }

    fn list(&self, key: &str) -> Result<Vec<usize>> {
        let v: String = self.get(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|x| x.trim().parse().map_err(|_| anyhow!("checkpoint config: bad list {v:?} for {key:?}")))
            .collect()
    }
}

/// Loads the model and its stored accuracy table.
pub fn load(path: &Path) -> Result<(Efn<f32>, AccuracyMatrix)> {
    if !path.exists() {
        bail!("checkpoint {} does not exist; run `aetefn train` first", path.display());
    }
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).with_context(|| format!("reading checkpoint config {}", side.display()))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{} line {}: expected key=value", side.display(), i + 1))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let sc = Sidecar(map);
    let mode: EncoderMode = sc.get::<String>("mode")?.parse()?;
    // placeholder weights, overwritten from the stored parameters
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let enc = EncoderConfig::build(sc.get("mhat")?, mode, &sc.list("groups")?, &sc.list("channels")?, sc.get("kernel")?, &mut rng)?;
    let cfg = EfnConfig {
        num_classes: sc.get("classes")?,
        feature_dim: sc.get("feature_dim")?,
        backbone_widths: sc.list("widths")?,
        k1: sc.get("k1")?,
        k2: sc.get("k2")?,
        pool: sc.get("pool")?,
        video_hidden: sc.get("video_hidden")?,
        shared_frame_classifier: sc.get("shared_frame_classifier")?,
        slope: sc.get("slope")?,
    };
    let mut model = Efn::<f32>::new(cfg, enc, sc.get("height")?, sc.get("width")?, &mut rng)?;
    let stored = ParamStore::<f32>::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    model.params_mut().load_from(&stored)?;
    let acc = AccuracyMatrix::load_from(&stored)?;
    Ok((model, acc))
}
