//! Per-sample latency and event throughput.
//!
//! Samples are preloaded and processed one at a time on the calling thread.
//! The first [`WARMUP_RUNS`] measurements are discarded.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::efn::{synthesize, AccuracyMatrix, Efn};
use crate::encoder::{encode, prepare_frames, EncoderConfig};
use crate::error::{Error, Result};
use crate::event::{Event, EventSample, Polarity, SensorGeometry};

pub const WARMUP_RUNS: usize = 3;
pub const MIN_SAMPLES: usize = 10;
/// GPU figures from the original evaluation, printed for context only.
pub const REFERENCE_LATENCY_MS: f64 = 3.18;
pub const REFERENCE_THROUGHPUT_KEV_S: f64 = 1194.20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchStage {
    EncodeOnly,
    Full,
}

impl fmt::Display for BenchStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchStage::EncodeOnly => "encode-only",
            BenchStage::Full => "full",
        })
    }
}

impl FromStr for BenchStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encode-only" | "encode" => Ok(BenchStage::EncodeOnly),
            "full" => Ok(BenchStage::Full),
            other => Err(Error::Config(format!("unknown bench stage {other:?} (expected encode-only, full)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub stage: BenchStage,
    pub samples: usize,
    pub total_events: u64,
    pub total_seconds: f64,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    /// Thousands of events per second over all measured samples.
    pub throughput_kev_s: f64,
    pub fingerprint: String,
}

impl BenchReport {
    fn from_timings(stage: BenchStage, fingerprint: String, timings: &[(u64, f64)]) -> Self {
        let mut ms: Vec<f64> = timings.iter().map(|&(_, s)| s * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let total_events: u64 = timings.iter().map(|&(n, _)| n).sum();
        let total_seconds: f64 = timings.iter().map(|&(_, s)| s).sum();
        Self {
            stage,
            samples: timings.len(),
            total_events,
            total_seconds,
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            median_ms: percentile(&ms, 0.5),
            p95_ms: percentile(&ms, 0.95),
            throughput_kev_s: total_events as f64 / total_seconds.max(f64::MIN_POSITIVE) / 1e3,
            fingerprint,
        }
    }

    pub fn to_table(&self) -> String {
        let rows = [
            ("stage", self.stage.to_string()),
            ("config", self.fingerprint.clone()),
            ("samples", self.samples.to_string()),
            ("events", self.total_events.to_string()),
            ("mean latency", format!("{:.3} ms", self.mean_ms)),
            ("median latency", format!("{:.3} ms", self.median_ms)),
            ("p95 latency", format!("{:.3} ms", self.p95_ms)),
            ("throughput", format!("{:.2} kEv/s", self.throughput_kev_s)),
            (
                "reference (GPU)",
                format!("{REFERENCE_LATENCY_MS} ms, {REFERENCE_THROUGHPUT_KEV_S} kEv/s, not a target"),
            ),
        ];
        rows.iter().map(|(k, v)| format!("{k:<16} {v}\n")).collect()
    }

    pub fn summary(&self) -> String {
        format!(
            "stage={}\nconfig={}\nsamples={}\ntotal_events={}\ntotal_seconds={:.6}\nmean_ms={:.6}\nmedian_ms={:.6}\np95_ms={:.6}\nthroughput_kev_s={:.3}\nreference_latency_ms={REFERENCE_LATENCY_MS}\nreference_throughput_kev_s={REFERENCE_THROUGHPUT_KEV_S}\n",
            self.stage,
            self.fingerprint,
            self.samples,
            self.total_events,
            self.total_seconds,
            self.mean_ms,
            self.median_ms,
            self.p95_ms,
            self.throughput_kev_s
        )
    }
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn fingerprint(cfg: &EncoderConfig, geometry: SensorGeometry) -> String {
    let groups: Vec<String> = cfg.stages.iter().map(|s| s.group_size.to_string()).collect();
    let mut channels = vec![cfg.mode.input_channels().to_string()];
    channels.extend(cfg.stages.iter().map(|s| s.out_channels.to_string()));
    let kernel = cfg.stages.first().map_or(0, |s| s.kernel);
    format!(
        "mode={} m_hat={} groups={} channels={} kernel={kernel} geometry={}x{}",
        cfg.mode,
        cfg.m_hat,
        groups.join(","),
        channels.join(","),
        geometry.width,
        geometry.height
    )
}

/// Times each sample in order. `Full` needs a model and runs encoding,
/// both branches and synthesis; `EncodeOnly` uses the model's encoder
/// weights when given, otherwise `encoder`.
pub fn bench_pipeline(
    samples: &[EventSample],
    model: Option<(&Efn<f32>, &AccuracyMatrix)>,
    encoder: &EncoderConfig,
    stage: BenchStage,
) -> Result<BenchReport> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Empty(format!(
            "benchmarking needs at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let enc = model.map_or_else(|| encoder.clone(), |(m, _)| m.encoder_config());
    let run = |s: &EventSample| -> Result<()> {
        match (stage, model) {
            (BenchStage::EncodeOnly, _) => encode(s, &enc).map(|_| ()),
            (BenchStage::Full, Some((m, acc))) => {
                let preds = m.predict(&prepare_frames(s, &enc)?)?;
                synthesize(&preds, acc).map(|_| ())
            }
            (BenchStage::Full, None) => Err(Error::Config("the full pipeline needs a trained model".into())),
        }
    };
    let mut timings = Vec::with_capacity(samples.len());
    for s in samples {
        let start = Instant::now();
        run(s)?;
        timings.push((s.len() as u64, start.elapsed().as_secs_f64()));
    }
    Ok(BenchReport::from_timings(
        stage,
        fingerprint(&enc, samples[0].geometry()),
        &timings[WARMUP_RUNS..],
    ))
}

/// A sample followed by a copy of itself shifted past its last event.
pub fn concat_shifted(sample: &EventSample) -> Result<EventSample> {
    let (lo, hi) = sample
        .time_range()
        .ok_or_else(|| Error::Empty("cannot extend an empty sample".into()))?;
    let shift = hi - lo + 1;
    let mut events = sample.events().to_vec();
    events.extend(sample.events().iter().map(|e| Event::new(e.x, e.y, e.t + shift, e.p)));
    EventSample::new(events, sample.geometry(), sample.label(), sample.sample_id())
}

/// Uniformly random events over one second.
pub fn random_sample(n: usize, geometry: SensorGeometry, seed: u64) -> Result<EventSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events: Vec<Event> = (0..n)
        .map(|_| {
            let p = if rng.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
            Event::new(rng.random_range(0..geometry.width), rng.random_range(0..geometry.height), rng.random_range(0..1_000_000), p)
        })
        .collect();
    events.sort_by_key(|e| e.t);
    EventSample::new(events, geometry, None, format!("random-{n}"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub events: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    /// Coefficient of variation over the repeats.
    pub cv: f64,
}

/// Encode-only time against event count. Each count is timed `repeats`
/// times after one untimed warm-up.
pub fn scaling_check(counts: &[usize], geometry: SensorGeometry, cfg: &EncoderConfig, repeats: usize, seed: u64) -> Result<Vec<ScalingRow>> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be positive".into()));
    }
    if counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("event counts must be increasing".into()));
    }
    counts
        .iter()
        .map(|&n| {
            let sample = random_sample(n, geometry, seed ^ n as u64)?;
            encode(&sample, cfg)?;
            let mut ms = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let start = Instant::now();
                encode(&sample, cfg)?;
                ms.push(start.elapsed().as_secs_f64() * 1e3);
            }
            let mean = ms.iter().sum::<f64>() / repeats as f64;
            let var = ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / repeats as f64;
            ms.sort_by(f64::total_cmp);
            Ok(ScalingRow {
                events: n,
                mean_ms: mean,
                median_ms: percentile(&ms, 0.5),
                cv: if mean > 0.0 { var.sqrt() / mean } else { 0.0 },
            })
        })
        .collect()
}

pub fn scaling_table(rows: &[ScalingRow]) -> String {
    let mut s = format!("{:>10} {:>12} {:>12} {:>8}\n", "events", "mean_ms", "median_ms", "cv");
    for r in rows {
        s.push_str(&format!("{:>10} {:>12.3} {:>12.3} {:>8.3}\n", r.events, r.mean_ms, r.median_ms, r.cv));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> EncoderConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        EncoderConfig::build(10, crate::encoder::EncoderMode::Aet, &[2, 5], &[2, 3], 3, &mut rng).unwrap()
    }

    fn samples(n: usize) -> Vec<EventSample> {
        let g = SensorGeometry::new(8, 8).unwrap();
        (0..n).map(|i| random_sample(100 + i * 10, g, i as u64).unwrap()).collect()
    }

    #[test]
    fn throughput_is_events_over_time() {
        let r = bench_pipeline(&samples(12), None, &small_cfg(), BenchStage::EncodeOnly).unwrap();
        assert_eq!(r.samples, 12 - WARMUP_RUNS);
        let expected: u64 = (WARMUP_RUNS..12).map(|i| 100 + i as u64 * 10).sum();
        assert_eq!(r.total_events, expected);
        let kev = r.total_events as f64 / r.total_seconds / 1e3;
        assert!((r.throughput_kev_s - kev).abs() <= 1e-9 * kev);
        assert!(r.median_ms <= r.p95_ms);
        let s = r.summary();
        for key in ["mean_ms=", "median_ms=", "p95_ms=", "throughput_kev_s=", "config=mode=aet"] {
            assert!(s.contains(key), "{key}");
        }
    }

    #[test]
    fn needs_ten_samples_and_a_model_for_full() {
        assert!(bench_pipeline(&samples(9), None, &small_cfg(), BenchStage::EncodeOnly).is_err());
        assert!(bench_pipeline(&samples(10), None, &small_cfg(), BenchStage::Full).is_err());
    }

    #[test]
    fn doubled_sample_has_twice_the_events() {
        let s = samples(1).remove(0);
        let d = concat_shifted(&s).unwrap();
        assert_eq!(d.len(), 2 * s.len());
        let (lo, hi) = s.time_range().unwrap();
        assert_eq!(d.time_range().unwrap(), (lo, 2 * hi - lo + 1));
    }

    #[test]
    fn scaling_rows_follow_counts() {
        let g = SensorGeometry::new(8, 8).unwrap();
        let rows = scaling_check(&[1, 100, 1000], g, &small_cfg(), 3, 1).unwrap();
        assert_eq!(rows.iter().map(|r| r.events).collect::<Vec<_>>(), vec![1, 100, 1000]);
        assert!(rows.iter().all(|r| r.mean_ms >= 0.0 && r.cv >= 0.0));
        assert!(scaling_check(&[10, 5], g, &small_cfg(), 3, 1).is_err());
        assert!(scaling_table(&rows).lines().count() == 4);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 10.0);
        assert_eq!(percentile(&v, 0.95), 19.0);
        assert_eq!(percentile(&[3.0], 0.95), 3.0);
    }
}
