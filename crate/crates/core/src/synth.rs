//! Threshold-crossing event camera simulator and synthetic task datasets.
//!
//! Every pixel keeps a reference log intensity. At each virtual frame the
//! rendered log intensity is compared against it, and one event is emitted
//! per whole threshold crossed, moving the reference by `±threshold` each
//! time. Spurious noise events are then mixed in.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::event::{Event, EventSample, Polarity, SensorGeometry};

pub const INTENSITY_FLOOR: f64 = 0.05;
const BACKGROUND: f64 = 0.2;
const FOREGROUND: f64 = 0.8;
// keeps a ramp of exactly k thresholds from losing its last event to rounding
const CROSSING_SLACK: f64 = 1e-9;

/// Per-pixel threshold-crossing state.
#[derive(Clone, Debug)]
pub struct EventSimulator {
    geometry: SensorGeometry,
    threshold: f64,
    l_ref: Vec<f64>,
    events: Vec<Event>,
}

impl EventSimulator {
    pub fn new(geometry: SensorGeometry, threshold: f64, initial_log: &[f64]) -> Result<Self> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(Error::Config(format!("threshold must be positive, got {threshold}")));
        }
        if initial_log.len() != geometry.pixels() {
            return Err(Error::Shape(format!(
                "{} initial values for {} pixels",
                initial_log.len(),
                geometry.pixels()
            )));
        }
        Ok(Self {
            geometry,
            threshold,
            l_ref: initial_log.to_vec(),
            events: Vec::new(),
        })
    }

    /// Compares one frame of log intensities against the references and
    /// emits the resulting events at time `t`.
    pub fn step(&mut self, t: u64, log: &[f64]) {
        let w = self.geometry.width as usize;
        for (i, (r, &l)) in self.l_ref.iter_mut().zip(log).enumerate() {
            let diff = l - *r;
            let n = (diff.abs() / self.threshold + CROSSING_SLACK).floor() as u64;
            if n == 0 {
                continue;
            }
            let (p, sign) = if diff > 0.0 { (Polarity::Positive, 1.0) } else { (Polarity::Negative, -1.0) };
            let (x, y) = ((i % w) as u16, (i / w) as u16);
            for _ in 0..n {
                self.events.push(Event::new(x, y, t, p));
            }
            *r += sign * n as f64 * self.threshold;
        }
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Disc,
    Square,
    Bar,
    FlashPair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlashOrder {
    AThenB,
    BThenA,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Motion {
    /// Small triangular saccade of the given amplitude in pixels.
    StaticJitter { amplitude: f64 },
    /// Constant velocity in pixels per second.
    Translate { vx: f64, vy: f64 },
    /// Two flashing regions in adjacent time slots out of `slots`.
    TemporalOrder { order: FlashOrder, slots: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub geometry: SensorGeometry,
    pub duration_us: u64,
    /// Virtual frames per second.
    pub frame_rate: f64,
    pub shape: ShapeKind,
    pub motion: Motion,
    pub threshold: f64,
    /// Spurious events per pixel per second.
    pub noise_rate: f64,
    pub seed: u64,
}

impl SceneConfig {
    pub fn num_frames(&self) -> u64 {
        (self.duration_us as f64 * self.frame_rate / 1e6).floor() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!("threshold must be positive, got {}", self.threshold)));
        }
        if self.duration_us == 0 {
            return Err(Error::Config("duration must be positive".into()));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return Err(Error::Config(format!("noise rate must be non-negative, got {}", self.noise_rate)));
        }
        if !(self.frame_rate > 0.0) || self.num_frames() < 2 {
            return Err(Error::Config(format!(
                "frame rate {} over {} us gives fewer than 2 virtual frames",
                self.frame_rate, self.duration_us
            )));
        }
        match (self.shape, self.motion) {
            (ShapeKind::FlashPair, Motion::TemporalOrder { slots, .. }) if slots >= 2 => Ok(()),
            (ShapeKind::FlashPair, _) | (_, Motion::TemporalOrder { .. }) => Err(Error::Config(
                "flash-pair shape and temporal-order motion go together, with at least 2 slots".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Anti-aliased coverage from a signed distance (negative inside).
fn coverage(d: f64) -> f64 {
    (0.5 - d).clamp(0.0, 1.0)
}

fn box_distance(dx: f64, dy: f64, hx: f64, hy: f64) -> f64 {
    (dx.abs() - hx).max(dy.abs() - hy)
}

#[derive(Clone, Copy, Debug)]
struct Disc {
    cx: f64,
    cy: f64,
    r: f64,
}

impl Disc {
    fn distance(&self, x: f64, y: f64) -> f64 {
        ((x - self.cx).powi(2) + (y - self.cy).powi(2)).sqrt() - self.r
    }
}

/// Scene resolved from a config and its seed.
enum Scene {
    Moving {
        shape: ShapeKind,
        cx: f64,
        cy: f64,
        hx: f64,
        hy: f64,
        path: Box<dyn Fn(f64) -> (f64, f64)>,
    },
    Flashes {
        regions: [Disc; 2],
        /// `(on, off)` in microseconds for each region
        windows: [(f64, f64); 2],
    },
}

impl Scene {
    fn build(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Self {
        let (w, h) = (cfg.geometry.width as f64, cfg.geometry.height as f64);
        let side = w.min(h);
        let dur = cfg.duration_us as f64;
        match cfg.motion {
            Motion::TemporalOrder { order, slots } => {
                let r = (0.18 * side).max(1.0);
                let mut disc = |fx: f64| Disc {
                    cx: fx * w + rng.random_range(-1.0..=1.0),
                    cy: 0.5 * h + rng.random_range(-1.0..=1.0),
                    r,
                };
                let (a, b) = (disc(0.28), disc(0.72));
                let slot = dur / slots as f64;
                let s = rng.random_range(0..slots - 1) as f64;
                let mut window = |k: f64| {
                    let j = rng.random_range(-0.05..=0.05);
                    ((k + 0.3 + j) * slot, (k + 0.7 + j) * slot)
                };
                let windows = match order {
                    FlashOrder::AThenB => {
                        let wa = window(s);
                        [wa, window(s + 1.0)]
                    }
                    FlashOrder::BThenA => {
                        let wb = window(s);
                        [window(s + 1.0), wb]
                    }
                };
                Scene::Flashes { regions: [a, b], windows }
            }
            Motion::StaticJitter { amplitude } => {
                let (hx, hy) = shape_extent(cfg.shape, side, rng);
                let margin_x = (hx + amplitude + 1.0).min(0.5 * w);
                let margin_y = (hy + amplitude + 1.0).min(0.5 * h);
                let cx = rng.random_range(margin_x..=(w - margin_x).max(margin_x));
                let cy = rng.random_range(margin_y..=(h - margin_y).max(margin_y));
                // triangle (0,0) -> (a/2, a) -> (a, 0) -> (0,0), one leg per third
                let path = move |t: f64| {
                    let u = (t / dur).clamp(0.0, 1.0) * 3.0;
                    let pts = [(0.0, 0.0), (0.5 * amplitude, amplitude), (amplitude, 0.0), (0.0, 0.0)];
                    let k = (u.floor() as usize).min(2);
                    let f = u - k as f64;
                    let (p, q) = (pts[k], pts[k + 1]);
                    (p.0 + f * (q.0 - p.0), p.1 + f * (q.1 - p.1))
                };
                Scene::Moving {
                    shape: cfg.shape,
                    cx,
                    cy,
                    hx,
                    hy,
                    path: Box::new(path),
                }
            }
            Motion::Translate { vx, vy } => {
                let (hx, hy) = if vx.abs() >= vy.abs() {
                    ((0.08 * side).max(1.0), 0.5 * h)
                } else {
                    (0.5 * w, (0.08 * side).max(1.0))
                };
                let (hx, hy) = match cfg.shape {
                    ShapeKind::Bar => (hx, hy),
                    other => shape_extent(other, side, rng),
                };
                // start so that the shape stays centred over the run
                let travel_x = vx * dur / 1e6;
                let travel_y = vy * dur / 1e6;
                let cx = 0.5 * w - 0.5 * travel_x + rng.random_range(-1.0..=1.0);
                let cy = 0.5 * h - 0.5 * travel_y + rng.random_range(-1.0..=1.0);
                Scene::Moving {
                    shape: cfg.shape,
                    cx,
                    cy,
                    hx,
                    hy,
                    path: Box::new(move |t| (vx * t / 1e6, vy * t / 1e6)),
                }
            }
        }
    }

    fn render(&self, geometry: SensorGeometry, t: f64, out: &mut [f64]) {
        let w = geometry.width as usize;
        for (i, v) in out.iter_mut().enumerate() {
            let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            let c = match self {
                Scene::Moving {
                    shape,
                    cx,
                    cy,
                    hx,
                    hy,
                    path,
                } => {
                    let (ox, oy) = path(t);
                    let (dx, dy) = (x - cx - ox, y - cy - oy);
                    let d = match shape {
                        ShapeKind::Disc => (dx * dx + dy * dy).sqrt() - hx,
                        _ => box_distance(dx, dy, *hx, *hy),
                    };
                    coverage(d)
                }
                Scene::Flashes { regions, windows } => regions
                    .iter()
                    .zip(windows)
                    .filter(|(_, (on, off))| t >= *on && t < *off)
                    .map(|(r, _)| coverage(r.distance(x, y)))
                    .fold(0.0, f64::max),
            };
            *v = (BACKGROUND + (FOREGROUND - BACKGROUND) * c).max(INTENSITY_FLOOR).ln();
        }
    }
}

/// Half extents `(hx, hy)`; a disc uses `hx` as its radius.
fn shape_extent(shape: ShapeKind, side: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let scale = rng.random_range(0.85..1.15);
    match shape {
        ShapeKind::Disc => {
            let r = (0.22 * side * scale).max(1.0);
            (r, r)
        }
        ShapeKind::Square => {
            let s = (0.2 * side * scale).max(1.0);
            (s, s)
        }
        _ => {
            let long = (0.38 * side * scale).max(1.5);
            let thin = (0.08 * side).max(1.0);
            if rng.random_bool(0.5) {
                (long, thin)
            } else {
                (thin, long)
            }
        }
    }
}

/// Renders one recording. Fails with [`Error::NoEvents`] when neither the
/// scene nor noise produces any event.
pub fn render_events(cfg: &SceneConfig, label: Option<u32>, sample_id: &str) -> Result<EventSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scene = Scene::build(cfg, &mut rng);
    let geometry = cfg.geometry;
    let mut frame = vec![0.0; geometry.pixels()];
    scene.render(geometry, 0.0, &mut frame);
    let mut sim = EventSimulator::new(geometry, cfg.threshold, &frame)?;
    for k in 1..=cfg.num_frames() {
        let t = (k as f64 * 1e6 / cfg.frame_rate).round();
        scene.render(geometry, t, &mut frame);
        sim.step(t as u64, &frame);
    }
    let mut events = sim.into_events();
    events.extend(noise_events(cfg, &mut rng));
    if events.is_empty() {
        return Err(Error::NoEvents);
    }
    EventSample::new(events, geometry, label, sample_id)
}

/// Uniform spatio-temporal noise with a Poisson total count.
fn noise_events(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<Event> {
    let mean = cfg.noise_rate * cfg.geometry.pixels() as f64 * cfg.duration_us as f64 / 1e6;
    if mean <= 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0);
    let mut noise: Vec<Event> = (0..count)
        .map(|_| {
            let p = if rng.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
            Event::new(
                rng.random_range(0..cfg.geometry.width),
                rng.random_range(0..cfg.geometry.height),
                rng.random_range(0..cfg.duration_us),
                p,
            )
        })
        .collect();
    noise.sort_by_key(|e| e.t);
    noise
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    StaticShapes,
    Direction,
    TemporalOrder,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::StaticShapes => "static-shapes",
            TaskKind::Direction => "direction",
            TaskKind::TemporalOrder => "temporal-order",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static-shapes" => Ok(TaskKind::StaticShapes),
            "direction" => Ok(TaskKind::Direction),
            "temporal-order" => Ok(TaskKind::TemporalOrder),
            other => Err(Error::Config(format!(
                "unknown task {other:?} (expected static-shapes, direction, temporal-order)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Split {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl Split {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let s = Self { train, val, test };
        if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f)) || ((train + val + test) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {train}/{val}/{test} must lie in [0,1] and sum to 1")));
        }
        Ok(s)
    }

    /// Per-class `(train, val, test)` counts.
    pub fn counts(&self, per_class: usize) -> (usize, usize, usize) {
        let n_train = (per_class as f64 * self.train).round() as usize;
        let n_val = ((per_class as f64 * self.val).round() as usize).min(per_class - n_train.min(per_class));
        let n_train = n_train.min(per_class);
        (n_train, n_val, per_class - n_train - n_val)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub task: TaskKind,
    /// One scene template per class; each sample reseeds its template.
    pub classes: Vec<SceneConfig>,
    pub samples_per_class: usize,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct TaskOptions {
    pub geometry: SensorGeometry,
    pub duration_us: u64,
    pub frame_rate: f64,
    pub threshold: f64,
    pub noise_rate: Option<f64>,
    /// Class count for the direction task (2 or 4).
    pub num_classes: Option<usize>,
    /// Time slots for the temporal-order task.
    pub slots: usize,
}

impl Default for TaskOptions {
    fn default() -> Self {
        Self {
            geometry: SensorGeometry::new(32, 32).expect("non-zero geometry"),
            duration_us: 100_000,
            frame_rate: 1000.0,
            threshold: 0.2,
            noise_rate: None,
            num_classes: None,
            slots: 10,
        }
    }
}

impl TaskSpec {
    pub fn preset(task: TaskKind, samples_per_class: usize, split: Split, opts: &TaskOptions) -> Result<Self> {
        let template = |shape, motion, default_noise: f64| SceneConfig {
            geometry: opts.geometry,
            duration_us: opts.duration_us,
            frame_rate: opts.frame_rate,
            shape,
            motion,
            threshold: opts.threshold,
            noise_rate: opts.noise_rate.unwrap_or(default_noise),
            seed: 0,
        };
        let classes = match task {
            TaskKind::StaticShapes => {
                if opts.num_classes.is_some_and(|n| n != 3) {
                    return Err(Error::Config("static-shapes has exactly 3 classes".into()));
                }
                let jitter = Motion::StaticJitter { amplitude: 1.5 };
                vec![
                    template(ShapeKind::Disc, jitter, 1.0),
                    template(ShapeKind::Square, jitter, 1.0),
                    template(ShapeKind::Bar, jitter, 1.0),
                ]
            }
            TaskKind::Direction => {
                // cross 40% of the sensor over the recording
                let secs = opts.duration_us as f64 / 1e6;
                let vx = 0.4 * opts.geometry.width as f64 / secs;
                let vy = 0.4 * opts.geometry.height as f64 / secs;
                let dirs = match opts.num_classes.unwrap_or(2) {
                    2 => vec![(-vx, 0.0), (vx, 0.0)],
                    4 => vec![(-vx, 0.0), (vx, 0.0), (0.0, -vy), (0.0, vy)],
                    n => return Err(Error::Config(format!("direction supports 2 or 4 classes, got {n}"))),
                };
                dirs.into_iter()
                    .map(|(vx, vy)| template(ShapeKind::Bar, Motion::Translate { vx, vy }, 1.0))
                    .collect()
            }
            TaskKind::TemporalOrder => {
                if opts.num_classes.is_some_and(|n| n != 2) {
                    return Err(Error::Config("temporal-order has exactly 2 classes".into()));
                }
                [FlashOrder::AThenB, FlashOrder::BThenA]
                    .into_iter()
                    .map(|order| {
                        template(
                            ShapeKind::FlashPair,
                            Motion::TemporalOrder {
                                order,
                                slots: opts.slots,
                            },
                            2.0,
                        )
                    })
                    .collect()
            }
        };
        let spec = Self {
            task,
            classes,
            samples_per_class,
            split,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Config("a task needs at least 2 classes".into()));
        }
        Split::new(self.split.train, self.split.val, self.split.test)?;
        let min_frac = self.split.train.min(self.split.val).min(self.split.test);
        if (self.samples_per_class as f64) * min_frac < 1.0 {
            return Err(Error::Config(format!(
                "{} samples per class leave a split with fewer than one sample per class",
                self.samples_per_class
            )));
        }
        self.classes.iter().try_for_each(SceneConfig::validate)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<EventSample>,
    pub val: Vec<EventSample>,
    pub test: Vec<EventSample>,
}

impl Dataset {
    pub fn splits(&self) -> [(&'static str, &[EventSample]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

fn mix_seed(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_seed(master: u64, class: usize, index: usize) -> u64 {
    mix_seed(mix_seed(master) ^ ((class as u64) << 32 | index as u64))
}

/// Renders a class-balanced dataset. The first samples of each class go
/// to train, then val, then test.
pub fn make_dataset(spec: &TaskSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let (n_train, n_val, _) = spec.split.counts(spec.samples_per_class);
    let mut out = Dataset::default();
    for (class, template) in spec.classes.iter().enumerate() {
        for i in 0..spec.samples_per_class {
            let cfg = SceneConfig {
                seed: sample_seed(seed, class, i),
                ..template.clone()
            };
            let id = format!("{}-c{class}-{i:04}", spec.task);
            let sample = render_events(&cfg, Some(class as u32), &id)?;
            let dst = if i < n_train {
                &mut out.train
            } else if i < n_train + n_val {
                &mut out.val
            } else {
                &mut out.test
            };
            dst.push(sample);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_pixel() -> SensorGeometry {
        SensorGeometry::new(1, 1).unwrap()
    }

    fn run_ramp(delta: f64, theta: f64, frames: usize) -> Vec<Event> {
        let mut sim = EventSimulator::new(one_pixel(), theta, &[0.0]).unwrap();
        for k in 1..=frames {
            sim.step(k as u64 * 1000, &[delta * k as f64 / frames as f64]);
        }
        sim.into_events()
    }

    #[test]
    fn ramp_of_three_thresholds_gives_three_events() {
        let ev = run_ramp(3.0 * 0.2, 0.2, 100);
        assert_eq!(ev.len(), 3);
        assert!(ev.iter().all(|e| e.p == Polarity::Positive));
    }

    #[test]
    fn large_jump_emits_all_crossings_at_once() {
        let mut sim = EventSimulator::new(one_pixel(), 0.5, &[1.0]).unwrap();
        sim.step(7, &[-0.6]);
        let ev = sim.into_events();
        assert_eq!(ev.len(), 3);
        assert!(ev.iter().all(|e| e.t == 7 && e.p == Polarity::Negative));
    }

    proptest! {
        #[test]
        fn monotone_change_gives_floor_count(delta in -5.0f64..5.0, theta in 0.05f64..1.0, frames in 2usize..200) {
            let ratio = delta.abs() / theta;
            prop_assume!((ratio - ratio.round()).abs() > 1e-6);
            let ev = run_ramp(delta, theta, frames);
            prop_assert_eq!(ev.len() as u64, ratio.floor() as u64);
            let want = if delta > 0.0 { Polarity::Positive } else { Polarity::Negative };
            prop_assert!(ev.iter().all(|e| e.p == want));
        }
    }

    fn static_cfg(amplitude: f64, noise: f64, seed: u64) -> SceneConfig {
        SceneConfig {
            geometry: SensorGeometry::new(16, 12).unwrap(),
            duration_us: 50_000,
            frame_rate: 1000.0,
            shape: ShapeKind::Disc,
            motion: Motion::StaticJitter { amplitude },
            threshold: 0.2,
            noise_rate: noise,
            seed,
        }
    }

    #[test]
    fn static_scene_without_noise_has_no_events() {
        assert!(matches!(render_events(&static_cfg(0.0, 0.0, 1), None, "s"), Err(Error::NoEvents)));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_events(&static_cfg(1.5, 3.0, 9), Some(0), "a").unwrap();
        let b = render_events(&static_cfg(1.5, 3.0, 9), Some(0), "a").unwrap();
        assert_eq!(a, b);
        let c = render_events(&static_cfg(1.5, 3.0, 10), Some(0), "a").unwrap();
        assert_ne!(a.events(), c.events());
    }

    #[test]
    fn jitter_produces_sorted_in_bounds_events() {
        let s = render_events(&static_cfg(1.5, 0.0, 4), None, "j").unwrap();
        assert!(s.len() > 50);
        assert!(s.events().windows(2).all(|p| p[0].t <= p[1].t));
        assert!(s.events().iter().all(|e| e.t <= 50_000));
    }

    #[test]
    fn noise_count_mean_within_three_standard_errors() {
        // an all-background scene: only noise events appear
        let runs = 200;
        let mut counts = Vec::with_capacity(runs);
        for seed in 0..runs as u64 {
            let cfg = static_cfg(0.0, 40.0, seed);
            counts.push(render_events(&cfg, None, "n").map(|s| s.len()).unwrap_or(0) as f64);
        }
        let expected = 40.0 * 16.0 * 12.0 * 0.05;
        let mean = counts.iter().sum::<f64>() / runs as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (runs as f64 - 1.0);
        let se = (var / runs as f64).sqrt();
        assert!((mean - expected).abs() <= 3.0 * se, "mean {mean} expected {expected} se {se}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = static_cfg(1.0, 0.0, 0);
        c.threshold = 0.0;
        assert!(render_events(&c, None, "x").is_err());
        let mut c = static_cfg(1.0, 0.0, 0);
        c.frame_rate = 10.0; // 0.5 frames over 50 ms
        assert!(c.validate().is_err());
        let mut c = static_cfg(1.0, 0.0, 0);
        c.shape = ShapeKind::FlashPair;
        assert!(c.validate().is_err());
    }

    fn small_opts() -> TaskOptions {
        TaskOptions {
            geometry: SensorGeometry::new(16, 16).unwrap(),
            duration_us: 50_000,
            ..TaskOptions::default()
        }
    }

    #[test]
    fn direction_split_counts_are_balanced() {
        let spec = TaskSpec::preset(TaskKind::Direction, 10, Split::new(0.6, 0.2, 0.2).unwrap(), &small_opts()).unwrap();
        let ds = make_dataset(&spec, 3).unwrap();
        assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (12, 4, 4));
        for (_, split) in ds.splits() {
            let ones = split.iter().filter(|s| s.label() == Some(1)).count();
            assert_eq!(ones * 2, split.len());
        }
    }

    #[test]
    fn too_few_samples_for_split_rejected() {
        let r = TaskSpec::preset(TaskKind::Direction, 4, Split::default(), &small_opts());
        assert!(r.is_err());
        assert!(Split::new(0.5, 0.5, 0.5).is_err());
    }

    #[test]
    fn master_seed_changes_events() {
        let spec = TaskSpec::preset(TaskKind::StaticShapes, 5, Split::default(), &small_opts()).unwrap();
        let a = make_dataset(&spec, 1).unwrap();
        let b = make_dataset(&spec, 2).unwrap();
        assert_ne!(a.train[0].events(), b.train[0].events());
        let a2 = make_dataset(&spec, 1).unwrap();
        assert_eq!(a.train, a2.train);
    }

    #[test]
    fn first_half_of_a_then_b_holds_only_region_a() {
        let opts = TaskOptions {
            noise_rate: Some(0.0),
            ..TaskOptions::default()
        };
        let spec = TaskSpec::preset(TaskKind::TemporalOrder, 5, Split::default(), &opts).unwrap();
        let w = opts.geometry.width as f64;
        for i in 0..5 {
            let cfg = SceneConfig {
                seed: sample_seed(11, 0, i),
                ..spec.classes[0].clone()
            };
            let s = render_events(&cfg, Some(0), "ab").unwrap();
            let (lo, hi) = s.time_range().unwrap();
            let mid = lo + (hi - lo) / 2;
            let first: Vec<_> = s.events().iter().filter(|e| e.t <= mid).collect();
            assert!(!first.is_empty());
            // region A sits left of centre, region B right of it
            assert!(first.iter().all(|e| (e.x as f64) < 0.5 * w), "sample {i}");
            assert!(s.events().iter().any(|e| (e.x as f64) > 0.5 * w));
        }
    }

    #[test]
    fn temporal_order_classes_mirror_in_time() {
        let opts = TaskOptions {
            noise_rate: Some(0.0),
            ..TaskOptions::default()
        };
        let spec = TaskSpec::preset(TaskKind::TemporalOrder, 5, Split::default(), &opts).unwrap();
        let cfg = SceneConfig {
            seed: 5,
            ..spec.classes[1].clone()
        };
        let s = render_events(&cfg, Some(1), "ba").unwrap();
        let first = s.events()[0];
        assert!((first.x as f64) > 0.5 * opts.geometry.width as f64);
        // flashes switch on and back off, so every pixel nets to zero
        let mut net = vec![0i64; opts.geometry.pixels()];
        for e in s.events() {
            net[e.y as usize * 32 + e.x as usize] += e.p.sign() as i64;
        }
        assert!(net.iter().all(|&n| n == 0));
    }

    #[test]
    fn task_names_round_trip() {
        for t in [TaskKind::StaticShapes, TaskKind::Direction, TaskKind::TemporalOrder] {
            assert_eq!(t.to_string().parse::<TaskKind>().unwrap(), t);
        }
        assert!("shapes".parse::<TaskKind>().is_err());
    }
}
