//! Event stream types, validation and sliding-window slicing.
//!
//! An [`EventSample`] is one labeled recording: a time-ordered list of
//! `(x, y, t, p)` events from a sensor of known geometry. Samples are
//! validated on construction and immutable afterwards.

mod io;

pub use io::{load_events, save_events, EventFormat};

use crate::error::{Error, Result};

/// Sign of the brightness change that triggered an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(i8)]
pub enum Polarity {
    Negative = -1,
    Positive = 1,
}

impl Polarity {
    #[inline]
    pub fn sign(self) -> i8 {
        self as i8
    }

    pub fn from_sign(sign: i64) -> Option<Self> {
        match sign {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }
}

/// A single sensor event. `t` is in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: u64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: Polarity) -> Self {
        Self { x, y, t, p }
    }
}

/// Sensor resolution in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SensorGeometry {
    pub width: u16,
    pub height: u16,
}

impl SensorGeometry {
    pub fn new(width: u16, height: u16) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "sensor geometry must be at least 1x1, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventSample {
    events: Vec<Event>,
    geometry: SensorGeometry,
    label: Option<u32>,
    sample_id: String,
}

impl EventSample {
    /// Validates every event against `geometry` and stably sorts by
    /// timestamp, so events sharing a timestamp keep their input order.
    pub fn new(
        mut events: Vec<Event>,
        geometry: SensorGeometry,
        label: Option<u32>,
        sample_id: impl Into<String>,
    ) -> Result<Self> {
        if geometry.width == 0 || geometry.height == 0 {
            return Err(Error::Validation("sensor geometry must be at least 1x1".into()));
        }
        if let Some(idx) = events.iter().position(|e| !geometry.contains(e.x, e.y)) {
            let e = events[idx];
            return Err(Error::Validation(format!(
                "event {idx} at (x={}, y={}) lies outside the {}x{} sensor",
                e.x, e.y, geometry.width, geometry.height
            )));
        }
        if !events.windows(2).all(|w| w[0].t <= w[1].t) {
            events.sort_by_key(|e| e.t);
        }
        Ok(Self {
            events,
            geometry,
            label,
            sample_id: sample_id.into(),
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn label(&self) -> Option<u32> {
        self.label
    }

    pub fn sample_id(&self) -> &str {
        &self.sample_id
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn with_label(mut self, label: Option<u32>) -> Self {
        self.label = label;
        self
    }

    /// `(t_min, t_max)` over all events, `None` for an empty sample.
    pub fn time_range(&self) -> Option<(u64, u64)> {
        Some((self.events.first()?.t, self.events.last()?.t))
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

/// Cuts a recording into overlapping windows of `window_us` starting every
/// `step_us`, beginning at the first event.
///
/// Window `k` holds exactly the events with
/// `t_min + k*step <= t < t_min + k*step + window`. Window starts run up to
/// and including `t_max`; windows that end up empty are dropped.
pub fn window_slice(sample: &EventSample, window_us: u64, step_us: u64) -> Result<Vec<EventSample>> {
    if window_us == 0 || step_us == 0 {
        return Err(Error::Config(format!(
            "window ({window_us} us) and step ({step_us} us) must both be positive"
        )));
    }
    let Some((t_min, t_max)) = sample.time_range() else {
        return Ok(Vec::new());
    };
    let events = sample.events();
    let mut out = Vec::new();
    let mut k = 0u64;
    loop {
        let start = t_min + k * step_us;
        if start > t_max {
            break;
        }
        let end = start.saturating_add(window_us);
        let lo = events.partition_point(|e| e.t < start);
        let hi = events.partition_point(|e| e.t < end);
        if hi > lo {
            out.push(EventSample {
                events: events[lo..hi].to_vec(),
                geometry: sample.geometry,
                label: sample.label,
                sample_id: format!("{}#w{k}", sample.sample_id),
            });
        }
        k += 1;
    }
    Ok(out)
}
