use crate::error::{Error, Result};
use crate::event::{EventSample, SensorGeometry};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuantizedEvent {
    /// 1-based time bin in `1..=m_hat`.
    pub bin: u32,
    pub x: u16,
    pub y: u16,
    pub polarity: i8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedEvents {
    pub m_hat: usize,
    pub geometry: SensorGeometry,
    pub events: Vec<QuantizedEvent>,
}

/// Maps every timestamp onto one of `m_hat` uniform bins spanning the
/// sample's own `[t_min, t_max]`:
///
/// `bin = max(ceil(m_hat * (t - t_min) / (t_max - t_min)), 1)`
///
/// Evaluated in exact integer arithmetic. When every event shares one
/// timestamp the range is zero and all events land in bin 1.
pub fn quantize_timestamps(sample: &EventSample, m_hat: usize) -> Result<QuantizedEvents> {
    if m_hat == 0 {
        return Err(Error::Config("bin count must be at least 1".into()));
    }
    let (t_min, t_max) = sample
        .time_range()
        .ok_or_else(|| Error::Empty(format!("sample {:?} has no events to quantize", sample.sample_id())))?;
    let range = (t_max - t_min) as u128;
    let m = m_hat as u128;
    let events = sample
        .events()
        .iter()
        .map(|e| {
            let bin = if range == 0 {
                1
            } else {
                let num = m * (e.t - t_min) as u128;
                num.div_ceil(range).max(1)
            };
            QuantizedEvent {
                bin: bin as u32,
                x: e.x,
                y: e.y,
                polarity: e.p.sign(),
            }
        })
        .collect();
    Ok(QuantizedEvents {
        m_hat,
        geometry: sample.geometry(),
        events,
    })
}

/// `m_hat x H x W` grid of signed event sums, time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub m_hat: usize,
    pub geometry: SensorGeometry,
    pub data: Vec<f32>,
}

impl VoxelGrid {
    pub fn zeros(m_hat: usize, geometry: SensorGeometry) -> Self {
        Self {
            m_hat,
            geometry,
            data: vec![0.0; m_hat * geometry.pixels()],
        }
    }

    /// Value at 1-based bin `m`.
    pub fn at(&self, m: usize, y: usize, x: usize) -> f32 {
        let (h, w) = (self.geometry.height as usize, self.geometry.width as usize);
        self.data[((m - 1) * h + y) * w + x]
    }

    pub fn frame(&self, m: usize) -> &[f32] {
        let p = self.geometry.pixels();
        &self.data[(m - 1) * p..m * p]
    }
}

fn scatter(q: &QuantizedEvents) -> VoxelGrid {
    let mut grid = VoxelGrid::zeros(q.m_hat, q.geometry);
    let (w, p) = (q.geometry.width as usize, q.geometry.pixels());
    for e in &q.events {
        let idx = (e.bin as usize - 1) * p + e.y as usize * w + e.x as usize;
        grid.data[idx] += e.polarity as f32;
    }
    grid
}

/// Signed count of events at each pixel with bin exactly `m`.
pub fn voxelize_spike(q: &QuantizedEvents) -> VoxelGrid {
    scatter(q)
}

/// Signed count of all events at each pixel with bin at most `m`: a
/// per-bin scatter followed by a running sum along the time axis.
pub fn voxelize_accumulative(q: &QuantizedEvents) -> VoxelGrid {
    let mut grid = scatter(q);
    let p = q.geometry.pixels();
    for m in 1..q.m_hat {
        let (prev, cur) = grid.data.split_at_mut(m * p);
        let prev = &prev[(m - 1) * p..];
        cur[..p].iter_mut().zip(prev).for_each(|(c, &v)| *c += v);
    }
    grid
}
