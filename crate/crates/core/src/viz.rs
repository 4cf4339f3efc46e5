//! Exports encoded frames as binary PPM images.
//!
//! Channels are reduced to RGB by averaging contiguous channel groups
//! (channel `c` of `C` feeds colour `floor(3c / C)`); with fewer than three
//! channels, colour `k` shows channel `floor(kC / 3)`. Each frame is then
//! min-max scaled to `[0, 255]`; a constant frame renders black.

use std::path::{Path, PathBuf};

use crate::encoder::AETensor;
use crate::error::{Error, Result};

/// Interleaved `H x W x 3` bytes for frame `m`.
pub fn frame_to_rgb(t: &AETensor, m: usize) -> Result<Vec<u8>> {
    if m >= t.frames {
        return Err(Error::Shape(format!("frame {m} out of range for {} frames", t.frames)));
    }
    if t.channels == 0 {
        return Err(Error::Shape("tensor has no channels".into()));
    }
    let p = t.height * t.width;
    let plane = |c: usize| &t.data[(c * t.frames + m) * p..(c * t.frames + m + 1) * p];
    let mut rgb = vec![[0.0f32; 3]; p];
    if t.channels >= 3 {
        let mut counts = [0usize; 3];
        for c in 0..t.channels {
            let k = c * 3 / t.channels;
            counts[k] += 1;
            rgb.iter_mut().zip(plane(c)).for_each(|(px, &v)| px[k] += v);
        }
        for px in &mut rgb {
            for k in 0..3 {
                px[k] /= counts[k] as f32;
            }
        }
    } else {
        for k in 0..3 {
            let c = k * t.channels / 3;
            rgb.iter_mut().zip(plane(c)).for_each(|(px, &v)| px[k] = v);
        }
    }
    let (lo, hi) = rgb
        .iter()
        .flatten()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    Ok(rgb
        .iter()
        .flatten()
        .map(|&v| {
            if span > 0.0 && span.is_finite() {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect())
}

pub fn write_ppm(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if rgb.len() != width * height * 3 {
        return Err(Error::Shape(format!("{} bytes for a {width}x{height} image", rgb.len())));
    }
    let mut buf = format!("P6\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(rgb);
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes `frame_000.ppm`, `frame_001.ppm`, ... into `dir`.
pub fn export_frames(t: &AETensor, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..t.frames)
        .map(|m| {
            let path = dir.join(format!("frame_{m:03}.ppm"));
            write_ppm(&path, t.width, t.height, &frame_to_rgb(t, m)?)?;
            Ok(path)
        })
        .collect()
}
