use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Linear warm-up from 0 to `base_lr` over the first `warmup_frac` of the
/// run, then cosine decay to 0 at `total_steps`.
pub fn cosine_warmup_lr(step: usize, total_steps: usize, base_lr: f64, warmup_frac: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::Config(format!("step {step} beyond schedule length {total_steps}")));
    }
    if !(0.0..=1.0).contains(&warmup_frac) {
        return Err(Error::Config(format!("warm-up fraction {warmup_frac} outside [0, 1]")));
    }
    let warmup = (warmup_frac * total_steps as f64).round() as usize;
    if step < warmup {
        return Ok(base_lr * step as f64 / warmup as f64);
    }
    let decay = total_steps - warmup;
    if decay == 0 {
        return Ok(base_lr);
    }
    let progress = (step - warmup) as f64 / decay as f64;
    Ok(base_lr * 0.5 * (1.0 + (PI * progress).cos()))
}
