use super::{ConvStage, FrameStack};
use crate::error::{shape_err, Result};
use crate::nn::kernels::{self, Conv2dShape};

/// Aligned compression: every `G` consecutive frames are stacked on the
/// channel axis (frame-major, so channel `g*C_in + c` is channel `c` of the
/// `g`-th frame in the group) and passed through one shared convolution
/// with same-padding, bias and a leaky rectifier.
///
/// This is a 3-D convolution with temporal extent and stride `G`.
pub fn aligned_compress(input: &FrameStack, stage: &ConvStage) -> Result<FrameStack> {
    stage.validate()?;
    let g = stage.group_size;
    if input.frames % g != 0 {
        return Err(shape_err!("{} frames are not divisible by group size {g}", input.frames));
    }
    if input.channels != stage.in_channels {
        return Err(shape_err!(
            "stage expects {} input channels, frames have {}",
            stage.in_channels,
            input.channels
        ));
    }
    let shape = Conv2dShape {
        batch: input.frames / g,
        in_channels: g * stage.in_channels,
        height: input.height,
        width: input.width,
        out_channels: stage.out_channels,
        kernel_h: stage.kernel,
        kernel_w: stage.kernel,
        pad: stage.kernel / 2,
    };
    shape.validate()?;
    let mut out = kernels::conv2d_forward(&shape, &input.data, &stage.weights, Some(&stage.bias));
    let slope = stage.slope;
    out.iter_mut().for_each(|v| *v = kernels::leaky_relu(*v, slope));
    Ok(FrameStack {
        frames: input.frames / g,
        channels: stage.out_channels,
        height: input.height,
        width: input.width,
        data: out,
    })
}

/// Replaces every `group` consecutive frames by their mean.
pub fn avg_compress(input: &FrameStack, group: usize) -> Result<FrameStack> {
    if group == 0 || input.frames % group != 0 {
        return Err(shape_err!("{} frames are not divisible by group size {group}", input.frames));
    }
    let frame_len = input.frame_len();
    let out_frames = input.frames / group;
    let inv = 1.0 / group as f32;
    let mut data = vec![0.0f32; out_frames * frame_len];
    for (f, dst) in data.chunks_mut(frame_len).enumerate() {
        for src in input.data[f * group * frame_len..(f + 1) * group * frame_len].chunks(frame_len) {
            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
        }
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    Ok(FrameStack {
        frames: out_frames,
        channels: input.channels,
        height: input.height,
        width: input.width,
        data,
    })
}
