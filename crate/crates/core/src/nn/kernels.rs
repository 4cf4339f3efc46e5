//! Slice-level compute kernels shared by the tape and the standalone encoder.
//!
//! All layouts are row-major. 2-D convolutions use stride 1, zero padding
//! and cross-correlation (no kernel flip), like every mainstream framework.

use super::Real;
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dShape {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub pad: usize,
}

impl Conv2dShape {
    pub fn out_h(&self) -> usize {
        self.height + 2 * self.pad + 1 - self.kernel_h
    }

    pub fn out_w(&self) -> usize {
        self.width + 2 * self.pad + 1 - self.kernel_w
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(shape_err!("conv2d kernel must be non-empty"));
        }
        if self.height + 2 * self.pad < self.kernel_h || self.width + 2 * self.pad < self.kernel_w {
            return Err(shape_err!(
                "conv2d kernel {}x{} larger than padded input {}x{}",
                self.kernel_h,
                self.kernel_w,
                self.height + 2 * self.pad,
                self.width + 2 * self.pad
            ));
        }
        Ok(())
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn in_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    fn out_len(&self) -> usize {
        self.out_channels * self.out_h() * self.out_w()
    }
}

/// Unfolds one `C x H x W` image into a `(C*kh*kw) x (oh*ow)` patch matrix.
fn im2col<T: Real>(s: &Conv2dShape, img: &[T], col: &mut [T]) {
    let (oh, ow) = (s.out_h(), s.out_w());
    let (h, w, pad) = (s.height as isize, s.width as isize, s.pad as isize);
    let mut row = 0;
    for c in 0..s.in_channels {
        let plane = &img[c * s.height * s.width..(c + 1) * s.height * s.width];
        for ky in 0..s.kernel_h {
            for kx in 0..s.kernel_w {
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize + ky as isize - pad;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * s.width..(iy as usize + 1) * s.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize + kx as isize - pad;
                        *v = if ix < 0 || ix >= w { T::zero() } else { src[ix as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im<T: Real>(s: &Conv2dShape, col: &[T], img: &mut [T]) {
    let (oh, ow) = (s.out_h(), s.out_w());
    let (h, w, pad) = (s.height as isize, s.width as isize, s.pad as isize);
    let mut row = 0;
    for c in 0..s.in_channels {
        let plane = &mut img[c * s.height * s.width..(c + 1) * s.height * s.width];
        for ky in 0..s.kernel_h {
            for kx in 0..s.kernel_w {
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize + ky as isize - pad;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * s.width..(iy as usize + 1) * s.width];
                    for ox in 0..ow {
                        let ix = ox as isize + kx as isize - pad;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Patch-matrix convolution: `x: N x C x H x W`, `weight: O x C x kh x kw`.
pub fn conv2d_forward<T: Real>(s: &Conv2dShape, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let p = s.out_h() * s.out_w();
    let k = s.patch_len();
    let mut out = vec![T::zero(); s.batch * s.out_len()];
    let mut col = vec![T::zero(); k * p];
    for n in 0..s.batch {
        im2col(s, &x[n * s.in_len()..(n + 1) * s.in_len()], &mut col);
        let y = &mut out[n * s.out_len()..(n + 1) * s.out_len()];
        if let Some(b) = bias {
            for (o, chunk) in y.chunks_mut(p).enumerate() {
                chunk.fill(b[o]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            s.out_channels,
            k,
            p,
            T::one(),
            weight,
            (k as isize, 1),
            &col,
            (p as isize, 1),
            beta,
            y,
            (p as isize, 1),
        );
    }
    out
}

/// Explicit-loop convolution; must agree with [`conv2d_forward`].
pub fn conv2d_forward_direct<T: Real>(s: &Conv2dShape, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (oh, ow) = (s.out_h(), s.out_w());
    let mut out = vec![T::zero(); s.batch * s.out_len()];
    for n in 0..s.batch {
        let img = &x[n * s.in_len()..(n + 1) * s.in_len()];
        for o in 0..s.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(T::zero(), |b| b[o]);
                    for c in 0..s.in_channels {
                        for ky in 0..s.kernel_h {
                            let iy = (oy + ky) as isize - s.pad as isize;
                            if iy < 0 || iy >= s.height as isize {
                                continue;
                            }
                            for kx in 0..s.kernel_w {
                                let ix = (ox + kx) as isize - s.pad as isize;
                                if ix < 0 || ix >= s.width as isize {
                                    continue;
                                }
                                let wi = ((o * s.in_channels + c) * s.kernel_h + ky) * s.kernel_w + kx;
                                acc += weight[wi] * img[(c * s.height + iy as usize) * s.width + ix as usize];
                            }
                        }
                    }
                    out[n * s.out_len() + (o * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

pub struct Conv2dGrads<T> {
    pub input: Vec<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Real>(s: &Conv2dShape, x: &[T], weight: &[T], dy: &[T]) -> Conv2dGrads<T> {
    let p = s.out_h() * s.out_w();
    let k = s.patch_len();
    let mut dx = vec![T::zero(); s.batch * s.in_len()];
    let mut dw = vec![T::zero(); s.out_channels * k];
    let mut db = vec![T::zero(); s.out_channels];
    let mut col = vec![T::zero(); k * p];
    let mut dcol = vec![T::zero(); k * p];
    for n in 0..s.batch {
        let g = &dy[n * s.out_len()..(n + 1) * s.out_len()];
        for (o, chunk) in g.chunks(p).enumerate() {
            db[o] += chunk.iter().copied().sum::<T>();
        }
        im2col(s, &x[n * s.in_len()..(n + 1) * s.in_len()], &mut col);
        // dW += dY (O x P) * col^T (P x K)
        T::gemm(
            s.out_channels,
            p,
            k,
            T::one(),
            g,
            (p as isize, 1),
            &col,
            (1, p as isize),
            T::one(),
            &mut dw,
            (k as isize, 1),
        );
        // dcol = W^T (K x O) * dY (O x P)
        T::gemm(
            k,
            s.out_channels,
            p,
            T::one(),
            weight,
            (1, k as isize),
            g,
            (p as isize, 1),
            T::zero(),
            &mut dcol,
            (p as isize, 1),
        );
        col2im(s, &dcol, &mut dx[n * s.in_len()..(n + 1) * s.in_len()]);
    }
    Conv2dGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dShape {
    pub in_channels: usize,
    pub length: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub pad: usize,
}

impl Conv1dShape {
    pub fn out_len(&self) -> usize {
        self.length + 2 * self.pad + 1 - self.kernel
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.length + 2 * self.pad < self.kernel {
            return Err(shape_err!(
                "conv1d kernel {} does not fit padded length {}",
                self.kernel,
                self.length + 2 * self.pad
            ));
        }
        Ok(())
    }
}

/// `x: C x L`, `weight: O x C x K`.
pub fn conv1d_forward<T: Real>(s: &Conv1dShape, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let ol = s.out_len();
    let mut out = vec![T::zero(); s.out_channels * ol];
    for o in 0..s.out_channels {
        for i in 0..ol {
            let mut acc = bias.map_or(T::zero(), |b| b[o]);
            for c in 0..s.in_channels {
                for k in 0..s.kernel {
                    let j = (i + k) as isize - s.pad as isize;
                    if j >= 0 && (j as usize) < s.length {
                        acc += weight[(o * s.in_channels + c) * s.kernel + k] * x[c * s.length + j as usize];
                    }
                }
            }
            out[o * ol + i] = acc;
        }
    }
    out
}

pub fn conv1d_backward<T: Real>(s: &Conv1dShape, x: &[T], weight: &[T], dy: &[T]) -> Conv2dGrads<T> {
    let ol = s.out_len();
    let mut dx = vec![T::zero(); s.in_channels * s.length];
    let mut dw = vec![T::zero(); weight.len()];
    let mut db = vec![T::zero(); s.out_channels];
    for o in 0..s.out_channels {
        for i in 0..ol {
            let g = dy[o * ol + i];
            db[o] += g;
            for c in 0..s.in_channels {
                for k in 0..s.kernel {
                    let j = (i + k) as isize - s.pad as isize;
                    if j >= 0 && (j as usize) < s.length {
                        let wi = (o * s.in_channels + c) * s.kernel + k;
                        let xi = c * s.length + j as usize;
                        dw[wi] += g * x[xi];
                        dx[xi] += g * weight[wi];
                    }
                }
            }
        }
    }
    Conv2dGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

#[inline]
pub fn leaky_relu<T: Real>(v: T, alpha: T) -> T {
    if v > T::zero() {
        v
    } else {
        v * alpha
    }
}

/// Non-overlapping `size x size` max pooling over `planes` planes of
/// `h x w`, flooring partial windows. Returns values and flat argmax
/// indices into `x`; ties go to the first index in scan order.
pub fn max_pool2d<T: Real>(x: &[T], planes: usize, h: usize, w: usize, size: usize) -> Result<(Vec<T>, Vec<usize>)> {
    if size == 0 || size > h || size > w {
        return Err(shape_err!("max_pool2d size {size} exceeds input {h}x{w}"));
    }
    let (oh, ow) = (h / size, w / size);
    let mut vals = Vec::with_capacity(planes * oh * ow);
    let mut idx = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * size * w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let i = base + (oy * size + dy) * w + ox * size + dx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                vals.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((vals, idx))
}

/// Non-overlapping 1-D max pooling over `rows` rows of length `len`.
pub fn max_pool1d<T: Real>(x: &[T], rows: usize, len: usize, size: usize) -> Result<(Vec<T>, Vec<usize>)> {
    if size == 0 || size > len {
        return Err(shape_err!("max_pool1d size {size} exceeds length {len}"));
    }
    let ol = len / size;
    let mut vals = Vec::with_capacity(rows * ol);
    let mut idx = Vec::with_capacity(rows * ol);
    for r in 0..rows {
        for o in 0..ol {
            let start = r * len + o * size;
            let best = (start..start + size).fold(start, |b, i| if x[i] > x[b] { i } else { b });
            vals.push(x[best]);
            idx.push(best);
        }
    }
    Ok((vals, idx))
}
