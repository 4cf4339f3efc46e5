//! Reverse-mode differentiation over an explicit tape.
//!
//! Every op appends a node holding its output value and the inputs it read.
//! [`Tape::backward`] walks the nodes in reverse and accumulates adjoints.
//! The graph is static per forward pass; a fresh tape is built for every
//! sample.

use super::kernels::{self, Conv1dShape, Conv2dShape};
use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf {
        param: Option<ParamId>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        shape: Conv2dShape,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        shape: Conv1dShape,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    GroupedLinear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LeakyRelu {
        x: Var,
        alpha: T,
    },
    /// Output element `i` is input element `index[i]` (pooling, global max).
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    GlobalAvg {
        x: Var,
        span: usize,
    },
    Reshape {
        x: Var,
    },
    Transpose {
        x: Var,
        rows: usize,
        cols: usize,
    },
    Concat {
        parts: Vec<Var>,
    },
    MeanRows {
        x: Var,
        rows: usize,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints of every node reached from the loss.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Gradients<T> {
    pub fn of(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Gradients for each parameter leaf, summed when a parameter was
    /// placed on the tape more than once. Parameters the loss does not
    /// reach get zeros.
    pub fn for_params(&self, store: &ParamStore<T>) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = store.iter().map(|(_, p)| vec![T::zero(); p.tensor.len()]).collect();
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                for (a, &b) in out[id.0].iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        out
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, len: usize, f: impl FnOnce(&mut [T])) {
    let buf = slot.get_or_insert_with(|| vec![T::zero(); len]);
    f(buf);
}

fn add_into<T: Real>(slot: &mut Option<Vec<T>>, src: &[T]) {
    match slot {
        Some(buf) => buf.iter_mut().zip(src).for_each(|(a, &b)| *a += b),
        None => *slot = Some(src.to_vec()),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf { param: None })
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.tensor(id).clone(), Op::Leaf { param: Some(id) })
    }

    /// Cross-correlation of `x: N x C x H x W` with `w: O x C x kh x kw`,
    /// stride 1 and `pad` zeros on every side.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        let (xd, wd) = (self.dims(x), self.dims(w));
        if xd.len() != 4 || wd.len() != 4 || xd[1] != wd[1] {
            return Err(shape_err!("conv2d input {xd:?} incompatible with weight {wd:?}"));
        }
        let shape = Conv2dShape {
            batch: xd[0],
            in_channels: xd[1],
            height: xd[2],
            width: xd[3],
            out_channels: wd[0],
            kernel_h: wd[2],
            kernel_w: wd[3],
            pad,
        };
        shape.validate()?;
        if let Some(b) = b {
            if self.value(b).len() != shape.out_channels {
                return Err(shape_err!("conv2d bias has {} entries, expected {}", self.value(b).len(), shape.out_channels));
            }
        }
        let out = kernels::conv2d_forward(
            &shape,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let dims = vec![shape.batch, shape.out_channels, shape.out_h(), shape.out_w()];
        Ok(self.push(Tensor::new(dims, out)?, Op::Conv2d { x, w, b, shape }))
    }

    /// `x: C x L`, `w: O x C x K`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        let (xd, wd) = (self.dims(x), self.dims(w));
        if xd.len() != 2 || wd.len() != 3 || xd[0] != wd[1] {
            return Err(shape_err!("conv1d input {xd:?} incompatible with weight {wd:?}"));
        }
        let shape = Conv1dShape {
            in_channels: xd[0],
            length: xd[1],
            out_channels: wd[0],
            kernel: wd[2],
            pad,
        };
        shape.validate()?;
        if let Some(b) = b {
            if self.value(b).len() != shape.out_channels {
                return Err(shape_err!("conv1d bias has {} entries, expected {}", self.value(b).len(), shape.out_channels));
            }
        }
        let out = kernels::conv1d_forward(
            &shape,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let dims = vec![shape.out_channels, shape.out_len()];
        Ok(self.push(Tensor::new(dims, out)?, Op::Conv1d { x, w, b, shape }))
    }

    /// Affine map `y = x W^T + b` for `x: N x D`, `w: O x D`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xd, wd) = (self.dims(x), self.dims(w));
        if xd.len() != 2 || wd.len() != 2 || xd[1] != wd[1] {
            return Err(shape_err!("linear input {xd:?} incompatible with weight {wd:?}"));
        }
        let (n, d, o) = (xd[0], xd[1], wd[0]);
        if let Some(b) = b {
            if self.value(b).len() != o {
                return Err(shape_err!("linear bias has {} entries, expected {o}", self.value(b).len()));
            }
        }
        let mut y = vec![T::zero(); n * o];
        if let Some(b) = b {
            let bias = self.value(b).data();
            y.chunks_mut(o).for_each(|row| row.copy_from_slice(bias));
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(
            n,
            d,
            o,
            T::one(),
            self.value(x).data(),
            (d as isize, 1),
            self.value(w).data(),
            (1, d as isize),
            beta,
            &mut y,
            (o as isize, 1),
        );
        Ok(self.push(Tensor::new(vec![n, o], y)?, Op::Linear { x, w, b }))
    }

    /// `g` independent affine maps: `x: g x D`, `w: g x O x D`, `b: g x O`
    /// giving `g x O`. Row `i` of the output reads only row `i` of `x`.
    /// This is a 1x1 convolution with `g` channel groups.
    pub fn grouped_linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xd, wd) = (self.dims(x), self.dims(w));
        if xd.len() != 2 || wd.len() != 3 || xd[0] != wd[0] || xd[1] != wd[2] {
            return Err(shape_err!("grouped_linear input {xd:?} incompatible with weight {wd:?}"));
        }
        let (g, d, o) = (xd[0], xd[1], wd[1]);
        if let Some(b) = b {
            if self.dims(b) != [g, o] {
                return Err(shape_err!("grouped_linear bias {:?}, expected [{g}, {o}]", self.dims(b)));
            }
        }
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut y = match b {
            Some(b) => self.value(b).data().to_vec(),
            None => vec![T::zero(); g * o],
        };
        for gi in 0..g {
            let xr = &xv[gi * d..(gi + 1) * d];
            for oi in 0..o {
                let wr = &wv[(gi * o + oi) * d..(gi * o + oi + 1) * d];
                y[gi * o + oi] += wr.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>();
            }
        }
        Ok(self.push(Tensor::new(vec![g, o], y)?, Op::GroupedLinear { x, w, b }))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        let alpha = T::of(alpha);
        let y = self.value(x).map(|v| kernels::leaky_relu(v, alpha));
        self.push(y, Op::LeakyRelu { x, alpha })
    }

    /// Non-overlapping `size x size` pooling on `N x C x H x W`.
    pub fn max_pool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        let d = self.dims(x).to_vec();
        if d.len() != 4 {
            return Err(shape_err!("max_pool2d expects N x C x H x W, got {d:?}"));
        }
        let (vals, index) = kernels::max_pool2d(self.value(x).data(), d[0] * d[1], d[2], d[3], size)?;
        let out = Tensor::new(vec![d[0], d[1], d[2] / size, d[3] / size], vals)?;
        Ok(self.push(out, Op::Gather { x, index }))
    }

    /// Non-overlapping pooling along the last axis of `C x L`.
    pub fn max_pool1d(&mut self, x: Var, size: usize) -> Result<Var> {
        let d = self.dims(x).to_vec();
        if d.len() != 2 {
            return Err(shape_err!("max_pool1d expects C x L, got {d:?}"));
        }
        let (vals, index) = kernels::max_pool1d(self.value(x).data(), d[0], d[1], size)?;
        Ok(self.push(Tensor::new(vec![d[0], d[1] / size], vals)?, Op::Gather { x, index }))
    }

    /// Maximum over all axes after the first `keep`; ties go to the first
    /// index.
    pub fn global_max(&mut self, x: Var, keep: usize) -> Result<Var> {
        let (lead, span) = self.split_dims(x, keep)?;
        let data = self.value(x).data();
        let mut vals = Vec::with_capacity(lead.iter().product());
        let mut index = Vec::with_capacity(vals.capacity());
        for (r, row) in data.chunks(span).enumerate() {
            let best = (0..span).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            vals.push(row[best]);
            index.push(r * span + best);
        }
        Ok(self.push(Tensor::new(lead, vals)?, Op::Gather { x, index }))
    }

    /// Mean over all axes after the first `keep`.
    pub fn global_avg(&mut self, x: Var, keep: usize) -> Result<Var> {
        let (lead, span) = self.split_dims(x, keep)?;
        let inv = T::one() / T::of(span as f64);
        let vals = self.value(x).data().chunks(span).map(|row| row.iter().copied().sum::<T>() * inv).collect();
        Ok(self.push(Tensor::new(lead, vals)?, Op::GlobalAvg { x, span }))
    }

    fn split_dims(&self, x: Var, keep: usize) -> Result<(Vec<usize>, usize)> {
        let d = self.dims(x);
        if keep >= d.len() {
            return Err(shape_err!("cannot reduce trailing axes of {d:?} keeping {keep}"));
        }
        let span: usize = d[keep..].iter().product();
        if span == 0 {
            return Err(shape_err!("reduction over empty axes of {d:?}"));
        }
        Ok((d[..keep].to_vec(), span))
    }

    pub fn reshape(&mut self, x: Var, dims: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(dims)?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let d = self.dims(x);
        if d.len() != 2 {
            return Err(shape_err!("transpose expects a matrix, got {d:?}"));
        }
        let (rows, cols) = (d[0], d[1]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = src[r * cols + c];
            }
        }
        Ok(self.push(Tensor::new(vec![cols, rows], out)?, Op::Transpose { x, rows, cols }))
    }

    /// Stacks matrices (or vectors, as single rows) with equal column
    /// counts along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols_of = |d: &[usize]| -> Option<(usize, usize)> {
            match d {
                [c] => Some((1, *c)),
                [r, c] => Some((*r, *c)),
                _ => None,
            }
        };
        let first = parts.first().ok_or_else(|| Error::Empty("concat_rows of nothing".into()))?;
        let (_, cols) = cols_of(self.dims(*first)).ok_or_else(|| shape_err!("concat_rows expects vectors or matrices"))?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            match cols_of(self.dims(p)) {
                Some((r, c)) if c == cols => rows += r,
                _ => return Err(shape_err!("concat_rows: {:?} does not have {cols} columns", self.dims(p))),
            }
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::new(vec![rows, cols], data)?, Op::Concat { parts: parts.to_vec() }))
    }

    /// Column means of `r x c`, giving a length-`c` vector.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let d = self.dims(x);
        if d.len() != 2 || d[0] == 0 {
            return Err(shape_err!("mean_rows expects a non-empty matrix, got {d:?}"));
        }
        let (rows, cols) = (d[0], d[1]);
        let inv = T::one() / T::of(rows as f64);
        let src = self.value(x).data();
        let out = (0..cols).map(|c| (0..rows).map(|r| src[r * cols + c]).sum::<T>() * inv).collect();
        Ok(self.push(Tensor::new(vec![cols], out)?, Op::MeanRows { x, rows }))
    }

    /// `-log softmax(logits)[target]` as a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if target >= z.len() {
            return Err(Error::Validation(format!("target class {target} out of range for {} logits", z.len())));
        }
        let probs = softmax(z);
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let loss = lse - z[target];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(shape_err!("backward needs a scalar loss, got {:?}", self.dims(loss)));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        let mut params = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf { param } => {
                    if let Some(id) = param {
                        params.push((*id, i));
                    }
                }
                Op::Conv2d { x, w, b, shape } => {
                    let cg = kernels::conv2d_backward(shape, self.value(*x).data(), self.value(*w).data(), &g);
                    add_into(&mut grads[x.0], &cg.input);
                    add_into(&mut grads[w.0], &cg.weight);
                    if let Some(b) = b {
                        add_into(&mut grads[b.0], &cg.bias);
                    }
                }
                Op::Conv1d { x, w, b, shape } => {
                    let cg = kernels::conv1d_backward(shape, self.value(*x).data(), self.value(*w).data(), &g);
                    add_into(&mut grads[x.0], &cg.input);
                    add_into(&mut grads[w.0], &cg.weight);
                    if let Some(b) = b {
                        add_into(&mut grads[b.0], &cg.bias);
                    }
                }
                Op::Linear { x, w, b } => {
                    let (xd, wd) = (self.dims(*x), self.dims(*w));
                    let (n, d, o) = (xd[0], xd[1], wd[0]);
                    let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                    // dx = dy W ; dW = dy^T x
                    accumulate(&mut grads[x.0], n * d, |dx| {
                        T::gemm(n, o, d, T::one(), &g, (o as isize, 1), wv, (d as isize, 1), T::one(), dx, (d as isize, 1));
                    });
                    accumulate(&mut grads[w.0], o * d, |dw| {
                        T::gemm(o, n, d, T::one(), &g, (1, o as isize), xv, (d as isize, 1), T::one(), dw, (d as isize, 1));
                    });
                    if let Some(b) = b {
                        accumulate(&mut grads[b.0], o, |db| {
                            for row in g.chunks(o) {
                                db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                            }
                        });
                    }
                }
                Op::GroupedLinear { x, w, b } => {
                    let (xd, wd) = (self.dims(*x), self.dims(*w));
                    let (gn, d, o) = (xd[0], xd[1], wd[1]);
                    let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                    accumulate(&mut grads[x.0], gn * d, |dx| {
                        for gi in 0..gn {
                            for oi in 0..o {
                                let gy = g[gi * o + oi];
                                let wr = &wv[(gi * o + oi) * d..(gi * o + oi + 1) * d];
                                dx[gi * d..(gi + 1) * d].iter_mut().zip(wr).for_each(|(a, &wv)| *a += gy * wv);
                            }
                        }
                    });
                    accumulate(&mut grads[w.0], gn * o * d, |dw| {
                        for gi in 0..gn {
                            let xr = &xv[gi * d..(gi + 1) * d];
                            for oi in 0..o {
                                let gy = g[gi * o + oi];
                                dw[(gi * o + oi) * d..(gi * o + oi + 1) * d]
                                    .iter_mut()
                                    .zip(xr)
                                    .for_each(|(a, &xv)| *a += gy * xv);
                            }
                        }
                    });
                    if let Some(b) = b {
                        add_into(&mut grads[b.0], &g);
                    }
                }
                Op::LeakyRelu { x, alpha } => {
                    let xv = self.value(*x).data();
                    accumulate(&mut grads[x.0], xv.len(), |dx| {
                        for ((a, &gv), &v) in dx.iter_mut().zip(&g).zip(xv) {
                            *a += if v > T::zero() { gv } else { gv * *alpha };
                        }
                    });
                }
                Op::Gather { x, index } => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads[x.0], n, |dx| {
                        for (&gv, &src) in g.iter().zip(index) {
                            dx[src] += gv;
                        }
                    });
                }
                Op::GlobalAvg { x, span } => {
                    let inv = T::one() / T::of(*span as f64);
                    let n = self.value(*x).len();
                    accumulate(&mut grads[x.0], n, |dx| {
                        for (row, &gv) in dx.chunks_mut(*span).zip(&g) {
                            row.iter_mut().for_each(|a| *a += gv * inv);
                        }
                    });
                }
                Op::Reshape { x } => add_into(&mut grads[x.0], &g),
                Op::Transpose { x, rows, cols } => {
                    let (rows, cols) = (*rows, *cols);
                    accumulate(&mut grads[x.0], rows * cols, |dx| {
                        for r in 0..rows {
                            for c in 0..cols {
                                dx[r * cols + c] += g[c * rows + r];
                            }
                        }
                    });
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        add_into(&mut grads[p.0], &g[off..off + n]);
                        off += n;
                    }
                }
                Op::MeanRows { x, rows } => {
                    let inv = T::one() / T::of(*rows as f64);
                    let n = self.value(*x).len();
                    accumulate(&mut grads[x.0], n, |dx| {
                        for row in dx.chunks_mut(g.len()) {
                            row.iter_mut().zip(&g).for_each(|(a, &gv)| *a += gv * inv);
                        }
                    });
                }
                Op::SoftmaxCrossEntropy { logits, target, probs } => {
                    let scale = g[0];
                    accumulate(&mut grads[logits.0], probs.len(), |dz| {
                        for (k, (a, &p)) in dz.iter_mut().zip(probs).enumerate() {
                            let onehot = if k == *target { T::one() } else { T::zero() };
                            *a += scale * (p - onehot);
                        }
                    });
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, params })
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}
