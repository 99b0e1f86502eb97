//! Forward and backward kernels for the layers of the 3D network.
//!
//! Volumes are `[channels, time, height, width]`. Convolution is lowered to a
//! matrix product over temporal chunks of the output so the patch matrix stays
//! bounded in memory; `conv3d_forward_direct` keeps the plain loop form as a
//! reference.

use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::{gemm_into, numel, MatView, Real, Tensor};

/// Weight and optional bias of a parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Upper bound on patch-matrix elements materialized at once.
const PATCH_BUDGET: usize = 1 << 23;

pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Ceil-mode pooling extent with boundary-clipped windows.
pub fn pool_output_extent(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || input < kernel {
        return None;
    }
    let mut out = (input - kernel).div_ceil(stride) + 1;
    // the last window must start inside the input
    if (out - 1) * stride >= input {
        out -= 1;
    }
    Some(out)
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    channels: usize,
    filters: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    input: [usize; 3],
    output: [usize; 3],
}

impl ConvGeometry {
    fn new<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let xs = x.shape();
        let ws = weight.shape();
        if xs.len() != 4 || ws.len() != 5 || ws[2] != ws[3] || ws[3] != ws[4] {
            return Err(shape_mismatch("conv3d", xs, ws));
        }
        if xs[0] != ws[1] {
            return Err(shape_mismatch("conv3d channels", xs, ws));
        }
        let kernel = ws[2];
        let mut output = [0; 3];
        for axis in 0..3 {
            output[axis] = conv_output_extent(xs[axis + 1], kernel, stride, pad).ok_or_else(|| {
                Error::InvalidShape {
                    shape: xs.to_vec(),
                    reason: format!("kernel {kernel} larger than padded input (pad {pad})"),
                }
            })?;
        }
        Ok(Self {
            channels: xs[0],
            filters: ws[0],
            kernel,
            stride,
            pad,
            input: [xs[1], xs[2], xs[3]],
            output,
        })
    }

    fn patch_rows(&self) -> usize {
        self.channels * self.kernel.pow(3)
    }

    fn plane(&self) -> usize {
        self.output[1] * self.output[2]
    }

    fn out_len(&self) -> usize {
        self.output[0] * self.plane()
    }

    /// Output time steps per patch-matrix chunk.
    fn chunk(&self) -> usize {
        (PATCH_BUDGET / (self.patch_rows() * self.plane()).max(1)).clamp(1, self.output[0])
    }

    /// Source coordinate along one axis, `None` when it falls in the padding.
    #[inline]
    fn src(&self, out: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.stride + k).checked_sub(self.pad)?;
        (pos < extent).then_some(pos)
    }

    /// Fills `col` (`patch_rows x steps*plane`) for output times `t0..t0+steps`.
    fn im2col<T: Real>(&self, x: &[T], t0: usize, steps: usize, col: &mut [T]) {
        let [ti, hi, wi] = self.input;
        let [_, ho, wo] = self.output;
        let k = self.kernel;
        let width = steps * self.plane();
        for c in 0..self.channels {
            for dt in 0..k {
                for dy in 0..k {
                    for dx in 0..k {
                        let row = ((c * k + dt) * k + dy) * k + dx;
                        let dst = &mut col[row * width..(row + 1) * width];
                        for s in 0..steps {
                            let st = self.src(t0 + s, dt, ti);
                            for y in 0..ho {
                                let base = (s * ho + y) * wo;
                                let sy = self.src(y, dy, hi);
                                match (st, sy) {
                                    (Some(st), Some(sy)) => {
                                        let src_row = ((c * ti + st) * hi + sy) * wi;
                                        for xo in 0..wo {
                                            dst[base + xo] = match self.src(xo, dx, wi) {
                                                Some(sx) => x[src_row + sx],
                                                None => T::zero(),
                                            };
                                        }
                                    }
                                    _ => dst[base..base + wo].fill(T::zero()),
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a patch-matrix gradient back onto the input gradient.
    fn col2im<T: Real>(&self, col: &[T], t0: usize, steps: usize, gx: &mut [T]) {
        let [ti, hi, wi] = self.input;
        let [_, ho, wo] = self.output;
        let k = self.kernel;
        let width = steps * self.plane();
        for c in 0..self.channels {
            for dt in 0..k {
                for dy in 0..k {
                    for dx in 0..k {
                        let row = ((c * k + dt) * k + dy) * k + dx;
                        let src = &col[row * width..(row + 1) * width];
                        for s in 0..steps {
                            let Some(st) = self.src(t0 + s, dt, ti) else { continue };
                            for y in 0..ho {
                                let Some(sy) = self.src(y, dy, hi) else { continue };
                                let base = (s * ho + y) * wo;
                                let dst_row = ((c * ti + st) * hi + sy) * wi;
                                for xo in 0..wo {
                                    if let Some(sx) = self.src(xo, dx, wi) {
                                        gx[dst_row + sx] += src[base + xo];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Real>(bias: Option<&Tensor<T>>, filters: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [filters] => Err(shape_mismatch("bias", b.shape(), &[filters])),
        _ => Ok(()),
    }
}

/// 3D convolution of `x` (`[C,T,H,W]`) with `weight` (`[F,C,k,k,k]`),
/// isotropic stride and zero padding.
pub fn conv3d_forward<T: Real>(
    x: &Tensor<T>,
    params: &LayerParams<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x, &params.weight, stride, pad)?;
    check_bias(params.bias.as_ref(), g.filters)?;
    let rows = g.patch_rows();
    let len = g.out_len();
    let mut out = vec![T::zero(); g.filters * len];
    if let Some(b) = &params.bias {
        for (f, &bv) in b.data().iter().enumerate() {
            out[f * len..(f + 1) * len].fill(bv);
        }
    }
    let chunk = g.chunk();
    let mut col = vec![T::zero(); rows * chunk * g.plane()];
    let w = MatView::new(params.weight.data(), g.filters, rows);
    let mut t0 = 0;
    while t0 < g.output[0] {
        let steps = chunk.min(g.output[0] - t0);
        let width = steps * g.plane();
        g.im2col(x.data(), t0, steps, &mut col[..rows * width]);
        gemm_into(
            w,
            MatView::new(&col[..rows * width], rows, width),
            T::one(),
            &mut out[t0 * g.plane()..],
            len,
        );
        t0 += steps;
    }
    Tensor::new(vec![g.filters, g.output[0], g.output[1], g.output[2]], out)
}

/// Loop-form convolution; same contract as [`conv3d_forward`].
pub fn conv3d_forward_direct<T: Real>(
    x: &Tensor<T>,
    params: &LayerParams<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x, &params.weight, stride, pad)?;
    check_bias(params.bias.as_ref(), g.filters)?;
    let [ti, hi, wi] = g.input;
    let [to, ho, wo] = g.output;
    let k = g.kernel;
    let xd = x.data();
    let wd = params.weight.data();
    let mut out = Vec::with_capacity(g.filters * g.out_len());
    for f in 0..g.filters {
        let bias = params.bias.as_ref().map_or(T::zero(), |b| b.data()[f]);
        for t in 0..to {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut acc = bias;
                    for c in 0..g.channels {
                        for dt in 0..k {
                            let Some(st) = g.src(t, dt, ti) else { continue };
                            for dy in 0..k {
                                let Some(sy) = g.src(y, dy, hi) else { continue };
                                for dx in 0..k {
                                    let Some(sx) = g.src(xo, dx, wi) else { continue };
                                    let wv = wd[(((f * g.channels + c) * k + dt) * k + dy) * k + dx];
                                    acc += wv * xd[((c * ti + st) * hi + sy) * wi + sx];
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new(vec![g.filters, to, ho, wo], out)
}

/// Gradients of a convolution.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the caller asked to skip the input gradient.
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv3d_backward<T: Real>(
    x: &Tensor<T>,
    params: &LayerParams<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(x, &params.weight, stride, pad)?;
    let expected = [g.filters, g.output[0], g.output[1], g.output[2]];
    if grad_out.shape() != expected {
        return Err(shape_mismatch("conv3d backward", grad_out.shape(), &expected));
    }
    let rows = g.patch_rows();
    let len = g.out_len();
    let go = grad_out.data();

    let bias: Vec<T> = go.chunks_exact(len).map(|r| r.iter().copied().sum()).collect();
    let mut gw = vec![T::zero(); g.filters * rows];
    let mut gx = need_input_grad.then(|| vec![T::zero(); x.len()]);

    let chunk = g.chunk();
    let mut col = vec![T::zero(); rows * chunk * g.plane()];
    let mut gcol = if need_input_grad { vec![T::zero(); col.len()] } else { Vec::new() };
    let w = MatView::new(params.weight.data(), g.filters, rows);
    let mut t0 = 0;
    while t0 < g.output[0] {
        let steps = chunk.min(g.output[0] - t0);
        let width = steps * g.plane();
        let go_chunk = MatView {
            data: &go[t0 * g.plane()..],
            rows: g.filters,
            cols: width,
            row_stride: len,
            col_stride: 1,
        };
        g.im2col(x.data(), t0, steps, &mut col[..rows * width]);
        let beta = if t0 == 0 { T::zero() } else { T::one() };
        gemm_into(go_chunk, MatView::new(&col[..rows * width], rows, width).t(), beta, &mut gw, rows);
        if let Some(gx) = gx.as_mut() {
            gemm_into(w.t(), go_chunk, T::zero(), &mut gcol[..rows * width], width);
            g.col2im(&gcol[..rows * width], t0, steps, gx);
        }
        t0 += steps;
    }
    Ok(ConvGrads {
        input: gx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?,
        weight: Tensor::new(params.weight.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![g.filters], bias)?,
    })
}

/// Pooling window and stride, temporal then spatial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolWindow {
    pub kernel_t: usize,
    pub kernel_s: usize,
    pub stride_t: usize,
    pub stride_s: usize,
}

impl PoolWindow {
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 4 {
            return Err(Error::InvalidShape {
                shape: input.to_vec(),
                reason: "pooling expects [C,T,H,W]".into(),
            });
        }
        let axes = [
            (input[1], self.kernel_t, self.stride_t),
            (input[2], self.kernel_s, self.stride_s),
            (input[3], self.kernel_s, self.stride_s),
        ];
        let mut shape = vec![input[0]];
        for (extent, k, s) in axes {
            shape.push(pool_output_extent(extent, k, s).ok_or_else(|| Error::InvalidShape {
                shape: input.to_vec(),
                reason: format!("axis of length {extent} shorter than pooling kernel {k}"),
            })?);
        }
        Ok(shape)
    }
}

/// Source positions selected by a max-pooling forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

pub fn maxpool3d_forward<T: Real>(x: &Tensor<T>, window: PoolWindow) -> Result<(Tensor<T>, PoolIndices)> {
    let out_shape = window.output_shape(x.shape())?;
    let [c, ti, hi, wi] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [to, ho, wo] = [out_shape[1], out_shape[2], out_shape[3]];
    let xd = x.data();
    let n = numel(&out_shape);
    let mut out = Vec::with_capacity(n);
    let mut argmax = Vec::with_capacity(n);
    for ch in 0..c {
        for t in 0..to {
            let t_lo = t * window.stride_t;
            let t_hi = (t_lo + window.kernel_t).min(ti);
            for y in 0..ho {
                let y_lo = y * window.stride_s;
                let y_hi = (y_lo + window.kernel_s).min(hi);
                for xo in 0..wo {
                    let x_lo = xo * window.stride_s;
                    let x_hi = (x_lo + window.kernel_s).min(wi);
                    let mut best = ((ch * ti + t_lo) * hi + y_lo) * wi + x_lo;
                    for st in t_lo..t_hi {
                        for sy in y_lo..y_hi {
                            let row = ((ch * ti + st) * hi + sy) * wi;
                            for sx in x_lo..x_hi {
                                // strict comparison keeps the first maximum
                                if xd[row + sx] > xd[best] {
                                    best = row + sx;
                                }
                            }
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((
        Tensor::new(out_shape.clone(), out)?,
        PoolIndices {
            input_shape: x.shape().to_vec(),
            output_shape: out_shape,
            argmax,
        },
    ))
}

pub fn maxpool3d_backward<T: Real>(grad_out: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    if grad_out.shape() != indices.output_shape.as_slice() {
        return Err(shape_mismatch("maxpool3d backward", grad_out.shape(), &indices.output_shape));
    }
    let mut gx = Tensor::zeros(&indices.input_shape);
    let gd = gx.data_mut();
    for (&src, &g) in indices.argmax.iter().zip(grad_out.data()) {
        gd[src] += g;
    }
    Ok(gx)
}

/// `y = W x + b` on the flattened input.
pub fn fc_forward<T: Real>(x: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    let ws = params.weight.shape();
    if ws.len() != 2 || ws[1] != x.len() {
        return Err(shape_mismatch("fc", x.shape(), ws));
    }
    check_bias(params.bias.as_ref(), ws[0])?;
    let mut out = match &params.bias {
        Some(b) => b.data().to_vec(),
        None => vec![T::zero(); ws[0]],
    };
    gemm_into(
        MatView::new(params.weight.data(), ws[0], ws[1]),
        MatView::new(x.data(), ws[1], 1),
        T::one(),
        &mut out,
        1,
    );
    Tensor::new(vec![ws[0]], out)
}

/// Gradients of a fully connected layer. `input` keeps the shape of `x`.
#[derive(Debug, Clone)]
pub struct FcGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn fc_backward<T: Real>(x: &Tensor<T>, params: &LayerParams<T>, grad_out: &Tensor<T>) -> Result<FcGrads<T>> {
    let ws = params.weight.shape();
    if ws.len() != 2 || ws[1] != x.len() || grad_out.shape() != [ws[0]] {
        return Err(shape_mismatch("fc backward", grad_out.shape(), ws));
    }
    let mut gx = vec![T::zero(); ws[1]];
    gemm_into(
        MatView::new(params.weight.data(), ws[0], ws[1]).t(),
        MatView::new(grad_out.data(), ws[0], 1),
        T::zero(),
        &mut gx,
        1,
    );
    Ok(FcGrads {
        input: Tensor::new(x.shape().to_vec(), gx)?,
        weight: outer(grad_out, x)?,
        bias: grad_out.clone(),
    })
}

/// `a bᵀ` for two vectors (any shapes, flattened).
pub fn outer<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = (a.len(), b.len());
    let mut data = Vec::with_capacity(m * n);
    for &ai in a.data() {
        data.extend(b.data().iter().map(|&bj| ai * bj));
    }
    Tensor::new(vec![m, n], data)
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes gradient where `x > 0`; the subgradient at zero is zero.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(shape_mismatch("relu backward", x.shape(), grad_out.shape()));
    }
    Tensor::new(
        x.shape().to_vec(),
        x.data()
            .iter()
            .zip(grad_out.data())
            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
            .collect(),
    )
}

pub fn softmax_forward<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.len() < 2 {
        return Err(Error::InvalidShape {
            shape: logits.shape().to_vec(),
            reason: "softmax needs at least two classes".into(),
        });
    }
    let max = logits.data().iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<T> = logits.data().iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Tensor::new(vec![logits.len()], exps.into_iter().map(|e| e / total).collect())
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Multinomial logistic loss `-ln p[label]`.
pub fn softmax_logloss<T: Real>(probs: &Tensor<T>, label: usize) -> Result<T> {
    check_label(label, probs.len())?;
    Ok(-probs.data()[label].ln())
}

/// Loss computed from logits through log-sum-exp, together with the
/// probabilities. Agrees with `softmax_logloss(softmax_forward(z))` but stays
/// finite when a probability underflows.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, label: usize) -> Result<(Tensor<T>, T)> {
    check_label(label, logits.len())?;
    let probs = softmax_forward(logits)?;
    let max = logits.data().iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let lse = logits.data().iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
    Ok((probs, lse - logits.data()[label]))
}

/// `∂L_c/∂z = p − onehot(label)`.
pub fn softmax_logloss_backward<T: Real>(probs: &Tensor<T>, label: usize) -> Result<Tensor<T>> {
    check_label(label, probs.len())?;
    let mut g = probs.clone();
    g.data_mut()[label] = g.data()[label] - T::one();
    Ok(g)
}
