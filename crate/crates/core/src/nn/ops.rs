//! Functional forward and backward kernels.
//!
//! Convolutions lower to matrix products through im2col. Every kernel works
//! per batch item so items can run on the rayon pool; parameter gradients are
//! computed per item and then summed in item order, which keeps results
//! bit-identical regardless of the number of worker threads.

use rayon::prelude::*;

use super::{Real, Shape4, Tensor4};
use crate::{Error, Result};

/// Geometry of a (possibly atrous) 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// Square kernel, stride 1, "same" padding for odd kernels.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        }
    }

    pub fn weight_shape(&self) -> Shape4 {
        Shape4::new(self.out_channels, self.in_channels, self.kernel.0, self.kernel.1)
    }

    fn axis(&self, size: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = size + 2 * self.padding;
        if self.stride == 0 || k == 0 || self.dilation == 0 || padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }

    /// `floor((in + 2p - d(k-1) - 1) / s) + 1` per axis.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (self.axis(h, self.kernel.0), self.axis(w, self.kernel.1)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::shape(format!(
                "conv {self:?} produces an empty output on a {h}x{w} input"
            ))),
        }
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        if input.c != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, input.c
            )));
        }
        let (oh, ow) = self.output_hw(input.h, input.w)?;
        Ok(Shape4::new(input.n, self.out_channels, oh, ow))
    }
}

/// Geometry of a transposed convolution (no dilation).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeconvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

impl DeconvSpec {
    /// Kernel 4, stride 2, padding 1: exactly doubles both spatial axes.
    pub fn doubling(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (4, 4),
            stride: 2,
            padding: 1,
        }
    }

    /// Weights are stored `(in_channels, out_channels, f_h, f_w)`, so the same
    /// buffer serves as the weight of the adjoint convolution.
    pub fn weight_shape(&self) -> Shape4 {
        Shape4::new(self.in_channels, self.out_channels, self.kernel.0, self.kernel.1)
    }

    /// `(in - 1) * stride - 2p + k` per axis.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |size: usize, k: usize| -> Option<usize> {
            if size == 0 || self.stride == 0 || k == 0 {
                return None;
            }
            ((size - 1) * self.stride + k).checked_sub(2 * self.padding).filter(|&o| o >= 1)
        };
        match (axis(h, self.kernel.0), axis(w, self.kernel.1)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::shape(format!(
                "deconv {self:?} produces an empty output on a {h}x{w} input"
            ))),
        }
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        if input.c != self.in_channels {
            return Err(Error::shape(format!(
                "deconv expects {} input channels, got {}",
                self.in_channels, input.c
            )));
        }
        let (oh, ow) = self.output_hw(input.h, input.w)?;
        Ok(Shape4::new(input.n, self.out_channels, oh, ow))
    }

    /// The convolution this operator is the adjoint of.
    pub fn adjoint_conv(&self) -> ConvSpec {
        ConvSpec {
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            dilation: 1,
        }
    }
}

/// Mapping between an image `(c, h, w)` and the column matrix
/// `(c * kh * kw, oh * ow)` of a convolution sliding over it.
#[derive(Clone, Copy, Debug)]
struct Patches {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dil: usize,
    oh: usize,
    ow: usize,
}

impl Patches {
    fn new(spec: &ConvSpec, c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Self {
        Self {
            c,
            h,
            w,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            stride: spec.stride,
            pad: spec.padding,
            dil: spec.dilation,
            oh,
            ow,
        }
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source column index for output column `o` at kernel tap `j`.
    #[inline]
    fn src(&self, o: usize, j: usize) -> Option<usize> {
        let x = (o * self.stride + j * self.dil) as isize - self.pad as isize;
        (x >= 0 && (x as usize) < self.w).then_some(x as usize)
    }

    fn im2col<T: Real>(&self, img: &[T], cols: &mut [T]) {
        let ncols = self.cols();
        for c in 0..self.c {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + i * self.dil) as isize - self.pad as isize;
                        let out = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if y < 0 || y as usize >= self.h {
                            out.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[y as usize * self.w..(y as usize + 1) * self.w];
                        for (ox, v) in out.iter_mut().enumerate() {
                            *v = match self.src(ox, j) {
                                Some(x) => src[x],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Patches::im2col`]; accumulates into `img`.
    fn col2im<T: Real>(&self, cols: &[T], img: &mut [T]) {
        let ncols = self.cols();
        for c in 0..self.c {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + i * self.dil) as isize - self.pad as isize;
                        if y < 0 || y as usize >= self.h {
                            continue;
                        }
                        let dst = &mut plane[y as usize * self.w..(y as usize + 1) * self.w];
                        let vals = &src[oy * self.ow..(oy + 1) * self.ow];
                        for (ox, &v) in vals.iter().enumerate() {
                            if let Some(x) = self.src(ox, j) {
                                dst[x] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T>(bias: &[T], channels: usize) -> Result<()> {
    if bias.len() != channels {
        return Err(Error::shape(format!(
            "bias has {} entries for {channels} output channels",
            bias.len()
        )));
    }
    Ok(())
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn sum_in_order<T: Real>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut total = vec![T::zero(); len];
    for part in parts {
        total.iter_mut().zip(part).for_each(|(t, p)| *t += p);
    }
    total
}

fn channel_sums<T: Real>(grad_out: &Tensor4<T>) -> Vec<T> {
    let s = grad_out.shape();
    let mut db = vec![T::zero(); s.c];
    for n in 0..s.n {
        for (c, plane) in grad_out.item(n).chunks(s.plane()).enumerate() {
            db[c] += plane.iter().copied().sum::<T>();
        }
    }
    db
}

/// Gradients of a (transposed) convolution.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Cross-correlation with stride, zero padding and dilation.
pub fn conv2d<T: Real>(
    x: &Tensor4<T>,
    spec: &ConvSpec,
    weights: &Tensor4<T>,
    bias: &[T],
) -> Result<Tensor4<T>> {
    let out_shape = spec.output_shape(x.shape())?;
    weights.ensure_shape(spec.weight_shape(), "conv weights")?;
    check_bias(bias, spec.out_channels)?;
    let s = x.shape();
    let p = Patches::new(spec, s.c, s.h, s.w, out_shape.h, out_shape.w);
    let mut out = Tensor4::zeros(out_shape);
    out.data_mut()
        .par_chunks_mut(out_shape.item())
        .enumerate()
        .for_each(|(n, dst)| {
            let mut cols = vec![T::zero(); p.rows() * p.cols()];
            p.im2col(x.item(n), &mut cols);
            T::gemm(
                spec.out_channels,
                p.rows(),
                p.cols(),
                weights.data(),
                false,
                &cols,
                false,
                T::zero(),
                dst,
            );
            add_bias(dst, bias, out_shape.plane());
        });
    Ok(out)
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    spec: &ConvSpec,
    weights: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    let out_shape = spec.output_shape(x.shape())?;
    weights.ensure_shape(spec.weight_shape(), "conv weights")?;
    grad_out.ensure_shape(out_shape, "conv upstream gradient")?;
    let s = x.shape();
    let p = Patches::new(spec, s.c, s.h, s.w, out_shape.h, out_shape.w);
    let wlen = weights.len();
    let mut dx = Tensor4::zeros(s);
    let dw_parts: Vec<Vec<T>> = dx
        .data_mut()
        .par_chunks_mut(s.item())
        .enumerate()
        .map(|(n, dx_n)| {
            let go = grad_out.item(n);
            let mut cols = vec![T::zero(); p.rows() * p.cols()];
            p.im2col(x.item(n), &mut cols);
            let mut dw = vec![T::zero(); wlen];
            T::gemm(spec.out_channels, p.cols(), p.rows(), go, false, &cols, true, T::zero(), &mut dw);
            T::gemm(p.rows(), spec.out_channels, p.cols(), weights.data(), true, go, false, T::zero(), &mut cols);
            p.col2im(&cols, dx_n);
            dw
        })
        .collect();
    Ok(ConvGrads {
        input: dx,
        weights: sum_in_order(dw_parts, wlen),
        bias: channel_sums(grad_out),
    })
}

/// Transposed convolution: scatters every input element through the kernel.
/// Computes `W (x) S + B`; pair with [`relu`] for the rectified form.
pub fn transposed_conv2d<T: Real>(
    x: &Tensor4<T>,
    spec: &DeconvSpec,
    weights: &Tensor4<T>,
    bias: &[T],
) -> Result<Tensor4<T>> {
    let out_shape = spec.output_shape(x.shape())?;
    weights.ensure_shape(spec.weight_shape(), "deconv weights")?;
    check_bias(bias, spec.out_channels)?;
    let s = x.shape();
    let p = Patches::new(&spec.adjoint_conv(), spec.out_channels, out_shape.h, out_shape.w, s.h, s.w);
    let mut out = Tensor4::zeros(out_shape);
    out.data_mut()
        .par_chunks_mut(out_shape.item())
        .enumerate()
        .for_each(|(n, dst)| {
            let mut cols = vec![T::zero(); p.rows() * p.cols()];
            T::gemm(p.rows(), spec.in_channels, p.cols(), weights.data(), true, x.item(n), false, T::zero(), &mut cols);
            p.col2im(&cols, dst);
            add_bias(dst, bias, out_shape.plane());
        });
    Ok(out)
}

pub fn transposed_conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    spec: &DeconvSpec,
    weights: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    let out_shape = spec.output_shape(x.shape())?;
    weights.ensure_shape(spec.weight_shape(), "deconv weights")?;
    grad_out.ensure_shape(out_shape, "deconv upstream gradient")?;
    let s = x.shape();
    let p = Patches::new(&spec.adjoint_conv(), spec.out_channels, out_shape.h, out_shape.w, s.h, s.w);
    let wlen = weights.len();
    let mut dx = Tensor4::zeros(s);
    let dw_parts: Vec<Vec<T>> = dx
        .data_mut()
        .par_chunks_mut(s.item())
        .enumerate()
        .map(|(n, dx_n)| {
            let mut cols = vec![T::zero(); p.rows() * p.cols()];
            p.im2col(grad_out.item(n), &mut cols);
            T::gemm(spec.in_channels, p.rows(), p.cols(), weights.data(), false, &cols, false, T::zero(), dx_n);
            let mut dw = vec![T::zero(); wlen];
            T::gemm(spec.in_channels, p.cols(), p.rows(), x.item(n), false, &cols, true, T::zero(), &mut dw);
            dw
        })
        .collect();
    Ok(ConvGrads {
        input: dx,
        weights: sum_in_order(dw_parts, wlen),
        bias: channel_sums(grad_out),
    })
}

pub fn relu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let data = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
    Tensor4::from_vec(x.shape(), data).expect("same shape")
}

/// Passes the upstream gradient where the input was strictly positive.
pub fn relu_backward<T: Real>(x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    grad_out.ensure_shape(x.shape(), "relu upstream gradient")?;
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(x.shape(), data)
}

/// Max pooling geometry; padded positions never win.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    pub fn new(window: usize, stride: usize) -> Self {
        Self {
            window,
            stride,
            padding: 0,
        }
    }

    /// Window 3, stride 2, padding 1: maps `s` to `ceil(s / 2)`.
    pub fn halving() -> Self {
        Self {
            window: 3,
            stride: 2,
            padding: 1,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |size: usize| -> Option<usize> {
            let padded = size + 2 * self.padding;
            if self.window == 0 || self.stride == 0 || self.padding >= self.window || padded < self.window {
                return None;
            }
            Some((padded - self.window) / self.stride + 1)
        };
        match (axis(h), axis(w)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::shape(format!("pool {self:?} does not fit a {h}x{w} input"))),
        }
    }
}

/// Pooled values plus, for each output, the flat input index that won.
#[derive(Clone, Debug)]
pub struct Pooled<T> {
    pub output: Tensor4<T>,
    pub argmax: Vec<usize>,
}

pub fn maxpool2d<T: Real>(x: &Tensor4<T>, spec: &PoolSpec) -> Result<Pooled<T>> {
    let s = x.shape();
    let (oh, ow) = spec.output_hw(s.h, s.w)?;
    let out_shape = Shape4::new(s.n, s.c, oh, ow);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    for plane_idx in 0..s.n * s.c {
        let base = plane_idx * s.plane();
        let plane = &x.data()[base..base + s.plane()];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best: Option<(T, usize)> = None;
                for i in 0..spec.window {
                    let y = (oy * spec.stride + i) as isize - spec.padding as isize;
                    if y < 0 || y as usize >= s.h {
                        continue;
                    }
                    for j in 0..spec.window {
                        let xx = (ox * spec.stride + j) as isize - spec.padding as isize;
                        if xx < 0 || xx as usize >= s.w {
                            continue;
                        }
                        let idx = y as usize * s.w + xx as usize;
                        let v = plane[idx];
                        // strict comparison: first maximum in row-major order wins
                        if best.is_none_or(|(b, _)| v > b) {
                            best = Some((v, idx));
                        }
                    }
                }
                let (v, idx) = best.expect("padding < window guarantees a valid tap");
                out.push(v);
                argmax.push(base + idx);
            }
        }
    }
    Ok(Pooled {
        output: Tensor4::from_vec(out_shape, out)?,
        argmax,
    })
}

pub fn maxpool2d_backward<T: Real>(
    input_shape: Shape4,
    argmax: &[usize],
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::shape("pool argmax does not match upstream gradient"));
    }
    let mut dx = Tensor4::zeros(input_shape);
    let data = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        data[idx] += g;
    }
    Ok(dx)
}

/// Scalar loss with its gradient w.r.t. the prediction.
#[derive(Clone, Debug)]
pub struct Loss<T> {
    pub value: T,
    pub grad: Tensor4<T>,
}

/// Mean squared error over all elements.
pub fn l2_loss<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<Loss<T>> {
    target.ensure_shape(pred.shape(), "l2 target")?;
    let count = T::lit(pred.len() as f64);
    let two = T::lit(2.0);
    let mut value = T::zero();
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            value += d * d;
            two * d / count
        })
        .collect();
    Ok(Loss {
        value: value / count,
        grad: Tensor4::from_vec(pred.shape(), grad)?,
    })
}

/// Per-pixel two-class softmax cross-entropy, averaged over `n * h * w`.
/// `labels` is laid out `(n, h, w)` with values in `{0, 1}`.
pub fn softmax_ce_loss<T: Real>(logits: &Tensor4<T>, labels: &[u8]) -> Result<Loss<T>> {
    let s = logits.shape();
    if s.c != 2 {
        return Err(Error::shape(format!("softmax loss needs 2 channels, got {}", s.c)));
    }
    if labels.len() != s.n * s.plane() {
        return Err(Error::shape(format!(
            "{} labels for logits {s}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::LabelOutOfRange(bad));
    }
    let count = T::lit((s.n * s.plane()) as f64);
    let mut grad = Tensor4::zeros(s);
    let mut total = T::zero();
    let plane = s.plane();
    for n in 0..s.n {
        for i in 0..plane {
            let i0 = n * 2 * plane + i;
            let i1 = i0 + plane;
            let (z0, z1) = (logits.data()[i0], logits.data()[i1]);
            let m = z0.max(z1);
            let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
            let sum = e0 + e1;
            let lse = m + sum.ln();
            let label = labels[n * plane + i];
            total += lse - if label == 1 { z1 } else { z0 };
            let (p0, p1) = (e0 / sum, e1 / sum);
            let g = grad.data_mut();
            g[i0] = (p0 - if label == 0 { T::one() } else { T::zero() }) / count;
            g[i1] = (p1 - if label == 1 { T::one() } else { T::zero() }) / count;
        }
    }
    Ok(Loss {
        value: total / count,
        grad,
    })
}
