//! Stateful layers that cache their forward inputs for the backward pass.

use rand::Rng;

use super::ops::{self, ConvSpec, DeconvSpec, PoolSpec};
use super::{Real, Shape4, Tensor4};
use crate::{Error, Result};

/// Named trainable tensor; always carries a gradient buffer.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor4<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor4<T>) -> Self {
        Self {
            name: name.into(),
            tensor: tensor.with_grad(),
        }
    }

    /// Scaled-uniform init in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(name: impl Into<String>, shape: Shape4, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self::uniform(name, shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
    }

    /// Uniform in `±sqrt(6 / fan_in)`.
    pub fn he(name: impl Into<String>, shape: Shape4, fan_in: usize, rng: &mut impl Rng) -> Self {
        Self::uniform(name, shape, (6.0 / fan_in as f64).sqrt(), rng)
    }

    pub fn uniform(name: impl Into<String>, shape: Shape4, limit: f64, rng: &mut impl Rng) -> Self {
        let data = (0..shape.len()).map(|_| T::lit(rng.random_range(-limit..limit))).collect();
        Self::new(name, Tensor4::from_vec(shape, data).expect("shape matches"))
    }

    fn accumulate(&mut self, grad: &[T]) {
        let g = self.tensor.grad_mut().expect("params carry gradients");
        g.iter_mut().zip(grad).for_each(|(a, &b)| *a += b);
    }
}

pub trait Layer<T: Real>: Send {
    fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>>;

    /// Gradient w.r.t. the last forward input; parameter gradients accumulate.
    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>>;

    fn output_shape(&self, input: Shape4) -> Result<Shape4>;

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

fn cached<'a, T>(cache: &'a Option<Tensor4<T>>, what: &str) -> Result<&'a Tensor4<T>> {
    cache
        .as_ref()
        .ok_or_else(|| Error::shape(format!("{what}: backward called before forward")))
}

pub struct Conv2d<T> {
    pub spec: ConvSpec,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor4<T>>,
}

/// Weight initialisation of convolution-like layers; biases start at zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Init {
    #[default]
    Glorot,
    /// For layers followed by a ReLU. Uses the number of taps that actually
    /// reach one output, which for a strided deconvolution is `k / stride`
    /// per axis.
    He,
}

impl<T: Real> Conv2d<T> {
    pub fn new(name: &str, spec: ConvSpec, rng: &mut impl Rng) -> Self {
        Self::with_init(name, spec, Init::Glorot, rng)
    }

    pub fn with_init(name: &str, spec: ConvSpec, init: Init, rng: &mut impl Rng) -> Self {
        let k = spec.kernel.0 * spec.kernel.1;
        let wname = format!("{name}.weight");
        let shape = spec.weight_shape();
        Self {
            spec,
            weight: match init {
                Init::Glorot => Param::glorot(wname, shape, spec.in_channels * k, spec.out_channels * k, rng),
                Init::He => Param::he(wname, shape, spec.in_channels * k, rng),
            },
            bias: Param::new(format!("{name}.bias"), Tensor4::zeros(Shape4::new(1, spec.out_channels, 1, 1))),
            input: None,
        }
    }
}

impl<T: Real> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let y = ops::conv2d(x, &self.spec, &self.weight.tensor, self.bias.tensor.data())?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = cached(&self.input, "conv2d")?;
        let g = ops::conv2d_backward(x, &self.spec, &self.weight.tensor, grad_out)?;
        self.weight.accumulate(&g.weights);
        self.bias.accumulate(&g.bias);
        Ok(g.input)
    }

    fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        self.spec.output_shape(input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub struct Deconv2d<T> {
    pub spec: DeconvSpec,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor4<T>>,
}

impl<T: Real> Deconv2d<T> {
    pub fn new(name: &str, spec: DeconvSpec, rng: &mut impl Rng) -> Self {
        Self::with_init(name, spec, Init::Glorot, rng)
    }

    pub fn with_init(name: &str, spec: DeconvSpec, init: Init, rng: &mut impl Rng) -> Self {
        let k = spec.kernel.0 * spec.kernel.1;
        let wname = format!("{name}.weight");
        let shape = spec.weight_shape();
        let taps = spec.kernel.0.div_ceil(spec.stride) * spec.kernel.1.div_ceil(spec.stride);
        Self {
            spec,
            weight: match init {
                Init::Glorot => Param::glorot(wname, shape, spec.in_channels * k, spec.out_channels * k, rng),
                Init::He => Param::he(wname, shape, spec.in_channels * taps, rng),
            },
            bias: Param::new(format!("{name}.bias"), Tensor4::zeros(Shape4::new(1, spec.out_channels, 1, 1))),
            input: None,
        }
    }
}

impl<T: Real> Layer<T> for Deconv2d<T> {
    fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let y = ops::transposed_conv2d(x, &self.spec, &self.weight.tensor, self.bias.tensor.data())?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = cached(&self.input, "deconv2d")?;
        let g = ops::transposed_conv2d_backward(x, &self.spec, &self.weight.tensor, grad_out)?;
        self.weight.accumulate(&g.weights);
        self.bias.accumulate(&g.bias);
        Ok(g.input)
    }

    fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        self.spec.output_shape(input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Default)]
pub struct Relu<T> {
    input: Option<Tensor4<T>>,
}

impl<T: Real> Relu<T> {
    pub fn new() -> Self {
        Self { input: None }
    }
}

impl<T: Real> Layer<T> for Relu<T> {
    fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.input = Some(x.clone());
        Ok(ops::relu(x))
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        ops::relu_backward(cached(&self.input, "relu")?, grad_out)
    }

    fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        Ok(input)
    }
}

pub struct MaxPool2d {
    pub spec: PoolSpec,
    cache: Option<(Shape4, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(spec: PoolSpec) -> Self {
        Self { spec, cache: None }
    }
}

impl<T: Real> Layer<T> for MaxPool2d {
    fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let pooled = ops::maxpool2d(x, &self.spec)?;
        self.cache = Some((x.shape(), pooled.argmax));
        Ok(pooled.output)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (shape, argmax) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::shape("maxpool: backward called before forward"))?;
        ops::maxpool2d_backward(*shape, argmax, grad_out)
    }

    fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        let (h, w) = self.spec.output_hw(input.h, input.w)?;
        Ok(Shape4::new(input.n, input.c, h, w))
    }
}

/// Centre crop to a fixed spatial size; backward zero-pads.
pub struct CenterCrop {
    pub h: usize,
    pub w: usize,
    input: Option<Shape4>,
}

impl CenterCrop {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w, input: None }
    }

    /// Row and column offset of the kept window; the extra pixel of an odd
    /// surplus goes to the bottom/right.
    pub fn offsets(&self, input: Shape4) -> Result<(usize, usize)> {
        if input.h < self.h || input.w < self.w {
            return Err(Error::shape(format!(
                "cannot crop {}x{} to {}x{}",
                input.h, input.w, self.h, self.w
            )));
        }
        Ok(((input.h - self.h) / 2, (input.w - self.w) / 2))
    }
}

impl<T: Real> Layer<T> for CenterCrop {
    fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let s = x.shape();
        let (oy, ox) = self.offsets(s)?;
        self.input = Some(s);
        if (s.h, s.w) == (self.h, self.w) {
            return Ok(x.clone());
        }
        let out_shape = Shape4::new(s.n, s.c, self.h, self.w);
        let mut data = Vec::with_capacity(out_shape.len());
        for plane in x.data().chunks(s.plane()) {
            for y in 0..self.h {
                let row = (y + oy) * s.w + ox;
                data.extend_from_slice(&plane[row..row + self.w]);
            }
        }
        Tensor4::from_vec(out_shape, data)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let s = self.input.ok_or_else(|| Error::shape("crop: backward called before forward"))?;
        let (oy, ox) = self.offsets(s)?;
        grad_out.ensure_shape(Shape4::new(s.n, s.c, self.h, self.w), "crop upstream gradient")?;
        if (s.h, s.w) == (self.h, self.w) {
            return Ok(grad_out.clone());
        }
        let mut dx = Tensor4::zeros(s);
        let dst = dx.data_mut();
        for (p, plane) in grad_out.data().chunks(self.h * self.w).enumerate() {
            for y in 0..self.h {
                let row = p * s.plane() + (y + oy) * s.w + ox;
                dst[row..row + self.w].copy_from_slice(&plane[y * self.w..(y + 1) * self.w]);
            }
        }
        Ok(dx)
    }

    fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        self.offsets(input)?;
        Ok(Shape4::new(input.n, input.c, self.h, self.w))
    }
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential<T> {
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Real> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: impl Layer<T> + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<T: Real> Layer<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        self.layers.iter().try_fold(input, |s, l| l.output_shape(s))
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn crop_328_to_321_keeps_centre() {
        let mut crop = CenterCrop::new(321, 321);
        let s = Shape4::new(1, 1, 328, 328);
        assert_eq!(crop.offsets(s).unwrap(), (3, 3));
        let x = Tensor4::<f32>::from_vec(s, (0..s.len()).map(|i| i as f32).collect()).unwrap();
        let y = crop.forward(&x).unwrap();
        assert_eq!(y.at(0, 0, 0, 0), x.at(0, 0, 3, 3));
        assert_eq!(y.at(0, 0, 320, 320), x.at(0, 0, 323, 323));
        let g = crop.backward(&Tensor4::full(y.shape(), 1.0)).unwrap();
        assert_eq!(g.data().iter().sum::<f32>(), (321 * 321) as f32);
        assert_eq!(g.at(0, 0, 2, 3), 0.0);
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Param<f64> = Param::glorot("w", Shape4::new(8, 4, 3, 3), 36, 72, &mut rng);
        let lim = (6.0f64 / 108.0).sqrt();
        assert!(p.tensor.data().iter().all(|v| v.abs() <= lim));
        assert!(p.tensor.grad().unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let mut r = Relu::<f32>::new();
        assert!(r.backward(&Tensor4::zeros(Shape4::new(1, 1, 1, 1))).is_err());
    }
}
