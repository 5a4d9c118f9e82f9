use super::layers::Param;
use super::Real;
use crate::{Error, Result};

/// SGD with classical momentum: `v <- m v - lr g; p <- p + v`.
///
/// Velocities are matched to parameters by position, so the same parameter
/// list (in the same order) must be passed on every step.
#[derive(Clone, Debug, Default)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Applies one update and zeroes every gradient.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.tensor.grad().is_none()) {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect();
        }
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            let (data, grad) = p.tensor.data_and_grad_mut();
            let grad = grad.expect("checked above");
            for ((x, g), vel) in data.iter_mut().zip(grad.iter_mut()).zip(v.iter_mut()) {
                *vel = self.momentum * *vel - self.lr * *g;
                *x += *vel;
                *g = T::zero();
            }
        }
        Ok(())
    }
}

/// Adam with bias correction:
/// `m <- b1 m + (1 - b1) g; v <- b2 v + (1 - b2) g^2;
///  p <- p - lr mhat / (sqrt(vhat) + eps)`.
///
/// A parameter whose gradient has always been zero is left bit-identical.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    t: i32,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.tensor.grad().is_none()) {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        if self.moments.len() != params.len() {
            self.moments = params
                .iter()
                .map(|p| (vec![T::zero(); p.tensor.len()], vec![T::zero(); p.tensor.len()]))
                .collect();
            self.t = 0;
        }
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for (p, (m, v)) in params.iter_mut().zip(&mut self.moments) {
            let (data, grad) = p.tensor.data_and_grad_mut();
            let grad = grad.expect("checked above");
            for (((x, g), m), v) in data.iter_mut().zip(grad.iter_mut()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (one - self.beta1) * *g;
                *v = self.beta2 * *v + (one - self.beta2) * *g * *g;
                if *m != T::zero() {
                    *x -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                }
                *g = T::zero();
            }
        }
        Ok(())
    }
}

/// Either optimiser behind one interface.
#[derive(Clone, Debug)]
pub enum Optimizer<T> {
    Sgd(Sgd<T>),
    Adam(Adam<T>),
}

impl<T: Real> Optimizer<T> {
    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        match self {
            Self::Sgd(o) => o.step(params),
            Self::Adam(o) => o.step(params),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Shape4, Tensor4};

    fn scalar(v: f64) -> Param<f64> {
        Param::new("p", Tensor4::full(Shape4::new(1, 1, 1, 1), v))
    }

    fn set_grad(p: &mut Param<f64>, g: f64) {
        p.tensor.grad_mut().unwrap()[0] = g;
    }

    #[test]
    fn plain_step() {
        let mut p = scalar(5.0);
        set_grad(&mut p, 1.0);
        Sgd::new(0.1, 0.0).step(&mut [&mut p]).unwrap();
        assert!((p.tensor.data()[0] - 4.9).abs() < 1e-15);
        assert_eq!(p.tensor.grad().unwrap()[0], 0.0);
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut p = scalar(5.0);
        set_grad(&mut p, 3.0);
        Sgd::new(0.0, 0.9).step(&mut [&mut p]).unwrap();
        assert_eq!(p.tensor.data()[0], 5.0);
    }

    #[test]
    fn momentum_recurrence() {
        let mut p = scalar(0.0);
        let mut opt = Sgd::new(0.1, 0.9);
        set_grad(&mut p, 1.0);
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.tensor.data()[0] + 0.1).abs() < 1e-15);
        set_grad(&mut p, 1.0);
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.tensor.data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient() {
        let mut p = scalar(1.0);
        p.tensor = Tensor4::full(Shape4::new(1, 1, 1, 1), 1.0);
        assert!(matches!(
            Sgd::new(0.1, 0.0).step(&mut [&mut p]),
            Err(Error::MissingGradient(_))
        ));
    }
    #[test]
    fn adam_first_step_is_lr_times_sign() {
        for g in [3.0, -0.002] {
            let mut p = scalar(1.0);
            set_grad(&mut p, g);
            Adam::new(0.01).step(&mut [&mut p]).unwrap();
            let want = 1.0 - 0.01 * g.signum() * g.abs() / (g.abs() + 1e-8);
            assert!((p.tensor.data()[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_matches_reference_recurrence() {
        let grads = [0.5, -1.0, 0.25, 2.0];
        let mut p = scalar(0.3);
        let mut opt = Adam::new(0.1);
        let (mut x, mut m, mut v) = (0.3f64, 0.0f64, 0.0f64);
        for (t, &g) in grads.iter().enumerate() {
            set_grad(&mut p, g);
            opt.step(&mut [&mut p]).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let k = t as i32 + 1;
            x -= 0.1 * (m / (1.0 - 0.9f64.powi(k))) / ((v / (1.0 - 0.999f64.powi(k))).sqrt() + 1e-8);
            assert!((p.tensor.data()[0] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_leaves_zero_gradient_params_bit_identical() {
        let mut p = scalar(-0.0);
        let mut q = scalar(0.7);
        let mut opt = Optimizer::Adam(Adam::new(0.1));
        for _ in 0..3 {
            set_grad(&mut q, 1.0);
            opt.step(&mut [&mut p, &mut q]).unwrap();
        }
        assert_eq!(p.tensor.data()[0].to_bits(), (-0.0f64).to_bits());
        assert!(q.tensor.data()[0] < 0.7);
    }
}
