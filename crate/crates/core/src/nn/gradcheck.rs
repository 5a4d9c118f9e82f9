//! Central finite-difference checks of analytic backward passes.
//!
//! Each check builds the scalar `L = <f(inputs), r>` for a fixed random `r`,
//! runs the analytic backward with upstream gradient `r`, and compares every
//! partial derivative with `(L(v + h) - L(v - h)) / 2h`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{self, ConvSpec, DeconvSpec, PoolSpec};
use super::{Shape4, Tensor4};
use crate::Result;

/// Below this magnitude, errors are measured in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(input group, index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic[g][i]` against central differences of `loss` over every
/// entry of every input group.
pub fn grad_check(
    name: &str,
    inputs: &mut [Vec<f64>],
    analytic: &[Vec<f64>],
    step: f64,
    tolerance: f64,
    mut loss: impl FnMut(&[Vec<f64>]) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        name: name.to_owned(),
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        tolerance,
    };
    for g in 0..inputs.len() {
        for i in 0..inputs[g].len() {
            let orig = inputs[g][i];
            inputs[g][i] = orig + step;
            let up = loss(inputs);
            inputs[g][i] = orig - step;
            let down = loss(inputs);
            inputs[g][i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[g][i];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if !(err <= report.max_rel_error) {
                report.max_rel_error = err;
                report.worst = Some((g, i, a, numeric));
            }
        }
    }
    report
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(shape: Shape4, data: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec(shape, data.to_vec()).expect("shape matches")
}

fn project(y: &Tensor4<f64>, r: &[f64]) -> f64 {
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Checks input, weight and bias gradients of [`ops::conv2d`].
pub fn check_conv2d(input: Shape4, spec: ConvSpec, seed: u64, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out_shape = spec.output_shape(input)?;
    let wshape = spec.weight_shape();
    let mut vars = vec![
        random_vec(&mut rng, input.len()),
        random_vec(&mut rng, wshape.len()),
        random_vec(&mut rng, spec.out_channels),
    ];
    let r = random_vec(&mut rng, out_shape.len());
    let x = tensor(input, &vars[0]);
    let w = tensor(wshape, &vars[1]);
    let g = ops::conv2d_backward(&x, &spec, &w, &tensor(out_shape, &r))?;
    let analytic = vec![g.input.into_data(), g.weights, g.bias];
    let name = format!("conv2d {input} k{:?} s{} p{} d{}", spec.kernel, spec.stride, spec.padding, spec.dilation);
    Ok(grad_check(&name, &mut vars, &analytic, step, tolerance, |v| {
        let y = ops::conv2d(&tensor(input, &v[0]), &spec, &tensor(wshape, &v[1]), &v[2]).expect("shapes checked");
        project(&y, &r)
    }))
}

pub fn check_transposed_conv2d(
    input: Shape4,
    spec: DeconvSpec,
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out_shape = spec.output_shape(input)?;
    let wshape = spec.weight_shape();
    let mut vars = vec![
        random_vec(&mut rng, input.len()),
        random_vec(&mut rng, wshape.len()),
        random_vec(&mut rng, spec.out_channels),
    ];
    let r = random_vec(&mut rng, out_shape.len());
    let x = tensor(input, &vars[0]);
    let w = tensor(wshape, &vars[1]);
    let g = ops::transposed_conv2d_backward(&x, &spec, &w, &tensor(out_shape, &r))?;
    let analytic = vec![g.input.into_data(), g.weights, g.bias];
    let name = format!("transposed_conv2d {input} k{:?} s{} p{}", spec.kernel, spec.stride, spec.padding);
    Ok(grad_check(&name, &mut vars, &analytic, step, tolerance, |v| {
        let y = ops::transposed_conv2d(&tensor(input, &v[0]), &spec, &tensor(wshape, &v[1]), &v[2])
            .expect("shapes checked");
        project(&y, &r)
    }))
}

pub fn check_maxpool2d(input: Shape4, spec: PoolSpec, seed: u64, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vars = vec![random_vec(&mut rng, input.len())];
    let pooled = ops::maxpool2d(&tensor(input, &vars[0]), &spec)?;
    let r = random_vec(&mut rng, pooled.output.len());
    let dx = ops::maxpool2d_backward(input, &pooled.argmax, &tensor(pooled.output.shape(), &r))?;
    let analytic = vec![dx.into_data()];
    Ok(grad_check(&format!("maxpool2d {input} {spec:?}"), &mut vars, &analytic, step, tolerance, |v| {
        let y = ops::maxpool2d(&tensor(input, &v[0]), &spec).expect("shape checked");
        project(&y.output, &r)
    }))
}

pub fn check_relu(input: Shape4, seed: u64, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // keep inputs away from the kink so the difference quotient is exact
    let mut vars = vec![(0..input.len())
        .map(|_| {
            let v: f64 = rng.random_range(0.01..1.0);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect::<Vec<_>>()];
    let r = random_vec(&mut rng, input.len());
    let x = tensor(input, &vars[0]);
    let dx = ops::relu_backward(&x, &tensor(input, &r))?;
    let analytic = vec![dx.into_data()];
    Ok(grad_check(&format!("relu {input}"), &mut vars, &analytic, step, tolerance, |v| {
        project(&ops::relu(&tensor(input, &v[0])), &r)
    }))
}

pub fn check_l2_loss(shape: Shape4, seed: u64, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vars = vec![random_vec(&mut rng, shape.len())];
    let target = tensor(shape, &random_vec(&mut rng, shape.len()));
    let analytic = vec![ops::l2_loss(&tensor(shape, &vars[0]), &target)?.grad.into_data()];
    Ok(grad_check(&format!("l2_loss {shape}"), &mut vars, &analytic, step, tolerance, |v| {
        ops::l2_loss(&tensor(shape, &v[0]), &target).expect("shape checked").value
    }))
}

pub fn check_softmax_ce_loss(shape: Shape4, seed: u64, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vars = vec![(0..shape.len()).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>()];
    let labels: Vec<u8> = (0..shape.n * shape.plane()).map(|_| rng.random_range(0..2)).collect();
    let analytic = vec![ops::softmax_ce_loss(&tensor(shape, &vars[0]), &labels)?.grad.into_data()];
    Ok(grad_check(&format!("softmax_ce_loss {shape}"), &mut vars, &analytic, step, tolerance, |v| {
        ops::softmax_ce_loss(&tensor(shape, &v[0]), &labels).expect("shape checked").value
    }))
}
