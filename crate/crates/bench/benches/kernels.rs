use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use bdrseg_bench::phantom;
use bdrseg_core::contour::{brn_segment, BrnParams};
use bdrseg_core::distmap::{boundary_pixels, euclidean_dt, mask_to_distance_map};
use bdrseg_core::nn::{conv2d, conv2d_backward, transposed_conv2d, ConvSpec, DeconvSpec, Shape4, Tensor4};

fn filled(shape: Shape4) -> Tensor4<f32> {
    let data = (0..shape.len()).map(|i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5).collect();
    Tensor4::from_vec(shape, data).unwrap()
}

fn bench_conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    for dilation in [1, 2, 4] {
        let spec = ConvSpec::same(64, 64, 3, dilation);
        let x = filled(Shape4::new(4, 64, 16, 16));
        let w = filled(spec.weight_shape());
        let b = vec![0.0f32; 64];
        g.bench_with_input(BenchmarkId::new("forward_64x16x16", dilation), &dilation, |bench, _| {
            bench.iter(|| conv2d(black_box(&x), &spec, &w, &b).unwrap())
        });
        let y = conv2d(&x, &spec, &w, &b).unwrap();
        g.bench_with_input(BenchmarkId::new("backward_64x16x16", dilation), &dilation, |bench, _| {
            bench.iter(|| conv2d_backward(black_box(&x), &spec, &w, &y).unwrap())
        });
    }
    g.finish();

    let spec = DeconvSpec::doubling(32, 16);
    let x = filled(Shape4::new(4, 32, 32, 32));
    let w = filled(spec.weight_shape());
    let b = vec![0.0f32; 16];
    c.bench_function("deconv_32to64", |bench| {
        bench.iter(|| transposed_conv2d(black_box(&x), &spec, &w, &b).unwrap())
    });
}

fn bench_edt(c: &mut Criterion) {
    let mut g = c.benchmark_group("edt");
    for size in [64, 321] {
        let s = phantom(size, 0);
        let sites = boundary_pixels(&s.mask).unwrap();
        g.bench_with_input(BenchmarkId::new("euclidean_dt", size), &size, |bench, _| {
            bench.iter(|| euclidean_dt(black_box(&sites), (size, size)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("mask_to_distance_map", size), &size, |bench, _| {
            bench.iter(|| mask_to_distance_map(black_box(&s.mask)).unwrap())
        });
    }
    g.finish();
}

fn bench_brn(c: &mut Criterion) {
    let mut g = c.benchmark_group("brn_segment");
    for size in [64, 321] {
        let s = phantom(size, 1);
        let params = BrnParams::default();
        g.bench_with_input(BenchmarkId::from_parameter(size), &size, |bench, _| {
            bench.iter(|| brn_segment(black_box(&s.dmap), &params).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_conv, bench_edt, bench_brn);
criterion_main!(benches);
