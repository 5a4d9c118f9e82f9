use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use bdrseg_bench::phantom;
use bdrseg_core::models::{combined_loss, pseudo_color_batch, stack_maps, Pipeline, PipelineConfig};
use bdrseg_core::Image;

fn bench_pipeline(c: &mut Criterion) {
    let samples: Vec<_> = (0..4).map(|i| phantom(64, i)).collect();
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let x = pseudo_color_batch::<f32>(&images).unwrap();
    let gt = stack_maps::<f32>(&samples.iter().map(|s| &s.dmap).collect::<Vec<_>>()).unwrap();
    let labels: Vec<u8> = samples.iter().flat_map(|s| s.mask.as_slice().to_vec()).collect();
    let mut net = Pipeline::<f32>::new(PipelineConfig::desk(64, 64), 0).unwrap();

    c.bench_function("desk_inference_single", |b| b.iter(|| net.segment(black_box(&samples[0].image)).unwrap()));
    c.bench_function("desk_train_step_batch4", |b| {
        b.iter(|| {
            let out = net.forward(black_box(&x)).unwrap();
            let loss = combined_loss(&out.dmap, Some(&gt), &out.logits, &labels, 0.5).unwrap();
            net.backward(loss.grad_dmap.as_ref(), loss.grad_logits.as_ref()).unwrap();
            net.zero_grad();
        })
    });
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
