//! Desk-scale training run on synthetic phantoms with a summary of both
//! segmentation paths. Usage: `desk_run [config.toml] [epochs]`.

use std::time::Instant;

use bdrseg_core::contour::{brn_segment, BrnParams};
use bdrseg_core::metrics::{dice, mean_boundary_distance};
use bdrseg_core::models::{clamp_unit, predict_batched, train, Dataset, TrainConfig};
use bdrseg_core::phantom::{generate, PhantomRanges};
use bdrseg_core::Image;

fn main() -> bdrseg_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = match args.get(1) {
        Some(p) if p != "-" => TrainConfig::load(p.as_ref())?,
        _ => TrainConfig::desk(),
    };
    if let Some(e) = args.get(2) {
        cfg.schedule.total_epochs = e.parse().expect("epochs");
    }
    let start = Instant::now();
    let samples = generate(250, &PhantomRanges::square(cfg.pipeline.height), 2024)?;
    let data = Dataset::from_samples(samples, 200);
    let mut t = train::<f32>(&data, &cfg, |r| {
        println!(
            "epoch {:3} lambda {:.3} l2 {:?} ce {:.4} val_dice {:.4} t={:.0}s",
            r.epoch,
            r.lambda,
            r.l2,
            r.ce,
            r.val_dice.unwrap_or(f64::NAN),
            start.elapsed().as_secs_f64()
        )
    })?;
    let images: Vec<&Image> = data.test.iter().map(|s| &s.image).collect();
    let preds = predict_batched(&mut t.pipeline, &images, 16)?;
    let (mut cd, mut bd, mut md, mut mae, mut brn_fail) = (0.0, 0.0, 0.0, 0.0, 0);
    for ((raw, mask), s) in preds.iter().zip(&data.test) {
        cd += dice(mask, &s.mask)?;
        md += mean_boundary_distance(mask, &s.mask).unwrap_or(64.0);
        let gt = s.dmap.as_ref().unwrap();
        mae += raw.as_slice().iter().zip(gt.as_slice()).map(|(a, b)| (a.clamp(0.0, 1.0) - b).abs() as f64).sum::<f64>()
            / gt.len() as f64;
        match brn_segment(&clamp_unit(raw), &BrnParams::default()) {
            Ok(m) => bd += dice(&m, &s.mask)?,
            Err(e) => {
                if brn_fail < 3 {
                    let c = clamp_unit(raw);
                    let above = c.as_slice().iter().filter(|&&v| v >= 0.6).count();
                    let max = c.as_slice().iter().cloned().fold(0.0f32, f32::max);
                    eprintln!("brn {}: {e} (max {max:.3}, {above} px >= 0.6)", s.id);
                }
                brn_fail += 1
            }
        }
    }
    let n = data.test.len() as f64;
    println!(
        "classifier dice {:.4} mbd {:.3} | brn dice {:.4} (failures {brn_fail}) | dmap mae {:.4} | {:.0}s",
        cd / n,
        md / n,
        bd / n,
        mae / n,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
