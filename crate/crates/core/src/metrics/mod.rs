//! Segmentation quality measures and the paired significance test.

mod report;
mod wilcoxon;

pub use report::{evaluate, evaluate_masks, Aggregate, EvalReport, PairedComparison, SampleMetrics};
pub use wilcoxon::{wilcoxon_signed_rank, SignedRanks, WilcoxonMethod, WilcoxonResult};

use crate::distmap::{boundary_pixels, euclidean_dt};
use crate::{BinaryMask, Result};

/// `2|A ∩ B| / (|A| + |B|)`; 1 when both masks are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.ensure_same_shape(b, "dice")?;
    let (mut inter, mut sa, mut sb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let (x, y) = (x != 0, y != 0);
        sa += usize::from(x);
        sb += usize::from(y);
        inter += usize::from(x && y);
    }
    if sa + sb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (sa + sb) as f64)
}

/// Fraction of pixels with matching labels.
pub fn pixel_accuracy(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.ensure_same_shape(b, "pixel accuracy")?;
    if a.is_empty() {
        return Ok(1.0);
    }
    let same = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .filter(|&(&x, &y)| (x != 0) == (y != 0))
        .count();
    Ok(same as f64 / a.len() as f64)
}

fn directed_boundary_distance(from: &BinaryMask, to: &BinaryMask) -> Result<f64> {
    let src = boundary_pixels(from)?;
    let dist = euclidean_dt(&boundary_pixels(to)?, to.shape())?;
    Ok(src.iter().map(|&(y, x)| *dist.get(y, x)).sum::<f64>() / src.len() as f64)
}

/// Symmetric mean boundary distance in pixels: the average of the two
/// directed means of nearest-boundary distances.
pub fn mean_boundary_distance(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.ensure_same_shape(b, "mean boundary distance")?;
    let ab = directed_boundary_distance(a, b)?;
    let ba = directed_boundary_distance(b, a)?;
    Ok(0.5 * (ab + ba))
}
