//! Shared fixtures for the benchmarks.

use bdrseg_core::phantom::{dataset_sample, PhantomRanges, Sample};

/// Deterministic phantom of side `size`.
pub fn phantom(size: usize, index: usize) -> Sample {
    dataset_sample(&PhantomRanges::square(size), 99, index).expect("default ranges always yield a phantom")
}
