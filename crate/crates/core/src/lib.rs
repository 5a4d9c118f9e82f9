//! Boundary distance regression segmentation.
//!
//! Binary masks are turned into exponential boundary distance maps
//! (`exp(-D)` where `D` is the exact Euclidean distance to the object
//! boundary). A small convolutional encoder with a deconvolutional head
//! regresses those maps from images, and a pixel classifier stacked on the
//! predicted map produces the final mask. The two heads are trained jointly
//! with a loss weight that shifts from regression to classification.
//!
//! The crate also contains the minimum-spanning-tree contour recovery used as
//! a post-processing baseline, a synthetic ultrasound-like phantom generator,
//! evaluation metrics, and readers/writers for every on-disk format.
//!
//! Module map:
//!
//! * [`nn`]: tensors, layers, losses, SGD and gradient checking.
//! * [`distmap`]: boundary extraction, exact EDT, distance maps.
//! * [`contour`]: threshold, thinning, MST max path, closing and filling.
//! * [`phantom`]: synthetic samples, elastic augmentation, datasets.
//! * [`models`]: the three-stage pipeline and its training loop.
//! * [`metrics`]: Dice, accuracy, mean boundary distance, Wilcoxon test.
//! * [`imgio`]: PGM, FMAP and manifest files.

pub mod contour;
pub mod distmap;
mod error;
pub mod grid;
pub mod imgio;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod phantom;

pub use error::{Error, Result};
pub use grid::{BinaryMask, DistanceMap, Grid, Image, Pixel};
