//! The segmentation pipeline and its training loop.

mod config;
mod pipeline;
mod train;

pub use config::{
    sidecar_path, BlockSpec, ClassifierSpec, CropPolicy, EncoderSpec, HeadSpec, LossSchedule, OptimConfig, OptimizerKind,
    PipelineConfig, Precision, TrainConfig, MIN_INPUT, STAGES,
};
pub use pipeline::{
    argmax_mask, check_pipeline_gradient, clamp_unit, combined_loss, plane, pseudo_color, pseudo_color_batch, stack_maps, CombinedLoss,
    Forward, Pipeline,
};
pub use train::*;
