//! Architecture, schedule and training configuration.
//!
//! Everything here round-trips through TOML with unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::{ConvSpec, DeconvSpec, PoolSpec, Shape4};
use crate::{Error, Result};

/// Number of stride-2 stages in the encoder and of doubling deconvolutions in
/// each head.
pub const STAGES: usize = 3;
pub const MIN_INPUT: usize = 16;

/// One encoder block: 3x3 convolution (optionally dilated), ReLU, then an
/// optional halving max-pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub width: usize,
    #[serde(default = "one")]
    pub dilation: usize,
    #[serde(default)]
    pub pool: bool,
}

fn one() -> usize {
    1
}

impl BlockSpec {
    pub const fn pooled(width: usize) -> Self {
        Self {
            width,
            dilation: 1,
            pool: true,
        }
    }

    pub const fn atrous(width: usize, dilation: usize) -> Self {
        Self {
            width,
            dilation,
            pool: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub blocks: Vec<BlockSpec>,
}

impl EncoderSpec {
    /// Three pooled blocks followed by atrous blocks with dilation 2 and 4.
    pub fn standard(widths: [usize; 5]) -> Self {
        Self {
            blocks: vec![
                BlockSpec::pooled(widths[0]),
                BlockSpec::pooled(widths[1]),
                BlockSpec::pooled(widths[2]),
                BlockSpec::atrous(widths[3], 2),
                BlockSpec::atrous(widths[4], 4),
            ],
        }
    }

    pub fn out_channels(&self, in_channels: usize) -> usize {
        self.blocks.last().map_or(in_channels, |b| b.width)
    }

    /// Spatial size after the encoder: each pool maps `s` to `ceil(s / 2)`.
    pub fn feature_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let pool = PoolSpec::halving();
        self.blocks
            .iter()
            .filter(|b| b.pool)
            .try_fold((h, w), |(h, w), _| pool.output_hw(h, w))
    }

    fn validate(&self, what: &str) -> Result<()> {
        let pools = self.blocks.iter().filter(|b| b.pool).count();
        if pools != STAGES {
            return Err(Error::Config(format!("{what}: {pools} pooled blocks, need {STAGES}")));
        }
        if self.blocks.iter().any(|b| b.width == 0 || b.dilation == 0) {
            return Err(Error::Config(format!("{what}: zero width or dilation")));
        }
        Ok(())
    }
}

/// 1x1 projection convolutions (ReLU), three doubling deconvolutions (ReLU),
/// then a linear 1x1 output convolution and a centre crop to the input size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    #[serde(default)]
    pub projection: Vec<usize>,
    pub deconv: Vec<usize>,
}

impl HeadSpec {
    pub fn standard(projection: &[usize], deconv: [usize; 3]) -> Self {
        Self {
            projection: projection.to_vec(),
            deconv: deconv.to_vec(),
        }
    }

    /// Spatial size before cropping.
    pub fn upsampled_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let spec = DeconvSpec::doubling(1, 1);
        self.deconv.iter().try_fold((h, w), |(h, w), _| spec.output_hw(h, w))
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.deconv.len() != STAGES {
            return Err(Error::Config(format!(
                "{what}: {} deconvolutions, need {STAGES}",
                self.deconv.len()
            )));
        }
        if self.projection.iter().chain(&self.deconv).any(|&c| c == 0) {
            return Err(Error::Config(format!("{what}: zero width")));
        }
        Ok(())
    }
}

/// Pixel classifier on the predicted distance map.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClassifierSpec {
    /// Two 3x3 convolutions (ReLU) and a 1x1 convolution to two channels, at
    /// full resolution.
    Shallow { widths: [usize; 2] },
    /// The regression architecture again, on the one-channel map.
    Mirrored { encoder: EncoderSpec, head: HeadSpec },
}

impl ClassifierSpec {
    fn validate(&self) -> Result<()> {
        match self {
            Self::Shallow { widths } if widths.contains(&0) => Err(Error::Config("classifier: zero width".into())),
            Self::Shallow { .. } => Ok(()),
            Self::Mirrored { encoder, head } => {
                encoder.validate("classifier encoder")?;
                head.validate("classifier head")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropPolicy {
    /// Keep the central window; the odd surplus pixel is dropped at the
    /// bottom/right.
    #[default]
    Center,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub height: usize,
    pub width: usize,
    pub encoder: EncoderSpec,
    pub head: HeadSpec,
    pub classifier: ClassifierSpec,
    #[serde(default)]
    pub crop: CropPolicy,
}

impl PipelineConfig {
    /// Small desktop model: encoder widths 16/32/64/64/64.
    pub fn desk(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            encoder: EncoderSpec::standard([16, 32, 64, 64, 64]),
            head: HeadSpec::standard(&[64], [32, 16, 8]),
            classifier: ClassifierSpec::Shallow { widths: [8, 8] },
            crop: CropPolicy::Center,
        }
    }

    /// Full-size layout: 321x321 input and a 1024-channel feature map.
    pub fn reference() -> Self {
        let encoder = EncoderSpec::standard([64, 128, 256, 512, 1024]);
        let head = HeadSpec::standard(&[256], [128, 64, 32]);
        Self {
            height: 321,
            width: 321,
            classifier: ClassifierSpec::Mirrored {
                encoder: EncoderSpec::standard([16, 32, 64, 64, 64]),
                head: HeadSpec::standard(&[64], [32, 16, 8]),
            },
            encoder,
            head,
            crop: CropPolicy::Center,
        }
    }

    /// 16x16 input with four channels everywhere; used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            height: 16,
            width: 16,
            encoder: EncoderSpec::standard([4; 5]),
            head: HeadSpec::standard(&[4], [4, 4, 4]),
            classifier: ClassifierSpec::Shallow { widths: [4, 4] },
            crop: CropPolicy::Center,
        }
    }

    pub fn input_shape(&self, n: usize) -> Shape4 {
        Shape4::new(n, 3, self.height, self.width)
    }

    pub fn feature_shape(&self, n: usize) -> Result<Shape4> {
        let (h, w) = self.encoder.feature_hw(self.height, self.width)?;
        Ok(Shape4::new(n, self.encoder.out_channels(3), h, w))
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_INPUT || self.width < MIN_INPUT {
            return Err(Error::Config(format!(
                "input {}x{} below {MIN_INPUT}x{MIN_INPUT}",
                self.height, self.width
            )));
        }
        self.encoder.validate("encoder")?;
        self.head.validate("regression head")?;
        self.classifier.validate()
    }
}

/// Regression weight `lambda(e)`, linear from `lambda_start` at the first
/// epoch to `lambda_end` at the last.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSchedule {
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub total_epochs: usize,
}

impl LossSchedule {
    pub fn new(lambda_start: f64, lambda_end: f64, total_epochs: usize) -> Result<Self> {
        let s = Self {
            lambda_start,
            lambda_end,
            total_epochs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn pinned(lambda: f64, total_epochs: usize) -> Result<Self> {
        Self::new(lambda, lambda, total_epochs)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.lambda_start) || !unit.contains(&self.lambda_end) {
            return Err(Error::Config(format!(
                "lambda range {}..{} outside [0, 1]",
                self.lambda_start, self.lambda_end
            )));
        }
        if self.lambda_start < self.lambda_end {
            return Err(Error::Config("lambda must not increase".into()));
        }
        if self.total_epochs == 0 {
            return Err(Error::Config("zero epochs".into()));
        }
        Ok(())
    }

    pub fn lambda(&self, epoch: usize) -> f64 {
        if self.total_epochs <= 1 {
            return self.lambda_start.clamp(0.0, 1.0);
        }
        let t = (epoch.min(self.total_epochs - 1)) as f64 / (self.total_epochs - 1) as f64;
        (self.lambda_start + (self.lambda_end - self.lambda_start) * t).clamp(0.0, 1.0)
    }

    /// True when some epoch puts positive weight on the regression loss.
    pub fn uses_regression(&self) -> bool {
        self.lambda_start > 0.0
    }
}

impl Default for LossSchedule {
    fn default() -> Self {
        Self {
            lambda_start: 0.9,
            lambda_end: 0.1,
            total_epochs: 60,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Classical momentum SGD.
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// SGD only.
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Probability of elastically warping a training sample each epoch.
    pub augment_prob: f64,
    pub precision: Precision,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            momentum: 0.9,
            batch_size: 4,
            seed: 0,
            augment_prob: 0.0,
            precision: Precision::F32,
        }
    }
}

/// Complete training configuration, as stored in a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub schedule: LossSchedule,
    #[serde(default)]
    pub train: OptimConfig,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            pipeline: PipelineConfig::desk(64, 64),
            schedule: LossSchedule::default(),
            train: OptimConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.schedule.validate()?;
        let t = &self.train;
        if !(t.lr >= 0.0 && t.lr.is_finite()) || !(0.0..1.0).contains(&t.momentum) {
            return Err(Error::Config(format!("lr {} / momentum {}", t.lr, t.momentum)));
        }
        if t.batch_size == 0 {
            return Err(Error::Config("zero batch size".into()));
        }
        if !(0.0..=1.0).contains(&t.augment_prob) {
            return Err(Error::Config(format!("augment_prob {}", t.augment_prob)));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

/// Sidecar path holding the configuration a checkpoint was trained with.
pub fn sidecar_path(checkpoint: &Path) -> std::path::PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".toml");
    s.into()
}

pub(crate) fn conv(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> ConvSpec {
    ConvSpec::same(in_channels, out_channels, kernel, dilation)
}
