//! The three-stage network: encoder, distance-map regression head, and a
//! pixel classifier that reads the predicted map.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{conv, ClassifierSpec, EncoderSpec, HeadSpec, PipelineConfig};
use crate::nn::checkpoint::{self, Record};
use crate::nn::gradcheck::{grad_check, GradCheckReport};
use crate::nn::{
    l2_loss, softmax_ce_loss, CenterCrop, Conv2d, Deconv2d, DeconvSpec, Init, Layer, MaxPool2d, Param, PoolSpec, Real,
    Relu, Sequential, Shape4, Tensor4,
};
use crate::{BinaryMask, DistanceMap, Error, Grid, Image, Result};

/// Replicates a grey image over three channels: `1 x 3 x h x w`.
pub fn pseudo_color(img: &Image) -> Tensor4<f32> {
    pseudo_color_batch(&[img]).expect("single image is a consistent batch")
}

/// `k x 3 x h x w` tensor from `k` equally sized images.
pub fn pseudo_color_batch<T: Real>(imgs: &[&Image]) -> Result<Tensor4<T>> {
    let first = imgs.first().ok_or_else(|| Error::shape("empty image batch"))?;
    let (h, w) = first.shape();
    let mut data = Vec::with_capacity(imgs.len() * 3 * h * w);
    for img in imgs {
        first.ensure_same_shape(img, "image batch")?;
        for _ in 0..3 {
            data.extend(img.as_slice().iter().map(|&v| T::lit(v as f64)));
        }
    }
    Tensor4::from_vec(Shape4::new(imgs.len(), 3, h, w), data)
}

/// `k x 1 x h x w` tensor stacking single-channel grids.
pub fn stack_maps<T: Real>(maps: &[&Grid<f32>]) -> Result<Tensor4<T>> {
    let first = maps.first().ok_or_else(|| Error::shape("empty map batch"))?;
    let (h, w) = first.shape();
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        first.ensure_same_shape(m, "map batch")?;
        data.extend(m.as_slice().iter().map(|&v| T::lit(v as f64)));
    }
    Tensor4::from_vec(Shape4::new(maps.len(), 1, h, w), data)
}

/// Per-pixel argmax over two logit channels of item `n`; ties go to
/// background.
pub fn argmax_mask<T: Real>(logits: &Tensor4<T>, n: usize) -> Result<BinaryMask> {
    let s = logits.shape();
    if s.c != 2 || n >= s.n {
        return Err(Error::shape(format!("argmax of item {n} in logits {s}")));
    }
    let item = logits.item(n);
    let (bg, fg) = item.split_at(s.plane());
    Grid::from_vec(s.h, s.w, bg.iter().zip(fg).map(|(b, f)| u8::from(f > b)).collect())
}

/// Single-channel plane `n` of a `k x 1 x h x w` tensor.
pub fn plane<T: Real>(t: &Tensor4<T>, n: usize) -> Result<Grid<f32>> {
    let s = t.shape();
    if s.c != 1 || n >= s.n {
        return Err(Error::shape(format!("plane {n} of {s}")));
    }
    Grid::from_vec(s.h, s.w, t.item(n).iter().map(|v| v.as_f64() as f32).collect())
}

fn build_encoder<T: Real>(prefix: &str, spec: &EncoderSpec, in_channels: usize, rng: &mut ChaCha8Rng) -> Sequential<T> {
    let mut seq = Sequential::new();
    let mut c = in_channels;
    for (i, b) in spec.blocks.iter().enumerate() {
        seq.push(Conv2d::with_init(&format!("{prefix}.block{i}"), conv(c, b.width, 3, b.dilation), Init::He, rng));
        seq.push(Relu::new());
        if b.pool {
            seq.push(MaxPool2d::new(PoolSpec::halving()));
        }
        c = b.width;
    }
    seq
}

fn build_head<T: Real>(
    prefix: &str,
    spec: &HeadSpec,
    in_channels: usize,
    out_channels: usize,
    (h, w): (usize, usize),
    rng: &mut ChaCha8Rng,
) -> Sequential<T> {
    let mut seq = Sequential::new();
    let mut c = in_channels;
    for (i, &width) in spec.projection.iter().enumerate() {
        seq.push(Conv2d::with_init(&format!("{prefix}.proj{i}"), conv(c, width, 1, 1), Init::He, rng));
        seq.push(Relu::new());
        c = width;
    }
    for (i, &width) in spec.deconv.iter().enumerate() {
        seq.push(Deconv2d::with_init(&format!("{prefix}.up{i}"), DeconvSpec::doubling(c, width), Init::He, rng));
        seq.push(Relu::new());
        c = width;
    }
    seq.push(Conv2d::new(&format!("{prefix}.out"), conv(c, out_channels, 1, 1), rng));
    seq.push(CenterCrop::new(h, w));
    seq
}

fn build_classifier<T: Real>(spec: &ClassifierSpec, hw: (usize, usize), rng: &mut ChaCha8Rng) -> Sequential<T> {
    match spec {
        ClassifierSpec::Shallow { widths } => {
            let mut seq = Sequential::new();
            seq.push(Conv2d::with_init("cls.conv0", conv(1, widths[0], 3, 1), Init::He, rng));
            seq.push(Relu::new());
            seq.push(Conv2d::with_init("cls.conv1", conv(widths[0], widths[1], 3, 1), Init::He, rng));
            seq.push(Relu::new());
            seq.push(Conv2d::new("cls.out", conv(widths[1], 2, 1, 1), rng));
            seq
        }
        ClassifierSpec::Mirrored { encoder, head } => {
            let mut seq = build_encoder("cls.enc", encoder, 1, rng);
            seq.push(build_head("cls.head", head, encoder.out_channels(1), 2, hw, rng));
            seq
        }
    }
}

/// Outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward<T> {
    /// `n x 1 x h x w`, unclamped.
    pub dmap: Tensor4<T>,
    /// `n x 2 x h x w`.
    pub logits: Tensor4<T>,
}

/// Loss terms of [`combined_loss`]; a term skipped because its weight is zero
/// is `None` and contributes no gradient.
#[derive(Clone, Debug)]
pub struct CombinedLoss<T> {
    pub value: T,
    pub l2: Option<T>,
    pub ce: Option<T>,
    pub grad_dmap: Option<Tensor4<T>>,
    pub grad_logits: Option<Tensor4<T>>,
}

/// `lambda * l2(pred, gt) + (1 - lambda) * ce(logits, mask)`.
///
/// At `lambda == 0` the ground-truth map is never read (it may be `None`).
/// At `lambda == 1` the cross-entropy is reported but yields no gradient.
pub fn combined_loss<T: Real>(
    pred_dmap: &Tensor4<T>,
    gt_dmap: Option<&Tensor4<T>>,
    logits: &Tensor4<T>,
    gt_mask: &[u8],
    lambda: f64,
) -> Result<CombinedLoss<T>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParams(format!("lambda {lambda} outside [0, 1]")));
    }
    let lam = T::lit(lambda);
    let (l2, grad_dmap) = if lambda > 0.0 {
        let gt = gt_dmap.ok_or_else(|| Error::shape("regression weight is positive but no target map given"))?;
        let mut loss = l2_loss(pred_dmap, gt)?;
        loss.grad.data_mut().iter_mut().for_each(|g| *g *= lam);
        (Some(loss.value), Some(loss.grad))
    } else {
        (None, None)
    };
    let ce_loss = softmax_ce_loss(logits, gt_mask)?;
    let (ce, grad_logits) = if lambda < 1.0 {
        let mut g = ce_loss.grad;
        let w = T::one() - lam;
        g.data_mut().iter_mut().for_each(|v| *v *= w);
        (Some(ce_loss.value), Some(g))
    } else {
        (Some(ce_loss.value), None)
    };
    let value = match (l2, lambda < 1.0) {
        (Some(l), true) => lam * l + (T::one() - lam) * ce_loss.value,
        (Some(l), false) => l,
        (None, _) => ce_loss.value,
    };
    Ok(CombinedLoss {
        value,
        l2,
        ce,
        grad_dmap,
        grad_logits,
    })
}

pub struct Pipeline<T: Real> {
    config: PipelineConfig,
    encoder: Sequential<T>,
    regressor: Sequential<T>,
    classifier: Sequential<T>,
}

impl<T: Real> Pipeline<T> {
    /// Fresh network drawn from `seed`: He-uniform weights before ReLUs,
    /// Glorot-uniform on the linear output layers, zero biases.
    pub fn new(config: PipelineConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hw = (config.height, config.width);
        let encoder = build_encoder("enc", &config.encoder, 3, &mut rng);
        let regressor = build_head("reg", &config.head, config.encoder.out_channels(3), 1, hw, &mut rng);
        let classifier = build_classifier(&config.classifier, hw, &mut rng);
        Ok(Self {
            config,
            encoder,
            regressor,
            classifier,
        })
    }

    /// Loads weights from a checkpoint trained with `config`.
    pub fn from_checkpoint(config: PipelineConfig, path: &Path) -> Result<Self> {
        let mut p = Self::new(config, 0)?;
        p.load_records(&checkpoint::read(path)?)?;
        Ok(p)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Encoder output for a `n x 3 x h x w` batch.
    pub fn features(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        self.encoder.forward(x)
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let s = x.shape();
        x.ensure_shape(self.config.input_shape(s.n), "pipeline input")?;
        if s.n == 0 {
            return Err(Error::shape("empty batch"));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor4<T>) -> Result<Forward<T>> {
        let f = self.features(x)?;
        let dmap = self.regressor.forward(&f)?;
        let logits = self.classifier.forward(&dmap)?;
        Ok(Forward { dmap, logits })
    }

    /// Back-propagates from either output; returns the input gradient.
    /// Parameter gradients accumulate. With no classifier gradient the
    /// classifier is not visited at all.
    pub fn backward(&mut self, grad_dmap: Option<&Tensor4<T>>, grad_logits: Option<&Tensor4<T>>) -> Result<Tensor4<T>> {
        let mut g = match grad_logits {
            Some(gl) => self.classifier.backward(gl)?,
            None => Tensor4::zeros(self.config_dmap_shape(grad_dmap)?),
        };
        if let Some(gd) = grad_dmap {
            gd.ensure_shape(g.shape(), "distance map gradient")?;
            g.data_mut().iter_mut().zip(gd.data()).for_each(|(a, &b)| *a += b);
        }
        let gf = self.regressor.backward(&g)?;
        self.encoder.backward(&gf)
    }

    fn config_dmap_shape(&self, grad_dmap: Option<&Tensor4<T>>) -> Result<Shape4> {
        grad_dmap
            .map(|g| g.shape())
            .ok_or_else(|| Error::MissingGradient("pipeline output".into()))
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.encoder.params();
        v.extend(self.regressor.params());
        v.extend(self.classifier.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.regressor.params_mut());
        v.extend(self.classifier.params_mut());
        v
    }

    pub fn classifier_params(&self) -> Vec<&Param<T>> {
        self.classifier.params()
    }

    pub fn regression_params(&self) -> Vec<&Param<T>> {
        let mut v = self.encoder.params();
        v.extend(self.regressor.params());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.tensor.zero_grad());
    }

    pub fn records(&self) -> Vec<Record> {
        self.params().into_iter().map(Record::from_param).collect()
    }

    pub fn load_records(&mut self, records: &[Record]) -> Result<()> {
        checkpoint::load_into(records, &mut self.params_mut())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write(path, &self.records())
    }

    /// Raw distance maps and argmax masks for a batch of images.
    pub fn infer(&mut self, imgs: &[&Image]) -> Result<Vec<(DistanceMap, BinaryMask)>> {
        let out = self.forward(&pseudo_color_batch(imgs)?)?;
        (0..imgs.len())
            .map(|n| Ok((plane(&out.dmap, n)?, argmax_mask(&out.logits, n)?)))
            .collect()
    }

    /// Classifier output: the final segmentation.
    pub fn segment(&mut self, img: &Image) -> Result<BinaryMask> {
        Ok(self.infer(&[img])?.remove(0).1)
    }

    /// Unclamped regression output.
    pub fn predict_dmap_raw(&mut self, img: &Image) -> Result<DistanceMap> {
        Ok(self.infer(&[img])?.remove(0).0)
    }

    /// Regression output clamped to `[0, 1]`.
    pub fn predict_dmap(&mut self, img: &Image) -> Result<DistanceMap> {
        Ok(clamp_unit(&self.predict_dmap_raw(img)?))
    }
}

pub fn clamp_unit(map: &DistanceMap) -> DistanceMap {
    map.map(|v| v.clamp(0.0, 1.0))
}

/// Central-difference check of every input and parameter gradient of the
/// [`PipelineConfig::tiny`] network under the combined loss, in f64.
pub fn check_pipeline_gradient(seed: u64, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let cfg = PipelineConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.input_shape(1);
    let x = Tensor4::<f64>::from_vec(s, (0..s.len()).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let map_shape = Shape4::new(1, 1, cfg.height, cfg.width);
    let gt = Tensor4::<f64>::from_vec(map_shape, (0..map_shape.len()).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let mask: Vec<u8> = (0..map_shape.len()).map(|_| rng.random_range(0..2u8)).collect();
    let lambda = 0.6;
    let mut net = Pipeline::<f64>::new(cfg, seed)?;
    // zero biases put dead units exactly on the ReLU kink
    for p in net.params_mut().into_iter().filter(|p| p.name.ends_with(".bias")) {
        p.tensor.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
    let out = net.forward(&x)?;
    let loss = combined_loss(&out.dmap, Some(&gt), &out.logits, &mask, lambda)?;
    let gx = net.backward(loss.grad_dmap.as_ref(), loss.grad_logits.as_ref())?;

    let mut vars: Vec<Vec<f64>> = vec![x.data().to_vec()];
    let mut analytic: Vec<Vec<f64>> = vec![gx.data().to_vec()];
    let mut shapes = Vec::new();
    for p in net.params() {
        vars.push(p.tensor.data().to_vec());
        analytic.push(p.tensor.grad().expect("params carry gradients").to_vec());
        shapes.push(p.tensor.shape());
    }
    let mut failure = None;
    let report = grad_check("pipeline", &mut vars, &analytic, step, tolerance, |v| {
        let mut eval = || -> Result<f64> {
            for ((p, data), &shape) in net.params_mut().into_iter().zip(&v[1..]).zip(&shapes) {
                p.tensor = Tensor4::from_vec(shape, data.clone())?.with_grad();
            }
            let out = net.forward(&Tensor4::from_vec(s, v[0].clone())?)?;
            Ok(combined_loss(&out.dmap, Some(&gt), &out.logits, &mask, lambda)?.value)
        };
        eval().unwrap_or_else(|e| {
            failure.get_or_insert(e);
            f64::NAN
        })
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::config::{EncoderSpec, HeadSpec};
    use rand::Rng;

    fn random_batch<T: Real>(cfg: &PipelineConfig, n: usize, seed: u64) -> Tensor4<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = cfg.input_shape(n);
        Tensor4::from_vec(s, (0..s.len()).map(|_| T::lit(rng.random_range(0.0..1.0))).collect()).unwrap()
    }

    #[test]
    fn pseudo_color_replicates() {
        let img = Grid::from_fn(2, 2, |y, x| (y * 2 + x) as f32 / 4.0);
        let t = pseudo_color(&img);
        assert_eq!(t.shape(), Shape4::new(1, 3, 2, 2));
        for c in 1..3 {
            for i in 0..4 {
                assert_eq!(t.data()[c * 4 + i], t.data()[i]);
            }
        }
        let b: Tensor4<f64> = pseudo_color_batch(&[&img, &img, &img]).unwrap();
        assert_eq!(b.shape(), Shape4::new(3, 3, 2, 2));
        assert!(pseudo_color_batch::<f32>(&[&img, &Grid::filled(3, 3, 0.0)]).is_err());
    }

    #[test]
    fn desk_shapes() {
        let cfg = PipelineConfig::desk(64, 64);
        let mut p = Pipeline::<f32>::new(cfg.clone(), 1).unwrap();
        let x = random_batch(&cfg, 2, 2);
        assert_eq!(p.features(&x).unwrap().shape(), Shape4::new(2, 64, 8, 8));
        let out = p.forward(&x).unwrap();
        assert_eq!(out.dmap.shape(), Shape4::new(2, 1, 64, 64));
        assert_eq!(out.logits.shape(), Shape4::new(2, 2, 64, 64));
        assert!(out.dmap.is_finite() && out.logits.is_finite());
        assert!(p.forward(&random_batch(&PipelineConfig::tiny(), 1, 0)).is_err());
    }

    #[test]
    fn odd_sizes_are_cropped_to_input() {
        for (h, w) in [(16, 16), (17, 23), (33, 40)] {
            let mut cfg = PipelineConfig::tiny();
            cfg.height = h;
            cfg.width = w;
            cfg.classifier = ClassifierSpec::Mirrored {
                encoder: EncoderSpec::standard([2; 5]),
                head: HeadSpec::standard(&[], [2, 2, 2]),
            };
            let mut p = Pipeline::<f32>::new(cfg.clone(), 0).unwrap();
            let out = p.forward(&random_batch(&cfg, 1, 3)).unwrap();
            assert_eq!(out.dmap.shape(), Shape4::new(1, 1, h, w));
            assert_eq!(out.logits.shape(), Shape4::new(1, 2, h, w));
        }
    }

    #[test]
    fn reduced_reference_encoder_gives_41_by_41_by_1024() {
        let mut cfg = PipelineConfig::reference();
        cfg.encoder = EncoderSpec::standard([4, 4, 4, 8, 1024]);
        cfg.head = HeadSpec::standard(&[4], [4, 4, 4]);
        cfg.classifier = ClassifierSpec::Shallow { widths: [2, 2] };
        let mut p = Pipeline::<f32>::new(cfg.clone(), 0).unwrap();
        let x = random_batch(&cfg, 1, 0);
        assert_eq!(p.features(&x).unwrap().shape(), Shape4::new(1, 1024, 41, 41));
        let out = p.forward(&x).unwrap();
        assert_eq!(out.dmap.shape(), Shape4::new(1, 1, 321, 321));
    }

    #[test]
    fn argmax_ties_are_background() {
        let s = Shape4::new(1, 2, 2, 2);
        let logits = Tensor4::<f32>::from_vec(s, vec![0.0, 1.0, 2.0, 3.0, 0.5, 1.0, 1.0, 3.5]).unwrap();
        assert_eq!(argmax_mask(&logits, 0).unwrap().into_vec(), vec![1, 0, 0, 1]);
        let fg = Tensor4::<f32>::from_vec(s, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(argmax_mask(&fg, 0).unwrap().as_slice().iter().all(|&v| v == 1));
        assert!(argmax_mask(&fg, 1).is_err());
    }

    #[test]
    fn combined_loss_weights() {
        let s = Shape4::new(1, 1, 2, 2);
        let pred = Tensor4::<f64>::from_vec(s, vec![0.1, 0.5, 0.9, 0.3]).unwrap();
        let gt = Tensor4::<f64>::from_vec(s, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let logits = Tensor4::<f64>::from_vec(Shape4::new(1, 2, 2, 2), vec![0.2, -0.1, 0.3, 0.0, -0.5, 0.4, 0.1, 0.0]).unwrap();
        let mask = [0u8, 1, 1, 0];
        let l2 = l2_loss(&pred, &gt).unwrap().value;
        let ce = softmax_ce_loss(&logits, &mask).unwrap().value;
        let one = combined_loss(&pred, Some(&gt), &logits, &mask, 1.0).unwrap();
        assert_eq!(one.value, l2);
        assert!(one.grad_logits.is_none());
        let zero = combined_loss(&pred, None, &logits, &mask, 0.0).unwrap();
        assert_eq!(zero.value, ce);
        assert!(zero.l2.is_none() && zero.grad_dmap.is_none());
        let half = combined_loss(&pred, Some(&gt), &logits, &mask, 0.5).unwrap();
        assert!((half.value - 0.5 * (l2 + ce)).abs() < 1e-15);
        assert!(combined_loss(&pred, None, &logits, &mask, 0.5).is_err());
        assert!(combined_loss(&pred, Some(&gt), &logits, &mask, 1.5).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = PipelineConfig::tiny();
        let p = Pipeline::<f32>::new(cfg.clone(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bseg");
        p.save(&path).unwrap();
        let q = Pipeline::<f32>::from_checkpoint(cfg, &path).unwrap();
        assert_eq!(p.records(), q.records());
        let names: Vec<_> = p.params().iter().map(|p| p.name.clone()).collect();
        assert_eq!(names[0], "enc.block0.weight");
        assert!(names.contains(&"reg.up2.weight".to_string()));
        assert_eq!(names.last().unwrap(), "cls.out.bias");
        assert!(Pipeline::<f32>::from_checkpoint(PipelineConfig::desk(64, 64), &path).is_err());
    }

    #[test]
    fn end_to_end_gradient() {
        let report = check_pipeline_gradient(11, 1e-6, 1e-5).unwrap();
        assert!(report.checked > 1000);
        assert!(report.passed(), "{report:?}");
    }
}
