//! Minibatch training on the combined loss with a decreasing regression
//! weight.

use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{sidecar_path, OptimizerKind, Precision, TrainConfig};
use super::pipeline::{combined_loss, pseudo_color_batch, stack_maps, Pipeline};
use crate::distmap::mask_to_distance_map;
use crate::imgio::{read_fmap, read_mask, read_pgm, Manifest, Split};
use crate::metrics::dice;
use crate::nn::checkpoint::Record;
use crate::nn::{Adam, Optimizer, Real, Sgd};
use crate::phantom::{elastic_augment, mask_is_valid, DeformationConfig, DeformationField, Sample};
use crate::{BinaryMask, DistanceMap, Error, Image, Result};

/// One labelled image; `dmap` is absent when the regression target is not
/// needed.
#[derive(Clone, Debug)]
pub struct LabelledImage {
    pub id: String,
    pub image: Image,
    pub mask: BinaryMask,
    pub dmap: Option<DistanceMap>,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<LabelledImage>,
    pub test: Vec<LabelledImage>,
}

impl Dataset {
    /// Reads every record of a manifest; distance maps only when asked.
    pub fn load(manifest: &Manifest, with_dmaps: bool) -> Result<Self> {
        let mut out = Self::default();
        for r in &manifest.records {
            let item = LabelledImage {
                id: r.id.clone(),
                image: read_pgm(&manifest.resolve(&r.image_path))?,
                mask: read_mask(&manifest.resolve(&r.mask_path))?,
                dmap: if with_dmaps {
                    Some(read_fmap(&manifest.resolve(&r.dmap_path))?)
                } else {
                    None
                },
            };
            match r.split {
                Split::Train => out.train.push(item),
                Split::Test => out.test.push(item),
            }
        }
        Ok(out)
    }

    /// First `n_train` samples train, the rest test.
    pub fn from_samples(samples: Vec<Sample>, n_train: usize) -> Self {
        let mut out = Self::default();
        for (i, s) in samples.into_iter().enumerate() {
            let item = LabelledImage {
                id: s.id,
                image: s.image,
                mask: s.mask,
                dmap: Some(s.dmap),
            };
            if i < n_train {
                out.train.push(item);
            } else {
                out.test.push(item);
            }
        }
        out
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lambda: f64,
    /// Mean regression loss; `None` when its weight was zero.
    pub l2: Option<f64>,
    pub ce: f64,
    /// Mean classifier Dice on the test split, if there is one.
    pub val_dice: Option<f64>,
}

pub fn log_to_jsonl(log: &[EpochLog]) -> String {
    log.iter()
        .map(|e| serde_json::to_string(e).expect("log rows serialise") + "\n")
        .collect()
}

pub fn parse_log(text: &str) -> Result<Vec<EpochLog>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::MalformedHeader(format!("log row: {e}"))))
        .collect()
}

pub struct Trained<T: Real> {
    pub pipeline: Pipeline<T>,
    pub log: Vec<EpochLog>,
    /// Number of minibatches whose regression loss was computed against
    /// ground-truth maps.
    pub l2_evaluations: usize,
}

const SHUFFLE_SALT: u64 = 0x7261_696e_5f73_6864;

fn check_data(data: &Dataset, cfg: &TrainConfig) -> Result<()> {
    if data.train.is_empty() {
        return Err(Error::InvalidParams("no training samples".into()));
    }
    let want = (cfg.pipeline.height, cfg.pipeline.width);
    for s in data.train.iter().chain(&data.test) {
        if s.image.shape() != want || s.mask.shape() != want {
            return Err(Error::shape(format!(
                "sample {} is {:?}, model expects {want:?}",
                s.id,
                s.image.shape()
            )));
        }
    }
    Ok(())
}

/// Masks (and raw maps) predicted for `images`, evaluated in batches.
pub fn predict_batched<T: Real>(
    net: &mut Pipeline<T>,
    images: &[&Image],
    batch: usize,
) -> Result<Vec<(DistanceMap, BinaryMask)>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        out.extend(net.infer(chunk)?);
    }
    Ok(out)
}

fn validation_dice<T: Real>(net: &mut Pipeline<T>, test: &[LabelledImage], batch: usize) -> Result<Option<f64>> {
    if test.is_empty() {
        return Ok(None);
    }
    let images: Vec<&Image> = test.iter().map(|s| &s.image).collect();
    let preds = predict_batched(net, &images, batch)?;
    let mut total = 0.0;
    for ((_, m), s) in preds.iter().zip(test) {
        total += dice(m, &s.mask)?;
    }
    Ok(Some(total / test.len() as f64))
}

/// Trains a fresh pipeline. `on_epoch` sees every log row as it is produced.
pub fn train<T: Real>(data: &Dataset, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<Trained<T>> {
    cfg.validate()?;
    check_data(data, cfg)?;
    let opt = &cfg.train;
    let schedule = cfg.schedule;
    if schedule.uses_regression() && data.train.iter().any(|s| s.dmap.is_none()) {
        return Err(Error::InvalidParams("regression weight is positive but distance maps are missing".into()));
    }
    let mut net = Pipeline::<T>::new(cfg.pipeline.clone(), opt.seed)?;
    let mut optimizer = match opt.optimizer {
        OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(T::lit(opt.lr), T::lit(opt.momentum))),
        OptimizerKind::Adam => Optimizer::Adam(Adam::new(T::lit(opt.lr))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed ^ SHUFFLE_SALT);
    let deform = DeformationConfig::default();
    let (h, w) = (cfg.pipeline.height, cfg.pipeline.width);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = Vec::with_capacity(schedule.total_epochs);
    let mut l2_evaluations = 0;

    for epoch in 0..schedule.total_epochs {
        let lambda = schedule.lambda(epoch);
        order.shuffle(&mut rng);
        let (mut l2_sum, mut ce_sum, mut seen) = (0.0, 0.0, 0usize);
        for batch in order.chunks(opt.batch_size) {
            let mut images = Vec::with_capacity(batch.len());
            let mut masks = Vec::with_capacity(batch.len());
            let mut dmaps = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &data.train[i];
                let mut item = (s.image.clone(), s.mask.clone(), s.dmap.clone());
                if opt.augment_prob > 0.0 && rng.random::<f64>() < opt.augment_prob {
                    let field = DeformationField::random(h, w, &deform, &mut rng)?;
                    let (img, mask) = elastic_augment(&s.image, &s.mask, &field)?;
                    if mask_is_valid(&mask) {
                        let dmap = if lambda > 0.0 { Some(mask_to_distance_map(&mask)?) } else { None };
                        item = (img, mask, dmap);
                    }
                }
                images.push(item.0);
                masks.push(item.1);
                dmaps.push(item.2);
            }
            let x = pseudo_color_batch::<T>(&images.iter().collect::<Vec<_>>())?;
            let labels: Vec<u8> = masks.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
            let gt = if lambda > 0.0 {
                let maps: Vec<&DistanceMap> = dmaps.iter().map(|d| d.as_ref().expect("checked above")).collect();
                l2_evaluations += 1;
                Some(stack_maps::<T>(&maps)?)
            } else {
                None
            };
            let out = net.forward(&x)?;
            let loss = combined_loss(&out.dmap, gt.as_ref(), &out.logits, &labels, lambda)?;
            if !loss.value.as_f64().is_finite() {
                return Err(Error::DivergedTraining { epoch });
            }
            net.backward(loss.grad_dmap.as_ref(), loss.grad_logits.as_ref())?;
            optimizer.step(&mut net.params_mut())?;
            let k = batch.len() as f64;
            l2_sum += loss.l2.map_or(0.0, |v| v.as_f64()) * k;
            ce_sum += loss.ce.map_or(0.0, |v| v.as_f64()) * k;
            seen += batch.len();
        }
        let row = EpochLog {
            epoch,
            lambda,
            l2: (lambda > 0.0).then(|| l2_sum / seen as f64),
            ce: ce_sum / seen as f64,
            val_dice: validation_dice(&mut net, &data.test, opt.batch_size.max(8))?,
        };
        info!(
            "epoch {epoch} lambda {lambda:.3} l2 {:?} ce {:.5} val_dice {:?}",
            row.l2, row.ce, row.val_dice
        );
        on_epoch(&row);
        log.push(row);
    }
    Ok(Trained {
        pipeline: net,
        log,
        l2_evaluations,
    })
}

/// Files written by [`train_to_disk`].
#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub config: PathBuf,
    pub log: PathBuf,
    pub rows: Vec<EpochLog>,
}

pub fn default_log_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".log.jsonl");
    s.into()
}

/// Trains on a manifest and writes the checkpoint, its config sidecar and the
/// JSON-lines log.
pub fn train_to_disk(
    manifest: &Manifest,
    cfg: &TrainConfig,
    checkpoint: &Path,
    log_path: Option<&Path>,
) -> Result<TrainArtifacts> {
    let data = Dataset::load(manifest, cfg.schedule.uses_regression())?;
    let (records, rows): (Vec<Record>, Vec<EpochLog>) = match cfg.train.precision {
        Precision::F32 => {
            let t = train::<f32>(&data, cfg, |_| {})?;
            (t.pipeline.records(), t.log)
        }
        Precision::F64 => {
            let t = train::<f64>(&data, cfg, |_| {})?;
            (t.pipeline.records(), t.log)
        }
    };
    crate::nn::checkpoint::write(checkpoint, &records)?;
    let config = sidecar_path(checkpoint);
    cfg.save(&config)?;
    let log = log_path.map_or_else(|| default_log_path(checkpoint), Path::to_path_buf);
    std::fs::write(&log, log_to_jsonl(&rows)).map_err(|e| Error::io(&log, e))?;
    Ok(TrainArtifacts {
        checkpoint: checkpoint.to_path_buf(),
        config,
        log,
        rows,
    })
}

/// Loads a checkpoint together with its sidecar configuration (or `config`
/// when given).
pub fn load_trained(checkpoint: &Path, config: Option<&Path>) -> Result<(TrainConfig, Pipeline<f32>)> {
    let cfg_path = config.map_or_else(|| sidecar_path(checkpoint), Path::to_path_buf);
    let cfg = TrainConfig::load(&cfg_path)?;
    let net = Pipeline::from_checkpoint(cfg.pipeline.clone(), checkpoint)?;
    Ok((cfg, net))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LossSchedule, PipelineConfig};
    use crate::phantom::{generate, PhantomRanges};

    fn small(lambda: Option<f64>, epochs: usize, lr: f64) -> (Dataset, TrainConfig) {
        let samples = generate(6, &PhantomRanges::square(16), 3).unwrap();
        let mut cfg = TrainConfig::desk();
        cfg.pipeline = PipelineConfig::tiny();
        cfg.schedule = match lambda {
            Some(l) => LossSchedule::pinned(l, epochs).unwrap(),
            None => LossSchedule::new(0.9, 0.1, epochs).unwrap(),
        };
        cfg.train.lr = lr;
        cfg.train.batch_size = 2;
        (Dataset::from_samples(samples, 4), cfg)
    }

    #[test]
    fn one_epoch_log_and_checkpoint() {
        let (data, cfg) = small(None, 1, 0.01);
        let t = train::<f32>(&data, &cfg, |_| {}).unwrap();
        assert_eq!(t.log.len(), 1);
        assert!(t.log[0].val_dice.is_some());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bseg");
        t.pipeline.save(&p).unwrap();
        let q = Pipeline::<f32>::from_checkpoint(cfg.pipeline.clone(), &p).unwrap();
        let bits = |v: &[Record]| v.iter().flat_map(|r| r.data.iter().map(|x| x.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&t.pipeline.records()), bits(&q.records()));
        assert_eq!(parse_log(&log_to_jsonl(&t.log)).unwrap(), t.log);
    }

    #[test]
    fn lambda_decreases_across_epochs() {
        let (data, cfg) = small(None, 3, 0.01);
        let t = train::<f32>(&data, &cfg, |_| {}).unwrap();
        let l: Vec<f64> = t.log.iter().map(|r| r.lambda).collect();
        assert_eq!(l.first(), Some(&0.9));
        assert!((l[2] - 0.1).abs() < 1e-12);
        assert!(l.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let (data, cfg) = small(None, 2, 0.0);
        let fresh = Pipeline::<f32>::new(cfg.pipeline.clone(), cfg.train.seed).unwrap();
        let t = train::<f32>(&data, &cfg, |_| {}).unwrap();
        assert_eq!(fresh.records(), t.pipeline.records());
    }

    #[test]
    fn pinned_one_leaves_classifier_untouched() {
        let (data, cfg) = small(Some(1.0), 1, 0.05);
        let fresh = Pipeline::<f32>::new(cfg.pipeline.clone(), cfg.train.seed).unwrap();
        let t = train::<f32>(&data, &cfg, |_| {}).unwrap();
        let bits = |ps: Vec<&crate::nn::Param<f32>>| {
            ps.iter().flat_map(|p| p.tensor.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>()
        };
        assert_eq!(bits(fresh.classifier_params()), bits(t.pipeline.classifier_params()));
        assert!(t.pipeline.classifier_params().iter().all(|p| p.tensor.grad().unwrap().iter().all(|&g| g == 0.0)));
        assert_ne!(bits(fresh.regression_params()), bits(t.pipeline.regression_params()));
    }

    #[test]
    fn pinned_zero_never_reads_distance_maps() {
        let (mut data, cfg) = small(Some(0.0), 2, 0.01);
        for s in data.train.iter_mut().chain(data.test.iter_mut()) {
            s.dmap = None;
        }
        let t = train::<f32>(&data, &cfg, |_| {}).unwrap();
        assert_eq!(t.l2_evaluations, 0);
        assert!(t.log.iter().all(|r| r.l2.is_none()));
        let (data, cfg) = small(None, 1, 0.01);
        assert_eq!(train::<f32>(&data, &cfg, |_| {}).unwrap().l2_evaluations, 2);
    }

    #[test]
    fn training_is_reproducible() {
        let (data, mut cfg) = small(None, 2, 0.01);
        cfg.train.augment_prob = 0.5;
        let a = train::<f32>(&data, &cfg, |_| {}).unwrap();
        let b = train::<f32>(&data, &cfg, |_| {}).unwrap();
        assert_eq!(a.pipeline.records(), b.pipeline.records());
        assert_eq!(log_to_jsonl(&a.log), log_to_jsonl(&b.log));
    }

    #[test]
    fn divergence_is_reported() {
        let (data, cfg) = small(None, 3, 1e12);
        assert!(matches!(train::<f32>(&data, &cfg, |_| {}), Err(Error::DivergedTraining { .. })));
    }
}
