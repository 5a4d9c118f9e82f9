//! Synthetic ultrasound-like kidney phantoms and elastic augmentation.
//!
//! A phantom is a rotated ellipse with a cosine-shaped radial notch (a bean).
//! Its image is a smooth background, a bright cortical rim and a darker
//! central sinus, modulated by a linear gain ramp, blurred, then multiplied
//! by `1 + s * N(0, 1)` speckle and clamped to `[0, 1]`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distmap::mask_to_distance_map;
use crate::imgio::{write_fmap, write_mask, write_pgm, Manifest, ManifestRecord, Split};
use crate::{BinaryMask, DistanceMap, Error, Grid, Image, Result};

pub const MIN_AREA_FRACTION: f64 = 0.05;
pub const MAX_AREA_FRACTION: f64 = 0.60;
pub const MIN_SEMI_AXIS: f64 = 6.0;
/// Sampled masks stay this factor inside the area bounds so elastic
/// augmentation cannot push a label out of them.
const SAMPLE_AREA_SLACK: f64 = 1.1;
pub const MAX_NOTCH_DEPTH: f64 = 0.6;
/// Upper bound on any elastic displacement, in pixels.
pub const DISPLACEMENT_CAP: f64 = 8.0;
pub const MIN_FIELD_SIGMA: f64 = 4.0;

const BACKGROUND: f64 = 0.45;
const CORTEX: f64 = 0.72;
const SINUS: f64 = 0.22;
/// Sinus occupies the inner part of the normalised radius.
const SINUS_RADIUS: f64 = 0.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub height: usize,
    pub width: usize,
    /// Semi-axes `(a, b)` in pixels; `a` lies along the rotated x axis.
    pub semi_axes: (f64, f64),
    /// Radians.
    pub rotation: f64,
    /// `(row, col)`.
    pub center: (f64, f64),
    /// Relative notch depth in `[0, 0.6]`.
    pub notch_depth: f64,
    pub blur_sigma: f64,
    pub speckle: f64,
    /// Relative gain change across the frame, `(vertical, horizontal)`.
    pub gain_gradient: (f64, f64),
    pub seed: u64,
}

impl PhantomParams {
    fn check_ranges(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.height == 0 || self.width == 0 {
            return bad("empty frame".into());
        }
        if self.semi_axes.0 < MIN_SEMI_AXIS || self.semi_axes.1 < MIN_SEMI_AXIS {
            return bad(format!("semi-axes {:?} below {MIN_SEMI_AXIS} px", self.semi_axes));
        }
        if !(0.0..=MAX_NOTCH_DEPTH).contains(&self.notch_depth) {
            return bad(format!("notch depth {} outside [0, {MAX_NOTCH_DEPTH}]", self.notch_depth));
        }
        if !(0.0..=1.0).contains(&self.speckle) {
            return bad(format!("speckle strength {} outside [0, 1]", self.speckle));
        }
        if !(self.blur_sigma >= 0.0) {
            return bad(format!("blur sigma {}", self.blur_sigma));
        }
        Ok(())
    }

    /// Normalised radius relative to the boundary: `< 1` inside, `1` on it.
    fn relative_radius(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.center.0, x - self.center.1);
        let (s, c) = self.rotation.sin_cos();
        let u = (dx * c + dy * s) / self.semi_axes.0;
        let v = (-dx * s + dy * c) / self.semi_axes.1;
        let rho = u.hypot(v);
        let phi = v.atan2(u);
        let lobe = (phi - FRAC_PI_2).cos().max(0.0).powi(4);
        rho / (1.0 - self.notch_depth * lobe)
    }

    pub fn render_mask(&self) -> BinaryMask {
        Grid::from_fn(self.height, self.width, |y, x| {
            u8::from(self.relative_radius(y as f64, x as f64) <= 1.0)
        })
    }
}

/// Sampling ranges for random phantoms, inclusive bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomRanges {
    pub height: usize,
    pub width: usize,
    /// Major semi-axis as a fraction of the smaller frame side.
    pub major_fraction: (f64, f64),
    /// Minor-to-major axis ratio.
    pub aspect: (f64, f64),
    pub notch_depth: (f64, f64),
    pub blur_sigma: (f64, f64),
    pub speckle: (f64, f64),
    pub gain: f64,
}

impl Default for PhantomRanges {
    fn default() -> Self {
        Self::square(64)
    }
}

impl PhantomRanges {
    pub fn square(size: usize) -> Self {
        Self {
            height: size,
            width: size,
            major_fraction: (0.17, 0.36),
            aspect: (0.5, 0.8),
            notch_depth: (0.0, 0.35),
            blur_sigma: (0.5, 1.2),
            speckle: (0.15, 0.45),
            gain: 0.15,
        }
    }

    /// Draws parameters until the rendered mask lies inside the area bounds.
    pub fn sample(&self, seed: u64) -> Result<PhantomParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = self.height.min(self.width) as f64;
        let span = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        for _ in 0..256 {
            let a = (span(&mut rng, self.major_fraction) * side).max(MIN_SEMI_AXIS);
            let b = (a * span(&mut rng, self.aspect)).max(MIN_SEMI_AXIS);
            let margin = a + 1.0;
            let (h, w) = (self.height as f64, self.width as f64);
            if 2.0 * margin > h || 2.0 * margin > w {
                continue;
            }
            let params = PhantomParams {
                height: self.height,
                width: self.width,
                semi_axes: (a, b),
                rotation: rng.random_range(0.0..PI),
                center: (rng.random_range(margin..=h - margin), rng.random_range(margin..=w - margin)),
                notch_depth: span(&mut rng, self.notch_depth),
                blur_sigma: span(&mut rng, self.blur_sigma),
                speckle: span(&mut rng, self.speckle),
                gain_gradient: (rng.random_range(-self.gain..=self.gain), rng.random_range(-self.gain..=self.gain)),
                seed,
            };
            let frac = params.render_mask().count_foreground() as f64 / (self.height * self.width) as f64;
            let inside = (MIN_AREA_FRACTION * SAMPLE_AREA_SLACK..=MAX_AREA_FRACTION / SAMPLE_AREA_SLACK).contains(&frac);
            if params.check_ranges().is_ok() && inside {
                return Ok(params);
            }
        }
        Err(Error::InvalidParams(format!("no valid phantom in range {self:?}")))
    }
}

fn area_ok(mask: &BinaryMask) -> bool {
    let frac = mask.count_foreground() as f64 / mask.len() as f64;
    (MIN_AREA_FRACTION..=MAX_AREA_FRACTION).contains(&frac)
}

/// True when the mask is usable as a training label.
pub fn mask_is_valid(mask: &BinaryMask) -> bool {
    area_ok(mask)
}

/// Separable Gaussian filter with edge clamping.
pub fn gaussian_blur(grid: &Grid<f64>, sigma: f64) -> Grid<f64> {
    if sigma <= 0.0 {
        return grid.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let (h, w) = grid.shape();
    let pass = |src: &Grid<f64>, vertical: bool| {
        Grid::from_fn(h, w, |y, x| {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let o = k as i64 - radius;
                let (yy, xx) = if vertical {
                    ((y as i64 + o).clamp(0, h as i64 - 1) as usize, x)
                } else {
                    (y, (x as i64 + o).clamp(0, w as i64 - 1) as usize)
                };
                acc += kv * src.get(yy, xx);
            }
            acc / norm
        })
    };
    pass(&pass(grid, true), false)
}

/// Renders the image and mask of a phantom; deterministic in `params.seed`.
pub fn gen_sample(params: &PhantomParams) -> Result<(Image, BinaryMask)> {
    params.check_ranges()?;
    let mask = params.render_mask();
    if !area_ok(&mask) {
        return Err(Error::InvalidParams(format!(
            "mask covers {:.1}% of the frame",
            100.0 * mask.count_foreground() as f64 / mask.len() as f64
        )));
    }
    let (h, w) = (params.height, params.width);
    let (gy, gx) = params.gain_gradient;
    let clean = Grid::from_fn(h, w, |y, x| {
        let r = params.relative_radius(y as f64, x as f64);
        let base = if r > 1.0 {
            BACKGROUND
        } else if r > SINUS_RADIUS {
            CORTEX
        } else {
            SINUS
        };
        let fy = if h > 1 { y as f64 / (h - 1) as f64 - 0.5 } else { 0.0 };
        let fx = if w > 1 { x as f64 / (w - 1) as f64 - 0.5 } else { 0.0 };
        base * (1.0 + gy * fy + gx * fx)
    });
    let blurred = gaussian_blur(&clean, params.blur_sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_5eed_5eed_5eed);
    let image = blurred.map(|&v| {
        let n: f64 = StandardNormal.sample(&mut rng);
        (v * (1.0 + params.speckle * n)).clamp(0.0, 1.0) as f32
    });
    Ok((image, mask))
}

/// Smooth displacement field; sampling positions are `(y + dy, x + dx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    pub dy: Grid<f64>,
    pub dx: Grid<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeformationConfig {
    /// Largest displacement magnitude of a sampled field, at most
    /// [`DISPLACEMENT_CAP`].
    pub max_displacement: f64,
    /// Gaussian smoothing of the white-noise field, at least [`MIN_FIELD_SIGMA`].
    pub sigma: f64,
}

impl Default for DeformationConfig {
    fn default() -> Self {
        Self {
            max_displacement: 3.0,
            sigma: 6.0,
        }
    }
}

impl DeformationField {
    pub fn zero(h: usize, w: usize) -> Self {
        Self {
            dy: Grid::filled(h, w, 0.0),
            dx: Grid::filled(h, w, 0.0),
        }
    }

    pub fn constant(h: usize, w: usize, dy: f64, dx: f64) -> Self {
        Self {
            dy: Grid::filled(h, w, dy),
            dx: Grid::filled(h, w, dx),
        }
    }

    /// Gaussian-filtered white noise rescaled so the largest displacement is
    /// `max_displacement * u`, `u ~ U[0.5, 1]`.
    pub fn random(h: usize, w: usize, config: &DeformationConfig, rng: &mut impl Rng) -> Result<Self> {
        if !(config.max_displacement >= 0.0 && config.max_displacement <= DISPLACEMENT_CAP) {
            return Err(Error::InvalidParams(format!(
                "max displacement {} outside [0, {DISPLACEMENT_CAP}]",
                config.max_displacement
            )));
        }
        if !(config.sigma >= MIN_FIELD_SIGMA) {
            return Err(Error::InvalidParams(format!("field sigma {} below {MIN_FIELD_SIGMA}", config.sigma)));
        }
        let mut noise = || {
            let g = Grid::from_fn(h, w, |_, _| StandardNormal.sample(&mut *rng));
            gaussian_blur(&g, config.sigma)
        };
        let (mut dy, mut dx) = (noise(), noise());
        let peak = dy
            .as_slice()
            .iter()
            .zip(dx.as_slice())
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max);
        let target = config.max_displacement * rng.random_range(0.5..=1.0);
        let scale = if peak > 0.0 { target / peak } else { 0.0 };
        dy.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        dx.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        Ok(Self { dy, dx })
    }

    pub fn max_magnitude(&self) -> f64 {
        self.dy
            .as_slice()
            .iter()
            .zip(self.dx.as_slice())
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }
}

/// Warps image (bilinear) and mask (nearest) through the same field; samples
/// outside the frame take the nearest edge value.
pub fn elastic_augment(img: &Image, mask: &BinaryMask, field: &DeformationField) -> Result<(Image, BinaryMask)> {
    img.ensure_same_shape(mask, "augment mask")?;
    img.ensure_same_shape(&field.dy, "augment field")?;
    img.ensure_same_shape(&field.dx, "augment field")?;
    let (h, w) = img.shape();
    let (hmax, wmax) = ((h - 1) as f64, (w - 1) as f64);
    let warped = Grid::from_fn(h, w, |y, x| {
        let sy = (y as f64 + field.dy.get(y, x)).clamp(0.0, hmax);
        let sx = (x as f64 + field.dx.get(y, x)).clamp(0.0, wmax);
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
        let at = |a: usize, b: usize| *img.get(a, b) as f64;
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0) as f32
    });
    let warped_mask = Grid::from_fn(h, w, |y, x| {
        let sy = (y as f64 + field.dy.get(y, x)).round().clamp(0.0, hmax) as usize;
        let sx = (x as f64 + field.dx.get(y, x)).round().clamp(0.0, wmax) as usize;
        *mask.get(sy, sx)
    });
    Ok((warped, warped_mask))
}

/// A fully materialised sample.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: BinaryMask,
    pub dmap: DistanceMap,
}

/// Sample `index` of a dataset: seed `seed + index`.
pub fn dataset_sample(ranges: &PhantomRanges, seed: u64, index: usize) -> Result<Sample> {
    let params = ranges.sample(seed.wrapping_add(index as u64))?;
    let (image, mask) = gen_sample(&params)?;
    let dmap = mask_to_distance_map(&mask)?;
    Ok(Sample {
        id: format!("s{index:04}"),
        image,
        mask,
        dmap,
    })
}

/// In-memory dataset; the first `n_train` samples are the training split.
pub fn generate(n: usize, ranges: &PhantomRanges, seed: u64) -> Result<Vec<Sample>> {
    (0..n).into_par_iter().map(|i| dataset_sample(ranges, seed, i)).collect()
}

/// Writes images, masks and distance maps plus `manifest.jsonl` under `out`.
pub fn make_dataset(out: &Path, n_train: usize, n_test: usize, seed: u64, ranges: &PhantomRanges) -> Result<Manifest> {
    if n_train + n_test == 0 {
        return Err(Error::InvalidParams("dataset needs at least one sample".into()));
    }
    let samples = generate(n_train + n_test, ranges, seed)?;
    for sub in ["images", "masks", "dmaps"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let rec = ManifestRecord {
            id: s.id.clone(),
            image_path: format!("images/{}.pgm", s.id),
            mask_path: format!("masks/{}.pgm", s.id),
            dmap_path: format!("dmaps/{}.fmap", s.id),
            split: if i < n_train { Split::Train } else { Split::Test },
        };
        write_pgm(&out.join(&rec.image_path), &s.image)?;
        write_mask(&out.join(&rec.mask_path), &s.mask)?;
        write_fmap(&out.join(&rec.dmap_path), &s.dmap)?;
        records.push(rec);
    }
    let manifest = Manifest {
        dir: out.to_path_buf(),
        records,
    };
    manifest.save()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dice;

    fn flat_params() -> PhantomParams {
        PhantomParams {
            height: 64,
            width: 64,
            semi_axes: (20.0, 12.0),
            rotation: 0.3,
            center: (32.0, 31.0),
            notch_depth: 0.3,
            blur_sigma: 0.0,
            speckle: 0.0,
            gain_gradient: (0.0, 0.0),
            seed: 9,
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let p = PhantomRanges::default().sample(42).unwrap();
        let (a, m) = gen_sample(&p).unwrap();
        let (b, n) = gen_sample(&p).unwrap();
        assert_eq!(m, n);
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn noiseless_regions_are_flat() {
        let p = flat_params();
        let (img, _) = gen_sample(&p).unwrap();
        let mut regions: [Vec<f64>; 3] = Default::default();
        for y in 0..64 {
            for x in 0..64 {
                let r = p.relative_radius(y as f64, x as f64);
                let k = if r > 1.0 { 0 } else if r > SINUS_RADIUS { 1 } else { 2 };
                regions[k].push(*img.get(y, x) as f64);
            }
        }
        for vals in &regions {
            assert!(!vals.is_empty());
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(var < 1e-4, "{var}");
        }
    }

    #[test]
    fn area_bounds_hold_for_500_seeds() {
        let ranges = PhantomRanges::default();
        for seed in 0..500 {
            let p = ranges.sample(seed).unwrap();
            let (img, mask) = gen_sample(&p).unwrap();
            let frac = mask.count_foreground() as f64 / mask.len() as f64;
            assert!((MIN_AREA_FRACTION..=MAX_AREA_FRACTION).contains(&frac), "seed {seed}: {frac}");
            assert!(mask_to_distance_map(&mask).is_ok());
            assert!(img.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = flat_params();
        p.semi_axes = (5.0, 12.0);
        assert!(matches!(gen_sample(&p), Err(Error::InvalidParams(_))));
        let mut p = flat_params();
        p.semi_axes = (40.0, 40.0);
        assert!(matches!(gen_sample(&p), Err(Error::InvalidParams(_))));
        let mut p = flat_params();
        p.notch_depth = 0.7;
        assert!(gen_sample(&p).is_err());
    }

    #[test]
    fn zero_field_is_identity() {
        let (img, mask) = gen_sample(&PhantomRanges::default().sample(1).unwrap()).unwrap();
        let (i2, m2) = elastic_augment(&img, &mask, &DeformationField::zero(64, 64)).unwrap();
        assert_eq!(i2, img);
        assert_eq!(m2, mask);
    }

    #[test]
    fn integer_field_is_a_shift() {
        let (img, mask) = gen_sample(&PhantomRanges::default().sample(2).unwrap()).unwrap();
        let (i2, m2) = elastic_augment(&img, &mask, &DeformationField::constant(64, 64, 2.0, 0.0)).unwrap();
        for y in 0..62 {
            for x in 0..64 {
                assert_eq!(m2.get(y, x), mask.get(y + 2, x));
                assert_eq!(i2.get(y, x), img.get(y + 2, x));
            }
        }
        assert!(elastic_augment(&img, &Grid::filled(4, 4, 0u8), &DeformationField::zero(64, 64)).is_err());
    }

    #[test]
    fn random_fields_keep_masks_plausible() {
        let ranges = PhantomRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for i in 0..100 {
            let (img, mask) = gen_sample(&ranges.sample(1000 + i).unwrap()).unwrap();
            let field = DeformationField::random(64, 64, &DeformationConfig::default(), &mut rng).unwrap();
            assert!(field.max_magnitude() <= DISPLACEMENT_CAP + 1e-9);
            let (wi, wm) = elastic_augment(&img, &mask, &field).unwrap();
            let d = dice(&wm, &mask).unwrap();
            assert!((0.6..=1.0).contains(&d), "sample {i}: dice {d}");
            assert!(mask_is_valid(&wm), "sample {i}: area {} -> {}", mask.count_foreground(), wm.count_foreground());
            assert!(wi.as_slice().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn field_config_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let too_big = DeformationConfig { max_displacement: 9.0, sigma: 6.0 };
        assert!(DeformationField::random(8, 8, &too_big, &mut rng).is_err());
        let too_rough = DeformationConfig { max_displacement: 2.0, sigma: 2.0 };
        assert!(DeformationField::random(8, 8, &too_rough, &mut rng).is_err());
    }

    #[test]
    fn dataset_split_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let ranges = PhantomRanges::square(32);
        let a = make_dataset(&dir.path().join("a"), 1, 1, 5, &ranges).unwrap();
        let b = make_dataset(&dir.path().join("b"), 1, 1, 5, &ranges).unwrap();
        assert_eq!(a.records.len(), 2);
        assert_eq!(a.records[0].split, Split::Train);
        assert_eq!(a.records[1].split, Split::Test);
        assert_ne!(a.records[0].id, a.records[1].id);
        for r in &a.records {
            for rel in [&r.image_path, &r.mask_path, &r.dmap_path] {
                let x = std::fs::read(a.resolve(rel)).unwrap();
                let y = std::fs::read(b.resolve(rel)).unwrap();
                assert_eq!(x, y);
            }
        }
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn parallel_generation_equals_serial() {
        let ranges = PhantomRanges::default();
        let par = generate(6, &ranges, 3).unwrap();
        for (i, s) in par.iter().enumerate() {
            let one = dataset_sample(&ranges, 3, i).unwrap();
            assert_eq!(one.image, s.image);
            assert_eq!(one.mask, s.mask);
        }
    }
}
