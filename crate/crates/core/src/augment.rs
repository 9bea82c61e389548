//! Training-time image augmentation: random resized crop, time reversal and
//! brightness/contrast jitter, all drawn from a per-sample seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wisense_csi::{Matrix, RadioImage};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Crop area as a fraction of the image.
    pub crop_scale: (f64, f64),
    /// Crop aspect relative to the image's own aspect.
    pub crop_ratio: (f64, f64),
    pub flip_prob: f64,
    /// Maximum relative brightness change.
    pub brightness: f64,
    /// Maximum relative contrast change.
    pub contrast: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            crop_scale: (0.6, 1.0),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
            flip_prob: 0.5,
            brightness: 0.2,
            contrast: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn off() -> Self {
        AugmentConfig {
            enabled: false,
            ..AugmentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (s0, s1) = self.crop_scale;
        let (r0, r1) = self.crop_ratio;
        if !(0.0 < s0 && s0 <= s1 && s1 <= 1.0) || !(0.0 < r0 && r0 <= r1) {
            return Err(CoreError::Config(format!(
                "crop scale {:?} / ratio {:?} out of range",
                self.crop_scale, self.crop_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) || !(0.0..1.0).contains(&self.brightness) || !(0.0..1.0).contains(&self.contrast)
        {
            return Err(CoreError::Config("flip probability must be in [0, 1], jitter in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Crop rectangle: top, left, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crop {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

fn sample_crop(rng: &mut ChaCha8Rng, rows: usize, cols: usize, cfg: &AugmentConfig) -> Crop {
    let full = Crop {
        top: 0,
        left: 0,
        height: rows,
        width: cols,
    };
    let area = (rows * cols) as f64;
    let aspect = cols as f64 / rows as f64;
    let (lr0, lr1) = (cfg.crop_ratio.0.ln(), cfg.crop_ratio.1.ln());
    for _ in 0..10 {
        let target = area * uniform(rng, cfg.crop_scale.0, cfg.crop_scale.1);
        let ratio = aspect * uniform(rng, lr0, lr1).exp();
        let w = (target * ratio).sqrt().round() as usize;
        let h = (target / ratio).sqrt().round() as usize;
        if (1..=cols).contains(&w) && (1..=rows).contains(&h) {
            return Crop {
                top: rng.gen_range(0..=rows - h),
                left: rng.gen_range(0..=cols - w),
                height: h,
                width: w,
            };
        }
    }
    full
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Bilinear resample of a crop back to `rows × cols` (half-pixel centers).
pub fn crop_resize(m: &Matrix, crop: Crop, rows: usize, cols: usize) -> Result<Matrix> {
    if crop.height == 0 || crop.width == 0 || crop.top + crop.height > m.rows() || crop.left + crop.width > m.cols() {
        return Err(CoreError::Param(format!("crop {crop:?} outside {}×{}", m.rows(), m.cols())));
    }
    let sy = crop.height as f64 / rows as f64;
    let sx = crop.width as f64 / cols as f64;
    let axis = |d: usize, scale: f64, len: usize| {
        let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i = s.floor() as usize;
        (i, (i + 1).min(len - 1), s - i as f64)
    };
    let xs: Vec<_> = (0..cols).map(|c| axis(c, sx, crop.width)).collect();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (y0, y1, fy) = axis(r, sy, crop.height);
        let (a, b) = (m.row(crop.top + y0), m.row(crop.top + y1));
        for &(x0, x1, fx) in &xs {
            let at = |row: &[f32], x: usize| row[crop.left + x] as f64;
            let top = at(a, x0) * (1.0 - fx) + at(a, x1) * fx;
            let bot = at(b, x0) * (1.0 - fx) + at(b, x1) * fx;
            out.push((top * (1.0 - fy) + bot * fy) as f32);
        }
    }
    Ok(Matrix::new(rows, cols, out)?)
}

/// Reverses the time (column) axis.
pub fn flip_time(m: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, m.cols() - 1 - c))
}

/// Random augmentation of `img`, reproducible from `seed`. Shape, range and
/// labels are preserved.
pub fn augment(img: &RadioImage, cfg: &AugmentConfig, seed: u64) -> Result<RadioImage> {
    if !cfg.enabled {
        return Ok(img.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (img.rows(), img.cols());
    let crop = sample_crop(&mut rng, rows, cols, cfg);
    let mut m = crop_resize(img.values(), crop, rows, cols)?;
    if rng.gen_bool(cfg.flip_prob) {
        m = flip_time(&m);
    }
    let bright = 1.0 + uniform(&mut rng, -cfg.brightness, cfg.brightness);
    let contrast = 1.0 + uniform(&mut rng, -cfg.contrast, cfg.contrast);
    if cfg.brightness > 0.0 || cfg.contrast > 0.0 {
        let mean = m.data().iter().map(|v| *v as f64).sum::<f64>() / m.data().len() as f64 * bright;
        let data = m
            .data()
            .iter()
            .map(|v| (((*v as f64 * bright) - mean) * contrast + mean).clamp(0.0, 1.0) as f32)
            .collect();
        m = Matrix::new(rows, cols, data)?;
    }
    Ok(img.with_values(m)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use wisense_csi::{synth_dataset, Preprocessor};

    fn image() -> RadioImage {
        synth_dataset(2, 7, &Preprocessor::default()).unwrap().remove(1).image
    }

    #[test]
    fn zero_strength_full_crop_is_identity() {
        let img = image();
        let cfg = AugmentConfig {
            crop_scale: (1.0, 1.0),
            crop_ratio: (1.0, 1.0),
            flip_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            enabled: true,
        };
        for seed in 0..5 {
            assert_eq!(augment(&img, &cfg, seed).unwrap(), img);
        }
    }

    #[test]
    fn double_flip_equals_crop_alone() {
        let img = image();
        let crop = Crop {
            top: 10,
            left: 30,
            height: 180,
            width: 240,
        };
        let c = crop_resize(img.values(), crop, 234, 300).unwrap();
        assert_eq!(flip_time(&flip_time(&c)), c);
        assert_ne!(flip_time(&c), c);
    }

    #[test]
    fn same_seed_same_output_and_range_kept() {
        let img = image();
        let cfg = AugmentConfig::default();
        let a = augment(&img, &cfg, 3).unwrap();
        assert_eq!(a, augment(&img, &cfg, 3).unwrap());
        assert_ne!(a, augment(&img, &cfg, 4).unwrap());
        assert_eq!((a.rows(), a.cols()), (234, 300));
        assert_eq!((a.rod, a.har), (img.rod, img.har));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn crop_of_constant_image_stays_constant() {
        let m = Matrix::from_fn(8, 12, |_, _| 0.25);
        let crop = Crop {
            top: 1,
            left: 2,
            height: 5,
            width: 7,
        };
        assert!(crop_resize(&m, crop, 8, 12).unwrap().data().iter().all(|v| *v == 0.25));
        assert!(crop_resize(&m, Crop { top: 5, ..crop }, 8, 12).is_err());
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        assert!(AugmentConfig::default().validate().is_ok());
        let bad = AugmentConfig {
            crop_scale: (0.8, 0.5),
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
