//! Smoothing, normalization and the matrix-to-image chain.

use crate::error::{CsiError, Result};
use crate::image::RadioImage;
use crate::labels::{Activity, Occupancy};
use crate::mask::{filter_subcarriers, SubcarrierMask};
use crate::matrix::{CsiMatrix, Matrix};

pub const DEFAULT_SMOOTHING: usize = 5;

/// Trailing mean over the last `min(w, t + 1)` packets of every row.
pub fn moving_average(m: &Matrix, w: usize) -> Result<Matrix> {
    if w == 0 {
        return Err(CsiError::Param("moving-average window must be at least 1".into()));
    }
    if w == 1 {
        return Ok(m.clone());
    }
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let src = m.row(r);
        let dst = out.row_mut(r);
        for t in 0..src.len() {
            let lo = (t + 1).saturating_sub(w);
            let sum: f64 = src[lo..=t].iter().map(|v| *v as f64).sum();
            dst[t] = (sum / (t + 1 - lo) as f64) as f32;
        }
    }
    Ok(out)
}

/// Per-image min-max scaling to `[0, 1]`; a constant matrix maps to zeros.
pub fn to_radio_image(m: Matrix, rod: Option<Occupancy>, har: Option<Activity>) -> Result<RadioImage> {
    if m.data().iter().any(|v| !v.is_finite()) {
        return Err(CsiError::Data("matrix contains NaN or infinite values".into()));
    }
    let (lo, hi) = m
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v as f64), hi.max(*v as f64))
        });
    let range = hi - lo;
    let data = if range > 0.0 {
        m.data()
            .iter()
            .map(|v| (((*v as f64 - lo) / range) as f32).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; m.data().len()]
    };
    RadioImage::new(Matrix::new(m.rows(), m.cols(), data)?, rod, har)
}

/// Mask, smoothing window and normalization applied to every window.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessor {
    pub mask: SubcarrierMask,
    pub smoothing: usize,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Preprocessor {
            mask: SubcarrierMask::vht80(),
            smoothing: DEFAULT_SMOOTHING,
        }
    }
}

impl Preprocessor {
    pub fn new(mask: SubcarrierMask, smoothing: usize) -> Result<Self> {
        if smoothing == 0 {
            return Err(CsiError::Param("moving-average window must be at least 1".into()));
        }
        Ok(Preprocessor { mask, smoothing })
    }

    pub fn process(&self, m: &CsiMatrix, rod: Option<Occupancy>, har: Option<Activity>) -> Result<RadioImage> {
        let kept = filter_subcarriers(m, &self.mask)?;
        let smooth = moving_average(&kept, self.smoothing)?;
        to_radio_image(smooth, rod, har)
    }
}
