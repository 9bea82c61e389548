//! Removal of null and pilot tones.

use std::collections::BTreeSet;

use crate::error::{CsiError, Result};
use crate::frame::SUBCARRIERS;
use crate::matrix::{CsiMatrix, Matrix};

pub const NULL_TONES: usize = 14;
pub const PILOT_TONES: usize = 8;
/// Rows left after masking.
pub const KEPT_TONES: usize = SUBCARRIERS - NULL_TONES - PILOT_TONES;

/// Null and pilot rows to drop, in fft-shifted indexing (DC at 128).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubcarrierMask {
    nulls: Vec<usize>,
    pilots: Vec<usize>,
    keep: Vec<usize>,
}

impl SubcarrierMask {
    pub fn new(nulls: &[usize], pilots: &[usize]) -> Result<Self> {
        let null_set: BTreeSet<usize> = nulls.iter().copied().collect();
        let pilot_set: BTreeSet<usize> = pilots.iter().copied().collect();
        if null_set.len() != nulls.len() || pilot_set.len() != pilots.len() {
            return Err(CsiError::Config("mask lists contain duplicates".into()));
        }
        if let Some(i) = null_set.iter().chain(&pilot_set).find(|i| **i >= SUBCARRIERS) {
            return Err(CsiError::Config(format!("tone index {i} outside 0..{SUBCARRIERS}")));
        }
        if null_set.len() != NULL_TONES || pilot_set.len() != PILOT_TONES {
            return Err(CsiError::Config(format!(
                "mask needs {NULL_TONES} nulls and {PILOT_TONES} pilots, got {} and {}",
                null_set.len(),
                pilot_set.len()
            )));
        }
        if let Some(i) = null_set.intersection(&pilot_set).next() {
            return Err(CsiError::Config(format!("tone {i} is both null and pilot")));
        }
        let keep = (0..SUBCARRIERS)
            .filter(|i| !null_set.contains(i) && !pilot_set.contains(i))
            .collect();
        Ok(SubcarrierMask {
            nulls: null_set.into_iter().collect(),
            pilots: pilot_set.into_iter().collect(),
            keep,
        })
    }

    /// 802.11ac 80 MHz tone plan: 6 lower guards, DC ±1, 5 upper guards;
    /// pilots at ±11, ±39, ±75, ±103.
    pub fn vht80() -> Self {
        let nulls: Vec<usize> = (0..=5).chain(127..=129).chain(251..=255).collect();
        let pilots: Vec<usize> = [-103i32, -75, -39, -11, 11, 39, 75, 103]
            .iter()
            .map(|t| (128 + t) as usize)
            .collect();
        SubcarrierMask::new(&nulls, &pilots).expect("standard plan is a valid mask")
    }

    pub fn nulls(&self) -> &[usize] {
        &self.nulls
    }

    pub fn pilots(&self) -> &[usize] {
        &self.pilots
    }

    /// Retained rows in ascending order.
    pub fn keep(&self) -> &[usize] {
        &self.keep
    }
}

impl Default for SubcarrierMask {
    fn default() -> Self {
        SubcarrierMask::vht80()
    }
}

/// Drops masked rows of a 256-row matrix, preserving row order.
pub fn filter_rows(m: &Matrix, mask: &SubcarrierMask) -> Result<Matrix> {
    if m.rows() != SUBCARRIERS {
        return Err(CsiError::Shape {
            stage: "filter_subcarriers",
            expected: format!("{SUBCARRIERS} rows"),
            got: m.rows().to_string(),
        });
    }
    let mut data = Vec::with_capacity(KEPT_TONES * m.cols());
    for &r in mask.keep() {
        data.extend_from_slice(m.row(r));
    }
    Matrix::new(KEPT_TONES, m.cols(), data)
}

pub fn filter_subcarriers(m: &CsiMatrix, mask: &SubcarrierMask) -> Result<Matrix> {
    filter_rows(m.matrix(), mask)
}
