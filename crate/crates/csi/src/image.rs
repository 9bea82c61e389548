use crate::error::{CsiError, Result};
use crate::labels::{Activity, Occupancy};
use crate::mask::KEPT_TONES;
use crate::matrix::Matrix;

/// Normalized `234 × packets` amplitude image with optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RadioImage {
    values: Matrix,
    pub rod: Option<Occupancy>,
    pub har: Option<Activity>,
}

impl RadioImage {
    pub fn new(values: Matrix, rod: Option<Occupancy>, har: Option<Activity>) -> Result<Self> {
        if values.rows() != KEPT_TONES || values.cols() == 0 {
            return Err(CsiError::Shape {
                stage: "radio_image",
                expected: format!("{KEPT_TONES} rows and at least one column"),
                got: format!("{}x{}", values.rows(), values.cols()),
            });
        }
        if let Some(v) = values.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CsiError::Data(format!("image value {v} outside [0, 1]")));
        }
        Ok(RadioImage { values, rod, har })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn data(&self) -> &[f32] {
        self.values.data()
    }

    /// Same labels over new values.
    pub fn with_values(&self, values: Matrix) -> Result<Self> {
        RadioImage::new(values, self.rod, self.har)
    }

    pub fn with_labels(mut self, rod: Option<Occupancy>, har: Option<Activity>) -> Self {
        self.rod = rod;
        self.har = har;
        self
    }
}
