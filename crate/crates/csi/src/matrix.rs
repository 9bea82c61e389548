//! Amplitude matrices and frame windowing.

use crate::error::{CsiError, Result};
use crate::frame::{CsiFrame, SUBCARRIERS};

/// Packets per window.
pub const WINDOW: usize = 300;

/// Row-major `rows × cols` matrix of f32.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CsiError::Shape {
                stage: "matrix",
                expected: format!("{rows}x{cols} = {} values", rows * cols),
                got: data.len().to_string(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// `256 × window` amplitude matrix: sub-carriers by packets, all entries ≥ 0.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiMatrix(Matrix);

impl CsiMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() != SUBCARRIERS {
            return Err(CsiError::Shape {
                stage: "csi_matrix",
                expected: format!("{SUBCARRIERS} rows"),
                got: m.rows().to_string(),
            });
        }
        if m.data().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(CsiError::Data("amplitudes must be finite and non-negative".into()));
        }
        Ok(CsiMatrix(m))
    }

    /// Amplitudes of `frames`, one column per frame.
    pub fn from_frames(frames: &[CsiFrame]) -> Result<Self> {
        if let Some(bad) = frames.iter().find(|f| f.csi.len() != SUBCARRIERS) {
            return Err(CsiError::Shape {
                stage: "assemble_matrix",
                expected: format!("{SUBCARRIERS} tones per frame"),
                got: bad.csi.len().to_string(),
            });
        }
        let m = Matrix::from_fn(SUBCARRIERS, frames.len(), |r, c| frames[c].csi[r].norm());
        CsiMatrix::new(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Groups a frame stream into non-overlapping windows of amplitude matrices.
///
/// A partial window left when the input ends is dropped; see [`Assembler::dropped`].
pub struct Assembler<I> {
    frames: I,
    window: usize,
    dropped: usize,
}

pub fn assemble_matrix<I>(frames: I, window: usize) -> Result<Assembler<I::IntoIter>>
where
    I: IntoIterator<Item = CsiFrame>,
{
    if window == 0 {
        return Err(CsiError::Param("window must be at least 1 packet".into()));
    }
    Ok(Assembler {
        frames: frames.into_iter(),
        window,
        dropped: 0,
    })
}

impl<I> Assembler<I> {
    /// Frames discarded from a trailing partial window so far.
    pub fn dropped(&self) -> usize {
        self.dropped
    }
}

impl<I: Iterator<Item = CsiFrame>> Iterator for Assembler<I> {
    type Item = Result<CsiMatrix>;

    fn next(&mut self) -> Option<Self::Item> {
        let batch: Vec<CsiFrame> = self.frames.by_ref().take(self.window).collect();
        if batch.len() < self.window {
            if !batch.is_empty() {
                log::debug!("dropping partial window of {} frames", batch.len());
            }
            self.dropped += batch.len();
            return None;
        }
        Some(CsiMatrix::from_frames(&batch))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex32;

    fn frame(v: Complex32) -> CsiFrame {
        CsiFrame {
            timestamp_us: 0,
            source: [0; 6],
            sequence: 0,
            rssi: 0,
            frame_control: 0,
            core_stream: 0,
            chanspec: 0,
            chip: 0,
            csi: vec![v; SUBCARRIERS],
        }
    }

    #[test]
    fn amplitude_is_the_modulus() {
        let m = CsiMatrix::from_frames(&[frame(Complex32::new(3.0, 4.0))]).unwrap();
        assert_eq!(m.matrix().get(17, 0), 5.0);
    }

    #[test]
    fn full_window_gives_one_matrix() {
        let frames = (0..300).map(|i| frame(Complex32::new(i as f32, 0.0)));
        let mats: Vec<_> = assemble_matrix(frames, 300).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(mats.len(), 1);
        let m = mats[0].matrix();
        assert_eq!((m.rows(), m.cols()), (256, 300));
        // packets run along columns
        assert_eq!(m.get(0, 299), 299.0);
    }

    #[test]
    fn partial_tail_is_dropped_and_counted() {
        let frames = (0..750).map(|_| frame(Complex32::new(1.0, 1.0)));
        let mut asm = assemble_matrix(frames, 300).unwrap();
        assert_eq!(asm.by_ref().count(), 2);
        assert_eq!(asm.dropped(), 150);
    }

    #[test]
    fn zero_window_is_rejected() {
        assert!(matches!(
            assemble_matrix(Vec::<CsiFrame>::new(), 0),
            Err(CsiError::Param(_))
        ));
    }

    #[test]
    fn negative_amplitudes_are_rejected() {
        let m = Matrix::new(SUBCARRIERS, 1, vec![-1.0; SUBCARRIERS]).unwrap();
        assert!(CsiMatrix::new(m).is_err());
        assert!(CsiMatrix::new(Matrix::zeros(10, 3)).is_err());
    }
}
