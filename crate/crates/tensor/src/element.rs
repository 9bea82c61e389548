use std::fmt::Debug;

/// Storage scalar of a [`Tensor`](crate::Tensor).
///
/// Kernels load elements as `f64`, reduce in `f64` and round once on store,
/// so `f32` tensors get 64-bit accumulation and `f64` tensors are exact
/// enough for finite-difference checks.
pub trait Element: Copy + Default + Debug + PartialEq + PartialOrd + Send + Sync + 'static {
    /// Checkpoint dtype code.
    const DTYPE: u8;
    const NAME: &'static str;

    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;

    fn zero() -> Self {
        Self::default()
    }
}

impl Element for f32 {
    const DTYPE: u8 = 0;
    const NAME: &'static str = "f32";

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Element for f64 {
    const DTYPE: u8 = 1;
    const NAME: &'static str = "f64";

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
}
