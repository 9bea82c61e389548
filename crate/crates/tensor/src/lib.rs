//! Dense `NCHW` tensors with the forward kernels of a Ghost-style CNN
//! (dense and depthwise convolution, batch norm, ReLU, hard-sigmoid, global
//! pooling, fully connected layers, softmax cross-entropy) and a
//! reverse-mode tape for training them.
//!
//! Storage is generic over [`Element`] (`f32` for models, `f64` for gradient
//! checks); reductions always accumulate in `f64`.

pub mod element;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod ops;
pub mod parallel;
pub mod tensor;

pub use element::Element;
pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, FdConfig, FdReport};
pub use graph::{BnUpdate, ExecStats, Gradients, Graph, ParamId, Var};
pub use kernels::conv::{conv_out_dim, ConvGeom};
pub use tensor::Tensor;
