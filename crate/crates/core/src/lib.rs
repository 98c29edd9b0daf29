//! Component-wise natural gradient descent (CW-NGD) for small dense and
//! convolutional networks.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: row-major `f64` tensors with their numeric kernels.
//! * [`network`]: layer descriptions plus per-sample backpropagation.
//! * [`fim`]: per-group Fisher blocks and their damped solves, checked
//!   against a brute-force full-FIM oracle.
//! * [`optim`]: the CW-NGD step beside first-order baselines.
//! * [`data`]: MNIST IDX loading and synthetic sets, with deterministic batching.
//! * [`train`]: the epoch loop and the metrics CSV it writes.

pub mod data;
pub mod error;
pub mod fim;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
