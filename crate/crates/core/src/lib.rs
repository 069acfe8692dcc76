//! Pyramid convolution (PConv), scale-equalizing pyramid convolution (SEPC),
//! integrated batch normalization, Gaussian scale-space machinery, and an
//! analytical FLOPs model for pyramid heads.
//!
//! Everything is CPU-only double precision. Forward kernels fix their
//! accumulation order so outputs are bit-reproducible, and every operation
//! with learnable inputs ships a reverse-mode derivative that the test suites
//! check against central finite differences.

pub mod analysis;
pub mod calibration;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod pconv;
pub mod scale_space;
pub mod sepc;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
