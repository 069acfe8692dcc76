//! Deformable convolution and the scale-equalizing variant of pyramid
//! convolution built on it.

mod deform;
mod layer;

pub use deform::{
    bilinear_sample, bilinear_sample_scatter, bilinear_sample_with_coord_grad, deform_conv2d,
    deform_conv2d_vjp, DeformGrads, OffsetField,
};
pub use layer::{sepc_forward, sepc_vjp, LevelConv, LevelConvGrads, SepcLayer, SepcLayerGrads};

use crate::error::Result;
use crate::pconv::{Head, HeadConfig};

/// Build a head for the configured SEPC variant: `None` keeps every stack and
/// the extra convolutions plain, `Lite` deforms only the extra convolutions,
/// `Full` deforms the stacks as well. Offset predictors start at zero, so a
/// freshly built Lite/Full head computes exactly what the plain head does.
pub fn build_head_variant(cfg: &HeadConfig, levels: usize, seed: u64) -> Result<Head> {
    Head::build(cfg, levels, seed)
}
