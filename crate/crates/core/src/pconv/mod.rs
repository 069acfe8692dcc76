//! Pyramid convolution, batch normalization over pyramids, and the stacked
//! detection head built from them.

mod bn;
mod head;
mod layer;
mod pyramid;

pub use bn::{bn_forward, bn_vjp, ibn_statistics, BNState, BnGrads, BnMode};
pub use head::{
    head_forward, smoke_task, smoke_train, Branches, BranchesGrads, ExtraConv, ExtraGrads, Head,
    HeadCache, HeadConfig, HeadGrads, HeadOutputs, SepcVariant, SmokeTask, Stack, StackGrads,
    StackLayer, StackLayerGrads, SMOKE_LR, SMOKE_SEED,
};
pub use layer::{kaiming_kernel, pconv_forward, pconv_vjp, PConvLayer, PConvLayerGrads};
pub use pyramid::FeaturePyramid;
