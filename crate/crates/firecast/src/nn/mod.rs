//! Small CPU tensor layer set with hand-written backward passes.
//!
//! Layers are generic over the float type: training runs in f32 for speed,
//! gradient checks run in f64 against central finite differences. Each
//! layer's `forward` returns a cache consumed by `backward`; parameter
//! gradients come back as layer-shaped structs so model code can mirror its
//! parameter tree when accumulating. `named`/`named_mut` expose parameters
//! as (dot-separated name, view) pairs for optimizers and checkpoints.

mod conv;
mod linear;
mod norm;
mod ops;

pub use conv::{Conv2d, ConvCache, ConvGrads};
pub use linear::{Linear, LinearCache, LinearGrads};
pub use norm::{GroupNorm, GroupNormCache, GroupNormGrads, LayerNorm, LayerNormCache, LayerNormGrads};
pub use ops::{
    relu, relu_backward, softmax_axis, softmax_backward, upsample_nearest,
    upsample_nearest_backward,
};
