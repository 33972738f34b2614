//! Minimal dense network kernel with hand-derived gradients.
//!
//! Parameters live in a [`ParamStore`] keyed by name; layers are thin
//! descriptors that know their parameter names and implement
//! `forward` (returning a cache) and `backward` (consuming it and
//! accumulating into a [`Grads`] buffer).

mod attention;
mod block;
mod layers;
mod params;
mod tensor;

pub use attention::{attention_backward, attention_forward, softmax_rows, AttentionCache, SelfAttention};
pub use block::{BlockCache, BlockStack, TransformerBlock, TransformerBlockConfig};
pub use layers::{
    gelu, gelu_grad, layernorm_backward, layernorm_forward, linear_forward, LayerNorm, LayerNormCache, Linear, Mlp,
    MlpCache, INIT_STD,
};
pub use params::{Grads, Param, ParamStore};
pub use tensor::{Scalar, Tensor2};
