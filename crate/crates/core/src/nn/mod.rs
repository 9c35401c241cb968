//! Small dense layers with hand-written backward passes.
//!
//! Forward passes return a cache; backward passes take that cache, add
//! parameter gradients into a [`Grads`] buffer and return the input
//! gradient.

mod adam;
mod attention;
mod layers;
mod params;

pub use adam::{Adam, AdamConfig};
pub use attention::{AttentionCache, SelfAttention};
pub use layers::{time_features, Activation, LayerNorm, LayerNormCache, Linear, Mlp, MlpCache};
pub use params::{Grads, ParamId, ParamStore};
