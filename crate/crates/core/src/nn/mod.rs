//! Transformer building blocks.

pub mod attention;
pub mod layers;
pub mod params;
pub mod spatial;

pub use attention::{causal_mask, causal_relative_bucket, key_padding_mask, relative_bucket, AttentionSpec, MultiHeadAttention, RelativeBias, MASK_VALUE};
pub use layers::{Decoder, Encoder, EncoderOutput, FeedForward};
pub use params::{Init, ParamGroup, ParamId, ParamStore};
pub use spatial::{coordinate_bucket, BBox, SpatialEmbedder};
