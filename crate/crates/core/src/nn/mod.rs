//! Sequence-model substrate shared by the scorer, the inpainter and the
//! predictor: parameter storage, attention and feed-forward blocks, the
//! gated fusion block, sinusoidal position codes, checkpoints and AdamW.

mod checkpoint;
mod layers;
mod optim;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use layers::{
    causal_mask, sinusoidal_pe, time_mask, Attention, Conv1d, EncoderLayer, EncoderStack, FeedForward,
    GatedFusion, LayerNorm, Linear, ModelDims, MASKED,
};
pub use optim::{clip_grad_norm, cosine_lr, AdamW, AdamWConfig};
pub use params::ParamStore;
