//! Desk-scale denoising decoder: BEV statistics grid, rotated RoI pooling,
//! a proposal-wise MLP with exact gradients, and its optimizer.

pub mod checkpoint;
pub mod features;
pub mod network;
pub mod optim;

pub use checkpoint::Checkpoint;
pub use features::{build_bev_features, disc_summary, roi_pool_rotated, roi_summary, RoiSummary, FeatureGrid, GridConfig, CHANNELS};
pub use network::{time_embedding, Decoder, DecoderConfig, DecoderParams, ForwardCache, HeightMode, SUMMARY_DIM, TENSOR_NAMES};
pub use optim::{AdamW, OneCycle};
