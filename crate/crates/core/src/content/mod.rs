//! Frame-content features: backbone pooling, recurrent fusion, macroblock
//! texture and inter-frame structural similarity.

mod backbone;
mod gray;
mod gru;
mod ssim;
mod stats;
mod texture;

pub use backbone::{Activation, BackboneParams, ConvLayer, FeatureMap};
pub use gray::{resize_bilinear, resize_to_max_dim, to_gray, ColorImage};
pub use gru::{GruParams, GRU_HIDDEN};
pub use ssim::{fast_ssim, SSIM_CAP_WIDTH, SSIM_FLOOR};
pub use stats::{pooled_stats, PooledStats};
pub use texture::{texture, texture_segment, TextureConfig, MACROBLOCK};
