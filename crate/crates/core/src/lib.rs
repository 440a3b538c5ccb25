//! Diffusion-based 3D object detection from random boxes, at desk scale.
//!
//! Training corrupts padded ground-truth boxes with Gaussian noise in a
//! normalized signal space and teaches a small decoder to recover them;
//! inference starts from pure noise and refines with DDIM steps.
//!
//! Layout:
//! - [`geometry`]: rotated boxes, IoU, DIoU loss, NMS
//! - [`diffusion`]: noise schedule, box normalization, forward/reverse steps
//! - [`proposals`]: padding, corruption, resampling, dynamic time ceiling
//! - [`matching`]: matching cost, Hungarian assignment, training loss
//! - [`decoder`]: BEV features, RoI pooling, MLP, optimizer, checkpoints
//! - [`data`]: KITTI labels, synthetic scenes, configuration
//! - [`pipeline`]: training, inference, evaluation and plot data

pub mod data;
pub mod decoder;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod matching;
pub mod pipeline;
pub mod proposals;

pub use data::{Config, Scene};
pub use decoder::{Checkpoint, Decoder};
pub use error::{Error, Result};
pub use geometry::{BevBox, Box3D, Detection};
