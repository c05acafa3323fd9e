//! Weakly supervised lesion segmentation by classifier-guided healthy
//! editing in a latent space, followed by hide-and-seek occlusion
//! attribution of each candidate region.

pub mod attribution;
pub mod baselines;
pub mod classifier;
pub mod error;
pub mod imaging;
pub mod latent;
pub mod metrics;
pub mod phantom;
pub mod pipeline;

pub use error::{Error, Result};
