//! Face-guided meta-learned blind super-resolution at desk scale.
//!
//! An SR network is meta-trained so that a single gradient step on the face
//! regions of a degraded photo, supervised by a pseudo-restored face and
//! weighted per pixel by a learned mask, adapts it to that photo's unknown
//! degradation. Everything differentiable runs on [`facesr_grad`].

pub mod degrade;
pub mod error;
pub mod harness;
pub mod image;
pub mod meta;
pub mod nets;
pub mod oracle;
pub mod par;

pub use error::{Error, Result};
pub use image::Image;
