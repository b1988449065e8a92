//! Two-network co-training that distills a shape prior into an image
//! classifier, with evaluation tooling for shortcut learning, frequency
//! robustness, adversarial robustness, and calibration.
//!
//! The core idea: train a conventional network on RGB images and a peer
//! network on edge-extracted "shape" images of the same samples, coupling
//! the pair through decision alignment (KL divergence between softmax
//! outputs) and feature alignment (MSE between latent vectors). The RGB
//! network inherits the peer's shape sensitivity and becomes less prone to
//! color/texture shortcuts; only it is used at inference.

pub mod adversarial;
pub mod augment;
pub mod calib;
pub mod checkpoint;
pub mod batch;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fourier;
pub mod losses;
pub mod models;
pub mod nn;
pub mod num;
pub mod par;
pub mod plot;
pub mod record;
pub mod report;
pub mod rng;
pub mod shape;
pub mod trainer;

pub use batch::ImageBatch;
pub use error::{Error, Result};
