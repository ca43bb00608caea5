//! Region-aware semantic fusion for no-reference image quality assessment.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] / [`tape`] / [`gradcheck`]: a dense f64 autodiff core.
//! * [`image_data`]: image loading and synthetic distortion generation.
//! * [`segmentation`]: region proposals with deterministic fallback.
//! * [`description`]: per-region quality descriptions via pluggable
//!   providers, with an on-disk cache.
//! * [`encoder`]: hashed-vocabulary text embedding of descriptions.
//! * [`attention`]: shared scaled dot-product attention with optional bias.
//! * [`backbone`] / [`mhf`] / [`rsa`] / [`regressor`]: the scoring model.
//! * [`model`]: parameter registry, full forward pass, ablation switches.
//! * [`optim`]: AdamW with cosine annealing.
//! * [`metrics`]: PLCC / SRCC evaluation.

pub mod attention;
pub mod backbone;
pub mod description;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod image_data;
pub mod metrics;
pub mod mhf;
pub mod model;
pub mod optim;
pub mod regressor;
pub mod rsa;
pub mod segmentation;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
