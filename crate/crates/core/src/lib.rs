//! Trains image autoencoders and VAEs with pixel-wise or perceptual
//! reconstruction loss and measures how useful the resulting embeddings are
//! for downstream prediction (object positioning, classification).
//!
//! The crate is organized around the experiment pipeline:
//!
//! - [`datasets`]: the synthetic lander positioning collection, STL-10 and
//!   SVHN ingestion, and the three-way autoencoder/predictor/test split.
//! - [`perceptual`]: the frozen feature extractor (AlexNet-prefix topology,
//!   two convolutions, sigmoid output) used by the perceptual loss.
//! - [`models`]: the stride-2 convolutional autoencoder/VAE.
//! - [`losses`]: element-wise loss, perceptual loss, KL regularizer, and
//!   the demonstration scenes for their failure modes.
//! - [`predictors`]: the MLP hyperparameter grid and the linear probe.
//! - [`training`]: seeded training loops, decoder retraining, timings.
//! - [`evaluation`]: test metrics, model selection, result tables.
//! - [`experiment`]: config-driven experiment matrix with resumable runs.
//!
//! Everything stochastic is derived from explicit seeds; equal seeds give
//! bit-identical results on one machine.

pub mod datasets;
pub mod errors;
pub mod evaluation;
pub mod experiment;
pub mod losses;
pub mod models;
pub mod nn;
pub mod oracles;
pub mod perceptual;
pub mod plot;
pub mod predictors;
pub mod seed;
pub mod training;
pub mod verify;
pub mod weights;

pub use errors::Error;

/// Default floating point type for production training runs. Gradient
/// verification instantiates the same code at `f64`.
pub type Ftrain = f32;
