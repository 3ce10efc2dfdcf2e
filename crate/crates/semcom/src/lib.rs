//! Desk-scale simulator for multi-user semantic communication with learned
//! vector-quantized transceivers.
//!
//! An encoder maps an image to a grid of latent fibers, each quantized to a
//! codebook index and sent over a K-ary discrete memoryless channel; the
//! receiver's decoder reconstructs the image (optionally classified by a
//! frozen task head). Pairs trained under different sources or channels
//! misalign; the [`slf`] module implements the download → freeze-ℓ
//! fine-tune → upload protocol that re-aligns them, and [`cost`] prices one
//! such session in link latency and compute FLOPs.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` for experiments,
//! `f64` for finite-difference gradient checks); concrete aliases live at
//! the crate root.

pub mod arch;
pub mod channel;
pub mod cost;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod slf;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod training;
pub mod transceiver;
pub mod vq;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type ParamStore32 = layers::ParamStore<f32>;
pub type ParamStore64 = layers::ParamStore<f64>;
pub type Codebook32 = vq::Codebook<f32>;
pub type Codebook64 = vq::Codebook<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Transceiver32 = transceiver::Transceiver<f32>;
pub type Transceiver64 = transceiver::Transceiver<f64>;
