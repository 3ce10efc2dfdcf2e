//! Fixed network architecture.
//!
//! Canonical input is a 28×28 single-channel image in [0,1]. The encoder
//! maps it to a 7×7 grid of 16-dim vectors; a 16-entry codebook quantizes
//! each grid vector to a 4-bit symbol (49 symbols per image on the air
//! interface). The decoder mirrors the encoder with transposed convolutions,
//! and the classifier head consumes reconstructed images.

use crate::layers::{LayerSpec, Stack};

pub const IMG_H: usize = 28;
pub const IMG_W: usize = 28;
pub const IMG_C: usize = 1;

/// Codebook size K: 4-bit symbols.
pub const CODEBOOK_K: usize = 16;
/// Codeword dimension D = encoder output channels.
pub const CODE_DIM: usize = 16;
/// Latent grid after two stride-2 stages.
pub const GRID_H: usize = 7;
pub const GRID_W: usize = 7;

pub fn input_shape() -> [usize; 3] {
    [IMG_C, IMG_H, IMG_W]
}

fn conv(ic: usize, oc: usize, k: usize, s: usize, p: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels: ic,
        out_channels: oc,
        kernel: k,
        stride: s,
        padding: p,
        transposed: false,
    }
}

fn conv_t(ic: usize, oc: usize, k: usize, s: usize, p: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels: ic,
        out_channels: oc,
        kernel: k,
        stride: s,
        padding: p,
        transposed: true,
    }
}

/// TX semantic encoder θ: 3 convolutions, ReLU after all but the last.
/// 28×28×1 → 14×14×16 → 7×7×32 → 7×7×16.
pub fn encoder() -> Stack {
    Stack::new(
        "enc",
        vec![
            ("conv1", conv(IMG_C, 16, 4, 2, 1)),
            ("relu1", LayerSpec::Relu),
            ("conv2", conv(16, 32, 4, 2, 1)),
            ("relu2", LayerSpec::Relu),
            ("conv3", conv(32, CODE_DIM, 3, 1, 1)),
        ],
    )
}

/// RX semantic decoder φ, mirroring the encoder with up-sampling stages:
/// 7×7×16 → 7×7×32 → 14×14×16 → 28×28×1. `conv3` is the output layer, so
/// layer freezing counts conv3 first.
pub fn decoder() -> Stack {
    Stack::new(
        "dec",
        vec![
            ("conv1", conv(CODE_DIM, 32, 3, 1, 1)),
            ("relu1", LayerSpec::Relu),
            ("conv2", conv_t(32, 16, 4, 2, 1)),
            ("relu2", LayerSpec::Relu),
            ("conv3", conv_t(16, IMG_C, 4, 2, 1)),
        ],
    )
}

/// Task head γ for classification: two conv+pool stages and two dense
/// layers, applied to reconstructed images.
pub fn classifier(n_classes: usize) -> Stack {
    Stack::new(
        "cls",
        vec![
            ("conv1", conv(IMG_C, 8, 3, 1, 1)),
            ("relu1", LayerSpec::Relu),
            (
                "pool1",
                LayerSpec::MaxPool2d {
                    window: 2,
                    stride: 2,
                },
            ),
            ("conv2", conv(8, 16, 3, 1, 1)),
            ("relu2", LayerSpec::Relu),
            (
                "pool2",
                LayerSpec::MaxPool2d {
                    window: 2,
                    stride: 2,
                },
            ),
            (
                "fc1",
                LayerSpec::Dense {
                    in_dim: 16 * 7 * 7,
                    out_dim: 64,
                },
            ),
            ("relu3", LayerSpec::Relu),
            (
                "fc2",
                LayerSpec::Dense {
                    in_dim: 64,
                    out_dim: n_classes,
                },
            ),
        ],
    )
}
