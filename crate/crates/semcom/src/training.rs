//! Shared minibatch training loops.
//!
//! The VQ-VAE objective per batch of B samples is
//!
//!   L = (1/B)·[ ‖x − x̂‖² + ‖ẑ − sg(z′)‖² + λ_c·‖sg(ẑ) − z′‖² ]
//!
//! where z′ is the encoder output, ẑ the quantized latent *after* the
//! channel (each symbol re-drawn through the DMC every batch), and sg the
//! stop-gradient. The decoder consumes ẑ through a straight-through
//! estimator, so reconstruction error reaches the encoder while the
//! codebook learns only from the middle term. A config switch can point the
//! codebook/commitment terms at the pre-channel assignment instead.

use crate::arch;
use crate::channel::DmcChannel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::{NameSet, ParamStore};
use crate::optim::{adam_step, AdamState};
use crate::rng::{self, tag};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::vq::{gather_channel_fibers, quantize_channel_fibers, Codebook};
use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CodebookLossTarget {
    /// Codebook and commitment terms see the post-channel quantized latent.
    #[default]
    Received,
    /// Terms see the transmit-side assignment (decoder still gets the
    /// received one).
    PreChannel,
}

#[derive(Debug, Clone)]
pub struct VqTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_c: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub codebook_loss_target: CodebookLossTarget,
}

impl VqTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.lambda_c.is_finite() && self.lambda_c >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "commitment weight must be non-negative, got {}",
                self.lambda_c
            )));
        }
        Ok(())
    }
}

/// One training step's forward graph, shared by training and gradient tests.
/// `params` holds the merged `enc.*`/`dec.*`/`codebook` tensors. Returns the
/// loss node; channel symbols are drawn from `channel_rng`.
pub fn build_vqvae_loss<F: Scalar>(
    tape: &mut Tape<F>,
    params: &ParamStore<F>,
    frozen: &NameSet,
    x: Tensor<F>,
    channel: &DmcChannel,
    channel_rng: &mut rand_chacha::ChaCha8Rng,
    lambda_c: f64,
    target: CodebookLossTarget,
) -> Result<crate::tape::NodeId> {
    let cb = Codebook::new(params.require("codebook")?.clone())?;
    let z_pre_val = arch::encoder().forward(params, &x)?;
    let tx_indices = quantize_channel_fibers(&z_pre_val, &cb)?;
    let rx_indices = channel.transmit_all(&tx_indices, channel_rng)?;
    build_vqvae_loss_pinned(
        tape,
        params,
        frozen,
        x,
        &tx_indices,
        &rx_indices,
        lambda_c,
        target,
    )
}

/// The same graph with the symbol streams supplied by the caller, so
/// gradient checks can hold quantization indices and channel draws fixed
/// while parameters are perturbed.
#[allow(clippy::too_many_arguments)]
pub fn build_vqvae_loss_pinned<F: Scalar>(
    tape: &mut Tape<F>,
    params: &ParamStore<F>,
    frozen: &NameSet,
    x: Tensor<F>,
    tx_indices: &[u32],
    rx_indices: &[u32],
    lambda_c: f64,
    target: CodebookLossTarget,
) -> Result<crate::tape::NodeId> {
    let batch = x.shape()[0];
    let trainable = |name: &str| !frozen.contains(name);

    let x_node = tape.constant(x);
    let z_pre = tape.forward_stack(&arch::encoder(), params, x_node, &trainable)?;

    let cb_node = tape.param("codebook", params.require("codebook")?, trainable("codebook"));
    let grid = (batch, arch::GRID_H, arch::GRID_W);
    let z_hat = tape.gather_fibers(cb_node, rx_indices.to_vec(), grid)?;
    let z_loss = match target {
        CodebookLossTarget::Received => z_hat,
        CodebookLossTarget::PreChannel => {
            tape.gather_fibers(cb_node, tx_indices.to_vec(), grid)?
        }
    };

    let z_dec = tape.straight_through(z_pre, tape.value(z_hat).clone())?;
    let x_hat = tape.forward_stack(&arch::decoder(), params, z_dec, &trainable)?;

    let recon_diff = tape.sub(x_hat, x_node)?;
    let recon = tape.sum_squares(recon_diff);

    let sg_pre = tape.detach(z_pre);
    let cb_diff = tape.sub(z_loss, sg_pre)?;
    let cb_term = tape.sum_squares(cb_diff);

    let sg_hat = tape.detach(z_loss);
    let commit_diff = tape.sub(sg_hat, z_pre)?;
    let commit = tape.sum_squares(commit_diff);

    let commit_scaled = tape.scale(commit, F::of(lambda_c));
    let latent_terms = tape.add(cb_term, commit_scaled)?;
    let total = tape.add(recon, latent_terms)?;
    Ok(tape.scale(total, F::of(1.0 / batch as f64)))
}

/// Finite-difference surrogate for the pinned loss. The straight-through
/// step and the two stop-gradients are not honest functions — perturbing a
/// parameter moves values through branches the backward pass deliberately
/// ignores — so raw FD on [`build_vqvae_loss_pinned`] would disagree with
/// its own gradients. Here each such branch is replaced by a construction
/// whose true derivative at `base` equals the estimator's: the decoder
/// input becomes z′ − const(z′₀) + const(ẑ₀) (value ẑ₀, slope 1 toward the
/// encoder, 0 toward the codebook) and each sg(·) becomes the constant it
/// evaluates to at `base`. FD probes of this surrogate therefore validate
/// the analytic gradients of the training graph at `params == base`.
#[allow(clippy::too_many_arguments)]
pub fn build_vqvae_surrogate_pinned<F: Scalar>(
    tape: &mut Tape<F>,
    params: &ParamStore<F>,
    base: &ParamStore<F>,
    x: Tensor<F>,
    tx_indices: &[u32],
    rx_indices: &[u32],
    lambda_c: f64,
    target: CodebookLossTarget,
) -> Result<crate::tape::NodeId> {
    let batch = x.shape()[0];
    let grid = (batch, arch::GRID_H, arch::GRID_W);
    let loss_indices: &[u32] = match target {
        CodebookLossTarget::Received => rx_indices,
        CodebookLossTarget::PreChannel => tx_indices,
    };
    let z_pre0 = arch::encoder().forward(base, &x)?;
    let base_cb = Codebook::new(base.require("codebook")?.clone())?;
    let z_hat0 = gather_channel_fibers(&base_cb, rx_indices, grid)?;
    let z_loss0 = gather_channel_fibers(&base_cb, loss_indices, grid)?;

    let trainable = |_: &str| true;
    let x_node = tape.constant(x);
    let z_pre = tape.forward_stack(&arch::encoder(), params, x_node, &trainable)?;
    let cb_node = tape.param("codebook", params.require("codebook")?, true);

    let z_pre0_a = tape.constant(z_pre0.clone());
    let z_hat0_node = tape.constant(z_hat0);
    let shift = tape.sub(z_pre, z_pre0_a)?;
    let z_dec = tape.add(shift, z_hat0_node)?;
    let x_hat = tape.forward_stack(&arch::decoder(), params, z_dec, &trainable)?;
    let recon_diff = tape.sub(x_hat, x_node)?;
    let recon = tape.sum_squares(recon_diff);

    let z_live = tape.gather_fibers(cb_node, loss_indices.to_vec(), grid)?;
    let z_pre0_b = tape.constant(z_pre0);
    let cb_diff = tape.sub(z_live, z_pre0_b)?;
    let cb_term = tape.sum_squares(cb_diff);

    let z_loss0_node = tape.constant(z_loss0);
    let commit_diff = tape.sub(z_loss0_node, z_pre)?;
    let commit = tape.sum_squares(commit_diff);

    let commit_scaled = tape.scale(commit, F::of(lambda_c));
    let latent_terms = tape.add(cb_term, commit_scaled)?;
    let total = tape.add(recon, latent_terms)?;
    Ok(tape.scale(total, F::of(1.0 / batch as f64)))
}

/// Run the VQ-VAE loop over `cfg.epochs` shuffled passes. `on_epoch` fires
/// after each epoch with (epoch index, mean train loss, params). Returns the
/// per-epoch mean batch loss.
pub fn train_vqvae<F: Scalar>(
    params: &mut ParamStore<F>,
    frozen: &NameSet,
    train: &Dataset<F>,
    cfg: &VqTrainConfig,
    mut on_epoch: impl FnMut(usize, f64, &ParamStore<F>) -> Result<()>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let channel = DmcChannel::new(arch::CODEBOOK_K as u32, cfg.epsilon)?;
    let mut adam = AdamState::new();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::substream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));

        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x = train.batch(chunk);
            let mut tape = Tape::new();
            let mut ch_rng = rng::substream(cfg.seed, &[tag::CHANNEL, epoch as u64, bi as u64]);
            let loss_node = build_vqvae_loss(
                &mut tape,
                params,
                frozen,
                x,
                &channel,
                &mut ch_rng,
                cfg.lambda_c,
                cfg.codebook_loss_target,
            )?;
            let loss = tape.value(loss_node).data()[0].to_f64c();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            let grads = tape.backward(loss_node)?;
            adam_step(params, &grads, &mut adam, cfg.lr, frozen)?;
            epoch_loss += loss;
            n_batches += 1;
        }
        let mean = epoch_loss / n_batches as f64;
        curve.push(mean);
        on_epoch(epoch, mean, params)?;
    }
    Ok(curve)
}

#[derive(Debug, Clone)]
pub struct HeadTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        HeadTrainConfig {
            epochs: 10,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Cross-entropy training of the classifier head on clean images.
/// `params` holds `cls.*`; labels are absolute ids into the head's output.
pub fn train_classifier<F: Scalar>(
    params: &mut ParamStore<F>,
    n_classes: usize,
    train: &Dataset<F>,
    cfg: &HeadTrainConfig,
) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if let Some(&bad) = train.labels().iter().find(|&&l| l as usize >= n_classes) {
        return Err(Error::Data(format!(
            "label {bad} outside classifier range 0..{n_classes}"
        )));
    }
    let stack = arch::classifier(n_classes);
    let mut adam = AdamState::new();
    let frozen = NameSet::new();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::substream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));

        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let x = train.batch(chunk);
            let targets = train.batch_labels(chunk);
            let mut tape = Tape::new();
            let x_node = tape.constant(x);
            let logits = tape.forward_stack(&stack, params, x_node, &|_| true)?;
            let loss_node = tape.softmax_cross_entropy(logits, targets)?;
            let loss = tape.value(loss_node).data()[0].to_f64c();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: n_batches,
                });
            }
            let grads = tape.backward(loss_node)?;
            adam_step(params, &grads, &mut adam, cfg.lr, &frozen)?;
            epoch_loss += loss;
            n_batches += 1;
        }
        curve.push(epoch_loss / n_batches as f64);
    }
    Ok(curve)
}
