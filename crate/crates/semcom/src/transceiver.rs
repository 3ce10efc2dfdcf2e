//! Virtual transceivers: encoder θ, decoder φ, shared codebook, optional
//! task head γ, plus pretraining and end-to-end evaluation.

use crate::arch;
use crate::channel::DmcChannel;
use crate::data::{split_train_test, Dataset};
use crate::error::{Error, Result};
use crate::layers::{NameSet, ParamStore};
use crate::rng::{self, tag};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::{
    train_classifier, train_vqvae, CodebookLossTarget, HeadTrainConfig, VqTrainConfig,
};
use crate::vq::{gather_channel_fibers, quantize_channel_fibers, Codebook};

pub const TRAIN_SPLIT_RATIO: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Reconstruction,
    Classification { n_classes: usize },
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Reconstruction => "reconstruction",
            Task::Classification { .. } => "classification",
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            Task::Reconstruction => None,
            Task::Classification { n_classes } => Some(*n_classes),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Transceiver<F: Scalar> {
    pub task: Task,
    pub theta: ParamStore<F>,
    pub phi: ParamStore<F>,
    pub codebook: Codebook<F>,
    /// Present iff the task is classification.
    pub gamma: Option<ParamStore<F>>,
    /// Symbol error rate this pair was trained under.
    pub trained_epsilon: f64,
    pub dataset_id: String,
    pub seed: u64,
}

/// Fresh transceiver with seeded initialization. A classification task gets
/// an (untrained) head so the gamma-presence invariant holds from birth.
pub fn build_transceiver<F: Scalar>(
    task: Task,
    input_shape: [usize; 3],
    seed: u64,
) -> Result<Transceiver<F>> {
    if input_shape != arch::input_shape() {
        return Err(Error::Shape(format!(
            "transceivers operate on {:?} inputs, got {input_shape:?}",
            arch::input_shape()
        )));
    }
    if let Task::Classification { n_classes } = task {
        if n_classes == 0 {
            return Err(Error::InvalidArgument("classifier needs classes".into()));
        }
    }
    let mut rng = rng::substream(seed, &[tag::INIT]);
    let theta = arch::encoder().init_params(&mut rng);
    let phi = arch::decoder().init_params(&mut rng);
    let codebook = Codebook::init(arch::CODEBOOK_K, arch::CODE_DIM, &mut rng);
    let gamma = task
        .n_classes()
        .map(|n| arch::classifier(n).init_params(&mut rng));
    Ok(Transceiver {
        task,
        theta,
        phi,
        codebook,
        gamma,
        trained_epsilon: 0.0,
        dataset_id: String::new(),
        seed,
    })
}

impl<F: Scalar> Transceiver<F> {
    /// Swap in a (pre-trained) head; the head must match the task width.
    pub fn set_gamma(&mut self, gamma: ParamStore<F>) -> Result<()> {
        let n = match self.task {
            Task::Classification { n_classes } => n_classes,
            Task::Reconstruction => {
                return Err(Error::Incompatible(
                    "reconstruction transceivers carry no task head".into(),
                ))
            }
        };
        let stack = arch::classifier(n);
        for (layer, spec) in &stack.layers {
            let Some((w_shape, b_shape)) = spec.param_shapes() else {
                continue;
            };
            for (name, shape) in [
                (stack.weight_name(layer), w_shape),
                (stack.bias_name(layer), b_shape),
            ] {
                match gamma.get(&name) {
                    Some(g) if g.shape() == shape => {}
                    Some(g) => {
                        return Err(Error::Incompatible(format!(
                            "head parameter `{name}` has shape {:?}, expected {shape:?}",
                            g.shape()
                        )))
                    }
                    None => {
                        return Err(Error::Incompatible(format!(
                            "head parameter `{name}` missing"
                        )))
                    }
                }
            }
        }
        self.gamma = Some(gamma);
        Ok(())
    }
}

/// Merge θ/φ/codebook into one trainable store (flat names are disjoint by
/// construction: `enc.*`, `dec.*`, `codebook`).
pub(crate) fn merge_params<F: Scalar>(
    theta: &ParamStore<F>,
    phi: &ParamStore<F>,
    codebook: &Codebook<F>,
) -> ParamStore<F> {
    let mut merged = theta.clone();
    merged.absorb(phi.clone()).expect("disjoint prefixes");
    merged.insert("codebook", codebook.entries().clone());
    merged
}

pub(crate) fn split_params<F: Scalar>(
    merged: &ParamStore<F>,
) -> Result<(ParamStore<F>, ParamStore<F>, Codebook<F>)> {
    let mut theta = ParamStore::new();
    let mut phi = ParamStore::new();
    let mut codebook = None;
    for (name, t) in merged.iter() {
        if name == "codebook" {
            codebook = Some(Codebook::new(t.clone())?);
        } else if name.starts_with("enc.") {
            theta.insert(name.clone(), t.clone());
        } else if name.starts_with("dec.") {
            phi.insert(name.clone(), t.clone());
        } else {
            return Err(Error::InvalidArgument(format!(
                "unexpected parameter `{name}` in merged store"
            )));
        }
    }
    Ok((
        theta,
        phi,
        codebook.ok_or_else(|| Error::InvalidArgument("missing codebook".into()))?,
    ))
}

#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_c: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub codebook_loss_target: CodebookLossTarget,
}

impl PretrainConfig {
    pub fn new(epsilon: f64, seed: u64) -> Self {
        PretrainConfig {
            epochs: 30,
            batch_size: 128,
            lr: 1e-3,
            lambda_c: 0.25,
            epsilon,
            seed,
            codebook_loss_target: CodebookLossTarget::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub train_loss: Vec<f64>,
    pub test_mse: Vec<f64>,
}

/// Joint θ/φ/codebook training under the pair's own channel. The dataset is
/// split 8:2 internally (seeded); the report carries per-epoch train loss
/// and held-out reconstruction MSE.
pub fn pretrain<F: Scalar>(
    trx: &mut Transceiver<F>,
    dataset: &Dataset<F>,
    cfg: &PretrainConfig,
) -> Result<PretrainReport> {
    let (train, test) = split_train_test(dataset, TRAIN_SPLIT_RATIO, cfg.seed)?;
    let mut merged = merge_params(&trx.theta, &trx.phi, &trx.codebook);
    let vq_cfg = VqTrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        lambda_c: cfg.lambda_c,
        epsilon: cfg.epsilon,
        seed: cfg.seed,
        codebook_loss_target: cfg.codebook_loss_target,
    };
    let mut test_mse = Vec::with_capacity(cfg.epochs);
    let train_loss = train_vqvae(
        &mut merged,
        &NameSet::new(),
        &train,
        &vq_cfg,
        |epoch, _, params| {
            let (theta, phi, cb) = split_params(params)?;
            let m = evaluate_parts(
                &theta,
                &cb,
                &phi,
                &cb,
                None,
                &test,
                cfg.epsilon,
                1,
                rng::derive_seed(cfg.seed, &[tag::EVAL, epoch as u64]),
            )?;
            test_mse.push(m.mse);
            Ok(())
        },
    )?;
    let (theta, phi, codebook) = split_params(&merged)?;
    trx.theta = theta;
    trx.phi = phi;
    trx.codebook = codebook;
    trx.trained_epsilon = cfg.epsilon;
    trx.dataset_id = dataset.source_id.clone();
    Ok(PretrainReport {
        train_loss,
        test_mse,
    })
}

#[derive(Debug, Clone)]
pub struct ClassifierReport {
    pub train_loss: Vec<f64>,
    pub holdout_top1: f64,
}

/// Train a task head on clean images from one or more sources (labels must
/// already live in the joint space). Returns the head and its held-out
/// accuracy.
pub fn pretrain_classifier<F: Scalar>(
    sources: &[&Dataset<F>],
    n_classes: usize,
    cfg: &HeadTrainConfig,
) -> Result<(ParamStore<F>, ClassifierReport)> {
    if sources.is_empty() {
        return Err(Error::Data("classifier needs at least one source".into()));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let shape = sources[0].sample_shape();
    if shape != arch::input_shape() {
        return Err(Error::Shape(format!(
            "classifier sources must be canonical {:?}, got {shape:?}",
            arch::input_shape()
        )));
    }
    for s in sources {
        if s.sample_shape() != shape {
            return Err(Error::Shape(
                "classifier sources must share one sample shape".into(),
            ));
        }
        images.extend_from_slice(s.images().data());
        labels.extend_from_slice(s.labels());
    }
    let n = labels.len();
    let joint = Dataset::new(
        Tensor::new(vec![n, shape[0], shape[1], shape[2]], images)?,
        labels,
        "joint",
        0,
        n_classes as u32,
    )?;
    let (train, holdout) = split_train_test(&joint, TRAIN_SPLIT_RATIO, cfg.seed)?;

    let mut gamma = arch::classifier(n_classes)
        .init_params::<F>(&mut rng::substream(cfg.seed, &[tag::INIT]));
    let train_loss = train_classifier(&mut gamma, n_classes, &train, cfg)?;

    let mut correct = 0usize;
    for chunk in (0..holdout.len()).collect::<Vec<_>>().chunks(256) {
        let x = holdout.batch(chunk);
        let logits = arch::classifier(n_classes).forward(&gamma, &x)?;
        for (row, &i) in logits
            .data()
            .chunks_exact(n_classes)
            .zip(chunk)
        {
            if argmax(row) == holdout.label(i) {
                correct += 1;
            }
        }
    }
    let holdout_top1 = correct as f64 / holdout.len() as f64;
    Ok((
        gamma,
        ClassifierReport {
            train_loss,
            holdout_top1,
        },
    ))
}

/// Lowest index wins ties, so an all-zeros input still yields a valid class.
pub fn argmax<F: Scalar>(row: &[F]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Per-pixel reconstruction MSE, averaged over samples × draws.
    pub mse: f64,
    /// Top-1 accuracy; present only for classification receivers.
    pub top1: Option<f64>,
    pub n_samples: usize,
    pub n_draws: usize,
}

/// Transmit every sample of `dataset` from `tx` to `rx` through a DMC at
/// `epsilon`, `n_draws` independent channel realizations per sample.
/// The channel stream for (sample i, draw j) depends only on (seed, i, j),
/// so results are independent of batching.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<F: Scalar>(
    tx: &Transceiver<F>,
    rx: &Transceiver<F>,
    dataset: &Dataset<F>,
    epsilon: f64,
    n_draws: usize,
    seed: u64,
) -> Result<Metrics> {
    evaluate_parts(
        &tx.theta,
        &tx.codebook,
        &rx.phi,
        &rx.codebook,
        rx.gamma.as_ref().map(|g| (g, rx.task)),
        dataset,
        epsilon,
        n_draws,
        seed,
    )
}

/// Evaluation over explicit parts (used mid-protocol before a Transceiver is
/// reassembled). `head`: (γ, task) of the receiving side.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_parts<F: Scalar>(
    theta: &ParamStore<F>,
    tx_codebook: &Codebook<F>,
    phi: &ParamStore<F>,
    rx_codebook: &Codebook<F>,
    head: Option<(&ParamStore<F>, Task)>,
    dataset: &Dataset<F>,
    epsilon: f64,
    n_draws: usize,
    seed: u64,
) -> Result<Metrics> {
    if dataset.is_empty() || n_draws == 0 {
        return Err(Error::Data("evaluation needs samples and draws".into()));
    }
    if dataset.sample_shape() != arch::input_shape() {
        return Err(Error::Shape(format!(
            "evaluation dataset must be canonical {:?}, got {:?}",
            arch::input_shape(),
            dataset.sample_shape()
        )));
    }
    if tx_codebook.k() != rx_codebook.k() || tx_codebook.dim() != rx_codebook.dim() {
        return Err(Error::Incompatible(format!(
            "codebooks disagree: tx {}x{}, rx {}x{}",
            tx_codebook.k(),
            tx_codebook.dim(),
            rx_codebook.k(),
            rx_codebook.dim()
        )));
    }
    let n_classes = match head {
        Some((gamma, Task::Classification { n_classes })) => {
            let span = dataset.label_offset + dataset.n_classes;
            if span as usize > n_classes {
                return Err(Error::Incompatible(format!(
                    "labels span {span} classes, head has {n_classes}"
                )));
            }
            let _ = gamma;
            Some(n_classes)
        }
        Some((_, Task::Reconstruction)) => {
            return Err(Error::Incompatible(
                "reconstruction task cannot carry a head".into(),
            ))
        }
        None => None,
    };

    let channel = DmcChannel::new(tx_codebook.k() as u32, epsilon)?;
    let encoder = arch::encoder();
    let decoder = arch::decoder();
    let grid = arch::GRID_H * arch::GRID_W;
    let px: usize = arch::input_shape().iter().product();

    let mut mse_sum = 0.0f64;
    let mut correct = 0usize;
    let idxs: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idxs.chunks(256) {
        let x = dataset.batch(chunk);
        let z = encoder.forward(theta, &x)?;
        let tx_indices = quantize_channel_fibers(&z, tx_codebook)?;
        for draw in 0..n_draws {
            // Per-sample channel streams keyed by global sample index.
            let mut rx_indices = Vec::with_capacity(tx_indices.len());
            for (k, &i) in chunk.iter().enumerate() {
                let mut ch_rng =
                    rng::substream(seed, &[tag::EVAL, i as u64, draw as u64]);
                for &sym in &tx_indices[k * grid..(k + 1) * grid] {
                    rx_indices.push(channel.transmit(sym, &mut ch_rng)?);
                }
            }
            let z_hat = gather_batch(rx_codebook, &rx_indices, chunk.len())?;
            let x_hat = decoder.forward(phi, &z_hat)?;
            for k in 0..chunk.len() {
                let a = &x.data()[k * px..(k + 1) * px];
                let b = &x_hat.data()[k * px..(k + 1) * px];
                let mut s = 0.0f64;
                for (&xa, &xb) in a.iter().zip(b) {
                    let d = xa.to_f64c() - xb.to_f64c();
                    s += d * d;
                }
                mse_sum += s / px as f64;
            }
            if let (Some(n_cls), Some((gamma, _))) = (n_classes, head) {
                let logits = arch::classifier(n_cls).forward(gamma, &x_hat)?;
                for (row, &i) in logits.data().chunks_exact(n_cls).zip(chunk) {
                    if argmax(row) == dataset.label(i) {
                        correct += 1;
                    }
                }
            }
        }
    }
    let denom = (dataset.len() * n_draws) as f64;
    Ok(Metrics {
        mse: mse_sum / denom,
        top1: n_classes.map(|_| correct as f64 / denom),
        n_samples: dataset.len(),
        n_draws,
    })
}

/// [B·grid] received symbols → [B, D, GH, GW] decoder input.
fn gather_batch<F: Scalar>(
    cb: &Codebook<F>,
    indices: &[u32],
    batch: usize,
) -> Result<Tensor<F>> {
    gather_channel_fibers(cb, indices, (batch, arch::GRID_H, arch::GRID_W))
}

/// One sample end-to-end: encode with the TX side, push the 49 symbols
/// through the channel, decode with the RX side. Returns the reconstruction
/// and, for classification receivers, the predicted class.
pub fn end_to_end<F: Scalar>(
    tx: &Transceiver<F>,
    rx: &Transceiver<F>,
    x: &Tensor<F>,
    epsilon: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Tensor<F>, Option<u32>)> {
    let expect: Vec<usize> = arch::input_shape().to_vec();
    if x.shape() != expect {
        return Err(Error::Shape(format!(
            "end_to_end takes one {expect:?} sample, got {:?}",
            x.shape()
        )));
    }
    let mut batched = x.reshape(vec![1, expect[0], expect[1], expect[2]])?;
    batched.clear_grad();
    let z = arch::encoder().forward(&tx.theta, &batched)?;
    let tx_indices = quantize_channel_fibers(&z, &tx.codebook)?;
    let channel = DmcChannel::new(tx.codebook.k() as u32, epsilon)?;
    let rx_indices = channel.transmit_all(&tx_indices, rng)?;
    let z_hat = gather_batch(&rx.codebook, &rx_indices, 1)?;
    let x_hat = arch::decoder().forward(&rx.phi, &z_hat)?;
    let pred = match (&rx.gamma, rx.task) {
        (Some(gamma), Task::Classification { n_classes }) => {
            let logits = arch::classifier(n_classes).forward(gamma, &x_hat)?;
            Some(argmax(logits.data()))
        }
        _ => None,
    };
    Ok((x_hat.reshape(expect)?, pred))
}
