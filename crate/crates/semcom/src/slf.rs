//! Four-step decoder re-alignment protocol: ① download the peer decoder
//! (and codebook) while measuring the cross symbol error rate, ② fine-tune
//! the virtual pair locally with the trailing ℓ decoder-side units frozen,
//! ③ upload only the unfrozen units, ④ transmit aligned.

use crate::arch;
use crate::data::{split_train_test, Dataset};
use crate::error::{Error, Result};
use crate::layers::{NameSet, ParamStore};
use crate::rng::{self, tag};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::{train_vqvae, CodebookLossTarget, VqTrainConfig};
use crate::transceiver::{
    evaluate_parts, merge_params, split_params, Metrics, Task, Transceiver, TRAIN_SPLIT_RATIO,
};
use crate::vq::Codebook;
use std::collections::BTreeMap;

/// Freeze order counts from the decoder's output layer back toward the
/// latent side, codebook last. Uniquely consistent with the upload-payload
/// sequence shrinking to a codebook-sized remainder at ℓ=3.
pub const FREEZE_ORDER: [&str; 4] = ["dec.conv3", "dec.conv2", "dec.conv1", "codebook"];
pub const MAX_FREEZE: usize = FREEZE_ORDER.len();

/// Flat parameter names belonging to one freezable unit.
pub fn unit_param_names(unit: &str) -> Vec<String> {
    if unit == "codebook" {
        vec!["codebook".to_string()]
    } else {
        vec![format!("{unit}.w"), format!("{unit}.b")]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreezeMask {
    ell: usize,
}

impl FreezeMask {
    pub fn new(ell: usize) -> Result<Self> {
        if ell > MAX_FREEZE {
            return Err(Error::InvalidArgument(format!(
                "freeze parameter {ell} outside 0..={MAX_FREEZE}"
            )));
        }
        Ok(FreezeMask { ell })
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn frozen_units(&self) -> &'static [&'static str] {
        &FREEZE_ORDER[..self.ell]
    }

    pub fn unfrozen_units(&self) -> &'static [&'static str] {
        &FREEZE_ORDER[self.ell..]
    }

    pub fn is_frozen(&self, unit: &str) -> bool {
        self.frozen_units().contains(&unit)
    }

    /// Flat parameter names of every frozen unit.
    pub fn frozen_param_names(&self) -> NameSet {
        self.frozen_units()
            .iter()
            .flat_map(|u| unit_param_names(u))
            .collect()
    }
}

/// Step ① result: deep copies of the receiver's decoder-side state. The
/// task head rides along read-only for validation forward passes and is
/// excluded from payload accounting.
#[derive(Debug, Clone)]
pub struct DecoderDownload<F: Scalar> {
    pub phi: ParamStore<F>,
    pub codebook: Codebook<F>,
    pub gamma: Option<ParamStore<F>>,
    pub task: Task,
    pub dl_bytes: u64,
}

pub fn download_decoder<F: Scalar>(rx: &Transceiver<F>) -> DecoderDownload<F> {
    let dl_bytes = rx.phi.byte_size() + rx.codebook.entries().numel() as u64 * F::BYTES;
    DecoderDownload {
        phi: rx.phi.clone(),
        codebook: rx.codebook.clone(),
        gamma: rx.gamma.clone(),
        task: rx.task,
        dl_bytes,
    }
}

#[derive(Debug, Clone)]
pub struct SlfConfig {
    pub ell: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_c: f64,
    /// Cross symbol error rate measured during the download step.
    pub measured_epsilon: f64,
    pub seed: u64,
    pub reinit_on_full_retrain: bool,
    pub codebook_loss_target: CodebookLossTarget,
}

impl SlfConfig {
    pub fn new(ell: usize, measured_epsilon: f64, seed: u64) -> Result<Self> {
        FreezeMask::new(ell)?;
        Ok(SlfConfig {
            ell,
            epochs: 10,
            batch_size: 128,
            lambda_c: 0.25,
            measured_epsilon,
            seed,
            reinit_on_full_retrain: true,
            codebook_loss_target: CodebookLossTarget::default(),
        })
    }

    /// Full retrain keeps the original rate; any partial freeze reduces it.
    pub fn learning_rate(&self) -> f64 {
        if self.ell == 0 {
            1e-3
        } else {
            1e-4
        }
    }
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome<F: Scalar> {
    pub theta: ParamStore<F>,
    pub phi: ParamStore<F>,
    pub codebook: Codebook<F>,
    pub train_loss: Vec<f64>,
    /// Held-out metrics of the virtual pair under the measured channel,
    /// one draw per sample, seeded by `cfg.seed`.
    pub val: Metrics,
}

/// Step ②: fine-tune the virtual pair [θ_i, Freeze_ℓ(φ_j), cb_j] on the
/// transmitter's local data under the measured cross-channel. θ is always
/// trainable; the head never receives gradients. ℓ=0 with the re-init flag
/// discards the downloaded decoder and codebook before training.
pub fn fine_tune<F: Scalar>(
    tx: &Transceiver<F>,
    download: &DecoderDownload<F>,
    dataset: &Dataset<F>,
    cfg: &SlfConfig,
) -> Result<FineTuneOutcome<F>> {
    let mask = FreezeMask::new(cfg.ell)?;
    let theta = tx.theta.clone();
    let (phi, codebook) = if cfg.ell == 0 && cfg.reinit_on_full_retrain {
        let mut r = rng::substream(cfg.seed, &[tag::REINIT]);
        (
            arch::decoder().init_params(&mut r),
            Codebook::init(arch::CODEBOOK_K, arch::CODE_DIM, &mut r),
        )
    } else {
        (download.phi.clone(), download.codebook.clone())
    };

    let (train, val_set) = split_train_test(dataset, TRAIN_SPLIT_RATIO, cfg.seed)?;
    let mut merged = merge_params(&theta, &phi, &codebook);
    let frozen = mask.frozen_param_names();
    let vq_cfg = VqTrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.learning_rate(),
        lambda_c: cfg.lambda_c,
        epsilon: cfg.measured_epsilon,
        seed: cfg.seed,
        codebook_loss_target: cfg.codebook_loss_target,
    };
    let train_loss = train_vqvae(&mut merged, &frozen, &train, &vq_cfg, |_, _, _| Ok(()))?;
    let (theta, phi, codebook) = split_params(&merged)?;

    let val = evaluate_parts(
        &theta,
        &codebook,
        &phi,
        &codebook,
        download.gamma.as_ref().map(|g| (g, download.task)),
        &val_set,
        cfg.measured_epsilon,
        1,
        cfg.seed,
    )?;
    Ok(FineTuneOutcome {
        theta,
        phi,
        codebook,
        train_loss,
        val,
    })
}

/// Step ③ payload: exactly the unfrozen decoder-side tensors.
#[derive(Debug, Clone)]
pub struct UploadPayload<F: Scalar> {
    pub tensors: BTreeMap<String, Tensor<F>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadReport {
    pub dl_bytes: u64,
    pub ul_bytes: u64,
    /// Bytes per freezable unit in freeze order; 0 where frozen.
    pub per_unit: Vec<(String, u64)>,
}

pub fn upload_payload<F: Scalar>(
    phi: &ParamStore<F>,
    codebook: &Codebook<F>,
    mask: &FreezeMask,
) -> Result<(UploadPayload<F>, PayloadReport)> {
    let dl_bytes = phi.byte_size() + codebook.entries().numel() as u64 * F::BYTES;
    let mut tensors = BTreeMap::new();
    let mut per_unit = Vec::with_capacity(FREEZE_ORDER.len());
    let mut ul_bytes = 0u64;
    for unit in FREEZE_ORDER {
        let mut bytes = 0u64;
        if !mask.is_frozen(unit) {
            for name in unit_param_names(unit) {
                let t = if name == "codebook" {
                    codebook.entries()
                } else {
                    phi.require(&name)?
                };
                bytes += t.numel() as u64 * F::BYTES;
                tensors.insert(name, t.clone());
            }
            ul_bytes += bytes;
        }
        per_unit.push((unit.to_string(), bytes));
    }
    Ok((
        UploadPayload { tensors },
        PayloadReport {
            dl_bytes,
            ul_bytes,
            per_unit,
        },
    ))
}

/// Step ③ receive side: replace exactly the uploaded units. Names and
/// shapes must match the receiver's existing decoder-side state.
pub fn apply_upload<F: Scalar>(
    rx: &Transceiver<F>,
    payload: &UploadPayload<F>,
) -> Result<Transceiver<F>> {
    let mut out = rx.clone();
    for (name, t) in &payload.tensors {
        if name == "codebook" {
            if t.shape() != out.codebook.entries().shape() {
                return Err(Error::Incompatible(format!(
                    "uploaded codebook shape {:?} does not match {:?}",
                    t.shape(),
                    out.codebook.entries().shape()
                )));
            }
            out.codebook = Codebook::new(t.clone())?;
        } else {
            let dst = out.phi.get_mut(name).ok_or_else(|| {
                Error::Incompatible(format!("receiver has no decoder parameter `{name}`"))
            })?;
            if t.shape() != dst.shape() {
                return Err(Error::Incompatible(format!(
                    "uploaded `{name}` shape {:?} does not match {:?}",
                    t.shape(),
                    dst.shape()
                )));
            }
            *dst = t.clone();
        }
    }
    Ok(out)
}

/// Step ④ transmitter state: its own encoder and codebook are replaced by
/// the fine-tuned ones; its local decoder is untouched.
pub fn aligned_transmitter<F: Scalar>(
    tx: &Transceiver<F>,
    outcome: &FineTuneOutcome<F>,
) -> Transceiver<F> {
    let mut out = tx.clone();
    out.theta = outcome.theta.clone();
    out.codebook = outcome.codebook.clone();
    out
}

/// Data dissimilarity mix: of N = min(|a|, |b|) samples, round((1−λ)·N)
/// are drawn from `a` and the rest from `b`, then shuffled. Labels keep
/// their absolute ids, so the result lives in the joint label space.
pub fn mix_datasets<F: Scalar>(
    a: &Dataset<F>,
    b: &Dataset<F>,
    lambda: f64,
    seed: u64,
) -> Result<Dataset<F>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "mixing weight {lambda} outside [0,1]"
        )));
    }
    if a.sample_shape() != b.sample_shape() {
        return Err(Error::Shape(format!(
            "cannot mix sample shapes {:?} and {:?}",
            a.sample_shape(),
            b.sample_shape()
        )));
    }
    let n = a.len().min(b.len());
    if n == 0 {
        return Err(Error::Data("cannot mix empty datasets".into()));
    }
    let n_a = ((1.0 - lambda) * n as f64).round() as usize;

    use rand::seq::SliceRandom;
    let mut idx_a: Vec<usize> = (0..a.len()).collect();
    idx_a.shuffle(&mut rng::substream(seed, &[tag::MIX, 0]));
    let mut idx_b: Vec<usize> = (0..b.len()).collect();
    idx_b.shuffle(&mut rng::substream(seed, &[tag::MIX, 1]));

    let mut picks: Vec<(bool, usize)> = idx_a[..n_a].iter().map(|&i| (false, i)).collect();
    picks.extend(idx_b[..n - n_a].iter().map(|&i| (true, i)));
    picks.shuffle(&mut rng::substream(seed, &[tag::MIX, 2]));

    let [c, h, w] = a.sample_shape();
    let px = c * h * w;
    let mut data = Vec::with_capacity(n * px);
    let mut labels = Vec::with_capacity(n);
    for &(from_b, i) in &picks {
        let src = if from_b { b } else { a };
        data.extend_from_slice(&src.images().data()[i * px..(i + 1) * px]);
        labels.push(src.label(i));
    }
    let lo = a.label_offset.min(b.label_offset);
    let hi = (a.label_offset + a.n_classes).max(b.label_offset + b.n_classes);
    Dataset::new(
        Tensor::new(vec![n, c, h, w], data)?,
        labels,
        format!("{}+{}", a.source_id, b.source_id),
        lo,
        hi - lo,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use crate::transceiver::build_transceiver;

    fn small_cfg(ell: usize, seed: u64) -> SlfConfig {
        let mut cfg = SlfConfig::new(ell, 0.1, seed).unwrap();
        cfg.epochs = 1;
        cfg.batch_size = 16;
        cfg
    }

    #[test]
    fn freeze_mask_order_and_bounds() {
        assert!(FreezeMask::new(5).is_err());
        let m = FreezeMask::new(2).unwrap();
        assert_eq!(m.frozen_units(), ["dec.conv3", "dec.conv2"]);
        assert_eq!(m.unfrozen_units(), ["dec.conv1", "codebook"]);
        let names = m.frozen_param_names();
        assert!(names.contains("dec.conv3.w"));
        assert!(names.contains("dec.conv2.b"));
        assert!(!names.contains("codebook"));
        assert!(FreezeMask::new(4).unwrap().is_frozen("codebook"));
    }

    #[test]
    fn learning_rate_rule() {
        assert_eq!(small_cfg(0, 1).learning_rate(), 1e-3);
        for ell in 1..=4 {
            assert_eq!(small_cfg(ell, 1).learning_rate(), 1e-4);
        }
    }

    #[test]
    fn download_is_a_deep_copy_with_byte_accounting() {
        let rx: Transceiver<f32> =
            build_transceiver(Task::Reconstruction, arch::input_shape(), 7).unwrap();
        let mut dl = download_decoder(&rx);
        // φ 13105 params + 256 codebook entries, 4 bytes each.
        assert_eq!(dl.dl_bytes, 4 * (13105 + 256));
        dl.phi.get_mut("dec.conv1.w").unwrap().data_mut()[0] = 999.0;
        assert_ne!(
            rx.phi.get("dec.conv1.w").unwrap().data()[0],
            999.0,
            "download must not alias receiver state"
        );
    }

    #[test]
    fn upload_payload_bytes_per_ell() {
        let rx: Transceiver<f32> =
            build_transceiver(Task::Reconstruction, arch::input_shape(), 7).unwrap();
        let sizes: Vec<u64> = (0..=4)
            .map(|ell| {
                let mask = FreezeMask::new(ell).unwrap();
                upload_payload(&rx.phi, &rx.codebook, &mask).unwrap().1.ul_bytes
            })
            .collect();
        // Unit param counts: dec.conv1 4640, dec.conv2 8208, dec.conv3 257,
        // codebook 256.
        assert_eq!(sizes, [53444, 52416, 19584, 1024, 0]);
        let (payload, report) = upload_payload(
            &rx.phi,
            &rx.codebook,
            &FreezeMask::new(4).unwrap(),
        )
        .unwrap();
        assert!(payload.tensors.is_empty());
        assert_eq!(report.dl_bytes, 53444);
        assert!(report.per_unit.iter().all(|(_, b)| *b == 0));
    }

    #[test]
    fn apply_upload_replaces_exactly_the_uploaded_units() {
        let rx: Transceiver<f32> =
            build_transceiver(Task::Reconstruction, arch::input_shape(), 7).unwrap();
        let donor: Transceiver<f32> =
            build_transceiver(Task::Reconstruction, arch::input_shape(), 8).unwrap();
        let mask = FreezeMask::new(2).unwrap();
        let (payload, _) = upload_payload(&donor.phi, &donor.codebook, &mask).unwrap();
        let rx2 = apply_upload(&rx, &payload).unwrap();
        // Unfrozen units replaced...
        assert_eq!(rx2.phi.get("dec.conv1.w"), donor.phi.get("dec.conv1.w"));
        assert_eq!(rx2.codebook.entries(), donor.codebook.entries());
        // ...frozen ones untouched.
        assert_eq!(rx2.phi.get("dec.conv3.w"), rx.phi.get("dec.conv3.w"));
        assert_eq!(rx2.phi.get("dec.conv2.b"), rx.phi.get("dec.conv2.b"));
        // Empty payload is the identity.
        let empty = UploadPayload {
            tensors: BTreeMap::new(),
        };
        let same = apply_upload(&rx, &empty).unwrap();
        assert_eq!(same.phi, rx.phi);
    }

    #[test]
    fn apply_upload_rejects_unknown_and_misshapen() {
        let rx: Transceiver<f32> =
            build_transceiver(Task::Reconstruction, arch::input_shape(), 7).unwrap();
        let mut bogus = BTreeMap::new();
        bogus.insert("dec.conv9.w".to_string(), Tensor::<f32>::zeros(&[1]));
        assert!(apply_upload(&rx, &UploadPayload { tensors: bogus }).is_err());
        let mut wrong = BTreeMap::new();
        wrong.insert("dec.conv1.w".to_string(), Tensor::<f32>::zeros(&[1, 1]));
        assert!(apply_upload(&rx, &UploadPayload { tensors: wrong }).is_err());
    }

    #[test]
    fn fine_tune_freezes_bits_and_closes_the_loop() {
        let ds = synth::glyphs::<f32>(80, 21).unwrap();
        let tx: Transceiver<f32> =
            build_transceiver(Task::Reconstruction, arch::input_shape(), 1).unwrap();
        let rx: Transceiver<f32> =
            build_transceiver(Task::Reconstruction, arch::input_shape(), 2).unwrap();
        let dl = download_decoder(&rx);
        let cfg = small_cfg(2, 5);
        let out = fine_tune(&tx, &dl, &ds, &cfg).unwrap();

        for unit in FreezeMask::new(2).unwrap().frozen_units() {
            for name in unit_param_names(unit) {
                let a: Vec<u32> = dl
                    .phi
                    .get(&name)
                    .unwrap()
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect();
                let b: Vec<u32> = out
                    .phi
                    .get(&name)
                    .unwrap()
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect();
                assert_eq!(a, b, "{name} moved");
            }
        }

        // Protocol closure: upload, apply, evaluate == local validation.
        let mask = FreezeMask::new(cfg.ell).unwrap();
        let (payload, _) = upload_payload(&out.phi, &out.codebook, &mask).unwrap();
        let rx2 = apply_upload(&rx, &payload).unwrap();
        let tx2 = aligned_transmitter(&tx, &out);
        let (_, val_set) = split_train_test(&ds, TRAIN_SPLIT_RATIO, cfg.seed).unwrap();
        let m = crate::transceiver::evaluate(
            &tx2,
            &rx2,
            &val_set,
            cfg.measured_epsilon,
            1,
            cfg.seed,
        )
        .unwrap();
        assert_eq!(m.mse.to_bits(), out.val.mse.to_bits());
    }

    #[test]
    fn full_retrain_reinitializes_downloaded_state() {
        let ds = synth::glyphs::<f32>(40, 22).unwrap();
        let tx: Transceiver<f32> =
            build_transceiver(Task::Reconstruction, arch::input_shape(), 1).unwrap();
        let rx: Transceiver<f32> =
            build_transceiver(Task::Reconstruction, arch::input_shape(), 2).unwrap();
        let dl = download_decoder(&rx);
        let mut cfg = small_cfg(0, 5);
        let out_reinit = fine_tune(&tx, &dl, &ds, &cfg).unwrap();
        cfg.reinit_on_full_retrain = false;
        let out_warm = fine_tune(&tx, &dl, &ds, &cfg).unwrap();
        assert_ne!(
            out_reinit.phi.get("dec.conv1.w").unwrap().data(),
            out_warm.phi.get("dec.conv1.w").unwrap().data(),
            "re-init must change the starting point"
        );
    }

    #[test]
    fn mix_endpoints_and_counts() {
        let a = synth::glyphs::<f32>(30, 1).unwrap();
        let b = synth::textures::<f32>(40, 2).unwrap();
        let b = crate::data::canonicalize(&b).unwrap().with_label_offset(10);
        let pure_a = mix_datasets(&a, &b, 0.0, 9).unwrap();
        assert_eq!(pure_a.len(), 30);
        assert!(pure_a.labels().iter().all(|&l| l < 10));
        let pure_b = mix_datasets(&a, &b, 1.0, 9).unwrap();
        assert!(pure_b.labels().iter().all(|&l| (10..20).contains(&l)));
        let half = mix_datasets(&a, &b, 0.5, 9).unwrap();
        let from_a = half.labels().iter().filter(|&&l| l < 10).count();
        assert_eq!(from_a, 15);
        assert_eq!(half.n_classes, 20);
        assert!(mix_datasets(&a, &b, 1.5, 9).is_err());
    }
}
