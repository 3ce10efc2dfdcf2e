//! Subcommand implementations. Each takes a shared [`Ctx`] built from the
//! (override-applied) config and writes its artifacts under `out_dir`.

pub mod cost;
pub mod eval_cross;
pub mod pretrain;
pub mod slf;
pub mod sweep;

use std::path::{Path, PathBuf};

use semcom::arch;
use semcom::data::{canonicalize, load_cifar_bin, load_idx, split_train_test, Dataset};
use semcom::synth;
use semcom::transceiver::{Task, Transceiver, TRAIN_SPLIT_RATIO};

use crate::checkpoint;
use crate::config::{DatasetSpec, ExperimentConfig, TrxSpec};
use crate::error::{CliError, Result};

pub struct Ctx {
    pub cfg: ExperimentConfig,
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(&cfg.out_dir)
            .map_err(|e| CliError::io(cfg.out_dir.display(), e))?;
        Ok(Ctx { cfg })
    }

    pub fn out(&self) -> &Path {
        &self.cfg.out_dir
    }

    pub fn task(&self) -> Task {
        self.cfg.task.to_task()
    }

    pub fn ckpt_path(&self, id: &str) -> PathBuf {
        self.out().join(format!("{id}.ckpt"))
    }

    pub fn load_trx(&self, id: &str) -> Result<Transceiver<f32>> {
        self.cfg.trx(id)?; // id must be configured, not just on disk
        checkpoint::load(&self.ckpt_path(id))
    }

    /// Load, canonicalize to the resident input shape, rebase labels, and
    /// apply the sample cap.
    pub fn load_dataset(&self, spec: &DatasetSpec) -> Result<Dataset<f32>> {
        let ds: Dataset<f32> = match spec {
            DatasetSpec::Idx(s) => load_idx(&s.images, &s.labels, &s.id)?,
            DatasetSpec::Cifar(s) => load_cifar_bin(&s.paths, &s.id)?,
            DatasetSpec::Glyphs(s) => synth::glyphs(s.n, s.seed)?,
            DatasetSpec::Textures(s) => synth::textures(s.n, s.seed)?,
        };
        let ds = if ds.sample_shape() == arch::input_shape() {
            ds
        } else {
            canonicalize(&ds)?
        };
        let ds = ds.with_label_offset(spec.label_offset());
        Ok(match self.cfg.max_samples {
            Some(n) => ds.take(n),
            None => ds,
        })
    }

    /// The pretraining split of a transceiver's dataset: seeded by the
    /// transceiver, so the test side is exactly what its own pretraining
    /// held out.
    pub fn splits(&self, spec: &TrxSpec) -> Result<(Dataset<f32>, Dataset<f32>)> {
        let ds = self.load_dataset(&spec.dataset)?;
        Ok(split_train_test(&ds, TRAIN_SPLIT_RATIO, spec.seed)?)
    }
}
