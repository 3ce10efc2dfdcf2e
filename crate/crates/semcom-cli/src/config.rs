//! Run configuration: one JSON document per invocation. Unknown keys are
//! rejected (typo safety), so every knob that parses is a knob that acts.
//!
//! Variant-bearing fields use externally tagged JSON so that strictness
//! reaches inside the variants, e.g.
//!   "dataset": {"glyphs": {"n": 2000, "seed": 7}}
//!   "task": {"classification": {"n_classes": 20}}

use std::path::{Path, PathBuf};

use serde::Deserialize;

use semcom::cost::{ComputeParams, LinkParams};
use semcom::slf::MAX_FREEZE;
use semcom::transceiver::Task;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Free-form run label; first CSV column of every metrics row.
    pub scenario: String,
    pub task: TaskSpec,
    #[serde(default = "d_out_dir")]
    pub out_dir: PathBuf,
    /// Base seed for evaluation streams and as the default session seed.
    #[serde(default)]
    pub seed: u64,
    /// Cap applied to every dataset after loading (handy for smoke runs).
    #[serde(default)]
    pub max_samples: Option<usize>,
    pub transceivers: Vec<TrxSpec>,
    #[serde(default)]
    pub pretrain: PretrainSpec,
    #[serde(default)]
    pub head: HeadSpec,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub slf: Option<SlfSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub cost: Option<CostSpec>,
    #[serde(default)]
    pub links: LinksSpec,
    #[serde(default)]
    pub compute: ComputeSpec,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpec {
    Reconstruction,
    Classification(ClassificationSpec),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationSpec {
    pub n_classes: usize,
}

impl TaskSpec {
    pub fn to_task(self) -> Task {
        match self {
            TaskSpec::Reconstruction => Task::Reconstruction,
            TaskSpec::Classification(c) => Task::Classification {
                n_classes: c.n_classes,
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrxSpec {
    pub id: String,
    pub dataset: DatasetSpec,
    /// Symbol error rate of this transceiver's pre-training environment.
    pub epsilon: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    Idx(IdxSpec),
    Cifar(CifarSpec),
    Glyphs(GlyphsSpec),
    Textures(TexturesSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSpec {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub id: String,
    #[serde(default)]
    pub label_offset: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CifarSpec {
    pub paths: Vec<PathBuf>,
    pub id: String,
    #[serde(default)]
    pub label_offset: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlyphsSpec {
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub label_offset: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TexturesSpec {
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub label_offset: u32,
}

impl DatasetSpec {
    pub fn label_offset(&self) -> u32 {
        match self {
            DatasetSpec::Idx(s) => s.label_offset,
            DatasetSpec::Cifar(s) => s.label_offset,
            DatasetSpec::Glyphs(s) => s.label_offset,
            DatasetSpec::Textures(s) => s.label_offset,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSpec {
    #[serde(default = "d_epochs_30")]
    pub epochs: usize,
    #[serde(default = "d_batch_128")]
    pub batch_size: usize,
    #[serde(default = "d_lr_1e3")]
    pub lr: f64,
    #[serde(default = "d_lambda_c")]
    pub lambda_c: f64,
}

impl Default for PretrainSpec {
    fn default() -> Self {
        PretrainSpec {
            epochs: d_epochs_30(),
            batch_size: d_batch_128(),
            lr: d_lr_1e3(),
            lambda_c: d_lambda_c(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    #[serde(default = "d_epochs_10")]
    pub epochs: usize,
    #[serde(default = "d_batch_128")]
    pub batch_size: usize,
    #[serde(default = "d_lr_1e3")]
    pub lr: f64,
}

impl Default for HeadSpec {
    fn default() -> Self {
        HeadSpec {
            epochs: d_epochs_10(),
            batch_size: d_batch_128(),
            lr: d_lr_1e3(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    /// Channel realizations averaged per test image.
    #[serde(default = "d_one")]
    pub n_draws: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec { n_draws: d_one() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlfSpec {
    pub tx: String,
    pub rx: String,
    pub ell: usize,
    #[serde(default = "d_epochs_10")]
    pub epochs: usize,
    #[serde(default = "d_batch_128")]
    pub batch_size: usize,
    #[serde(default = "d_lambda_c")]
    pub lambda_c: f64,
    /// Cross symbol error rate measured at download; defaults to the
    /// transmitter's pre-training epsilon.
    #[serde(default)]
    pub measured_epsilon: Option<f64>,
    /// Source-dissimilarity weight of the fine-tuning data.
    #[serde(default)]
    pub lambda13: f64,
    /// Transceiver whose dataset supplies the mixed-in fraction.
    #[serde(default)]
    pub mix_with: Option<String>,
    #[serde(default = "d_true")]
    pub reinit_on_full_retrain: bool,
    /// Session seed; defaults to the top-level seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub tx: String,
    pub rx: String,
    #[serde(default)]
    pub mix_with: Option<String>,
    #[serde(default = "d_epsilon_grid")]
    pub epsilon_grid: Vec<f64>,
    #[serde(default = "d_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "d_ell_grid")]
    pub ell_grid: Vec<usize>,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "d_epochs_10")]
    pub epochs: usize,
    #[serde(default = "d_batch_128")]
    pub batch_size: usize,
    #[serde(default = "d_lambda_c")]
    pub lambda_c: f64,
    #[serde(default = "d_true")]
    pub reinit_on_full_retrain: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostSpec {
    /// Published payload/FLOP figures in, latencies out.
    Explicit(ExplicitCostSpec),
    /// Account the resident architecture per freeze level.
    Measured(MeasuredCostSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitCostSpec {
    pub rows: Vec<CostRowSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostRowSpec {
    pub label: String,
    pub ell: usize,
    pub dl_bytes: u64,
    pub flops: f64,
    pub ul_bytes: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredCostSpec {
    pub n_samples: u64,
    #[serde(default = "d_epochs_10_u64")]
    pub epochs: u64,
    #[serde(default)]
    pub include_head_forward: bool,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinksSpec {
    #[serde(default = "d_two")]
    pub ul_mbps: f64,
    #[serde(default = "d_two")]
    pub dl_mbps: f64,
}

impl Default for LinksSpec {
    fn default() -> Self {
        LinksSpec {
            ul_mbps: d_two(),
            dl_mbps: d_two(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeSpec {
    #[serde(default = "d_thirty")]
    pub tflops: f64,
}

impl Default for ComputeSpec {
    fn default() -> Self {
        ComputeSpec { tflops: d_thirty() }
    }
}

fn d_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn d_one() -> usize {
    1
}
fn d_two() -> f64 {
    2.0
}
fn d_thirty() -> f64 {
    30.0
}
fn d_true() -> bool {
    true
}
fn d_epochs_30() -> usize {
    30
}
fn d_epochs_10() -> usize {
    10
}
fn d_epochs_10_u64() -> u64 {
    10
}
fn d_batch_128() -> usize {
    128
}
fn d_lr_1e3() -> f64 {
    1e-3
}
fn d_lambda_c() -> f64 {
    0.25
}
fn d_epsilon_grid() -> Vec<f64> {
    vec![1e-5, 1e-3, 1e-2, 1e-1]
}
fn d_lambda_grid() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}
fn d_ell_grid() -> Vec<usize> {
    vec![0, 1, 2, 3, 4]
}
fn d_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

/// Command-line flags that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub max_samples: Option<usize>,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if let Some(out) = &overrides.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(max) = overrides.max_samples {
        cfg.max_samples = Some(max);
    }
    validate(&cfg)?;
    Ok(cfg)
}

/// Parse and validate a config held in memory (no overrides).
pub fn parse_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
    validate(&cfg)?;
    Ok(cfg)
}

/// CSV field sanity: ids end up as raw cells, so they must not be able to
/// change the column structure.
fn check_id(what: &str, id: &str) -> Result<()> {
    if id.is_empty() {
        return Err(CliError::config(format!("{what} must not be empty")));
    }
    if id.contains([',', '\n', '\r']) {
        return Err(CliError::config(format!(
            "{what} `{id}` contains a comma or newline"
        )));
    }
    Ok(())
}

fn check_epsilon(what: &str, eps: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eps) || !eps.is_finite() {
        return Err(CliError::config(format!(
            "{what} must lie in [0, 1], got {eps}"
        )));
    }
    Ok(())
}

fn check_lambda(what: &str, lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) || !lambda.is_finite() {
        return Err(CliError::config(format!(
            "{what} must lie in [0, 1], got {lambda}"
        )));
    }
    Ok(())
}

fn check_ell(what: &str, ell: usize) -> Result<()> {
    if ell > MAX_FREEZE {
        return Err(CliError::config(format!(
            "{what} must lie in [0, {MAX_FREEZE}], got {ell}"
        )));
    }
    Ok(())
}

fn validate(cfg: &ExperimentConfig) -> Result<()> {
    check_id("scenario", &cfg.scenario)?;
    // An empty transceiver list is fine for pure cost runs; commands that
    // iterate transceivers reject it themselves.
    for (i, t) in cfg.transceivers.iter().enumerate() {
        check_id(&format!("transceivers[{i}].id"), &t.id)?;
        check_epsilon(&format!("transceivers[{i}].epsilon"), t.epsilon)?;
    }
    for i in 1..cfg.transceivers.len() {
        let id = &cfg.transceivers[i].id;
        if cfg.transceivers[..i].iter().any(|t| &t.id == id) {
            return Err(CliError::config(format!("duplicate transceiver id `{id}`")));
        }
    }
    if let TaskSpec::Classification(c) = cfg.task {
        if c.n_classes == 0 {
            return Err(CliError::config("task.classification.n_classes must be ≥ 1"));
        }
    }
    if cfg.pretrain.epochs == 0 || cfg.pretrain.batch_size == 0 {
        return Err(CliError::config("pretrain epochs/batch_size must be ≥ 1"));
    }
    if cfg.head.epochs == 0 || cfg.head.batch_size == 0 {
        return Err(CliError::config("head epochs/batch_size must be ≥ 1"));
    }
    if cfg.eval.n_draws == 0 {
        return Err(CliError::config("eval.n_draws must be ≥ 1"));
    }
    if cfg.links.ul_mbps <= 0.0 || cfg.links.dl_mbps <= 0.0 {
        return Err(CliError::config("link rates must be positive"));
    }
    if cfg.compute.tflops <= 0.0 {
        return Err(CliError::config("compute.tflops must be positive"));
    }

    let has_trx = |id: &str| cfg.transceivers.iter().any(|t| t.id == id);
    if let Some(slf) = &cfg.slf {
        for (what, id) in [("slf.tx", &slf.tx), ("slf.rx", &slf.rx)] {
            if !has_trx(id) {
                return Err(CliError::config(format!("{what} `{id}` is not a transceiver id")));
            }
        }
        check_ell("slf.ell", slf.ell)?;
        check_lambda("slf.lambda13", slf.lambda13)?;
        if let Some(eps) = slf.measured_epsilon {
            check_epsilon("slf.measured_epsilon", eps)?;
        }
        if slf.epochs == 0 || slf.batch_size == 0 {
            return Err(CliError::config("slf epochs/batch_size must be ≥ 1"));
        }
        match &slf.mix_with {
            Some(id) if !has_trx(id) => {
                return Err(CliError::config(format!(
                    "slf.mix_with `{id}` is not a transceiver id"
                )));
            }
            None if slf.lambda13 > 0.0 => {
                return Err(CliError::config("slf.lambda13 > 0 requires slf.mix_with"));
            }
            _ => {}
        }
    }
    if let Some(sw) = &cfg.sweep {
        for (what, id) in [("sweep.tx", &sw.tx), ("sweep.rx", &sw.rx)] {
            if !has_trx(id) {
                return Err(CliError::config(format!("{what} `{id}` is not a transceiver id")));
            }
        }
        if sw.epsilon_grid.is_empty()
            || sw.lambda_grid.is_empty()
            || sw.ell_grid.is_empty()
            || sw.seeds.is_empty()
        {
            return Err(CliError::config("sweep grids and seeds must not be empty"));
        }
        for &eps in &sw.epsilon_grid {
            check_epsilon("sweep.epsilon_grid entry", eps)?;
        }
        for &l in &sw.lambda_grid {
            check_lambda("sweep.lambda_grid entry", l)?;
        }
        for &e in &sw.ell_grid {
            check_ell("sweep.ell_grid entry", e)?;
        }
        if sw.epochs == 0 || sw.batch_size == 0 {
            return Err(CliError::config("sweep epochs/batch_size must be ≥ 1"));
        }
        match &sw.mix_with {
            Some(id) if !has_trx(id) => {
                return Err(CliError::config(format!(
                    "sweep.mix_with `{id}` is not a transceiver id"
                )));
            }
            None if sw.lambda_grid.iter().any(|&l| l > 0.0) => {
                return Err(CliError::config(
                    "sweep.lambda_grid has entries > 0 but no sweep.mix_with",
                ));
            }
            _ => {}
        }
    }
    if let Some(CostSpec::Explicit(ex)) = &cfg.cost {
        if ex.rows.is_empty() {
            return Err(CliError::config("cost.explicit.rows must not be empty"));
        }
        for (i, row) in ex.rows.iter().enumerate() {
            check_id(&format!("cost.explicit.rows[{i}].label"), &row.label)?;
            check_ell(&format!("cost.explicit.rows[{i}].ell"), row.ell)?;
            if !row.flops.is_finite() || row.flops < 0.0 {
                return Err(CliError::config(format!(
                    "cost.explicit.rows[{i}].flops must be finite and ≥ 0"
                )));
            }
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn trx(&self, id: &str) -> Result<&TrxSpec> {
        self.transceivers
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| CliError::config(format!("unknown transceiver id `{id}`")))
    }

    pub fn link_params(&self) -> Result<LinkParams> {
        Ok(LinkParams::new(
            self.links.ul_mbps * 1e6,
            self.links.dl_mbps * 1e6,
        )?)
    }

    pub fn compute_params(&self) -> Result<ComputeParams> {
        Ok(ComputeParams::new(self.compute.tflops * 1e12)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "scenario": "demo",
            "task": "reconstruction",
            "transceivers": [
                {"id": "trx1", "dataset": {"glyphs": {"n": 64, "seed": 1}}, "epsilon": 1e-5, "seed": 11}
            ]
        })
    }

    fn parse(v: serde_json::Value) -> Result<ExperimentConfig> {
        parse_str(&serde_json::to_string(&v).unwrap())
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse(minimal_json()).unwrap();
        assert_eq!(cfg.out_dir, PathBuf::from("out"));
        assert_eq!(cfg.pretrain.epochs, 30);
        assert_eq!(cfg.head.epochs, 10);
        assert_eq!(cfg.eval.n_draws, 1);
        assert_eq!(cfg.links.ul_mbps, 2.0);
        assert_eq!(cfg.compute.tflops, 30.0);
    }

    #[test]
    fn unknown_top_level_key_is_named() {
        let mut v = minimal_json();
        v["bogus_knob"] = serde_json::json!(1);
        let err = parse(v).unwrap_err();
        assert_eq!(err.category, crate::Category::Config);
        assert!(err.to_string().contains("bogus_knob"), "{err}");
    }

    #[test]
    fn unknown_nested_key_is_named() {
        let mut v = minimal_json();
        v["transceivers"][0]["dataset"] = serde_json::json!({
            "glyphs": {"n": 64, "seed": 1, "typo_field": 3}
        });
        let err = parse(v).unwrap_err();
        assert!(err.to_string().contains("typo_field"), "{err}");
    }

    #[test]
    fn lambda_without_mix_source_is_rejected() {
        let mut v = minimal_json();
        v["slf"] = serde_json::json!({"tx": "trx1", "rx": "trx1", "ell": 0, "lambda13": 0.5});
        let err = parse(v).unwrap_err();
        assert!(err.to_string().contains("mix_with"), "{err}");
    }

    #[test]
    fn unknown_trx_reference_is_rejected() {
        let mut v = minimal_json();
        v["slf"] = serde_json::json!({"tx": "trx1", "rx": "ghost", "ell": 0});
        let err = parse(v).unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
    }

    #[test]
    fn comma_in_scenario_is_rejected() {
        let mut v = minimal_json();
        v["scenario"] = serde_json::json!("a,b");
        assert!(parse(v).is_err());
    }
}
