//! `slf`: one recovery session — download the receiver's decoder, fine-tune
//! the virtual pair with the configured freeze level on the transmitter's
//! (possibly mixed) data, upload the unfrozen units, and report post-SLF
//! metrics plus the modeled recovery time.

use semcom::cost::{
    fine_tune_flops, recovery_time, transceiver_unit_costs, ComputeParams, CostBreakdown,
    LinkParams,
};
use semcom::data::Dataset;
use semcom::layers::NameSet;
use semcom::slf::{
    aligned_transmitter, apply_upload, download_decoder, fine_tune, mix_datasets, upload_payload,
    FreezeMask, PayloadReport, SlfConfig,
};
use semcom::transceiver::{evaluate, Metrics, Task, Transceiver, TRAIN_SPLIT_RATIO};

use crate::error::{CliError, Result};
use crate::metrics_csv::{append_row, ensure_header, MetricsRow};
use crate::{checkpoint, config};

use super::Ctx;

/// Everything one session needs; sweep cells reuse this with grid values.
pub struct Session<'a> {
    pub tx: &'a Transceiver<f32>,
    pub rx: &'a Transceiver<f32>,
    /// Transmitter-side pretraining split of its local data.
    pub train: &'a Dataset<f32>,
    pub test: &'a Dataset<f32>,
    /// (train, test) of the dissimilar source mixed in when `lambda13 > 0`.
    pub mix: Option<(&'a Dataset<f32>, &'a Dataset<f32>)>,
    pub ell: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_c: f64,
    pub measured_epsilon: f64,
    pub lambda13: f64,
    pub seed: u64,
    pub reinit_on_full_retrain: bool,
    pub n_draws: usize,
}

pub struct SessionOutput {
    /// Transmitter-side validation metric of the virtual pair (step ②).
    pub val: Metrics,
    /// Post-upload metrics of the real pair on held-out data (step ④).
    pub post: Metrics,
    pub payload: PayloadReport,
    pub flops: f64,
    pub cost: CostBreakdown,
    pub tx_aligned: Transceiver<f32>,
    pub rx_updated: Transceiver<f32>,
}

pub fn run_session(
    s: &Session<'_>,
    links: &LinkParams,
    compute: &ComputeParams,
) -> Result<SessionOutput> {
    let (ft_data, eval_data);
    if s.lambda13 > 0.0 {
        let (mix_train, mix_test) = s.mix.ok_or_else(|| {
            CliError::config("lambda13 > 0 requires a mix-in source")
        })?;
        ft_data = mix_datasets(s.train, mix_train, s.lambda13, s.seed)?;
        eval_data = mix_datasets(s.test, mix_test, s.lambda13, s.seed)?;
    } else {
        ft_data = s.train.clone();
        eval_data = s.test.clone();
    }

    let download = download_decoder(s.rx);
    let mut cfg = SlfConfig::new(s.ell, s.measured_epsilon, s.seed)?;
    cfg.epochs = s.epochs;
    cfg.batch_size = s.batch_size;
    cfg.lambda_c = s.lambda_c;
    cfg.reinit_on_full_retrain = s.reinit_on_full_retrain;

    let outcome = fine_tune(s.tx, &download, &ft_data, &cfg)?;
    let mask = FreezeMask::new(s.ell)?;
    let (payload, report) = upload_payload(&outcome.phi, &outcome.codebook, &mask)?;
    let rx_updated = apply_upload(s.rx, &payload)?;
    let tx_aligned = aligned_transmitter(s.tx, &outcome);

    let post = evaluate(
        &tx_aligned,
        &rx_updated,
        &eval_data,
        s.measured_epsilon,
        s.n_draws,
        s.seed,
    )?;

    let unit_costs = transceiver_unit_costs(s.rx.task.n_classes())?;
    let frozen: NameSet = mask
        .frozen_units()
        .iter()
        .map(|u| u.to_string())
        .collect();
    let n_ft = (TRAIN_SPLIT_RATIO * ft_data.len() as f64).round() as u64;
    let include_head = matches!(s.rx.task, Task::Classification { .. });
    let flops = fine_tune_flops(&unit_costs, &frozen, n_ft, s.epochs as u64, include_head);
    let cost = recovery_time(download.dl_bytes, flops, report.ul_bytes, links, compute);

    Ok(SessionOutput {
        val: outcome.val,
        post,
        payload: report,
        flops,
        cost,
        tx_aligned,
        rx_updated,
    })
}

pub fn session_row(
    scenario: &str,
    tx_id: &str,
    rx_id: &str,
    s: &Session<'_>,
    out: &SessionOutput,
) -> MetricsRow {
    MetricsRow {
        scenario: scenario.to_string(),
        tx_id: tx_id.to_string(),
        rx_id: rx_id.to_string(),
        epsilon_cross: Some(s.measured_epsilon),
        lambda13: Some(s.lambda13),
        ell: Some(s.ell as u64),
        seed: Some(s.seed),
        mse: Some(out.post.mse),
        top1: out.post.top1,
        dl_bytes: Some(out.payload.dl_bytes),
        ul_bytes: Some(out.payload.ul_bytes),
        flops: Some(out.flops),
        dl_s: Some(out.cost.dl_latency_s),
        ft_s: Some(out.cost.ft_latency_s),
        ul_s: Some(out.cost.ul_latency_s),
        recovery_s: Some(out.cost.recovery_time_s),
    }
}

pub fn run(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let spec = cfg
        .slf
        .as_ref()
        .ok_or_else(|| CliError::config("this command needs an `slf` config section"))?;

    let tx_spec = cfg.trx(&spec.tx)?;
    let tx = ctx.load_trx(&spec.tx)?;
    let rx = ctx.load_trx(&spec.rx)?;
    let (train, test) = ctx.splits(tx_spec)?;
    let mix = load_mix(ctx, spec.mix_with.as_deref())?;

    let session = Session {
        tx: &tx,
        rx: &rx,
        train: &train,
        test: &test,
        mix: mix.as_ref().map(|(a, b)| (a, b)),
        ell: spec.ell,
        epochs: spec.epochs,
        batch_size: spec.batch_size,
        lambda_c: spec.lambda_c,
        measured_epsilon: spec.measured_epsilon.unwrap_or(tx_spec.epsilon),
        lambda13: spec.lambda13,
        seed: spec.seed.unwrap_or(cfg.seed),
        reinit_on_full_retrain: spec.reinit_on_full_retrain,
        n_draws: cfg.eval.n_draws,
    };
    let out = run_session(&session, &cfg.link_params()?, &cfg.compute_params()?)?;

    let csv = ctx.out().join("slf.csv");
    ensure_header(&csv)?;
    append_row(&csv, &session_row(&cfg.scenario, &spec.tx, &spec.rx, &session, &out))?;

    checkpoint::save(
        &ctx.out().join(format!("{}_post_slf.ckpt", spec.tx)),
        &out.tx_aligned,
    )?;
    checkpoint::save(
        &ctx.out().join(format!("{}_post_slf.ckpt", spec.rx)),
        &out.rx_updated,
    )?;

    let top1 = out
        .post
        .top1
        .map(|a| format!(", top1 {a:.4}"))
        .unwrap_or_default();
    println!(
        "slf {} -> {} ell={} epsilon={} lambda13={}: val mse {:.6}, post mse {:.6}{top1}, T_R {:.3}s",
        spec.tx,
        spec.rx,
        spec.ell,
        session.measured_epsilon,
        spec.lambda13,
        out.val.mse,
        out.post.mse,
        out.cost.recovery_time_s
    );
    Ok(())
}

/// Pretraining splits of the mix-in transceiver's dataset, if configured.
pub fn load_mix(
    ctx: &Ctx,
    mix_with: Option<&str>,
) -> Result<Option<(Dataset<f32>, Dataset<f32>)>> {
    match mix_with {
        Some(id) => {
            let spec: &config::TrxSpec = ctx.cfg.trx(id)?;
            Ok(Some(ctx.splits(spec)?))
        }
        None => Ok(None),
    }
}
