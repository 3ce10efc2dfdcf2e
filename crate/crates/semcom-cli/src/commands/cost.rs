//! `cost`: recovery-time table. Explicit mode turns published payload/FLOP
//! figures into latencies; measured mode accounts the resident architecture
//! per freeze level.

use semcom::arch;
use semcom::cost::{fine_tune_flops, recovery_time, transceiver_unit_costs};
use semcom::layers::NameSet;
use semcom::slf::{download_decoder, upload_payload, FreezeMask, MAX_FREEZE};
use semcom::transceiver::build_transceiver;

use crate::config::CostSpec;
use crate::error::{CliError, Result};
use crate::metrics_csv::{write_rows, MetricsRow};

use super::Ctx;

pub fn run(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let spec = cfg
        .cost
        .as_ref()
        .ok_or_else(|| CliError::config("this command needs a `cost` config section"))?;
    let links = cfg.link_params()?;
    let compute = cfg.compute_params()?;

    let mut rows = Vec::new();
    match spec {
        CostSpec::Explicit(ex) => {
            for r in &ex.rows {
                let b = recovery_time(r.dl_bytes, r.flops, r.ul_bytes, &links, &compute);
                rows.push(cost_row(
                    &cfg.scenario,
                    &r.label,
                    r.ell as u64,
                    r.dl_bytes,
                    r.ul_bytes,
                    r.flops,
                    &b,
                ));
                println!(
                    "cost {} ell={}: dl {:.3}s + ft {:.3}s + ul {:.3}s = T_R {:.3}s",
                    r.label, r.ell, b.dl_latency_s, b.ft_latency_s, b.ul_latency_s,
                    b.recovery_time_s
                );
            }
        }
        CostSpec::Measured(m) => {
            let task = ctx.task();
            let unit_costs = transceiver_unit_costs(task.n_classes())?;
            // Payload accounting needs parameter shapes only; any seed does.
            let trx = build_transceiver::<f32>(task, arch::input_shape(), 0)?;
            let dl_bytes = download_decoder(&trx).dl_bytes;
            for ell in 0..=MAX_FREEZE {
                let mask = FreezeMask::new(ell)?;
                let (_, report) = upload_payload(&trx.phi, &trx.codebook, &mask)?;
                let frozen: NameSet = mask
                    .frozen_units()
                    .iter()
                    .map(|u| u.to_string())
                    .collect();
                let flops = fine_tune_flops(
                    &unit_costs,
                    &frozen,
                    m.n_samples,
                    m.epochs,
                    m.include_head_forward,
                );
                let b = recovery_time(dl_bytes, flops, report.ul_bytes, &links, &compute);
                rows.push(cost_row(
                    &cfg.scenario,
                    "measured",
                    ell as u64,
                    dl_bytes,
                    report.ul_bytes,
                    flops,
                    &b,
                ));
                println!(
                    "cost measured ell={ell}: dl {} B, ul {} B, {:.3e} FLOPs, T_R {:.3}s",
                    dl_bytes, report.ul_bytes, flops, b.recovery_time_s
                );
            }
        }
    }
    write_rows(&ctx.out().join("cost.csv"), &rows)
}

#[allow(clippy::too_many_arguments)]
fn cost_row(
    scenario: &str,
    label: &str,
    ell: u64,
    dl_bytes: u64,
    ul_bytes: u64,
    flops: f64,
    b: &semcom::cost::CostBreakdown,
) -> MetricsRow {
    MetricsRow {
        scenario: scenario.to_string(),
        tx_id: label.to_string(),
        rx_id: "-".to_string(),
        ell: Some(ell),
        dl_bytes: Some(dl_bytes),
        ul_bytes: Some(ul_bytes),
        flops: Some(flops),
        dl_s: Some(b.dl_latency_s),
        ft_s: Some(b.ft_latency_s),
        ul_s: Some(b.ul_latency_s),
        recovery_s: Some(b.recovery_time_s),
        ..Default::default()
    }
}
