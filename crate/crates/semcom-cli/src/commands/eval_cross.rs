//! `eval-cross`: the full transmitter × receiver metric matrix on each
//! transmitter's held-out split, under the transmitter's own channel. Also
//! dumps an originals-over-reconstructions montage per pair.

use semcom::arch;
use semcom::rng;
use semcom::transceiver::{end_to_end, evaluate};

use crate::error::{CliError, Result};
use crate::metrics_csv::{write_rows, MetricsRow};
use crate::pgm::Montage;

use super::Ctx;

/// Montage columns; each shows an original above its reconstruction.
const MONTAGE_COLS: usize = 8;

pub fn run(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    if cfg.transceivers.is_empty() {
        return Err(CliError::config("no transceivers configured"));
    }
    let mut trxs = Vec::with_capacity(cfg.transceivers.len());
    let mut tests = Vec::with_capacity(cfg.transceivers.len());
    for spec in &cfg.transceivers {
        trxs.push(ctx.load_trx(&spec.id)?);
        tests.push(ctx.splits(spec)?.1);
    }

    let mut rows = Vec::new();
    for (i, tx_spec) in cfg.transceivers.iter().enumerate() {
        for (j, rx_spec) in cfg.transceivers.iter().enumerate() {
            let epsilon = tx_spec.epsilon;
            let m = evaluate(
                &trxs[i],
                &trxs[j],
                &tests[i],
                epsilon,
                cfg.eval.n_draws,
                cfg.seed,
            )?;
            rows.push(MetricsRow {
                scenario: cfg.scenario.clone(),
                tx_id: tx_spec.id.clone(),
                rx_id: rx_spec.id.clone(),
                epsilon_cross: Some(epsilon),
                seed: Some(cfg.seed),
                mse: Some(m.mse),
                top1: m.top1,
                ..Default::default()
            });
            write_montage(ctx, i, j, epsilon, &trxs, &tests)?;
            let top1 = m
                .top1
                .map(|a| format!(", top1 {a:.4}"))
                .unwrap_or_default();
            println!(
                "eval {} -> {}: mse {:.6}{top1}",
                tx_spec.id, rx_spec.id, m.mse
            );
        }
    }
    write_rows(&ctx.out().join("eval_cross.csv"), &rows)
}

fn write_montage(
    ctx: &Ctx,
    i: usize,
    j: usize,
    epsilon: f64,
    trxs: &[semcom::transceiver::Transceiver<f32>],
    tests: &[semcom::data::Dataset<f32>],
) -> Result<()> {
    let test = &tests[i];
    let cols = MONTAGE_COLS.min(test.len());
    let [_, h, w] = arch::input_shape();
    let mut montage = Montage::new(2, cols, h, w);
    // Tags 1..8 belong to library substreams; 9 marks montage channel draws.
    let mut draw = rng::substream(ctx.cfg.seed, &[9, i as u64, j as u64]);
    for k in 0..cols {
        let x = test.batch(&[k]).reshape(vec![1, h, w])?;
        let (recon, _) = end_to_end(&trxs[i], &trxs[j], &x, epsilon, &mut draw)?;
        montage.place(0, k, &x)?;
        montage.place(1, k, &recon)?;
    }
    let name = format!(
        "recon_{}_{}.pgm",
        ctx.cfg.transceivers[i].id, ctx.cfg.transceivers[j].id
    );
    montage.write(&ctx.out().join(name))
}
