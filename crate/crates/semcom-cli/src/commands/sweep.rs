//! `sweep`: the (ε_cross × λ13 × ℓ × seed) grid of SLF sessions. Rows
//! already in the CSV are skipped, so an interrupted sweep resumes where it
//! stopped; a failing cell is logged and the rest of the grid still runs.

use std::io::Write;

use crate::error::{Category, CliError, Result};
use crate::metrics_csv::{append_row, ensure_header, existing_keys, MetricsRow};

use super::slf::{load_mix, run_session, session_row, Session};
use super::Ctx;

pub fn run(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::config("this command needs a `sweep` config section"))?;

    let tx_spec = cfg.trx(&spec.tx)?;
    let tx = ctx.load_trx(&spec.tx)?;
    let rx = ctx.load_trx(&spec.rx)?;
    let (train, test) = ctx.splits(tx_spec)?;
    let mix = load_mix(ctx, spec.mix_with.as_deref())?;

    let csv = ctx.out().join("sweep.csv");
    ensure_header(&csv)?;
    let done = existing_keys(&csv)?;
    let failures_path = ctx.out().join("sweep_failures.log");

    let (mut computed, mut skipped, mut failed) = (0usize, 0usize, 0usize);
    let mut first_failure: Option<Category> = None;

    for &epsilon in &spec.epsilon_grid {
        for &lambda13 in &spec.lambda_grid {
            for &ell in &spec.ell_grid {
                for &seed in &spec.seeds {
                    let session = Session {
                        tx: &tx,
                        rx: &rx,
                        train: &train,
                        test: &test,
                        mix: mix.as_ref().map(|(a, b)| (a, b)),
                        ell,
                        epochs: spec.epochs,
                        batch_size: spec.batch_size,
                        lambda_c: spec.lambda_c,
                        measured_epsilon: epsilon,
                        lambda13,
                        seed,
                        reinit_on_full_retrain: spec.reinit_on_full_retrain,
                        n_draws: cfg.eval.n_draws,
                    };
                    // Key of the row this cell would write; also its log id.
                    let probe =
                        session_probe_row(&cfg.scenario, &spec.tx, &spec.rx, &session);
                    let key = probe.key();
                    if done.contains(&key) {
                        skipped += 1;
                        continue;
                    }
                    match run_session(&session, &cfg.link_params()?, &cfg.compute_params()?) {
                        Ok(out) => {
                            append_row(
                                &csv,
                                &session_row(&cfg.scenario, &spec.tx, &spec.rx, &session, &out),
                            )?;
                            computed += 1;
                        }
                        Err(e) => {
                            failed += 1;
                            first_failure.get_or_insert(e.category);
                            eprintln!("sweep cell {key}: {e}");
                            log_failure(&failures_path, &key, &e)?;
                        }
                    }
                }
            }
        }
    }

    println!("sweep: {computed} computed, {skipped} skipped, {failed} failed");
    match first_failure {
        None => Ok(()),
        Some(category) => Err(CliError::new(
            category,
            format!(
                "{failed} sweep cell(s) failed; see {}",
                failures_path.display()
            ),
        )),
    }
}

/// Row with only the identity cells filled, for resume keying.
fn session_probe_row(
    scenario: &str,
    tx_id: &str,
    rx_id: &str,
    s: &Session<'_>,
) -> MetricsRow {
    MetricsRow {
        scenario: scenario.to_string(),
        tx_id: tx_id.to_string(),
        rx_id: rx_id.to_string(),
        epsilon_cross: Some(s.measured_epsilon),
        lambda13: Some(s.lambda13),
        ell: Some(s.ell as u64),
        seed: Some(s.seed),
        ..Default::default()
    }
}

fn log_failure(path: &std::path::Path, key: &str, e: &CliError) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|err| CliError::io(path.display(), err))?;
    writeln!(f, "{key}: {e}").map_err(|err| CliError::io(path.display(), err))
}
