//! `pretrain`: train one VQ-VAE pair per configured transceiver (plus a
//! classifier head when the task asks for one), then checkpoint each and
//! dump its loss curve.

use semcom::data::split_train_test;
use semcom::training::HeadTrainConfig;
use semcom::transceiver::{
    build_transceiver, pretrain, pretrain_classifier, PretrainConfig, Task, TRAIN_SPLIT_RATIO,
};
use semcom::arch;

use crate::checkpoint;
use crate::error::{CliError, Result};

use super::Ctx;

pub fn run(ctx: &Ctx) -> Result<()> {
    if ctx.cfg.transceivers.is_empty() {
        return Err(CliError::config("no transceivers configured"));
    }
    for spec in &ctx.cfg.transceivers {
        let ds = ctx.load_dataset(&spec.dataset)?;
        let mut trx = build_transceiver::<f32>(ctx.task(), arch::input_shape(), spec.seed)?;

        let mut pcfg = PretrainConfig::new(spec.epsilon, spec.seed);
        pcfg.epochs = ctx.cfg.pretrain.epochs;
        pcfg.batch_size = ctx.cfg.pretrain.batch_size;
        pcfg.lr = ctx.cfg.pretrain.lr;
        pcfg.lambda_c = ctx.cfg.pretrain.lambda_c;
        let report = pretrain(&mut trx, &ds, &pcfg)?;

        let mut head_line = String::new();
        if let Task::Classification { n_classes } = ctx.task() {
            // Heads train on the pretraining split only, so held-out
            // evaluation stays honest.
            let (train, _) = split_train_test(&ds, TRAIN_SPLIT_RATIO, spec.seed)?;
            let hcfg = HeadTrainConfig {
                epochs: ctx.cfg.head.epochs,
                batch_size: ctx.cfg.head.batch_size,
                lr: ctx.cfg.head.lr,
                seed: spec.seed,
            };
            let (gamma, head_report) = pretrain_classifier(&[&train], n_classes, &hcfg)?;
            trx.set_gamma(gamma)?;
            head_line = format!(", head top1 {:.4}", head_report.holdout_top1);
        }

        let ckpt = ctx.ckpt_path(&spec.id);
        checkpoint::save(&ckpt, &trx)?;
        write_curve(ctx, &spec.id, &report.train_loss, &report.test_mse)?;

        let final_mse = report.test_mse.last().copied().unwrap_or(f64::NAN);
        println!(
            "pretrained {} on {} (epsilon {}): test mse {:.6}{}",
            spec.id, trx.dataset_id, spec.epsilon, final_mse, head_line
        );
    }
    Ok(())
}

fn write_curve(ctx: &Ctx, id: &str, train_loss: &[f64], test_mse: &[f64]) -> Result<()> {
    let path = ctx.out().join(format!("pretrain_{id}.csv"));
    let mut text = String::from("epoch,train_loss,test_mse\n");
    for (epoch, (loss, mse)) in train_loss.iter().zip(test_mse).enumerate() {
        text.push_str(&format!("{epoch},{loss},{mse}\n"));
    }
    std::fs::write(&path, text).map_err(|e| CliError::io(path.display(), e))
}
