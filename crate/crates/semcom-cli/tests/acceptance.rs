//! Acceptance gate. Every shipped claim gets one test and one printed
//! `acceptance <name>: PASS|FAIL (...)` line; run with `-- --nocapture` to
//! see them on success. The heavy fixtures — three 30-epoch pretrained
//! transceivers and a 5-freeze-level × 3-seed session grid — build once and
//! are shared, but expect the whole file to take most of an hour on one
//! core.

use std::sync::OnceLock;

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};

use semcom::arch;
use semcom::channel::DmcChannel;
use semcom::cost::{recovery_time, ComputeParams, LinkParams, KILOBYTE};
use semcom::data::{canonicalize, split_train_test, Dataset};
use semcom::gradcheck::grad_check;
use semcom::layers::{LayerSpec, NameSet, ParamStore, Stack};
use semcom::rng::{substream, tag};
use semcom::slf::{
    aligned_transmitter, apply_upload, download_decoder, fine_tune, mix_datasets,
    unit_param_names, upload_payload, FreezeMask, SlfConfig, MAX_FREEZE,
};
use semcom::synth::{glyphs, textures};
use semcom::tape::{NodeId, Tape};
use semcom::tensor::Tensor;
use semcom::training::{
    build_vqvae_loss_pinned, build_vqvae_surrogate_pinned, CodebookLossTarget, HeadTrainConfig,
};
use semcom::transceiver::{
    build_transceiver, evaluate, pretrain, pretrain_classifier, Metrics, PretrainConfig, Task,
    Transceiver, TRAIN_SPLIT_RATIO,
};
use semcom::vq::{quantize_channel_fibers, Codebook};
use semcom_cli::commands::slf::{run_session, Session, SessionOutput};

fn check(name: &str, ok: bool, detail: String) {
    println!(
        "acceptance {name}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "acceptance {name}: {detail}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn links() -> LinkParams {
    LinkParams::new(2e6, 2e6).unwrap()
}

fn compute() -> ComputeParams {
    ComputeParams::new(30e12).unwrap()
}

// ---------------------------------------------------------------- fixtures

const N_POOL: usize = 10_000;
const N_CLASSES: usize = 20;
const GRID_SEEDS: [u64; 3] = [0, 1, 2];

/// Three pretrained users: two glyph transceivers split by channel quality
/// and one texture transceiver (labels rebased to 10..19), plus their
/// pretraining splits and the aligned reference metrics of the first.
struct Bench {
    trx1: Transceiver<f32>,
    trx2: Transceiver<f32>,
    trx3: Transceiver<f32>,
    train1: Dataset<f32>,
    test1: Dataset<f32>,
    test2: Dataset<f32>,
    train3: Dataset<f32>,
    test3: Dataset<f32>,
    aligned1: Metrics,
}

fn pretrained(
    ds: &Dataset<f32>,
    epsilon: f64,
    seed: u64,
) -> (Transceiver<f32>, Dataset<f32>, Dataset<f32>) {
    let task = Task::Classification {
        n_classes: N_CLASSES,
    };
    let mut trx = build_transceiver::<f32>(task, arch::input_shape(), seed).unwrap();
    let report = pretrain(&mut trx, ds, &PretrainConfig::new(epsilon, seed)).unwrap();
    let (train, test) = split_train_test(ds, TRAIN_SPLIT_RATIO, seed).unwrap();
    let hcfg = HeadTrainConfig {
        seed,
        ..HeadTrainConfig::default()
    };
    let (gamma, head) = pretrain_classifier(&[&train], N_CLASSES, &hcfg).unwrap();
    trx.set_gamma(gamma).unwrap();
    eprintln!(
        "fixture: {} eps {epsilon:.0e} seed {seed}: test mse {:.4}, head top1 {:.3}",
        ds.source_id,
        report.test_mse.last().unwrap(),
        head.holdout_top1
    );
    (trx, train, test)
}

static BENCH: OnceLock<Bench> = OnceLock::new();

fn bench() -> &'static Bench {
    BENCH.get_or_init(|| {
        let glyph_pool = glyphs::<f32>(N_POOL, 40).unwrap();
        let texture_pool = canonicalize(&textures::<f32>(N_POOL, 41).unwrap())
            .unwrap()
            .with_label_offset(10);
        let (trx1, train1, test1) = pretrained(&glyph_pool, 1e-5, 201);
        let (trx2, _, test2) = pretrained(&glyph_pool, 1e-1, 202);
        let (trx3, train3, test3) = pretrained(&texture_pool, 1e-5, 203);
        let aligned1 = evaluate(&trx1, &trx1, &test1, 1e-5, 1, 0).unwrap();
        eprintln!(
            "fixture: aligned reference mse {:.4}, top1 {:.3}",
            aligned1.mse,
            aligned1.top1.unwrap()
        );
        Bench {
            trx1,
            trx2,
            trx3,
            train1,
            test1,
            test2,
            train3,
            test3,
            aligned1,
        }
    })
}

fn freeze_grid(
    rx: &Transceiver<f32>,
    label: &str,
    epochs: usize,
) -> Vec<Vec<SessionOutput>> {
    let b = bench();
    (0..=MAX_FREEZE)
        .map(|ell| {
            GRID_SEEDS
                .iter()
                .map(|&seed| {
                    let s = Session {
                        tx: &b.trx1,
                        rx,
                        train: &b.train1,
                        test: &b.test1,
                        mix: None,
                        ell,
                        epochs,
                        batch_size: 128,
                        lambda_c: 0.25,
                        measured_epsilon: 1e-5,
                        lambda13: 0.0,
                        seed,
                        reinit_on_full_retrain: true,
                        n_draws: 1,
                    };
                    let out = run_session(&s, &links(), &compute()).unwrap();
                    eprintln!(
                        "fixture: session {label} ell={ell} seed={seed}: mse {:.4} top1 {:.3} T_R {:.3}s",
                        out.post.mse,
                        out.post.top1.unwrap(),
                        out.cost.recovery_time_s
                    );
                    out
                })
                .collect()
        })
        .collect()
}

/// Recovery sessions on the channel-dissimilar pair for every freeze level
/// and seed; `rows[ell][k]` is seed `GRID_SEEDS[k]`. Runs 30 epochs so each
/// level reaches its floor — on this pair the receiver's decoder was trained
/// on the same source, the freeze levels' floors sit within a hair of each
/// other, and only a converged run keeps the full retrain comparable to the
/// aligned baseline.
static GRID: OnceLock<Vec<Vec<SessionOutput>>> = OnceLock::new();

fn grid() -> &'static Vec<Vec<SessionOutput>> {
    GRID.get_or_init(|| freeze_grid(&bench().trx2, "ch-pair", 30))
}

/// Same grid against the texture-trained receiver. Here the frozen decoder
/// units carry real source mismatch, so freeze levels separate by orders of
/// magnitude instead of noise; 10 epochs resolve the trend.
static GRID_SRC: OnceLock<Vec<Vec<SessionOutput>>> = OnceLock::new();

fn grid_src() -> &'static Vec<Vec<SessionOutput>> {
    GRID_SRC.get_or_init(|| freeze_grid(&bench().trx3, "src-pair", 10))
}

// ------------------------------------------------------- cheap arithmetic

#[test]
fn cost_table_latencies() {
    // Published per-freeze-level inputs: 114 kB download, fine-tuning
    // TFLOPs per task, upload kB — and the latency/recovery cells they
    // must reproduce at 2 Mbps both ways and 30 TFLOPS.
    let ft_tflops = [
        [79.02, 64.28, 48.19, 50.63, 47.32],
        [75.43, 67.49, 39.69, 37.31, 34.17],
    ];
    let ul_kb = [114.0, 76.0, 22.0, 2.0, 0.0];
    let expect_dl = 0.456;
    let expect_ul = [0.456, 0.304, 0.088, 0.008, 0.0];
    let expect_ft = [
        [2.63, 2.14, 1.60, 1.68, 1.57],
        [2.51, 2.24, 1.32, 1.24, 1.13],
    ];
    let expect_tr = [
        [3.542, 2.900, 2.144, 2.144, 2.026],
        [3.422, 3.000, 1.864, 1.704, 1.586],
    ];

    let (links, compute) = (links(), compute());
    let mut worst = 0.0f64;
    let mut cells = 0;
    for task in 0..2 {
        for ell in 0..5 {
            let c = recovery_time(
                (114.0 * KILOBYTE) as u64,
                ft_tflops[task][ell] * 1e12,
                (ul_kb[ell] * KILOBYTE) as u64,
                &links,
                &compute,
            );
            for (got, want) in [
                (c.dl_latency_s, expect_dl),
                (c.ft_latency_s, expect_ft[task][ell]),
                (c.ul_latency_s, expect_ul[ell]),
                (c.recovery_time_s, expect_tr[task][ell]),
            ] {
                worst = worst.max((got - want).abs());
                cells += 1;
            }
        }
    }
    check(
        "cost-table",
        worst <= 0.01,
        format!("worst delta {worst:.4}s <= 0.01s over {cells} published latency cells"),
    );
}

#[test]
fn channel_crossover_statistics() {
    let n = 100_000usize;
    let epsilon = 0.1;
    let k = 16u32;
    let ch = DmcChannel::new(k, epsilon).unwrap();
    let inputs: Vec<u32> = (0..n).map(|i| (i % k as usize) as u32).collect();
    let out = ch
        .transmit_all(&inputs, &mut substream(2024, &[tag::CHANNEL]))
        .unwrap();

    // The channel is symmetric, so the output-minus-input offset histogram
    // must be: 0 with probability 1-eps, each of the other 15 with eps/15.
    let mut offsets = [0u64; 16];
    for (i, o) in inputs.iter().zip(&out) {
        offsets[((o + k - i) % k) as usize] += 1;
    }
    let flip_rate = 1.0 - offsets[0] as f64 / n as f64;
    let p = epsilon / (k - 1) as f64;
    let expected = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let worst = offsets[1..]
        .iter()
        .map(|&c| (c as f64 - expected).abs())
        .fold(0.0, f64::max);
    check(
        "channel-statistics",
        (0.095..=0.105).contains(&flip_rate) && worst <= 3.0 * sigma,
        format!(
            "flip rate {flip_rate:.4} in [0.095, 0.105]; worst codeword count deviation {worst:.1} <= 3sigma = {:.1}",
            3.0 * sigma
        ),
    );
}

// ---------------------------------------------------------- gradient suite

/// Max FD-vs-analytic relative error for `mean ||stack(x) - t||^2`.
fn stack_grad_err(stack: &Stack, input_shape: &[usize], h: f64, seed: u64) -> f64 {
    let mut r = substream(seed, &[tag::INIT]);
    let params: ParamStore<f64> = stack.init_params(&mut r);
    let n_in: usize = input_shape.iter().product();
    let mut xd = vec![0.0f64; n_in];
    for v in xd.iter_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    let x = Tensor::new(input_shape.to_vec(), xd).unwrap();
    let out_shape = stack.output_shape(input_shape).unwrap();
    let mut td = vec![0.0f64; out_shape.iter().product()];
    for v in td.iter_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    let target = Tensor::new(out_shape, td).unwrap();

    let build = |p: &ParamStore<f64>, tape: &mut Tape<f64>| -> semcom::Result<NodeId> {
        let xn = tape.constant(x.clone());
        let out = tape.forward_stack(stack, p, xn, &|_| true)?;
        let tn = tape.constant(target.clone());
        let diff = tape.sub(out, tn)?;
        let ss = tape.sum_squares(diff);
        Ok(tape.scale(ss, 1.0 / input_shape[0] as f64))
    };
    let mut tape = Tape::new();
    let loss = build(&params, &mut tape).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut f = |p: &ParamStore<f64>| -> semcom::Result<f64> {
        let mut t = Tape::new();
        let id = build(p, &mut t)?;
        Ok(t.value(id).data()[0])
    };
    grad_check(&mut f, &params, &grads, h, 4).unwrap().max_rel_err
}

/// FD check of the full quantized-autoencoder loss with pinned symbol
/// streams, probing through the straight-through/stop-gradient surrogate.
fn vqvae_grad_err(target: CodebookLossTarget) -> f64 {
    let ds = glyphs::<f64>(4, 9).unwrap();
    let x = ds.batch(&[0, 1, 2, 3]);
    let mut r = substream(5, &[tag::INIT]);
    let mut params: ParamStore<f64> = arch::encoder().init_params(&mut r);
    params.absorb(arch::decoder().init_params(&mut r)).unwrap();
    let cb: Codebook<f64> = Codebook::init(arch::CODEBOOK_K, arch::CODE_DIM, &mut r);
    params.insert("codebook", cb.entries().clone());

    let z = arch::encoder().forward(&params, &x).unwrap();
    let tx_idx = quantize_channel_fibers(&z, &cb).unwrap();
    let channel = DmcChannel::new(arch::CODEBOOK_K as u32, 0.1).unwrap();
    let rx_idx = channel
        .transmit_all(&tx_idx, &mut substream(3, &[tag::CHANNEL]))
        .unwrap();

    let mut tape = Tape::new();
    let loss = build_vqvae_loss_pinned(
        &mut tape,
        &params,
        &NameSet::new(),
        x.clone(),
        &tx_idx,
        &rx_idx,
        0.25,
        target,
    )
    .unwrap();
    let grads = tape.backward(loss).unwrap();
    let base = params.clone();
    let mut f = |p: &ParamStore<f64>| -> semcom::Result<f64> {
        let mut t = Tape::new();
        let id = build_vqvae_surrogate_pinned(
            &mut t, p, &base, x.clone(), &tx_idx, &rx_idx, 0.25, target,
        )?;
        Ok(t.value(id).data()[0])
    };
    grad_check(&mut f, &params, &grads, 1e-6, 2).unwrap().max_rel_err
}

#[test]
fn gradient_suite() {
    let c = |ic, oc, k, s, p, t| LayerSpec::Conv2d {
        in_channels: ic,
        out_channels: oc,
        kernel: k,
        stride: s,
        padding: p,
        transposed: t,
    };
    // Every layer kind in the resident stacks: strided and same-size
    // convolutions, up-sampling transposed convolutions, ReLU, max-pooling,
    // and dense layers.
    let down = Stack::new(
        "g",
        vec![
            ("conv1", c(1, 3, 4, 2, 1, false)),
            ("relu1", LayerSpec::Relu),
            ("conv2", c(3, 2, 3, 1, 1, false)),
        ],
    );
    let up = Stack::new(
        "g",
        vec![
            ("conv1", c(2, 3, 4, 2, 1, true)),
            ("relu1", LayerSpec::Relu),
            ("conv2", c(3, 1, 4, 2, 1, true)),
        ],
    );
    let head = Stack::new(
        "g",
        vec![
            ("conv1", c(1, 4, 3, 1, 1, false)),
            ("relu1", LayerSpec::Relu),
            ("pool1", LayerSpec::MaxPool2d { window: 2, stride: 2 }),
            ("fc1", LayerSpec::Dense { in_dim: 64, out_dim: 6 }),
            ("relu2", LayerSpec::Relu),
            ("fc2", LayerSpec::Dense { in_dim: 6, out_dim: 3 }),
        ],
    );
    // ReLU kinks make large FD steps unreliable, so nonlinear graphs use a
    // small step against the 1e-2 bound; the linear-only composition has no
    // kinks and must meet 1e-4.
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (label, stack, shape) in [
        ("down-conv", &down, vec![2usize, 1, 8, 8]),
        ("up-conv", &up, vec![2, 2, 4, 4]),
        ("pool-dense", &head, vec![2, 1, 8, 8]),
    ] {
        let e = stack_grad_err(stack, &shape, 1e-5, 17);
        worst = worst.max(e);
        parts.push(format!("{label} {e:.1e}"));
    }
    for (label, target) in [
        ("loss-rx", CodebookLossTarget::Received),
        ("loss-tx", CodebookLossTarget::PreChannel),
    ] {
        let e = vqvae_grad_err(target);
        worst = worst.max(e);
        parts.push(format!("{label} {e:.1e}"));
    }

    let linear = Stack::new(
        "g",
        vec![
            ("conv1", c(1, 3, 4, 2, 1, false)),
            ("conv2", c(3, 2, 3, 1, 1, false)),
            ("conv3", c(2, 3, 4, 2, 1, true)),
            ("fc", LayerSpec::Dense { in_dim: 192, out_dim: 5 }),
        ],
    );
    let lin_err = stack_grad_err(&linear, &[2, 1, 8, 8], 1e-5, 23);

    check(
        "gradient-suite",
        worst <= 1e-2 && lin_err <= 1e-4,
        format!(
            "full graphs {worst:.1e} <= 1e-2 [{}]; linear-only {lin_err:.1e} <= 1e-4",
            parts.join(", ")
        ),
    );
}

// ------------------------------------------------------ behavioral claims

#[test]
fn misaligned_pairs_degrade() {
    let b = bench();
    let cross_ch = evaluate(&b.trx1, &b.trx2, &b.test1, 1e-5, 1, 0).unwrap();
    let cross_src = evaluate(&b.trx1, &b.trx3, &b.test1, 1e-5, 1, 0).unwrap();
    let ratio = cross_ch.mse / b.aligned1.mse;
    let top1 = cross_src.top1.unwrap();
    check(
        "misalignment",
        ratio >= 2.0 && top1 <= 0.5,
        format!(
            "channel-dissimilar mse {:.4} = {ratio:.1}x aligned {:.4} (need >= 2x); source-dissimilar top1 {top1:.3} <= 0.5",
            cross_ch.mse, b.aligned1.mse
        ),
    );
}

#[test]
fn cross_matrix_diagonal_wins() {
    let b = bench();
    let trxs = [&b.trx1, &b.trx2, &b.trx3];
    let tests = [&b.test1, &b.test2, &b.test3];
    let eps = [1e-5, 1e-1, 1e-5];
    let mut mse = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            mse[i][j] = evaluate(trxs[i], trxs[j], tests[i], eps[i], 1, 0)
                .unwrap()
                .mse;
        }
    }
    let mut ok = true;
    for i in 0..3 {
        for j in 0..3 {
            if i != j && mse[i][i] >= mse[i][j] {
                ok = false;
            }
        }
    }
    check(
        "cross-matrix",
        ok,
        format!(
            "every pair beats its cross pairs on its own data: diag [{:.4}, {:.4}, {:.4}], rows {:?}",
            mse[0][0], mse[1][1], mse[2][2], mse
        ),
    );
}

#[test]
fn full_retrain_recovers_the_aligned_baseline() {
    let b = bench();
    let g = grid();
    let mse = median(g[0].iter().map(|s| s.post.mse).collect());
    let top1 = median(g[0].iter().map(|s| s.post.top1.unwrap()).collect());
    // "Within 25%" bounds the recovered pair from above; beating the
    // baseline outright also counts as recovered.
    let ok = mse <= 1.25 * b.aligned1.mse && top1 >= 0.90;
    check(
        "full-retrain-recovery",
        ok,
        format!(
            "median mse {mse:.4} <= 1.25 x aligned {:.4}; median top1 {top1:.3} >= 0.90",
            b.aligned1.mse
        ),
    );
}

fn level_medians(g: &[Vec<SessionOutput>], f: impl Fn(&SessionOutput) -> f64) -> Vec<f64> {
    g.iter()
        .map(|row| median(row.iter().map(&f).collect()))
        .collect()
}

/// Largest max-minus-min across seeds at any freeze level: the resolution
/// limit of a 3-seed experiment for this metric.
fn seed_spread(g: &[Vec<SessionOutput>], f: impl Fn(&SessionOutput) -> f64) -> f64 {
    g.iter()
        .map(|row| {
            let vals: Vec<f64> = row.iter().map(&f).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        })
        .fold(0.0, f64::max)
}

fn monotone_up_within(v: &[f64], tol: f64) -> bool {
    v.windows(2).all(|w| w[1] >= w[0] - tol)
}

fn monotone_down_within(v: &[f64], tol: f64) -> bool {
    v.windows(2).all(|w| w[1] <= w[0] + tol)
}

#[test]
fn freeze_levels_trade_quality_for_recovery_time() {
    // Quality-vs-ell is checked strictly on the source-dissimilar pair,
    // where every frozen unit carries real mismatch and 3-seed medians
    // separate by orders of magnitude. On the channel-dissimilar pair the
    // levels' floors are nearly degenerate at this scale, so medians there
    // resolve the trend only down to the run-to-run spread across seeds;
    // comparisons inside that spread are noise and get that much tolerance.
    // Accuracy is meaningful only on the channel-dissimilar pair — the
    // texture receiver's head has never seen glyph labels by construction.
    let src = grid_src();
    let mse_s = level_medians(src, |s| s.post.mse);
    let tr_s = level_medians(src, |s| s.cost.recovery_time_s);
    let src_mse_ok = mse_s.windows(2).all(|w| w[1] >= w[0]);
    let src_tr_ok = tr_s.windows(2).all(|w| w[1] <= w[0]);

    let ch = grid();
    let mse_c = level_medians(ch, |s| s.post.mse);
    let top_c = level_medians(ch, |s| s.post.top1.unwrap());
    let tr_c = level_medians(ch, |s| s.cost.recovery_time_s);
    let mse_tol = seed_spread(ch, |s| s.post.mse);
    let top_tol = seed_spread(ch, |s| s.post.top1.unwrap());
    let ch_mse_ok = monotone_up_within(&mse_c, mse_tol);
    let ch_top_ok = monotone_down_within(&top_c, top_tol);
    let ch_tr_ok = tr_c.windows(2).all(|w| w[1] <= w[0]);

    check(
        "freeze-level-tradeoff",
        src_mse_ok && src_tr_ok && ch_mse_ok && ch_top_ok && ch_tr_ok,
        format!(
            "source-dissimilar medians: mse {mse_s:?} strictly non-decreasing ({src_mse_ok}), recovery {tr_s:?} non-increasing ({src_tr_ok}); channel-dissimilar medians: mse {mse_c:?} non-decreasing within seed spread {mse_tol:.1e} ({ch_mse_ok}), top1 {top_c:?} non-increasing within {top_tol:.1e} ({ch_top_ok}), recovery {tr_c:?} non-increasing ({ch_tr_ok})"
        ),
    );
}

#[test]
fn freezing_keeps_frozen_units_bit_identical() {
    let data = glyphs::<f32>(96, 33).unwrap();
    let mut runner = TestRunner::new(PropConfig {
        cases: 6,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let result = runner.run(&(0usize..=MAX_FREEZE, any::<u64>()), |(ell, seed)| {
        let tx =
            build_transceiver::<f32>(Task::Reconstruction, arch::input_shape(), seed ^ 0xA)
                .unwrap();
        let rx =
            build_transceiver::<f32>(Task::Reconstruction, arch::input_shape(), seed ^ 0xB)
                .unwrap();
        let download = download_decoder(&rx);
        let mut cfg = SlfConfig::new(ell, 1e-3, seed).unwrap();
        cfg.epochs = 2;
        cfg.batch_size = 32;
        let outcome = fine_tune(&tx, &download, &data, &cfg).unwrap();
        let mask = FreezeMask::new(ell).unwrap();

        let bits_equal = |a: &Tensor<f32>, b: &Tensor<f32>| {
            a.data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits())
        };
        for unit in mask.frozen_units() {
            for name in unit_param_names(unit) {
                let (before, after) = if name == "codebook" {
                    (download.codebook.entries(), outcome.codebook.entries())
                } else {
                    (
                        download.phi.require(&name).unwrap(),
                        outcome.phi.require(&name).unwrap(),
                    )
                };
                prop_assert!(bits_equal(before, after), "frozen `{name}` changed");
            }
        }

        let (payload, report) = upload_payload(&outcome.phi, &outcome.codebook, &mask).unwrap();
        let sent: u64 = payload.tensors.values().map(|t| t.numel() as u64).sum();
        prop_assert_eq!(report.ul_bytes, 4 * sent, "upload bytes != 4 x params");
        if ell == MAX_FREEZE {
            prop_assert_eq!(report.ul_bytes, 0);
        }

        // Applying the upload must replace exactly the unfrozen tensors.
        let rx2 = apply_upload(&rx, &payload).unwrap();
        for unit in mask.frozen_units() {
            for name in unit_param_names(unit) {
                let same = if name == "codebook" {
                    bits_equal(rx2.codebook.entries(), rx.codebook.entries())
                } else {
                    bits_equal(
                        rx2.phi.require(&name).unwrap(),
                        rx.phi.require(&name).unwrap(),
                    )
                };
                prop_assert!(same, "apply touched frozen `{name}`");
            }
        }
        for (name, t) in &payload.tensors {
            let same = if name == "codebook" {
                bits_equal(rx2.codebook.entries(), t)
            } else {
                bits_equal(rx2.phi.require(name).unwrap(), t)
            };
            prop_assert!(same, "uploaded `{name}` not applied");
        }
        Ok(())
    });
    check(
        "freezing-soundness",
        result.is_ok(),
        match &result {
            Ok(()) => "6 random (freeze level, seed) fine-tunes: frozen bits fixed, payload = 4 bytes x unfrozen params, full freeze uploads nothing".into(),
            Err(e) => format!("{e}"),
        },
    );
}

#[test]
fn data_mixing_controls_source_dissimilarity() {
    let b = bench();
    let n = b.train1.len().min(b.train3.len());
    let m0 = mix_datasets(&b.train1, &b.train3, 0.0, 7).unwrap();
    let m1 = mix_datasets(&b.train1, &b.train3, 1.0, 7).unwrap();
    // Sources have disjoint label ranges, so purity is label-checkable.
    let endpoints_ok = m0.len() == n
        && m1.len() == n
        && m0.labels().iter().all(|&l| l < 10)
        && m1.labels().iter().all(|&l| l >= 10);

    // At full mix the receiver's frozen layers already match the data, so
    // the freeze level should matter much less than at zero mix.
    let mut spread = [0.0f64; 2];
    for (k, lambda) in [0.0, 1.0].into_iter().enumerate() {
        let mut mses = Vec::new();
        for ell in 0..=MAX_FREEZE {
            let s = Session {
                tx: &b.trx1,
                rx: &b.trx3,
                train: &b.train1,
                test: &b.test1,
                mix: Some((&b.train3, &b.test3)),
                ell,
                epochs: 10,
                batch_size: 128,
                lambda_c: 0.25,
                measured_epsilon: 1e-5,
                lambda13: lambda,
                seed: 0,
                reinit_on_full_retrain: true,
                n_draws: 1,
            };
            let out = run_session(&s, &links(), &compute()).unwrap();
            eprintln!(
                "fixture: mix lambda={lambda} ell={ell}: post mse {:.4}",
                out.post.mse
            );
            mses.push(out.post.mse);
        }
        let lo = mses.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = mses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        spread[k] = hi - lo;
    }
    check(
        "data-mixing",
        endpoints_ok && spread[1] < spread[0],
        format!(
            "endpoints pure at lambda 0/1 ({endpoints_ok}); post-recovery mse spread across freeze levels {:.4} at lambda=1 < {:.4} at lambda=0",
            spread[1], spread[0]
        ),
    );
}

#[test]
fn protocol_closure_is_bit_exact() {
    let b = bench();
    let ft_ds = b.train1.take(600);
    let download = download_decoder(&b.trx2);
    let mut cfg = SlfConfig::new(2, 1e-5, 123).unwrap();
    cfg.epochs = 2;
    let outcome = fine_tune(&b.trx1, &download, &ft_ds, &cfg).unwrap();
    let mask = FreezeMask::new(cfg.ell).unwrap();
    let (payload, _) = upload_payload(&outcome.phi, &outcome.codebook, &mask).unwrap();
    let rx = apply_upload(&b.trx2, &payload).unwrap();
    let tx = aligned_transmitter(&b.trx1, &outcome);
    let (_, val) = split_train_test(&ft_ds, TRAIN_SPLIT_RATIO, cfg.seed).unwrap();
    let m = evaluate(&tx, &rx, &val, cfg.measured_epsilon, 1, cfg.seed).unwrap();
    let ok = m.mse.to_bits() == outcome.val.mse.to_bits()
        && m.top1.map(f64::to_bits) == outcome.val.top1.map(f64::to_bits);
    check(
        "protocol-closure",
        ok,
        format!(
            "download -> fine-tune -> upload -> apply -> evaluate replays the in-protocol validation bit-for-bit: mse {} vs {}",
            m.mse, outcome.val.mse
        ),
    );
}

#[test]
fn post_recovery_accuracy_is_stable_across_epsilon() {
    let b = bench();
    let grid_eps = [1e-5, 1e-3, 1e-2, 1e-1];
    let mut tops = Vec::new();
    for &eps in &grid_eps {
        let s = Session {
            tx: &b.trx1,
            rx: &b.trx2,
            train: &b.train1,
            test: &b.test1,
            mix: None,
            ell: 0,
            epochs: 10,
            batch_size: 128,
            lambda_c: 0.25,
            measured_epsilon: eps,
            lambda13: 0.0,
            seed: 0,
            reinit_on_full_retrain: true,
            n_draws: 1,
        };
        let out = run_session(&s, &links(), &compute()).unwrap();
        eprintln!(
            "fixture: eps {eps:.0e}: post top1 {:.3}",
            out.post.top1.unwrap()
        );
        tops.push(out.post.top1.unwrap());
    }
    let lo = tops.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = tops.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    check(
        "epsilon-stability",
        hi - lo <= 0.05,
        format!(
            "full-retrain recovery holds accuracy within 5 points across eps {grid_eps:?}: top1 {tops:?}, spread {:.3}",
            hi - lo
        ),
    );
}
