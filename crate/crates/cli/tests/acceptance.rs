//! Acceptance suite: one line per criterion, gated criteria fail the target.
//!
//! Runs single-threaded. The desk-scale training criteria take several
//! minutes each.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use span_cli::commands;
use span_cli::TrainArgs;
use span_core::fixtures::synthetic_image;
use span_core::gradcheck::{attention_identity_error, run_suite, GradcheckOptions};
use span_core::io::{decode_weights, encode_weights, save_png};
use span_core::metrics::{evaluate, psnr, psnr_y, ssim, ssim_y, EvalPair};
use span_core::model::{fuse_model, param_count, span_forward, BranchMask, Mode, SpanConfig, SpanModel, Variant};
use span_core::nn::{pixel_shuffle, pixel_unshuffle, Activation, AttentionParams, PadMode};
use span_core::resample::bicubic_downscale;
use span_core::train::{l1_loss, lr_at, ImageSet, TrainConfig, Trainer};
use span_core::{Distribution, Error, FormatError, SeededRng, Shape4, Tensor4};

/// Outcome of one criterion: pass/fail plus a one-line summary.
struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn uniform(dims: [usize; 4], seed: u64) -> Tensor4<f32> {
    let [n, c, h, w] = dims;
    Tensor4::fill_random(Shape4::new(n, c, h, w).unwrap(), seed, Distribution::Uniform { lo: 0.0, hi: 1.0 }).unwrap()
}

fn gradient_fidelity() -> Verdict {
    let started = Instant::now();
    let report = run_suite(GradcheckOptions::default()).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let net = report.ops.iter().find(|o| o.op.starts_with("span ")).expect("network check");
    let worst = report.ops.iter().map(|o| o.max_rel_error).fold(0.0, f64::max);
    verdict(
        report.passed() && secs < 60.0,
        format!(
            "{} ops, network {} values rel {:.2e}, worst op rel {:.2e} (tol 1e-5), {:.1} s (limit 60 s)",
            report.ops.len(),
            net.checked,
            net.max_rel_error,
            worst,
            secs
        ),
    )
}

fn attention_factor_identity() -> Verdict {
    let err = (0..5).map(|s| attention_identity_error(s).unwrap()).fold(0.0, f64::max);
    verdict(err <= 1e-10, format!("max abs deviation {err:.3e} over 5 seeds (tol 1e-10)"))
}

fn activation_conditions() -> Verdict {
    let p = AttentionParams::<f64>::default();
    let mut rng = SeededRng::new(3);
    let (mut worst_odd, mut sign_failures) = (0.0f64, 0usize);
    for _ in 0..100_000 {
        // Magnitudes spread over 1e-8 .. 1e3, both signs.
        let mag = 10f64.powf(rng.uniform_range(-8.0, 3.0));
        let x = if rng.uniform() < 0.5 { -mag } else { mag };
        worst_odd = worst_odd.max((p.value(-x) + p.value(x)).abs());
        if x * p.value(x) <= 0.0 {
            sign_failures += 1;
        }
    }
    verdict(
        worst_odd <= 1e-12 && sign_failures == 0,
        format!("10^5 samples: max |s(-x)+s(x)| {worst_odd:.1e} (tol 1e-12), {sign_failures} sign failures"),
    )
}

fn reparameterization_equivalence() -> Verdict {
    let mut worst = 0.0f32;
    for (i, cfg) in [SpanConfig::paper(4), SpanConfig::desk(2)].into_iter().enumerate() {
        let model = SpanModel::<f32>::init(cfg, 7 + i as u64).unwrap();
        let fused = fuse_model(&model).unwrap();
        for k in 0..20 {
            let x = uniform([1, 3, 24, 20], 1000 * i as u64 + k);
            let (a, _) = span_forward(&x, &model, Mode::Infer).unwrap();
            let (b, _) = span_forward(&x, &fused, Mode::Infer).unwrap();
            worst = worst.max(a.max_abs_diff(&b).unwrap());
        }
    }
    verdict(worst <= 1e-4, format!("paper-x4 and desk-x2, 20 inputs each: max abs {worst:.2e} (tol 1e-4)"))
}

fn pixel_shuffle_bijection() -> Verdict {
    let mut rng = SeededRng::new(5);
    let mut failures = 0;
    let cases = 400;
    for i in 0..cases {
        let r = 1 + (i % 4);
        let (n, c) = (1 + rng.below(3) as usize, 1 + rng.below(4) as usize);
        let (h, w) = (1 + rng.below(9) as usize, 1 + rng.below(9) as usize);
        let x = Tensor4::<f32>::fill_random(
            Shape4::new(n, c * r * r, h, w).unwrap(),
            rng.next_u64(),
            Distribution::Normal { mean: 0.0, std: 1.0 },
        )
        .unwrap();
        let y = pixel_shuffle(&x, r).unwrap();
        let back = pixel_unshuffle(&y, r).unwrap();
        let exact = back.shape() == x.shape() && back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        let shape_ok = y.shape().dims() == [n, c, h * r, w * r];
        if !(exact && shape_ok) {
            failures += 1;
        }
    }
    verdict(failures == 0, format!("{cases} random shapes, r in 1..=4: {failures} mismatches"))
}

fn parameter_count_band() -> Verdict {
    let cfg = SpanConfig::paper(4);
    let fused = param_count(&cfg, true);
    let materialised = fuse_model(&SpanModel::<f32>::init(cfg, 0).unwrap()).unwrap().num_params();
    let gap = fused as i64 - 498_000;
    verdict(
        (470_000..=500_000).contains(&fused) && fused == materialised,
        format!(
            "fused r=4 C'=48 B=6: {fused} (materialised {materialised}), gap to published 498K: {gap:+} ({:+.1}%), band [470K, 500K]",
            100.0 * gap as f64 / 498_000.0
        ),
    )
}

/// Criterion-7 protocol: desk model (C'=16, B=6, r=2), 2000 iterations on
/// four synthetic images, deterministic seed.
const OVERFIT_SIZE: usize = 96;

fn overfit_images() -> Vec<Tensor4<f32>> {
    (0..4).map(|i| synthetic_image(100 + i, OVERFIT_SIZE, OVERFIT_SIZE)).collect()
}

struct DeskRun {
    model: SpanModel<f32>,
    final_loss: f64,
    secs: f64,
}

fn desk_run(variant: Variant, seed: u64) -> DeskRun {
    let images = overfit_images();
    let set = ImageSet::new((0..4).map(|i| format!("img{i}")).collect(), images.clone()).unwrap();
    let model = SpanModel::init(SpanConfig::desk(2).with_variant(variant), seed).unwrap();
    let cfg = TrainConfig {
        seed,
        log_every: 100,
        ..TrainConfig::desk()
    };
    assert_eq!(cfg.total_steps(), 2000);
    let started = Instant::now();
    let mut trainer = Trainer::new(model, cfg, &set).unwrap();
    trainer.run(None, |_| Ok(())).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let (model, _) = trainer.into_parts();
    // Full-image L1 over the training set: the noise-free end-of-training loss.
    let mut total = 0.0;
    for hr in &images {
        let (sr, _) = span_forward(&bicubic_downscale(hr, 2).unwrap(), &model, Mode::Infer).unwrap();
        total += l1_loss(&sr, hr).unwrap().0;
    }
    DeskRun {
        model,
        final_loss: total / images.len() as f64,
        secs,
    }
}

fn desk_overfit(run: &DeskRun) -> Verdict {
    let pairs: Vec<EvalPair> = overfit_images()
        .into_iter()
        .enumerate()
        .map(|(i, hr)| EvalPair {
            name: format!("img{i}"),
            lr: bicubic_downscale(&hr, 2).unwrap(),
            hr,
        })
        .collect();
    let report = evaluate(&run.model, &pairs, None).unwrap();
    let gain = report.mean_psnr_db - report.mean_bicubic_psnr_db;
    verdict(
        gain >= 1.0 && run.secs <= 900.0,
        format!(
            "PSNR {:.3} dB vs bicubic {:.3} dB: gain {gain:+.3} dB (need +1.0), train {:.0} s (limit 900 s)",
            report.mean_psnr_db, report.mean_bicubic_psnr_db, run.secs
        ),
    )
}

fn ablation_direction(span_seed0: &DeskRun) -> Verdict {
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..3 {
        let full = if seed == 0 { span_seed0.final_loss } else { desk_run(Variant::Span, seed).final_loss };
        let noatt = desk_run(Variant::NoAtt, seed).final_loss;
        let empty = desk_run(Variant::Empty, seed).final_loss;
        if full <= noatt && full <= empty {
            wins += 1;
        }
        rows.push(format!("seed {seed}: span {full:.5} noatt {noatt:.5} empty {empty:.5}"));
    }
    verdict(wins >= 2, format!("span lowest in {wins}/3 seeds; {}", rows.join("; ")))
}

/// BT.601 luma, written out independently of the library.
fn naive_y(img: &Tensor4<f32>) -> Vec<f64> {
    let s = img.shape();
    let mut out = Vec::with_capacity(s.h * s.w);
    for y in 0..s.h {
        for x in 0..s.w {
            let px = |c| img.at(0, c, y, x) as f64;
            out.push(16.0 + 65.481 * px(0) + 128.553 * px(1) + 24.966 * px(2));
        }
    }
    out
}

fn naive_psnr(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    10.0 * (255.0f64.powi(2) / mse).log10()
}

/// Direct 11×11 Gaussian-window SSIM (σ 1.5), valid positions, two-pass moments.
#[allow(clippy::needless_range_loop)]
fn naive_ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let mut sum = 0.0;
    let mut count = 0;
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let at = |img: &[f64], i: usize, j: usize| img[(y + i) * w + x + j];
            let mut mu = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let g = win[i][j] / total;
                    mu.0 += g * at(a, i, j);
                    mu.1 += g * at(b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let g = win[i][j] / total;
                    let (da, db) = (at(a, i, j) - mu.0, at(b, i, j) - mu.1);
                    va += g * da * da;
                    vb += g * db * db;
                    cov += g * da * db;
                }
            }
            sum += ((2.0 * mu.0 * mu.1 + c1) * (2.0 * cov + c2)) / ((mu.0 * mu.0 + mu.1 * mu.1 + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

fn metric_oracles() -> Verdict {
    let (mut psnr_err, mut ssim_err) = (0.0f64, 0.0f64);
    for k in 0..20 {
        let a = uniform([1, 3, 32, 32], 2 * k);
        // Correlated pair: a plus bounded noise, so SSIM is far from both 0 and 1.
        let noise = uniform([1, 3, 32, 32], 2 * k + 1);
        let b = a.zip_map(&noise, "blend", |x, n| (0.8 * x + 0.2 * n).clamp(0.0, 1.0)).unwrap();
        let (ya, yb) = (naive_y(&a), naive_y(&b));
        psnr_err = psnr_err.max((psnr(&a, &b, 0).unwrap() - naive_psnr(&ya, &yb)).abs());
        ssim_err = ssim_err.max((ssim(&a, &b, 0).unwrap() - naive_ssim(&ya, &yb, 32, 32)).abs());
    }
    let y = Tensor4::<f64>::fill_random(Shape4::new(1, 1, 32, 32).unwrap(), 9, Distribution::Uniform { lo: 16.0, hi: 234.0 }).unwrap();
    let shifted = y.map(|v| v + 1.0);
    let one_level = psnr_y(&y, &shifted, 0).unwrap();
    let a = uniform([1, 3, 32, 32], 77);
    let self_ssim = ssim(&a, &a, 0).unwrap();
    let self_ssim_y = ssim_y(&y, &y, 0).unwrap();
    verdict(
        psnr_err <= 1e-6 && ssim_err <= 1e-6 && (one_level - 48.1308).abs() <= 1e-3 && self_ssim == 1.0 && self_ssim_y == 1.0,
        format!(
            "vs naive: psnr {psnr_err:.1e}, ssim {ssim_err:.1e} (tol 1e-6); uniform 1-level diff {one_level:.4} dB; ssim(a,a) {self_ssim}"
        ),
    )
}

fn train_args(dir: &Path, config: &Path, out: &str) -> TrainArgs {
    TrainArgs {
        config: config.to_path_buf(),
        data: dir.join("data"),
        out: dir.join(out),
        seed: None,
        resume: None,
        max_steps: None,
        checkpoint: None,
        log: None,
    }
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("data").join("HR");
    std::fs::create_dir_all(&hr).unwrap();
    for i in 0..3 {
        save_png(&synthetic_image(200 + i, 48, 40), hr.join(format!("{i}.png"))).unwrap();
    }
    let config = dir.path().join("run.json");
    std::fs::write(&config, r#"{"preset": "desk", "train": {"iterations": 40, "batch_size": 4, "patch_size": 32, "seed": 17}}"#).unwrap();
    commands::train(&train_args(dir.path(), &config, "a.spw")).unwrap();
    commands::train(&train_args(dir.path(), &config, "b.spw")).unwrap();
    let a = std::fs::read(dir.path().join("a.spw")).unwrap();
    let b = std::fs::read(dir.path().join("b.spw")).unwrap();
    let init = encode_weights(&SpanModel::<f32>::init(SpanConfig::desk(2), 17).unwrap()).unwrap();
    verdict(
        a == b && a != init,
        format!("two 40-step runs: {} byte weight files identical: {}", a.len(), a == b),
    )
}

fn random_model(rng: &mut SeededRng) -> SpanModel<f32> {
    let mut cfg = SpanConfig {
        scale: 2 + rng.below(3) as usize,
        channels: 1 + rng.below(6) as usize,
        blocks: 1 + rng.below(3) as usize,
        padding: if rng.below(2) == 0 { PadMode::Zero } else { PadMode::Replicate },
        activation: if rng.below(2) == 0 { Activation::Silu } else { Activation::LeakyRelu },
        branches: BranchMask {
            conv1x1: rng.below(2) == 0,
            identity: rng.below(2) == 0,
        },
        ..SpanConfig::desk(2)
    }
    .with_variant(Variant::ALL[rng.below(4) as usize]);
    cfg.block.train_attention_a = rng.below(2) == 0;
    cfg.block.train_attention_b = rng.below(2) == 0;
    let mut model = SpanModel::init(cfg, rng.next_u64()).unwrap();
    model.params.attention.a = rng.uniform_range(0.5, 2.0) as f32;
    model.params.attention.b = rng.uniform_range(0.5, 2.0) as f32;
    if rng.below(4) == 0 {
        model = fuse_model(&model).unwrap();
    }
    model
}

fn persistence() -> Verdict {
    let mut rng = SeededRng::new(11);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let model = random_model(&mut rng);
        let bytes = encode_weights(&model).unwrap();
        let back = decode_weights(&bytes).unwrap();
        let bit_exact = back.config == model.config
            && back.fused == model.fused
            && back
                .params
                .slices(true, true)
                .iter()
                .zip(model.params.slices(true, true))
                .all(|(x, y)| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
        if !bit_exact {
            mismatches += 1;
        }
    }
    let base = encode_weights(&random_model(&mut rng)).unwrap();
    let mutations = 12_000;
    let mut undetected = 0;
    for _ in 0..mutations {
        let mut bytes = base.clone();
        let pos = rng.below(bytes.len() as u64) as usize;
        bytes[pos] ^= 1 + rng.below(255) as u8;
        if !matches!(decode_weights(&bytes), Err(Error::Format(FormatError::Crc { .. }))) {
            undetected += 1;
        }
    }
    verdict(
        mismatches == 0 && undetected == 0,
        format!("1000 models: {mismatches} round-trip mismatches; {mutations} single-byte flips: {undetected} not flagged as CRC errors"),
    )
}

fn lr_schedule() -> Verdict {
    let paper = TrainConfig::paper();
    let p = paper.halving_period;
    let before = lr_at(p - 1, paper.base_lr, p);
    let after = lr_at(p, paper.base_lr, p);
    verdict(
        before == 5e-4 && after == 2.5e-4,
        format!("period {p}: lr_at({}) = {before:e}, lr_at({p}) = {after:e}", p - 1),
    )
}

fn check(id: u32, name: &str, gated: bool, f: impl FnOnce() -> Verdict) -> bool {
    let started = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f));
    let elapsed = started.elapsed();
    let (passed, detail) = match outcome {
        Ok(v) => (v.passed, v.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let tag = match (passed, gated) {
        (true, _) => "PASS",
        (false, true) => "FAIL",
        (false, false) => "INFO-FAIL",
    };
    println!("[{tag}] {id:>2} {name}: {detail} [{:.1?}]", round(elapsed));
    passed || !gated
}

fn round(d: Duration) -> Duration {
    Duration::from_millis(d.as_millis() as u64)
}

fn main() -> ExitCode {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let ok = pool.install(|| {
        let mut ok = true;
        ok &= check(1, "gradient fidelity", true, gradient_fidelity);
        ok &= check(2, "attention factor identity", true, attention_factor_identity);
        ok &= check(3, "activation conditions", true, activation_conditions);
        ok &= check(4, "re-parameterization equivalence", true, reparameterization_equivalence);
        ok &= check(5, "pixel shuffle bijection", true, pixel_shuffle_bijection);
        ok &= check(6, "parameter count band", true, parameter_count_band);
        ok &= check(9, "metric oracles", true, metric_oracles);
        ok &= check(10, "determinism", true, determinism);
        ok &= check(11, "persistence", true, persistence);
        ok &= check(12, "LR schedule", true, lr_schedule);
        let span_run = catch_unwind(|| desk_run(Variant::Span, 0));
        match span_run {
            Ok(run) => {
                ok &= check(7, "desk-scale overfit", true, || desk_overfit(&run));
                ok &= check(8, "ablation direction (informational)", false, || ablation_direction(&run));
            }
            Err(_) => {
                ok &= check(7, "desk-scale overfit", true, || panic!("training run failed"));
                check(8, "ablation direction (informational)", false, || panic!("training run failed"));
            }
        }
        ok
    });
    println!("acceptance: {}", if ok { "all gated criteria passed" } else { "FAILED" });
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
