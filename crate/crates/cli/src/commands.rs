use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use span_core::gradcheck::{run_suite, GradcheckOptions};
use span_core::io::{
    load_checkpoint, load_config, load_png, load_weights, png_files, save_checkpoint, save_png, save_weights,
    Checkpoint, DatasetSpec,
};
use span_core::metrics::evaluate;
use span_core::model::{forward_flops, fuse_model, span_forward, Mode, SpanModel};
use span_core::train::{LogRow, TrainState, Trainer};
use span_core::{Distribution, Error, Shape4, Tensor4};

use crate::outcome::Failure;
use crate::{BenchArgs, EvalArgs, GradcheckArgs, InferArgs, InitArgs, TrainArgs};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn maybe_fuse(model: SpanModel<f32>, fuse: bool) -> Result<SpanModel<f32>, Failure> {
    if !fuse {
        return Ok(model);
    }
    if model.fused {
        info!("weights are already fused");
        return Ok(model);
    }
    Ok(fuse_model(&model)?)
}

fn open_log(path: &Path, append: bool) -> Result<BufWriter<File>, Failure> {
    let fresh = !append || !path.exists();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    if fresh {
        writeln!(w, "{}", LogRow::CSV_HEADER).map_err(|e| io_err(path, e))?;
    }
    Ok(w)
}

pub fn train(a: &TrainArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let data = DatasetSpec::new(&a.data).load_training_set()?;
    let (model, state, train_cfg) = match &a.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.model.config != cfg.model || ck.train != cfg.train {
                warn!("{}: checkpoint settings differ from the config; continuing with the checkpoint's", path.display());
            }
            (ck.model, ck.state, ck.train)
        }
        None => {
            let model = SpanModel::init(cfg.model, cfg.train.seed)?;
            let state = TrainState::fresh(&model);
            (model, state, cfg.train)
        }
    };
    let mut trainer = Trainer::resume(model, train_cfg, &data, state)?;
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    let ckpt_path: PathBuf = a.checkpoint.clone().unwrap_or_else(|| a.out.with_extension("ckpt"));

    let mut log = open_log(&log_path, a.resume.is_some())?;
    let started = Instant::now();
    let rows = trainer.run(a.max_steps, |row| {
        info!("step {} loss {:.6} lr {:.3e}", row.iteration, row.loss, row.lr);
        writeln!(log, "{}", row.csv()).map_err(|e| io_err(&log_path, e))
    })?;
    log.flush().map_err(|e| io_err(&log_path, e))?;

    let done = trainer.is_done();
    let total = trainer.config().total_steps();
    let global = trainer.state().global_step(trainer.config());
    let (model, state) = trainer.into_parts();
    save_weights(&model, &a.out)?;
    save_checkpoint(
        &Checkpoint {
            model,
            state,
            train: train_cfg,
        },
        &ckpt_path,
    )?;
    let last = rows.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "{} step {global}/{total}, last logged loss {last:.6}, {:.1} s",
        if done { "finished" } else { "paused at" },
        started.elapsed().as_secs_f64()
    );
    println!("weights: {}", a.out.display());
    println!("checkpoint: {}", ckpt_path.display());
    println!("log: {}", log_path.display());
    Ok(())
}

pub fn init(a: &InitArgs) -> Result<(), Failure> {
    let cfg = load_config(&a.config)?;
    let model = SpanModel::init(cfg.model, a.seed.unwrap_or(cfg.train.seed))?;
    let model = maybe_fuse(model, a.fuse)?;
    save_weights(&model, &a.out)?;
    println!("{} parameters -> {}", model.num_params(), a.out.display());
    Ok(())
}

pub fn infer(a: &InferArgs) -> Result<(), Failure> {
    let model = maybe_fuse(load_weights(&a.weights)?, a.fuse)?;
    if let Some(r) = a.scale {
        if r != model.config.scale {
            return Err(Failure::data(format!(
                "{}: weights upscale by {}, but --scale {r} was requested",
                a.weights.display(),
                model.config.scale
            )));
        }
    }
    let inputs: Vec<(String, PathBuf)> = if a.input.is_dir() {
        png_files(&a.input)?.into_iter().collect()
    } else if a.input.is_file() {
        let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("output").to_string();
        vec![(stem, a.input.clone())]
    } else {
        return Err(Failure::data(format!("{}: no such file or directory", a.input.display())));
    };
    if inputs.is_empty() {
        return Err(Failure::data(format!("{}: no PNG images found", a.input.display())));
    }
    if model.config.image_channels != 3 {
        return Err(Failure::data(format!(
            "{}: weights expect {} image channels; PNG inputs are RGB",
            a.weights.display(),
            model.config.image_channels
        )));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    for (stem, path) in &inputs {
        let img = load_png(path)?;
        let started = Instant::now();
        let (sr, _) = span_forward(&img, &model, Mode::Infer)?;
        let dst = a.out.join(format!("{stem}.png"));
        save_png(&sr, &dst)?;
        let s = sr.shape();
        println!("{} -> {} ({}x{}, {:.1} ms)", path.display(), dst.display(), s.h, s.w, started.elapsed().as_secs_f64() * 1e3);
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), Failure> {
    let model = maybe_fuse(load_weights(&a.weights)?, a.fuse)?;
    let spec = DatasetSpec {
        root: a.data.clone(),
        force_degrade: a.degrade,
    };
    let pairs = spec.load_eval_pairs(model.config.scale)?;
    let report = evaluate(&model, &pairs, a.border)?;
    let text = if a.report.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        report.to_json()
    } else {
        report.to_csv()
    };
    std::fs::write(&a.report, text).map_err(|e| io_err(&a.report, e))?;
    println!(
        "{} images (x{}, border {}): PSNR {:.3} dB, SSIM {:.4}; bicubic PSNR {:.3} dB, SSIM {:.4}",
        report.rows.len(),
        report.scale,
        report.border,
        report.mean_psnr_db,
        report.mean_ssim,
        report.mean_bicubic_psnr_db,
        report.mean_bicubic_ssim
    );
    println!("report: {}", a.report.display());
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), Failure> {
    if a.precision != 64 {
        return Err(Failure::usage(format!(
            "--precision {}: gradient checks run in 64-bit only",
            a.precision
        )));
    }
    let report = run_suite(GradcheckOptions {
        seed: a.seed,
        corrupt_backward: a.corrupt_backward,
    })?;
    print!("{}", report.table());
    if report.passed() {
        println!("all checks within tolerance");
        Ok(())
    } else {
        let failed: Vec<&str> = report.ops.iter().filter(|o| !o.passed()).map(|o| o.op.as_str()).collect();
        Err(Failure::Numeric(format!("gradient check failed: {}", failed.join(", "))))
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), Failure> {
    let parsed = s
        .split_once(['x', 'X'])
        .and_then(|(h, w)| Some((h.trim().parse().ok()?, w.trim().parse().ok()?)))
        .filter(|&(h, w): &(usize, usize)| h > 0 && w > 0);
    parsed.ok_or_else(|| Failure::usage(format!("--size {s}: expected HxW, e.g. 256x256")))
}

pub fn bench(a: &BenchArgs) -> Result<(), Failure> {
    let (h, w) = parse_size(&a.size)?;
    if a.runs == 0 {
        return Err(Failure::usage("--runs must be at least 1"));
    }
    let model = maybe_fuse(load_weights(&a.weights)?, a.fuse)?;
    let shape = Shape4::new(1, model.config.image_channels, h, w)?;
    let input = Tensor4::<f32>::fill_random(shape, 0, Distribution::Uniform { lo: 0.0, hi: 1.0 })?;
    for _ in 0..a.warmup {
        span_forward(&input, &model, Mode::Infer)?;
    }
    let mut times = Vec::with_capacity(a.runs);
    for _ in 0..a.runs {
        let started = Instant::now();
        span_forward(&input, &model, Mode::Infer)?;
        times.push(started.elapsed().as_secs_f64() * 1e3);
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / times.len() as f64;
    println!("input {h}x{w}, scale x{}, fused {}", model.config.scale, model.fused);
    println!("parameters {}", model.num_params());
    println!("FLOPs {:.3} G", forward_flops(&model, 1, h, w) as f64 / 1e9);
    println!(
        "forward {mean:.2} ms mean, {:.2} ms std over {} runs ({} warm-up)",
        var.sqrt(),
        a.runs,
        a.warmup
    );
    Ok(())
}
