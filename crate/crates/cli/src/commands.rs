use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rfsplat_core::io::{read_checkpoint, read_spectrum, write_pgm, write_spectrum};
use rfsplat_core::metrics::{
    compare, evaluate, read_eval_csv, summarize, write_eval_csv, write_summary_csv, ConsistencyReport, MetricSummary,
};
use rfsplat_core::raster::{magnitude, rasterize_forward};
use rfsplat_core::rfsim::{gen_dataset, load_dataset, rssi_estimate, rssi_from_image, DatasetConfig};
use rfsplat_core::train::{load_resume, train, train_from, TrainOutputs};
use rfsplat_core::GaussianCloud;

use crate::args::{BenchArgs, EvalArgs, GenDataArgs, RenderArgs, RssiArgs, TrainArgs};
use crate::settings::{out_file, Settings};

pub const REFERENCE_RENDER_MS: f64 = 0.39;
const DEFAULT_SWEEP: [u64; 4] = [1_000, 4_000, 16_000, 64_000];

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let s = Settings::load(&a.common)?;
    let d = DatasetConfig::default();
    let mut cfg = DatasetConfig {
        seed: s.seed(d.seed),
        n_train: s.pick(a.n, "n", d.n_train as u64)? as usize,
        n_test: s.pick(a.n_test, "n_test", d.n_test as u64)? as usize,
        width: s.pick(a.width, "width", d.width as u64)? as usize,
        height: s.pick(a.height, "height", d.height as u64)? as usize,
        spec: d.spec,
    };
    cfg.spec.emitter_count = (
        s.pick(None, "emitters_min", cfg.spec.emitter_count.0)?,
        s.pick(None, "emitters_max", cfg.spec.emitter_count.1)?,
    );
    cfg.spec.rx_position = s.vec3("rx", cfg.spec.rx_position)?;
    if cfg.n_train == 0 {
        bail!("n must be at least 1");
    }
    let manifest = gen_dataset(&cfg, &a.common.out)?;
    print!("{}", manifest.to_text());
    Ok(())
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let s = Settings::load(&a.common)?;
    let cfg = s.train_config(a.iters, a.gaussians, a.supervision, a.sampling)?;
    let cfg = rfsplat_core::train::TrainConfig {
        log_every: a.log_every.unwrap_or(cfg.log_every),
        checkpoint_every: a.checkpoint_every.unwrap_or(cfg.checkpoint_every),
        max_wall_seconds: a.max_wall_seconds.or(cfg.max_wall_seconds),
        ..cfg
    };
    let data = s.dataset(&a.data)?;
    let outputs = TrainOutputs {
        metrics_csv: Some(out_file(&a.common.out, "metrics.csv")?),
        checkpoint_dir: Some(a.common.out.clone()),
    };
    let outcome = match &a.resume {
        Some(ckpt) => {
            let (cloud, state) = load_resume(ckpt)?;
            if a.gaussians.is_some() && cloud.len() != cfg.n_gaussians {
                log::warn!("--gaussians ignored: resuming a cloud of {}", cloud.len());
            }
            log::info!("resuming from step {}", state.step);
            train_from(cloud, state, &data, &cfg, &outputs)?
        }
        None => train(&data, &cfg, &outputs)?,
    };
    if let Some(last) = outcome.log.last() {
        println!(
            "iteration {} loss {:.6} psnr {:.3}",
            last.iteration, last.loss, last.psnr
        );
    }
    if let Some(path) = outcome.final_checkpoint {
        println!("checkpoint {}", path.display());
    }
    Ok(())
}

pub fn render(a: &RenderArgs) -> Result<()> {
    let s = Settings::load(&a.common)?;
    let cloud = read_checkpoint(&a.checkpoint)?;
    let gt = a.gt.as_deref().map(read_spectrum).transpose()?;
    let (dw, dh) = gt.as_ref().map_or((180, 45), |g| (g.width as u64, g.height as u64));
    let width = s.pick(a.width, "width", dw)? as usize;
    let height = s.pick(a.height, "height", dh)? as usize;
    let (img, _) = rasterize_forward(&cloud, &s.pose()?, a.tx, width, height, &s.render_config()?)?;
    let mag = magnitude(&img)?;
    let stored = if a.channels == 2 { &img } else { &mag };
    write_spectrum(stored, &out_file(&a.common.out, &format!("{}.rfsi", a.name))?)?;
    write_pgm(&mag, &a.common.out.join(format!("{}.pgm", a.name)))?;
    if let Some(gt) = gt {
        let m = compare(&a.name, &img, &gt)?;
        println!("ssim {:.6} psnr {:.4} mse {:.6e}", m.ssim, m.psnr, m.mse);
    }
    Ok(())
}

pub fn format_table(s: &MetricSummary) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "{:<10} {:>10} {:>10}", "metric", "mean", "median");
    let _ = writeln!(t, "{:<10} {:>10.4} {:>10.4}", "SSIM", s.ssim.mean, s.ssim.median);
    let _ = writeln!(t, "{:<10} {:>10.4} {:>10.4}", "PSNR (dB)", s.psnr.mean, s.psnr.median);
    let _ = writeln!(t, "{:<10} {:>10.6} {:>10.6}", "MSE", s.mse.mean, s.mse.median);
    let _ = write!(t, "samples {}", s.count);
    t
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let s = Settings::load(&a.common)?;
    let rows = if let Some(results) = &a.results {
        read_eval_csv(results)?
    } else {
        let gt_index = a.data.as_ref().context("--data is required")?;
        let gt = s.dataset(gt_index)?;
        if let Some(ckpt) = &a.checkpoint {
            let cloud = read_checkpoint(ckpt)?;
            evaluate(&cloud, &gt, &s.pose()?, &s.render_config()?)?
        } else if let Some(pred_index) = &a.pred {
            let pred = load_dataset(pred_index)?;
            let by_id: HashMap<&str, _> = pred.iter().map(|p| (p.id.as_str(), &p.spectrum)).collect();
            gt.iter()
                .map(|g| {
                    let p = by_id
                        .get(g.id.as_str())
                        .with_context(|| format!("no prediction for sample '{}'", g.id))?;
                    Ok(compare(&g.id, p, &g.spectrum)?)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            bail!("one of --checkpoint, --pred or --results is required");
        }
    };
    let summary = summarize(&rows)?;
    write_eval_csv(&out_file(&a.common.out, "eval_samples.csv")?, &rows)?;
    write_summary_csv(&a.common.out.join("eval_summary.csv"), &summary)?;
    println!("{}", format_table(&summary));
    let c = ConsistencyReport::from_summary(&summary);
    println!(
        "median psnr vs psnr(median mse): {:.4} dB; mean psnr - psnr(mean mse): {:.4} dB",
        c.median_gap_db, c.mean_excess_db
    );
    Ok(())
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn time_renders(cloud: &GaussianCloud, reps: usize, w: usize, h: usize, s: &Settings) -> Result<Vec<f64>> {
    let pose = s.pose()?;
    let cfg = s.render_config()?;
    let tx = [2.0, 1.0, 2.0];
    let mut times = Vec::with_capacity(reps);
    for rep in 0..=reps {
        let start = Instant::now();
        let out = rasterize_forward(cloud, &pose, tx, w, h, &cfg)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        drop(out);
        if rep > 0 {
            times.push(ms);
        }
    }
    times.sort_by(f64::total_cmp);
    Ok(times)
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let s = Settings::load(&a.common)?;
    let width = s.pick(a.width, "width", 360)? as usize;
    let height = s.pick(a.height, "height", 90)? as usize;
    let reps = s.pick(a.reps, "reps", 100)? as usize;
    let sweep_reps = s.pick(a.sweep_reps, "sweep_reps", 10)? as usize;
    let sweep = match &a.sweep {
        Some(v) => v.clone(),
        None => s.list::<u64>("sweep")?.unwrap_or_else(|| DEFAULT_SWEEP.to_vec()),
    };
    if reps == 0 || sweep_reps == 0 {
        bail!("repetition counts must be at least 1");
    }
    let base = s.train_config(None, None, None, None)?;
    let random_cloud = |n: u64| -> Result<GaussianCloud> {
        Ok(rfsplat_core::train::TrainConfig {
            n_gaussians: n as usize,
            ..base.clone()
        }
        .init_cloud()?)
    };

    let cloud = match &a.checkpoint {
        Some(path) => read_checkpoint(path)?,
        None => random_cloud(base.n_gaussians as u64)?,
    };
    let times = time_renders(&cloud, reps, width, height, &s)?;
    let mut cdf = String::from("latency_ms,cdf\n");
    for (k, t) in times.iter().enumerate() {
        let _ = writeln!(cdf, "{t},{}", (k + 1) as f64 / times.len() as f64);
    }
    fs::write(out_file(&a.common.out, "bench_cdf.csv")?, cdf)?;

    let mut summary = String::from("gaussians,width,height,reps,p50_ms,p95_ms,p99_ms,mean_ms,reference_ms\n");
    let mut line = |n: usize, reps: usize, t: &[f64]| {
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        let _ = writeln!(
            summary,
            "{n},{width},{height},{reps},{},{},{},{mean},{REFERENCE_RENDER_MS}",
            percentile(t, 50.0),
            percentile(t, 95.0),
            percentile(t, 99.0)
        );
    };
    line(cloud.len(), reps, &times);
    println!(
        "{} gaussians at {width}x{height}: p50 {:.3} ms, p95 {:.3} ms, p99 {:.3} ms (reference figure {REFERENCE_RENDER_MS} ms on a discrete GPU)",
        cloud.len(),
        percentile(&times, 50.0),
        percentile(&times, 95.0),
        percentile(&times, 99.0)
    );
    fs::write(a.common.out.join("bench_summary.csv"), summary)?;

    let mut sweep_csv = String::from("gaussians,reps,p50_ms,p95_ms,p99_ms\n");
    for n in sweep {
        if n == 0 {
            bail!("sweep counts must be at least 1");
        }
        let t = time_renders(&random_cloud(n)?, sweep_reps, width, height, &s)?;
        let _ = writeln!(
            sweep_csv,
            "{n},{sweep_reps},{},{},{}",
            percentile(&t, 50.0),
            percentile(&t, 95.0),
            percentile(&t, 99.0)
        );
        println!("sweep n={n}: p50 {:.3} ms", percentile(&t, 50.0));
    }
    fs::write(a.common.out.join("bench_sweep.csv"), sweep_csv)?;
    Ok(())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn rssi(a: &RssiArgs) -> Result<()> {
    let s = Settings::load(&a.common)?;
    let fraction = s.pick(a.fraction, "fraction", 0.1)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        bail!("fraction must be in (0, 1], got {fraction}");
    }
    let offset = s.pick(None, "rssi_offset_db", 0.0)?;
    let seed = s.seed(0);
    let data = s.dataset(&a.data)?;
    if data.is_empty() {
        bail!("{} lists no samples", a.data.display());
    }
    let cloud = a.checkpoint.as_deref().map(read_checkpoint).transpose()?;
    let pose = s.pose()?;
    let cfg = s.render_config()?;

    let mut csv = String::from("id,tx_x,tx_y,tx_z,predicted_db,predicted_full_db,oracle_db,error_db\n");
    let (mut errors, mut gaps) = (Vec::new(), Vec::new());
    for (k, sample) in data.iter().enumerate() {
        let gt = &sample.spectrum;
        let sample_seed = seed.wrapping_add(k as u64);
        let oracle = rssi_from_image(gt, 1.0, sample_seed, offset)?;
        let (pred, full) = match &cloud {
            Some(c) => (
                rssi_estimate(c, &pose, sample.tx_position, gt.width, gt.height, fraction, sample_seed, offset, &cfg)?,
                rssi_estimate(c, &pose, sample.tx_position, gt.width, gt.height, 1.0, sample_seed, offset, &cfg)?,
            ),
            None => (rssi_from_image(gt, fraction, sample_seed, offset)?, oracle),
        };
        let err = (pred - oracle).abs();
        errors.push(err);
        gaps.push((pred - full).abs());
        let p = sample.tx_position;
        let _ = writeln!(csv, "{},{},{},{},{pred},{full},{oracle},{err}", sample.id, p[0], p[1], p[2]);
    }
    fs::write(out_file(&a.common.out, "rssi.csv")?, csv)?;
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let (med, gap) = (median(&errors), median(&gaps));
    fs::write(
        a.common.out.join("rssi_summary.csv"),
        format!("samples,fraction,median_error_db,mean_error_db,median_fraction_gap_db\n{},{fraction},{med},{mean},{gap}\n", errors.len()),
    )?;
    println!("rssi error over {} positions: median {med:.3} dB, mean {mean:.3} dB (fraction {fraction})", errors.len());
    Ok(())
}

