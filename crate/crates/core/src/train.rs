//! Training loop: sample, render, loss, backward, Adam.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::ViewPose;
use crate::io::{adam_state_path, read_adam_state, read_checkpoint, write_adam_state, write_checkpoint};
use crate::loss::{combined_loss, psnr_from_mse};
use crate::mlp::MlpArchitecture;
use crate::optim::{AdamConfig, AdamState, LearningRates};
use crate::raster::{magnitude, magnitude_backward, rasterize_backward, rasterize_forward, RenderConfig, SpectrumImage};
use crate::rfsim::TxSample;
use crate::scene::{init_uniform, GaussianCloud, SceneBounds};

pub const METRICS_HEADER: &str = "iteration,loss,l1,ssim_term,psnr,wall_ms";

/// What the rendered image is compared against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Supervision {
    /// Magnitude of the rendered signal vs a 1-channel target.
    #[default]
    Magnitude,
    /// Both channels vs a 2-channel target.
    Complex,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Sampling {
    /// Independent uniform draw each iteration.
    #[default]
    Uniform,
    /// Fresh permutation of the dataset every epoch.
    EpochShuffle,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lambda_dssim: f64,
    pub lr: LearningRates,
    pub adam: AdamConfig,
    /// Total iteration count, including any resumed steps.
    pub iterations: u64,
    pub seed: u64,
    pub n_gaussians: usize,
    pub arch: MlpArchitecture,
    pub bounds: SceneBounds,
    /// Initial isotropic scale; `None` means 2% of the bounds diagonal.
    pub init_scale: Option<f64>,
    pub init_opacity_logit: f64,
    pub supervision: Supervision,
    pub sampling: Sampling,
    pub pose: ViewPose,
    pub render: RenderConfig,
    /// Rows are written every `log_every` iterations; 0 disables logging.
    pub log_every: u64,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Stops early once exceeded. Ignored when `render.deterministic`.
    pub max_wall_seconds: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_dssim: 0.2,
            lr: LearningRates::default(),
            adam: AdamConfig::default(),
            iterations: 5000,
            seed: 0,
            n_gaussians: 2000,
            arch: MlpArchitecture::default(),
            bounds: SceneBounds {
                min_corner: [-6.0, -0.5, -6.0],
                max_corner: [6.0, 6.0, 6.0],
            },
            init_scale: None,
            init_opacity_logit: -2.0,
            supervision: Supervision::Magnitude,
            sampling: Sampling::Uniform,
            pose: ViewPose::default(),
            render: RenderConfig::default(),
            log_every: 100,
            checkpoint_every: 0,
            max_wall_seconds: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_dssim) {
            return Err(Error::InvalidArgument(format!(
                "lambda_dssim must be in [0, 1], got {}",
                self.lambda_dssim
            )));
        }
        self.lr.validate()?;
        self.adam.validate()?;
        self.bounds.validate()?;
        self.arch.validate_signal()?;
        if self.n_gaussians == 0 {
            return Err(Error::InvalidArgument("n_gaussians must be at least 1".into()));
        }
        if let Some(s) = self.init_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("init_scale must be positive, got {s}")));
            }
        }
        if !self.init_opacity_logit.is_finite() {
            return Err(Error::InvalidArgument("init_opacity_logit must be finite".into()));
        }
        Ok(())
    }

    pub fn initial_scale(&self) -> f64 {
        self.init_scale.unwrap_or(0.02 * self.bounds.diagonal())
    }

    pub fn init_cloud(&self) -> Result<GaussianCloud> {
        init_uniform(
            &self.bounds,
            self.n_gaussians,
            self.seed,
            self.initial_scale(),
            self.init_opacity_logit,
            self.arch,
        )
    }
}

/// Window-averaged training statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub loss: f64,
    pub l1: f64,
    pub ssim_term: f64,
    pub psnr: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration, self.loss, self.l1, self.ssim_term, self.psnr, self.wall_ms
        )
    }
}

/// Optional files produced during training.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub metrics_csv: Option<PathBuf>,
    /// Checkpoints go to `ckpt_{iteration:06}.gspc` plus the final `final.gspc`.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub cloud: GaussianCloud,
    pub state: AdamState,
    pub log: Vec<MetricsRow>,
    /// Per-iteration loss, for the iterations run in this call.
    pub losses: Vec<f64>,
    pub final_checkpoint: Option<PathBuf>,
}

/// Index of the training sample used at `iteration`. Depends only on the
/// seed, the iteration and the dataset size, so resumed runs draw the same
/// sequence.
pub fn sample_index(seed: u64, iteration: u64, n: usize, sampling: Sampling) -> usize {
    const UNIFORM_STREAM: u64 = 1 << 40;
    const SHUFFLE_STREAM: u64 = 2 << 40;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match sampling {
        Sampling::Uniform => {
            rng.set_stream(UNIFORM_STREAM + iteration);
            rng.random_range(0..n)
        }
        Sampling::EpochShuffle => {
            let epoch = iteration / n as u64;
            rng.set_stream(SHUFFLE_STREAM + epoch);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order[(iteration % n as u64) as usize]
        }
    }
}

/// Checks that the dataset is usable for `supervision` and returns its dims.
pub fn dataset_dims(dataset: &[TxSample], supervision: Supervision) -> Result<(usize, usize)> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::InvalidArgument("training dataset is empty".into()))?;
    let (w, h) = (first.spectrum.width, first.spectrum.height);
    let channels = match supervision {
        Supervision::Magnitude => 1,
        Supervision::Complex => 2,
    };
    for s in dataset {
        if s.spectrum.width != w || s.spectrum.height != h {
            return Err(Error::DimensionMismatch(format!(
                "sample '{}' is {}x{}, expected {w}x{h}",
                s.id, s.spectrum.width, s.spectrum.height
            )));
        }
        if s.spectrum.channels != channels {
            return Err(Error::DimensionMismatch(format!(
                "sample '{}' has {} channels, {:?} supervision needs {channels}",
                s.id, s.spectrum.channels, supervision
            )));
        }
    }
    Ok((w, h))
}

pub struct StepResult {
    pub loss: f64,
    pub l1: f64,
    pub ssim_term: f64,
    pub mse: f64,
}

/// Forward, loss and backward for one sample, followed by one Adam update.
pub fn train_step(
    cloud: &mut GaussianCloud,
    state: &mut AdamState,
    sample: &TxSample,
    cfg: &TrainConfig,
) -> Result<StepResult> {
    let gt = &sample.spectrum;
    let (img, aux) = rasterize_forward(cloud, &cfg.pose, sample.tx_position, gt.width, gt.height, &cfg.render)?;
    let (pred, to_signal): (SpectrumImage, bool) = match cfg.supervision {
        Supervision::Magnitude => (magnitude(&img)?, true),
        Supervision::Complex => (img.clone(), false),
    };
    let value = combined_loss(&pred, gt, cfg.lambda_dssim)?;
    let d_image = if to_signal { magnitude_backward(&img, &value.grad)? } else { value.grad };
    let grads = rasterize_backward(&d_image, cloud, &cfg.pose, sample.tx_position, &aux)?;
    state.update(cloud, &grads, &cfg.lr, &cfg.adam)?;
    let mse = pred.data.iter().zip(&gt.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.data.len() as f64;
    Ok(StepResult {
        loss: value.loss,
        l1: value.l1,
        ssim_term: value.ssim_term,
        mse,
    })
}

/// Initializes a cloud from `cfg` and trains it.
pub fn train(dataset: &[TxSample], cfg: &TrainConfig, outputs: &TrainOutputs) -> Result<TrainOutcome> {
    cfg.validate()?;
    dataset_dims(dataset, cfg.supervision)?;
    let cloud = cfg.init_cloud()?;
    let state = AdamState::new(&cloud);
    train_from(cloud, state, dataset, cfg, outputs)
}

/// Loads a checkpoint and its optimizer sidecar. A missing sidecar gives a
/// fresh optimizer state at step 0.
pub fn load_resume(checkpoint: &Path) -> Result<(GaussianCloud, AdamState)> {
    let cloud = read_checkpoint(checkpoint)?;
    let sidecar = adam_state_path(checkpoint);
    let state = if sidecar.exists() {
        let s = read_adam_state(&sidecar)?;
        if !s.matches(&cloud) {
            return Err(Error::format(&sidecar, "optimizer state does not match the checkpoint"));
        }
        s
    } else {
        log::warn!("no optimizer state next to {}; restarting moments", checkpoint.display());
        AdamState::new(&cloud)
    };
    Ok((cloud, state))
}

/// Continues training from `state.step` up to `cfg.iterations`.
pub fn train_from(
    mut cloud: GaussianCloud,
    mut state: AdamState,
    dataset: &[TxSample],
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    cloud.validate()?;
    if !state.matches(&cloud) {
        return Err(Error::DimensionMismatch("optimizer state does not match the cloud".into()));
    }
    dataset_dims(dataset, cfg.supervision)?;

    let deterministic = cfg.render.deterministic;
    let wall_limit = if deterministic { None } else { cfg.max_wall_seconds };
    let start = Instant::now();
    let mut log = Vec::new();
    let mut losses = Vec::new();
    let mut window = [0.0f64; 4];
    let mut window_len = 0usize;

    let mut csv = match &outputs.metrics_csv {
        Some(path) => {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let mut text = String::from(METRICS_HEADER);
            text.push('\n');
            fs::write(path, &text).map_err(|e| Error::io(path, e))?;
            Some((path.clone(), text))
        }
        None => None,
    };

    while state.step < cfg.iterations {
        let iteration = state.step;
        let k = sample_index(cfg.seed, iteration, dataset.len(), cfg.sampling);
        let r = train_step(&mut cloud, &mut state, &dataset[k], cfg)?;
        losses.push(r.loss);
        for (acc, v) in window.iter_mut().zip([r.loss, r.l1, r.ssim_term, r.mse]) {
            *acc += v;
        }
        window_len += 1;
        let done = state.step;

        let log_now = cfg.log_every > 0 && (done.is_multiple_of(cfg.log_every) || done == cfg.iterations);
        if log_now {
            let n = window_len as f64;
            let row = MetricsRow {
                iteration: done,
                loss: window[0] / n,
                l1: window[1] / n,
                ssim_term: window[2] / n,
                psnr: psnr_from_mse(window[3] / n),
                wall_ms: if deterministic { 0 } else { start.elapsed().as_millis() as u64 },
            };
            log::info!(
                "iter {done}: loss {:.5} l1 {:.5} ssim_term {:.5} psnr {:.2}",
                row.loss,
                row.l1,
                row.ssim_term,
                row.psnr
            );
            if let Some((path, text)) = &mut csv {
                text.push_str(&row.to_csv_line());
                text.push('\n');
                fs::write(&*path, text.as_bytes()).map_err(|e| Error::io(path.as_path(), e))?;
            }
            log.push(row);
            window = [0.0; 4];
            window_len = 0;
        }

        if let Some(dir) = &outputs.checkpoint_dir {
            if cfg.checkpoint_every > 0 && done.is_multiple_of(cfg.checkpoint_every) && done != cfg.iterations {
                save(&cloud, &state, &dir.join(format!("ckpt_{done:06}.gspc")))?;
            }
        }
        if let Some(limit) = wall_limit {
            if start.elapsed().as_secs_f64() > limit {
                log::info!("wall-clock limit reached after {done} iterations");
                break;
            }
        }
    }

    let final_checkpoint = match &outputs.checkpoint_dir {
        Some(dir) => {
            let path = dir.join("final.gspc");
            save(&cloud, &state, &path)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainOutcome {
        cloud,
        state,
        log,
        losses,
        final_checkpoint,
    })
}

/// Writes a checkpoint and its optimizer sidecar.
pub fn save(cloud: &GaussianCloud, state: &AdamState, path: &Path) -> Result<()> {
    write_checkpoint(cloud, path)?;
    write_adam_state(state, &adam_state_path(path))
}
