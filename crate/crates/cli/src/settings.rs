use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use rfsplat_core::config::KeyValues;
use rfsplat_core::geometry::ViewPose;
use rfsplat_core::raster::{Precision, RenderConfig, TransmittanceMode};
use rfsplat_core::rfsim::{load_dataset_with, LoadOptions, TxSample};
use rfsplat_core::scene::SceneBounds;
use rfsplat_core::train::{Sampling, Supervision, TrainConfig};

use crate::args::{Common, SamplingArg, SupervisionArg};

pub const KEYS: &[&str] = &[
    "seed",
    "threads",
    "deterministic",
    "width",
    "height",
    "n",
    "n_test",
    "emitters_min",
    "emitters_max",
    "iterations",
    "gaussians",
    "lambda_dssim",
    "lr_position_init",
    "lr_position_final",
    "lr_position_delay_mult",
    "lr_position_max_steps",
    "lr_opacity",
    "lr_scaling",
    "lr_rotation",
    "lr_mlp",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "bounds_min",
    "bounds_max",
    "init_scale",
    "init_opacity_logit",
    "supervision",
    "sampling",
    "log_every",
    "checkpoint_every",
    "max_wall_seconds",
    "rx",
    "precision",
    "transmittance",
    "tile_size",
    "azimuth_offset_deg",
    "fraction",
    "rssi_offset_db",
    "reps",
    "sweep",
    "sweep_reps",
];

/// Flag values layered over an optional config file.
pub struct Settings {
    kv: Option<KeyValues>,
    pub seed: Option<u64>,
    pub deterministic: bool,
}

impl Settings {
    pub fn load(common: &Common) -> Result<Self> {
        let kv = match &common.config {
            Some(path) => {
                let kv = KeyValues::read(path)?;
                kv.reject_unknown(KEYS)?;
                Some(kv)
            }
            None => None,
        };
        let mut s = Self {
            kv,
            seed: common.seed,
            deterministic: common.deterministic,
        };
        if s.seed.is_none() {
            s.seed = s.file_value("seed")?;
        }
        if !s.deterministic {
            s.deterministic = s.file_value("deterministic")?.unwrap_or(false);
        }
        Ok(s)
    }

    fn file_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match &self.kv {
            Some(kv) => Ok(kv.parse_opt(key)?),
            None => Ok(None),
        }
    }

    /// Flag if given, else the config entry, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        })
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        match &self.kv {
            Some(kv) if kv.get(key).is_some() => Ok(Some(kv.require_list(key)?)),
            _ => Ok(None),
        }
    }

    pub fn seed(&self, default: u64) -> u64 {
        self.seed.unwrap_or(default)
    }

    pub fn vec3(&self, key: &str, default: [f64; 3]) -> Result<[f64; 3]> {
        match self.list::<f64>(key)? {
            Some(v) if v.len() == 3 => Ok([v[0], v[1], v[2]]),
            Some(v) => bail!("config key '{key}' needs 3 values, got {}", v.len()),
            None => Ok(default),
        }
    }

    pub fn pose(&self) -> Result<ViewPose> {
        let rx = self.vec3("rx", [0.0; 3])?;
        Ok(ViewPose::identity_at(rx))
    }

    /// Loads a ground-truth index, applying `azimuth_offset_deg`.
    pub fn dataset(&self, index: &Path) -> Result<Vec<TxSample>> {
        let opts = LoadOptions {
            azimuth_offset_deg: self.pick(None, "azimuth_offset_deg", 0.0)?,
        };
        Ok(load_dataset_with(index, &opts)?)
    }

    pub fn render_config(&self) -> Result<RenderConfig> {
        let mut cfg = RenderConfig {
            deterministic: self.deterministic,
            ..RenderConfig::default()
        };
        cfg.tile_size = self.pick(None, "tile_size", cfg.tile_size)?;
        cfg.precision = match self.pick(None, "precision", "f32".to_string())?.as_str() {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            other => bail!("precision must be f32 or f64, got '{other}'"),
        };
        cfg.transmittance = match self.pick(None, "transmittance", "recompute".to_string())?.as_str() {
            "recompute" => TransmittanceMode::Recompute,
            "stored" => TransmittanceMode::Stored,
            other => bail!("transmittance must be recompute or stored, got '{other}'"),
        };
        Ok(cfg)
    }

    pub fn train_config(
        &self,
        iters: Option<u64>,
        gaussians: Option<u64>,
        supervision: Option<SupervisionArg>,
        sampling: Option<SamplingArg>,
    ) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let mut lr = d.lr;
        lr.position_init = self.pick(None, "lr_position_init", lr.position_init)?;
        lr.position_final = self.pick(None, "lr_position_final", lr.position_final)?;
        lr.position_delay_mult = self.pick(None, "lr_position_delay_mult", lr.position_delay_mult)?;
        lr.position_max_steps = self.pick(None, "lr_position_max_steps", lr.position_max_steps)?;
        lr.opacity = self.pick(None, "lr_opacity", lr.opacity)?;
        lr.scaling = self.pick(None, "lr_scaling", lr.scaling)?;
        lr.rotation = self.pick(None, "lr_rotation", lr.rotation)?;
        lr.mlp = self.pick(None, "lr_mlp", lr.mlp)?;
        let mut adam = d.adam;
        adam.beta1 = self.pick(None, "adam_beta1", adam.beta1)?;
        adam.beta2 = self.pick(None, "adam_beta2", adam.beta2)?;
        adam.epsilon = self.pick(None, "adam_epsilon", adam.epsilon)?;

        let supervision = match supervision {
            Some(SupervisionArg::Magnitude) => Supervision::Magnitude,
            Some(SupervisionArg::Complex) => Supervision::Complex,
            None => match self.pick(None, "supervision", "magnitude".to_string())?.as_str() {
                "magnitude" => Supervision::Magnitude,
                "complex" => Supervision::Complex,
                other => bail!("supervision must be magnitude or complex, got '{other}'"),
            },
        };
        let sampling = match sampling {
            Some(SamplingArg::Uniform) => Sampling::Uniform,
            Some(SamplingArg::EpochShuffle) => Sampling::EpochShuffle,
            None => match self.pick(None, "sampling", "uniform".to_string())?.as_str() {
                "uniform" => Sampling::Uniform,
                "epoch-shuffle" => Sampling::EpochShuffle,
                other => bail!("sampling must be uniform or epoch-shuffle, got '{other}'"),
            },
        };
        let bounds = SceneBounds::new(
            self.vec3("bounds_min", d.bounds.min_corner)?,
            self.vec3("bounds_max", d.bounds.max_corner)?,
        )?;
        let init_scale: Option<f64> = self.file_value("init_scale")?;
        let cfg = TrainConfig {
            lambda_dssim: self.pick(None, "lambda_dssim", d.lambda_dssim)?,
            lr,
            adam,
            iterations: self.pick(iters, "iterations", d.iterations)?,
            seed: self.seed(d.seed),
            n_gaussians: self.pick(gaussians, "gaussians", d.n_gaussians as u64)? as usize,
            arch: d.arch,
            bounds,
            init_scale,
            init_opacity_logit: self.pick(None, "init_opacity_logit", d.init_opacity_logit)?,
            supervision,
            sampling,
            pose: self.pose()?,
            render: self.render_config()?,
            log_every: self.pick(None, "log_every", d.log_every)?,
            checkpoint_every: self.pick(None, "checkpoint_every", d.checkpoint_every)?,
            max_wall_seconds: self.file_value("max_wall_seconds")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Creates `out` and returns `out/name`.
pub fn out_file(out: &Path, name: &str) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out.join(name))
}
