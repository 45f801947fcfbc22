//! Adam with per-group learning rates and the annealed position schedule.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::scene::{normalize_quaternion, GaussianCloud, ParamGradients};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub position_init: f64,
    pub position_final: f64,
    pub position_delay_mult: f64,
    pub position_max_steps: u64,
    pub opacity: f64,
    pub scaling: f64,
    pub rotation: f64,
    pub mlp: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_init: 0.0016,
            position_final: 1.6e-6,
            position_delay_mult: 0.01,
            position_max_steps: 30_000,
            opacity: 0.0055,
            scaling: 0.005,
            rotation: 0.001,
            mlp: 0.002,
        }
    }
}

impl LearningRates {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.position_init,
            self.position_final,
            self.opacity,
            self.scaling,
            self.rotation,
            self.mlp,
        ];
        if all.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.position_delay_mult) || self.position_max_steps == 0 {
            return Err(Error::InvalidArgument(
                "position delay multiplier must be in [0, 1] and max steps >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Log-linear decay from `position_init` to `position_final` over
/// `position_max_steps`, scaled by a sine ramp over the first 1% of steps.
pub fn position_lr(step: u64, lr: &LearningRates) -> f64 {
    let max = lr.position_max_steps as f64;
    let t = (step as f64 / max).clamp(0.0, 1.0);
    let ramp = (step as f64 / (0.01 * max)).clamp(0.0, 1.0);
    let delay = lr.position_delay_mult + (1.0 - lr.position_delay_mult) * (FRAC_PI_2 * ramp).sin();
    let log_lr = lr.position_init.ln() * (1.0 - t) + lr.position_final.ln() * t;
    delay * log_lr.exp()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(beta_ok(self.beta1) && beta_ok(self.beta2) && self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "adam betas must be in [0, 1) and epsilon positive, got {:?}",
                self
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Positions,
    LogScales,
    Rotations,
    RawOpacities,
    MlpWeights,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Positions,
        ParamGroup::LogScales,
        ParamGroup::Rotations,
        ParamGroup::RawOpacities,
        ParamGroup::MlpWeights,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Positions => "positions",
            ParamGroup::LogScales => "log_scales",
            ParamGroup::Rotations => "rotations",
            ParamGroup::RawOpacities => "raw_opacities",
            ParamGroup::MlpWeights => "mlp_weights",
        }
    }

    fn params(self, cloud: &mut GaussianCloud) -> &mut [f64] {
        match self {
            ParamGroup::Positions => cloud.positions.as_flattened_mut(),
            ParamGroup::LogScales => cloud.log_scales.as_flattened_mut(),
            ParamGroup::Rotations => cloud.rotations.as_flattened_mut(),
            ParamGroup::RawOpacities => &mut cloud.raw_opacities,
            ParamGroup::MlpWeights => &mut cloud.mlp_weights,
        }
    }

    fn grads(self, grads: &ParamGradients) -> &[f64] {
        match self {
            ParamGroup::Positions => grads.positions.as_flattened(),
            ParamGroup::LogScales => grads.log_scales.as_flattened(),
            ParamGroup::Rotations => grads.rotations.as_flattened(),
            ParamGroup::RawOpacities => &grads.raw_opacities,
            ParamGroup::MlpWeights => &grads.mlp_weights,
        }
    }

    fn lr(self, step: u64, lr: &LearningRates) -> f64 {
        match self {
            ParamGroup::Positions => position_lr(step, lr),
            ParamGroup::LogScales => lr.scaling,
            ParamGroup::Rotations => lr.rotation,
            ParamGroup::RawOpacities => lr.opacity,
            ParamGroup::MlpWeights => lr.mlp,
        }
    }
}

/// First and second moments per parameter group, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(cloud: &GaussianCloud) -> Self {
        let sizes = [
            cloud.len() * 3,
            cloud.len() * 3,
            cloud.len() * 4,
            cloud.len(),
            cloud.mlp_weights.len(),
        ];
        Self {
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Checks that the moment shapes match `cloud`.
    pub fn matches(&self, cloud: &GaussianCloud) -> bool {
        let fresh = AdamState::new(cloud);
        self.first.len() == 5
            && self.second.len() == 5
            && (0..5).all(|g| self.first[g].len() == fresh.first[g].len() && self.second[g].len() == fresh.second[g].len())
    }

    /// One bias-corrected Adam update of every group, then quaternion
    /// re-normalization of the rotations that moved.
    pub fn update(
        &mut self,
        cloud: &mut GaussianCloud,
        grads: &ParamGradients,
        lr: &LearningRates,
        cfg: &AdamConfig,
    ) -> Result<()> {
        if grads.len() != cloud.len() || grads.mlp_weights.len() != cloud.mlp_weights.len() {
            return Err(Error::DimensionMismatch("gradient shapes do not match the cloud".into()));
        }
        if !self.matches(cloud) {
            return Err(Error::DimensionMismatch("optimizer state does not match the cloud".into()));
        }
        grads.check_finite()?;
        let schedule_step = self.step;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (gi, group) in ParamGroup::ALL.into_iter().enumerate() {
            let rate = group.lr(schedule_step, lr);
            let g = group.grads(grads);
            let p = group.params(cloud);
            let (m, v) = (&mut self.first[gi], &mut self.second[gi]);
            for k in 0..p.len() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        for (i, q) in cloud.rotations.iter_mut().enumerate() {
            if self.first[2][4 * i..4 * i + 4].iter().any(|&m| m != 0.0) {
                *q = normalize_quaternion(*q).unwrap_or([1.0, 0.0, 0.0, 0.0]);
            }
        }
        Ok(())
    }
}
