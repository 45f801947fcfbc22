use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{
    project_gaussian, project_gaussian_backward, wrap_delta_x, Footprint, ProjectionConfig,
    ProjectionGrad, ViewPose,
};
use crate::mlp::{backward_unchecked, forward_unchecked, signal_input, SIGNAL_OUTPUT_DIM};
use crate::scene::{GaussianCloud, ParamGradients};

use super::RenderConfig;

/// A projected Gaussian with its opacity and color `s / d` resolved.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Splat {
    pub index: usize,
    pub mean: [f64; 2],
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 2],
    pub bbox: Footprint,
}

/// Gradient w.r.t. the screen-space quantities of one splat.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct SplatGrad {
    pub mean: [f64; 2],
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 2],
}

impl SplatGrad {
    pub const LEN: usize = 8;

    pub fn to_array(self) -> [f64; Self::LEN] {
        [
            self.mean[0],
            self.mean[1],
            self.conic[0],
            self.conic[1],
            self.conic[2],
            self.opacity,
            self.color[0],
            self.color[1],
        ]
    }

    pub fn from_array(a: [f64; Self::LEN]) -> Self {
        Self {
            mean: [a[0], a[1]],
            conic: [a[2], a[3], a[4]],
            opacity: a[5],
            color: [a[6], a[7]],
        }
    }

    pub fn add(&mut self, other: &SplatGrad) {
        let mut a = self.to_array();
        for (x, y) in a.iter_mut().zip(other.to_array()) {
            *x += y;
        }
        *self = Self::from_array(a);
    }
}

/// Result of evaluating one splat at one pixel center.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PixelHit {
    pub dx: f64,
    pub dy: f64,
    pub gauss: f64,
    pub clamped: bool,
    pub alpha: f64,
}

/// Evaluates `splat` at the pixel center `(px, py)`. `None` outside the
/// truncated support or below the alpha floor.
#[inline]
pub(crate) fn hit(splat: &Splat, px: f64, py: f64, width: f64, cfg: &RenderConfig) -> Option<PixelHit> {
    let dx = wrap_delta_x(px - splat.mean[0], width);
    let dy = py - splat.mean[1];
    let [a, b, c] = splat.conic;
    let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    let cutoff = cfg.projection.sigma_cutoff;
    if q > cutoff * cutoff {
        return None;
    }
    let gauss = (-0.5 * q).exp();
    let raw = splat.opacity * gauss;
    let alpha = raw.min(cfg.alpha_max);
    if alpha < cfg.alpha_min {
        return None;
    }
    Some(PixelHit {
        dx,
        dy,
        gauss,
        clamped: raw > cfg.alpha_max,
        alpha,
    })
}

#[inline]
fn tx_distance(position: [f64; 3], tx: [f64; 3]) -> f64 {
    let d = [position[0] - tx[0], position[1] - tx[1], position[2] - tx[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Projects, culls and colors every Gaussian. Output is in ascending
/// source order.
pub(crate) fn preprocess(
    cloud: &GaussianCloud,
    pose: &ViewPose,
    tx: [f64; 3],
    width: usize,
    height: usize,
    cfg: &ProjectionConfig,
) -> Result<Vec<Splat>> {
    let splats: Vec<Option<Splat>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let Some(proj) = project_gaussian(cloud, i, pose, width, height, cfg)? else {
                return Ok(None);
            };
            let input = signal_input(tx, proj.azimuth, proj.elevation);
            let mut signal = [0.0; SIGNAL_OUTPUT_DIM];
            forward_unchecked(&cloud.arch, cloud.mlp_params(i), &input, &mut signal);
            let d = tx_distance(cloud.positions[i], tx).max(cfg.near);
            Ok(Some(Splat {
                index: i,
                mean: proj.mean2d,
                conic: proj.conic,
                depth: proj.depth,
                opacity: cloud.opacity(i),
                color: [signal[0] / d, signal[1] / d],
                bbox: proj.bbox,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(splats.into_iter().flatten().collect())
}

struct GaussianGrad {
    index: usize,
    position: [f64; 3],
    log_scale: [f64; 3],
    rotation: [f64; 4],
    raw_opacity: f64,
    mlp: Vec<f64>,
}

/// Maps screen-space splat gradients back to cloud parameters.
#[allow(clippy::too_many_arguments)]
pub(crate) fn preprocess_backward(
    cloud: &GaussianCloud,
    pose: &ViewPose,
    tx: [f64; 3],
    width: usize,
    height: usize,
    cfg: &ProjectionConfig,
    splats: &[Splat],
    grads: &[SplatGrad],
) -> Result<ParamGradients> {
    let per_gaussian: Vec<GaussianGrad> = splats
        .par_iter()
        .zip(grads.par_iter())
        .map(|(splat, g)| {
            let i = splat.index;
            let position = cloud.positions[i];
            let weights = cloud.mlp_params(i);
            let local = pose.to_receiver_frame(position);
            let (azimuth, elevation) = crate::geometry::direction_angles(&local)?;
            let input = signal_input(tx, azimuth, elevation);
            let mut signal = [0.0; SIGNAL_OUTPUT_DIM];
            forward_unchecked(&cloud.arch, weights, &input, &mut signal);

            let raw_d = tx_distance(position, tx);
            let d = raw_d.max(cfg.near);
            let upstream = [g.color[0] / d, g.color[1] / d];
            let mut mlp = vec![0.0; weights.len()];
            let mut g_input = [0.0; 5];
            backward_unchecked(&cloud.arch, weights, &input, &upstream, &mut mlp, &mut g_input);

            let geo = project_gaussian_backward(
                cloud,
                i,
                pose,
                width,
                height,
                cfg,
                &ProjectionGrad {
                    mean2d: g.mean,
                    conic: g.conic,
                    azimuth: g_input[3],
                    elevation: g_input[4],
                },
            )?;
            let mut g_position = geo.position;
            if raw_d > cfg.near {
                let g_d = -(g.color[0] * signal[0] + g.color[1] * signal[1]) / (d * d);
                for k in 0..3 {
                    g_position[k] += g_d * (position[k] - tx[k]) / raw_d;
                }
            }
            let sigma = splat.opacity;
            Ok(GaussianGrad {
                index: i,
                position: g_position,
                log_scale: geo.log_scale,
                rotation: geo.rotation,
                raw_opacity: g.opacity * sigma * (1.0 - sigma),
                mlp,
            })
        })
        .collect::<Result<_>>()?;

    let mut out = ParamGradients::zeros_like(cloud);
    let p = cloud.arch.param_count();
    for g in per_gaussian {
        out.positions[g.index] = g.position;
        out.log_scales[g.index] = g.log_scale;
        out.rotations[g.index] = g.rotation;
        out.raw_opacities[g.index] = g.raw_opacity;
        out.mlp_weights[g.index * p..(g.index + 1) * p].copy_from_slice(&g.mlp);
    }
    Ok(out)
}
