use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{project_gaussian, ProjectedGaussian, ViewPose};
use crate::mlp::mlp_forward;
use crate::scene::GaussianCloud;

use super::image::SpectrumImage;
use super::RenderConfig;

/// One composited contribution at a pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelTrace {
    pub source_index: usize,
    /// `σ·G` exceeded the alpha ceiling.
    pub clamped: bool,
}

struct Entry {
    proj: ProjectedGaussian,
    opacity: f64,
    color: [f64; 2],
}

fn entries(
    cloud: &GaussianCloud,
    pose: &ViewPose,
    tx: [f64; 3],
    width: usize,
    height: usize,
    cfg: &RenderConfig,
) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for i in 0..cloud.len() {
        let Some(proj) = project_gaussian(cloud, i, pose, width, height, &cfg.projection)? else {
            continue;
        };
        let s = mlp_forward(&cloud.arch, cloud.mlp_params(i), tx, proj.azimuth, proj.elevation)?;
        let p = cloud.positions[i];
        let d = ((p[0] - tx[0]).powi(2) + (p[1] - tx[1]).powi(2) + (p[2] - tx[2]).powi(2))
            .sqrt()
            .max(cfg.projection.near);
        out.push(Entry {
            proj,
            opacity: cloud.opacity(i),
            color: [s.re / d, s.im / d],
        });
    }
    out.sort_by(|a, b| {
        a.proj
            .depth
            .total_cmp(&b.proj.depth)
            .then(a.proj.source_index.cmp(&b.proj.source_index))
    });
    Ok(out)
}

fn shade(entries: &[Entry], u: usize, v: usize, width: usize, cfg: &RenderConfig, trace: Option<&mut Vec<PixelTrace>>) -> [f64; 2] {
    let (px, py) = (u as f64 + 0.5, v as f64 + 0.5);
    let w = width as f64;
    let cutoff2 = cfg.projection.sigma_cutoff.powi(2);
    let mut t = 1.0;
    let mut value = [0.0; 2];
    let mut trace = trace;
    for e in entries {
        let mut dx = px - e.proj.mean2d[0];
        // nearest periodic image in azimuth
        dx -= w * (dx / w).round();
        let dy = py - e.proj.mean2d[1];
        let m = nalgebra::Matrix2::new(e.proj.conic[0], e.proj.conic[1], e.proj.conic[1], e.proj.conic[2]);
        let delta = nalgebra::Vector2::new(dx, dy);
        let q = delta.dot(&(m * delta));
        if q > cutoff2 {
            continue;
        }
        let raw = e.opacity * (-0.5 * q).exp();
        let alpha = raw.min(cfg.alpha_max);
        if alpha < cfg.alpha_min {
            continue;
        }
        value[0] += t * alpha * e.color[0];
        value[1] += t * alpha * e.color[1];
        t *= 1.0 - alpha;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(PixelTrace {
                source_index: e.proj.source_index,
                clamped: raw > cfg.alpha_max,
            });
        }
    }
    value
}

/// Per-pixel loop over every visible Gaussian in global depth order, in
/// f64, without tiling or early termination.
pub fn rasterize_reference(
    cloud: &GaussianCloud,
    pose: &ViewPose,
    tx: [f64; 3],
    width: usize,
    height: usize,
    cfg: &RenderConfig,
) -> Result<SpectrumImage> {
    cfg.validate(width, height)?;
    cloud.check_shapes()?;
    let entries = entries(cloud, pose, tx, width, height, cfg)?;
    let data: Vec<f64> = (0..height)
        .into_par_iter()
        .flat_map_iter(|v| {
            let entries = &entries;
            (0..width).flat_map(move |u| shade(entries, u, v, width, cfg, None))
        })
        .collect();
    SpectrumImage::new(width, height, 2, data)
}

/// [`rasterize_reference`] plus the list of contributions at every pixel.
pub fn rasterize_reference_traced(
    cloud: &GaussianCloud,
    pose: &ViewPose,
    tx: [f64; 3],
    width: usize,
    height: usize,
    cfg: &RenderConfig,
) -> Result<(SpectrumImage, Vec<Vec<PixelTrace>>)> {
    cfg.validate(width, height)?;
    cloud.check_shapes()?;
    let entries = entries(cloud, pose, tx, width, height, cfg)?;
    let mut data = Vec::with_capacity(width * height * 2);
    let mut traces = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            let mut tr = Vec::new();
            data.extend(shade(&entries, u, v, width, cfg, Some(&mut tr)));
            traces.push(tr);
        }
    }
    Ok((SpectrumImage::new(width, height, 2, data)?, traces))
}
