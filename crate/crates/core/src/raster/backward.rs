use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ViewPose;
use crate::scene::{GaussianCloud, ParamGradients};

use super::forward::{fingerprint, RenderAux, TileGrid};
use super::preprocess::{hit, preprocess_backward, SplatGrad};

fn atomic_add(cell: &AtomicU64, value: f64) {
    let mut current = cell.load(Ordering::Relaxed);
    loop {
        let next = (f64::from_bits(current) + value).to_bits();
        match cell.compare_exchange_weak(current, next, Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => return,
            Err(actual) => current = actual,
        }
    }
}

/// Walks one tile back to front, accumulating into `local` (one slot per
/// tile-list entry).
fn backward_tile(aux: &RenderAux, tile: usize, grid: &TileGrid, d_image: &[f64], local: &mut [SplatGrad]) {
    let (width, height) = (aux.width, aux.height);
    let cfg = &aux.config;
    let list = aux.tile_slice(tile);
    let (u0, u1, v0, v1) = grid.pixels(tile, width, height);
    let wf = width as f64;
    for v in v0..=v1 {
        for u in u0..=u1 {
            let p = v * width + u;
            let g_pix = [d_image[2 * p], d_image[2 * p + 1]];
            if g_pix == [0.0, 0.0] {
                continue;
            }
            let (px, py) = (u as f64 + 0.5, v as f64 + 0.5);
            let stored = aux.stored_transmittance.as_ref().map(|s| &s[p]);
            let mut stored_pos = stored.map_or(0, |s| s.len());
            let mut t = aux.final_transmittance[p];
            let mut accum = [0.0; 2];
            let mut last_alpha = 0.0;
            let mut last_color = [0.0; 2];
            for k in (0..aux.traversed[p] as usize).rev() {
                let s = &aux.splats[list[k] as usize];
                let Some(h) = hit(s, px, py, wf, cfg) else {
                    continue;
                };
                t = match stored {
                    Some(ts) => {
                        stored_pos -= 1;
                        ts[stored_pos]
                    }
                    None => t / (1.0 - h.alpha),
                };
                for c in 0..2 {
                    accum[c] = last_alpha * last_color[c] + (1.0 - last_alpha) * accum[c];
                }
                last_alpha = h.alpha;
                last_color = s.color;

                let g = &mut local[k];
                g.color[0] += h.alpha * t * g_pix[0];
                g.color[1] += h.alpha * t * g_pix[1];
                if h.clamped {
                    continue;
                }
                let d_alpha = t * ((s.color[0] - accum[0]) * g_pix[0] + (s.color[1] - accum[1]) * g_pix[1]);
                g.opacity += h.gauss * d_alpha;
                let d_power = s.opacity * h.gauss * d_alpha;
                let [a, b, c] = s.conic;
                g.mean[0] += d_power * (a * h.dx + b * h.dy);
                g.mean[1] += d_power * (b * h.dx + c * h.dy);
                g.conic[0] -= 0.5 * h.dx * h.dx * d_power;
                g.conic[1] -= h.dx * h.dy * d_power;
                g.conic[2] -= 0.5 * h.dy * h.dy * d_power;
            }
        }
    }
}

/// Gradients of a scalar loss w.r.t. every learnable parameter, given the
/// loss gradient on the 2-channel rendered image (row-major `h × w × 2`).
pub fn rasterize_backward(
    d_image: &[f64],
    cloud: &GaussianCloud,
    pose: &ViewPose,
    tx: [f64; 3],
    aux: &RenderAux,
) -> Result<ParamGradients> {
    cloud.check_shapes()?;
    if d_image.len() != aux.width * aux.height * 2 {
        return Err(Error::DimensionMismatch(format!(
            "image gradient has {} values, render was {}x{}x2",
            d_image.len(),
            aux.width,
            aux.height
        )));
    }
    if aux.fingerprint != fingerprint(cloud, pose, tx) {
        return Err(Error::InvalidState(
            "render state does not belong to this cloud, pose and transmitter".into(),
        ));
    }
    let grid = TileGrid::new(aux.width, aux.height, aux.config.tile_size);
    let n_splats = aux.splats.len();

    let splat_grads: Vec<SplatGrad> = if aux.config.deterministic {
        let per_tile: Vec<Vec<SplatGrad>> = (0..grid.count())
            .into_par_iter()
            .map(|t| {
                let mut local = vec![SplatGrad::default(); aux.tile_slice(t).len()];
                backward_tile(aux, t, &grid, d_image, &mut local);
                local
            })
            .collect();
        let mut merged = vec![SplatGrad::default(); n_splats];
        for (t, local) in per_tile.iter().enumerate() {
            for (&e, g) in aux.tile_slice(t).iter().zip(local) {
                merged[e as usize].add(g);
            }
        }
        merged
    } else {
        let cells: Vec<AtomicU64> = (0..n_splats * SplatGrad::LEN).map(|_| AtomicU64::new(0)).collect();
        (0..grid.count()).into_par_iter().for_each(|t| {
            let mut local = vec![SplatGrad::default(); aux.tile_slice(t).len()];
            backward_tile(aux, t, &grid, d_image, &mut local);
            for (&e, g) in aux.tile_slice(t).iter().zip(&local) {
                for (k, value) in g.to_array().into_iter().enumerate() {
                    if value != 0.0 {
                        atomic_add(&cells[e as usize * SplatGrad::LEN + k], value);
                    }
                }
            }
        });
        cells
            .chunks_exact(SplatGrad::LEN)
            .map(|c| SplatGrad::from_array(std::array::from_fn(|k| f64::from_bits(c[k].load(Ordering::Relaxed)))))
            .collect()
    };

    preprocess_backward(
        cloud,
        pose,
        tx,
        aux.width,
        aux.height,
        &aux.config.projection,
        &aux.splats,
        &splat_grads,
    )
}
