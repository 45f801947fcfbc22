use std::hash::{DefaultHasher, Hasher};

use num_traits::Float;
use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::ViewPose;
use crate::scene::GaussianCloud;

use super::image::SpectrumImage;
use super::preprocess::{hit, preprocess, Splat};
use super::{Precision, RenderConfig, TransmittanceMode};

/// State kept from a forward pass for the matching backward pass.
#[derive(Clone, Debug)]
pub struct RenderAux {
    pub(crate) width: usize,
    pub(crate) height: usize,
    pub(crate) fingerprint: u64,
    pub(crate) config: RenderConfig,
    pub(crate) splats: Vec<Splat>,
    pub(crate) tile_offsets: Vec<usize>,
    pub(crate) tile_entries: Vec<u32>,
    pub(crate) final_transmittance: Vec<f64>,
    pub(crate) traversed: Vec<u32>,
    pub(crate) stored_transmittance: Option<Vec<Vec<f64>>>,
}

impl RenderAux {
    /// Transmittance left after compositing, per pixel (row-major).
    pub fn final_transmittance(&self) -> &[f64] {
        &self.final_transmittance
    }

    /// Number of entries of the pixel's tile list visited before compositing
    /// stopped, per pixel (row-major).
    pub fn contributor_counts(&self) -> &[u32] {
        &self.traversed
    }

    /// Transmittance in front of each composited contribution at `pixel`,
    /// when rendered with stored transmittance.
    pub fn stored_transmittance(&self, pixel: usize) -> Option<&[f64]> {
        self.stored_transmittance.as_ref().map(|s| s[pixel].as_slice())
    }

    pub fn tile_count(&self) -> usize {
        self.tile_offsets.len() - 1
    }

    /// Source indices binned into `tile`, in compositing order.
    pub fn tile_list(&self, tile: usize) -> Vec<usize> {
        self.tile_slice(tile)
            .iter()
            .map(|&e| self.splats[e as usize].index)
            .collect()
    }

    pub(crate) fn tile_slice(&self, tile: usize) -> &[u32] {
        &self.tile_entries[self.tile_offsets[tile]..self.tile_offsets[tile + 1]]
    }

    /// Number of Gaussians that survived culling.
    pub fn visible_count(&self) -> usize {
        self.splats.len()
    }
}

pub(crate) struct TileGrid {
    pub tile: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
}

impl TileGrid {
    pub fn new(width: usize, height: usize, tile: usize) -> Self {
        Self {
            tile,
            tiles_x: width.div_ceil(tile),
            tiles_y: height.div_ceil(tile),
        }
    }

    pub fn count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Inclusive pixel ranges `(u0, u1, v0, v1)` of a tile.
    pub fn pixels(&self, t: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (t % self.tiles_x, t / self.tiles_x);
        let u0 = tx * self.tile;
        let v0 = ty * self.tile;
        (u0, (u0 + self.tile).min(width) - 1, v0, (v0 + self.tile).min(height) - 1)
    }

    fn touched(&self, splat: &Splat, width: usize, out: &mut Vec<usize>) {
        out.clear();
        let mut columns: Vec<usize> = Vec::with_capacity(4);
        for (a, b) in splat.bbox.column_segments(width) {
            columns.extend(a / self.tile..=b / self.tile);
        }
        columns.sort_unstable();
        columns.dedup();
        for ty in splat.bbox.y_min / self.tile..=splat.bbox.y_max / self.tile {
            out.extend(columns.iter().map(|tx| ty * self.tiles_x + tx));
        }
    }
}

/// Bins splats into tiles (counting scatter) and sorts each tile list by
/// `(depth, source index)`.
fn bin(splats: &[Splat], width: usize, grid: &TileGrid) -> (Vec<usize>, Vec<u32>) {
    let mut counts = vec![0usize; grid.count() + 1];
    let mut touched = Vec::new();
    for s in splats {
        grid.touched(s, width, &mut touched);
        for &t in &touched {
            counts[t + 1] += 1;
        }
    }
    for t in 1..counts.len() {
        counts[t] += counts[t - 1];
    }
    let offsets = counts;
    let mut cursor = offsets.clone();
    let mut entries = vec![0u32; offsets[grid.count()]];
    for (k, s) in splats.iter().enumerate() {
        grid.touched(s, width, &mut touched);
        for &t in &touched {
            entries[cursor[t]] = k as u32;
            cursor[t] += 1;
        }
    }
    let mut slices: Vec<&mut [u32]> = Vec::with_capacity(grid.count());
    let mut rest = entries.as_mut_slice();
    for t in 0..grid.count() {
        let (head, tail) = rest.split_at_mut(offsets[t + 1] - offsets[t]);
        slices.push(head);
        rest = tail;
    }
    slices.into_par_iter().for_each(|list| {
        list.sort_unstable_by(|&a, &b| {
            let (sa, sb) = (&splats[a as usize], &splats[b as usize]);
            sa.depth.total_cmp(&sb.depth).then(sa.index.cmp(&sb.index))
        })
    });
    (offsets, entries)
}

pub(crate) fn fingerprint(cloud: &GaussianCloud, pose: &ViewPose, tx: [f64; 3]) -> u64 {
    let mut h = DefaultHasher::new();
    let mut put = |v: f64| h.write_u64(v.to_bits());
    cloud.positions.iter().flatten().for_each(|&v| put(v));
    cloud.log_scales.iter().flatten().for_each(|&v| put(v));
    cloud.rotations.iter().flatten().for_each(|&v| put(v));
    cloud.raw_opacities.iter().for_each(|&v| put(v));
    cloud.mlp_weights.iter().for_each(|&v| put(v));
    pose.rx_position.iter().for_each(|&v| put(v));
    pose.rotation.iter().for_each(|&v| put(v));
    tx.iter().for_each(|&v| put(v));
    h.finish()
}

struct TileOut {
    color: Vec<[f64; 2]>,
    final_t: Vec<f64>,
    traversed: Vec<u32>,
    stored: Vec<Vec<f64>>,
}

fn render_tile<F: Float>(
    list: &[u32],
    splats: &[Splat],
    bounds: (usize, usize, usize, usize),
    width: usize,
    cfg: &RenderConfig,
) -> TileOut {
    let (u0, u1, v0, v1) = bounds;
    let n = (u1 - u0 + 1) * (v1 - v0 + 1);
    let store = cfg.transmittance == TransmittanceMode::Stored;
    let mut out = TileOut {
        color: Vec::with_capacity(n),
        final_t: Vec::with_capacity(n),
        traversed: Vec::with_capacity(n),
        stored: Vec::with_capacity(if store { n } else { 0 }),
    };
    let cast = |x: f64| F::from(x).unwrap_or_else(F::zero);
    let early_exit = cast(cfg.early_exit);
    let wf = width as f64;
    for v in v0..=v1 {
        for u in u0..=u1 {
            let (px, py) = (u as f64 + 0.5, v as f64 + 0.5);
            let mut t = F::one();
            let mut acc = [F::zero(); 2];
            let mut traversed = 0;
            let mut ts = Vec::new();
            for (k, &e) in list.iter().enumerate() {
                traversed = k + 1;
                let s = &splats[e as usize];
                let Some(h) = hit(s, px, py, wf, cfg) else {
                    continue;
                };
                if store {
                    ts.push(t.to_f64().unwrap_or(0.0));
                }
                let a = cast(h.alpha);
                let w = a * t;
                acc[0] = acc[0] + cast(s.color[0]) * w;
                acc[1] = acc[1] + cast(s.color[1]) * w;
                t = t * (F::one() - a);
                if t < early_exit {
                    break;
                }
            }
            out.color.push(acc.map(|x| x.to_f64().unwrap_or(0.0)));
            out.final_t.push(t.to_f64().unwrap_or(0.0));
            out.traversed.push(traversed as u32);
            if store {
                out.stored.push(ts);
            }
        }
    }
    out
}

/// Renders the 2-channel signal image seen from `pose` for a transmitter at `tx`.
pub fn rasterize_forward(
    cloud: &GaussianCloud,
    pose: &ViewPose,
    tx: [f64; 3],
    width: usize,
    height: usize,
    cfg: &RenderConfig,
) -> Result<(SpectrumImage, RenderAux)> {
    cfg.validate(width, height)?;
    cloud.check_shapes()?;
    cloud.arch.validate_signal()?;
    let splats = preprocess(cloud, pose, tx, width, height, &cfg.projection)?;
    let grid = TileGrid::new(width, height, cfg.tile_size);
    let (tile_offsets, tile_entries) = bin(&splats, width, &grid);

    let tiles: Vec<TileOut> = (0..grid.count())
        .into_par_iter()
        .map(|t| {
            let list = &tile_entries[tile_offsets[t]..tile_offsets[t + 1]];
            let bounds = grid.pixels(t, width, height);
            match cfg.precision {
                Precision::F32 => render_tile::<f32>(list, &splats, bounds, width, cfg),
                Precision::F64 => render_tile::<f64>(list, &splats, bounds, width, cfg),
            }
        })
        .collect();

    let n_pix = width * height;
    let mut data = vec![0.0; n_pix * 2];
    let mut final_transmittance = vec![1.0; n_pix];
    let mut traversed = vec![0u32; n_pix];
    let store = cfg.transmittance == TransmittanceMode::Stored;
    let mut stored = if store { vec![Vec::new(); n_pix] } else { Vec::new() };
    for (t, tile) in tiles.into_iter().enumerate() {
        let (u0, u1, v0, v1) = grid.pixels(t, width, height);
        let mut k = 0;
        let mut stored_iter = tile.stored.into_iter();
        for v in v0..=v1 {
            for u in u0..=u1 {
                let p = v * width + u;
                data[2 * p] = tile.color[k][0];
                data[2 * p + 1] = tile.color[k][1];
                final_transmittance[p] = tile.final_t[k];
                traversed[p] = tile.traversed[k];
                if store {
                    stored[p] = stored_iter.next().unwrap_or_default();
                }
                k += 1;
            }
        }
    }

    let image = SpectrumImage {
        width,
        height,
        channels: 2,
        data,
    };
    let aux = RenderAux {
        width,
        height,
        fingerprint: fingerprint(cloud, pose, tx),
        config: *cfg,
        splats,
        tile_offsets,
        tile_entries,
        final_transmittance,
        traversed,
        stored_transmittance: store.then_some(stored),
    };
    Ok((image, aux))
}
