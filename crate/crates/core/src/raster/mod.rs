//! Tile-binned alpha compositing of the signal field, its backward pass and
//! a brute-force reference renderer.

mod backward;
mod forward;
mod image;
mod preprocess;
mod reference;

pub use backward::rasterize_backward;
pub use forward::{rasterize_forward, RenderAux};
pub use image::{magnitude, magnitude_backward, SpectrumImage};
pub use reference::{rasterize_reference, rasterize_reference_traced, PixelTrace};

use crate::geometry::ProjectionConfig;

/// Accumulation type of the fast forward path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// How the backward pass obtains the transmittance in front of each contributor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TransmittanceMode {
    /// Divide the stored final transmittance by `1 − α` while walking back.
    #[default]
    Recompute,
    /// Keep every per-contributor transmittance from the forward pass.
    Stored,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    pub projection: ProjectionConfig,
    pub tile_size: usize,
    pub precision: Precision,
    pub transmittance: TransmittanceMode,
    /// Merge per-tile gradient buffers in tile order instead of atomic adds.
    pub deterministic: bool,
    /// Compositing stops once transmittance drops below this.
    pub early_exit: f64,
    pub alpha_max: f64,
    pub alpha_min: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            projection: ProjectionConfig::default(),
            tile_size: 16,
            precision: Precision::F32,
            transmittance: TransmittanceMode::Recompute,
            deterministic: true,
            early_exit: 1e-4,
            alpha_max: 0.99,
            alpha_min: 1.0 / 255.0,
        }
    }
}

impl RenderConfig {
    /// f64 accumulation with stored transmittance, for gradient checks.
    pub fn verification() -> Self {
        Self {
            precision: Precision::F64,
            transmittance: TransmittanceMode::Stored,
            ..Self::default()
        }
    }

    fn validate(&self, width: usize, height: usize) -> crate::Result<()> {
        if width == 0 || height == 0 {
            return Err(crate::Error::InvalidArgument(format!(
                "image dimensions must be >= 1, got {width}x{height}"
            )));
        }
        if self.tile_size == 0 {
            return Err(crate::Error::InvalidArgument("tile size must be >= 1".into()));
        }
        if !(self.alpha_min >= 0.0 && self.alpha_min < self.alpha_max && self.alpha_max < 1.0) {
            return Err(crate::Error::InvalidArgument(
                "alpha bounds must satisfy 0 <= min < max < 1".into(),
            ));
        }
        Ok(())
    }
}
