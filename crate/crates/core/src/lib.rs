//! Differentiable radio-frequency Gaussian splatting.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod mlp;
pub mod optim;
pub mod raster;
pub mod rfsim;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use scene::{GaussianCloud, ParamGradients};
