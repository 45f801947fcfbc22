use crate::error::{Error, Result};

/// Row-major `height × width × channels` image. Channel count is 1
/// (magnitude) or 2 (real, imaginary).
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl SpectrumImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let image = Self {
            width,
            height,
            channels,
            data,
        };
        image.validate()?;
        Ok(image)
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::new(width, height, channels, vec![0.0; width * height * channels])
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image dimensions must be >= 1".into()));
        }
        if self.channels != 1 && self.channels != 2 {
            return Err(Error::InvalidArgument(format!(
                "channel count must be 1 or 2, got {}",
                self.channels
            )));
        }
        if self.data.len() != self.pixel_count() * self.channels {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x{} image needs {} values, got {}",
                self.width,
                self.height,
                self.channels,
                self.pixel_count() * self.channels,
                self.data.len()
            )));
        }
        if let Some(v) = self.data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite pixel value {v}")));
        }
        if self.channels == 1 && self.data.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("magnitude image has negative values".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, u: usize, v: usize, channel: usize) -> f64 {
        self.data[(v * self.width + u) * self.channels + channel]
    }

    pub fn same_shape(&self, other: &SpectrumImage) -> Result<()> {
        if (self.width, self.height, self.channels) != (other.width, other.height, other.channels) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(())
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &SpectrumImage) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Multiplies every value by `factor`.
    pub fn scaled(&self, factor: f64) -> SpectrumImage {
        SpectrumImage {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// Per-pixel `√(re² + im²)`.
pub fn magnitude(image: &SpectrumImage) -> Result<SpectrumImage> {
    if image.channels != 2 {
        return Err(Error::DimensionMismatch(format!(
            "magnitude needs a 2-channel image, got {}",
            image.channels
        )));
    }
    let data = image.data.chunks_exact(2).map(|c| c[0].hypot(c[1])).collect();
    SpectrumImage::new(image.width, image.height, 1, data)
}

/// Pulls a gradient on the magnitude image back to the complex image.
/// Pixels with zero magnitude receive zero gradient.
pub fn magnitude_backward(image: &SpectrumImage, grad_magnitude: &[f64]) -> Result<Vec<f64>> {
    if image.channels != 2 || grad_magnitude.len() != image.pixel_count() {
        return Err(Error::DimensionMismatch(
            "magnitude backward needs a 2-channel image and one gradient per pixel".into(),
        ));
    }
    let mut out = vec![0.0; image.data.len()];
    for ((c, g), o) in image
        .data
        .chunks_exact(2)
        .zip(grad_magnitude)
        .zip(out.chunks_exact_mut(2))
    {
        let m = c[0].hypot(c[1]);
        if m > 0.0 {
            o[0] = g * c[0] / m;
            o[1] = g * c[1] / m;
        }
    }
    Ok(out)
}
