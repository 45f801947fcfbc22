//! Binary formats: GSPC checkpoints, RFSI spectra, PGM previews and the
//! optimizer-state sidecar used for resuming.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mlp::MlpArchitecture;
use crate::optim::AdamState;
use crate::raster::{magnitude, SpectrumImage};
use crate::scene::GaussianCloud;

const GSPC_MAGIC: &[u8; 4] = b"GSPC";
const RFSI_MAGIC: &[u8; 4] = b"RFSI";
const ADAM_MAGIC: &[u8; 4] = b"GSPA";
const VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("truncated while reading {what}: need {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format(
                self.path,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(expected)),
            ));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap_or_default()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap_or_default()))
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u32("version")?;
        if v != VERSION {
            return Err(Error::format(self.path, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "size overflow"))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::format(self.path, "size overflow"))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap_or_default()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("{} trailing bytes after payload", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize, path: &Path) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format(path, format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s<'a>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn encode_checkpoint(cloud: &GaussianCloud, path: &Path) -> Result<Vec<u8>> {
    cloud.validate()?;
    let mut out = Vec::with_capacity(24 + 4 * (cloud.len() * 11 + cloud.mlp_weights.len()));
    out.extend_from_slice(GSPC_MAGIC);
    put_u32(&mut out, VERSION as usize, path)?;
    put_u32(&mut out, cloud.len(), path)?;
    put_u32(&mut out, cloud.arch.in_dim, path)?;
    put_u32(&mut out, cloud.arch.hidden_dim, path)?;
    put_u32(&mut out, cloud.arch.out_dim, path)?;
    put_f32s(&mut out, cloud.positions.iter().flatten());
    put_f32s(&mut out, cloud.log_scales.iter().flatten());
    put_f32s(&mut out, cloud.rotations.iter().flatten());
    put_f32s(&mut out, &cloud.raw_opacities);
    put_f32s(&mut out, &cloud.mlp_weights);
    Ok(out)
}

/// Writes a GSPC checkpoint (parameters rounded to f32).
pub fn write_checkpoint(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(cloud, path)?;
    write_file(path, &bytes)
}

pub fn read_checkpoint(path: &Path) -> Result<GaussianCloud> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.magic(GSPC_MAGIC)?;
    r.version()?;
    let n = r.u32("gaussian count")? as usize;
    let arch = MlpArchitecture {
        in_dim: r.u32("mlp input dim")? as usize,
        hidden_dim: r.u32("mlp hidden dim")? as usize,
        out_dim: r.u32("mlp output dim")? as usize,
    };
    arch.validate().map_err(|e| Error::format(path, e.to_string()))?;
    let positions = r.f32s(3 * n, "positions")?;
    let log_scales = r.f32s(3 * n, "log_scales")?;
    let rotations = r.f32s(4 * n, "rotations")?;
    let raw_opacities = r.f32s(n, "raw_opacities")?;
    let mlp_weights = r.f32s(n * arch.param_count(), "mlp_weights")?;
    r.finish()?;
    let cloud = GaussianCloud {
        arch,
        positions: positions.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        log_scales: log_scales.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        rotations: rotations.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect(),
        raw_opacities,
        mlp_weights,
    };
    cloud.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(cloud)
}

pub fn encode_spectrum(image: &SpectrumImage, path: &Path) -> Result<Vec<u8>> {
    image.validate()?;
    let mut out = Vec::with_capacity(20 + 4 * image.data.len());
    out.extend_from_slice(RFSI_MAGIC);
    put_u32(&mut out, VERSION as usize, path)?;
    put_u32(&mut out, image.width, path)?;
    put_u32(&mut out, image.height, path)?;
    put_u32(&mut out, image.channels, path)?;
    put_f32s(&mut out, &image.data);
    Ok(out)
}

/// Writes an RFSI spectrum (values rounded to f32).
pub fn write_spectrum(image: &SpectrumImage, path: &Path) -> Result<()> {
    let bytes = encode_spectrum(image, path)?;
    write_file(path, &bytes)
}

pub fn read_spectrum(path: &Path) -> Result<SpectrumImage> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.magic(RFSI_MAGIC)?;
    r.version()?;
    let width = r.u32("width")? as usize;
    let height = r.u32("height")? as usize;
    let channels = r.u32("channels")? as usize;
    let n = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| Error::format(path, "image size overflow"))?;
    let data = r.f32s(n, "pixel data")?;
    r.finish()?;
    SpectrumImage::new(width, height, channels, data).map_err(|e| Error::format(path, e.to_string()))
}

/// 8-bit binary PGM preview; 2-channel images are exported as magnitude.
/// Values are clamped to `[0, 1]` and scaled to 0–255.
pub fn write_pgm(image: &SpectrumImage, path: &Path) -> Result<()> {
    let mag = if image.channels == 2 { magnitude(image)? } else { image.clone() };
    let mut out = format!("P5\n{} {}\n255\n", mag.width, mag.height).into_bytes();
    out.extend(mag.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    write_file(path, &out)
}

/// Optimizer moments and step count, stored next to a checkpoint.
pub fn write_adam_state(state: &AdamState, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(ADAM_MAGIC);
    put_u32(&mut out, VERSION as usize, path)?;
    out.extend_from_slice(&state.step.to_le_bytes());
    put_u32(&mut out, state.first.len(), path)?;
    for (m, v) in state.first.iter().zip(&state.second) {
        out.extend_from_slice(&(m.len() as u64).to_le_bytes());
        for x in m.iter().chain(v) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    write_file(path, &out)
}

pub fn read_adam_state(path: &Path) -> Result<AdamState> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.magic(ADAM_MAGIC)?;
    r.version()?;
    let step = r.u64("step")?;
    let groups = r.u32("group count")? as usize;
    let mut first = Vec::with_capacity(groups);
    let mut second = Vec::with_capacity(groups);
    for _ in 0..groups {
        let n = r.u64("group length")? as usize;
        first.push(r.f64s(n, "first moments")?);
        second.push(r.f64s(n, "second moments")?);
    }
    r.finish()?;
    Ok(AdamState { step, first, second })
}

/// Sidecar path for the optimizer state of a checkpoint.
pub fn adam_state_path(checkpoint: &Path) -> std::path::PathBuf {
    checkpoint.with_extension("adam")
}
