//! Synthetic multipath ground truth, dataset files and RSSI estimation.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::geometry::{angles_to_direction, pixel_to_direction, ViewPose};
use crate::io::{read_spectrum, write_spectrum};
use crate::raster::{rasterize_forward, RenderConfig, SpectrumImage};
use crate::scene::GaussianCloud;

/// 915 MHz.
pub const DEFAULT_WAVELENGTH: f64 = 0.3275;
/// Reported when no energy reaches the receiver.
pub const RSSI_FLOOR_DB: f64 = -100.0;
pub const INDEX_HEADER: [&str; 5] = ["id", "tx_x", "tx_y", "tx_z", "spectrum_path"];

/// A virtual point emitter with a Gaussian angular kernel at the receiver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Emitter {
    pub position: [f64; 3],
    pub gain: Complex64,
    /// Kernel standard deviation in radians.
    pub angular_spread: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultipathScene {
    pub emitters: Vec<Emitter>,
    pub wavelength: f64,
    pub rx_position: [f64; 3],
}

impl MultipathScene {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::InvalidArgument("wavelength must be positive".into()));
        }
        if self.emitters.is_empty() {
            return Err(Error::InvalidArgument("scene needs at least one emitter".into()));
        }
        if let Some(e) = self.emitters.iter().find(|e| !(e.angular_spread > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "angular spread must be positive, got {}",
                e.angular_spread
            )));
        }
        Ok(())
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// `(λ / 4πd)·e^{−j2πd/λ}`.
pub fn free_space_amplitude(d: f64, wavelength: f64) -> Result<Complex64> {
    if !(d > 0.0) || !(wavelength > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distance and wavelength must be positive, got d = {d}, λ = {wavelength}"
        )));
    }
    Ok(Complex64::from_polar(wavelength / (4.0 * PI * d), -2.0 * PI * d / wavelength))
}

/// Complex field per pixel (row-major) for a transmitter at `tx`, as seen
/// by an axis-aligned receiver.
pub fn ground_truth_field(scene: &MultipathScene, tx: [f64; 3], width: usize, height: usize) -> Result<Vec<Complex64>> {
    scene.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("image dimensions must be >= 1".into()));
    }
    let mut paths = Vec::with_capacity(scene.emitters.len());
    for (l, e) in scene.emitters.iter().enumerate() {
        let to_rx = dist(e.position, scene.rx_position);
        if to_rx < 1e-9 {
            log::warn!("emitter {l} coincides with the receiver; skipped");
            continue;
        }
        let dir = [
            (e.position[0] - scene.rx_position[0]) / to_rx,
            (e.position[1] - scene.rx_position[1]) / to_rx,
            (e.position[2] - scene.rx_position[2]) / to_rx,
        ];
        let amplitude = e.gain * free_space_amplitude(dist(e.position, tx) + to_rx, scene.wavelength)?;
        paths.push((dir, amplitude, e.angular_spread));
    }
    let mut field = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            let d = pixel_to_direction(u, v, width, height)?;
            let mut value = Complex64::new(0.0, 0.0);
            for (dir, amplitude, spread) in &paths {
                let cos = (d.x * dir[0] + d.y * dir[1] + d.z * dir[2]).clamp(-1.0, 1.0);
                let angle = cos.acos();
                value += amplitude * (-angle * angle / (2.0 * spread * spread)).exp();
            }
            field.push(value);
        }
    }
    Ok(field)
}

/// Unnormalized magnitude image `|field|`.
pub fn ground_truth_spectrum(scene: &MultipathScene, tx: [f64; 3], width: usize, height: usize) -> Result<SpectrumImage> {
    let field = ground_truth_field(scene, tx, width, height)?;
    SpectrumImage::new(width, height, 1, field.iter().map(|c| c.norm()).collect())
}

/// Ranges used to sample a random scene and transmitter positions.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub emitter_count: (usize, usize),
    pub emitter_distance: (f64, f64),
    pub emitter_elevation_deg: (f64, f64),
    pub spread_deg: (f64, f64),
    pub gain_magnitude: (f64, f64),
    pub tx_min: [f64; 3],
    pub tx_max: [f64; 3],
    /// Transmitters are kept at least this far from the receiver.
    pub keep_out: f64,
    pub rx_position: [f64; 3],
    pub wavelength: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            emitter_count: (5, 8),
            emitter_distance: (2.0, 6.0),
            emitter_elevation_deg: (5.0, 65.0),
            spread_deg: (8.0, 16.0),
            gain_magnitude: (0.5, 1.5),
            tx_min: [-4.0, 0.0, -4.0],
            tx_max: [4.0, 2.5, 4.0],
            keep_out: 1.0,
            rx_position: [0.0; 3],
            wavelength: DEFAULT_WAVELENGTH,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64)| a <= b && a.is_finite() && b.is_finite();
        let ok = self.emitter_count.0 >= 1
            && self.emitter_count.0 <= self.emitter_count.1
            && ordered(self.emitter_distance)
            && self.emitter_distance.0 > 0.0
            && ordered(self.emitter_elevation_deg)
            && ordered(self.spread_deg)
            && self.spread_deg.0 > 0.0
            && ordered(self.gain_magnitude)
            && (0..3).all(|k| self.tx_min[k] <= self.tx_max[k])
            && self.keep_out >= 0.0
            && self.wavelength > 0.0;
        if !ok {
            return Err(Error::InvalidArgument("inconsistent scene specification".into()));
        }
        Ok(())
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

pub fn sample_scene(spec: &SceneSpec, seed: u64) -> Result<MultipathScene> {
    spec.validate()?;
    let mut rng = stream(seed, 10);
    let count = rng.random_range(spec.emitter_count.0..=spec.emitter_count.1);
    let emitters = (0..count)
        .map(|_| {
            let azimuth = rng.random_range(-PI..PI);
            let elevation = uniform(&mut rng, spec.emitter_elevation_deg).to_radians();
            let r = uniform(&mut rng, spec.emitter_distance);
            let d = angles_to_direction(azimuth, elevation) * r;
            let gain = Complex64::from_polar(uniform(&mut rng, spec.gain_magnitude), rng.random_range(-PI..PI));
            Emitter {
                position: [
                    spec.rx_position[0] + d.x,
                    spec.rx_position[1] + d.y,
                    spec.rx_position[2] + d.z,
                ],
                gain,
                angular_spread: uniform(&mut rng, spec.spread_deg).to_radians(),
            }
        })
        .collect();
    Ok(MultipathScene {
        emitters,
        wavelength: spec.wavelength,
        rx_position: spec.rx_position,
    })
}

/// Uniform positions in the transmitter box outside the keep-out sphere.
pub fn sample_tx_positions(spec: &SceneSpec, seed: u64, n: usize) -> Result<Vec<[f64; 3]>> {
    spec.validate()?;
    let mut rng = stream(seed, 11);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * (n + 1) {
            return Err(Error::InvalidArgument(
                "transmitter box lies (almost) entirely inside the keep-out radius".into(),
            ));
        }
        let p: [f64; 3] = std::array::from_fn(|k| uniform(&mut rng, (spec.tx_min[k], spec.tx_max[k])));
        if dist(p, spec.rx_position) >= spec.keep_out {
            out.push(p);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub width: usize,
    pub height: usize,
    pub spec: SceneSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_train: 128,
            n_test: 32,
            width: 180,
            height: 45,
            spec: SceneSpec::default(),
        }
    }
}

/// Contents of `manifest.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Maximum pre-normalization pixel over every generated spectrum.
    pub normalization: f64,
    pub azimuth_offset_deg: f64,
    pub scene: MultipathScene,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let s = &self.scene;
        let mut out = format!(
            "seed = {}\nwidth = {}\nheight = {}\nn_train = {}\nn_test = {}\nnormalization = {}\nazimuth_offset_deg = {}\nwavelength = {}\nrx_position = {}, {}, {}\nemitter_count = {}\n",
            self.seed,
            self.width,
            self.height,
            self.n_train,
            self.n_test,
            self.normalization,
            self.azimuth_offset_deg,
            s.wavelength,
            s.rx_position[0],
            s.rx_position[1],
            s.rx_position[2],
            s.emitters.len()
        );
        for (l, e) in s.emitters.iter().enumerate() {
            out += &format!(
                "emitter_{l} = {}, {}, {}, {}, {}, {}\n",
                e.position[0], e.position[1], e.position[2], e.gain.re, e.gain.im, e.angular_spread
            );
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let kv = KeyValues::read(path)?;
        let count: usize = kv.require("emitter_count")?;
        let mut emitters = Vec::with_capacity(count);
        for l in 0..count {
            let v: Vec<f64> = kv.require_list(&format!("emitter_{l}"))?;
            if v.len() != 6 {
                return Err(Error::format(path, format!("emitter_{l} needs 6 values, got {}", v.len())));
            }
            emitters.push(Emitter {
                position: [v[0], v[1], v[2]],
                gain: Complex64::new(v[3], v[4]),
                angular_spread: v[5],
            });
        }
        let rx: Vec<f64> = kv.require_list("rx_position")?;
        if rx.len() != 3 {
            return Err(Error::format(path, "rx_position needs 3 values"));
        }
        let manifest = Self {
            seed: kv.require("seed")?,
            width: kv.require("width")?,
            height: kv.require("height")?,
            n_train: kv.require("n_train")?,
            n_test: kv.require("n_test")?,
            normalization: kv.require("normalization")?,
            azimuth_offset_deg: kv.parse_opt("azimuth_offset_deg")?.unwrap_or(0.0),
            scene: MultipathScene {
                emitters,
                wavelength: kv.require("wavelength")?,
                rx_position: [rx[0], rx[1], rx[2]],
            },
        };
        manifest.scene.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(manifest)
    }

    /// Ground-truth spectrum normalized like the stored dataset.
    pub fn normalized_spectrum(&self, tx: [f64; 3]) -> Result<SpectrumImage> {
        let raw = ground_truth_spectrum(&self.scene, tx, self.width, self.height)?;
        Ok(raw.scaled(1.0 / self.normalization))
    }
}

fn write_index(path: &Path, rows: &[(String, [f64; 3], String)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(INDEX_HEADER).map_err(|e| Error::csv(path, e))?;
    for (id, p, spectrum) in rows {
        w.write_record([id.clone(), p[0].to_string(), p[1].to_string(), p[2].to_string(), spectrum.clone()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Generates `n_train + n_test` spectra under `out_dir`:
/// `spectra/*.rfsi`, `train.csv`, `test.csv` and `manifest.txt`.
pub fn gen_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    if cfg.n_train == 0 {
        return Err(Error::InvalidArgument("need at least one training sample".into()));
    }
    if cfg.width == 0 || cfg.height == 0 {
        return Err(Error::InvalidArgument("image dimensions must be >= 1".into()));
    }
    let scene = sample_scene(&cfg.spec, cfg.seed)?;
    let total = cfg.n_train + cfg.n_test;
    let positions = sample_tx_positions(&cfg.spec, cfg.seed, total)?;
    let spectra: Vec<SpectrumImage> = positions
        .par_iter()
        .map(|&tx| ground_truth_spectrum(&scene, tx, cfg.width, cfg.height))
        .collect::<Result<_>>()?;
    let normalization = spectra.iter().map(SpectrumImage::max_value).fold(0.0, f64::max);
    if !(normalization > 0.0) {
        return Err(Error::Degenerate("every generated spectrum is zero".into()));
    }

    let spectra_dir = out_dir.join("spectra");
    fs::create_dir_all(&spectra_dir).map_err(|e| Error::io(&spectra_dir, e))?;
    let mut train = Vec::with_capacity(cfg.n_train);
    let mut test = Vec::with_capacity(cfg.n_test);
    for (k, (tx, image)) in positions.iter().zip(&spectra).enumerate() {
        let (split, rows, idx) = if k < cfg.n_train {
            ("train", &mut train, k)
        } else {
            ("test", &mut test, k - cfg.n_train)
        };
        let id = format!("{split}_{idx:05}");
        let rel = format!("spectra/{id}.rfsi");
        write_spectrum(&image.scaled(1.0 / normalization), &out_dir.join(&rel))?;
        rows.push((id, *tx, rel));
    }
    write_index(&out_dir.join("train.csv"), &train)?;
    write_index(&out_dir.join("test.csv"), &test)?;
    let manifest = DatasetManifest {
        seed: cfg.seed,
        width: cfg.width,
        height: cfg.height,
        n_train: cfg.n_train,
        n_test: cfg.n_test,
        normalization,
        azimuth_offset_deg: 0.0,
        scene,
    };
    let path = out_dir.join("manifest.txt");
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// One transmitter position with its ground-truth spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct TxSample {
    pub id: String,
    pub tx_position: [f64; 3],
    pub spectrum_path: PathBuf,
    pub spectrum: SpectrumImage,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LoadOptions {
    /// Azimuth of the stored image's first column relative to this crate's
    /// convention; columns are rolled by the nearest whole pixel.
    pub azimuth_offset_deg: f64,
}

pub fn load_dataset(index_path: &Path) -> Result<Vec<TxSample>> {
    load_dataset_with(index_path, &LoadOptions::default())
}

/// Reads an index CSV and eagerly parses every referenced spectrum.
/// Relative spectrum paths resolve against the index directory.
pub fn load_dataset_with(index_path: &Path, opts: &LoadOptions) -> Result<Vec<TxSample>> {
    let mut reader = csv::Reader::from_path(index_path).map_err(|e| Error::csv(index_path, e))?;
    let header = reader.headers().map_err(|e| Error::csv(index_path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != INDEX_HEADER {
        return Err(Error::format(
            index_path,
            format!("index header must be '{}'", INDEX_HEADER.join(",")),
        ));
    }
    let base = index_path.parent().unwrap_or(Path::new(""));
    let mut samples: Vec<TxSample> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(index_path, e))?;
        let coord = |k: usize| -> Result<f64> {
            record[k]
                .trim()
                .parse()
                .map_err(|e| Error::format(index_path, format!("row {}: {}: {e}", row + 1, INDEX_HEADER[k])))
        };
        let tx_position = [coord(1)?, coord(2)?, coord(3)?];
        let spectrum_path = base.join(record[4].trim());
        let mut spectrum = read_spectrum(&spectrum_path)?;
        if let Some(first) = samples.first() {
            let a = &first.spectrum;
            if (a.width, a.height, a.channels) != (spectrum.width, spectrum.height, spectrum.channels) {
                return Err(Error::format(
                    &spectrum_path,
                    format!(
                        "dimensions {}x{}x{} differ from {}x{}x{} of {}",
                        spectrum.width,
                        spectrum.height,
                        spectrum.channels,
                        a.width,
                        a.height,
                        a.channels,
                        first.spectrum_path.display()
                    ),
                ));
            }
        }
        roll_columns(&mut spectrum, opts.azimuth_offset_deg);
        samples.push(TxSample {
            id: record[0].to_string(),
            tx_position,
            spectrum_path,
            spectrum,
        });
    }
    Ok(samples)
}

fn roll_columns(image: &mut SpectrumImage, offset_deg: f64) {
    let w = image.width as i64;
    let shift = (offset_deg / 360.0 * w as f64).round() as i64;
    if shift.rem_euclid(w) == 0 {
        return;
    }
    let c = image.channels;
    let src = image.data.clone();
    for v in 0..image.height {
        for u in 0..image.width {
            let to = (u as i64 + shift).rem_euclid(w) as usize;
            for k in 0..c {
                image.data[(v * image.width + to) * c + k] = src[(v * image.width + u) * c + k];
            }
        }
    }
}

/// `10·log10(E) + offset` with `E = (1/fraction)·Σ` pixel energy over
/// `⌈fraction·w·h⌉` pixels drawn without replacement.
pub fn rssi_from_image(image: &SpectrumImage, fraction: f64, seed: u64, offset_db: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let n = image.pixel_count();
    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let energy_at = |p: usize| -> f64 { image.data[p * image.channels..(p + 1) * image.channels].iter().map(|v| v * v).sum() };
    let total: f64 = if k == n {
        (0..n).map(energy_at).sum()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = rand::seq::index::sample(&mut rng, n, k).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(energy_at).sum()
    };
    let energy = total / fraction;
    if !(energy > 0.0) {
        return Ok(RSSI_FLOOR_DB);
    }
    Ok(10.0 * energy.log10() + offset_db)
}

/// Renders the cloud for `tx` and applies [`rssi_from_image`].
#[allow(clippy::too_many_arguments)]
pub fn rssi_estimate(
    cloud: &GaussianCloud,
    pose: &ViewPose,
    tx: [f64; 3],
    width: usize,
    height: usize,
    fraction: f64,
    seed: u64,
    offset_db: f64,
    cfg: &RenderConfig,
) -> Result<f64> {
    let (image, _) = rasterize_forward(cloud, pose, tx, width, height, cfg)?;
    rssi_from_image(&image, fraction, seed, offset_db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_emitter(position: [f64; 3], spread_deg: f64) -> MultipathScene {
        MultipathScene {
            emitters: vec![Emitter {
                position,
                gain: Complex64::new(1.0, 0.0),
                angular_spread: spread_deg.to_radians(),
            }],
            wavelength: DEFAULT_WAVELENGTH,
            rx_position: [0.0; 3],
        }
    }

    #[test]
    fn free_space_examples() {
        let l = DEFAULT_WAVELENGTH;
        let a = free_space_amplitude(l, l).unwrap();
        assert!((a.norm() - 1.0 / (4.0 * PI)).abs() < 1e-15);
        assert!(a.arg().abs() < 1e-9);
        let b = free_space_amplitude(l / 2.0, l).unwrap();
        assert!((b.norm() - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((b.re + b.norm()).abs() < 1e-12);
        let c = free_space_amplitude(2.0 * 3.7, l).unwrap();
        assert!((c.norm() * 2.0 - free_space_amplitude(3.7, l).unwrap().norm()).abs() < 1e-15);
        assert!(free_space_amplitude(0.0, l).is_err());
        assert!(free_space_amplitude(-1.0, l).is_err());
    }

    #[test]
    fn single_emitter_straight_ahead() {
        let scene = one_emitter([0.0, 0.0, 3.0], 3.0);
        let (w, h) = (72, 18);
        let img = ground_truth_spectrum(&scene, [0.0, 1.0, -2.0], w, h).unwrap();
        let (mut best, mut at) = (0.0, (0, 0));
        for v in 0..h {
            for u in 0..w {
                if img.get(u, v, 0) > best {
                    best = img.get(u, v, 0);
                    at = (u, v);
                }
            }
        }
        assert!(at == (w / 2, 0) || at == (w / 2 - 1, 0), "{at:?}");
        for u in w / 2..w - 1 {
            assert!(img.get(u + 1, 0, 0) <= img.get(u, 0, 0));
        }
        for v in 0..h - 1 {
            assert!(img.get(w / 2, v + 1, 0) <= img.get(w / 2, v, 0));
        }
    }

    #[test]
    fn coincident_emitter_is_skipped() {
        let mut scene = one_emitter([0.0, 0.0, 3.0], 5.0);
        scene.emitters.push(Emitter {
            position: [0.0; 3],
            gain: Complex64::new(5.0, 0.0),
            angular_spread: 0.2,
        });
        let a = ground_truth_spectrum(&scene, [1.0, 1.0, 1.0], 36, 9).unwrap();
        let b = ground_truth_spectrum(&one_emitter([0.0, 0.0, 3.0], 5.0), [1.0, 1.0, 1.0], 36, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn half_wavelength_paths_interfere_destructively() {
        // two emitters on the same bearing, path lengths differing by λ/2
        let l = DEFAULT_WAVELENGTH;
        let tx = [0.0, 0.0, -3.0];
        let near = [0.0, 1.0, 3.0];
        let scale = 1.0 + 0.5 * l / (2.0 * dist(near, [0.0; 3]));
        let mut far = near.map(|c| c * scale);
        // tune the far emitter along the bearing until the path difference is exactly λ/2
        let path = |p: [f64; 3]| dist(p, tx) + dist(p, [0.0; 3]);
        for _ in 0..50 {
            let err = path(far) - path(near) - l / 2.0;
            let k = 1.0 - err / (2.0 * dist(far, [0.0; 3]));
            far = far.map(|c| c * k);
        }
        assert!((path(far) - path(near) - l / 2.0).abs() < 1e-12);
        let mut both = one_emitter(near, 6.0);
        both.emitters.push(Emitter {
            position: far,
            ..both.emitters[0]
        });
        let (w, h) = (72, 18);
        let a = ground_truth_spectrum(&one_emitter(near, 6.0), tx, w, h).unwrap();
        let b = ground_truth_spectrum(&one_emitter(far, 6.0), tx, w, h).unwrap();
        let ab = ground_truth_spectrum(&both, tx, w, h).unwrap();
        let peak = |img: &SpectrumImage| img.max_value();
        assert!(peak(&ab) < peak(&a).min(peak(&b)));
    }

    #[test]
    fn azimuth_rotation_shifts_columns() {
        let spec = SceneSpec::default();
        let scene = sample_scene(&spec, 4).unwrap();
        let (w, h) = (72, 18);
        let shift = 7;
        let delta = shift as f64 * 2.0 * PI / w as f64;
        // rotation by +delta about the vertical axis increases azimuth atan2(x, z)
        let rot = |p: [f64; 3]| {
            let (s, c) = delta.sin_cos();
            [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]]
        };
        let tx = [1.5, 0.7, -2.0];
        let mut rotated = scene.clone();
        for e in &mut rotated.emitters {
            e.position = rot(e.position);
        }
        let a = ground_truth_spectrum(&scene, tx, w, h).unwrap();
        let b = ground_truth_spectrum(&rotated, rot(tx), w, h).unwrap();
        let peak = a.max_value();
        for v in 0..h {
            for u in 0..w {
                let diff = (a.get(u, v, 0) - b.get((u + shift) % w, v, 0)).abs();
                assert!(diff <= 1e-9 * peak, "({u}, {v}): {diff}");
            }
        }
    }

    #[test]
    fn emitter_order_does_not_matter() {
        let scene = sample_scene(&SceneSpec::default(), 8).unwrap();
        let mut reversed = scene.clone();
        reversed.emitters.reverse();
        let a = ground_truth_spectrum(&scene, [2.0, 1.0, 2.0], 90, 22).unwrap();
        let b = ground_truth_spectrum(&reversed, [2.0, 1.0, 2.0], 90, 22).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-9);
    }

    #[test]
    fn tx_positions_respect_box_and_keep_out() {
        let spec = SceneSpec::default();
        let txs = sample_tx_positions(&spec, 2, 500).unwrap();
        for p in &txs {
            assert!(dist(*p, spec.rx_position) >= spec.keep_out);
            for (k, &c) in p.iter().enumerate() {
                assert!(c >= spec.tx_min[k] && c <= spec.tx_max[k]);
            }
        }
        let impossible = SceneSpec {
            keep_out: 100.0,
            ..spec
        };
        assert!(sample_tx_positions(&impossible, 2, 3).is_err());
    }

    #[test]
    fn rssi_examples() {
        let scene = sample_scene(&SceneSpec::default(), 5).unwrap();
        let img = ground_truth_spectrum(&scene, [1.0, 1.0, 1.0], 180, 45).unwrap();
        let full = rssi_from_image(&img, 1.0, 0, 0.0).unwrap();
        let doubled = rssi_from_image(&img.scaled(2.0), 1.0, 0, 0.0).unwrap();
        assert!((doubled - full - 20.0 * 2f64.log10()).abs() < 1e-9);
        let zero = SpectrumImage::zeros(180, 45, 2).unwrap();
        assert_eq!(rssi_from_image(&zero, 0.1, 3, 0.0).unwrap(), RSSI_FLOOR_DB);
        assert!(rssi_from_image(&img, 0.0, 0, 0.0).is_err());
        assert!(rssi_from_image(&img, 1.5, 0, 0.0).is_err());
        assert_eq!(rssi_from_image(&img, 1.0, 0, -30.0).unwrap(), full - 30.0);
    }

    #[test]
    fn rssi_subsampling_is_stable() {
        let scene = sample_scene(&SceneSpec::default(), 6).unwrap();
        let img = ground_truth_spectrum(&scene, [-2.0, 0.5, 1.5], 360, 90).unwrap();
        let full = rssi_from_image(&img, 1.0, 0, 0.0).unwrap();
        let draws: Vec<f64> = (0..20).map(|s| rssi_from_image(&img, 0.1, s, 0.0).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / 20.0;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 19.0).sqrt();
        assert!(sd <= 1.0, "sd {sd}");
        let mut sorted = draws.clone();
        sorted.sort_by(f64::total_cmp);
        assert!((sorted[10] - full).abs() <= 1.0);
        assert_eq!(draws[3], rssi_from_image(&img, 0.1, 3, 0.0).unwrap());
    }
}
