//! Image losses and quality metrics on [`SpectrumImage`]s.

use crate::error::{Error, Result};
use crate::raster::SpectrumImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean absolute difference over all pixels and channels.
pub fn l1_loss(pred: &SpectrumImage, gt: &SpectrumImage) -> Result<f64> {
    pred.same_shape(gt)?;
    let sum: f64 = pred.data.iter().zip(&gt.data).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / pred.data.len() as f64)
}

pub fn mse(pred: &SpectrumImage, gt: &SpectrumImage) -> Result<f64> {
    pred.same_shape(gt)?;
    let sum: f64 = pred.data.iter().zip(&gt.data).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / pred.data.len() as f64)
}

/// `10·log10(1 / mse)` for peak 1.0; `+∞` when the images are identical.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(pred: &SpectrumImage, gt: &SpectrumImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, gt)?))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut g: [f64; SSIM_WINDOW] =
        std::array::from_fn(|k| (-((k as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    g
}

/// Symmetric boundary extension: `d c b a | a b c d | d c b a`.
#[inline]
fn reflect(mut j: isize, n: isize) -> usize {
    loop {
        if j < 0 {
            j = -j - 1;
        } else if j >= n {
            j = 2 * n - j - 1;
        } else {
            return j as usize;
        }
    }
}

/// Separable windowed mean of a single-channel `w × h` plane.
struct Window {
    taps: [f64; SSIM_WINDOW],
    width: usize,
    height: usize,
}

impl Window {
    fn new(width: usize, height: usize) -> Self {
        Self {
            taps: gaussian_window(),
            width,
            height,
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let half = (SSIM_WINDOW / 2) as isize;
        let mut rows = vec![0.0; w * h];
        for v in 0..h {
            for u in 0..w {
                let mut acc = 0.0;
                for (k, t) in self.taps.iter().enumerate() {
                    acc += t * x[v * w + reflect(u as isize + k as isize - half, w as isize)];
                }
                rows[v * w + u] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for v in 0..h {
            for u in 0..w {
                let mut acc = 0.0;
                for (k, t) in self.taps.iter().enumerate() {
                    acc += t * rows[reflect(v as isize + k as isize - half, h as isize) * w + u];
                }
                out[v * w + u] = acc;
            }
        }
        out
    }

    /// Adjoint of [`Window::apply`].
    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let half = (SSIM_WINDOW / 2) as isize;
        let mut cols = vec![0.0; w * h];
        for v in 0..h {
            for u in 0..w {
                let g = y[v * w + u];
                for (k, t) in self.taps.iter().enumerate() {
                    cols[reflect(v as isize + k as isize - half, h as isize) * w + u] += t * g;
                }
            }
        }
        let mut out = vec![0.0; w * h];
        for v in 0..h {
            for u in 0..w {
                let g = cols[v * w + u];
                for (k, t) in self.taps.iter().enumerate() {
                    out[v * w + reflect(u as isize + k as isize - half, w as isize)] += t * g;
                }
            }
        }
        out
    }
}

/// Mean SSIM of one channel plane and, optionally, its gradient w.r.t. `x`.
fn ssim_plane(x: &[f64], y: &[f64], width: usize, height: usize, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let win = Window::new(width, height);
    let n = x.len();
    let mu_x = win.apply(x);
    let mu_y = win.apply(y);
    let xx = win.apply(&x.iter().map(|v| v * v).collect::<Vec<_>>());
    let yy = win.apply(&y.iter().map(|v| v * v).collect::<Vec<_>>());
    let xy = win.apply(&x.iter().zip(y).map(|(a, b)| a * b).collect::<Vec<_>>());

    let mut total = 0.0;
    let mut a_map = vec![0.0; if want_grad { n } else { 0 }];
    let mut b_map = a_map.clone();
    let mut c_map = a_map.clone();
    for p in 0..n {
        let (mx, my) = (mu_x[p], mu_y[p]);
        let sxx = xx[p] - mx * mx;
        let syy = yy[p] - my * my;
        let sxy = xy[p] - mx * my;
        let n1 = 2.0 * mx * my + SSIM_C1;
        let n2 = 2.0 * sxy + SSIM_C2;
        let d1 = mx * mx + my * my + SSIM_C1;
        let d2 = sxx + syy + SSIM_C2;
        let s = n1 * n2 / (d1 * d2);
        total += s;
        if want_grad {
            let d_mu = 2.0 * my * n2 / (d1 * d2) - 2.0 * mx * s / d1;
            let d_sxx = -s / d2;
            let d_sxy = 2.0 * n1 / (d1 * d2);
            a_map[p] = d_mu - 2.0 * mx * d_sxx - my * d_sxy;
            b_map[p] = d_sxx;
            c_map[p] = d_sxy;
        }
    }
    let value = total / n as f64;
    if !want_grad {
        return (value, None);
    }
    let ka = win.adjoint(&a_map);
    let kb = win.adjoint(&b_map);
    let kc = win.adjoint(&c_map);
    let grad = (0..n)
        .map(|q| (ka[q] + 2.0 * x[q] * kb[q] + y[q] * kc[q]) / n as f64)
        .collect();
    (value, Some(grad))
}

fn channel_plane(image: &SpectrumImage, channel: usize) -> Vec<f64> {
    image.data.iter().skip(channel).step_by(image.channels).copied().collect()
}

/// Mean local SSIM (11×11 Gaussian window, σ = 1.5, dynamic range 1,
/// symmetric padding), averaged over channels.
pub fn ssim(pred: &SpectrumImage, gt: &SpectrumImage) -> Result<f64> {
    Ok(ssim_with_grad(pred, gt, false)?.0)
}

fn ssim_with_grad(pred: &SpectrumImage, gt: &SpectrumImage, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    pred.same_shape(gt)?;
    let c = pred.channels;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; pred.data.len()]);
    for ch in 0..c {
        let (value, g) = ssim_plane(
            &channel_plane(pred, ch),
            &channel_plane(gt, ch),
            pred.width,
            pred.height,
            want_grad,
        );
        total += value / c as f64;
        if let (Some(out), Some(g)) = (grad.as_mut(), g) {
            for (p, v) in g.into_iter().enumerate() {
                out[p * c + ch] = v / c as f64;
            }
        }
    }
    Ok((total, grad))
}

/// Components of the combined loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub l1: f64,
    /// `1 − ssim`.
    pub ssim_term: f64,
    /// `dL/dpred`, same layout as the image data.
    pub grad: Vec<f64>,
}

/// `(1 − λ)·L1 + λ·(1 − SSIM)` and its gradient w.r.t. `pred`. The L1
/// subgradient at zero difference is 0.
pub fn combined_loss(pred: &SpectrumImage, gt: &SpectrumImage, lambda: f64) -> Result<LossValue> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda must be in [0, 1], got {lambda}")));
    }
    pred.same_shape(gt)?;
    let n = pred.data.len() as f64;
    let l1 = l1_loss(pred, gt)?;
    let mut grad: Vec<f64> = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| {
            let d = a - b;
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            (1.0 - lambda) * sign / n
        })
        .collect();
    let (s, s_grad) = if lambda > 0.0 {
        ssim_with_grad(pred, gt, true)?
    } else {
        (ssim(pred, gt)?, None)
    };
    if let Some(sg) = s_grad {
        for (g, v) in grad.iter_mut().zip(sg) {
            *g -= lambda * v;
        }
    }
    let ssim_term = 1.0 - s;
    Ok(LossValue {
        loss: (1.0 - lambda) * l1 + lambda * ssim_term,
        l1,
        ssim_term,
        grad,
    })
}
