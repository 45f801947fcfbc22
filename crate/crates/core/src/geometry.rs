//! Receiver-frame transforms and the upper-hemisphere equirectangular camera.
//!
//! Receiver frame: `z` is azimuth 0, `x` is azimuth +90°, `y` points to the
//! zenith. Pixel column `u` spans azimuth `[-π, π)` left to right; row `v`
//! spans elevation `[0, π/2]` with row 0 on the horizon.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix2, Matrix2x3, Matrix3, RowVector3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::scene::{build_covariance, build_covariance_backward, GaussianCloud};

/// Receiver position and world-to-receiver rotation `W`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewPose {
    pub rx_position: [f64; 3],
    pub rotation: Matrix3<f64>,
}

impl Default for ViewPose {
    fn default() -> Self {
        Self::identity_at([0.0; 3])
    }
}

impl ViewPose {
    pub fn identity_at(rx_position: [f64; 3]) -> Self {
        Self {
            rx_position,
            rotation: Matrix3::identity(),
        }
    }

    pub fn new(rx_position: [f64; 3], rotation: Matrix3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        if (gram - Matrix3::identity()).abs().max() > 1e-9 || rotation.determinant() <= 0.0 {
            return Err(Error::InvalidArgument(
                "view rotation must be orthonormal with determinant +1".into(),
            ));
        }
        Ok(Self {
            rx_position,
            rotation,
        })
    }

    pub fn to_receiver_frame(&self, world: [f64; 3]) -> Vector3<f64> {
        view_transform(world, self)
    }
}

/// `W (μ − x_rx)`.
pub fn view_transform(position: [f64; 3], pose: &ViewPose) -> Vector3<f64> {
    pose.rotation * (Vector3::from(position) - Vector3::from(pose.rx_position))
}

/// Azimuth `atan2(x, z)` and elevation `asin(y / r)` of a receiver-frame point.
pub fn direction_angles(p: &Vector3<f64>) -> Result<(f64, f64)> {
    let r = p.norm();
    if !(r > 0.0) {
        return Err(Error::Degenerate("direction of the origin is undefined".into()));
    }
    Ok((p.x.atan2(p.z), (p.y / r).clamp(-1.0, 1.0).asin()))
}

/// Pixels per radian along each image axis.
#[inline]
pub fn pixel_scales(width: usize, height: usize) -> (f64, f64) {
    (width as f64 / (2.0 * PI), 2.0 * height as f64 / PI)
}

/// Continuous pixel coordinates `(p_x, p_y)` of a receiver-frame point.
pub fn equirect_project(p: &Vector3<f64>, width: usize, height: usize) -> Result<Vector2<f64>> {
    let (azimuth, elevation) = direction_angles(p)?;
    Ok(angles_to_pixel(azimuth, elevation, width, height))
}

#[inline]
pub fn angles_to_pixel(azimuth: f64, elevation: f64, width: usize, height: usize) -> Vector2<f64> {
    Vector2::new(
        (azimuth / PI + 1.0) * width as f64 / 2.0,
        2.0 * elevation * height as f64 / PI,
    )
}

/// Unit direction through the center of pixel `(u, v)`.
pub fn pixel_to_direction(u: usize, v: usize, width: usize, height: usize) -> Result<Vector3<f64>> {
    if u >= width || v >= height {
        return Err(Error::InvalidArgument(format!(
            "pixel ({u}, {v}) outside {width}x{height}"
        )));
    }
    let azimuth = ((u as f64 + 0.5) * 2.0 / width as f64 - 1.0) * PI;
    let elevation = (v as f64 + 0.5) * PI / (2.0 * height as f64);
    Ok(angles_to_direction(azimuth, elevation))
}

#[inline]
pub fn angles_to_direction(azimuth: f64, elevation: f64) -> Vector3<f64> {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    Vector3::new(ce * sa, se, ce * ca)
}

/// `∂(p_x, p_y)/∂(x, y, z)` of [`equirect_project`].
pub fn equirect_jacobian(p: &Vector3<f64>, width: usize, height: usize) -> Result<Matrix2x3<f64>> {
    let rho2 = p.x * p.x + p.z * p.z;
    if !(rho2 > 0.0) {
        return Err(Error::Degenerate(
            "equirectangular Jacobian is singular on the vertical axis".into(),
        ));
    }
    let r2 = rho2 + p.y * p.y;
    let rho = rho2.sqrt();
    let (kx, ky) = pixel_scales(width, height);
    Ok(Matrix2x3::new(
        kx * p.z / rho2,
        0.0,
        -kx * p.x / rho2,
        -ky * p.x * p.y / (rho * r2),
        ky * rho / r2,
        -ky * p.y * p.z / (rho * r2),
    ))
}

/// `J W Σ Wᵀ Jᵀ + λ_reg I`.
pub fn project_covariance(
    cov3d: &Matrix3<f64>,
    pose: &ViewPose,
    jac: &Matrix2x3<f64>,
    lambda_reg: f64,
) -> Matrix2<f64> {
    let view_cov = pose.rotation * cov3d * pose.rotation.transpose();
    let cov = jac * view_cov * jac.transpose();
    (cov + cov.transpose()) * 0.5 + Matrix2::identity() * lambda_reg
}

/// Knobs shared by culling, projection and rasterization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionConfig {
    /// Minimum radial distance from the receiver (meters).
    pub near: f64,
    /// Maximum radial distance from the receiver (meters).
    pub far: f64,
    /// Centers below `-min_elevation` (radians) are culled.
    pub min_elevation: f64,
    /// Footprint Jacobians are evaluated at most this far from the horizon (radians).
    pub pole_clamp: f64,
    /// Added to the 2D covariance diagonal (px²).
    pub lambda_reg: f64,
    /// Support radius in standard deviations (Mahalanobis distance).
    pub sigma_cutoff: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            near: 0.05,
            far: 1000.0,
            min_elevation: PI / 6.0,
            pole_clamp: 89f64.to_radians(),
            lambda_reg: 0.3,
            sigma_cutoff: 3.0,
        }
    }
}

/// Pixel rectangle covered by a footprint. Columns are unwrapped and may
/// extend past either image edge; rows are clamped to the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub x_min: i64,
    pub x_max: i64,
    pub y_min: usize,
    pub y_max: usize,
}

impl Footprint {
    /// Inclusive column ranges inside `[0, width)` after azimuth wrapping.
    /// Footprints crossing the seam are split in two.
    pub fn column_segments(&self, width: usize) -> Vec<(usize, usize)> {
        let w = width as i64;
        if self.x_max - self.x_min + 1 >= w {
            return vec![(0, width - 1)];
        }
        let start = self.x_min.rem_euclid(w);
        let end = self.x_max.rem_euclid(w);
        if start <= end {
            vec![(start as usize, end as usize)]
        } else {
            vec![(start as usize, width - 1), (0, end as usize)]
        }
    }
}

/// Screen-space footprint of one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedGaussian {
    pub source_index: usize,
    pub mean2d: [f64; 2],
    /// Upper triangle `(a, b, c)` of the regularized 2D covariance.
    pub cov2d: [f64; 3],
    /// Upper triangle `(A, B, C)` of the inverse covariance.
    pub conic: [f64; 3],
    /// Radial distance from the receiver.
    pub depth: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub bbox: Footprint,
}

/// Horizontal pixel offset wrapped to the nearest azimuth image, in `[-w/2, w/2]`.
#[inline]
pub fn wrap_delta_x(dx: f64, width: f64) -> f64 {
    dx - width * (dx / width).round()
}

/// Spherical coordinates of a receiver-frame point together with the
/// (possibly pole-clamped) elevation used for the footprint Jacobian.
#[derive(Clone, Copy, Debug)]
struct Spherical {
    r: f64,
    rho: f64,
    azimuth: f64,
    elevation: f64,
    jac_elevation: f64,
    clamped: bool,
}

impl Spherical {
    fn new(p: &Vector3<f64>, pole_clamp: f64) -> Self {
        let r = p.norm();
        let rho = (p.x * p.x + p.z * p.z).sqrt();
        let azimuth = p.x.atan2(p.z);
        let elevation = (p.y / r).clamp(-1.0, 1.0).asin();
        let jac_elevation = elevation.clamp(-pole_clamp, pole_clamp);
        Self {
            r,
            rho,
            azimuth,
            elevation,
            jac_elevation,
            clamped: jac_elevation != elevation,
        }
    }

    /// Rows `∂az/∂p` and `∂el/∂p`, evaluated at the Jacobian elevation.
    fn angle_rows(&self) -> (RowVector3<f64>, RowVector3<f64>) {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.jac_elevation.sin_cos();
        let az = RowVector3::new(ca, 0.0, -sa) / (self.r * ce);
        let el = RowVector3::new(-se * sa, ce, -se * ca) / self.r;
        (az, el)
    }

    fn jacobian(&self, width: usize, height: usize) -> Matrix2x3<f64> {
        let (kx, ky) = pixel_scales(width, height);
        let (az, el) = self.angle_rows();
        Matrix2x3::from_rows(&[az * kx, el * ky])
    }
}

fn conic_from_cov(cov: [f64; 3]) -> Option<[f64; 3]> {
    let [a, b, c] = cov;
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    Some([c / det, -b / det, a / det])
}

/// Projects Gaussian `index`; `None` when it is culled.
pub fn project_gaussian(
    cloud: &GaussianCloud,
    index: usize,
    pose: &ViewPose,
    width: usize,
    height: usize,
    cfg: &ProjectionConfig,
) -> Result<Option<ProjectedGaussian>> {
    let p = pose.to_receiver_frame(cloud.positions[index]);
    let depth = p.norm();
    if !(depth >= cfg.near && depth <= cfg.far) {
        return Ok(None);
    }
    let sph = Spherical::new(&p, cfg.pole_clamp);
    if sph.elevation < -cfg.min_elevation {
        return Ok(None);
    }
    let mean = angles_to_pixel(sph.azimuth, sph.elevation, width, height);
    let jac = sph.jacobian(width, height);
    let cov3d = build_covariance(cloud.rotations[index], cloud.log_scales[index])?;
    let cov = project_covariance(&cov3d, pose, &jac, cfg.lambda_reg);
    let cov2d = [cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]];
    let Some(conic) = conic_from_cov(cov2d) else {
        return Ok(None);
    };

    let rx = cfg.sigma_cutoff * cov2d[0].sqrt();
    let ry = cfg.sigma_cutoff * cov2d[2].sqrt();
    // pixel (u, v) is covered when its center (u + 0.5, v + 0.5) lies in the box
    let x_min = (mean.x - rx - 0.5).ceil() as i64;
    let x_max = (mean.x + rx - 0.5).floor() as i64;
    let y_lo = (mean.y - ry - 0.5).ceil().max(0.0);
    let y_hi = (mean.y + ry - 0.5).floor().min(height as f64 - 1.0);
    if x_min > x_max || y_lo > y_hi {
        return Ok(None);
    }
    Ok(Some(ProjectedGaussian {
        source_index: index,
        mean2d: [mean.x, mean.y],
        cov2d,
        conic,
        depth,
        azimuth: sph.azimuth,
        elevation: sph.elevation,
        bbox: Footprint {
            x_min,
            x_max,
            y_min: y_lo as usize,
            y_max: y_hi as usize,
        },
    }))
}

/// Indices of Gaussians that can contribute to a `width × height` image,
/// in ascending order.
pub fn cull(
    cloud: &GaussianCloud,
    pose: &ViewPose,
    width: usize,
    height: usize,
    cfg: &ProjectionConfig,
) -> Result<Vec<usize>> {
    let mut kept = Vec::new();
    for i in 0..cloud.len() {
        if project_gaussian(cloud, i, pose, width, height, cfg)?.is_some() {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Upstream gradients arriving at one projected Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProjectionGrad {
    pub mean2d: [f64; 2],
    pub conic: [f64; 3],
    pub azimuth: f64,
    pub elevation: f64,
}

/// Gradients of one Gaussian's geometric parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeometryParamGrad {
    pub position: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
}

/// Backward of [`project_gaussian`] (mean, conic and the two angles).
pub fn project_gaussian_backward(
    cloud: &GaussianCloud,
    index: usize,
    pose: &ViewPose,
    width: usize,
    height: usize,
    cfg: &ProjectionConfig,
    upstream: &ProjectionGrad,
) -> Result<GeometryParamGrad> {
    let p = pose.to_receiver_frame(cloud.positions[index]);
    let sph = Spherical::new(&p, cfg.pole_clamp);
    let (kx, ky) = pixel_scales(width, height);
    let (az_row, el_row) = sph.angle_rows();
    let j0 = az_row.transpose() * kx;
    let j1 = el_row.transpose() * ky;

    let w = &pose.rotation;
    let (q, ls) = (cloud.rotations[index], cloud.log_scales[index]);
    let view_cov = w * build_covariance(q, ls)? * w.transpose();
    let a = j0.dot(&(view_cov * j0)) + cfg.lambda_reg;
    let b = j0.dot(&(view_cov * j1));
    let c = j1.dot(&(view_cov * j1)) + cfg.lambda_reg;
    let det = a * c - b * b;
    let det2 = det * det;

    // conic (A, B, C) = (c, -b, a) / det
    let [g_ca, g_cb, g_cc] = upstream.conic;
    let g_a = (-c * c * g_ca + b * c * g_cb - b * b * g_cc) / det2;
    let g_b = (2.0 * b * c * g_ca - (a * c + b * b) * g_cb + 2.0 * a * b * g_cc) / det2;
    let g_c = (-b * b * g_ca + a * b * g_cb - a * a * g_cc) / det2;

    let g_view = j0 * j0.transpose() * g_a + j0 * j1.transpose() * g_b + j1 * j1.transpose() * g_c;
    let g_cov3d = w.transpose() * g_view * w;
    let (g_rotation, g_log_scale) = build_covariance_backward(q, ls, &g_cov3d)?;

    let g_j0 = (view_cov * j0) * (2.0 * g_a) + (view_cov * j1) * g_b;
    let g_j1 = (view_cov * j0) * g_b + (view_cov * j1) * (2.0 * g_c);
    let g_az_row = g_j0.transpose() * kx;
    let g_el_row = g_j1.transpose() * ky;

    let (r, e) = (sph.r, sph.jac_elevation);
    let (sa, ca) = sph.azimuth.sin_cos();
    let (se, ce) = e.sin_cos();
    let d_az_row_daz = RowVector3::new(-sa, 0.0, -ca) / (r * ce);
    let d_el_row_daz = RowVector3::new(-se * ca, 0.0, se * sa) / r;
    let d_el_row_de = RowVector3::new(-ce * sa, -se, -ce * ca) / r;

    let g_r = -(g_az_row.dot(&az_row) + g_el_row.dot(&el_row)) / r;
    let mut g_azimuth = g_az_row.dot(&d_az_row_daz) + g_el_row.dot(&d_el_row_daz);
    let g_jac_el = g_az_row.dot(&az_row) * e.tan() + g_el_row.dot(&d_el_row_de);

    g_azimuth += kx * upstream.mean2d[0] + upstream.azimuth;
    let mut g_elevation = ky * upstream.mean2d[1] + upstream.elevation;
    if !sph.clamped {
        g_elevation += g_jac_el;
    }

    // exact (unclamped) angle derivatives w.r.t. the receiver-frame point
    let (se_true, ce_true) = sph.elevation.sin_cos();
    let d_az = if sph.rho > 1e-12 * r {
        Vector3::new(ca, 0.0, -sa) / sph.rho
    } else {
        Vector3::zeros()
    };
    let d_el = Vector3::new(-se_true * sa, ce_true, -se_true * ca) / r;
    let g_p = p * (g_r / r) + d_az * g_azimuth + d_el * g_elevation;
    let g_world = w.transpose() * g_p;

    Ok(GeometryParamGrad {
        position: [g_world.x, g_world.y, g_world.z],
        rotation: g_rotation,
        log_scale: g_log_scale,
    })
}

/// Elevation of the zenith in radians.
pub const ZENITH: f64 = FRAC_PI_2;
