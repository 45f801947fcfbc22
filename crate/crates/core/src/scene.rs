//! Gaussian cloud parameterization, activations and initialization.
//!
//! Learnable state is stored raw (pre-activation):
//! scales as logs, rotations as unnormalized quaternions `(w, x, y, z)` and
//! opacities as logits. Activations are `exp`, L2 normalization and sigmoid.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mlp::MlpArchitecture;

/// RNG stream used for Gaussian centers.
const POSITION_STREAM: u64 = 0;
/// RNG stream used for the per-Gaussian MLP weights.
const MLP_STREAM: u64 = 1;

/// Axis-aligned box in world coordinates (meters).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneBounds {
    pub min_corner: [f64; 3],
    pub max_corner: [f64; 3],
}

impl SceneBounds {
    pub fn new(min_corner: [f64; 3], max_corner: [f64; 3]) -> Result<Self> {
        let bounds = Self {
            min_corner,
            max_corner,
        };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            let (lo, hi) = (self.min_corner[k], self.max_corner[k]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "degenerate bounds on axis {k}: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        (0..3)
            .map(|k| (self.max_corner[k] - self.min_corner[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.min_corner[k] && p[k] <= self.max_corner[k])
    }
}

/// The learnable set of Gaussian virtual emitters.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    pub arch: MlpArchitecture,
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub raw_opacities: Vec<f64>,
    /// `len() * arch.param_count()` values, one contiguous block per Gaussian.
    pub mlp_weights: Vec<f64>,
}

impl GaussianCloud {
    /// A cloud with no Gaussians. Only useful as a rendering edge case;
    /// [`GaussianCloud::validate`] rejects it.
    pub fn empty(arch: MlpArchitecture) -> Self {
        Self {
            arch,
            positions: Vec::new(),
            log_scales: Vec::new(),
            rotations: Vec::new(),
            raw_opacities: Vec::new(),
            mlp_weights: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Checks the shape invariants shared by all parameter arrays.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::InvalidArgument("cloud has no Gaussians".into()));
        }
        self.check_shapes()
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let n = self.len();
        let p = self.arch.param_count();
        if self.log_scales.len() != n
            || self.rotations.len() != n
            || self.raw_opacities.len() != n
            || self.mlp_weights.len() != n * p
        {
            return Err(Error::DimensionMismatch(format!(
                "cloud arrays disagree: positions {n}, log_scales {}, rotations {}, opacities {}, mlp {} (expected {})",
                self.log_scales.len(),
                self.rotations.len(),
                self.raw_opacities.len(),
                self.mlp_weights.len(),
                n * p
            )));
        }
        Ok(())
    }

    pub fn mlp_params(&self, i: usize) -> &[f64] {
        let p = self.arch.param_count();
        &self.mlp_weights[i * p..(i + 1) * p]
    }

    pub fn mlp_params_mut(&mut self, i: usize) -> &mut [f64] {
        let p = self.arch.param_count();
        &mut self.mlp_weights[i * p..(i + 1) * p]
    }

    pub fn opacity(&self, i: usize) -> f64 {
        activate_opacity(self.raw_opacities[i])
    }

    pub fn scale(&self, i: usize) -> [f64; 3] {
        self.log_scales[i].map(f64::exp)
    }

    pub fn covariance(&self, i: usize) -> Result<Matrix3<f64>> {
        build_covariance(self.rotations[i], self.log_scales[i])
    }

    /// Re-normalizes every quaternion in place. Zero quaternions are reset
    /// to identity.
    pub fn normalize_rotations(&mut self) {
        for q in &mut self.rotations {
            *q = normalize_quaternion(*q).unwrap_or([1.0, 0.0, 0.0, 0.0]);
        }
    }
}

/// Gradients with the same shapes as the learnable arrays of a [`GaussianCloud`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradients {
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub raw_opacities: Vec<f64>,
    pub mlp_weights: Vec<f64>,
}

impl ParamGradients {
    pub fn zeros_like(cloud: &GaussianCloud) -> Self {
        let n = cloud.len();
        Self {
            positions: vec![[0.0; 3]; n],
            log_scales: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            raw_opacities: vec![0.0; n],
            mlp_weights: vec![0.0; cloud.mlp_weights.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Errors on the first non-finite entry.
    pub fn check_finite(&self) -> Result<()> {
        fn scan<'a>(group: &'static str, values: impl Iterator<Item = &'a f64>, stride: usize) -> Result<()> {
            match values.enumerate().find(|(_, v)| !v.is_finite()) {
                Some((k, _)) => Err(Error::NonFiniteGradient {
                    group,
                    index: k / stride,
                }),
                None => Ok(()),
            }
        }
        scan("positions", self.positions.iter().flatten(), 3)?;
        scan("log_scales", self.log_scales.iter().flatten(), 3)?;
        scan("rotations", self.rotations.iter().flatten(), 4)?;
        scan("raw_opacities", self.raw_opacities.iter(), 1)?;
        scan("mlp_weights", self.mlp_weights.iter(), 1)
    }

    /// All gradient entries in a fixed order (positions, log_scales,
    /// rotations, raw_opacities, mlp_weights).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * 11 + self.mlp_weights.len());
        out.extend(self.positions.iter().flatten());
        out.extend(self.log_scales.iter().flatten());
        out.extend(self.rotations.iter().flatten());
        out.extend(&self.raw_opacities);
        out.extend(&self.mlp_weights);
        out
    }
}

/// Samples a cloud with centers uniform in `bounds`.
///
/// Positions and MLP weights come from separate ChaCha8 streams of the same
/// seed, so changing `n` only appends draws. MLP weights are standard normal
/// (ziggurat sampler from `rand_distr`).
pub fn init_uniform(
    bounds: &SceneBounds,
    n: usize,
    seed: u64,
    init_scale: f64,
    init_opacity_logit: f64,
    arch: MlpArchitecture,
) -> Result<GaussianCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if !(init_scale > 0.0 && init_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "init_scale must be positive, got {init_scale}"
        )));
    }
    bounds.validate()?;
    arch.validate()?;

    let mut pos_rng = ChaCha8Rng::seed_from_u64(seed);
    pos_rng.set_stream(POSITION_STREAM);
    let positions = (0..n)
        .map(|_| {
            let mut p = [0.0; 3];
            for (k, v) in p.iter_mut().enumerate() {
                let u: f64 = pos_rng.random();
                *v = bounds.min_corner[k] + u * (bounds.max_corner[k] - bounds.min_corner[k]);
            }
            p
        })
        .collect();

    let mut mlp_rng = ChaCha8Rng::seed_from_u64(seed);
    mlp_rng.set_stream(MLP_STREAM);
    let mlp_weights = (0..n * arch.param_count())
        .map(|_| mlp_rng.sample::<f64, _>(StandardNormal))
        .collect();

    let log_scale = init_scale.ln();
    Ok(GaussianCloud {
        arch,
        positions,
        log_scales: vec![[log_scale; 3]; n],
        rotations: vec![[1.0, 0.0, 0.0, 0.0]; n],
        raw_opacities: vec![init_opacity_logit; n],
        mlp_weights,
    })
}

pub fn activate_opacity(raw: f64) -> f64 {
    if raw >= 0.0 {
        1.0 / (1.0 + (-raw).exp())
    } else {
        let e = raw.exp();
        e / (1.0 + e)
    }
}

pub fn normalize_quaternion(q: [f64; 4]) -> Result<[f64; 4]> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "quaternion {q:?} cannot be normalized"
        )));
    }
    Ok(q.map(|v| v / norm))
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls `dL/dR` back onto the (unit) quaternion components used to build `R`.
pub fn rotation_matrix_backward(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let gx = 2.0 * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - w * g[(1, 2)]
        + z * g[(2, 0)]
        + w * g[(2, 1)])
        - 4.0 * x * (g[(1, 1)] + g[(2, 2)]);
    let gy = 2.0 * (x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
        - w * g[(2, 0)]
        + z * g[(2, 1)])
        - 4.0 * y * (g[(0, 0)] + g[(2, 2)]);
    let gz = 2.0 * (-w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] + y * g[(1, 2)]
        + x * g[(2, 0)]
        + y * g[(2, 1)])
        - 4.0 * z * (g[(0, 0)] + g[(1, 1)]);
    [gw, gx, gy, gz]
}

/// Pulls a gradient on the normalized quaternion back to the raw one.
pub fn normalize_quaternion_backward(raw: [f64; 4], g_unit: [f64; 4]) -> [f64; 4] {
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let unit = raw.map(|v| v / norm);
    let dot: f64 = unit.iter().zip(&g_unit).map(|(u, g)| u * g).sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (g_unit[k] - unit[k] * dot) / norm;
    }
    out
}

/// `R S Sᵀ Rᵀ` with `R` from the normalized quaternion and `S = diag(exp(log_scale))`.
pub fn build_covariance(quaternion: [f64; 4], log_scale: [f64; 3]) -> Result<Matrix3<f64>> {
    let unit = normalize_quaternion(quaternion)?;
    let m = rotation_matrix(unit) * Matrix3::from_diagonal(&Vector3::from(log_scale.map(f64::exp)));
    let cov = m * m.transpose();
    // symmetrize away the rounding of the product
    Ok((cov + cov.transpose()) * 0.5)
}

/// Backward of [`build_covariance`] for an arbitrary (not necessarily
/// symmetric) upstream gradient on the 3×3 entries.
///
/// Returns `(dL/dquaternion_raw, dL/dlog_scale)`.
pub fn build_covariance_backward(
    quaternion: [f64; 4],
    log_scale: [f64; 3],
    g_cov: &Matrix3<f64>,
) -> Result<([f64; 4], [f64; 3])> {
    let unit = normalize_quaternion(quaternion)?;
    let rot = rotation_matrix(unit);
    let scale = log_scale.map(f64::exp);
    let m = rot * Matrix3::from_diagonal(&Vector3::from(scale));
    let g_m = (g_cov + g_cov.transpose()) * m;

    let mut g_rot = g_m;
    let mut g_log_scale = [0.0; 3];
    for j in 0..3 {
        let mut g_s = 0.0;
        for i in 0..3 {
            g_s += g_m[(i, j)] * rot[(i, j)];
            g_rot[(i, j)] *= scale[j];
        }
        g_log_scale[j] = g_s * scale[j];
    }
    let g_unit = rotation_matrix_backward(unit, &g_rot);
    Ok((normalize_quaternion_backward(quaternion, g_unit), g_log_scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_box() -> SceneBounds {
        SceneBounds::new([0.0; 3], [1.0; 3]).unwrap()
    }

    #[test]
    fn init_single_gaussian_constants() {
        let cloud = init_uniform(&unit_box(), 1, 7, 0.1, -2.0, MlpArchitecture::default()).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.rotations[0], [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(cloud.log_scales[0], [0.1f64.ln(); 3]);
        assert_eq!(cloud.raw_opacities[0], -2.0);
        assert!(unit_box().contains(cloud.positions[0]));
    }

    #[test]
    fn init_default_scale_weight_count() {
        let cloud =
            init_uniform(&unit_box(), 13_000, 1, 0.1, -2.0, MlpArchitecture::default()).unwrap();
        assert_eq!(cloud.mlp_weights.len(), 13_000 * 130);
        cloud.validate().unwrap();
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_uniform(&unit_box(), 64, 99, 0.2, -2.0, MlpArchitecture::default()).unwrap();
        let b = init_uniform(&unit_box(), 64, 99, 0.2, -2.0, MlpArchitecture::default()).unwrap();
        assert_eq!(a, b);
        let c = init_uniform(&unit_box(), 64, 100, 0.2, -2.0, MlpArchitecture::default()).unwrap();
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn init_positions_are_prefix_stable() {
        let small = init_uniform(&unit_box(), 8, 3, 0.2, -2.0, MlpArchitecture::default()).unwrap();
        let large = init_uniform(&unit_box(), 16, 3, 0.2, -2.0, MlpArchitecture::default()).unwrap();
        assert_eq!(small.positions[..], large.positions[..8]);
    }

    #[test]
    fn init_rejects_bad_arguments() {
        let arch = MlpArchitecture::default();
        assert!(init_uniform(&unit_box(), 0, 1, 0.1, -2.0, arch).is_err());
        assert!(init_uniform(&unit_box(), 4, 1, 0.0, -2.0, arch).is_err());
        let flat = SceneBounds {
            min_corner: [0.0; 3],
            max_corner: [1.0, 0.0, 1.0],
        };
        assert!(init_uniform(&flat, 4, 1, 0.1, -2.0, arch).is_err());
        assert!(SceneBounds::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn covariance_identity_cases() {
        let id = build_covariance([1.0, 0.0, 0.0, 0.0], [0.0; 3]).unwrap();
        assert_abs_diff_eq!(id, Matrix3::identity(), epsilon = 1e-15);
        let stretched = build_covariance([1.0, 0.0, 0.0, 0.0], [2f64.ln(), 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(
            stretched,
            Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn covariance_rejects_zero_quaternion() {
        assert!(build_covariance([0.0; 4], [0.0; 3]).is_err());
    }

    #[test]
    fn covariance_eigenvalues_match_squared_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let ls: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..1.0));
            let cov = build_covariance(q, ls).unwrap();
            let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
            let mut expected: Vec<f64> = ls.iter().map(|l| (2.0 * l).exp()).collect();
            eig.sort_by(f64::total_cmp);
            expected.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-10 * b.max(1.0), "{eig:?} vs {expected:?}");
            }
        }
    }

    #[test]
    fn opacity_activation_values() {
        assert_eq!(activate_opacity(0.0), 0.5);
        assert!((1.0 - activate_opacity(40.0)).abs() <= 1e-15);
        let expected = 1.0 / (1.0 + 2f64.exp());
        assert!((activate_opacity(-2.0) - expected).abs() < 1e-15);
        assert!((activate_opacity(-2.0) - 0.119_202_922).abs() < 1e-9);
        assert!(activate_opacity(-800.0).is_finite());
    }

    #[test]
    fn covariance_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..10 {
            let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let ls: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..0.5));
            let weights = Matrix3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let loss = |q: [f64; 4], ls: [f64; 3]| {
                build_covariance(q, ls).unwrap().component_mul(&weights).sum()
            };
            let (gq, gls) = build_covariance_backward(q, ls, &weights).unwrap();
            for k in 0..4 {
                let (mut qp, mut qm) = (q, q);
                qp[k] += h;
                qm[k] -= h;
                let fd = (loss(qp, ls) - loss(qm, ls)) / (2.0 * h);
                assert!((fd - gq[k]).abs() <= 1e-6 * fd.abs().max(1.0), "q[{k}] {fd} vs {}", gq[k]);
            }
            for k in 0..3 {
                let (mut lp, mut lm) = (ls, ls);
                lp[k] += h;
                lm[k] -= h;
                let fd = (loss(q, lp) - loss(q, lm)) / (2.0 * h);
                assert!((fd - gls[k]).abs() <= 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn quat() -> impl Strategy<Value = [f64; 4]> {
            prop::array::uniform4(-2.0f64..2.0).prop_filter("non-zero", |q| {
                q.iter().map(|v| v * v).sum::<f64>() > 1e-6
            })
        }

        proptest! {
            #[test]
            fn covariance_is_symmetric_positive_definite(
                q in quat(),
                ls in prop::array::uniform3(-4.0f64..2.0),
            ) {
                let cov = build_covariance(q, ls).unwrap();
                let scale = cov.abs().max();
                prop_assert!((cov - cov.transpose()).abs().max() <= 1e-12 * scale);
                let eig = cov.symmetric_eigen().eigenvalues;
                prop_assert!(eig.iter().all(|&e| e > 0.0));
            }

            #[test]
            fn quaternion_normalization_is_idempotent(q in quat()) {
                let once = normalize_quaternion(q).unwrap();
                let twice = normalize_quaternion(once).unwrap();
                for k in 0..4 {
                    prop_assert!((once[k] - twice[k]).abs() <= 1e-12);
                }
                let norm: f64 = once.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() <= 1e-6);
            }

            #[test]
            fn activated_opacity_is_in_open_unit_interval(raw in -30.0f64..30.0) {
                let o = activate_opacity(raw);
                prop_assert!(o > 0.0 && o < 1.0);
            }
        }
    }
}
