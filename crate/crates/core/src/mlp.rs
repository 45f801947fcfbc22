//! Per-Gaussian emitter MLP: `(tx_x, tx_y, tx_z, azimuth, elevation)` to a
//! complex signal coefficient.
//!
//! One hidden ReLU layer, linear output. Parameters of one network are laid
//! out as `[W1 (hidden×in, row-major), b1, W2 (out×hidden, row-major), b2]`.

use crate::error::{Error, Result};
use crate::geometry::{direction_angles, ViewPose};
use crate::scene::GaussianCloud;

/// Input width of the signal MLP: transmitter position plus two angles.
pub const SIGNAL_INPUT_DIM: usize = 5;
/// Output width of the signal MLP: real and imaginary part.
pub const SIGNAL_OUTPUT_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpArchitecture {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
}

impl Default for MlpArchitecture {
    fn default() -> Self {
        Self {
            in_dim: SIGNAL_INPUT_DIM,
            hidden_dim: 16,
            out_dim: SIGNAL_OUTPUT_DIM,
        }
    }
}

impl MlpArchitecture {
    pub fn with_hidden(hidden_dim: usize) -> Self {
        Self {
            hidden_dim,
            ..Self::default()
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.hidden_dim + self.hidden_dim + self.hidden_dim * self.out_dim + self.out_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.hidden_dim == 0 || self.out_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "MLP dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// The renderer needs the 5-input, 2-output signal shape.
    pub fn validate_signal(&self) -> Result<()> {
        self.validate()?;
        if self.in_dim != SIGNAL_INPUT_DIM || self.out_dim != SIGNAL_OUTPUT_DIM {
            return Err(Error::InvalidArgument(format!(
                "signal MLP must be {SIGNAL_INPUT_DIM}->h->{SIGNAL_OUTPUT_DIM}, got {}->{}->{}",
                self.in_dim, self.hidden_dim, self.out_dim
            )));
        }
        Ok(())
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.in_dim * self.hidden_dim;
        let w2 = b1 + self.hidden_dim;
        let b2 = w2 + self.hidden_dim * self.out_dim;
        (b1, w2, b2)
    }
}

/// Complex coefficient `s = re + j·im` predicted for one Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SignalCoefficient {
    pub re: f64,
    pub im: f64,
}

impl SignalCoefficient {
    pub fn as_array(self) -> [f64; 2] {
        [self.re, self.im]
    }
}

fn check_shapes(arch: &MlpArchitecture, weights: &[f64], input: &[f64]) -> Result<()> {
    if weights.len() != arch.param_count() {
        return Err(Error::InvalidArgument(format!(
            "expected {} MLP weights, got {}",
            arch.param_count(),
            weights.len()
        )));
    }
    if input.len() != arch.in_dim {
        return Err(Error::InvalidArgument(format!(
            "expected {} MLP inputs, got {}",
            arch.in_dim,
            input.len()
        )));
    }
    Ok(())
}

/// Evaluates the network into `out` (length `out_dim`). Shapes are not checked.
pub(crate) fn forward_unchecked(arch: &MlpArchitecture, weights: &[f64], input: &[f64], out: &mut [f64]) {
    let (b1_off, w2_off, b2_off) = arch.offsets();
    let (n_in, n_hidden) = (arch.in_dim, arch.hidden_dim);
    out.copy_from_slice(&weights[b2_off..b2_off + arch.out_dim]);
    for j in 0..n_hidden {
        let row = &weights[j * n_in..(j + 1) * n_in];
        let pre = weights[b1_off + j] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        if pre > 0.0 {
            for (k, o) in out.iter_mut().enumerate() {
                *o += weights[w2_off + k * n_hidden + j] * pre;
            }
        }
    }
}

/// Accumulates `dL/dweights` into `grad_weights` and `dL/dinput` into
/// `grad_input` for upstream gradient `upstream` on the outputs.
pub(crate) fn backward_unchecked(
    arch: &MlpArchitecture,
    weights: &[f64],
    input: &[f64],
    upstream: &[f64],
    grad_weights: &mut [f64],
    grad_input: &mut [f64],
) {
    let (b1_off, w2_off, b2_off) = arch.offsets();
    let (n_in, n_hidden) = (arch.in_dim, arch.hidden_dim);
    for (g, u) in grad_weights[b2_off..b2_off + arch.out_dim].iter_mut().zip(upstream) {
        *g += u;
    }
    for j in 0..n_hidden {
        let row = &weights[j * n_in..(j + 1) * n_in];
        let pre = weights[b1_off + j] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        if pre <= 0.0 {
            continue;
        }
        let mut g_hidden = 0.0;
        for (k, u) in upstream.iter().enumerate() {
            let idx = w2_off + k * n_hidden + j;
            grad_weights[idx] += u * pre;
            g_hidden += u * weights[idx];
        }
        grad_weights[b1_off + j] += g_hidden;
        for i in 0..n_in {
            grad_weights[j * n_in + i] += g_hidden * input[i];
            grad_input[i] += g_hidden * row[i];
        }
    }
}

/// Generic forward pass for any architecture.
pub fn forward(arch: &MlpArchitecture, weights: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    check_shapes(arch, weights, input)?;
    let mut out = vec![0.0; arch.out_dim];
    forward_unchecked(arch, weights, input, &mut out);
    Ok(out)
}

/// Exact gradients of `upstream · forward(weights, input)`.
///
/// Returns `(grad_weights, grad_input)`.
pub fn backward(
    arch: &MlpArchitecture,
    weights: &[f64],
    input: &[f64],
    upstream: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_shapes(arch, weights, input)?;
    if upstream.len() != arch.out_dim {
        return Err(Error::InvalidArgument(format!(
            "expected {} upstream values, got {}",
            arch.out_dim,
            upstream.len()
        )));
    }
    let mut grad_weights = vec![0.0; weights.len()];
    let mut grad_input = vec![0.0; input.len()];
    backward_unchecked(arch, weights, input, upstream, &mut grad_weights, &mut grad_input);
    Ok((grad_weights, grad_input))
}

pub fn signal_input(tx: [f64; 3], azimuth: f64, elevation: f64) -> [f64; SIGNAL_INPUT_DIM] {
    [tx[0], tx[1], tx[2], azimuth, elevation]
}

/// `s = f(tx, azimuth, elevation)` with angles in raw radians.
pub fn mlp_forward(
    arch: &MlpArchitecture,
    weights: &[f64],
    tx: [f64; 3],
    azimuth: f64,
    elevation: f64,
) -> Result<SignalCoefficient> {
    arch.validate_signal()?;
    let input = signal_input(tx, azimuth, elevation);
    check_shapes(arch, weights, &input)?;
    let mut out = [0.0; SIGNAL_OUTPUT_DIM];
    forward_unchecked(arch, weights, &input, &mut out);
    Ok(SignalCoefficient { re: out[0], im: out[1] })
}

/// Backward of [`mlp_forward`]: gradients w.r.t. the weights and the 5 inputs.
pub fn mlp_backward(
    arch: &MlpArchitecture,
    weights: &[f64],
    input: &[f64; SIGNAL_INPUT_DIM],
    upstream: [f64; SIGNAL_OUTPUT_DIM],
) -> Result<(Vec<f64>, [f64; SIGNAL_INPUT_DIM])> {
    arch.validate_signal()?;
    let (gw, gi) = backward(arch, weights, input, &upstream)?;
    let mut grad_input = [0.0; SIGNAL_INPUT_DIM];
    grad_input.copy_from_slice(&gi);
    Ok((gw, grad_input))
}

/// Predicts the coefficient of every listed Gaussian, with the angles taken
/// from the receiver-frame direction of its center.
pub fn batch_forward(
    cloud: &GaussianCloud,
    indices: &[usize],
    tx: [f64; 3],
    pose: &ViewPose,
) -> Result<Vec<SignalCoefficient>> {
    cloud.arch.validate_signal()?;
    cloud.check_shapes()?;
    indices
        .iter()
        .map(|&i| {
            if i >= cloud.len() {
                return Err(Error::InvalidArgument(format!(
                    "index {i} out of range for cloud of {}",
                    cloud.len()
                )));
            }
            let local = pose.to_receiver_frame(cloud.positions[i]);
            let (azimuth, elevation) = direction_angles(&local).unwrap_or((0.0, 0.0));
            mlp_forward(&cloud.arch, cloud.mlp_params(i), tx, azimuth, elevation)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_weights(rng: &mut ChaCha8Rng, arch: &MlpArchitecture) -> Vec<f64> {
        (0..arch.param_count()).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn default_architecture_has_130_parameters() {
        assert_eq!(MlpArchitecture::default().param_count(), 130);
        assert_eq!(MlpArchitecture::with_hidden(32).param_count(), 5 * 32 + 32 + 32 * 2 + 2);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let arch = MlpArchitecture::default();
        let w = vec![0.0; arch.param_count()];
        let s = mlp_forward(&arch, &w, [1.0, -2.0, 3.0], 0.3, 0.2).unwrap();
        assert_eq!(s, SignalCoefficient { re: 0.0, im: 0.0 });
    }

    #[test]
    fn output_bias_passes_through() {
        let arch = MlpArchitecture::default();
        let mut w = vec![0.0; arch.param_count()];
        let n = w.len();
        w[n - 2] = 0.7;
        w[n - 1] = -1.3;
        for (tx, az, el) in [([0.0; 3], 0.0, 0.0), ([4.0, 1.0, -3.0], 2.0, 1.0)] {
            let s = mlp_forward(&arch, &w, tx, az, el).unwrap();
            assert_eq!((s.re, s.im), (0.7, -1.3));
        }
    }

    #[test]
    fn angles_are_not_periodic() {
        let arch = MlpArchitecture::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_weights(&mut rng, &arch);
        let a = mlp_forward(&arch, &w, [0.5, 1.0, -0.5], 0.4, 0.3).unwrap();
        let b = mlp_forward(&arch, &w, [0.5, 1.0, -0.5], 0.4 + std::f64::consts::TAU, 0.3).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn wrong_weight_length_is_rejected() {
        let arch = MlpArchitecture::default();
        assert!(mlp_forward(&arch, &[0.0; 10], [0.0; 3], 0.0, 0.0).is_err());
        let input = [0.0; 5];
        assert!(mlp_backward(&arch, &[0.0; 129], &input, [1.0, 0.0]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let arch = MlpArchitecture::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random_weights(&mut rng, &arch);
        let (gw, gi) = mlp_backward(&arch, &w, &[0.1, 0.2, 0.3, 0.4, 0.5], [0.0, 0.0]).unwrap();
        assert!(gw.iter().all(|&g| g == 0.0));
        assert!(gi.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dead_relu_unit_gets_no_incoming_gradient() {
        let arch = MlpArchitecture::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut w = random_weights(&mut rng, &arch);
        // unit 3: zero incoming weights and a negative bias => pre-activation < 0
        for i in 0..5 {
            w[3 * 5 + i] = 0.0;
        }
        w[5 * 16 + 3] = -1.0;
        let input = [0.3, -0.2, 1.0, 0.5, 0.1];
        let (gw, _) = mlp_backward(&arch, &w, &input, [1.0, -2.0]).unwrap();
        for i in 0..5 {
            assert_eq!(gw[3 * 5 + i], 0.0);
        }
        assert_eq!(gw[5 * 16 + 3], 0.0);
    }

    /// Central differences on `upstream · f`, skipping inputs near a ReLU kink.
    fn check_gradients(seed: u64, step: f64, tol: f64) -> usize {
        let arch = MlpArchitecture::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_weights(&mut rng, &arch);
        let input: [f64; 5] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let upstream = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let f = |w: &[f64], x: &[f64]| {
            let out = forward(&arch, w, x).unwrap();
            out[0] * upstream[0] + out[1] * upstream[1]
        };
        let near_kink = |w: &[f64], x: &[f64]| {
            (0..arch.hidden_dim).any(|j| {
                let pre = w[80 + j] + (0..5).map(|i| w[j * 5 + i] * x[i]).sum::<f64>();
                pre.abs() < 1e-6 + 10.0 * step * (1.0 + x.iter().map(|v| v.abs()).sum::<f64>())
            })
        };
        if near_kink(&w, &input) {
            return 0;
        }
        let (gw, gi) = mlp_backward(&arch, &w, &input, upstream).unwrap();
        let mut checked = 0;
        for k in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[k] += step;
            wm[k] -= step;
            let fd = (f(&wp, &input) - f(&wm, &input)) / (2.0 * step);
            let rel = (fd - gw[k]).abs() / fd.abs().max(gw[k].abs()).max(1e-8);
            assert!(rel <= tol, "weight {k}: fd {fd} analytic {}", gw[k]);
            checked += 1;
        }
        for k in 0..5 {
            let (mut xp, mut xm) = (input, input);
            xp[k] += step;
            xm[k] -= step;
            let fd = (f(&w, &xp) - f(&w, &xm)) / (2.0 * step);
            let rel = (fd - gi[k]).abs() / fd.abs().max(gi[k].abs()).max(1e-8);
            assert!(rel <= tol, "input {k}: fd {fd} analytic {}", gi[k]);
        }
        checked
    }

    #[test]
    fn backward_matches_central_differences() {
        let checked: usize = (0..20).map(|s| check_gradients(100 + s, 1e-6, 1e-4)).sum();
        assert!(checked >= 5 * 130, "too many samples skipped at kinks");
    }

    #[test]
    fn batch_forward_uses_receiver_angles() {
        let arch = MlpArchitecture::default();
        let mut cloud = GaussianCloud::empty(arch);
        cloud.positions.push([0.0, 1.0, 1.0]);
        cloud.log_scales.push([0.0; 3]);
        cloud.rotations.push([1.0, 0.0, 0.0, 0.0]);
        cloud.raw_opacities.push(0.0);
        let mut w = vec![0.0; 130];
        // hidden unit 0 copies azimuth + 10, unit 1 copies elevation + 10
        w[3] = 1.0;
        w[5 + 4] = 1.0;
        w[80] = 10.0;
        w[81] = 10.0;
        w[96] = 1.0;
        w[96 + 16 + 1] = 1.0;
        w[128] = -10.0;
        w[129] = -10.0;
        cloud.mlp_weights = w;
        let out = batch_forward(&cloud, &[0], [2.0, 0.0, 0.0], &ViewPose::identity_at([0.0; 3])).unwrap();
        assert!((out[0].re - 0.0).abs() < 1e-12);
        assert!((out[0].im - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert!(batch_forward(&cloud, &[], [0.0; 3], &ViewPose::default()).unwrap().is_empty());
    }

    #[test]
    fn batch_forward_is_independent_per_gaussian() {
        let bounds = crate::scene::SceneBounds::new([-2.0, 0.5, -2.0], [2.0, 2.0, 2.0]).unwrap();
        let a = crate::scene::init_uniform(&bounds, 6, 3, 0.2, -2.0, MlpArchitecture::default()).unwrap();
        let mut b = a.clone();
        for v in b.mlp_params_mut(2) {
            *v += 0.5;
        }
        let idx: Vec<usize> = (0..6).collect();
        let pose = ViewPose::default();
        let sa = batch_forward(&a, &idx, [1.0, 1.0, 1.0], &pose).unwrap();
        let sb = batch_forward(&b, &idx, [1.0, 1.0, 1.0], &pose).unwrap();
        for i in 0..6 {
            assert_eq!(sa[i] == sb[i], i != 2, "index {i}");
        }
    }
}
