#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rfsplat_core::geometry::{angles_to_direction, direction_angles, ViewPose};
use rfsplat_core::mlp::MlpArchitecture;
use rfsplat_core::raster::{rasterize_reference_traced, PixelTrace, RenderConfig};
use rfsplat_core::GaussianCloud;

/// Random cloud around a receiver at the origin. Output-layer weights are
/// kept small so colors `s / d` stay well below 1.
pub fn random_scene(seed: u64, n: usize) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = MlpArchitecture::default();
    let mut cloud = GaussianCloud::empty(arch);
    let hidden = Normal::new(0.0, 0.4).unwrap();
    let output = Normal::new(0.0, 0.08).unwrap();
    let (b1, w2) = (arch.in_dim * arch.hidden_dim, arch.in_dim * arch.hidden_dim + arch.hidden_dim);
    for _ in 0..n {
        let dir = angles_to_direction(rng.random_range(-PI..PI), rng.random_range(-0.3..1.5));
        let p = dir * rng.random_range(1.0..6.0);
        cloud.positions.push([p.x, p.y, p.z]);
        cloud.log_scales.push(std::array::from_fn(|_| rng.random_range(0.05f64..0.5).ln()));
        cloud.rotations.push(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        cloud.raw_opacities.push(rng.random_range(-3.0..3.0));
        for k in 0..arch.param_count() {
            let v = if k < w2 { hidden.sample(&mut rng) } else { output.sample(&mut rng) };
            cloud.mlp_weights.push(if (b1..w2).contains(&k) { v + 0.2 } else { v });
        }
    }
    cloud.normalize_rotations();
    cloud
}

/// Cloud whose only Gaussian sits on the center of pixel `(u, v)` at
/// distance `r`, with tiny extent and output bias `signal`.
pub fn centered_gaussian(u: usize, v: usize, width: usize, height: usize, r: f64, opacity: f64, signal: [f64; 2]) -> GaussianCloud {
    let arch = MlpArchitecture::default();
    let mut cloud = GaussianCloud::empty(arch);
    push_centered(&mut cloud, u, v, width, height, r, opacity, signal);
    cloud
}

#[allow(clippy::too_many_arguments)]
pub fn push_centered(cloud: &mut GaussianCloud, u: usize, v: usize, width: usize, height: usize, r: f64, opacity: f64, signal: [f64; 2]) {
    let dir = rfsplat_core::geometry::pixel_to_direction(u, v, width, height).unwrap();
    let p = dir * r;
    cloud.positions.push([p.x, p.y, p.z]);
    cloud.log_scales.push([-8.0; 3]);
    cloud.rotations.push([1.0, 0.0, 0.0, 0.0]);
    cloud.raw_opacities.push((opacity / (1.0 - opacity)).ln());
    let mut w = vec![0.0; cloud.arch.param_count()];
    let n = w.len();
    w[n - 2] = signal[0];
    w[n - 1] = signal[1];
    cloud.mlp_weights.extend(w);
}

/// Signs of every hidden pre-activation of every Gaussian.
pub fn relu_pattern(cloud: &GaussianCloud, pose: &ViewPose, tx: [f64; 3]) -> Vec<bool> {
    let arch = cloud.arch;
    let mut out = Vec::new();
    for i in 0..cloud.len() {
        let local = pose.to_receiver_frame(cloud.positions[i]);
        let Ok((az, el)) = direction_angles(&local) else {
            continue;
        };
        let input = [tx[0], tx[1], tx[2], az, el];
        let w = cloud.mlp_params(i);
        for j in 0..arch.hidden_dim {
            let pre = w[arch.in_dim * arch.hidden_dim + j]
                + (0..arch.in_dim).map(|k| w[j * arch.in_dim + k] * input[k]).sum::<f64>();
            out.push(pre > 0.0);
        }
        out.push(az > 0.0);
    }
    out
}

/// Discrete state that, when it changes between `±h`, marks a kink or jump.
#[derive(PartialEq, Debug)]
pub struct KinkSignature {
    pub traces: Vec<Vec<PixelTrace>>,
    pub relu: Vec<bool>,
}

pub fn kink_signature(cloud: &GaussianCloud, pose: &ViewPose, tx: [f64; 3], w: usize, h: usize, cfg: &RenderConfig) -> KinkSignature {
    let (_, traces) = rasterize_reference_traced(cloud, pose, tx, w, h, cfg).unwrap();
    KinkSignature {
        traces,
        relu: relu_pattern(cloud, pose, tx),
    }
}

/// Mutable access to parameter `k` of the flattened order used by
/// `ParamGradients::flatten`.
pub fn param_mut(cloud: &mut GaussianCloud, k: usize) -> &mut f64 {
    let n = cloud.len();
    let mut k = k;
    if k < 3 * n {
        return &mut cloud.positions[k / 3][k % 3];
    }
    k -= 3 * n;
    if k < 3 * n {
        return &mut cloud.log_scales[k / 3][k % 3];
    }
    k -= 3 * n;
    if k < 4 * n {
        return &mut cloud.rotations[k / 4][k % 4];
    }
    k -= 4 * n;
    if k < n {
        return &mut cloud.raw_opacities[k];
    }
    k -= n;
    &mut cloud.mlp_weights[k]
}

pub fn param_group(n: usize, k: usize) -> &'static str {
    match k {
        k if k < 3 * n => "positions",
        k if k < 6 * n => "log_scales",
        k if k < 10 * n => "rotations",
        k if k < 11 * n => "raw_opacities",
        _ => "mlp_weights",
    }
}
