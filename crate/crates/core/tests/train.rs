mod common;

use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rfsplat_core::geometry::ViewPose;
use rfsplat_core::io::adam_state_path;
use rfsplat_core::optim::AdamState;
use rfsplat_core::raster::{magnitude, rasterize_forward, RenderConfig, SpectrumImage};
use rfsplat_core::rfsim::{gen_dataset, load_dataset, DatasetConfig, TxSample};
use rfsplat_core::train::{load_resume, train, train_from, Sampling, Supervision, TrainConfig, TrainOutputs};
use rfsplat_core::{Error, GaussianCloud};

const TX: [f64; 3] = [1.0, 1.0, -2.0];

fn blob_target(w: usize, h: usize) -> SpectrumImage {
    let mut target = common::centered_gaussian(20, 6, w, h, 3.0, 0.9, [0.0, 0.0]);
    target.log_scales[0] = [0.4f64.ln(); 3];
    let d = {
        let p = target.positions[0];
        ((p[0] - TX[0]).powi(2) + (p[1] - TX[1]).powi(2) + (p[2] - TX[2]).powi(2)).sqrt()
    };
    let n = target.mlp_weights.len();
    target.mlp_weights[n - 2] = 0.9 * d;
    let (img, _) = rasterize_forward(&target, &ViewPose::default(), TX, w, h, &RenderConfig::default()).unwrap();
    magnitude(&img).unwrap()
}

fn blob_start(w: usize, h: usize) -> GaussianCloud {
    let mut cloud = common::centered_gaussian(20, 6, w, h, 3.0, 0.5, [0.0, 0.0]);
    cloud.log_scales[0] = [0.25f64.ln(); 3];
    cloud.raw_opacities[0] = -2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for v in cloud.mlp_weights.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    cloud
}

fn sample(id: &str, tx: [f64; 3], spectrum: SpectrumImage) -> TxSample {
    TxSample {
        id: id.into(),
        tx_position: tx,
        spectrum_path: id.into(),
        spectrum,
    }
}

#[test]
fn single_blob_loss_drops_tenfold_in_500_iterations() {
    let (w, h) = (64, 16);
    let data = vec![sample("blob", TX, blob_target(w, h))];
    let cfg = TrainConfig {
        iterations: 500,
        n_gaussians: 1,
        log_every: 0,
        ..TrainConfig::default()
    };
    let cloud = blob_start(w, h);
    let state = AdamState::new(&cloud);
    let out = train_from(cloud, state, &data, &cfg, &TrainOutputs::default()).unwrap();
    let first = out.losses[0];
    let last = out.losses[out.losses.len() - 1];
    assert_eq!(out.losses.len(), 500);
    assert!(last * 10.0 <= first, "loss {first} -> {last}");
}

fn small_dataset(dir: &std::path::Path) -> (Vec<TxSample>, Vec<TxSample>) {
    let cfg = DatasetConfig {
        seed: 5,
        n_train: 32,
        n_test: 4,
        width: 90,
        height: 22,
        ..DatasetConfig::default()
    };
    gen_dataset(&cfg, dir).unwrap();
    (
        load_dataset(&dir.join("train.csv")).unwrap(),
        load_dataset(&dir.join("test.csv")).unwrap(),
    )
}

fn small_config(iterations: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        n_gaussians: 400,
        seed: 9,
        log_every: 10,
        ..TrainConfig::default()
    }
}

#[test]
fn smoothed_loss_is_non_increasing_over_first_1000_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = small_dataset(dir.path());
    let cfg = TrainConfig {
        log_every: 0,
        ..small_config(1000)
    };
    let out = train(&data, &cfg, &TrainOutputs::default()).unwrap();
    let windows: Vec<f64> = out.losses.chunks(100).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    assert_eq!(windows.len(), 10);
    for pair in windows.windows(2) {
        assert!(pair[1] <= pair[0], "window means {windows:?}");
    }
}

#[test]
fn deterministic_runs_match_and_split_runs_equal_straight_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = small_dataset(dir.path());
    for sampling in [Sampling::Uniform, Sampling::EpochShuffle] {
        let cfg = TrainConfig {
            sampling,
            ..small_config(40)
        };
        let a = train(&data, &cfg, &TrainOutputs::default()).unwrap();
        let b = train(&data, &cfg, &TrainOutputs::default()).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.cloud, b.cloud);
        assert!(a.log.iter().all(|r| r.wall_ms == 0));

        let half = train(&data, &TrainConfig { iterations: 20, ..cfg.clone() }, &TrainOutputs::default()).unwrap();
        assert_eq!(half.state.step, 20);
        let rest = train_from(half.cloud, half.state, &data, &cfg, &TrainOutputs::default()).unwrap();
        assert_eq!(rest.cloud, a.cloud);
        assert_eq!(rest.state, a.state);
        assert_eq!(rest.losses[..], a.losses[20..]);
    }
}

#[test]
fn outputs_and_resume_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = small_dataset(&dir.path().join("data"));
    let outputs = TrainOutputs {
        metrics_csv: Some(dir.path().join("run/metrics.csv")),
        checkpoint_dir: Some(dir.path().join("run/ckpt")),
    };
    let cfg = TrainConfig {
        checkpoint_every: 10,
        ..small_config(30)
    };
    let out = train(&data, &cfg, &outputs).unwrap();
    let csv = fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iteration,loss,l1,ssim_term,psnr,wall_ms");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("30,"));
    for name in ["ckpt_000010.gspc", "ckpt_000020.gspc", "final.gspc"] {
        let p = dir.path().join("run/ckpt").join(name);
        assert!(p.exists() && adam_state_path(&p).exists(), "{name}");
    }

    let (cloud, state) = load_resume(&dir.path().join("run/ckpt/ckpt_000020.gspc")).unwrap();
    assert_eq!(state.step, 20);
    let resumed = train_from(cloud, state, &data, &cfg, &TrainOutputs::default()).unwrap();
    assert_eq!(resumed.state.step, 30);
    assert_eq!(resumed.losses.len(), 10);
    for (a, b) in resumed.losses.iter().zip(&out.losses[20..]) {
        assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0), "{a} vs {b}");
    }

    let resume_done = train_from(out.cloud.clone(), out.state.clone(), &data, &cfg, &TrainOutputs::default()).unwrap();
    assert!(resume_done.losses.is_empty());
    assert_eq!(resume_done.cloud, out.cloud);
}

#[test]
fn invalid_datasets_are_rejected() {
    let cfg = small_config(5);
    assert!(matches!(train(&[], &cfg, &TrainOutputs::default()), Err(Error::InvalidArgument(_))));
    let a = sample("a", TX, SpectrumImage::zeros(36, 9, 1).unwrap());
    let b = sample("b", TX, SpectrumImage::zeros(36, 10, 1).unwrap());
    let err = train(&[a.clone(), b], &cfg, &TrainOutputs::default()).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch(_)), "{err}");
    let complex = TrainConfig {
        supervision: Supervision::Complex,
        ..cfg
    };
    assert!(matches!(train(&[a], &complex, &TrainOutputs::default()), Err(Error::DimensionMismatch(_))));
}

#[test]
fn complex_supervision_fits_a_two_channel_target() {
    let (w, h) = (36, 9);
    let mut target = blob_start(w, h);
    target.log_scales[0] = [0.4f64.ln(); 3];
    target.raw_opacities[0] = 0.4;
    let (gt, _) = rasterize_forward(&target, &ViewPose::default(), TX, w, h, &RenderConfig::default()).unwrap();
    let data = vec![sample("c", TX, gt)];
    let cfg = TrainConfig {
        supervision: Supervision::Complex,
        iterations: 500,
        n_gaussians: 1,
        log_every: 0,
        ..TrainConfig::default()
    };
    let cloud = blob_start(w, h);
    let state = AdamState::new(&cloud);
    let out = train_from(cloud, state, &data, &cfg, &TrainOutputs::default()).unwrap();
    let last = out.losses[499];
    assert!(last * 10.0 <= out.losses[0], "{} -> {last}", out.losses[0]);
}
