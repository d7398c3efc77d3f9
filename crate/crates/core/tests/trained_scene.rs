//! Behaviour of a model trained on the default red-green-red scene.
//!
//! A reduced network and a shorter schedule keep this suite fast; the full
//! default configuration is exercised by the acceptance run.

use std::sync::OnceLock;

use pose_cvae::autodiff::OptimizerConfig;
use pose_cvae::cvae::{
    decode, encode, kl_standard_normal, sample_posterior, train, ModelParams, TrainConfig,
};
use pose_cvae::eval::{mode_coverage, Threshold};
use pose_cvae::geometry::Pose;
use pose_cvae::scenes::{
    build_tricolor_scene, generate_dataset, true_mode_set, Observation, SceneOptions, SceneSpec,
    Split,
};

const RED: [f64; 3] = [1.0, 0.0, 0.0];
const GREEN: [f64; 3] = [0.0, 1.0, 0.0];
const NEAR: Threshold = Threshold::new(0.1, 10.0);

fn scene() -> SceneSpec {
    build_tricolor_scene(0, &SceneOptions::default()).unwrap()
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        hidden_width: 64,
        hidden_layers: 3,
        fusion_width: 32,
        feature_width: 16,
        mc_samples: 16,
        warmup_start: 500,
        warmup_length: 2000,
        iterations: 6000,
        optimizer: OptimizerConfig {
            learning_rate: 1e-3,
            ..Default::default()
        },
        ..TrainConfig::default()
    }
}

fn trained() -> &'static ModelParams<f32> {
    static MODEL: OnceLock<ModelParams<f32>> = OnceLock::new();
    MODEL.get_or_init(|| {
        let data = generate_dataset(&scene(), 300, None, 1, Split::Train).unwrap();
        train(&data.examples(), &quick_config()).unwrap().0
    })
}

/// Index of the mode region a pose falls in, if any.
fn mode_of(scene: &SceneSpec, rgb: [f64; 3], pose: &Pose) -> Option<usize> {
    let modes = true_mode_set(scene, &Observation { features: rgb.to_vec() }).unwrap();
    modes
        .regions
        .iter()
        .position(|r| NEAR.admits(r.distance(&scene.trajectory, pose)))
}

#[test]
fn distant_latents_reach_different_modes() {
    let s = scene();
    let model = trained();
    let d = model.arch().latent_dim;
    let split = (0..d).any(|k| {
        let mut z = vec![0.0; d];
        z[k] = 2.5;
        let a = decode(model, &z, &RED).unwrap().to_pose().unwrap();
        z[k] = -2.5;
        let b = decode(model, &z, &RED).unwrap().to_pose().unwrap();
        matches!((mode_of(&s, RED, &a), mode_of(&s, RED, &b)), (Some(i), Some(j)) if i != j)
    });
    assert!(split, "no latent axis separates the two red modes");
}

#[test]
fn ambiguous_query_covers_both_modes() {
    let s = scene();
    let modes = true_mode_set(&s, &Observation { features: RED.to_vec() }).unwrap();
    let samples = sample_posterior(trained(), &RED, 1000, 3).unwrap();
    let c = mode_coverage(&samples.poses, &s.trajectory, &modes, NEAR, 0.05);
    assert_eq!(c.covered, 2, "masses {:?}", c.masses);
}

#[test]
fn unambiguous_query_maps_to_single_mode() {
    let s = scene();
    let modes = true_mode_set(&s, &Observation { features: GREEN.to_vec() }).unwrap();
    let samples = sample_posterior(trained(), &GREEN, 1000, 4).unwrap();
    let c = mode_coverage(&samples.poses, &s.trajectory, &modes, NEAR, 0.05);
    assert!(c.masses[0] >= 0.9, "mass {}", c.masses[0]);
}

/// Asymptotic two-sample Kolmogorov-Smirnov p-value.
fn ks_p_value(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut stat) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        stat = stat.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * stat;
    if lambda < 0.3 {
        // the series is slow to converge here and the tail is 1 to 5 digits
        return 1.0;
    }
    let q: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    q.clamp(0.0, 1.0)
}

#[test]
fn ks_helper_sanity() {
    let a: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
    let shifted: Vec<f64> = a.iter().map(|v| v + 0.3).collect();
    assert!(ks_p_value(a.clone(), a.clone()) > 0.99);
    assert!(ks_p_value(a, shifted) < 1e-6);
}

#[test]
fn sample_distribution_does_not_depend_on_seed() {
    let model = trained();
    let xs = |seed| -> Vec<f64> {
        sample_posterior(model, &GREEN, 1000, seed)
            .unwrap()
            .poses
            .iter()
            .map(|p| p.translation.x)
            .collect()
    };
    let p = ks_p_value(xs(10), xs(20));
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn heavy_kl_weight_collapses_to_prior() {
    let data = generate_dataset(&scene(), 60, None, 1, Split::Train).unwrap();
    let cfg = TrainConfig {
        beta: 100.0,
        warmup_start: 0,
        warmup_length: 1,
        iterations: 1500,
        ..quick_config()
    };
    let (model, _) = train::<f64>(&data.examples(), &cfg).unwrap();
    let mean_kl = data
        .records
        .iter()
        .map(|r| kl_standard_normal(&encode(&model, &r.pose.to_vec9()).unwrap()))
        .sum::<f64>()
        / data.len() as f64;
    assert!(mean_kl < 0.1, "mean KL {mean_kl}");
}
