use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use waypoint_flow::backbone::BackboneConfig;
use waypoint_flow::data::{generate_toy_dataset, ToyDatasetSpec};
use waypoint_flow::flow::{noise_scale, Label};
use waypoint_flow::training::{
    load_waypoint_generator, waypoint_targets, PixelTrainer, TrainConfig, WaypointTrainer,
};
use waypoint_flow::waypoints::{fit_pca, stack_features, FeatureExtractor, ToyFeatureExtractor};
use waypoint_flow::{Dataset32, Tensor};

fn toy(classes: usize, per_class: usize) -> Dataset32 {
    generate_toy_dataset(&ToyDatasetSpec {
        num_classes: classes,
        image_size: 16,
        samples_per_class: per_class,
        seed: 3,
    })
    .unwrap()
}

fn data() -> Dataset32 {
    toy(4, 6)
}

fn tiny(depth: usize, hidden: usize) -> BackboneConfig {
    BackboneConfig {
        depth,
        hidden_dim: hidden,
        heads: 2,
        patch_size: 4,
        bottleneck: 16,
        image_size: 16,
        waypoint_dim: 4,
        time_freq_dim: 16,
        ..BackboneConfig::desk_pixel(4)
    }
}

fn train_cfg(model: BackboneConfig) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 8,
        base_lr: 1e-3,
        warmup_epochs: 1.0,
        ema_decay: 0.9,
        seed: 11,
        ..TrainConfig::new(model)
    }
}

fn waypoint_trainer_with(data: &Dataset32, cfg: TrainConfig) -> WaypointTrainer<f32> {
    let ex = ToyFeatureExtractor::new(4, 16, 5).unwrap();
    let stacked = stack_features(&ex, &data.images).unwrap();
    let proj = fit_pca(&stacked, 4).unwrap().projection;
    WaypointTrainer::new(cfg, data.clone(), proj, ex).unwrap()
}

fn waypoint_trainer(data: &Dataset32) -> WaypointTrainer<f32> {
    waypoint_trainer_with(data, train_cfg(tiny(1, 16)))
}

fn noise(shape: &[usize], std: f64, seed: u64) -> Tensor<f32> {
    Tensor::randn(shape, std as f32, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn waypoint_resume_matches_uninterrupted_run() {
    let d = data();
    let mut full = waypoint_trainer(&d);
    let mut first = waypoint_trainer(&d);
    assert_eq!(full.total_steps(), 9);
    let mut losses = Vec::new();
    while full.step_index() < full.total_steps() {
        losses.push(full.step().unwrap().loss);
    }
    for _ in 0..4 {
        first.step().unwrap();
    }
    let bytes = first.to_checkpoint().to_bytes();
    let ckpt = waypoint_flow::data::Checkpoint::from_bytes(&bytes).unwrap();
    let mut resumed = WaypointTrainer::resume(&ckpt, d).unwrap();
    while resumed.step_index() < resumed.total_steps() {
        resumed.step().unwrap();
    }
    assert_eq!(resumed.to_checkpoint().to_bytes(), full.to_checkpoint().to_bytes());
    assert!(losses.iter().all(|l| l.is_finite()));
}

#[test]
fn pixel_resume_matches_uninterrupted_run_with_frozen_waypoints() {
    let d = data();
    let mut w = waypoint_trainer(&d);
    for _ in 0..3 {
        w.step().unwrap();
    }
    let wgen = load_waypoint_generator::<f32>(&w.to_checkpoint()).unwrap();
    let frozen = wgen.params.clone();
    let mut full = PixelTrainer::new(train_cfg(tiny(2, 16)), d.clone(), Some(wgen.clone())).unwrap();
    let mut part = PixelTrainer::new(train_cfg(tiny(2, 16)), d.clone(), Some(wgen)).unwrap();
    while full.step_index() < full.total_steps() {
        full.step().unwrap();
    }
    for _ in 0..5 {
        part.step().unwrap();
    }
    let ckpt = part.to_checkpoint();
    let mut resumed = PixelTrainer::resume(&ckpt, d).unwrap();
    while resumed.step_index() < resumed.total_steps() {
        resumed.step().unwrap();
    }
    assert_eq!(resumed.to_checkpoint().to_bytes(), full.to_checkpoint().to_bytes());
    let after = &full.waypoints.as_ref().unwrap().params;
    for (name, t) in frozen.iter() {
        assert_eq!(after.get(name).unwrap(), t, "{name} changed during pixel training");
    }
}

#[test]
fn pixel_loss_decreases_on_toy_data() {
    let d = data();
    let mut cfg = train_cfg(tiny(2, 32));
    cfg.epochs = 60;
    cfg.batch_size = 24;
    let mut t = PixelTrainer::new(cfg, d, None).unwrap();
    let mut losses = Vec::new();
    while t.step_index() < t.total_steps() {
        losses.push(t.step().unwrap().loss);
    }
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.7 * head, "loss {head} -> {tail}");
}

#[test]
fn semantic_loss_at_init_is_mean_square_waypoint_over_squared_denominator() {
    let d = data();
    let t = waypoint_trainer(&d);
    let ex = ToyFeatureExtractor::new(4, 16, 5).unwrap();
    for (i, time) in [(0, 0.1), (5, 0.5), (11, 0.9), (17, 0.99)] {
        let s0 = t.projection.project_normalized(&ex.extract(&d.images[i]).unwrap()).unwrap();
        let eps_img = noise(d.images[i].shape(), noise_scale(16), i as u64);
        let eps_sem = noise(s0.shape(), 1.0, 100 + i as u64);
        let (loss, _) = t.sample_loss(&d.images[i], &s0, time, Label::Class(d.labels[i]), &eps_img, &eps_sem).unwrap();
        let den = (1.0 - time).max(0.05);
        let expected = s0.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / s0.len() as f64 / (den * den);
        assert!((loss - expected).abs() <= 1e-5 * expected, "t={time}: {loss} vs {expected}");
    }
}

#[test]
fn image_loss_at_init_matches_direct_evaluation() {
    let d = data();
    let t = PixelTrainer::new(train_cfg(tiny(2, 16)), d.clone(), None).unwrap();
    for (i, time) in [(1, 0.2), (8, 0.7), (20, 0.97)] {
        let x = &d.images[i];
        let eps = noise(x.shape(), noise_scale(16), 40 + i as u64);
        let (loss, _) = t.sample_loss(x, time, Label::Null, &eps).unwrap();
        let den = (1.0 - time).max(0.05);
        let expected = x
            .data()
            .iter()
            .zip(eps.data())
            .map(|(&x, &e)| {
                let (x, e) = (x as f64, e as f64);
                let z = time * x + (1.0 - time) * e;
                (-z / den - (x - e)).powi(2)
            })
            .sum::<f64>()
            / x.len() as f64;
        assert!((loss - expected).abs() <= 1e-5 * expected, "t={time}: {loss} vs {expected}");
    }
}

#[test]
fn semantic_loss_halves_on_two_classes_within_two_thousand_steps() {
    let d = toy(2, 8);
    let cfg = TrainConfig {
        epochs: 1000,
        batch_size: 8,
        max_steps: Some(2000),
        ..train_cfg(BackboneConfig {
            num_classes: 2,
            ..tiny(1, 16)
        })
    };
    let mut t = waypoint_trainer_with(&d, cfg);
    assert_eq!(t.total_steps(), 2000);
    let ex = ToyFeatureExtractor::new(4, 16, 5).unwrap();
    let targets = waypoint_targets(&d, &ex, &t.projection).unwrap();
    // Fixed probe set: every image at three times with frozen noise.
    let probe = |t: &WaypointTrainer<f32>| {
        let mut total = 0.0;
        let mut n = 0;
        for (i, s0) in targets.iter().enumerate() {
            for (k, time) in [0.25, 0.5, 0.75].into_iter().enumerate() {
                let seed = (i * 3 + k) as u64;
                let eps_img = noise(d.images[i].shape(), noise_scale(16), seed);
                let eps_sem = noise(s0.shape(), 1.0, 1000 + seed);
                total += t.sample_loss(&d.images[i], s0, time, Label::Class(d.labels[i]), &eps_img, &eps_sem).unwrap().0;
                n += 1;
            }
        }
        total / n as f64
    };
    let before = probe(&t);
    while t.step_index() < t.total_steps() {
        t.step().unwrap();
    }
    let after = probe(&t);
    assert!(after <= 0.5 * before, "probe loss {before} -> {after}");
}

#[test]
fn pixel_stage_rejects_waypoints_trained_at_another_noise_level() {
    let d = data();
    let w = waypoint_trainer(&d);
    let wgen = load_waypoint_generator::<f32>(&w.to_checkpoint()).unwrap();
    let cfg = train_cfg(BackboneConfig {
        noise_reference: 16,
        ..tiny(1, 16)
    });
    let err = PixelTrainer::new(cfg, d, Some(wgen)).unwrap_err();
    assert!(matches!(err, waypoint_flow::Error::Config(_)), "{err}");
}
