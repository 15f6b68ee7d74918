use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use waypoint_flow::backbone::{BackboneConfig, Injection, PixelGenerator};
use waypoint_flow::flow::{logistic, logit, noise_scale, sample_time, Label, TimeSamplerConfig, NOISE_REFERENCE};
use waypoint_flow::sampler::{
    euler_step, heun_step, initial_noise, integrate, sample, Models, SamplerConfig, Solver,
};
use waypoint_flow::waypoints::WaypointGenerator;
use waypoint_flow::{Error, Tensor};

fn cfg() -> BackboneConfig {
    BackboneConfig {
        depth: 1,
        hidden_dim: 16,
        heads: 2,
        patch_size: 4,
        bottleneck: 8,
        num_classes: 3,
        image_size: 8,
        waypoint_dim: 4,
        time_freq_dim: 8,
        mlp_ratio: 2,
        injection: Injection::JustPixelAdaLn,
        noise_reference: NOISE_REFERENCE,
    }
}

#[test]
fn one_euler_step_with_zero_init_models_lands_on_zero() {
    let pixel = PixelGenerator::<f64>::new(cfg(), 1).unwrap();
    let wgen = WaypointGenerator::<f64>::new(cfg(), 2).unwrap();
    let models = Models::new(&pixel, Some(&wgen));
    let sc = SamplerConfig {
        steps: 1,
        solver: Solver::Euler,
        seed: 3,
        ..SamplerConfig::default()
    };
    let (x, trace) = sample(&models, Label::Class(0), &sc).unwrap();
    assert!(x.data().iter().all(|&v| v == 0.0));
    assert_eq!(trace.len(), 1);
}

#[test]
fn trace_has_one_entry_per_step_on_a_linear_grid() {
    let pixel = PixelGenerator::<f64>::new(cfg(), 4).unwrap();
    let models = Models::new(&pixel, None);
    let sc = SamplerConfig {
        steps: 7,
        seed: 5,
        ..SamplerConfig::default()
    };
    let (a, trace) = sample(&models, Label::Class(1), &sc).unwrap();
    assert_eq!(trace.len(), 7);
    for (k, s) in trace.steps.iter().enumerate() {
        assert_eq!(s.step, k);
        assert!((s.t - k as f64 / 7.0).abs() < 1e-15);
    }
    let (b, _) = sample(&models, Label::Class(1), &sc).unwrap();
    assert_eq!(a, b);
    let mut lines = Vec::new();
    trace.write_jsonl(&mut lines).unwrap();
    assert_eq!(String::from_utf8(lines).unwrap().lines().count(), 7);
}

#[test]
fn initial_noise_has_the_resolution_scaled_spread() {
    let z = initial_noise::<f64>(64, noise_scale(64), 7);
    let std = (z.norm_sq() / z.len() as f64).sqrt();
    assert!((std - 0.25).abs() < 0.02 * 0.25);
    assert_eq!(initial_noise::<f64>(64, noise_scale(64), 7), z);

    let pixel = PixelGenerator::<f64>::new(BackboneConfig { noise_reference: 4, ..cfg() }, 1).unwrap();
    let z = Models::new(&pixel, None).initial_noise(3);
    let std = (z.norm_sq() / z.len() as f64).sqrt();
    assert!((std - 2.0).abs() < 0.2, "{std}");
}

#[test]
fn heun_equals_euler_on_constant_fields() {
    let z = Tensor::vector(vec![0.5f64, -1.0]);
    let c = Tensor::vector(vec![2.0f64, 3.0]);
    let e = euler_step(&z, 0.2, 0.45, &c).unwrap();
    let h = heun_step(&z, 0.2, 0.45, |_, _| Ok(c.clone())).unwrap();
    assert_eq!(e, h);
    let one = Tensor::vector(vec![1.0f64]);
    let h = heun_step(&one, 0.0, 0.1, |z, _| Ok(z.clone())).unwrap();
    assert!((h.data()[0] - (1.0 + 0.1 + 0.005)).abs() < 1e-15);
}

#[test]
fn non_finite_state_aborts_with_the_step() {
    let mut pixel = PixelGenerator::<f64>::new(cfg(), 8).unwrap();
    let shape = pixel.params.get("final.proj2.bias").unwrap().shape().to_vec();
    pixel.params.set("final.proj2.bias", Tensor::full(&shape, f64::NAN)).unwrap();
    let models = Models::new(&pixel, None);
    let sc = SamplerConfig {
        steps: 4,
        ..SamplerConfig::default()
    };
    let err = integrate(&models, models.initial_noise(9), Label::Class(0), &sc).unwrap_err();
    assert!(matches!(err, Error::Numerical { step: 0 }), "{err}");
}

#[test]
fn time_sampler_matches_its_logit_normal_law() {
    let degenerate = TimeSamplerConfig { mu: -0.8, sigma: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    assert!((sample_time(&degenerate, &mut rng) - 0.31003).abs() < 1e-5);
    assert!((logistic(-0.8) - 0.31003).abs() < 1e-5);

    let law = TimeSamplerConfig::default();
    let draws: Vec<f64> = (0..100_000).map(|_| logit(sample_time(&law, &mut rng))).collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    assert!((mean + 0.8).abs() < 0.02, "{mean}");
    assert!((var.sqrt() - 0.8).abs() < 0.02, "{}", var.sqrt());
}
