use paintflow_core::cond::concat_conditions;
use paintflow_core::diffusion::train::{sample_loss, TrainExample, TrainSample};
use paintflow_core::diffusion::{
    add_noise, ddim_sample, Conditions, Denoiser, ModelConfig, NoiseSchedule, SamplerConfig, ScheduleConfig, ToyModel,
};
use paintflow_core::dataset::{build_pair, PipelineConfig};
use paintflow_core::eval::gram_style_score;
use paintflow_core::image::{BinaryMask, RasterImage};
use paintflow_core::rng;
use paintflow_core::tensor::Tensor;
use rand::Rng;

#[test]
fn noising_matches_marginal_moments() {
    let s = NoiseSchedule::linear(ScheduleConfig::default()).unwrap();
    let n = 40_000;
    let z0 = Tensor::full([n], 0.6);
    let eps = Tensor::randn([n], 1.0, &mut rng::seeded(4));
    for t in [1, 250, 500, 1000] {
        let zt = add_noise(&z0, t, &eps, &s).unwrap();
        let ab = s.alpha_bar(t);
        let mean = zt.data().iter().sum::<f64>() / n as f64;
        let var = zt.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        // Sampling error of the moments at n = 40k is about 0.5%.
        assert!((mean - ab.sqrt() * 0.6).abs() < 0.02, "t={t} mean {mean}");
        assert!((var / (1.0 - ab) - 1.0).abs() < 0.03, "t={t} var {var}");
    }
}

fn example(seed: u64) -> TrainExample {
    let mut r = rng::seeded(seed);
    let img = RasterImage::from_fn(24, 24, 3, |y, x, c| ((y / 6 + x / 6 + c) % 3) as f32 * 0.4 + r.random::<f32>() * 0.1).unwrap();
    let subject = BinaryMask::from_fn(24, 24, |y, x| (6..18).contains(&y) && (5..17).contains(&x)).unwrap();
    let pair = build_pair(&img, Some(&subject), "a shape", seed, &PipelineConfig::default()).unwrap();
    TrainExample::from_pair(&pair, 24).unwrap()
}

#[test]
fn untrained_loss_is_noise_energy() {
    // The output layer starts at zero, so the first prediction is zero and
    // the loss is the mean squared noise.
    let model = ToyModel::new(ModelConfig::default(), ScheduleConfig::default()).unwrap();
    let examples = [example(1)];
    let mut r = rng::seeded(8);
    let mut total = 0.0;
    for t in [10, 300, 900] {
        let eps = Tensor::randn([3, 24, 24], 1.0, &mut r);
        let energy = eps.data().iter().map(|v| v * v).sum::<f64>() / eps.len() as f64;
        let (_, loss, _) = sample_loss(&model, &examples, &TrainSample { example: 0, t, eps, drop_reference: false }).unwrap();
        assert!((loss - energy).abs() < 1e-12);
        total += loss;
    }
    assert!((total / 3.0 - 1.0).abs() < 0.1);
}

#[test]
fn checkpoint_reload_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pfck");
    let mut model = ToyModel::new(ModelConfig { seed: 5, ..ModelConfig::default() }, ScheduleConfig::default()).unwrap();
    // Move the output layer off zero so predictions depend on every weight.
    let w = model.net.conv_out_weight();
    let shape = model.store.value(w).shape().to_vec();
    model.store.set_value(w, Tensor::randn(shape, 0.1, &mut rng::seeded(2))).unwrap();
    model.save(&path).unwrap();
    let loaded = ToyModel::load(&path).unwrap();
    assert_eq!(loaded.config, model.config);

    let mut r = rng::seeded(6);
    let z = Tensor::randn([3, 24, 24], 1.0, &mut r);
    let mask = BinaryMask::from_fn(24, 24, |y, _| y > 10).unwrap();
    let sketch = BinaryMask::zeros(24, 24).unwrap();
    let input = concat_conditions(&z, &mask, &sketch).unwrap();
    let reference = RasterImage::from_fn(9, 9, 3, |_, _, _| r.random::<f32>()).unwrap();
    let cond_of = |m: &ToyModel| Conditions {
        c_ref: m.cond.encode_reference(&m.store, &reference).unwrap(),
        c_style: None,
        c_t: m.cond.encode_text(&m.store, "boat"),
    };
    let a = model.predict_noise(&input, 400, &cond_of(&model)).unwrap();
    let b = loaded.predict_noise(&input, 400, &cond_of(&loaded)).unwrap();
    assert_eq!(a, b);

    let bad = dir.path().join("missing.pfck");
    assert!(ToyModel::load(&bad).is_err());
}

#[test]
fn sampler_rejects_bad_configs_and_shapes() {
    let model = ToyModel::new(ModelConfig::default(), ScheduleConfig::default()).unwrap();
    let src = RasterImage::filled(24, 24, 3, 0.5).unwrap();
    let mask = BinaryMask::ones(24, 24).unwrap();
    let sketch = BinaryMask::zeros(24, 24).unwrap();
    let cond = Conditions { c_ref: model.null_reference(), c_style: None, c_t: None };
    for cfg in [
        SamplerConfig { steps: 0, ..SamplerConfig::default() },
        SamplerConfig { steps: 1001, ..SamplerConfig::default() },
        SamplerConfig { guidance: f64::NAN, ..SamplerConfig::default() },
    ] {
        assert!(ddim_sample(&model, &mask, &sketch, &cond, &src, &cfg).is_err());
    }
    let small = BinaryMask::ones(12, 12).unwrap();
    assert!(ddim_sample(&model, &small, &sketch, &cond, &src, &SamplerConfig::default()).is_err());
}

#[test]
fn gram_score_invariant_to_whole_stride_shift() {
    let mut r = rng::seeded(12);
    let tex = RasterImage::from_fn(32, 32, 3, |_, _, _| r.random::<f32>()).unwrap();
    // Cyclic shift by the coarser stride permutes the patches of both scales.
    let shifted = RasterImage::from_fn(32, 32, 3, |y, x, c| tex.get(y, (x + 8) % 32, c)).unwrap();
    assert!((gram_style_score(&tex, &shifted).unwrap() - 1.0).abs() < 1e-9);
    let down = RasterImage::from_fn(32, 32, 3, |y, x, c| tex.get((y + 24) % 32, x, c)).unwrap();
    assert!((gram_style_score(&tex, &down).unwrap() - 1.0).abs() < 1e-9);
}
