use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gazebin::binning::BinScheme;
use gazebin::data::{generate_synthetic, prepare_training_set, SyntheticConfig};
use gazebin::eval::{evaluate, Scope};
use gazebin::exec;
use gazebin::geometry::{angles_to_vector, normalize_sample, GazeAngles, NormalizationParams};
use gazebin::model::{batch_images, build_model, ModelConfig, ModelPredictor};
use gazebin::train::{TrainConfig, Trainer};
use gazebin::Image;
use nalgebra::{Matrix3, Rotation3, Vector3};

fn modes() -> [(&'static str, bool); 2] {
    [("rayon", true), ("sequential", false)]
}

fn run<R>(parallel: bool, f: impl FnOnce() -> R) -> R {
    if parallel {
        f()
    } else {
        exec::sequential(f)
    }
}

fn bench_forward(c: &mut Criterion) {
    let samples = generate_synthetic(&SyntheticConfig {
        n_samples: 16,
        ..Default::default()
    })
    .unwrap();
    let model = build_model(&ModelConfig::toy(28)).unwrap();
    let x = batch_images(&samples.iter().map(|s| &s.image).collect::<Vec<_>>()).unwrap();
    let mut group = c.benchmark_group("toy_forward_batch16");
    for (name, parallel) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(parallel, || model.forward(&x).unwrap()))
        });
    }
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let scheme = BinScheme::mpiigaze();
    let samples = generate_synthetic(&SyntheticConfig {
        n_samples: 16,
        ..Default::default()
    })
    .unwrap();
    let batch = prepare_training_set(&samples, &scheme).unwrap();
    let mut group = c.benchmark_group("toy_train_step_batch16");
    group.sample_size(20);
    for (name, parallel) in modes() {
        let config = TrainConfig {
            learning_rate: 1e-3,
            ..Default::default()
        };
        let mut trainer = Trainer::new(build_model(&ModelConfig::toy(28)).unwrap(), scheme.clone(), &config).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(parallel, || trainer.step(&batch).unwrap()))
        });
    }
    group.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let scheme = BinScheme::mpiigaze();
    let samples = generate_synthetic(&SyntheticConfig {
        n_samples: 256,
        ..Default::default()
    })
    .unwrap();
    let model = build_model(&ModelConfig::toy(28)).unwrap();
    let predictor = ModelPredictor {
        model: &model,
        scheme: &scheme,
    };
    let mut group = c.benchmark_group("evaluate_256");
    group.sample_size(10);
    for (name, parallel) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(parallel, || evaluate(&predictor, &samples, Scope::All).unwrap()))
        });
    }
    group.finish();
}

fn bench_normalize(c: &mut Criterion) {
    let image = Image::from_shape_fn((3, 480, 640), |(ch, y, x)| ((x * 7 + y * 3 + ch) % 255) as f64 / 255.0);
    let camera = Matrix3::new(900.0, 0.0, 320.0, 0.0, 900.0, 240.0, 0.0, 0.0, 1.0);
    let head = *Rotation3::from_euler_angles(0.2, -0.1, 0.3).matrix();
    let params = NormalizationParams::with_defaults(camera, head, Vector3::new(30.0, -20.0, 650.0));
    let gaze = angles_to_vector(GazeAngles::from_degrees(5.0, -10.0)).unwrap();
    let mut group = c.benchmark_group("normalize_224");
    for (name, parallel) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(parallel, || normalize_sample(&image, &params, &gaze).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_forward, bench_train_step, bench_evaluate, bench_normalize);
criterion_main!(benches);
