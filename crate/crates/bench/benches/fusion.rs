use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hps_core::fusion::{evaluate_objective, gradient, initialize_batch, optimize_batch, Batch, FusionConfig};
use hps_core::scene::build_index;
use hps_core::simkit::{self, PathSpec, SimSpec};
use hps_core::{Rotation, SceneIndex, ScenePointCloud, Skeleton, Vec3};

struct Fixture {
    batch: Batch,
    vars: Vec<f64>,
    scene: SceneIndex,
    head_to_camera: Rotation,
}

fn fixture(frames: usize) -> Fixture {
    let spec = SimSpec {
        path: PathSpec::Circle { radius: 8.0 },
        duration: (frames - 1) as f64 / 30.0,
        ..Default::default()
    };
    let bundle = simkit::generate(&spec).expect("simulation");
    let seq = bundle.clean;
    let cfg = FusionConfig::default();
    let sk = Skeleton::smpl_default();
    let init = initialize_batch(seq.frames(), seq.rate_hz(), &cfg, &sk).expect("initialization");
    let batch = Batch {
        theta_imu: seq.frames().iter().map(|f| f.theta_imu).collect(),
        contacts: seq.frames().iter().map(|f| f.contacts).collect(),
        camera_rotations: seq.frames().iter().map(|f| f.camera.map(|c| c.rotation)).collect(),
    };
    Fixture {
        batch,
        vars: init.to_vars(),
        scene: build_index(bundle.scene).expect("scene index"),
        head_to_camera: bundle.head_to_camera,
    }
}

fn objective(c: &mut Criterion) {
    let f = fixture(60);
    let cfg = FusionConfig::default();
    let sk = Skeleton::smpl_default();
    let mut group = c.benchmark_group("objective_60_frames");
    group.bench_function("value", |b| {
        b.iter(|| evaluate_objective(black_box(&f.vars), &f.batch, &cfg, &sk, &f.scene, &f.head_to_camera).unwrap())
    });
    group.bench_function("gradient", |b| {
        b.iter(|| gradient(black_box(&f.vars), &f.batch, &cfg, &sk, &f.scene, &f.head_to_camera).unwrap())
    });
    group.finish();
}

fn kd_tree(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let points: Vec<Vec3> = (0..100_000)
        .map(|_| Vec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(0.0..0.1)))
        .collect();
    let probes: Vec<Vec3> = (0..1000)
        .map(|_| Vec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-0.5..0.5)))
        .collect();
    let cloud = ScenePointCloud::new(points, None).unwrap();
    let mut group = c.benchmark_group("kd_tree_100k");
    group.sample_size(10);
    group.bench_function("build", |b| {
        b.iter_batched(|| cloud.clone(), |c| build_index(c).unwrap(), BatchSize::LargeInput)
    });
    let index = build_index(cloud).unwrap();
    group.bench_function("1000_queries", |b| {
        b.iter(|| probes.iter().map(|p| index.nearest(p).distance).sum::<f64>())
    });
    group.finish();
}

fn batch_optimization(c: &mut Criterion) {
    let f = fixture(30);
    let cfg = FusionConfig {
        max_iterations: 50,
        ..Default::default()
    };
    let sk = Skeleton::smpl_default();
    let mut group = c.benchmark_group("optimize_batch_30_frames");
    group.sample_size(10);
    group.bench_function("50_iterations", |b| {
        b.iter(|| optimize_batch(&f.batch, black_box(&f.vars), &cfg, &sk, &f.scene, &f.head_to_camera).unwrap())
    });
    group.finish();
}

criterion_group!(benches, objective, kd_tree, batch_optimization);
criterion_main!(benches);
