use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ircal_core::dataset::{batches, load_manifest, write_synthetic_dataset, Domain, Split, SynthOptions};
use ircal_core::imaging::{ssim_map, ImageTensor, SsimParams};
use ircal_core::networks::{Conv2d, Direction, FlexConv, Generator, GeneratorConfig, Init};
use ircal_core::autograd::Var;
use ircal_core::training::{build_extractor, shuffle_seed, train_step, RunState, TrainConfig};
use ndarray::{Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f32> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random::<f32>())
}

fn convolutions(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random(&[4, 16, 64, 64], &mut rng);
    let conv = Conv2d::<f32>::new("c", 16, 16, 3, 1, 1, true, Init::Normal(0.05), &mut rng);
    let flex = FlexConv::<f32>::new("f", 16, 16, 3, true, Init::Normal(0.05), &mut rng);
    c.bench_function("conv2d 16->16 3x3 4x64x64 fwd+bwd", |b| {
        b.iter(|| conv.forward(&Var::input(x.clone())).mean_all().backward())
    });
    c.bench_function("flex_conv 16->16 3x3 4x64x64 fwd+bwd", |b| {
        b.iter(|| flex.forward(&Var::input(x.clone())).mean_all().backward())
    });
}

fn ssim(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut img = || ImageTensor::new(Array3::from_shape_fn((3, 256, 320), |_| rng.random::<f64>())).unwrap();
    let (x, y) = (img(), img());
    let p = SsimParams::default();
    c.bench_function("ssim_map 3x256x320", |b| b.iter(|| ssim_map(&x, &y, &p).unwrap()));
}

fn generator(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = GeneratorConfig {
        base_channels: 16,
        ..GeneratorConfig::new(Direction::AB)
    };
    let g = Generator::<f32>::new(cfg, &mut rng).unwrap();
    let ir = ImageTensor::new(Array3::from_shape_fn((3, 64, 64), |_| rng.random::<f64>())).unwrap();
    c.bench_function("generator translate 64x64 base 16", |b| b.iter(|| g.translate(&ir, None).unwrap()));
}

fn training(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let opts = SynthOptions {
        n_pairs: 8,
        seed: 0,
        resolution: (64, 64),
        n_blobs: 3,
        val_fraction: 0.0,
        test_fraction: 0.0,
    };
    let m = load_manifest(&write_synthetic_dataset(dir.path(), &opts).unwrap()).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        res_a: (32, 32),
        res_b: (64, 64),
        base_channels: 16,
        disc_width: 16,
        ..TrainConfig::default()
    };
    let next = |d, res| {
        batches(&m, d, Split::Train, cfg.batch_size, shuffle_seed(0, 0, d), res)
            .unwrap()
            .next()
            .unwrap()
            .unwrap()
    };
    let (ba, bb) = (next(Domain::A, cfg.res_a), next(Domain::B, cfg.res_b));
    let fe = build_extractor(cfg.train_backbone, &cfg.train_backbone_stage, None).unwrap();
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("train_step batch 4 32->64 base 16", |b| {
        b.iter_batched(
            || RunState::new(&cfg).unwrap(),
            |mut s| train_step(&mut s, &fe, &ba, &bb, &cfg).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, convolutions, ssim, generator, training);
criterion_main!(benches);
