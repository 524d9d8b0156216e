use criterion::{criterion_group, criterion_main, Criterion};
use posture_core::datagen::{generate_samples, DomainSpec};
use posture_core::segnet::{SegConfig, SegModel};
use posture_core::{DomainTag, Sample};

fn batch() -> Vec<Sample> {
    generate_samples(16, &DomainSpec::target(), 7, 64, DomainTag::Target).expect("samples")
}

fn forward_batch(c: &mut Criterion) {
    let samples = batch();
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let model = SegModel::<f32>::new(SegConfig::default(), 0).expect("model");
    let mut group = c.benchmark_group("predict_batch_16x64");
    group.sample_size(10);

    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("pool");
        group.bench_function("rayon_1_thread", |b| {
            b.iter(|| single.install(|| model.predict_batch(&images)))
        });
        group.bench_function("rayon_default_pool", |b| {
            b.iter(|| model.predict_batch(&images))
        });
    }
    #[cfg(not(feature = "parallel"))]
    group.bench_function("sequential", |b| b.iter(|| model.predict_batch(&images)));

    group.finish();
}

criterion_group!(benches, forward_batch);
criterion_main!(benches);
