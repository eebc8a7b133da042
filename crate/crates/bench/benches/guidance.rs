use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nerfedit_core::guidance::{make_target_oracle, sds_gradient, SdsConfig};
use nerfedit_core::image::Image;

fn guidance(c: &mut Criterion) {
    let target = Image::filled(64, 64, &[0.8, 0.2, 0.1]);
    let oracle = make_target_oracle(target).unwrap();
    let image = Image::filled(64, 64, &[0.3, 0.3, 0.3]);
    let cfg = SdsConfig::default();
    let schedule = cfg.schedule().unwrap();
    let mut seed = 0;
    c.bench_function("sds_gradient_64x64", |b| {
        b.iter(|| {
            seed += 1;
            sds_gradient(
                &oracle,
                black_box(&image),
                "a red sphere",
                &schedule,
                &cfg,
                seed,
                None,
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, guidance);
criterion_main!(benches);
