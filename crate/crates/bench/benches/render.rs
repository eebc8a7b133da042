use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nerfedit_bench::{default_field, fan_of_rays};
use nerfedit_core::field::Gradients;
use nerfedit_core::render::{render, render_backward, PixelGrad, RenderMode, RenderSettings};

fn rendering(c: &mut Criterion) {
    let params = default_field();
    let rays = fan_of_rays(256);
    let settings = RenderSettings::default();
    let mut group = c.benchmark_group("render_256_rays");
    group.sample_size(10);
    group.bench_function("forward", |b| {
        b.iter(|| render(&params, black_box(&rays), RenderMode::Full, &settings, 0).unwrap())
    });
    let mut grads = Gradients::zeros_like(&params);
    group.bench_function("forward_backward", |b| {
        b.iter(|| {
            render_backward(
                &params,
                black_box(&rays),
                RenderMode::Foreground { bg_color: [0.5; 3] },
                &settings,
                0,
                |_, _| PixelGrad {
                    color: [1.0, 1.0, 1.0],
                    edit_prob: 1.0,
                },
                &mut grads,
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, rendering);
criterion_main!(benches);
