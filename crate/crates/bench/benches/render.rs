use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use robustsplat::grad::render_backward;
use robustsplat::{render, render_mc_oracle, RenderOptions};
use robustsplat_bench::Fixture;

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("render");
    for &n in &[50usize, 500] {
        let f = Fixture::new(n, 128);
        group.bench_with_input(BenchmarkId::from_parameter(n), &f, |b, f| {
            b.iter(|| render(&f.scene, &f.camera, &f.params, &RenderOptions::default()))
        });
    }
    group.finish();
}

fn backward(c: &mut Criterion) {
    let f = Fixture::new(200, 128);
    let adjoint = f.adjoint();
    c.bench_function("render_backward/200", |b| {
        b.iter(|| render_backward(&f.scene, &f.camera, &f.params, &RenderOptions::default(), &adjoint))
    });
}

fn mc_oracle(c: &mut Criterion) {
    let f = Fixture::new(50, 64);
    let mut group = c.benchmark_group("render_mc_oracle");
    group.sample_size(10);
    for &samples in &[16usize, 64] {
        group.bench_with_input(BenchmarkId::from_parameter(samples), &samples, |b, &s| {
            b.iter(|| render_mc_oracle(&f.scene, &f.camera, &f.params, &RenderOptions::default(), s, 1))
        });
    }
    group.finish();
}

criterion_group!(benches, forward, backward, mc_oracle);
criterion_main!(benches);
