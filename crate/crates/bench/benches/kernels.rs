use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pat_bench::{banded_medium, field};
use pat_core::acoustics::{cfl_dt, Solver};
use pat_core::metrics::{ms_ssim, MsSsimConfig};
use pat_core::network::{build_network, init_params, NetworkConfig};
use pat_core::tensor::conv_nd;
use pat_core::ConvSpec;

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv");
    for (dims, n, rate) in [(2, 64, 1), (2, 64, 2), (3, 16, 1), (3, 16, 2)] {
        let spec = ConvSpec::cube(dims, 16, 16, 3).with_dilation(rate).without_bias();
        let mut shape = vec![2, 16];
        shape.extend(vec![n; dims]);
        let x = field(&shape, 0.1);
        let w = field(&spec.weight_shape(), 0.2);
        group.bench_function(BenchmarkId::new(format!("{dims}d_r{rate}"), n), |b| {
            b.iter(|| conv_nd(black_box(&x), &w, None, &spec).unwrap())
        });
    }
    group.finish();
}

fn network_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("network_forward");
    for cfg in [NetworkConfig::dd_unet(2, 16, 4, 3, 2), NetworkConfig::fd_unet(2, 16, 4, 3)] {
        let mut g = build_network(&cfg).unwrap().graph;
        let params = init_params(&g, 1);
        g.load_params(params).unwrap();
        let x = field(&[1, 1, 64, 64], 0.3);
        group.bench_function(format!("{:?}_64x64", cfg.variant), |b| b.iter(|| g.evaluate(black_box(&x)).unwrap()));
    }
    group.finish();
}

fn acoustic_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("acoustic_step");
    for (n, dims) in [(88, 2), (256, 2), (44, 3)] {
        let m = banded_medium(n, dims);
        let solver = Solver::new(&m, cfl_dt(&m, 0.5)).unwrap();
        let mut f = solver.initial_field(&field(&vec![n; dims], 0.4)).unwrap();
        group.bench_function(BenchmarkId::new(format!("{dims}d"), n), |b| b.iter(|| solver.step(&mut f)));
    }
    group.finish();
}

fn metric(c: &mut Criterion) {
    let cfg = MsSsimConfig::default();
    let mut group = c.benchmark_group("ms_ssim");
    for shape in [vec![64, 64], vec![256, 256], vec![32, 32, 32]] {
        let a = field(&shape, 0.5);
        let b = field(&shape, 0.6);
        let name = shape.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("x");
        group.bench_function(name, |bch| bch.iter(|| ms_ssim(black_box(&a), &b, &cfg).unwrap()));
    }
    group.finish();
}

criterion_group!(
    name = benches;
    config = Criterion::default().warm_up_time(Duration::from_secs(1)).measurement_time(Duration::from_secs(3)).sample_size(20);
    targets = conv, network_forward, acoustic_step, metric
);
criterion_main!(benches);
