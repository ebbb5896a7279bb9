use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hdmean::covariance::{factorize, CovMatrix};
use hdmean::montecarlo::draw_norms;
use hdmean::par::{with_threads, Exec};
use hdmean::stats::NormKind;
use hdmean::verify::{type1_sweep, CovarianceFamily, SizeConfig};

fn cs(dim: usize, rho: f64) -> CovMatrix {
    let entries = (0..dim * dim)
        .map(|i| if i / dim == i % dim { 1.0 } else { rho })
        .collect();
    CovMatrix::from_dense(dim, entries).unwrap()
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(2, |n| n.get()).max(2)
}

fn bench_draws(c: &mut Criterion) {
    let factor = factorize(&cs(200, 0.3)).unwrap();
    let kinds = [NormKind::Lp(2.0), NormKind::Sup];
    let mut group = c.benchmark_group("draw_norms");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| with_threads(threads(), |_| draw_norms(&factor, 2000, &kinds, 7, exec)))
        });
    }
    group.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let cfg = SizeConfig {
        n: 10,
        b_list: vec![40],
        norms: vec![NormKind::Lp(2.0), NormKind::Sup],
        trials: 40,
        covariance: CovarianceFamily::Ar1 {
            variance: 1.0,
            phi: 0.6,
        },
        target: Default::default(),
        alpha: 0.05,
        mc_draws: 500,
        bandwidth: 0.7,
        normalizer: Default::default(),
        missing_p: 1.0,
        oracle: false,
        shift: 0.0,
        shift_coords: 0,
    };
    let mut group = c.benchmark_group("type1_sweep");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| with_threads(threads(), |_| type1_sweep(&cfg, 3, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_draws, bench_sweep);
criterion_main!(benches);
