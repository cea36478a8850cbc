use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qacal_bench::mixed_matrix;
use qacal_core::calibration::e_step;
use qacal_core::dif::{run_dif_screen, DifConfig};
use qacal_core::{fit_mixed, gauss_hermite_grid, CalibrationConfig};

fn quadrature(c: &mut Criterion) {
    let mut g = c.benchmark_group("gauss_hermite_grid");
    for n in [10, 41, 200] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| b.iter(|| gauss_hermite_grid(n).unwrap()));
    }
    g.finish();
}

fn calibration(c: &mut Criterion) {
    let grid = gauss_hermite_grid(41).unwrap();
    let config = CalibrationConfig::default();
    let mut g = c.benchmark_group("calibration");
    g.sample_size(10);
    for n in [45, 500] {
        let m = mixed_matrix(n, 20, 11);
        let fit = fit_mixed(&m, &config).unwrap();
        let (aligned, params) = fit.aligned(&m).unwrap();
        g.bench_with_input(BenchmarkId::new("e_step", n), &n, |b, _| b.iter(|| e_step(&aligned, &params, &grid).unwrap()));
        g.bench_with_input(BenchmarkId::new("fit_mixed", n), &n, |b, _| b.iter(|| fit_mixed(&m, &config).unwrap()));
        let dif = DifConfig::default();
        g.bench_with_input(BenchmarkId::new("dif_screen", n), &n, |b, _| {
            b.iter(|| run_dif_screen(&aligned, &params, &grid, &dif).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, quadrature, calibration);
criterion_main!(benches);
