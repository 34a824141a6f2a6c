use std::hint::black_box;
use std::path::Path;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use homog::cellsolve::{solve_lambda, CellConfig};
use homog::demos::demo_config;
use homog::harness::Problem;
use homog::krylov::KrylovConfig;
use homog::linalg::CMat;
use homog::resolvent::{solve_oscillatory_coeffs, EffectiveResolvent};
use homog::spectral::Spectral;
use homog::{Complex64 as C64, Lattice, PeriodicField, SymbolB, TorusGrid};

fn two_phase_problem() -> Problem {
    let cfg = demo_config("1d-two-phase").unwrap();
    Problem::build(&cfg, Path::new(".")).unwrap()
}

fn test_vector(len: usize) -> Vec<C64> {
    (0..len)
        .map(|i| C64::new((0.37 * i as f64).sin(), (0.11 * i as f64).cos()))
        .collect()
}

fn fft(c: &mut Criterion) {
    let mut group = c.benchmark_group("fft");
    for points in [[256, 1], [64, 64]] {
        let d = if points[1] == 1 { 1 } else { 2 };
        let grid = TorusGrid::cell(Arc::new(Lattice::cubic(d)), points[..d].to_vec()).unwrap();
        let sp = Spectral::new(&grid);
        let data = test_vector(sp.nphys());
        let mut out = vec![C64::default(); sp.nmodes()];
        group.bench_function(BenchmarkId::new("forward", format!("{points:?}")), |b| {
            b.iter(|| sp.forward(black_box(&data), &mut out))
        });
    }
    group.finish();
}

fn cell_solve(c: &mut Criterion) {
    let grid = TorusGrid::cell(Arc::new(Lattice::cubic(2)), vec![32, 32]).unwrap();
    let g = PeriodicField::from_fn(grid, 2, 2, |t| {
        let inside = (t[0] - 0.5).powi(2) + (t[1] - 0.5).powi(2) < 0.09;
        CMat::identity(2, 2) * C64::new(if inside { 5.0 } else { 1.0 }, 0.0)
    });
    let b = SymbolB::gradient(2);
    c.bench_function("cell/lambda_inclusion_32x32", |bch| {
        bch.iter(|| solve_lambda(black_box(&g), &b, &CellConfig::default()).unwrap())
    });
}

fn oscillatory(c: &mut Criterion) {
    let problem = two_phase_problem();
    let zeta = C64::new(-1.0, 0.0);
    let krylov = KrylovConfig {
        rtol: 1e-10,
        maxiter: 2000,
        restart: 60,
    };
    let mut group = c.benchmark_group("oscillatory");
    group.sample_size(10);
    for k in [8, 32] {
        let op = problem.operator(k).unwrap();
        let nm = op.n() * op.nmodes();
        let u = op.projected(&test_vector(nm));
        let mut out = vec![C64::default(); nm];
        group.bench_with_input(BenchmarkId::new("apply", k), &k, |b, _| {
            b.iter(|| op.apply_coeffs(zeta, black_box(&u), &mut out))
        });
        let pre = EffectiveResolvent::new(&problem.eff, zeta, op.spectral()).unwrap();
        group.bench_with_input(BenchmarkId::new("solve", k), &k, |b, _| {
            b.iter(|| {
                let mut x = vec![C64::default(); nm];
                solve_oscillatory_coeffs(&op, &pre, zeta, black_box(&u), &mut x, &krylov).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, fft, cell_solve, oscillatory);
criterion_main!(benches);
