use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spm_core::{evolve, step, Forcing, NonlinearSolver, Nonlinearity, SolverConfig};
use std::hint::black_box;

fn implicit_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("backward_euler_step");
    let models = [("cube", Nonlinearity::power_law(3.0).unwrap()), ("mollified", Nonlinearity::mollified_exp())];
    for n in [16, 32, 64] {
        let d = spm_bench::domain(n);
        let x = spm_bench::field(&d, 3);
        let (q, path) = spm_bench::noise(&d, 3);
        let f = Forcing::new(&path, &q);
        for (name, nl) in &models {
            // Fixed point converges linearly and needs a larger iteration budget.
            for (solver, tag, max_iters) in
                [(NonlinearSolver::Newton, "newton", 100), (NonlinearSolver::FixedPoint, "fixed_point", 100_000)]
            {
                let cfg = SolverConfig { solver, max_iters, ..SolverConfig::default().with_dt(1e-2) };
                g.bench_with_input(BenchmarkId::new(format!("{name}/{tag}"), n), &n, |b, _| {
                    b.iter(|| step(black_box(&x), 0.0, &cfg, nl, f).unwrap())
                });
            }
        }
    }
    g.finish();
}

fn unit_horizon(c: &mut Criterion) {
    let d = spm_bench::domain(32);
    let x = spm_bench::field(&d, 4);
    let (q, path) = spm_bench::noise(&d, 4);
    let nl = Nonlinearity::power_law(3.0).unwrap();
    let cfg = SolverConfig::default().with_dt(1e-2);
    let mut g = c.benchmark_group("evolve");
    g.sample_size(20);
    g.bench_function("cube_32_modes_t1", |b| b.iter(|| evolve(black_box(&x), -1.0, 0.0, Forcing::new(&path, &q), &cfg, &nl).unwrap()));
    g.finish();
}

criterion_group!(benches, implicit_step, unit_horizon);
criterion_main!(benches);
