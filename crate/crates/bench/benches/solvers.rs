use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use mongeampere::{
    ma_density, maximal_extension, solve_ma_fixed_rhs, solve_poisson, solve_radial, PreconditionerKind,
    SolverConfig,
};
use mongeampere_bench::{cheng_yau_density, quadratic};

fn operator(c: &mut Criterion) {
    let mut g = c.benchmark_group("ma_density");
    for (n, nodes) in [(1, 65), (2, 9), (2, 17)] {
        let u = quadratic(n, nodes);
        g.bench_with_input(BenchmarkId::new(format!("n{n}"), nodes), &u, |b, u| {
            b.iter(|| ma_density(black_box(u)))
        });
    }
    g.finish();
}

fn poisson(c: &mut Criterion) {
    let mut g = c.benchmark_group("poisson");
    let boundary = quadratic(2, 17);
    let rhs = vec![16.0; boundary.grid().interior_len()];
    for kind in [PreconditionerKind::Spectral, PreconditionerKind::RedBlackGaussSeidel] {
        let cfg = SolverConfig {
            preconditioner: kind,
            ..SolverConfig::default()
        };
        g.bench_function(format!("{kind:?}"), |b| {
            b.iter(|| solve_poisson(black_box(&rhs), &boundary, &cfg).unwrap())
        });
    }
    g.finish();
}

fn newton(c: &mut Criterion) {
    let mut g = c.benchmark_group("newton");
    g.sample_size(10);
    for nodes in [9, 13] {
        let u = quadratic(2, nodes);
        let g_rhs = cheng_yau_density(&u);
        let cfg = SolverConfig::default();
        g.bench_with_input(BenchmarkId::new("fixed_rhs", nodes), &nodes, |b, _| {
            b.iter(|| solve_ma_fixed_rhs(&g_rhs, &u, &cfg).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("maximal_extension", nodes), &nodes, |b, _| {
            b.iter(|| maximal_extension(&u, &cfg).unwrap())
        });
    }
    g.finish();
}

fn radial(c: &mut Criterion) {
    let cfg = SolverConfig::default();
    let mut g = c.benchmark_group("radial");
    for n in [1usize, 2, 4] {
        let constant = (1..=n).product::<usize>() as f64 * 4f64.powi(n as i32);
        let rhs = move |_v: f64, _r: f64| constant;
        g.bench_function(BenchmarkId::new("quadratic", n), |b| {
            b.iter(|| solve_radial(n, &rhs, 0.0, 1.0, 512, &cfg).unwrap())
        });
        let cy = |v: f64, r: f64| 32.0 * v.exp() * (1.0 - r * r).exp();
        if n == 2 {
            g.bench_function("cheng_yau", |b| b.iter(|| solve_radial(2, &cy, 0.0, 1.0, 512, &cfg).unwrap()));
        }
    }
    g.finish();
}

criterion_group!(benches, operator, poisson, newton, radial);
criterion_main!(benches);
