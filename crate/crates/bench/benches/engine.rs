//! Timings for the sparse kernels, the Laplace approximation and prediction.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use zigam_bench::count_problem;
use zigam_core::engine::{sample_posterior, OptimizeOptions};
use zigam_core::likelihoods::FamilySpec;
use zigam_core::predict::{predict_grid, GridSpec, PredictOptions};
use zigam_core::sparse::{minimum_degree, SymbolicCholesky};

fn sparse_kernels(c: &mut Criterion) {
    let p = count_problem(2000, 60, 5, 1);
    let q = p.model.prior_precision(&p.hyper).unwrap();
    let mut g = c.benchmark_group("sparse");
    g.bench_function("minimum_degree", |b| b.iter(|| minimum_degree(black_box(p.model.pattern()))));
    let symbolic = SymbolicCholesky::analyze(&q).unwrap();
    g.bench_function("factorize_prior", |b| b.iter(|| symbolic.factorize(black_box(&q)).unwrap()));
    let factor = symbolic.factorize(&q).unwrap();
    let rhs = vec![1.0; q.nrows()];
    g.bench_function("solve_prior", |b| b.iter(|| factor.solve(black_box(&rhs))));
    g.finish();
}

fn likelihoods(c: &mut Criterion) {
    let nb = FamilySpec::negbinomial(1.5).unwrap();
    let gp = FamilySpec::gpoisson(0.3).unwrap();
    let data: Vec<(u64, f64)> = (0..10_000).map(|i| ((i % 97) as u64, -3.0 + (i % 13) as f64 * 0.4)).collect();
    let mut g = c.benchmark_group("likelihood");
    for (name, fam) in [("negbinomial", nb), ("gpoisson", gp)] {
        g.bench_function(name, |b| {
            b.iter(|| data.iter().map(|&(y, eta)| fam.derivatives(y, eta).0).sum::<f64>())
        });
    }
    g.finish();
}

fn laplace(c: &mut Criterion) {
    let p = count_problem(2000, 60, 5, 2);
    let warm = p.model.laplace(&p.hyper, None).unwrap().mode.x;
    let mut g = c.benchmark_group("laplace");
    g.sample_size(10);
    g.bench_function("cold", |b| b.iter(|| p.model.laplace(black_box(&p.hyper), None).unwrap()));
    g.bench_function("warm", |b| b.iter(|| p.model.laplace(black_box(&p.hyper), Some(&warm)).unwrap()));
    g.bench_function("optimize", |b| {
        b.iter(|| {
            p.model
                .optimize(&p.hyper, &OptimizeOptions { covariance: false, ..Default::default() })
                .unwrap()
        })
    });
    g.finish();
}

fn prediction(c: &mut Criterion) {
    let p = count_problem(1000, 30, 3, 3);
    let fit = p.ctx.fit(&p.spec, p.model.spec().y.clone(), None, &Default::default()).unwrap();
    let mut g = c.benchmark_group("prediction");
    g.sample_size(10);
    g.bench_function("posterior_draws_1000", |b| b.iter(|| sample_posterior(&fit.fit, 1000, 7).unwrap()));
    let opts = PredictOptions {
        grid: GridSpec { nx: 40, ny: 40, bounds: None },
        samples: 10_000,
        ..Default::default()
    };
    g.bench_function("grid_40x40", |b| {
        b.iter(|| predict_grid(None, &fit, &p.data.mesh, &p.data.regions, &opts).unwrap())
    });
    g.finish();
}

criterion_group!(benches, sparse_kernels, likelihoods, laplace, prediction);
criterion_main!(benches);
