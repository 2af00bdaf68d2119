use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use ptsrc_bench::Fixture;
use ptsrc_core::direct::{recover_location_single, reciprocity_gap, CaloricProbe};
use ptsrc_core::fem::Point;
use ptsrc_core::forward::simulate;
use ptsrc_core::harness::{make_noisy, ExampleId};
use ptsrc_core::lm::{lm_step, Linearization, LmProblem};
use ptsrc_core::sparse::SolveOptions;

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward");
    g.sample_size(10);
    for (id, coarsen) in [(ExampleId::Ex1i, 1.0), (ExampleId::Ex2i, 1.0), (ExampleId::Ex3, 2.0)] {
        let f = Fixture::new(id, coarsen);
        let model = f.scenario.truth_model(&f.grid).unwrap();
        g.bench_with_input(BenchmarkId::new("inversion_grid", format!("{id}/{coarsen}")), &f, |b, f| {
            b.iter(|| simulate(&f.scenario.config, &f.mesh, black_box(&model), &f.grid).unwrap())
        });
    }
    g.finish();
}

fn direct(c: &mut Criterion) {
    let f = Fixture::new(ExampleId::Ex2i, 1.0);
    let probe = CaloricProbe::exp(&f.scenario.config, &[1.0, 0.0], Point::default()).unwrap();
    c.bench_function("direct/reciprocity_gap/ex2i", |b| {
        b.iter(|| reciprocity_gap(black_box(&f.data), &probe, &f.scenario.config, &f.mesh).unwrap())
    });
    c.bench_function("direct/location_single/ex2i", |b| {
        b.iter(|| recover_location_single(black_box(&f.data), &f.scenario.config, &f.mesh).unwrap())
    });
}

fn lm(c: &mut Criterion) {
    let mut g = c.benchmark_group("lm");
    g.sample_size(10);
    for id in [ExampleId::Ex1i, ExampleId::Ex2i] {
        let f = Fixture::new(id, 1.0);
        let data = make_noisy(&f.data, 0.005, 1);
        let problem = LmProblem::new(&f.scenario.config, &f.mesh, &f.grid, &data, SolveOptions::default()).unwrap();
        let init = f.scenario.init_params(&f.grid);
        let schedule = f.scenario.lm.schedule(f.mesh.mesh_size, 0.005 * f.data.sup_norm());
        g.bench_function(BenchmarkId::new("linearize", id), |b| {
            b.iter(|| Linearization::new(&problem, black_box(&init), &schedule).unwrap())
        });
        let lin = Linearization::new(&problem, &init, &schedule).unwrap();
        g.bench_function(BenchmarkId::new("step", id), |b| {
            b.iter(|| {
                lm_step(&problem, &lin, black_box(&init), schedule.beta_x0, schedule.beta_lambda0, &schedule).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, forward, direct, lm);
criterion_main!(benches);
