use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ldqbd::oracle::{exact_augmented_law, simulate_extremes, SimulationOptions};
use ldqbd::{
    algorithm_a, algorithm_b, algorithm_c, assemble_joint_law, extremes::truncated_inverse, LawOptions,
    MomentTable, QbdModel, StateCoord, TabulatedQbd,
};
use ldqbd_bench::{sir, sis};

fn max_level(c: &mut Criterion) {
    let mut group = c.benchmark_group("max_level");
    let (model, initial) = sir(3.8);
    group.bench_function("sir_n25", |b| b.iter(|| algorithm_c(&model, black_box(initial), 1e-8, 100).unwrap()));
    for cap in [50, 100, 200] {
        let (model, initial) = sis(cap);
        group.bench_with_input(BenchmarkId::new("sis_capped", cap), &cap, |b, &cap| {
            b.iter(|| algorithm_c(&model, black_box(initial), 1e-8, cap).unwrap())
        });
    }
    group.finish();
}

fn taboo_sweeps(c: &mut Criterion) {
    let (model, _) = sir(3.8);
    let target = StateCoord::new(18, 3);
    c.bench_function("taboo/transform_sir_target18", |b| {
        b.iter(|| algorithm_a(&model, black_box(target), 0.5).unwrap())
    });
    let (cache, table) = algorithm_a(&model, target, 0.0).unwrap();
    let first = MomentTable::from_transform(&table).unwrap();
    c.bench_function("taboo/second_moment_sir_target18", |b| {
        b.iter(|| algorithm_b(&cache, &algorithm_b(&cache, black_box(&first)).unwrap()).unwrap())
    });
}

fn joint_law(c: &mut Criterion) {
    let mut group = c.benchmark_group("joint_law");
    group.sample_size(20);
    let (model, initial) = sir(3.8);
    group.bench_function("sir_default_grid", |b| {
        b.iter(|| assemble_joint_law(&model, black_box(initial), &LawOptions::default()).unwrap())
    });
    let (model, initial) = sis(100);
    let opts = LawOptions {
        theta_grid: vec![0.0, 1.0],
        max_moment: 1,
        ..LawOptions::default()
    };
    group.bench_function("sis_capped_100", |b| {
        b.iter(|| assemble_joint_law(&model, black_box(initial), &opts).unwrap())
    });
    group.finish();
}

fn full_inverse(c: &mut Criterion) {
    let (model, _) = sis(40);
    c.bench_function("truncated_inverse/sis_level40", |b| {
        b.iter(|| truncated_inverse(&model, black_box(40)).unwrap())
    });
}

fn oracles(c: &mut Criterion) {
    let mut group = c.benchmark_group("oracles");
    group.sample_size(10);
    let model = TabulatedQbd::random(3, 5, 3);
    let initial = StateCoord::new(1, 0);
    let cap = model.level_bound().unwrap();
    group.bench_function("exact_random_5x3", |b| {
        b.iter(|| exact_augmented_law(&model, black_box(initial), cap).unwrap())
    });
    let (model, initial) = sir(1.5);
    let opts = SimulationOptions {
        replications: 10_000,
        ..SimulationOptions::default()
    };
    group.bench_function("simulate_sir_1e4", |b| {
        b.iter(|| simulate_extremes(&model, black_box(initial), &opts).unwrap())
    });
    group.finish();
}

criterion_group!(benches, max_level, taboo_sweeps, joint_law, full_inverse, oracles);
criterion_main!(benches);
