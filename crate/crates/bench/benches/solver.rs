use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use crqos_bench::search_instance;
use crqos_core::awcs::single::solve_single;
use crqos_core::mailer::DelayPolicy;
use crqos_core::oracle::brute_force_solve;

fn bench_solver(c: &mut Criterion) {
    let instance = search_instance();
    c.bench_function("awcs_single_6x4", |b| {
        b.iter(|| solve_single(black_box(&instance), 1, DelayPolicy::None, 10_000))
    });
    c.bench_function("awcs_single_6x4_delayed", |b| {
        b.iter(|| solve_single(black_box(&instance), 1, DelayPolicy::Uniform { max: 5 }, 10_000))
    });
    c.bench_function("brute_force_6x4", |b| {
        b.iter(|| brute_force_solve(black_box(&instance)))
    });
}

criterion_group!(benches, bench_solver);
criterion_main!(benches);
