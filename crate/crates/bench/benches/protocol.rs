use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use crqos_bench::{cdma_scenario, stdma_scenario};
use crqos_core::mailer::DelayPolicy;
use crqos_core::protocol::{run_protocol, ProtocolConfig};

fn bench_protocol(c: &mut Criterion) {
    let config = ProtocolConfig {
        seed: 42,
        delay: DelayPolicy::None,
        cycle_cap: 2_000,
        trace: false,
    };
    let mut group = c.benchmark_group("cdma_equal");
    for n in [7usize, 15, 30] {
        let scenario = cdma_scenario(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &scenario, |b, s| {
            b.iter(|| run_protocol(black_box(s), &config).unwrap())
        });
    }
    group.finish();

    let scenario = stdma_scenario(7);
    c.bench_function("stdma_7", |b| {
        b.iter(|| run_protocol(black_box(&scenario), &config).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_protocol
}
criterion_main!(benches);
