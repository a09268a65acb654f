use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use edgecollab_bench::{agent_stores, busy_fleet, directory};
use edgecollab_core::cms::gossip_round;
use edgecollab_core::engine::run_trace;
use edgecollab_core::scheduler::place;
use edgecollab_core::workload::generate;
use edgecollab_core::{resolve, rng, CloudPricing, PolicyKind, Scenario, SemanticName, Topology};

fn engine(c: &mut Criterion) {
    let scenario = Scenario::reference();
    let trace = generate(&edgecollab_core::engine::resolved_workload(
        &scenario,
        rng::STREAM_WORKLOAD,
    ))
    .unwrap();
    let mut group = c.benchmark_group("reference_hour");
    group.sample_size(20);
    for policy in PolicyKind::ALL {
        let s = scenario.with_policy(policy);
        group.bench_function(policy.as_str(), |b| {
            b.iter(|| run_trace(black_box(&s), &trace).unwrap())
        });
    }
    group.finish();
    c.bench_function("generate_hour", |b| {
        b.iter(|| generate(black_box(&scenario.workload)).unwrap())
    });
}

fn scheduler(c: &mut Criterion) {
    let nodes = busy_fleet();
    let pricing = CloudPricing::default();
    let mut rng = rng::stream(1, rng::STREAM_SCHEDULER);
    for policy in PolicyKind::ALL {
        c.bench_function(&format!("place/{}", policy.as_str()), |b| {
            b.iter(|| place(policy.into(), black_box(&nodes), 0, &pricing, &mut rng).unwrap())
        });
    }
}

fn gossip(c: &mut Criterion) {
    let mut rng = rng::stream(1, rng::STREAM_GOSSIP);
    c.bench_function("gossip_round/32", |b| {
        b.iter_batched(
            || agent_stores(32),
            |mut stores| gossip_round(&mut stores, &Topology::Complete, 3, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn discovery(c: &mut Criterion) {
    let view = directory(200);
    let query: SemanticName = "knowledge.gpt/arithmetic".parse().unwrap();
    c.bench_function("resolve/200_agents", |b| {
        b.iter(|| resolve(black_box(&query), &view, 10))
    });
}

criterion_group!(benches, engine, scheduler, gossip, discovery);
criterion_main!(benches);
