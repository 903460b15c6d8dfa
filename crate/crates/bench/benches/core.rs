use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use proxtrust::messaging::{encode, EnvelopeHeader, KeyIssuer, RevealLedger, RevealPlan};
use proxtrust::routing::{build_mesh, find_route};
use proxtrust::sim::{self, RunOptions, ScenarioConfig};
use proxtrust::trust::{decay, transitive_trust, update_on_interaction, InteractionEvent, InteractionKind};
use proxtrust::{DeviceId, ProfileKey, TrustModelParams};
use proxtrust_bench::{dense_store, scatter};

fn trust(c: &mut Criterion) {
    let params = TrustModelParams::default();
    let event =
        InteractionEvent::new(DeviceId(1), DeviceId(2), 0, 30, 2.5, InteractionKind::Conversation, 0.8).unwrap();
    c.bench_function("trust/update", |b| b.iter(|| update_on_interaction(black_box(0.4), &event, &params)));
    c.bench_function("trust/decay", |b| b.iter(|| decay(black_box(0.9), black_box(1234), &params)));

    let mut group = c.benchmark_group("trust/transitive");
    for fanout in [8, 64] {
        let store = dense_store(500, fanout, 1);
        group.bench_with_input(BenchmarkId::from_parameter(fanout), &store, |b, store| {
            b.iter(|| transitive_trust(store, DeviceId(1), black_box(DeviceId(2)), &ProfileKey::default(), &params))
        });
    }
    group.finish();
}

fn routing(c: &mut Criterion) {
    let mut group = c.benchmark_group("routing");
    for n in [100, 1000] {
        let nodes = scatter(n, 500.0, 40.0, 7);
        group.bench_with_input(BenchmarkId::new("build_mesh", n), &nodes, |b, nodes| b.iter(|| build_mesh(nodes)));
        let mesh = build_mesh(&nodes).unwrap();
        let (s, r) = (nodes[0].id, nodes[n - 1].id);
        group.bench_with_input(BenchmarkId::new("find_route", n), &mesh, |b, mesh| {
            b.iter(|| find_route(mesh, black_box(s), black_box(r)))
        });
    }
    group.finish();
}

fn messaging(c: &mut Criterion) {
    let key = KeyIssuer::new(3).issue();
    let plan = RevealPlan::deterministic(8, 0.0, 0.2, 0.9);
    let payload = vec![0x5a; 4096];
    let header = EnvelopeHeader::new(DeviceId(1), DeviceId(2), 0);
    c.bench_function("messaging/encode_4k", |b| b.iter(|| encode(black_box(&payload), &plan, &key, header.clone())));

    let env = encode(&payload, &plan, &key, header).unwrap();
    let store = dense_store(2, 1, 0);
    c.bench_function("messaging/decode_4k", |b| {
        b.iter_batched(
            || (RevealLedger::new(), ChaCha8Rng::seed_from_u64(0)),
            |(mut ledger, mut rng)| ledger.attempt_decode(&store, &env, &key, 0, &mut rng),
            BatchSize::SmallInput,
        )
    });
}

fn simulation(c: &mut Criterion) {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/reference.json");
    let text = std::fs::read_to_string(path).unwrap();
    let cfg = ScenarioConfig::load(&text, &["sim.ticks_total=500".to_string()]).unwrap();
    let mut group = c.benchmark_group("sim");
    group.sample_size(10);
    group.bench_function("reference_500_ticks", |b| b.iter(|| sim::run(&cfg, &RunOptions::default()).unwrap()));
    group.finish();
}

criterion_group!(benches, trust, routing, messaging, simulation);
criterion_main!(benches);
