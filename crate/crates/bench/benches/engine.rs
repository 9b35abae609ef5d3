use std::hint::black_box;

use bpsim::engine::{assign_multilinks, fbpr_rules, sbpr_rules, Assignment};
use bpsim::topology::{LinkSpec, PeeringPolicy};
use bpsim::{build_grid, EngineConfig, Forecast, HopFilter, NetworkSnapshot, NextHopTable, NodeId, Topology};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loaded(n: usize, rng: &mut ChaCha8Rng) -> (NetworkSnapshot, Forecast) {
    let mut snap = NetworkSnapshot::empty(0, n);
    let mut forecast = Forecast::zero(5, n);
    for a in 0..n {
        for c in 0..n {
            if a != c {
                snap.set(NodeId(a), NodeId(c), rng.random_range(0..40));
                forecast.set(NodeId(a), NodeId(c), rng.random_range(0..10));
            }
        }
    }
    (snap, forecast)
}

fn rule_derivation(c: &mut Criterion) {
    let mut group = c.benchmark_group("rule_derivation");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for side in [5, 8, 12] {
        let topo = build_grid(side, side, 2e9, 1e8, 1.0).unwrap();
        let table = NextHopTable::compute(&topo).unwrap();
        let (snap, forecast) = loaded(topo.node_count(), &mut rng);
        let strict = EngineConfig::default();
        let open = EngineConfig { hop_filter: HopFilter::Off, loop_detection: true, ..strict };
        group.bench_with_input(BenchmarkId::new("fbpr_strict", side), &side, |b, _| {
            b.iter(|| fbpr_rules(black_box(&snap), &forecast, &topo, &table, &strict, 5).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fbpr_open_loop_filtered", side), &side, |b, _| {
            b.iter(|| fbpr_rules(black_box(&snap), &forecast, &topo, &table, &open, 5).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sbpr", side), &side, |b, _| {
            b.iter(|| sbpr_rules(black_box(&snap), &topo, &table, &strict))
        });
    }
    group.finish();
}

fn multilink_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("multilink_assignment");
    for k in [2usize, 4, 6] {
        let mut links: Vec<LinkSpec> = (0..k).map(|i| LinkSpec { source: 0, dest: 1, bandwidth: 1 + i as u32 }).collect();
        links.push(LinkSpec { source: 1, dest: 0, bandwidth: 1 });
        let topo = Topology::new(2, &links, &[(0..k).collect()], PeeringPolicy::allow_all()).unwrap();
        let candidates: Vec<_> = (0..k)
            .map(|i| Some(Assignment { dest: NodeId(i), differential: (7 * i as u32) % 11 }))
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| assign_multilinks(&topo.multilinks()[0], &topo, black_box(&candidates)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, rule_derivation, multilink_search);
criterion_main!(benches);
