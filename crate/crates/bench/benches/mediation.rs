use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use handoff_bench::workload;
use handoff_core::authz::{AuthorizationCache, Verdict};
use handoff_core::bench::{cache_key, chain_fixture, CACHE_MAX, CACHE_STEP};
use handoff_core::mediator::Mode;
use handoff_core::scenario::{run, RunOptions};

fn graph_construction(c: &mut Criterion) {
    let mut group = c.benchmark_group("graph_construction");
    for k in 1..=10 {
        let chain = chain_fixture(k);
        group.bench_with_input(BenchmarkId::from_parameter(k), &chain, |b, chain| {
            b.iter(|| black_box(chain.build()))
        });
    }
    group.finish();
}

fn cache_rw(c: &mut Criterion) {
    let key = cache_key(0);
    for (name, evict) in [("cache_store", false), ("cache_evict", true)] {
        let mut group = c.benchmark_group(name);
        for bytes in (CACHE_STEP..=CACHE_MAX).step_by(4 * CACHE_STEP) {
            let payload = vec![0xa5u8; bytes];
            group.throughput(Throughput::Bytes(bytes as u64));
            group.bench_with_input(
                BenchmarkId::from_parameter(bytes),
                &payload,
                |b, payload| {
                    b.iter_batched(
                        || {
                            let mut cache = AuthorizationCache::new();
                            if evict {
                                cache.store(key.clone(), Verdict::Allow, payload.clone());
                            }
                            (cache, payload.clone())
                        },
                        |(mut cache, snap)| {
                            if evict {
                                black_box(cache.evict(&key).unwrap());
                            } else {
                                cache.store(key.clone(), Verdict::Allow, snap);
                            }
                            cache
                        },
                        BatchSize::SmallInput,
                    )
                },
            );
        }
        group.finish();
    }
}

fn enforcement(c: &mut Criterion) {
    let s = workload(500);
    let mut group = c.benchmark_group("enforcement");
    group.sample_size(20);
    for (name, mode) in [("mediated", Mode::Entrust), ("baseline", Mode::Unmediated)] {
        group.bench_function(name, |b| {
            b.iter(|| {
                run(
                    &s,
                    RunOptions {
                        mode: Some(mode),
                        ..RunOptions::default()
                    },
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, graph_construction, cache_rw, enforcement);
criterion_main!(benches);
