use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};
use tilesim::cache::{AccessKind, Outcome, Port};
use tilesim::harness;
use tilesim::kernel::SimTime;
use tilesim::workload::gen_kronecker;
use tilesim_bench::{address_stream, hierarchy, qsort_offload, small_bfs};

fn hierarchy_accesses(c: &mut Criterion) {
    let stream = address_stream(20_000, 8 << 20);
    let mut group = c.benchmark_group("hierarchy");
    group.throughput(Throughput::Elements(stream.len() as u64));
    group.bench_function("two_core_reads", |b| {
        b.iter_batched(
            hierarchy,
            |mut h| {
                let mut t = SimTime(0);
                for (i, &a) in stream.iter().enumerate() {
                    let port = Port::Data(i % 2);
                    loop {
                        match h.access(port, a, AccessKind::Read, None, t) {
                            Outcome::Done(done) => {
                                t += 250;
                                black_box(done.line[0]);
                                break;
                            }
                            Outcome::Stall { retry_at } => t = retry_at,
                        }
                    }
                }
                h
            },
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

fn full_runs(c: &mut Criterion) {
    let mut group = c.benchmark_group("run");
    group.sample_size(10);
    let bfs = small_bfs();
    group.bench_function("bfs_scale10_dapf", |b| b.iter(|| black_box(harness::run(&bfs).unwrap().cycles)));
    for n in [1_000u64, 10_000] {
        let q = qsort_offload(n);
        group.throughput(Throughput::Elements(n));
        group.bench_with_input(BenchmarkId::new("qsort_offload", n), &q, |b, q| {
            b.iter(|| black_box(harness::run(q).unwrap().cycles))
        });
    }
    group.finish();
}

fn graph_generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("graph");
    group.sample_size(20);
    group.bench_function("kronecker_scale12_degree52", |b| b.iter(|| black_box(gen_kronecker(12, 52, 1).unwrap().num_edges())));
    group.finish();
}

criterion_group!(benches, hierarchy_accesses, full_runs, graph_generation);
criterion_main!(benches);
