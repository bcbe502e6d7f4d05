//! Shared fixtures for the simulator benchmarks.

use tilesim::cache::{Hierarchy, HierarchyParams};
use tilesim::config::{RunConfig, WorkloadKind};
use tilesim::engine::AccelKind;
use tilesim::mem::MemParams;
use tilesim::noc::MeshDescription;
use tilesim::workload::{GraphSpec, QsortMode};

/// Desk-scale hinted BFS over a scale-10 Kronecker graph.
pub fn small_bfs() -> RunConfig {
    let mut c = RunConfig::desk_scale();
    c.label = "bench-bfs".into();
    c.workload.bfs.graph = GraphSpec::Kronecker { scale: 10, degree: 16, seed: 1 };
    c
}

/// Offloaded quicksort of `n` random keys.
pub fn qsort_offload(n: u64) -> RunConfig {
    let mut c = RunConfig::desk_scale();
    c.label = "bench-qsort".into();
    c.workload.kind = WorkloadKind::Qsort;
    c.workload.qsort.n = n;
    c.workload.qsort.mode = QsortMode::Offload;
    c.engine.kind = AccelKind::Qsort;
    c
}

/// Default two-core hierarchy with the engine cache.
pub fn hierarchy() -> Hierarchy {
    let mem = MemParams { channels: 4, fixed_latency: 50_000, channel_gib_per_sec: 4.8, capacity_bytes: 1 << 30 };
    Hierarchy::new(HierarchyParams::defaults(2), MeshDescription::default_4x3(), 250, 250, mem)
}

/// Deterministic address stream: a strided scan interleaved with a
/// pseudo-random walk over `span` bytes.
pub fn address_stream(len: usize, span: u64) -> Vec<u64> {
    let mut x = 0x9E37_79B9_7F4A_7C15u64;
    (0..len)
        .map(|i| {
            if i % 2 == 0 {
                (i as u64 * 32) % span
            } else {
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                (x % span) & !7
            }
        })
        .collect()
}
