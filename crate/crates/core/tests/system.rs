use std::io::Write;

use tilesim::config::{RunConfig, WorkloadKind};
use tilesim::engine::AccelKind;
use tilesim::harness::{run, sweep, REPORT_SCHEMA};
use tilesim::workload::GraphSpec;

fn path4() -> (tempfile::NamedTempFile, RunConfig) {
    let mut f = tempfile::Builder::new().suffix(".el").tempfile().unwrap();
    writeln!(f, "0 1\n1 2\n2 3").unwrap();
    let mut c = RunConfig::default();
    c.label = "path4".into();
    c.engine.enabled = false;
    c.workload.bfs.graph = GraphSpec::File { path: f.path().to_path_buf() };
    c.workload.bfs.sources = Some([0, 3]);
    (f, c)
}

fn small_bfs() -> RunConfig {
    let mut c = RunConfig::desk_scale();
    c.label = "small".into();
    c.workload.bfs.graph = GraphSpec::Kronecker { scale: 8, degree: 16, seed: 2 };
    c
}

#[test]
fn path_graph_cycle_count_is_golden() {
    let (_f, c) = path4();
    let r = run(&c).unwrap();
    let b = r.bfs.as_ref().unwrap();
    assert_eq!(b.visited, 4);
    assert!(b.parent_matches_reference);
    assert_eq!((r.cycles, r.total_cycles), (87, 1610));
}

#[test]
fn identical_configs_give_identical_reports() {
    let c = small_bfs();
    assert_eq!(run(&c).unwrap().to_json(), run(&c).unwrap().to_json());
    let mut q = RunConfig::default();
    q.workload.kind = WorkloadKind::Qsort;
    q.workload.qsort.n = 2000;
    q.engine.kind = AccelKind::Qsort;
    q.workload.qsort.mode = tilesim::workload::QsortMode::Offload;
    assert_eq!(run(&q).unwrap().to_json(), run(&q).unwrap().to_json());
}

#[test]
fn inactive_engine_matches_absent_engine() {
    let mut off = small_bfs();
    off.engine.enabled = false;
    let mut none = small_bfs();
    none.engine.kind = AccelKind::None;
    let (a, b) = (run(&off).unwrap(), run(&none).unwrap());
    assert_eq!(a.cycles, b.cycles);
    assert_eq!(a.total_cycles, b.total_cycles);
    assert_eq!(serde_json::to_string(&a.core).unwrap(), serde_json::to_string(&b.core).unwrap());
    assert_eq!(serde_json::to_string(&a.caches.l2).unwrap(), serde_json::to_string(&b.caches.l2).unwrap());
    assert_eq!(serde_json::to_string(&a.caches.l3).unwrap(), serde_json::to_string(&b.caches.l3).unwrap());
    assert_eq!(serde_json::to_string(&a.noc).unwrap(), serde_json::to_string(&b.noc).unwrap());
    assert_eq!(b.engine.as_ref().unwrap().stats.commands, 0);
}

#[test]
fn k_sweep_has_one_row_per_value_plus_baseline() {
    let values: Vec<String> = ["1", "2", "4", "8", "16", "32"].map(String::from).to_vec();
    let s = sweep(&small_bfs(), "K", &values).unwrap();
    assert_eq!(s.rows.len(), 6);
    assert_eq!(s.baselines.len(), 1);
    let csv = s.to_csv();
    assert_eq!(csv.lines().count(), 8);
    assert!(s.rows.iter().all(|r| r.report.speedup.is_some()));
    assert_eq!(csv, sweep(&small_bfs(), "K", &values).unwrap().to_csv());
}

#[test]
fn unknown_axis_lists_valid_axes() {
    let e = sweep(&small_bfs(), "warp", &["1".into()]).unwrap_err().to_string();
    assert!(e.contains("warp") && e.contains("engine_cache") && e.contains("K"), "{e}");
}

#[test]
fn engine_cache_sweep_changes_speedup() {
    let mut c = RunConfig::desk_scale();
    c.label = "ec".into();
    let s = sweep(&c, "engine_cache", &["1KiB".into(), "32KiB".into(), "512KiB".into()]).unwrap();
    let sp: Vec<f64> = s.rows.iter().map(|r| r.report.speedup.unwrap()).collect();
    assert!(sp.iter().any(|&x| x != sp[0]), "{sp:?}");
}

#[test]
fn reports_validate_against_schema() {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    let mut configs = vec![small_bfs()];
    let mut off = small_bfs();
    off.engine.enabled = false;
    configs.push(off);
    for mode in [tilesim::workload::QsortMode::Software, tilesim::workload::QsortMode::Offload] {
        let mut q = RunConfig::default();
        q.workload.kind = WorkloadKind::Qsort;
        q.workload.qsort.n = 500;
        q.engine.kind = AccelKind::Qsort;
        q.workload.qsort.mode = mode;
        configs.push(q);
    }
    let base = run(&configs[1]).unwrap();
    for c in &configs {
        let mut r = run(c).unwrap();
        r.attach_baseline(&base);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let msgs: Vec<String> = match compiled.validate(&v) {
            Ok(()) => Vec::new(),
            Err(errs) => errs.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
        };
        assert!(msgs.is_empty(), "{}: {msgs:?}", c.label);
    }
}
