use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tilesim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tilesim")).args(args).current_dir(dir).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
label = "small"
baseline = "small-base"

[engine]
kind = "dapf"

[workload.bfs]
k = 4

[workload.bfs.graph]
kind = "kronecker"
scale = 8
degree = 16
seed = 3
"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

#[test]
fn validate_prints_the_filled_in_config() {
    let dir = setup();
    let o = tilesim(&["validate", "small.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("label = \"small\""));
    assert!(text.contains("[cache.l2]"), "defaults are filled in");
    assert!(stderr(&o).contains("small.toml: ok"));
}

#[test]
fn validate_reports_the_offending_line() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "label = \"x\"\n\n[engine]\nqueue_depth = \"deep\"\n").unwrap();
    let o = tilesim(&["validate", "bad.toml"], dir.path());
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("engine.queue_depth") && err.contains("line 4"), "{err}");
}

#[test]
fn run_attaches_a_baseline_run_first() {
    let dir = setup();
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let missing = tilesim(&["run", "small.toml", "--out", out_s], dir.path());
    assert!(!missing.status.success());
    assert!(stderr(&missing).contains("small-base"), "{}", stderr(&missing));

    let base = tilesim(
        &["run", "small.toml", "--set", "engine.enabled=false", "--set", "label=small-base", "--set", "baseline=", "--out", out_s],
        dir.path(),
    );
    assert!(base.status.success(), "{}", stderr(&base));
    let hinted = tilesim(&["run", "small.toml", "--out", out_s], dir.path());
    assert!(hinted.status.success(), "{}", stderr(&hinted));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("small.report.json")).unwrap()).unwrap();
    assert_eq!(report["baseline"], "small-base");
    assert!(report["speedup"].as_f64().unwrap() > 0.0);
    assert_eq!(report["bfs"]["parent_matches_reference"], true);
}

#[test]
fn sweep_writes_csv_and_reports() {
    let dir = setup();
    let o = tilesim(&["sweep", "small.toml", "--axis", "K", "--values", "1,4", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "header, baseline and two rows");
    assert!(csv.lines().next().unwrap().starts_with("label,"));
    for label in ["small-baseline", "small-K=1", "small-K=4"] {
        assert!(dir.path().join(format!("out/{label}.report.json")).exists(), "{label}");
    }
}

#[test]
fn sweep_rejects_an_unknown_axis() {
    let dir = setup();
    let o = tilesim(&["sweep", "small.toml", "--axis", "bogus", "--values", "1"], dir.path());
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("bogus") && err.contains("engine_cache"), "{err}");
}

#[test]
fn generated_graphs_load_back() {
    let dir = setup();
    for file in ["g.el", "g.csr1"] {
        let o = tilesim(&["gen-graph", "kron:scale=7,degree=8,seed=2", "-o", file], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).starts_with("nodes 128 "), "{}", stdout(&o));
        let cfg = format!(
            "label = \"from-{file}\"\n[engine]\nenabled = false\n[workload.bfs.graph]\nkind = \"file\"\npath = \"{}\"\n",
            dir.path().join(file).display()
        );
        fs::write(dir.path().join("g.toml"), cfg).unwrap();
        let r = tilesim(&["run", "g.toml", "--out", "out"], dir.path());
        assert!(r.status.success(), "{file}: {}", stderr(&r));
    }
}
