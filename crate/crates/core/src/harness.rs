//! Experiment harness: single runs producing a [`RunReport`], and sweeps
//! over one config key producing CSV tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accel::QsortStats;
use crate::cache::CacheStats;
use crate::config::RunConfig;
use crate::engine::{Accel, EngineStats};
use crate::error::{ConfigError, SimError};
use crate::kernel::Histogram;
use crate::mem::MemStats;
use crate::noc::NocStats;
use crate::system::{System, WorkloadState};
use crate::vmem::MmuStats;
use crate::workload::{bfs_reference, hint_eligible, GraphReport, QsortMode, QsortPattern};
use crate::LINE_BYTES;

/// Environment variable naming the directory reports are written to.
pub const OUT_DIR_ENV: &str = "TILESIM_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub count: u64,
    pub mean: f64,
    pub min: Option<u64>,
    pub max: Option<u64>,
    pub bucket_width: u64,
    pub buckets: Vec<u64>,
    pub overflow: u64,
}

impl From<&Histogram> for LatencyReport {
    fn from(h: &Histogram) -> Self {
        let last = h.buckets.iter().rposition(|&b| b > 0).map_or(0, |i| i + 1);
        LatencyReport {
            count: h.count,
            mean: h.mean(),
            min: h.min,
            max: h.max,
            bucket_width: h.bucket_width,
            buckets: h.buckets[..last].to_vec(),
            overflow: h.overflow,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreReport {
    pub retired: u64,
    pub retired_in_region: u64,
    pub loads: u64,
    pub stores: u64,
    pub uc_loads: u64,
    pub uc_stores: u64,
    pub mshr_stalls: u64,
    pub load_to_use: LatencyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheReport {
    pub l1d: CacheStats,
    pub l2: CacheStats,
    pub l3: CacheStats,
    pub engine: Option<CacheStats>,
    pub snoops: u64,
    pub invalidations: u64,
    pub peer_forwards: u64,
    pub memory_reads: u64,
    pub memory_writebacks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtwReport {
    pub core: MmuStats,
    pub engine: Option<MmuStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefetchReport {
    pub warmup_hints: u64,
    pub hints: u64,
    /// Lines fetched for measured hints.
    pub lines: u64,
    /// Of those, lines the core accessed at or after the prefetch.
    pub lines_demanded: u64,
    pub accuracy: f64,
    pub reads: u64,
    pub merged: u64,
    pub dropped: u64,
    pub stalls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineReport {
    pub kind: String,
    pub stats: EngineStats,
    pub prefetch: Option<PrefetchReport>,
    pub qsort: Option<QsortStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfsReport {
    pub graph: GraphReport,
    pub sources: [u32; 2],
    pub k: u64,
    pub hinted: bool,
    pub visited: u64,
    pub hint_eligible: u64,
    pub hints_sent: u64,
    pub parent_matches_reference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QsortReport {
    pub n: u64,
    pub pattern: QsortPattern,
    pub mode: QsortMode,
    pub offloaded: bool,
    pub sorted: bool,
    pub compares: u64,
    pub swaps: u64,
    pub commands: u64,
    pub polls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub baseline: Option<String>,
    pub seed: u64,
    pub workload: String,
    /// Core cycles of the measured region on the measured core.
    pub cycles: u64,
    /// Core cycles until the measured core finished.
    pub total_cycles: u64,
    /// Baseline cycles over these cycles, once a baseline is attached.
    pub speedup: Option<f64>,
    pub events: u64,
    pub forwarder_holds: u64,
    pub core: CoreReport,
    pub caches: CacheReport,
    pub memory: MemStats,
    pub noc: NocStats,
    pub ptw: PtwReport,
    pub engine: Option<EngineReport>,
    pub bfs: Option<BfsReport>,
    pub qsort: Option<QsortReport>,
}

impl RunReport {
    pub fn attach_baseline(&mut self, baseline: &RunReport) {
        self.baseline = Some(baseline.label.clone());
        self.speedup = Some(baseline.cycles as f64 / self.cycles.max(1) as f64);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `<label>.report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, SimError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.report.json", self.label));
        std::fs::write(&path, self.to_json() + "\n")?;
        Ok(path)
    }

    /// Reads `<label>.report.json` from `dir`.
    pub fn read(dir: &Path, label: &str) -> Result<RunReport, SimError> {
        let path = dir.join(format!("{label}.report.json"));
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text)
            .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())).into())
    }
}

/// The report JSON schema shipped with the crate.
pub const REPORT_SCHEMA: &str = include_str!("../report.schema.json");

/// Output directory from the environment, else the current directory.
pub fn output_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

/// Builds, runs and reports on one configuration.
pub fn run(cfg: &RunConfig) -> Result<RunReport, SimError> {
    Ok(run_system(cfg)?.1)
}

/// Like [`run`] but also returns the finished system for inspection.
pub fn run_system(cfg: &RunConfig) -> Result<(System, RunReport), SimError> {
    let mut sys = System::build(cfg)?;
    sys.run()?;
    let report = report(&sys)?;
    Ok((sys, report))
}

fn report(sys: &System) -> Result<RunReport, SimError> {
    let cfg = &sys.cfg;
    let mc = cfg.system.measured_core;
    let core = &sys.cores[mc];
    let period = cfg.core_period();
    let h = &sys.hier.stats;
    let engine = sys.engine.as_ref();

    let (bfs, qsort, workload) = match &sys.workload {
        WorkloadState::Bfs { graph, layout, sources, hinted, info } => {
            let info = info.borrow();
            let r = bfs_reference(graph, sources[1])?;
            let parent = sys.read_u32s(layout.parent, graph.num_nodes() as usize);
            let eligible = if *hinted { hint_eligible(&r, cfg.workload.bfs.k).len() as u64 } else { 0 };
            let b = BfsReport {
                graph: graph.report(),
                sources: *sources,
                k: cfg.workload.bfs.k,
                hinted: *hinted,
                visited: info.visited[1],
                hint_eligible: eligible,
                hints_sent: info.hints[1],
                parent_matches_reference: parent == r.parent,
            };
            (Some(b), None, "bfs")
        }
        WorkloadState::Qsort { keys, layout, offloaded, info } => {
            let info = info.borrow();
            let mut want = keys.clone();
            want.sort_unstable();
            let got = sys.read_u32s(layout.base, keys.len());
            let q = QsortReport {
                n: layout.n,
                pattern: cfg.workload.qsort.pattern,
                mode: cfg.workload.qsort.mode,
                offloaded: *offloaded,
                sorted: got == want,
                compares: info.counts.compares,
                swaps: info.counts.swaps,
                commands: info.commands,
                polls: info.polls,
            };
            (None, Some(q), "qsort")
        }
    };

    let engine_report = engine.map(|e| {
        let (prefetch, qs) = match &e.accel {
            Accel::Dapf(d) => (Some(prefetch_report(sys, d.stats)), None),
            Accel::Qsort(q) => (None, Some(q.stats)),
            Accel::None => (None, None),
        };
        let kind = serde_json::to_value(e.params().kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        EngineReport { kind, stats: e.stats, prefetch, qsort: qs }
    });

    Ok(RunReport {
        label: cfg.label.clone(),
        baseline: None,
        seed: cfg.seed,
        workload: workload.into(),
        cycles: core.measured_ticks() / period,
        total_cycles: core.stats.finish.map_or(0, |t| t.0 / period),
        speedup: None,
        events: sys.stats.events,
        forwarder_holds: sys.stats.forwarder_holds,
        core: CoreReport {
            retired: core.stats.retired,
            retired_in_region: core.stats.retired_in_region,
            loads: core.stats.loads,
            stores: core.stats.stores,
            uc_loads: core.stats.uc_loads,
            uc_stores: core.stats.uc_stores,
            mshr_stalls: core.stats.mshr_stalls,
            load_to_use: (&core.stats.load_to_use).into(),
        },
        caches: CacheReport {
            l1d: h.l1d[mc],
            l2: h.l2[mc],
            l3: h.l3,
            engine: sys.hier.has_engine_cache().then_some(h.engine),
            snoops: h.snoops,
            invalidations: h.invalidations,
            peer_forwards: h.peer_forwards,
            memory_reads: h.memory_reads,
            memory_writebacks: h.memory_writebacks,
        },
        memory: sys.hier.mem.stats,
        noc: sys.hier.noc.stats,
        ptw: PtwReport { core: core.mmu.stats, engine: engine.map(|e| e.mmu.stats) },
        engine: engine_report,
        bfs,
        qsort,
    })
}

fn prefetch_report(sys: &System, stats: crate::accel::DapfStats) -> PrefetchReport {
    let begin = match &sys.workload {
        WorkloadState::Bfs { info, .. } => info.borrow().region_begin_seq.unwrap_or(u64::MAX),
        _ => u64::MAX,
    };
    let (mut warm, mut hints, mut lines, mut demanded) = (0, 0, 0, 0);
    for t in sys.hint_traces() {
        if t.tag < begin {
            warm += 1;
            continue;
        }
        hints += 1;
        for &(line, at) in &t.issued_at {
            lines += 1;
            let pa = sys.space.translate(&sys.hier, line).map(|(p, _)| p / LINE_BYTES);
            if pa.and_then(|p| sys.demand.get(&p)).is_some_and(|&d| d >= at) {
                demanded += 1;
            }
        }
    }
    PrefetchReport {
        warmup_hints: warm,
        hints,
        lines,
        lines_demanded: demanded,
        accuracy: if lines == 0 { 0.0 } else { demanded as f64 / lines as f64 },
        reads: stats.reads,
        merged: stats.merged,
        dropped: stats.dropped,
        stalls: stats.stalls,
    }
}

/// One sweep row: the axis value and the run it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub config: RunConfig,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    /// Engine-disabled reference runs, in first-use order.
    pub baselines: Vec<SweepRow>,
    pub rows: Vec<SweepRow>,
}

/// The engine-disabled counterpart of `cfg`: engine-only settings are
/// restored from `base` so rows differing only in those share a baseline.
fn baseline_of(base: &RunConfig, cfg: &RunConfig) -> RunConfig {
    let mut b = cfg.clone();
    b.engine = base.engine;
    b.engine.enabled = false;
    b.cache.engine = base.cache.engine;
    b.cache.engine_mshrs = base.cache.engine_mshrs;
    b.workload.bfs.k = base.workload.bfs.k;
    b.baseline = None;
    b
}

/// Runs `base` with `axis` set to each of `values`, plus the engine-off
/// baselines, in parallel. Every row's speedup is against its baseline.
pub fn sweep(base: &RunConfig, axis: &str, values: &[String]) -> Result<SweepResult, SimError> {
    if values.is_empty() {
        return Err(ConfigError::Invalid("sweep needs at least one value".into()).into());
    }
    let mut configs = Vec::new();
    for v in values {
        let mut c = base.with(axis, v)?;
        c.label = format!("{}-{axis}={v}", base.label);
        configs.push(c);
    }
    let mut baselines: Vec<RunConfig> = Vec::new();
    let mut identities: Vec<String> = Vec::new();
    let mut pairing = Vec::new();
    for c in &configs {
        let mut b = baseline_of(base, c);
        b.label.clear();
        let id = b.to_toml_string();
        let idx = match identities.iter().position(|x| *x == id) {
            Some(i) => i,
            None => {
                b.label = match baselines.len() {
                    0 => format!("{}-baseline", base.label),
                    n => format!("{}-baseline{n}", base.label),
                };
                identities.push(id);
                baselines.push(b);
                baselines.len() - 1
            }
        };
        pairing.push(idx);
    }
    let jobs: Vec<&RunConfig> = baselines.iter().chain(configs.iter()).collect();
    let results: Vec<Result<RunReport, SimError>> = jobs.par_iter().map(|c| run(c)).collect();
    let mut reports = Vec::with_capacity(results.len());
    for r in results {
        reports.push(r?);
    }
    let (base_reports, row_reports) = reports.split_at(baselines.len());
    let baseline_rows: Vec<SweepRow> = baselines
        .iter()
        .zip(base_reports)
        .map(|(c, r)| SweepRow { axis: axis.into(), value: "baseline".into(), config: c.clone(), report: r.clone() })
        .collect();
    let rows = configs
        .iter()
        .zip(row_reports)
        .zip(values)
        .zip(&pairing)
        .map(|(((c, r), v), &bi)| {
            let mut report = r.clone();
            report.attach_baseline(&base_reports[bi]);
            let mut config = c.clone();
            config.baseline = Some(base_reports[bi].label.clone());
            SweepRow { axis: axis.into(), value: v.clone(), config, report }
        })
        .collect();
    Ok(SweepResult { axis: axis.into(), baselines: baseline_rows, rows })
}

impl SweepResult {
    /// Baseline rows then swept rows; metric columns followed by every
    /// config key.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let keys = self.rows.first().or(self.baselines.first()).map(|r| r.config.keys()).unwrap_or_default();
        let mut header: Vec<String> = [
            "label",
            "axis",
            "value",
            "cycles",
            "speedup",
            "mean_load_to_use",
            "retired_in_region",
            "prefetch_hints",
            "prefetch_lines",
            "prefetch_accuracy",
            "engine_cache_hits",
            "engine_cache_misses",
            "engine_walks",
            "core_walks",
            "l2_misses",
            "memory_reads",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(keys.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for row in self.baselines.iter().chain(&self.rows) {
            let r = &row.report;
            let pf = r.engine.as_ref().and_then(|e| e.prefetch.as_ref());
            let mut rec = vec![
                r.label.clone(),
                row.axis.clone(),
                row.value.clone(),
                r.cycles.to_string(),
                r.speedup.map_or(String::new(), |s| format!("{s:.6}")),
                format!("{:.4}", r.core.load_to_use.mean),
                r.core.retired_in_region.to_string(),
                pf.map_or(0, |p| p.hints).to_string(),
                pf.map_or(0, |p| p.lines).to_string(),
                pf.map_or(String::new(), |p| format!("{:.6}", p.accuracy)),
                r.caches.engine.map_or(0, |e| e.hits).to_string(),
                r.caches.engine.map_or(0, |e| e.misses).to_string(),
                r.ptw.engine.map_or(0, |e| e.walks).to_string(),
                r.ptw.core.walks.to_string(),
                r.caches.l2.misses.to_string(),
                r.caches.memory_reads.to_string(),
            ];
            let flat = flatten(&row.config);
            rec.extend(keys.iter().map(|k| flat.get(k).cloned().unwrap_or_default()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

fn flatten(cfg: &RunConfig) -> BTreeMap<String, String> {
    fn walk(v: &toml::Value, prefix: String, out: &mut BTreeMap<String, String>) {
        match v {
            toml::Value::Table(t) => {
                for (k, v) in t {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(v, p, out);
                }
            }
            toml::Value::String(s) => {
                out.insert(prefix, s.clone());
            }
            other => {
                out.insert(prefix, other.to_string());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(&toml::Value::try_from(cfg).expect("config serializes"), String::new(), &mut out);
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}
