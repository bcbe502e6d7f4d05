//! Run configuration: a nested TOML document where every key has a
//! default, unknown keys are rejected and the whole tree is validated
//! before a system is built.

use serde::{Deserialize, Serialize};

use crate::cache::{CacheGeometry, HierarchyParams};
use crate::cpu::CoreParams;
use crate::engine::{AccelKind, EngineParams};
use crate::error::ConfigError;
use crate::kernel::TICKS_PER_NS;
use crate::mem::MemParams;
use crate::noc::MeshDescription;
use crate::workload::{GraphSpec, QsortMode, QsortPattern};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub label: String,
    pub seed: u64,
    /// Label of the run whose cycle count is the speedup denominator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    pub system: SystemConfig,
    pub mesh: MeshConfig,
    pub clocks: ClockConfig,
    pub cache: CacheConfig,
    pub memory: MemoryConfig,
    pub core: CoreParams,
    pub engine: EngineParams,
    pub workload: WorkloadConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            label: "run".into(),
            seed: 1,
            baseline: None,
            system: SystemConfig::default(),
            mesh: MeshConfig::default(),
            clocks: ClockConfig::default(),
            cache: CacheConfig::default(),
            memory: MemoryConfig::default(),
            core: CoreParams::default(),
            engine: EngineParams::default(),
            workload: WorkloadConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub cores: usize,
    /// Core running the workload; the others stay idle.
    pub measured_core: usize,
    /// Abort the run after this many core cycles.
    pub max_cycles: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig { cores: 2, measured_core: 1, max_cycles: 20_000_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    /// One string per mesh row of `C`, `L`, `E`, `M` or `.` tokens.
    pub rows: Vec<String>,
    /// Per-hop router latency in core cycles.
    pub router_cycles: u64,
    /// Per-hop link latency in core cycles.
    pub link_cycles: u64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { rows: MeshDescription::default_4x3().to_rows(), router_cycles: 1, link_cycles: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockConfig {
    pub core_mhz: u64,
    pub engine_mhz: u64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        ClockConfig { core_mhz: 4000, engine_mhz: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrideConfig {
    pub l1d: bool,
    pub l2: bool,
    pub degree: u32,
    pub entries: usize,
}

impl Default for StrideConfig {
    fn default() -> Self {
        StrideConfig { l1d: false, l2: false, degree: 4, entries: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheConfig {
    pub l1i: CacheGeometry,
    pub l1d: CacheGeometry,
    pub l2: CacheGeometry,
    pub l3_slice: CacheGeometry,
    /// Engine data cache; latencies in engine cycles.
    pub engine: CacheGeometry,
    pub l1d_mshrs: usize,
    pub l2_mshrs: usize,
    pub engine_mshrs: usize,
    pub stride: StrideConfig,
}

impl Default for CacheConfig {
    fn default() -> Self {
        let h = HierarchyParams::defaults(2);
        CacheConfig {
            l1i: h.l1i,
            l1d: h.l1d,
            l2: h.l2,
            l3_slice: h.l3_slice,
            engine: h.engine_cache.expect("default engine cache"),
            l1d_mshrs: h.l1d_mshrs,
            l2_mshrs: h.l2_mshrs,
            engine_mshrs: h.engine_mshrs,
            stride: StrideConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    pub channels: usize,
    pub latency_ns: u64,
    pub channel_gib_per_sec: f64,
    pub capacity_bytes: u64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig { channels: 4, latency_ns: 50, channel_gib_per_sec: 4.8, capacity_bytes: 3 << 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    #[default]
    Bfs,
    Qsort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    pub kind: WorkloadKind,
    /// Core cycles lost on a mispredicted branch; 0 disables the model.
    pub branch_penalty: u32,
    pub bfs: BfsConfig,
    pub qsort: QsortConfig,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig { kind: WorkloadKind::Bfs, branch_penalty: 0, bfs: BfsConfig::default(), qsort: QsortConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BfsConfig {
    pub graph: GraphSpec,
    /// Warm-up and measured sources; the two highest-degree nodes if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sources: Option<[u32; 2]>,
    /// Prefetch distance in work-queue entries.
    pub k: u64,
}

impl Default for BfsConfig {
    fn default() -> Self {
        BfsConfig { graph: GraphSpec::default(), sources: None, k: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QsortConfig {
    pub n: u64,
    pub pattern: QsortPattern,
    pub mode: QsortMode,
}

impl Default for QsortConfig {
    fn default() -> Self {
        QsortConfig { n: 10_000, pattern: QsortPattern::Random, mode: QsortMode::Software }
    }
}

/// Short sweep axis names and the config keys they set.
pub const AXIS_ALIASES: &[(&str, &[&str])] = &[
    ("K", &["workload.bfs.k"]),
    ("engine_tlb", &["engine.tlb_entries"]),
    ("engine_cache", &["cache.engine.capacity_bytes"]),
    ("translation", &["engine.translation"]),
    ("stride", &["cache.stride.l1d", "cache.stride.l2"]),
    ("n", &["workload.qsort.n"]),
];

fn with_line(line: Option<usize>, message: &str) -> String {
    match line {
        Some(l) => format!("line {l}: {message}"),
        None => message.to_string(),
    }
}

/// Overlays `user` onto `base`. A table whose `kind` differs from the
/// default's replaces it outright, since its other keys belong to the new kind.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) if b.get("kind") == u.get("kind") || u.get("kind").is_none() => {
                merge(b, u)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Line of the deepest prefix of dotted `key` that appears in `text`, as a
/// `key = value` line or a table header.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    let mut table = String::new();
    let mut best: Option<(usize, usize)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let full = if let Some(h) = line.strip_prefix('[') {
            table = h.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            table.clone()
        } else if let Some((k, _)) = line.split_once('=') {
            let k = k.trim().trim_matches('"');
            if table.is_empty() { k.to_string() } else { format!("{table}.{k}") }
        } else {
            continue;
        };
        let matches = key == full || key.starts_with(&format!("{full}."));
        if matches && best.is_none_or(|(len, _)| full.len() > len) {
            best = Some((full.len(), i + 1));
        }
    }
    best.map(|(_, l)| l)
}

impl RunConfig {
    /// Parses a TOML document over the defaults, so any key may be omitted.
    /// Errors name the offending key path and line.
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let user: toml::Table = s.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map(|sp| s[..sp.start.min(s.len())].matches('\n').count() + 1);
            ConfigError::Parse { path: String::new(), message: with_line(line, e.message()) }
        })?;
        let mut doc = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
        merge(&mut doc, user);
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(doc)).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().message().to_string();
            let mut key = path.clone();
            if let Some(field) = message.strip_prefix("unknown field `").and_then(|m| m.split('`').next()) {
                key = if key == "." || key.is_empty() { field.to_string() } else { format!("{key}.{field}") };
            }
            ConfigError::Parse { path, message: with_line(line_of_key(s, &key), &message) }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, crate::error::SimError> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_toml_str(&text)?)
    }

    /// Default geometries with every cache capacity divided by 16 and the L3
    /// slices by a further 4, so a scale-12 graph relates to the caches as
    /// the larger graphs do to the full-size hierarchy.
    pub fn desk_scale() -> Self {
        let mut c = RunConfig::default();
        for g in [&mut c.cache.l1i, &mut c.cache.l1d, &mut c.cache.l2, &mut c.cache.l3_slice, &mut c.cache.engine] {
            g.capacity_bytes /= 16;
        }
        c.cache.l3_slice.capacity_bytes /= 4;
        c
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn mesh(&self) -> Result<MeshDescription, ConfigError> {
        MeshDescription::from_rows(&self.mesh.rows)
    }

    pub fn core_period(&self) -> u64 {
        1_000_000 / self.clocks.core_mhz.max(1)
    }

    pub fn engine_period(&self) -> u64 {
        1_000_000 / self.clocks.engine_mhz.max(1)
    }

    pub fn hierarchy_params(&self) -> HierarchyParams {
        let c = &self.cache;
        HierarchyParams {
            cores: self.system.cores,
            l1i: c.l1i,
            l1d: c.l1d,
            l2: c.l2,
            l3_slice: c.l3_slice,
            engine_cache: self.engine.enabled.then_some(c.engine),
            l1d_mshrs: c.l1d_mshrs,
            l2_mshrs: c.l2_mshrs,
            engine_mshrs: c.engine_mshrs,
            stride_l1d: c.stride.l1d,
            stride_l2: c.stride.l2,
            stride_degree: c.stride.degree,
            stride_entries: c.stride.entries,
            core_period: self.core_period(),
            engine_period: self.engine_period(),
        }
    }

    pub fn mem_params(&self) -> MemParams {
        MemParams {
            channels: self.memory.channels,
            fixed_latency: self.memory.latency_ns * TICKS_PER_NS,
            channel_gib_per_sec: self.memory.channel_gib_per_sec,
            capacity_bytes: self.memory.capacity_bytes,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        for (name, mhz) in [("clocks.core_mhz", self.clocks.core_mhz), ("clocks.engine_mhz", self.clocks.engine_mhz)] {
            if mhz == 0 || 1_000_000 % mhz != 0 {
                return bad(format!("{name} = {mhz}: the period must be a whole number of picoseconds"));
            }
        }
        let mesh = self.mesh()?;
        let s = &self.system;
        if s.cores == 0 || s.cores > mesh.cores().len() {
            return bad(format!("system.cores = {} but the mesh has {} core tiles", s.cores, mesh.cores().len()));
        }
        if s.measured_core >= s.cores {
            return bad(format!("system.measured_core = {} must be below system.cores = {}", s.measured_core, s.cores));
        }
        let c = &self.cache;
        for (name, g) in [("cache.l1i", c.l1i), ("cache.l1d", c.l1d), ("cache.l2", c.l2), ("cache.l3_slice", c.l3_slice), ("cache.engine", c.engine)] {
            g.validate(name)?;
        }
        for (name, v) in [("cache.l1d_mshrs", c.l1d_mshrs), ("cache.l2_mshrs", c.l2_mshrs), ("cache.engine_mshrs", c.engine_mshrs), ("cache.stride.entries", c.stride.entries)] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        let m = &self.memory;
        if m.channels == 0 || !(m.channel_gib_per_sec > 0.0) {
            return bad("memory.channels and memory.channel_gib_per_sec must be positive".into());
        }
        if m.capacity_bytes < 128 << 20 {
            return bad(format!("memory.capacity_bytes = {} is below the 128 MiB minimum", m.capacity_bytes));
        }
        let k = &self.core;
        if k.issue_width == 0 || k.window == 0 || k.lsq_depth == 0 {
            return bad("core.issue_width, core.window and core.lsq_depth must be >= 1".into());
        }
        if k.tlb_entries == 0 {
            return bad("core.tlb_entries must be >= 1".into());
        }
        let e = &self.engine;
        if e.tlb_entries == 0 {
            return bad("engine.tlb_entries must be >= 1".into());
        }
        if e.enabled && mesh.engine().is_none() {
            return bad("engine.enabled = true but the mesh has no E tile".into());
        }
        for (name, v) in [
            ("engine.queue_depth", e.queue_depth),
            ("engine.dapf_reads_per_cycle", e.dapf_reads_per_cycle),
            ("engine.dapf_max_pending", e.dapf_max_pending),
            ("engine.qsort_compares_per_cycle", e.qsort_compares_per_cycle),
            ("engine.qsort_loads_per_cycle", e.qsort_loads_per_cycle),
            ("engine.qsort_lookahead_lines", e.qsort_lookahead_lines),
            ("engine.qsort_cutoff", e.qsort_cutoff),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if e.store_buffer_entries < 4 {
            return bad("engine.store_buffer_entries must be >= 4".into());
        }
        if e.retry_cycles == 0 {
            return bad("engine.retry_cycles must be >= 1".into());
        }
        if e.kind == AccelKind::Qsort && self.workload.kind == WorkloadKind::Bfs
            || e.kind == AccelKind::Dapf && self.workload.kind == WorkloadKind::Qsort && self.workload.qsort.mode == QsortMode::Offload
        {
            return bad(format!("engine.kind = {:?} does not serve workload.kind = {:?}", e.kind, self.workload.kind));
        }
        if self.workload.qsort.n > (1 << 28) {
            return bad("workload.qsort.n is limited to 2^28 elements".into());
        }
        Ok(())
    }

    /// Dotted keys addressable by [`RunConfig::set`], in document order.
    pub fn keys(&self) -> Vec<String> {
        let v = toml::Value::try_from(self).expect("config serializes");
        let mut out = Vec::new();
        leaf_keys(&v, String::new(), &mut out);
        out
    }

    /// Valid sweep axes: aliases followed by every leaf key.
    pub fn axes(&self) -> Vec<String> {
        let mut out: Vec<String> = AXIS_ALIASES.iter().map(|(a, _)| a.to_string()).collect();
        out.extend(self.keys());
        out
    }

    /// Returns a copy with `key` (a dotted path or alias) set to `value`,
    /// re-validated. Values accept `KiB`/`MiB`/`GiB` suffixes.
    pub fn with(&self, key: &str, value: &str) -> Result<Self, ConfigError> {
        let targets: Vec<String> = match AXIS_ALIASES.iter().find(|(a, _)| *a == key) {
            Some((_, ks)) => ks.iter().map(|s| s.to_string()).collect(),
            None => vec![key.to_string()],
        };
        let mut doc = toml::Value::try_from(self).expect("config serializes");
        for t in &targets {
            let known = self.keys();
            let is_sources = t == "workload.bfs.sources";
            if !known.contains(t) && !is_sources {
                return Err(ConfigError::UnknownAxis { axis: key.to_string(), valid: self.axes().join(", ") });
            }
            set_path(&mut doc, t, parse_value(value))?;
        }
        let text = toml::to_string(&doc).expect("document serializes");
        RunConfig::from_toml_str(&text)
    }
}

fn leaf_keys(v: &toml::Value, prefix: String, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaf_keys(v, p, out);
            }
        }
        _ => out.push(prefix),
    }
}

fn set_path(doc: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let table = cur.as_table_mut().ok_or_else(|| ConfigError::Invalid(format!("`{path}` is not a table path")))?;
        if i + 1 == parts.len() {
            table.insert(p.to_string(), value);
            return Ok(());
        }
        cur = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Ok(())
}

/// Parses a sweep value: integer with optional binary suffix, bool,
/// float, `a,b` integer pair, or string.
pub fn parse_value(s: &str) -> toml::Value {
    let s = s.trim();
    for (suffix, mult) in [("KiB", 1u64 << 10), ("MiB", 1 << 20), ("GiB", 1 << 30)] {
        if let Some(n) = s.strip_suffix(suffix).and_then(|n| n.trim().parse::<u64>().ok()) {
            return toml::Value::Integer((n * mult) as i64);
        }
    }
    if let Ok(i) = s.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    match s {
        "true" | "on" => return toml::Value::Boolean(true),
        "false" | "off" => return toml::Value::Boolean(false),
        _ => {}
    }
    if let Ok(f) = s.parse::<f64>() {
        return toml::Value::Float(f);
    }
    if let Some((a, b)) = s.split_once(':') {
        if let (Ok(a), Ok(b)) = (a.parse::<i64>(), b.parse::<i64>()) {
            return toml::Value::Array(vec![toml::Value::Integer(a), toml::Value::Integer(b)]);
        }
    }
    toml::Value::String(s.to_string())
}
