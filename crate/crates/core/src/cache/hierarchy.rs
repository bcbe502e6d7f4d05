//! Directory MESI over private L2s (plus the engine cache) with an
//! exclusive, address-sliced victim L3.
//!
//! Transactions are resolved atomically when they are issued: coherence
//! state and line data change at once, and the returned completion time
//! carries the latency of the message path (NoC hops, directory, peer or
//! memory access). Lines whose fill is still in flight record a `ready`
//! time; later hits to them complete no earlier than that (hit-under-fill).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{slice_of, CacheGeometry, Mesi, SetAssoc, StridePrefetcher};
use crate::kernel::SimTime;
use crate::mem::{MemKind, MemParams, MemSystem, INTERLEAVE_BYTES};
use crate::noc::{Coord, MeshDescription, MsgKind, Noc, NocMessage};
use crate::LINE_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Port {
    /// Core load/store path through L1D.
    Data(usize),
    /// Core instruction fetch through L1I.
    Instr(usize),
    /// Core page-table walker, attached at the core's L2.
    Walk(usize),
    Engine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
    InstrFetch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    L1,
    L2,
    EngineCache,
    L3,
    Peer,
    Memory,
}

#[derive(Debug, Clone, Copy)]
pub struct Completion {
    pub done: SimTime,
    pub source: Source,
    /// Line contents after the access.
    pub line: [u8; 64],
}

impl Completion {
    pub fn read_bytes(&self, paddr: u64, out: &mut [u8]) {
        let off = (paddr % LINE_BYTES) as usize;
        out.copy_from_slice(&self.line[off..off + out.len()]);
    }

    pub fn read_u64(&self, paddr: u64, size: usize) -> u64 {
        let mut b = [0u8; 8];
        self.read_bytes(paddr, &mut b[..size]);
        u64::from_le_bytes(b)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Outcome {
    Done(Completion),
    /// MSHRs exhausted; retry no earlier than `retry_at`.
    Stall { retry_at: SimTime },
}

impl Outcome {
    pub fn done(self) -> Option<Completion> {
        match self {
            Outcome::Done(c) => Some(c),
            Outcome::Stall { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub writebacks: u64,
    pub prefetch_issued: u64,
    pub prefetch_useful: u64,
    pub mshr_stalls: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierStats {
    pub l1d: Vec<CacheStats>,
    pub l1i: Vec<CacheStats>,
    pub l2: Vec<CacheStats>,
    pub l3: CacheStats,
    pub engine: CacheStats,
    pub snoops: u64,
    pub invalidations: u64,
    pub peer_forwards: u64,
    pub memory_reads: u64,
    pub memory_writebacks: u64,
}

#[derive(Debug, Clone)]
pub struct HierarchyParams {
    pub cores: usize,
    pub l1i: CacheGeometry,
    pub l1d: CacheGeometry,
    pub l2: CacheGeometry,
    /// Per-slice geometry.
    pub l3_slice: CacheGeometry,
    pub engine_cache: Option<CacheGeometry>,
    pub l1d_mshrs: usize,
    pub l2_mshrs: usize,
    pub engine_mshrs: usize,
    pub stride_l1d: bool,
    pub stride_l2: bool,
    pub stride_degree: u32,
    pub stride_entries: usize,
    pub core_period: u64,
    pub engine_period: u64,
}

impl HierarchyParams {
    /// Default geometries and latencies for `cores` cores.
    pub fn defaults(cores: usize) -> Self {
        HierarchyParams {
            cores,
            l1i: CacheGeometry::new(32 << 10, 8, 4, 4),
            l1d: CacheGeometry::new(48 << 10, 12, 4, 4),
            l2: CacheGeometry::new(1 << 20, 16, 12, 12),
            l3_slice: CacheGeometry::new(4 << 20, 16, 8, 8),
            engine_cache: Some(CacheGeometry::new(512 << 10, 8, 4, 2)),
            l1d_mshrs: 16,
            l2_mshrs: 32,
            engine_mshrs: 32,
            stride_l1d: false,
            stride_l2: false,
            stride_degree: 4,
            stride_entries: 64,
            core_period: 250,
            engine_period: 1000,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct L1Line {
    ready: SimTime,
    prefetched: bool,
}

#[derive(Debug, Clone)]
struct PrivLine {
    state: Mesi,
    data: [u8; 64],
    ready: SimTime,
    prefetched: bool,
}

impl Default for PrivLine {
    fn default() -> Self {
        PrivLine { state: Mesi::Invalid, data: [0; 64], ready: SimTime::ZERO, prefetched: false }
    }
}

#[derive(Debug, Clone)]
struct L3Line {
    dirty: bool,
    data: [u8; 64],
}

impl Default for L3Line {
    fn default() -> Self {
        L3Line { dirty: false, data: [0; 64] }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct DirEntry {
    sharers: u32,
    owner: Option<usize>,
    busy_until: SimTime,
    last_txn: u64,
}

#[derive(Debug, Clone)]
struct Mshr {
    capacity: usize,
    entries: Vec<(u64, SimTime)>,
}

impl Mshr {
    fn new(capacity: usize) -> Self {
        Mshr { capacity: capacity.max(1), entries: Vec::new() }
    }

    fn prune(&mut self, at: SimTime) {
        self.entries.retain(|&(_, r)| r > at);
    }

    /// `None` if a new miss may allocate, else the earliest release time.
    fn blocked(&mut self, line: u64, at: SimTime) -> Option<SimTime> {
        self.prune(at);
        if self.entries.len() < self.capacity || self.entries.iter().any(|&(l, _)| l == line) {
            None
        } else {
            self.entries.iter().map(|&(_, r)| r).min()
        }
    }

    fn insert(&mut self, line: u64, ready: SimTime) {
        if let Some(e) = self.entries.iter_mut().find(|(l, _)| *l == line) {
            e.1 = e.1.max(ready);
        } else {
            self.entries.push((line, ready));
        }
    }
}

struct CoreCaches {
    l1i: SetAssoc<L1Line>,
    l1d: SetAssoc<L1Line>,
    l2: SetAssoc<PrivLine>,
    l1d_mshr: Mshr,
    l2_mshr: Mshr,
    stride_l1d: Option<StridePrefetcher>,
    stride_l2: Option<StridePrefetcher>,
}

struct EngineCache {
    cache: SetAssoc<PrivLine>,
    mshr: Mshr,
}

/// Latencies converted to ticks.
#[derive(Debug, Clone, Copy)]
struct Lat {
    l1i_hit: u64,
    l1d_hit: u64,
    l1d_tag: u64,
    l2_hit: u64,
    l2_tag: u64,
    l3: u64,
    eng_hit: u64,
    eng_tag: u64,
}

pub struct Hierarchy {
    params: HierarchyParams,
    lat: Lat,
    cores: Vec<CoreCaches>,
    engine: Option<EngineCache>,
    l3: Vec<SetAssoc<L3Line>>,
    dir: HashMap<u64, DirEntry>,
    core_tiles: Vec<Coord>,
    slice_tiles: Vec<Coord>,
    mem_tiles: Vec<Coord>,
    engine_tile: Option<Coord>,
    next_txn: u64,
    pub noc: Noc,
    pub mem: MemSystem,
    pub stats: HierStats,
}

fn line_of(paddr: u64) -> u64 {
    paddr / LINE_BYTES
}

impl Hierarchy {
    pub fn new(params: HierarchyParams, mesh: MeshDescription, noc_router: u64, noc_link: u64, mem: MemParams) -> Self {
        let core_tiles = mesh.cores();
        let slice_tiles = mesh.l3_slices();
        let mem_tiles = mesh.mem_tiles();
        let engine_tile = mesh.engine();
        assert!(params.cores <= core_tiles.len(), "more cores than CoreTiles");
        assert!(params.cores < 32, "directory bit-set holds at most 31 cores");
        let slices = slice_tiles.len() as u64;
        let core_period = params.core_period;
        let engine_period = params.engine_period;
        let lat = Lat {
            l1i_hit: params.l1i.hit_latency * core_period,
            l1d_hit: params.l1d.hit_latency * core_period,
            l1d_tag: params.l1d.tag_latency * core_period,
            l2_hit: params.l2.hit_latency * core_period,
            l2_tag: params.l2.tag_latency * core_period,
            l3: params.l3_slice.hit_latency * core_period,
            eng_hit: params.engine_cache.map_or(0, |g| g.hit_latency * engine_period),
            eng_tag: params.engine_cache.map_or(0, |g| g.tag_latency * engine_period),
        };
        let cores = (0..params.cores)
            .map(|_| CoreCaches {
                l1i: SetAssoc::new(&params.l1i, 1),
                l1d: SetAssoc::new(&params.l1d, 1),
                l2: SetAssoc::new(&params.l2, 1),
                l1d_mshr: Mshr::new(params.l1d_mshrs),
                l2_mshr: Mshr::new(params.l2_mshrs),
                stride_l1d: params.stride_l1d.then(|| StridePrefetcher::new(params.stride_entries, params.stride_degree)),
                stride_l2: params.stride_l2.then(|| StridePrefetcher::new(params.stride_entries, params.stride_degree)),
            })
            .collect();
        let engine = match (params.engine_cache, engine_tile) {
            (Some(g), Some(_)) => Some(EngineCache { cache: SetAssoc::new(&g, 1), mshr: Mshr::new(params.engine_mshrs) }),
            _ => None,
        };
        let l3 = (0..slices).map(|_| SetAssoc::new(&params.l3_slice, slices)).collect();
        let stats = HierStats {
            l1d: vec![CacheStats::default(); params.cores],
            l1i: vec![CacheStats::default(); params.cores],
            l2: vec![CacheStats::default(); params.cores],
            ..HierStats::default()
        };
        Hierarchy {
            lat,
            cores,
            engine,
            l3,
            dir: HashMap::new(),
            core_tiles,
            slice_tiles,
            mem_tiles,
            engine_tile,
            next_txn: 0,
            noc: Noc::new(mesh, noc_router, noc_link, core_period),
            mem: MemSystem::new(mem),
            stats,
            params,
        }
    }

    pub fn params(&self) -> &HierarchyParams {
        &self.params
    }

    pub fn num_cores(&self) -> usize {
        self.cores.len()
    }

    pub fn has_engine_cache(&self) -> bool {
        self.engine.is_some()
    }

    /// Directory agent index of the engine cache.
    pub fn engine_agent(&self) -> usize {
        self.cores.len()
    }

    pub fn slices(&self) -> usize {
        self.l3.len()
    }

    pub fn home_tile(&self, paddr: u64) -> Coord {
        self.slice_tiles[slice_of(paddr, self.l3.len())]
    }

    pub fn mem_tile(&self, paddr: u64) -> Coord {
        self.mem_tiles[((paddr / INTERLEAVE_BYTES) % self.mem_tiles.len() as u64) as usize]
    }

    pub fn core_tile(&self, core: usize) -> Coord {
        self.core_tiles[core]
    }

    pub fn engine_tile(&self) -> Option<Coord> {
        self.engine_tile
    }

    fn agent_tile(&self, agent: usize) -> Coord {
        if agent < self.cores.len() {
            self.core_tiles[agent]
        } else {
            self.engine_tile.expect("engine agent without EngineTile")
        }
    }

    fn agent_cache(&self, agent: usize) -> &SetAssoc<PrivLine> {
        if agent < self.cores.len() {
            &self.cores[agent].l2
        } else {
            &self.engine.as_ref().expect("engine cache").cache
        }
    }

    fn agent_cache_mut(&mut self, agent: usize) -> &mut SetAssoc<PrivLine> {
        if agent < self.cores.len() {
            &mut self.cores[agent].l2
        } else {
            &mut self.engine.as_mut().expect("engine cache").cache
        }
    }

    fn agent_hit_latency(&self, agent: usize) -> u64 {
        if agent < self.cores.len() {
            self.lat.l2_hit
        } else {
            self.lat.eng_hit
        }
    }

    fn agents(&self) -> impl Iterator<Item = usize> {
        let n = self.cores.len() + usize::from(self.engine.is_some());
        0..n
    }

    // ------------------------------------------------------------------
    // Demand and prefetch accesses

    /// Performs one access. For writes, `write` holds bytes stored at
    /// `paddr`; they must not cross a line boundary.
    pub fn access(&mut self, port: Port, paddr: u64, kind: AccessKind, write: Option<&[u8]>, at: SimTime) -> Outcome {
        self.access_inner(port, paddr, kind, write, at, None, false)
    }

    /// Like [`access`](Self::access) but also trains the stride prefetchers
    /// of the port with `stream`.
    pub fn access_stream(
        &mut self,
        port: Port,
        paddr: u64,
        kind: AccessKind,
        write: Option<&[u8]>,
        at: SimTime,
        stream: u32,
    ) -> Outcome {
        self.access_inner(port, paddr, kind, write, at, Some(stream), false)
    }

    fn access_inner(
        &mut self,
        port: Port,
        paddr: u64,
        kind: AccessKind,
        write: Option<&[u8]>,
        at: SimTime,
        stream: Option<u32>,
        prefetch: bool,
    ) -> Outcome {
        if let Some(w) = write {
            debug_assert_eq!(kind, AccessKind::Write);
            assert!(paddr % LINE_BYTES + w.len() as u64 <= LINE_BYTES, "write crosses a line boundary");
        }
        let out = match port {
            Port::Data(c) => self.core_access(c, false, paddr, kind, write, at, stream, prefetch),
            Port::Instr(c) => self.core_access(c, true, paddr, kind, None, at, stream, prefetch),
            // the walker looks up L1D tags but fills only at L2
            Port::Walk(c) => {
                let t = at + self.lat.l1d_tag;
                self.l2_level_access(c, paddr, kind == AccessKind::Write, write, t, None, false)
            }
            Port::Engine => {
                let agent = self.engine_agent();
                self.l2_level_access(agent, paddr, kind == AccessKind::Write, write, at, None, false)
            }
        };
        if let (Some(s), Outcome::Done(_), Port::Data(c)) = (stream, out, port) {
            if !prefetch {
                self.train_l1d(c, s, paddr, at);
            }
        }
        out
    }

    /// Engine-issued prefetch read into the engine cache. Returns `None`
    /// when the engine cache has no free MSHR.
    pub fn engine_prefetch(&mut self, paddr: u64, at: SimTime) -> Option<Completion> {
        let agent = self.engine_agent();
        let out = self.l2_level_access(agent, paddr, false, None, at, None, true).done();
        if out.is_some() {
            self.stats.engine.prefetch_issued += 1;
        }
        out
    }

    fn train_l1d(&mut self, c: usize, stream: u32, paddr: u64, at: SimTime) {
        let Some(pf) = self.cores[c].stride_l1d.as_mut() else { return };
        let cands = pf.observe(stream, paddr);
        for a in cands {
            let line = line_of(a);
            if self.cores[c].l1d.contains(line) {
                continue;
            }
            if self.core_access(c, false, a, AccessKind::Read, None, at, None, true).done().is_some() {
                self.stats.l1d[c].prefetch_issued += 1;
            }
        }
    }

    fn train_l2(&mut self, c: usize, stream: u32, paddr: u64, at: SimTime) {
        let Some(pf) = self.cores[c].stride_l2.as_mut() else { return };
        let cands = pf.observe(stream, paddr);
        for a in cands {
            if self.cores[c].l2.contains(line_of(a)) {
                continue;
            }
            if self.l2_level_access(c, a, false, None, at, None, true).done().is_some() {
                self.stats.l2[c].prefetch_issued += 1;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn core_access(
        &mut self,
        c: usize,
        instr: bool,
        paddr: u64,
        kind: AccessKind,
        write: Option<&[u8]>,
        at: SimTime,
        stream: Option<u32>,
        prefetch: bool,
    ) -> Outcome {
        let line = line_of(paddr);
        let want_write = kind == AccessKind::Write;
        let (hit_lat, tag_lat) = if instr { (self.lat.l1i_hit, self.lat.l1i_hit) } else { (self.lat.l1d_hit, self.lat.l1d_tag) };

        let l1 = if instr { &self.cores[c].l1i } else { &self.cores[c].l1d };
        if let Some(i1) = l1.find(line) {
            let i2 = self.cores[c].l2.find(line).expect("L1 line missing from L2 (inclusion)");
            let state = self.cores[c].l2.meta(i2).state;
            if !want_write || state.is_owner() {
                let cc = &mut self.cores[c];
                let l1 = if instr { &mut cc.l1i } else { &mut cc.l1d };
                l1.touch(i1);
                let m1 = l1.meta_mut(i1);
                let ready = m1.ready;
                let was_prefetched = std::mem::take(&mut m1.prefetched) && !prefetch;
                cc.l2.touch(i2);
                let m2 = cc.l2.meta_mut(i2);
                if let Some(w) = write {
                    m2.state = Mesi::Modified;
                    let off = (paddr % LINE_BYTES) as usize;
                    m2.data[off..off + w.len()].copy_from_slice(w);
                }
                let data = m2.data;
                if !prefetch {
                    let st = if instr { &mut self.stats.l1i[c] } else { &mut self.stats.l1d[c] };
                    st.hits += 1;
                    if was_prefetched {
                        st.prefetch_useful += 1;
                    }
                }
                return Outcome::Done(Completion { done: (at + hit_lat).max(ready), source: Source::L1, line: data });
            }
        }

        if !instr {
            if let Some(retry_at) = self.cores[c].l1d_mshr.blocked(line, at) {
                if !prefetch {
                    self.stats.l1d[c].mshr_stalls += 1;
                }
                return Outcome::Stall { retry_at };
            }
        }

        let t1 = at + tag_lat;
        let out = self.l2_level_access(c, paddr, want_write, write, t1, stream, prefetch);
        let Outcome::Done(comp) = out else { return out };
        if !prefetch {
            let st = if instr { &mut self.stats.l1i[c] } else { &mut self.stats.l1d[c] };
            st.misses += 1;
        }
        let cc = &mut self.cores[c];
        let l1 = if instr { &mut cc.l1i } else { &mut cc.l1d };
        match l1.find(line) {
            Some(i) => {
                l1.touch(i);
                let m = l1.meta_mut(i);
                m.ready = m.ready.max(comp.done);
            }
            None => {
                let slot = l1.victim_slot(line);
                l1.fill(slot, line, L1Line { ready: comp.done, prefetched: prefetch });
            }
        }
        if !instr {
            cc.l1d_mshr.insert(line, comp.done);
        }
        Outcome::Done(comp)
    }

    /// Access at the L2 (core `agent`) or engine-cache level.
    #[allow(clippy::too_many_arguments)]
    fn l2_level_access(
        &mut self,
        agent: usize,
        paddr: u64,
        want_write: bool,
        write: Option<&[u8]>,
        at: SimTime,
        stream: Option<u32>,
        prefetch: bool,
    ) -> Outcome {
        let line = line_of(paddr);
        let is_core = agent < self.cores.len();
        let (hit_lat, tag_lat) =
            if is_core { (self.lat.l2_hit, self.lat.l2_tag) } else { (self.lat.eng_hit, self.lat.eng_tag) };

        if is_core && !prefetch {
            if let Some(s) = stream {
                self.train_l2(agent, s, paddr, at);
            }
        }

        let cache = self.agent_cache(agent);
        let found = cache.find(line);
        if let Some(idx) = found {
            let state = cache.meta(idx).state;
            if !want_write || state.is_owner() {
                let cache = self.agent_cache_mut(agent);
                cache.touch(idx);
                let m = cache.meta_mut(idx);
                if let Some(w) = write {
                    m.state = Mesi::Modified;
                    let off = (paddr % LINE_BYTES) as usize;
                    m.data[off..off + w.len()].copy_from_slice(w);
                }
                let useful = std::mem::take(&mut m.prefetched) && !prefetch;
                let done = (at + hit_lat).max(m.ready);
                let data = m.data;
                if !prefetch {
                    let st = self.level_stats(agent);
                    st.hits += 1;
                    if useful {
                        st.prefetch_useful += 1;
                    }
                }
                let source = if is_core { Source::L2 } else { Source::EngineCache };
                return Outcome::Done(Completion { done, source, line: data });
            }
        }

        let blocked = if is_core {
            self.cores[agent].l2_mshr.blocked(line, at)
        } else {
            self.engine.as_mut().expect("engine cache").mshr.blocked(line, at)
        };
        if let Some(retry_at) = blocked {
            if !prefetch {
                self.level_stats(agent).mshr_stalls += 1;
            }
            return Outcome::Stall { retry_at };
        }
        if !prefetch {
            self.level_stats(agent).misses += 1;
        }

        let (done, source, state, mut data) = self.home_transaction(agent, line, want_write, at + tag_lat);
        if let Some(w) = write {
            let off = (paddr % LINE_BYTES) as usize;
            data[off..off + w.len()].copy_from_slice(w);
        }
        let state = if write.is_some() { Mesi::Modified } else { state };
        match found {
            Some(idx) => {
                let cache = self.agent_cache_mut(agent);
                cache.touch(idx);
                let m = cache.meta_mut(idx);
                m.state = state;
                m.data = data;
                m.ready = m.ready.max(done);
            }
            None => {
                let meta = PrivLine { state, data, ready: done, prefetched: prefetch };
                self.install_private(agent, line, meta, done);
            }
        }
        if is_core {
            self.cores[agent].l2_mshr.insert(line, done);
        } else {
            self.engine.as_mut().unwrap().mshr.insert(line, done);
        }
        Outcome::Done(Completion { done, source, line: data })
    }

    fn level_stats(&mut self, agent: usize) -> &mut CacheStats {
        if agent < self.cores.len() {
            &mut self.stats.l2[agent]
        } else {
            &mut self.stats.engine
        }
    }

    /// Resolves a miss or upgrade at the home slice. Returns completion
    /// time, data source, granted state and line data.
    fn home_transaction(&mut self, agent: usize, line: u64, want_write: bool, at: SimTime) -> (SimTime, Source, Mesi, [u8; 64]) {
        let paddr = line * LINE_BYTES;
        let req_tile = self.agent_tile(agent);
        let home = self.home_tile(paddr);
        let arrive = self.noc.send(NocMessage::control(MsgKind::Request, req_tile, home, paddr), at);
        let txn = self.next_txn;
        self.next_txn += 1;
        let entry = *self.dir.entry(line).or_default();
        let t3 = arrive.max(entry.busy_until) + self.lat.l3;
        let me = 1u32 << agent;
        let others = entry.sharers & !me;
        let upgrading = entry.sharers & me != 0;

        let (done, source, state, data, new_sharers, new_owner);
        if others == 0 {
            if upgrading {
                let idx = self.agent_cache(agent).find(line).expect("directory sharer holds line");
                data = self.agent_cache(agent).meta(idx).data;
                done = self.noc.send(NocMessage::control(MsgKind::Response, home, req_tile, paddr), t3);
                source = Source::L3;
                state = if want_write { Mesi::Modified } else { Mesi::Exclusive };
            } else if let Some(l3line) = self.l3_take(line) {
                self.stats.l3.hits += 1;
                data = l3line.data;
                done = self.noc.send(NocMessage::data(MsgKind::Response, home, req_tile, paddr), t3);
                source = Source::L3;
                state = if want_write || l3line.dirty { Mesi::Modified } else { Mesi::Exclusive };
            } else {
                self.stats.l3.misses += 1;
                self.stats.memory_reads += 1;
                let mt = self.mem_tile(paddr);
                let a = self.noc.send(NocMessage::control(MsgKind::Request, home, mt, paddr), t3);
                let m = self.mem.access(paddr, MemKind::Read, a);
                data = self.mem.store.read_line(paddr);
                done = self.noc.send(NocMessage::data(MsgKind::Response, mt, req_tile, paddr), m);
                source = Source::Memory;
                state = if want_write { Mesi::Modified } else { Mesi::Exclusive };
            }
            new_sharers = me;
            new_owner = Some(agent);
        } else if let Some(owner) = entry.owner.filter(|&o| o != agent) {
            self.stats.snoops += 1;
            self.stats.peer_forwards += 1;
            let otile = self.agent_tile(owner);
            let s = self.noc.send(NocMessage::control(MsgKind::Snoop, home, otile, paddr), t3);
            let oidx = self.agent_cache(owner).find(line).expect("directory owner holds line");
            let om = self.agent_cache(owner).meta(oidx).clone();
            self.note_peer_use(owner, oidx);
            debug_assert!(om.state.is_owner());
            let ready = (s + self.agent_hit_latency(owner)).max(om.ready);
            data = om.data;
            if want_write {
                self.invalidate_private(owner, line);
                state = Mesi::Modified;
                new_sharers = me;
                new_owner = Some(agent);
            } else {
                if om.state == Mesi::Modified {
                    self.writeback_to_memory(otile, paddr, &data, ready);
                }
                let m = self.agent_cache_mut(owner).meta_mut(oidx);
                m.state = Mesi::Shared;
                state = Mesi::Shared;
                new_sharers = entry.sharers | me;
                new_owner = None;
            }
            done = self.noc.send(NocMessage::data(MsgKind::Response, otile, req_tile, paddr), ready);
            source = Source::Peer;
        } else {
            // only Shared copies elsewhere
            let nearest = (0..32)
                .filter(|b| others & (1 << b) != 0)
                .min_by_key(|&b| (self.agent_tile(b).manhattan(req_tile), b))
                .expect("non-empty sharer set");
            let ntile = self.agent_tile(nearest);
            let nidx = self.agent_cache(nearest).find(line).expect("directory sharer holds line");
            let nmeta = self.agent_cache(nearest).meta(nidx).clone();
            self.note_peer_use(nearest, nidx);
            if !want_write {
                self.stats.snoops += 1;
                self.stats.peer_forwards += 1;
                let s = self.noc.send(NocMessage::control(MsgKind::Snoop, home, ntile, paddr), t3);
                let ready = (s + self.agent_hit_latency(nearest)).max(nmeta.ready);
                done = self.noc.send(NocMessage::data(MsgKind::Response, ntile, req_tile, paddr), ready);
                data = nmeta.data;
                source = Source::Peer;
                state = Mesi::Shared;
                new_sharers = entry.sharers | me;
                new_owner = None;
            } else {
                let mut d = t3;
                for b in (0..32).filter(|b| others & (1 << b) != 0) {
                    self.stats.snoops += 1;
                    let tile = self.agent_tile(b);
                    let s = self.noc.send(NocMessage::control(MsgKind::Snoop, home, tile, paddr), t3);
                    let lat = self.agent_hit_latency(b);
                    let reply = if b == nearest && !upgrading {
                        let ready = (s + lat).max(nmeta.ready);
                        self.stats.peer_forwards += 1;
                        self.noc.send(NocMessage::data(MsgKind::Response, tile, req_tile, paddr), ready)
                    } else {
                        self.noc.send(NocMessage::control(MsgKind::Response, tile, req_tile, paddr), s + lat)
                    };
                    d = d.max(reply);
                    self.invalidate_private(b, line);
                }
                data = if upgrading {
                    let idx = self.agent_cache(agent).find(line).expect("upgrading agent holds line");
                    self.agent_cache(agent).meta(idx).data
                } else {
                    nmeta.data
                };
                done = d;
                source = if upgrading { Source::L3 } else { Source::Peer };
                state = Mesi::Modified;
                new_sharers = me;
                new_owner = Some(agent);
            }
        }

        let e = self.dir.get_mut(&line).expect("entry created above");
        e.sharers = new_sharers;
        e.owner = new_owner;
        e.busy_until = done;
        e.last_txn = txn;
        (done, source, state, data)
    }

    fn note_peer_use(&mut self, agent: usize, idx: usize) {
        if agent == self.engine_agent() {
            let m = self.agent_cache_mut(agent).meta_mut(idx);
            if std::mem::take(&mut m.prefetched) {
                self.stats.engine.prefetch_useful += 1;
            }
        }
    }

    fn l3_take(&mut self, line: u64) -> Option<L3Line> {
        let s = slice_of(line * LINE_BYTES, self.l3.len());
        self.l3[s].remove(line)
    }

    fn writeback_to_memory(&mut self, from: Coord, paddr: u64, data: &[u8; 64], at: SimTime) {
        let mt = self.mem_tile(paddr);
        let arrive = self.noc.send(NocMessage::data(MsgKind::Writeback, from, mt, paddr), at);
        self.mem.access(paddr, MemKind::Writeback, arrive);
        self.mem.store.write_line(paddr, data);
        self.stats.memory_writebacks += 1;
    }

    /// Drops `line` from `agent`'s private hierarchy (L2 + L1s, or the
    /// engine cache) without touching the directory.
    fn invalidate_private(&mut self, agent: usize, line: u64) {
        self.stats.invalidations += 1;
        if agent < self.cores.len() {
            let cc = &mut self.cores[agent];
            cc.l1d.remove(line);
            cc.l1i.remove(line);
            cc.l2.remove(line);
        } else if let Some(e) = self.engine.as_mut() {
            e.cache.remove(line);
        }
    }

    fn install_private(&mut self, agent: usize, line: u64, meta: PrivLine, at: SimTime) {
        let cache = self.agent_cache_mut(agent);
        let slot = cache.victim_slot(line);
        if let Some((vline, vmeta)) = cache.fill(slot, line, meta) {
            self.evict_private(agent, vline, vmeta, at);
        }
    }

    fn evict_private(&mut self, agent: usize, vline: u64, vmeta: PrivLine, at: SimTime) {
        self.level_stats(agent).evictions += 1;
        if agent < self.cores.len() {
            let cc = &mut self.cores[agent];
            cc.l1d.remove(vline);
            cc.l1i.remove(vline);
        }
        let e = self.dir.get_mut(&vline).expect("evicted line tracked by directory");
        e.sharers &= !(1 << agent);
        if e.owner == Some(agent) {
            e.owner = None;
        }
        if e.sharers == 0 {
            let from = self.agent_tile(agent);
            self.victim_insert(vline, vmeta.data, vmeta.state == Mesi::Modified, from, at.max(vmeta.ready));
        } else {
            debug_assert_eq!(vmeta.state, Mesi::Shared);
        }
    }

    /// Installs a line evicted from a private cache into its home L3 slice;
    /// the slice's LRU victim is written back if dirty, else dropped.
    fn victim_insert(&mut self, line: u64, data: [u8; 64], dirty: bool, from: Coord, at: SimTime) {
        let paddr = line * LINE_BYTES;
        let home = self.home_tile(paddr);
        let arrive = self.noc.send(NocMessage::data(MsgKind::Writeback, from, home, paddr), at);
        let s = slice_of(paddr, self.l3.len());
        let slot = self.l3[s].victim_slot(line);
        if let Some((vline, v)) = self.l3[s].fill(slot, line, L3Line { dirty, data }) {
            self.stats.l3.evictions += 1;
            if v.dirty {
                self.stats.l3.writebacks += 1;
                self.writeback_to_memory(home, vline * LINE_BYTES, &v.data, arrive + self.lat.l3);
            }
        }
    }

    // ------------------------------------------------------------------
    // Functional (zero-time) access, used for setup and oracles

    /// Current coherent value of a line.
    pub fn peek_line(&self, paddr: u64) -> [u8; 64] {
        let line = line_of(paddr);
        if let Some(e) = self.dir.get(&line) {
            if e.sharers != 0 {
                let agent = e.owner.unwrap_or_else(|| e.sharers.trailing_zeros() as usize);
                let c = self.agent_cache(agent);
                return c.meta(c.find(line).expect("directory holder has line")).data;
            }
        }
        let s = slice_of(paddr, self.l3.len());
        if let Some(i) = self.l3[s].find(line) {
            return self.l3[s].meta(i).data;
        }
        self.mem.store.read_line(line * LINE_BYTES)
    }

    pub fn peek(&self, paddr: u64, out: &mut [u8]) {
        let mut done = 0;
        while done < out.len() {
            let a = paddr + done as u64;
            let off = (a % LINE_BYTES) as usize;
            let n = (64 - off).min(out.len() - done);
            let l = self.peek_line(a);
            out[done..done + n].copy_from_slice(&l[off..off + n]);
            done += n;
        }
    }

    pub fn peek_u64(&self, paddr: u64) -> u64 {
        let mut b = [0u8; 8];
        self.peek(paddr, &mut b);
        u64::from_le_bytes(b)
    }

    pub fn peek_u32(&self, paddr: u64) -> u32 {
        let mut b = [0u8; 4];
        self.peek(paddr, &mut b);
        u32::from_le_bytes(b)
    }

    /// Writes into every copy of the affected lines and into memory.
    pub fn poke(&mut self, paddr: u64, data: &[u8]) {
        self.mem.store.write(paddr, data);
        let mut done = 0;
        while done < data.len() {
            let a = paddr + done as u64;
            let line = line_of(a);
            let off = (a % LINE_BYTES) as usize;
            let n = (64 - off).min(data.len() - done);
            let chunk = &data[done..done + n];
            for agent in self.agents().collect::<Vec<_>>() {
                let c = self.agent_cache_mut(agent);
                if let Some(i) = c.find(line) {
                    c.meta_mut(i).data[off..off + n].copy_from_slice(chunk);
                }
            }
            let s = slice_of(a, self.l3.len());
            if let Some(i) = self.l3[s].find(line) {
                self.l3[s].meta_mut(i).data[off..off + n].copy_from_slice(chunk);
            }
            done += n;
        }
    }

    /// Final memory image: every touched page of memory with dirty cached
    /// data folded in.
    pub fn memory_image(&self) -> Vec<(u64, Vec<u8>)> {
        let mut pages: Vec<u64> = self.mem.store.touched_pages();
        for agent in self.agents() {
            pages.extend(self.agent_cache(agent).iter().map(|(l, _)| l * LINE_BYTES / 4096));
        }
        for s in &self.l3 {
            pages.extend(s.iter().map(|(l, _)| l * LINE_BYTES / 4096));
        }
        pages.sort_unstable();
        pages.dedup();
        pages
            .into_iter()
            .map(|p| {
                let mut buf = vec![0u8; 4096];
                self.peek(p * 4096, &mut buf);
                (p, buf)
            })
            .collect()
    }

    // ------------------------------------------------------------------
    // Inspection

    pub fn l2_state(&self, core: usize, paddr: u64) -> Mesi {
        let c = &self.cores[core].l2;
        c.find(line_of(paddr)).map_or(Mesi::Invalid, |i| c.meta(i).state)
    }

    pub fn engine_state(&self, paddr: u64) -> Mesi {
        match &self.engine {
            Some(e) => e.cache.find(line_of(paddr)).map_or(Mesi::Invalid, |i| e.cache.meta(i).state),
            None => Mesi::Invalid,
        }
    }

    pub fn in_l1d(&self, core: usize, paddr: u64) -> bool {
        self.cores[core].l1d.contains(line_of(paddr))
    }

    pub fn in_l3(&self, paddr: u64) -> bool {
        self.l3[slice_of(paddr, self.l3.len())].contains(line_of(paddr))
    }

    pub fn l3_dirty(&self, paddr: u64) -> Option<bool> {
        let s = &self.l3[slice_of(paddr, self.l3.len())];
        s.find(line_of(paddr)).map(|i| s.meta(i).dirty)
    }

    pub fn directory_sharers(&self, paddr: u64) -> u32 {
        self.dir.get(&line_of(paddr)).map_or(0, |e| e.sharers)
    }

    /// Lines currently valid anywhere in the hierarchy.
    pub fn cached_lines(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.dir.iter().filter(|(_, e)| e.sharers != 0).map(|(l, _)| *l).collect();
        for s in &self.l3 {
            v.extend(s.iter().map(|(l, _)| l));
        }
        for c in &self.cores {
            v.extend(c.l1d.iter().map(|(l, _)| l));
            v.extend(c.l1i.iter().map(|(l, _)| l));
            v.extend(c.l2.iter().map(|(l, _)| l));
        }
        if let Some(e) = &self.engine {
            v.extend(e.cache.iter().map(|(l, _)| l));
        }
        v.sort_unstable();
        v.dedup();
        v.into_iter().map(|l| l * LINE_BYTES).collect()
    }

    /// Checks every coherence invariant for one line: single writer,
    /// victim exclusivity, L1 inclusion, directory soundness and copy
    /// agreement.
    pub fn check_line(&self, paddr: u64) -> Result<(), String> {
        let line = line_of(paddr);
        let mut holders = Vec::new();
        for agent in self.agents() {
            let c = self.agent_cache(agent);
            if let Some(i) = c.find(line) {
                let m = c.meta(i);
                if !m.state.is_valid() {
                    return Err(format!("line {paddr:#x}: agent {agent} holds an Invalid tag"));
                }
                holders.push((agent, m.state, m.data));
            }
        }
        for (c, cc) in self.cores.iter().enumerate() {
            if (cc.l1d.contains(line) || cc.l1i.contains(line)) && !cc.l2.contains(line) {
                return Err(format!("line {paddr:#x}: core {c} L1 holds line absent from L2"));
            }
        }
        let owners = holders.iter().filter(|h| h.1.is_owner()).count();
        if owners > 1 || (owners == 1 && holders.len() > 1) {
            return Err(format!("line {paddr:#x}: SWMR violated by holders {:?}", holders.iter().map(|h| (h.0, h.1)).collect::<Vec<_>>()));
        }
        let in_l3 = self.in_l3(paddr);
        if in_l3 && !holders.is_empty() {
            return Err(format!("line {paddr:#x}: valid in L3 and in private cache of agent {}", holders[0].0));
        }
        let e = self.dir.get(&line).copied().unwrap_or_default();
        for h in &holders {
            if e.sharers & (1 << h.0) == 0 {
                return Err(format!("line {paddr:#x}: holder {} missing from directory sharers {:#b}", h.0, e.sharers));
            }
        }
        if let Some(o) = e.owner {
            if e.sharers & (1 << o) == 0 {
                return Err(format!("line {paddr:#x}: directory owner {o} not a sharer"));
            }
        }
        let mem = self.mem.store.read_line(line * LINE_BYTES);
        for h in &holders {
            if h.2 != holders[0].2 {
                return Err(format!("line {paddr:#x}: copies disagree"));
            }
            if h.1 != Mesi::Modified && h.2 != mem {
                return Err(format!("line {paddr:#x}: clean copy at agent {} differs from memory", h.0));
            }
        }
        if in_l3 && self.l3_dirty(paddr) == Some(false) {
            let s = &self.l3[slice_of(paddr, self.l3.len())];
            if s.meta(s.find(line).unwrap()).data != mem {
                return Err(format!("line {paddr:#x}: clean L3 copy differs from memory"));
            }
        }
        Ok(())
    }

    pub fn check_all(&self) -> Result<(), String> {
        for l in self.cached_lines() {
            self.check_line(l)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noc::MeshDescription;

    fn small_params() -> HierarchyParams {
        let mut p = HierarchyParams::defaults(2);
        p.l1d = CacheGeometry::new(1024, 2, 4, 4);
        p.l1i = CacheGeometry::new(1024, 2, 4, 4);
        p.l2 = CacheGeometry::new(2048, 2, 12, 12);
        p.l3_slice = CacheGeometry::new(1024, 2, 8, 8);
        p.engine_cache = Some(CacheGeometry::new(1024, 2, 4, 2));
        p
    }

    fn mem_params() -> MemParams {
        MemParams { channels: 4, fixed_latency: 50_000, channel_gib_per_sec: 4.8, capacity_bytes: 1 << 30 }
    }

    fn build(p: HierarchyParams) -> Hierarchy {
        Hierarchy::new(p, MeshDescription::default_4x3(), 250, 250, mem_params())
    }

    fn read(h: &mut Hierarchy, port: Port, a: u64, t: u64) -> Completion {
        h.access(port, a, AccessKind::Read, None, SimTime(t)).done().expect("no stall")
    }

    fn write(h: &mut Hierarchy, port: Port, a: u64, v: u8, t: u64) -> Completion {
        h.access(port, a, AccessKind::Write, Some(&[v]), SimTime(t)).done().expect("no stall")
    }

    #[test]
    fn l1_hit_latency_is_config_echo() {
        let mut h = build(HierarchyParams::defaults(2));
        let first = read(&mut h, Port::Data(0), 0x1000, 0);
        let t = first.done.0;
        let hit = read(&mut h, Port::Data(0), 0x1008, t);
        assert_eq!(hit.source, Source::L1);
        assert_eq!(hit.done.0 - t, 4 * 250);
    }

    #[test]
    fn l1_miss_l2_hit_latency() {
        let mut p = small_params();
        p.l1d = CacheGeometry::new(128, 1, 4, 4); // 2 sets, direct mapped
        let mut h = build(p);
        let a = 0x0;
        let b = 0x80; // same L1 set, different L2 set
        let t = read(&mut h, Port::Data(0), a, 0).done.0;
        let t = read(&mut h, Port::Data(0), b, t).done.0;
        assert!(!h.in_l1d(0, a));
        let c = read(&mut h, Port::Data(0), a, t);
        assert_eq!(c.source, Source::L2);
        assert_eq!(c.done.0 - t, (4 + 12) * 250);
    }

    #[test]
    fn write_invalidates_other_sharer() {
        let mut h = build(small_params());
        let a = 0x4000;
        read(&mut h, Port::Data(0), a, 0);
        read(&mut h, Port::Data(1), a, 100_000);
        assert_eq!(h.l2_state(0, a), Mesi::Shared);
        assert_eq!(h.l2_state(1, a), Mesi::Shared);
        write(&mut h, Port::Data(0), a, 7, 200_000);
        assert_eq!(h.l2_state(0, a), Mesi::Modified);
        assert_eq!(h.l2_state(1, a), Mesi::Invalid);
        assert!(!h.in_l1d(1, a));
        h.check_line(a).unwrap();
        assert_eq!(read(&mut h, Port::Data(1), a, 300_000).line[0], 7);
        assert_eq!(h.l2_state(0, a), Mesi::Shared);
        assert_eq!(h.l2_state(1, a), Mesi::Shared);
        h.check_all().unwrap();
    }

    #[test]
    fn eviction_moves_line_to_victim_l3() {
        let mut h = build(small_params());
        // L2: 2048 B / 2 ways = 16 sets; lines 0, 16, 32 share set 0
        let lines = [0u64, 16 * 64, 32 * 64];
        let mut t = 0;
        for &a in &lines {
            t = read(&mut h, Port::Data(0), a, t).done.0;
        }
        assert_eq!(h.l2_state(0, lines[0]), Mesi::Invalid);
        assert!(h.in_l3(lines[0]));
        assert_eq!(h.directory_sharers(lines[0]), 0);
        // L3 hit promotes and invalidates in L3
        let c = read(&mut h, Port::Data(1), lines[0], t);
        assert_eq!(c.source, Source::L3);
        assert!(!h.in_l3(lines[0]));
        assert_eq!(h.l2_state(1, lines[0]), Mesi::Exclusive);
        h.check_all().unwrap();
    }

    #[test]
    fn full_l3_set_of_modified_lines_writes_back_once() {
        let mut p = small_params();
        p.l2 = CacheGeometry::new(128, 1, 12, 12); // 2 sets direct mapped
        p.l1d = CacheGeometry::new(128, 1, 4, 4);
        let mut h = build(p);
        // lines mapping to slice 0 and L3 set 0: line numbers multiple of 8*8
        let stride = 64 * 8 * 8;
        let mut t = 0;
        for i in 0..3u64 {
            t = write(&mut h, Port::Data(0), i * stride, i as u8 + 1, t).done.0;
        }
        // two evictions filled the 2-way L3 set with Modified lines
        assert_eq!(h.stats.memory_writebacks, 0);
        t = write(&mut h, Port::Data(0), 3 * stride, 4, t).done.0;
        assert_eq!(h.stats.memory_writebacks, 1);
        assert_eq!(h.mem.store.read_line(0)[0], 1);
        let _ = t;
        h.check_all().unwrap();
    }

    #[test]
    fn engine_read_downgrades_modified_core_copy() {
        let mut h = build(small_params());
        let a = 0x8000;
        write(&mut h, Port::Data(1), a, 9, 0);
        let c = read(&mut h, Port::Engine, a, 100_000);
        assert_eq!(c.source, Source::Peer);
        assert_eq!(c.line[0], 9);
        assert_eq!(h.l2_state(1, a), Mesi::Shared);
        assert_eq!(h.engine_state(a), Mesi::Shared);
        h.check_all().unwrap();
        let w = write(&mut h, Port::Engine, 0x9000, 1, 200_000);
        assert_eq!(w.source, Source::Memory);
        assert_eq!(h.engine_state(0x9000), Mesi::Modified);
    }

    #[test]
    fn remote_l3_hit_pays_two_traversals() {
        let mut h = build(small_params());
        // home slice of line 0 is slice 0 at (0,0), core 1 at (1,0)
        let a = 0;
        let mut t = read(&mut h, Port::Data(0), a, 0).done.0;
        for i in 1..3u64 {
            t = read(&mut h, Port::Data(0), a + i * 16 * 64, t).done.0;
        }
        assert!(h.in_l3(a));
        // line 5 homes at slice 5 = (1,1); core 0 at (0,0) is 2 hops away
        let far = 5 * 64;
        read(&mut h, Port::Data(1), far, t);
        let far_home = h.home_tile(far);
        let hops = h.core_tile(0).manhattan(far_home) as u64;
        assert_eq!(hops, 2);
        let mut t2 = t + 1_000_000;
        for i in 1..3u64 {
            t2 = read(&mut h, Port::Data(1), far + i * 16 * 64, t2).done.0;
        }
        assert!(h.in_l3(far));
        let c = read(&mut h, Port::Data(0), far, t2);
        assert_eq!(c.source, Source::L3);
        let one_way = 250 * (hops + 1) + 250 * hops;
        assert_eq!(c.done.0 - t2, (4 + 12 + 8) * 250 + 2 * one_way);
    }

    #[test]
    fn stride_prefetcher_covers_sequential_scan() {
        let scan = |stride_on: bool| {
            let mut p = HierarchyParams::defaults(1);
            p.stride_l1d = stride_on;
            p.stride_l2 = stride_on;
            let mut h = Hierarchy::new(p, MeshDescription::default_4x3(), 250, 250, mem_params());
            let mut t = SimTime(0);
            let mut covered = 0u64;
            let n = 4096u64;
            for i in 0..n {
                let a = 0x100_0000 + i * 64;
                let c = loop {
                    match h.access_stream(Port::Data(0), a, AccessKind::Read, None, t, 1) {
                        Outcome::Done(c) => break c,
                        Outcome::Stall { retry_at } => t = retry_at,
                    }
                };
                if i >= 64 && matches!(c.source, Source::L1 | Source::L2) {
                    covered += 1;
                }
                t += 250 * 20;
            }
            covered as f64 / (n - 64) as f64
        };
        let with = scan(true);
        let without = scan(false);
        assert!(with >= 0.9, "coverage {with}");
        assert!(without < 0.1, "baseline coverage {without}");
    }

    #[test]
    fn mshr_exhaustion_stalls() {
        let mut p = small_params();
        p.l1d_mshrs = 2;
        let mut h = build(p);
        assert!(h.access(Port::Data(0), 0x10000, AccessKind::Read, None, SimTime(0)).done().is_some());
        assert!(h.access(Port::Data(0), 0x20000, AccessKind::Read, None, SimTime(0)).done().is_some());
        match h.access(Port::Data(0), 0x30000, AccessKind::Read, None, SimTime(0)) {
            Outcome::Stall { retry_at } => assert!(retry_at > SimTime(0)),
            _ => panic!("expected stall"),
        }
        // hit-under-fill on an in-flight line does not need an MSHR
        assert!(h.access(Port::Data(0), 0x10008, AccessKind::Read, None, SimTime(0)).done().is_some());
    }

    #[test]
    fn poke_updates_all_copies() {
        let mut h = build(small_params());
        read(&mut h, Port::Data(0), 0x40, 0);
        read(&mut h, Port::Data(1), 0x40, 100_000);
        h.poke(0x44, &[1, 2, 3]);
        assert_eq!(h.peek_u32(0x44), 0x030201);
        h.check_all().unwrap();
        assert_eq!(read(&mut h, Port::Data(0), 0x40, 200_000).line[4..7], [1, 2, 3]);
    }

    mod fuzz {
        use super::*;
        use proptest::prelude::*;
        use std::collections::HashMap;

        fn op() -> impl Strategy<Value = (u8, u64, bool, u8)> {
            // port (0..3: core0, core1, engine), line (small pool to force conflicts), write?, value
            (0u8..3, 0u64..48, any::<bool>(), any::<u8>())
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn coherent_against_flat_memory(ops in proptest::collection::vec(op(), 1..300)) {
                let mut h = build(small_params());
                let mut oracle: HashMap<u64, u8> = HashMap::new();
                let mut t = SimTime(0);
                for (port, l, w, v) in ops {
                    let port = match port { 0 => Port::Data(0), 1 => Port::Data(1), _ => Port::Engine };
                    // spread lines across sets and slices
                    let a = l * 64 * 3 + (l % 7);
                    let out = if w {
                        h.access(port, a, AccessKind::Write, Some(&[v]), t)
                    } else {
                        h.access(port, a, AccessKind::Read, None, t)
                    };
                    match out {
                        Outcome::Done(c) => {
                            if w {
                                oracle.insert(a, v);
                            } else {
                                prop_assert_eq!(c.line[(a % 64) as usize], *oracle.get(&a).unwrap_or(&0));
                            }
                            t += 250;
                        }
                        Outcome::Stall { retry_at } => t = retry_at,
                    }
                    if let Err(e) = h.check_all() {
                        return Err(TestCaseError::fail(e));
                    }
                }
                for (a, v) in oracle {
                    prop_assert_eq!(h.peek_line(a)[(a % 64) as usize], v);
                }
            }
        }
    }
}
