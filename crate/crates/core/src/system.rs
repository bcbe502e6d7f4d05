//! A complete simulated machine built from a [`RunConfig`]: the cache
//! hierarchy, one address space, the cores, the optional engine, and the
//! event loop tying their clocks together.

use std::cell::RefCell;
use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use std::rc::Rc;

use crate::accel::HintTrace;
use crate::config::{RunConfig, WorkloadKind};
use crate::cpu::{Core, CoreCtx, UcKind, UcRequest};
use crate::engine::{Accel, Driver, DriverInit, Engine, SetupOutcome, DOORBELL_OFFSET};
use crate::error::{SetupError, SimError};
use crate::cache::Hierarchy;
use crate::kernel::{ClockDomain, EventQueue, SimTime};
use crate::vmem::{AddressSpace, PageSize};
use crate::workload::{
    BfsLayout, BfsSource, BfsStreamInfo, CsrGraph, QsortLayout, QsortMode, QsortOffloadSource, QsortSoftwareSource,
    QsortStreamInfo, HEAP_BASE,
};
use crate::{LINE_BYTES, PAGE_2M};

/// Physical range holding page tables.
pub const TABLE_RANGE: (u64, u64) = (16 << 20, 64 << 20);
/// First physical byte handed out as a data frame.
pub const DATA_START: u64 = 64 << 20;

#[derive(Debug, Clone)]
enum Ev {
    Core(usize),
    Engine,
    UcArrive(UcRequest),
    UcResponse { core: usize, seq: u64, value: u64 },
}

/// Workload-specific state the report needs after the run.
pub enum WorkloadState {
    Bfs {
        graph: Rc<CsrGraph>,
        layout: BfsLayout,
        sources: [u32; 2],
        hinted: bool,
        info: Rc<RefCell<BfsStreamInfo>>,
    },
    Qsort {
        keys: Vec<u32>,
        layout: QsortLayout,
        offloaded: bool,
        info: Rc<RefCell<QsortStreamInfo>>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemStats {
    pub events: u64,
    /// Delivery attempts that found the engine queue full.
    pub forwarder_holds: u64,
}

pub struct System {
    pub cfg: RunConfig,
    pub hier: Hierarchy,
    pub space: AddressSpace,
    pub cores: Vec<Core>,
    pub engine: Option<Engine>,
    pub workload: WorkloadState,
    /// Last demand access time per physical line.
    pub demand: HashMap<u64, SimTime>,
    core_clock: ClockDomain,
    engine_clock: ClockDomain,
    queue: EventQueue<Ev>,
    core_pending: Vec<Option<SimTime>>,
    engine_pending: Option<SimTime>,
    core_last: Vec<Option<SimTime>>,
    engine_last: Option<SimTime>,
    uc_out: Vec<UcRequest>,
    /// Per-core forwarder FIFOs of requests awaiting delivery.
    held: Vec<VecDeque<UcRequest>>,
    pub stats: SystemStats,
}

impl System {
    pub fn build(cfg: &RunConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let mesh = cfg.mesh()?;
        let core_period = cfg.core_period();
        let engine_period = cfg.engine_period();
        let mut hier = Hierarchy::new(
            cfg.hierarchy_params(),
            mesh,
            cfg.mesh.router_cycles * core_period,
            cfg.mesh.link_cycles * core_period,
            cfg.mem_params(),
        );
        let mut space = AddressSpace::new(&mut hier, TABLE_RANGE, (DATA_START, cfg.memory.capacity_bytes))?;
        let mut cores: Vec<Core> = (0..cfg.system.cores).map(|c| Core::new(c, cfg.core, core_period)).collect();
        let mut engine = cfg.engine.enabled.then(|| {
            let mut e = Engine::new(cfg.engine, cfg.system.cores, engine_period);
            if let Accel::Dapf(d) = &mut e.accel {
                d.enable_trace();
            }
            e
        });
        let mc = cfg.system.measured_core;
        let uc_vaddr = Driver::uc_page_vaddr(mc);
        let penalty = cfg.workload.branch_penalty;

        let workload = match cfg.workload.kind {
            WorkloadKind::Bfs => {
                let b = &cfg.workload.bfs;
                let graph = Rc::new(b.graph.build()?);
                let layout = BfsLayout::new(&graph, HEAP_BASE);
                map_heap(&mut space, &mut hier, layout.heap_len())?;
                for (vaddr, bytes) in layout.image(&graph) {
                    poke_virtual(&space, &mut hier, vaddr, &bytes);
                }
                let sources = b.sources.unwrap_or_else(|| top_two_by_degree(&graph));
                let init = DriverInit { dig: Some(layout.dig(b.k)) };
                let out = Driver::setup(engine.as_mut(), &mut cores[mc], &mut space, &mut hier, uc_vaddr, init)?;
                let hint = match out {
                    SetupOutcome::Uc(v) => Some((b.k, v)),
                    SetupOutcome::Fallback => None,
                };
                let src = BfsSource::new(graph.clone(), layout, sources, hint, penalty)?;
                let info = src.info();
                cores[mc].set_source(Box::new(src));
                WorkloadState::Bfs { graph, layout, sources, hinted: hint.is_some(), info }
            }
            WorkloadKind::Qsort => {
                let q = &cfg.workload.qsort;
                let keys = q.pattern.generate(q.n as usize, cfg.seed);
                let layout = QsortLayout::new(q.n);
                map_heap(&mut space, &mut hier, layout.heap_len())?;
                let bytes: Vec<u8> = keys.iter().flat_map(|k| k.to_le_bytes()).collect();
                poke_virtual(&space, &mut hier, layout.base, &bytes);
                let out = if q.mode == QsortMode::Offload {
                    Driver::setup(engine.as_mut(), &mut cores[mc], &mut space, &mut hier, uc_vaddr, DriverInit::default())?
                } else {
                    SetupOutcome::Fallback
                };
                let (info, offloaded) = match out {
                    SetupOutcome::Uc(v) => {
                        let src = QsortOffloadSource::new(layout, v, &keys);
                        let info = src.info();
                        cores[mc].set_source(Box::new(src));
                        (info, true)
                    }
                    SetupOutcome::Fallback => {
                        let src = QsortSoftwareSource::new(keys.clone(), layout, cfg.engine.qsort_cutoff, penalty);
                        let info = src.info();
                        cores[mc].set_source(Box::new(src));
                        (info, false)
                    }
                };
                WorkloadState::Qsort { keys, layout, offloaded, info }
            }
        };

        let mut queue = EventQueue::new();
        let mut core_pending = vec![None; cores.len()];
        for (c, core) in cores.iter().enumerate() {
            if !core.is_idle() {
                queue.schedule(SimTime::ZERO, Ev::Core(c));
                core_pending[c] = Some(SimTime::ZERO);
            }
        }
        Ok(System {
            cfg: cfg.clone(),
            hier,
            space,
            cores,
            engine,
            workload,
            demand: HashMap::new(),
            core_clock: ClockDomain::from_mhz(cfg.clocks.core_mhz),
            engine_clock: ClockDomain::from_mhz(cfg.clocks.engine_mhz),
            queue,
            core_pending,
            engine_pending: None,
            core_last: vec![None; cfg.system.cores],
            engine_last: None,
            uc_out: Vec::new(),
            held: vec![VecDeque::new(); cfg.system.cores],
            stats: SystemStats::default(),
        })
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    fn wake_core(&mut self, c: usize, at: SimTime) {
        let mut t = self.core_clock.at_or_after(at);
        if let Some(last) = self.core_last[c] {
            t = t.max(last + self.core_clock.period());
        }
        if self.core_pending[c].is_none_or(|p| t < p) {
            self.core_pending[c] = Some(t);
            self.queue.schedule(t, Ev::Core(c));
        }
    }

    fn wake_engine(&mut self, at: SimTime) {
        let mut t = self.engine_clock.at_or_after(at);
        if let Some(last) = self.engine_last {
            t = t.max(last + self.engine_clock.period());
        }
        if self.engine_pending.is_none_or(|p| t < p) {
            self.engine_pending = Some(t);
            self.queue.schedule(t, Ev::Engine);
        }
    }

    /// Runs until every event drains. Assertion failures abort with a
    /// dump of the machine state.
    pub fn run(&mut self) -> Result<(), SimError> {
        let limit = SimTime(self.cfg.system.max_cycles.saturating_mul(self.core_clock.period()));
        while let Some(ev) = self.queue.pop() {
            let now = ev.fire_time;
            if now > limit {
                return Err(self.abort(format!("cycle limit of {} core cycles reached", self.cfg.system.max_cycles)));
            }
            self.stats.events += 1;
            self.hier.noc.advance(now);
            match ev.payload {
                Ev::Core(c) => {
                    if self.core_pending[c] != Some(now) {
                        continue;
                    }
                    self.core_pending[c] = None;
                    self.core_last[c] = Some(now);
                    let root = self.space.root();
                    let mut ctx = CoreCtx {
                        hier: &mut self.hier,
                        root,
                        uc_out: &mut self.uc_out,
                        demand: Some(&mut self.demand),
                    };
                    let next = self.cores[c].tick(now, &mut ctx).map_err(|f| self.abort(f.to_string()))?;
                    if let Some(msg) = self.cores[c].stats.first_error.clone() {
                        return Err(self.abort(msg));
                    }
                    for req in std::mem::take(&mut self.uc_out) {
                        self.queue.schedule(req.arrive, Ev::UcArrive(req));
                    }
                    if let Some(t) = next {
                        self.wake_core(c, t);
                    }
                }
                Ev::Engine => {
                    if self.engine_pending != Some(now) {
                        continue;
                    }
                    self.engine_pending = None;
                    self.engine_last = Some(now);
                    let root = self.space.root();
                    let engine = self.engine.as_mut().expect("engine events need an engine");
                    if engine.tick(now, &mut self.hier, root) {
                        self.wake_engine(now + self.engine_clock.period());
                    }
                    for c in 0..self.held.len() {
                        self.drain_forwarder(c, now);
                    }
                }
                Ev::UcArrive(req) => {
                    if self.engine.is_none() {
                        return Err(self.abort(format!("UC request from core {} with no engine", req.core)));
                    }
                    let c = req.core;
                    self.held[c].push_back(req);
                    self.drain_forwarder(c, now);
                }
                Ev::UcResponse { core, seq, value } => {
                    self.cores[core].uc_response(seq, value, now);
                    self.wake_core(core, now);
                }
            }
        }
        for c in &self.cores {
            if !c.is_idle() && c.stats.finish.is_none() {
                return Err(self.abort(format!("core {} stalled with work outstanding", c.id)));
            }
        }
        Ok(())
    }

    /// Delivers core `c`'s forwarded UC requests in order. A doorbell store
    /// finding the engine queue full stays at the forwarder, and so does
    /// everything behind it.
    fn drain_forwarder(&mut self, c: usize, now: SimTime) {
        let engine = self.engine.as_mut().expect("forwarding needs an engine");
        let (mut wake_engine, mut wake_core) = (false, false);
        while let Some(req) = self.held[c].front() {
            match req.kind {
                UcKind::Store => {
                    let full = engine.queue_len(c) >= engine.params().queue_depth;
                    if req.offset == DOORBELL_OFFSET && full {
                        self.stats.forwarder_holds += 1;
                        break;
                    }
                    let req = self.held[c].pop_front().expect("front exists");
                    engine.on_uc_store(c, req.seq, req.offset, &req.payload, now);
                    self.cores[c].uc_accepted(req.seq);
                    wake_engine |= engine.has_work();
                    wake_core = true;
                }
                UcKind::Load => {
                    let req = self.held[c].pop_front().expect("front exists");
                    let value = engine.on_uc_load(c, req.seq, req.offset, now);
                    let back = now + self.cores[c].params().uc_forward_cycles * self.core_clock.period();
                    self.queue.schedule(back, Ev::UcResponse { core: c, seq: req.seq, value });
                }
            }
        }
        if wake_engine {
            self.wake_engine(now);
        }
        if wake_core {
            self.wake_core(c, now);
        }
    }

    fn abort(&self, msg: String) -> SimError {
        let mut dump = format!("{msg}\n  at {} ({} events)", self.queue.now(), self.stats.events);
        for c in &self.cores {
            dump.push_str(&format!(
                "\n  core {}: retired {} loads {} stores {} uc {}/{} finish {:?}",
                c.id, c.stats.retired, c.stats.loads, c.stats.stores, c.stats.uc_stores, c.stats.uc_loads, c.stats.finish
            ));
        }
        if let Some(e) = &self.engine {
            dump.push_str(&format!("\n  engine: {:?} busy {}", e.stats, e.has_work()));
        }
        SimError::Assertion(dump)
    }

    pub fn measured_core(&self) -> &Core {
        &self.cores[self.cfg.system.measured_core]
    }

    /// Reads `len` bytes of simulated virtual memory.
    pub fn read_virtual(&self, vaddr: u64, len: usize) -> Vec<u8> {
        let mut out = vec![0u8; len];
        let mut done = 0;
        while done < len {
            let va = vaddr + done as u64;
            let pa = self.space.translate(&self.hier, va).expect("mapped").0;
            let n = ((LINE_BYTES - va % LINE_BYTES) as usize).min(len - done);
            self.hier.peek(pa, &mut out[done..done + n]);
            done += n;
        }
        out
    }

    pub fn read_u32s(&self, vaddr: u64, n: usize) -> Vec<u32> {
        self.read_virtual(vaddr, 4 * n).chunks(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect()
    }

    /// Hint traces recorded by the prefetcher, if any.
    pub fn hint_traces(&self) -> &[HintTrace] {
        match self.engine.as_ref().map(|e| &e.accel) {
            Some(Accel::Dapf(d)) => d.traces.as_deref().unwrap_or(&[]),
            _ => &[],
        }
    }
}

fn map_heap(space: &mut AddressSpace, hier: &mut Hierarchy, len: u64) -> Result<(), SetupError> {
    let ps = if len.is_multiple_of(PAGE_2M) { PageSize::Huge } else { PageSize::Small };
    space.map_region(hier, HEAP_BASE, len, ps)?;
    Ok(())
}

fn poke_virtual(space: &AddressSpace, hier: &mut Hierarchy, vaddr: u64, bytes: &[u8]) {
    let region = space.region_of(vaddr).expect("image inside the heap");
    let ps = region.page_size.bytes();
    let mut done = 0;
    while done < bytes.len() {
        let va = vaddr + done as u64;
        let n = ((ps - va % ps) as usize).min(bytes.len() - done);
        hier.poke(region.translate(va), &bytes[done..done + n]);
        done += n;
    }
}

/// The two highest-degree nodes, lower id first on ties.
pub fn top_two_by_degree(g: &CsrGraph) -> [u32; 2] {
    let mut ids: Vec<u32> = (0..g.num_nodes()).collect();
    ids.sort_by_key(|&u| (std::cmp::Reverse(g.degree(u)), u));
    [ids[0], *ids.get(1).unwrap_or(&ids[0])]
}
