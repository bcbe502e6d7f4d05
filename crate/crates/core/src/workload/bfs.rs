//! Top-down BFS with a sliding work queue, as the core runs it.
//!
//! Arrays live in the simulated heap: a metadata line holding the end of
//! the current level, the work queue, CSR offsets, the neighbor list and
//! the parent array (which doubles as the visited array). A run BFSes from
//! a warm-up source, resets the parent array, then BFSes from the measured
//! source between region markers.

use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::{heap_len, CsrGraph, Emitter};
use crate::accel::DigDescriptor;
use crate::cpu::{Fetch, MicroOp, OpKind, OpSource};
use crate::engine::{OffloadCommand, DOORBELL_OFFSET, OP_HINT};
use crate::error::SetupError;
use crate::{PAGE_4K};

pub const UNVISITED: u32 = u32::MAX;

/// Micro-ops added per hinted node: meta load, branch, six computes that
/// build the command, and the UC store.
pub const HINT_OPS: u64 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BfsLayout {
    pub meta: u64,
    pub queue: u64,
    pub offsets: u64,
    pub neighbors: u64,
    pub parent: u64,
    pub end: u64,
}

impl BfsLayout {
    pub fn new(g: &CsrGraph, base: u64) -> Self {
        let n = g.num_nodes() as u64;
        let align = |x: u64| x.div_ceil(PAGE_4K) * PAGE_4K;
        let meta = base;
        let queue = align(meta + 64);
        let offsets = align(queue + 4 * n.max(1));
        let neighbors = align(offsets + 4 * (n + 1));
        let parent = align(neighbors + 4 * (g.neighbor_array().len() as u64).max(1));
        let end = align(parent + 4 * n.max(1));
        BfsLayout { meta, queue, offsets, neighbors, parent, end }
    }

    pub fn footprint(&self) -> u64 {
        self.end - self.meta
    }

    /// Length of the mapped heap region.
    pub fn heap_len(&self) -> u64 {
        heap_len(self.footprint())
    }

    pub fn dig(&self, k: u64) -> DigDescriptor {
        DigDescriptor::bfs(self.queue, self.offsets, self.neighbors, self.parent, 4, k)
    }

    /// Initial memory contents as (vaddr, bytes) pairs.
    pub fn image(&self, g: &CsrGraph) -> Vec<(u64, Vec<u8>)> {
        let le = |xs: &[u32]| xs.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>();
        vec![
            (self.offsets, le(g.offsets())),
            (self.neighbors, le(g.neighbor_array())),
            (self.parent, le(&vec![UNVISITED; g.num_nodes() as usize])),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BfsResult {
    pub parent: Vec<u32>,
    /// Visit order; equals the final work-queue contents.
    pub order: Vec<u32>,
    /// Exclusive queue index ending each level.
    pub level_ends: Vec<usize>,
}

impl BfsResult {
    /// Level end in force while queue entry `i` is processed.
    pub fn level_end_of(&self, i: usize) -> usize {
        let l = self.level_ends.partition_point(|&e| e <= i);
        self.level_ends[l]
    }
}

pub fn bfs_reference(g: &CsrGraph, source: u32) -> Result<BfsResult, SetupError> {
    let n = g.num_nodes();
    if source >= n {
        return Err(SetupError::BadSource { source_node: source, nodes: n });
    }
    let mut parent = vec![UNVISITED; n as usize];
    let mut order = vec![source];
    let mut level_ends = Vec::new();
    parent[source as usize] = source;
    let mut i = 0;
    while i < order.len() {
        let end = order.len();
        level_ends.push(end);
        while i < end {
            let u = order[i];
            for &v in g.neighbors(u) {
                if parent[v as usize] == UNVISITED {
                    parent[v as usize] = u;
                    order.push(v);
                }
            }
            i += 1;
        }
    }
    Ok(BfsResult { parent, order, level_ends })
}

/// Queue indices whose processing sends a hint at distance `k`: those with
/// at least `k` nodes of the current level ahead of them.
pub fn hint_eligible(r: &BfsResult, k: u64) -> Vec<u64> {
    (0..r.order.len()).filter(|&i| (i as u64 + k) < r.level_end_of(i) as u64).map(|i| i as u64).collect()
}

/// Counters a BFS stream exposes to the harness.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BfsStreamInfo {
    /// Sequence number of the region-begin marker.
    pub region_begin_seq: Option<u64>,
    pub hints: [u64; 2],
    pub visited: [u64; 2],
    pub ops: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Warm,
    Reset,
    Measured,
    Done,
}

struct Run {
    queue: Vec<u32>,
    i: usize,
    level_end: usize,
}

pub struct BfsSource {
    g: Rc<CsrGraph>,
    layout: BfsLayout,
    hint: Option<(u64, u64)>,
    sources: [u32; 2],
    stage: Stage,
    em: Emitter,
    run: Option<Run>,
    parent: Vec<u32>,
    queue_mem: Vec<u32>,
    meta: u32,
    info: Rc<RefCell<BfsStreamInfo>>,
}

impl BfsSource {
    /// `hint` is `(K, uc page vaddr)` for the hinted variant.
    pub fn new(
        g: Rc<CsrGraph>,
        layout: BfsLayout,
        sources: [u32; 2],
        hint: Option<(u64, u64)>,
        branch_penalty: u32,
    ) -> Result<Self, SetupError> {
        for s in sources {
            if s >= g.num_nodes() {
                return Err(SetupError::BadSource { source_node: s, nodes: g.num_nodes() });
            }
        }
        let n = g.num_nodes() as usize;
        Ok(BfsSource {
            layout,
            hint,
            sources,
            stage: Stage::Warm,
            em: Emitter::new(branch_penalty),
            run: None,
            parent: vec![UNVISITED; n],
            queue_mem: vec![0; n],
            meta: 0,
            info: Rc::new(RefCell::new(BfsStreamInfo::default())),
            g,
        })
    }

    pub fn info(&self) -> Rc<RefCell<BfsStreamInfo>> {
        self.info.clone()
    }

    fn run_index(&self) -> usize {
        usize::from(self.stage == Stage::Measured)
    }

    fn store_u32(&mut self, vaddr: u64, v: u32, dep: Option<u64>) -> u64 {
        self.em.push(MicroOp::store(vaddr, 4, v as u64).dep_opt(dep))
    }

    fn start_run(&mut self, source: u32) {
        let l = self.layout;
        self.queue_mem[0] = source;
        self.store_u32(l.queue, source, None);
        self.parent[source as usize] = source;
        self.store_u32(l.parent + 4 * source as u64, source, None);
        self.meta = 1;
        self.store_u32(l.meta, 1, None);
        self.run = Some(Run { queue: vec![source], i: 0, level_end: 1 });
    }

    /// Emits the ops for one queue entry. False when the run is over.
    fn step(&mut self) -> bool {
        let l = self.layout;
        let Some(mut run) = self.run.take() else { return false };
        if run.i >= run.queue.len() {
            return false;
        }
        if run.i == run.level_end {
            run.level_end = run.queue.len();
            self.meta = run.level_end as u32;
            self.store_u32(l.meta, self.meta, None);
        }
        let i = run.i;
        let u = run.queue[i];
        let q = self.em.push(MicroOp::load(l.queue + 4 * i as u64, 4).expect(self.queue_mem[i] as u64));
        debug_assert_eq!(self.queue_mem[i], u);
        let r = self.run_index();
        self.info.borrow_mut().visited[r] += 1;
        if let Some((k, uc)) = self.hint {
            if (i as u64 + k) < run.level_end as u64 {
                let m = self.em.push(MicroOp::load(l.meta, 4).expect(self.meta as u64));
                let mut last = self.em.branch(m, false);
                for _ in 0..6 {
                    last = self.em.push(MicroOp::compute(1).dep(last));
                }
                let cmd = OffloadCommand::new(OP_HINT, &[i as u64]);
                self.em.push(MicroOp::uc_store(uc + DOORBELL_OFFSET, cmd.encode()).dep(last));
                self.info.borrow_mut().hints[r] += 1;
            }
        }
        let (lo, hi) = (self.g.offsets()[u as usize], self.g.offsets()[u as usize + 1]);
        let o1 = self.em.push(MicroOp::load(l.offsets + 4 * u as u64, 4).dep(q).expect(lo as u64));
        let o2 = self.em.push(MicroOp::load(l.offsets + 4 * (u as u64 + 1), 4).dep(q).expect(hi as u64));
        for e in lo..hi {
            let v = self.g.neighbor_array()[e as usize];
            let nv = self.em.push(MicroOp::load(l.neighbors + 4 * e as u64, 4).dep(o1).expect(v as u64));
            let pa = l.parent + 4 * v as u64;
            let pl = self.em.push(MicroOp::load(pa, 4).dep(nv).expect(self.parent[v as usize] as u64));
            let br = self.em.branch(pl, false);
            if self.parent[v as usize] == UNVISITED {
                self.parent[v as usize] = u;
                self.store_u32(pa, u, Some(br));
                let tail = run.queue.len();
                self.queue_mem[tail] = v;
                self.store_u32(l.queue + 4 * tail as u64, v, Some(br));
                run.queue.push(v);
            }
        }
        // neighbor loop exit
        self.em.branch(o2, true);
        run.i += 1;
        self.run = Some(run);
        true
    }

    fn advance(&mut self) {
        match self.stage {
            Stage::Warm => {
                if self.run.is_none() {
                    self.start_run(self.sources[0]);
                } else if !self.step() {
                    self.run = None;
                    self.stage = Stage::Reset;
                }
            }
            Stage::Reset => {
                let l = self.layout;
                for v in 0..self.parent.len() {
                    self.parent[v] = UNVISITED;
                    self.em.push(MicroOp::store(l.parent + 4 * v as u64, 4, UNVISITED as u64));
                }
                self.info.borrow_mut().region_begin_seq = Some(self.em.next_seq());
                self.em.push(MicroOp::marker(OpKind::RegionBegin));
                self.stage = Stage::Measured;
            }
            Stage::Measured => {
                if self.run.is_none() {
                    self.start_run(self.sources[1]);
                } else if !self.step() {
                    self.run = None;
                    self.em.push(MicroOp::marker(OpKind::RegionEnd));
                    self.stage = Stage::Done;
                }
            }
            Stage::Done => {}
        }
    }
}

impl OpSource for BfsSource {
    fn next(&mut self) -> Fetch {
        loop {
            if let Some(op) = self.em.pop() {
                self.info.borrow_mut().ops += 1;
                return Fetch::Op(op);
            }
            if self.stage == Stage::Done {
                return Fetch::Finished;
            }
            self.advance();
        }
    }
}
