//! Data-aware prefetcher driven by a data indirection graph (DIG).
//!
//! A hint carries the work-queue index `i` of the node a core is visiting.
//! The prefetcher reads `queue[i + K]`, follows the DIG edges from there and
//! fetches every line the chain touches into the engine cache. Each line is
//! read at most once per hint; values feeding the next level become usable
//! when the read that produced them completes.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::cache::Hierarchy;
use crate::engine::{engine_mem, EngineOp, MemResult};
use crate::error::ConfigError;
use crate::kernel::SimTime;
use crate::vmem::Mmu;
use crate::LINE_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DigNodeKind {
    Queue,
    RangeArray,
    EdgeArray,
    ValueArray,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigNode {
    pub base: u64,
    pub elem_size: u32,
    pub kind: DigNodeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DigRelation {
    /// Each value read at the source indexes the destination.
    IndexByValue,
    /// Each `[lo, hi)` pair read at a range source selects a span of the
    /// destination.
    RangePair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigEdge {
    pub src: usize,
    pub dst: usize,
    pub relation: DigRelation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigDescriptor {
    pub nodes: Vec<DigNode>,
    pub edges: Vec<DigEdge>,
    /// Prefetch distance K in work-queue entries.
    pub distance: u64,
}

impl DigDescriptor {
    /// The BFS chain: work queue -> neighbor ranges -> neighbor list -> visited.
    pub fn bfs(queue: u64, offsets: u64, neighbors: u64, visited: u64, elem_size: u32, distance: u64) -> Self {
        let node = |base, kind| DigNode { base, elem_size, kind };
        DigDescriptor {
            nodes: vec![
                node(queue, DigNodeKind::Queue),
                node(offsets, DigNodeKind::RangeArray),
                node(neighbors, DigNodeKind::EdgeArray),
                node(visited, DigNodeKind::ValueArray),
            ],
            edges: vec![
                DigEdge { src: 0, dst: 1, relation: DigRelation::IndexByValue },
                DigEdge { src: 1, dst: 2, relation: DigRelation::RangePair },
                DigEdge { src: 2, dst: 3, relation: DigRelation::IndexByValue },
            ],
            distance,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.nodes.len();
        if self.nodes.iter().filter(|x| x.kind == DigNodeKind::Queue).count() != 1 {
            return Err(ConfigError::Invalid("DIG needs exactly one queue node".into()));
        }
        for node in &self.nodes {
            if !matches!(node.elem_size, 1 | 2 | 4 | 8) {
                return Err(ConfigError::Invalid(format!("DIG element size {} unsupported", node.elem_size)));
            }
        }
        for e in &self.edges {
            if e.src >= n || e.dst >= n {
                return Err(ConfigError::Invalid("DIG edge references a missing node".into()));
            }
            let range_src = self.nodes[e.src].kind == DigNodeKind::RangeArray;
            if range_src != (e.relation == DigRelation::RangePair) {
                return Err(ConfigError::Invalid("range-pair edges must leave range arrays".into()));
            }
        }
        // acyclic: repeatedly strip nodes without incoming edges
        let mut indeg = vec![0; n];
        for e in &self.edges {
            indeg[e.dst] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(v) = ready.pop() {
            seen += 1;
            for e in self.edges.iter().filter(|e| e.src == v) {
                indeg[e.dst] -= 1;
                if indeg[e.dst] == 0 {
                    ready.push(e.dst);
                }
            }
        }
        if seen != n {
            return Err(ConfigError::Invalid("DIG has a cycle".into()));
        }
        Ok(())
    }

    pub fn trigger(&self) -> usize {
        self.nodes.iter().position(|n| n.kind == DigNodeKind::Queue).expect("validated DIG")
    }

    pub fn elem_vaddr(&self, node: usize, index: u64) -> u64 {
        self.nodes[node].base + index * self.nodes[node].elem_size as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DapfParams {
    pub reads_per_cycle: usize,
    pub max_pending: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DapfStats {
    pub hints: u64,
    pub reads: u64,
    pub merged: u64,
    pub dropped: u64,
    pub stalls: u64,
}

/// Lines fetched on behalf of one hint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HintTrace {
    pub index: u64,
    /// Caller-supplied tag, the sequence number of the hinting UC store.
    pub tag: u64,
    pub issued_at: Vec<(u64, SimTime)>,
}

impl HintTrace {
    pub fn lines(&self) -> BTreeSet<u64> {
        self.issued_at.iter().map(|(l, _)| *l).collect()
    }
}

#[derive(Debug, Clone)]
struct Item {
    node: usize,
    index: u64,
    parts_left: u8,
    vals: [u64; 2],
    ready: SimTime,
}

#[derive(Debug, Clone)]
enum LineState {
    Pending(usize),
    Issued { done: SimTime, data: [u8; 64] },
    Dropped,
}

#[derive(Debug)]
struct HintState {
    trace: Option<usize>,
    items: Vec<Item>,
    lines: HashMap<u64, LineState>,
    outstanding: usize,
}

#[derive(Debug)]
struct LineReq {
    hint: u64,
    line: u64,
    parts: Vec<(usize, u8)>,
    not_before: SimTime,
}

pub struct Dapf {
    params: DapfParams,
    dig: Option<DigDescriptor>,
    hints: HashMap<u64, HintState>,
    next_hint: u64,
    fifo: VecDeque<usize>,
    slab: Vec<Option<LineReq>>,
    free: Vec<usize>,
    pub traces: Option<Vec<HintTrace>>,
    pub stats: DapfStats,
}

impl Dapf {
    pub fn new(params: DapfParams) -> Self {
        Dapf {
            params,
            dig: None,
            hints: HashMap::new(),
            next_hint: 0,
            fifo: VecDeque::new(),
            slab: Vec::new(),
            free: Vec::new(),
            traces: None,
            stats: DapfStats::default(),
        }
    }

    pub fn enable_trace(&mut self) {
        self.traces = Some(Vec::new());
    }

    pub fn busy(&self) -> bool {
        !self.fifo.is_empty()
    }

    pub fn can_accept(&self) -> bool {
        self.fifo.len() < self.params.max_pending
    }

    pub fn on_hint(&mut self, dig: &DigDescriptor, index: u64, tag: u64) {
        if self.dig.as_ref() != Some(dig) {
            self.dig = Some(dig.clone());
        }
        self.stats.hints += 1;
        let id = self.next_hint;
        self.next_hint += 1;
        let trace = self.traces.as_mut().map(|t| {
            t.push(HintTrace { index, tag, issued_at: Vec::new() });
            t.len() - 1
        });
        self.hints.insert(id, HintState { trace, items: Vec::new(), lines: HashMap::new(), outstanding: 0 });
        let trigger = dig.trigger();
        self.add_item(id, trigger, index + dig.distance, SimTime::ZERO);
    }

    fn add_item(&mut self, hint: u64, node: usize, index: u64, ready: SimTime) {
        let dig = self.dig.as_ref().expect("dig installed");
        let range = dig.nodes[node].kind == DigNodeKind::RangeArray;
        let parts: u8 = if range { 2 } else { 1 };
        let addrs: Vec<u64> = (0..parts as u64).map(|p| dig.elem_vaddr(node, index + p)).collect();
        let h = self.hints.get_mut(&hint).expect("live hint");
        let item = h.items.len();
        h.items.push(Item { node, index, parts_left: parts, vals: [0; 2], ready });
        for (p, a) in addrs.into_iter().enumerate() {
            self.add_part(hint, item, p as u8, a / LINE_BYTES * LINE_BYTES, ready);
        }
    }

    fn add_part(&mut self, hint: u64, item: usize, part: u8, line: u64, ready: SimTime) {
        let h = self.hints.get_mut(&hint).expect("live hint");
        match h.lines.get(&line).cloned() {
            Some(LineState::Pending(slot)) => {
                self.stats.merged += 1;
                self.slab[slot].as_mut().expect("pending slot").parts.push((item, part));
            }
            Some(LineState::Issued { done, data }) => {
                self.stats.merged += 1;
                self.resolve(hint, item, part, done, &data);
            }
            Some(LineState::Dropped) => {}
            None => {
                let req = LineReq { hint, line, parts: vec![(item, part)], not_before: ready };
                let slot = match self.free.pop() {
                    Some(s) => {
                        self.slab[s] = Some(req);
                        s
                    }
                    None => {
                        self.slab.push(Some(req));
                        self.slab.len() - 1
                    }
                };
                h.lines.insert(line, LineState::Pending(slot));
                h.outstanding += 1;
                self.fifo.push_back(slot);
            }
        }
    }

    fn resolve(&mut self, hint: u64, item: usize, part: u8, done: SimTime, data: &[u8; 64]) {
        let dig = self.dig.as_ref().expect("dig installed");
        let h = self.hints.get_mut(&hint).expect("live hint");
        let it = &mut h.items[item];
        let node = dig.nodes[it.node];
        let addr = dig.elem_vaddr(it.node, it.index + part as u64);
        let off = (addr % LINE_BYTES) as usize;
        let mut b = [0u8; 8];
        b[..node.elem_size as usize].copy_from_slice(&data[off..off + node.elem_size as usize]);
        it.vals[part as usize] = u64::from_le_bytes(b);
        it.ready = it.ready.max(done);
        it.parts_left -= 1;
        if it.parts_left > 0 {
            return;
        }
        let (src, vals, ready) = (it.node, it.vals, it.ready);
        let next: Vec<(usize, u64)> = dig
            .edges
            .iter()
            .filter(|e| e.src == src)
            .flat_map(|e| match e.relation {
                DigRelation::IndexByValue => vec![(e.dst, vals[0])],
                DigRelation::RangePair => (vals[0]..vals[1].max(vals[0])).map(|i| (e.dst, i)).collect(),
            })
            .collect();
        for (dst, idx) in next {
            self.add_item(hint, dst, idx, ready);
        }
    }

    /// One engine cycle: issue up to `reads_per_cycle` ready line reads.
    /// Returns virtual addresses of reads dropped on translation faults.
    pub fn tick(&mut self, now: SimTime, mmu: &mut Mmu, hier: &mut Hierarchy, root: u64) -> Vec<u64> {
        let mut dropped = Vec::new();
        let mut issued = 0;
        let mut pos = 0;
        while issued < self.params.reads_per_cycle && pos < self.fifo.len() {
            let slot = self.fifo[pos];
            let (line, not_before) = {
                let r = self.slab[slot].as_ref().expect("queued slot");
                (r.line, r.not_before)
            };
            if not_before > now {
                pos += 1;
                continue;
            }
            let res = engine_mem(mmu, hier, root, line, EngineOp::Prefetch, now);
            if let MemResult::Stall { .. } = res {
                self.stats.stalls += 1;
                break;
            }
            self.fifo.remove(pos);
            issued += 1;
            let req = self.slab[slot].take().expect("queued slot");
            self.free.push(slot);
            let hint = req.hint;
            match res {
                MemResult::Done { completion, .. } => {
                    self.stats.reads += 1;
                    let h = self.hints.get_mut(&hint).expect("live hint");
                    h.outstanding -= 1;
                    h.lines.insert(line, LineState::Issued { done: completion.done, data: completion.line });
                    if let (Some(t), Some(tr)) = (h.trace, self.traces.as_mut()) {
                        tr[t].issued_at.push((line, now));
                    }
                    for (item, part) in req.parts {
                        self.resolve(hint, item, part, completion.done, &completion.line);
                    }
                }
                MemResult::Dropped { vaddr, .. } => {
                    self.stats.dropped += 1;
                    dropped.push(vaddr);
                    let h = self.hints.get_mut(&hint).expect("live hint");
                    h.outstanding -= 1;
                    h.lines.insert(line, LineState::Dropped);
                }
                MemResult::Stall { .. } => unreachable!(),
            }
            if self.hints[&hint].outstanding == 0 {
                self.hints.remove(&hint);
            }
        }
        dropped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::HierarchyParams;
    use crate::mem::MemParams;
    use crate::noc::MeshDescription;
    use crate::vmem::{AddressSpace, PageSize, TranslationMode};
    use crate::cache::Port;

    fn setup() -> (Hierarchy, AddressSpace) {
        let mem = MemParams { channels: 4, fixed_latency: 50_000, channel_gib_per_sec: 4.8, capacity_bytes: 1 << 31 };
        let mut h = Hierarchy::new(HierarchyParams::defaults(2), MeshDescription::default_4x3(), 250, 250, mem);
        let mut s = AddressSpace::new(&mut h, (16 << 20, 64 << 20), (64 << 20, 1 << 30)).unwrap();
        s.map_region(&mut h, 0x4000_0000, 2 << 20, PageSize::Huge).unwrap();
        (h, s)
    }

    fn put_u32(h: &mut Hierarchy, s: &AddressSpace, va: u64, v: u32) {
        let pa = s.translate(h, va).unwrap().0;
        h.poke(pa, &v.to_le_bytes());
    }

    const Q: u64 = 0x4000_0000;
    const OFF: u64 = 0x4001_0000;
    const NB: u64 = 0x4002_0000;
    const VIS: u64 = 0x4003_0000;

    fn run(h: &mut Hierarchy, s: &AddressSpace, d: &mut Dapf) {
        let mut mmu = Mmu::new(Port::Engine, 1, TranslationMode::Timed, 1000);
        let mut t = SimTime(0);
        while d.busy() {
            d.tick(t, &mut mmu, h, s.root());
            t += 1000;
        }
    }

    #[test]
    fn two_neighbors_in_one_line() {
        let (mut h, s) = setup();
        // queue[0..2] = [9, 5]; node 5 has neighbors 3 and 7
        put_u32(&mut h, &s, Q + 4, 5);
        put_u32(&mut h, &s, OFF + 5 * 4, 0);
        put_u32(&mut h, &s, OFF + 6 * 4, 2);
        put_u32(&mut h, &s, NB, 3);
        put_u32(&mut h, &s, NB + 4, 7);
        let dig = DigDescriptor::bfs(Q, OFF, NB, VIS, 4, 1);
        dig.validate().unwrap();
        let mut d = Dapf::new(DapfParams { reads_per_cycle: 2, max_pending: 64 });
        d.enable_trace();
        d.on_hint(&dig, 0, 0);
        run(&mut h, &s, &mut d);
        let lines = d.traces.as_ref().unwrap()[0].lines();
        let expect: BTreeSet<u64> = [Q, OFF, NB, VIS].into_iter().collect();
        assert_eq!(lines, expect);
        assert_eq!(h.stats.engine.prefetch_issued, 4);
    }

    #[test]
    fn empty_range_stops_after_offsets() {
        let (mut h, s) = setup();
        put_u32(&mut h, &s, Q + 8, 15);
        // offsets[15] = offsets[16] = 4, straddling a line boundary
        put_u32(&mut h, &s, OFF + 15 * 4, 4);
        put_u32(&mut h, &s, OFF + 16 * 4, 4);
        let dig = DigDescriptor::bfs(Q, OFF, NB, VIS, 4, 2);
        let mut d = Dapf::new(DapfParams { reads_per_cycle: 2, max_pending: 64 });
        d.enable_trace();
        d.on_hint(&dig, 0, 0);
        run(&mut h, &s, &mut d);
        let lines = d.traces.as_ref().unwrap()[0].lines();
        let expect: BTreeSet<u64> = [Q, OFF, OFF + 64].into_iter().collect();
        assert_eq!(lines, expect);
    }

    #[test]
    fn unmapped_reads_are_dropped() {
        let (mut h, s) = setup();
        let dig = DigDescriptor::bfs(0x9000_0000, OFF, NB, VIS, 4, 1);
        let mut d = Dapf::new(DapfParams { reads_per_cycle: 2, max_pending: 64 });
        d.on_hint(&dig, 0, 0);
        let mut mmu = Mmu::new(Port::Engine, 1, TranslationMode::Timed, 1000);
        let dropped = d.tick(SimTime(0), &mut mmu, &mut h, s.root());
        assert_eq!(dropped, vec![0x9000_0000]);
        assert!(!d.busy());
        assert_eq!(h.stats.engine.prefetch_issued, 0);
    }

    #[test]
    fn validation_rejects_cycles_and_bad_edges() {
        let mut dig = DigDescriptor::bfs(0, 64, 128, 192, 4, 1);
        dig.edges.push(DigEdge { src: 3, dst: 0, relation: DigRelation::IndexByValue });
        assert!(dig.validate().is_err());
        let mut dig = DigDescriptor::bfs(0, 64, 128, 192, 4, 1);
        dig.edges[1].relation = DigRelation::IndexByValue;
        assert!(dig.validate().is_err());
    }
}
