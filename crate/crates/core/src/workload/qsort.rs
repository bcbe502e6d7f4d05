//! Quicksort drivers: the in-core software sort and the engine offload.

use std::collections::VecDeque;
use std::cell::RefCell;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{heap_len, Emitter, HEAP_BASE};
use crate::accel::qsort::QsortCounts;
use crate::cpu::{Fetch, MicroOp, OpKind, OpSource};
use crate::engine::{EngineStatus, OffloadCommand, DOORBELL_OFFSET, OP_QSORT, STATUS_OFFSET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QsortPattern {
    #[default]
    Random,
    Sorted,
    Reverse,
    Equal,
    /// Keys drawn from 16 values.
    FewUnique,
}

impl QsortPattern {
    pub const ALL: [QsortPattern; 5] =
        [QsortPattern::Random, QsortPattern::Sorted, QsortPattern::Reverse, QsortPattern::Equal, QsortPattern::FewUnique];

    pub fn generate(self, n: usize, seed: u64) -> Vec<u32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            QsortPattern::Random => (0..n).map(|_| rng.gen()).collect(),
            QsortPattern::Sorted => (0..n as u32).collect(),
            QsortPattern::Reverse => (0..n as u32).rev().collect(),
            QsortPattern::Equal => vec![rng.gen(); n],
            QsortPattern::FewUnique => (0..n).map(|_| rng.gen_range(0..16)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QsortMode {
    #[default]
    Software,
    Offload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QsortLayout {
    pub base: u64,
    pub n: u64,
}

impl QsortLayout {
    pub fn new(n: u64) -> Self {
        QsortLayout { base: HEAP_BASE, n }
    }

    pub fn heap_len(&self) -> u64 {
        heap_len(self.n * 4)
    }

    pub fn addr(&self, i: usize) -> u64 {
        self.base + 4 * i as u64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QsortStreamInfo {
    pub counts: QsortCounts,
    pub commands: u64,
    pub polls: u64,
    pub final_status: Option<u64>,
}

/// Emits the micro-ops of the host quicksort in `accel::qsort`: same
/// pivot rule, partition scheme and cutoff. Each compare is an index
/// increment, a load, a compare and a branch; loop exits mispredict.
pub struct QsortSoftwareSource {
    a: Vec<u32>,
    layout: QsortLayout,
    cutoff: usize,
    stack: Vec<(usize, usize)>,
    em: Emitter,
    started: bool,
    done: bool,
    info: Rc<RefCell<QsortStreamInfo>>,
}

impl QsortSoftwareSource {
    pub fn new(keys: Vec<u32>, layout: QsortLayout, cutoff: usize, branch_penalty: u32) -> Self {
        let stack = if keys.len() >= 2 { vec![(0, keys.len() - 1)] } else { Vec::new() };
        QsortSoftwareSource {
            a: keys,
            layout,
            cutoff,
            stack,
            em: Emitter::new(branch_penalty),
            started: false,
            done: false,
            info: Rc::new(RefCell::new(QsortStreamInfo::default())),
        }
    }

    pub fn info(&self) -> Rc<RefCell<QsortStreamInfo>> {
        self.info.clone()
    }

    fn load(&mut self, i: usize, dep: Option<u64>) -> u64 {
        let op = MicroOp::load(self.layout.addr(i), 4).dep_opt(dep).expect(self.a[i] as u64);
        self.em.push(op)
    }

    fn store(&mut self, i: usize, v: u32, dep: u64) {
        self.a[i] = v;
        self.em.push(MicroOp::store(self.layout.addr(i), 4, v as u64).dep(dep));
    }

    fn compare(&mut self, x: u64, y: u64) -> u64 {
        self.info.borrow_mut().counts.compares += 1;
        self.em.push(MicroOp::compute(1).dep(x).dep(y))
    }

    fn leaf(&mut self, lo: usize, hi: usize) {
        self.info.borrow_mut().counts.leaves += 1;
        for k in lo + 1..=hi {
            let x = self.a[k];
            let lx = self.load(k, None);
            let mut m = k;
            let mut cursor = lx;
            loop {
                if m == lo {
                    self.em.branch(cursor, true);
                    break;
                }
                let ly = self.load(m - 1, Some(cursor));
                let c = self.compare(lx, ly);
                let y = self.a[m - 1];
                if y > x {
                    let b = self.em.branch(c, false);
                    self.store(m, y, ly);
                    self.info.borrow_mut().counts.swaps += 1;
                    cursor = b;
                    m -= 1;
                } else {
                    self.em.branch(c, true);
                    break;
                }
            }
            self.store(m, x, lx);
        }
    }

    fn partition(&mut self, lo: usize, hi: usize) -> usize {
        self.info.borrow_mut().counts.partitions += 1;
        let mid = lo + (hi - lo) / 2;
        for (x, y) in [(lo, mid), (lo, hi), (mid, hi)] {
            let lx = self.load(x, None);
            let ly = self.load(y, None);
            let c = self.compare(lx, ly);
            let swap = self.a[y] < self.a[x];
            let b = self.em.branch(c, swap);
            if swap {
                let (vx, vy) = (self.a[x], self.a[y]);
                self.store(x, vy, b);
                self.store(y, vx, b);
                self.info.borrow_mut().counts.swaps += 1;
            }
        }
        let pv = self.load(mid, None);
        let pivot = self.a[mid];
        let (mut i, mut j) = (lo, hi);
        let mut ci = self.em.push(MicroOp::compute(1));
        let mut cj = self.em.push(MicroOp::compute(1));
        loop {
            let li = loop {
                let l = self.load(i, Some(ci));
                let c = self.compare(l, pv);
                let go = self.a[i] < pivot;
                self.em.branch(c, !go);
                if !go {
                    break l;
                }
                i += 1;
                ci = self.em.push(MicroOp::compute(1).dep(ci));
            };
            let lj = loop {
                let l = self.load(j, Some(cj));
                let c = self.compare(l, pv);
                let go = self.a[j] > pivot;
                self.em.branch(c, !go);
                if !go {
                    break l;
                }
                j -= 1;
                cj = self.em.push(MicroOp::compute(1).dep(cj));
            };
            let t = self.em.push(MicroOp::compute(1).dep(ci).dep(cj));
            if i >= j {
                self.em.branch(t, true);
                return j;
            }
            self.em.branch(t, false);
            let (vi, vj) = (self.a[i], self.a[j]);
            self.store(i, vj, lj);
            self.store(j, vi, li);
            self.info.borrow_mut().counts.swaps += 1;
            i += 1;
            j -= 1;
            ci = self.em.push(MicroOp::compute(1).dep(ci));
            cj = self.em.push(MicroOp::compute(1).dep(cj));
        }
    }

    fn advance(&mut self) {
        if !self.started {
            self.started = true;
            for op in fill_ops(&self.layout, &self.a) {
                self.em.push(op);
            }
            self.em.push(MicroOp::marker(OpKind::RegionBegin));
            return;
        }
        match self.stack.pop() {
            Some((lo, hi)) if hi - lo < self.cutoff => self.leaf(lo, hi),
            Some((lo, hi)) => {
                let s = self.partition(lo, hi);
                for r in [(lo, s), (s + 1, hi)] {
                    if r.1 > r.0 {
                        self.stack.push(r);
                    }
                }
            }
            None => {
                self.em.push(MicroOp::marker(OpKind::RegionEnd));
                self.done = true;
            }
        }
    }
}

impl OpSource for QsortSoftwareSource {
    fn next(&mut self) -> Fetch {
        loop {
            if let Some(op) = self.em.pop() {
                return Fetch::Op(op);
            }
            if self.done {
                return Fetch::Finished;
            }
            self.advance();
        }
    }
}

/// Stores writing the unsorted keys, as the application that built the
/// array would, ahead of the measured region.
pub fn fill_ops(layout: &QsortLayout, keys: &[u32]) -> Vec<MicroOp> {
    keys.iter().enumerate().map(|(i, &k)| MicroOp::store(layout.addr(i), 4, k as u64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OffloadState {
    Begin,
    Send,
    Poll,
    Waiting,
    End,
    Finished,
}

/// Sends one sort command through the UC page and polls the status word
/// until the engine reports completion. A full queue is retried.
pub struct QsortOffloadSource {
    layout: QsortLayout,
    uc: u64,
    fill: VecDeque<MicroOp>,
    state: OffloadState,
    info: Rc<RefCell<QsortStreamInfo>>,
}

impl QsortOffloadSource {
    pub fn new(layout: QsortLayout, uc_vaddr: u64, keys: &[u32]) -> Self {
        QsortOffloadSource {
            layout,
            uc: uc_vaddr,
            fill: fill_ops(&layout, keys).into(),
            state: OffloadState::Begin,
            info: Rc::new(RefCell::new(QsortStreamInfo::default())),
        }
    }

    pub fn info(&self) -> Rc<RefCell<QsortStreamInfo>> {
        self.info.clone()
    }

    fn emit(&mut self, op: MicroOp) -> Fetch {
        Fetch::Op(op)
    }
}

impl OpSource for QsortOffloadSource {
    fn next(&mut self) -> Fetch {
        match self.state {
            OffloadState::Begin => {
                if let Some(op) = self.fill.pop_front() {
                    return self.emit(op);
                }
                self.state = OffloadState::Send;
                self.emit(MicroOp::marker(OpKind::RegionBegin))
            }
            OffloadState::Send => {
                self.state = OffloadState::Poll;
                self.info.borrow_mut().commands += 1;
                let cmd = OffloadCommand::new(OP_QSORT, &[self.layout.base, self.layout.n]);
                self.emit(MicroOp::uc_store(self.uc + DOORBELL_OFFSET, cmd.encode()))
            }
            OffloadState::Poll => {
                self.state = OffloadState::Waiting;
                self.info.borrow_mut().polls += 1;
                self.emit(MicroOp::uc_load(self.uc + STATUS_OFFSET))
            }
            OffloadState::Waiting => Fetch::Wait,
            OffloadState::End => {
                self.state = OffloadState::Finished;
                self.emit(MicroOp::marker(OpKind::RegionEnd))
            }
            OffloadState::Finished => Fetch::Finished,
        }
    }

    fn on_complete(&mut self, _seq: u64, value: u64) {
        self.info.borrow_mut().final_status = Some(value);
        self.state = match EngineStatus::decode(value) {
            Some(EngineStatus::Done) => OffloadState::End,
            Some(EngineStatus::QueueFull) => OffloadState::Send,
            _ => OffloadState::Poll,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accel::qsort_reference;

    fn drain(src: &mut impl OpSource) -> Vec<MicroOp> {
        let mut ops = Vec::new();
        while let Fetch::Op(op) = src.next() {
            ops.push(op);
        }
        ops
    }

    #[test]
    fn software_counts_match_reference() {
        for pat in QsortPattern::ALL {
            let keys = pat.generate(3000, 9);
            let mut s = QsortSoftwareSource::new(keys.clone(), QsortLayout::new(3000), 16, 15);
            let ops = drain(&mut s);
            let mut r = keys.clone();
            let c = qsort_reference(&mut r, 16);
            assert_eq!(s.info().borrow().counts, c, "{pat:?}");
            assert_eq!(s.a, r);
            let cmps = ops.iter().filter(|o| o.kind == OpKind::Load).count() as u64;
            assert!(cmps >= c.compares);
        }
    }

    #[test]
    fn store_values_replay_to_sorted_image() {
        let keys = QsortPattern::Random.generate(500, 4);
        let l = QsortLayout::new(500);
        let mut s = QsortSoftwareSource::new(keys.clone(), l, 16, 15);
        let mut mem = keys.clone();
        for op in drain(&mut s) {
            let idx = (op.vaddr.wrapping_sub(l.base) / 4) as usize;
            match op.kind {
                OpKind::Store => mem[idx] = op.data as u32,
                OpKind::Load => assert_eq!(op.expect, Some(mem[idx] as u64)),
                _ => {}
            }
        }
        let mut r = keys;
        r.sort();
        assert_eq!(mem, r);
    }

    #[test]
    fn empty_array_only_markers() {
        let mut s = QsortSoftwareSource::new(Vec::new(), QsortLayout::new(0), 16, 15);
        let kinds: Vec<OpKind> = drain(&mut s).iter().map(|o| o.kind).collect();
        assert_eq!(kinds, vec![OpKind::RegionBegin, OpKind::RegionEnd]);
    }

    #[test]
    fn offload_polls_until_done_and_resends_when_full() {
        let mut s = QsortOffloadSource::new(QsortLayout::new(100), 0x7f00_0000_1000, &[]);
        assert!(matches!(s.next(), Fetch::Op(op) if op.kind == OpKind::RegionBegin));
        assert!(matches!(s.next(), Fetch::Op(op) if op.kind == OpKind::UcStore && op.vaddr == 0x7f00_0000_1000));
        assert!(matches!(s.next(), Fetch::Op(op) if op.kind == OpKind::UcLoad && op.vaddr == 0x7f00_0000_1040));
        assert!(matches!(s.next(), Fetch::Wait));
        s.on_complete(2, EngineStatus::QueueFull.encode());
        assert!(matches!(s.next(), Fetch::Op(op) if op.kind == OpKind::UcStore));
        assert!(matches!(s.next(), Fetch::Op(op) if op.kind == OpKind::UcLoad));
        s.on_complete(4, EngineStatus::Busy.encode());
        assert!(matches!(s.next(), Fetch::Op(op) if op.kind == OpKind::UcLoad));
        s.on_complete(5, EngineStatus::Done.encode());
        assert!(matches!(s.next(), Fetch::Op(op) if op.kind == OpKind::RegionEnd));
        assert!(matches!(s.next(), Fetch::Finished));
        assert_eq!(s.info().borrow().commands, 2);
    }
}
