//! In-engine quicksort over an array of `u32` keys.
//!
//! One range is processed at a time. A partition pass loads lines on demand
//! with bounded lookahead from both ends, runs a Hoare scan around a
//! median-of-three pivot and writes each line into the store buffer once both
//! cursors have passed it. Ranges of at most `cutoff` elements are sorted by
//! insertion sort. When a split point falls inside a line, that line waits in
//! the store buffer for the small children sharing it before one write
//! leaves the engine.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::store_buffer::{SbRead, StoreBuffer};
use crate::cache::Hierarchy;
use crate::engine::{engine_mem, EngineOp, MemResult};
use crate::kernel::SimTime;
use crate::vmem::Mmu;
use crate::LINE_BYTES;

const ELEM: u64 = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QsortCounts {
    pub compares: u64,
    pub swaps: u64,
    pub partitions: u64,
    pub leaves: u64,
}

/// Sorts the three sample positions in place; returns swaps made.
pub fn median_of_three(a: &mut [u32], lo: usize, hi: usize) -> u64 {
    let mid = lo + (hi - lo) / 2;
    let mut swaps = 0;
    for (x, y) in [(lo, mid), (lo, hi), (mid, hi)] {
        if a[y] < a[x] {
            a.swap(x, y);
            swaps += 1;
        }
    }
    swaps
}

/// Insertion sort of `a`; returns (compares, element moves).
pub fn insertion_sort(a: &mut [u32]) -> (u64, u64) {
    let (mut cmp, mut moves) = (0, 0);
    for k in 1..a.len() {
        let x = a[k];
        let mut m = k;
        while m > 0 {
            cmp += 1;
            if a[m - 1] > x {
                a[m] = a[m - 1];
                moves += 1;
                m -= 1;
            } else {
                break;
            }
        }
        a[m] = x;
    }
    (cmp, moves)
}

/// Host-side quicksort with the engine's pivot rule, partition scheme and
/// cutoff. Counts compares and swaps.
pub fn qsort_reference(a: &mut [u32], cutoff: usize) -> QsortCounts {
    let mut c = QsortCounts::default();
    if a.len() < 2 {
        return c;
    }
    let mut stack = vec![(0usize, a.len() - 1)];
    while let Some((lo, hi)) = stack.pop() {
        let size = hi - lo + 1;
        if size <= cutoff {
            c.leaves += 1;
            let (cmp, mv) = insertion_sort(&mut a[lo..=hi]);
            c.compares += cmp;
            c.swaps += mv;
            continue;
        }
        c.partitions += 1;
        c.swaps += median_of_three(a, lo, hi);
        c.compares += 3;
        let pivot = a[lo + (hi - lo) / 2];
        let (mut i, mut j) = (lo, hi);
        let split = loop {
            loop {
                c.compares += 1;
                if a[i] < pivot {
                    i += 1;
                } else {
                    break;
                }
            }
            loop {
                c.compares += 1;
                if a[j] > pivot {
                    j -= 1;
                } else {
                    break;
                }
            }
            if i >= j {
                break j;
            }
            a.swap(i, j);
            c.swaps += 1;
            i += 1;
            j -= 1;
        };
        for r in [(lo, split), (split + 1, hi)] {
            if r.1 > r.0 {
                stack.push(r);
            }
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QsortParams {
    pub compares_per_cycle: usize,
    pub loads_per_cycle: usize,
    pub lookahead_lines: usize,
    pub cutoff: usize,
    pub store_buffer_entries: usize,
    pub retry_ticks: u64,
    pub period: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QsortStats {
    pub tasks: u64,
    pub partitions: u64,
    pub leaves: u64,
    pub compares: u64,
    pub swaps: u64,
    pub line_loads: u64,
    pub buffer_forwards: u64,
    pub line_writes: u64,
    pub drops: u64,
    pub load_stall_cycles: u64,
    pub buffer_stall_cycles: u64,
}

/// One line leaving the store buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineWrite {
    pub line: u64,
    pub data: [u8; 64],
    /// Store-buffer writes merged into this release.
    pub merged: u32,
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Waiting(SimTime),
    Ready { data: [u8; 64], at: SimTime },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Median,
    Scan { i: u64, j: u64, pivot: u32, left: bool },
    Leaf { finish: Option<SimTime> },
    Flush { split: Option<u64> },
}

#[derive(Debug)]
struct Pass {
    lo: u64,
    hi: u64,
    phase: Phase,
    lines: BTreeMap<u64, Slot>,
    written: std::collections::BTreeSet<u64>,
    left_next: u64,
    right_next: u64,
}

pub struct QsortEngine {
    p: QsortParams,
    base: u64,
    owner: Option<usize>,
    stack: Vec<(u64, u64)>,
    pass: Option<Pass>,
    sb: StoreBuffer,
    merges: BTreeMap<u64, u32>,
    release: VecDeque<(u64, [u8; 64], SimTime)>,
    last_write: SimTime,
    pub stats: QsortStats,
    pub write_log: Option<Vec<LineWrite>>,
}

impl QsortEngine {
    pub fn new(p: QsortParams) -> Self {
        QsortEngine {
            sb: StoreBuffer::new(p.store_buffer_entries),
            p,
            base: 0,
            owner: None,
            stack: Vec::new(),
            pass: None,
            merges: BTreeMap::new(),
            release: VecDeque::new(),
            last_write: SimTime::ZERO,
            stats: QsortStats::default(),
            write_log: None,
        }
    }

    pub fn params(&self) -> &QsortParams {
        &self.p
    }

    pub fn busy(&self) -> bool {
        self.owner.is_some()
    }

    pub fn owner(&self) -> Option<usize> {
        self.owner
    }

    pub fn store_buffer(&self) -> &StoreBuffer {
        &self.sb
    }

    /// Begins sorting `n` keys at `base` for `core`.
    pub fn start(&mut self, base: u64, n: u64, core: usize) {
        debug_assert!(self.owner.is_none());
        assert_eq!(base % ELEM, 0, "keys must be 4-byte aligned");
        self.stats.tasks += 1;
        self.base = base;
        self.owner = Some(core);
        self.stack.clear();
        if n >= 2 {
            self.stack.push((0, n - 1));
        }
    }

    fn line_of(&self, idx: u64) -> u64 {
        (self.base + idx * ELEM) & !(LINE_BYTES - 1)
    }

    /// Indices of `[lo, hi]` that live in `line`.
    fn span_in(&self, line: u64, lo: u64, hi: u64) -> (u64, u64) {
        let first = (line.saturating_sub(self.base)).div_ceil(ELEM);
        let last = (line + LINE_BYTES - self.base) / ELEM - 1;
        (first.max(lo), last.min(hi))
    }

    /// One engine cycle. Returns virtual addresses dropped on faults.
    pub fn tick(&mut self, now: SimTime, mmu: &mut Mmu, hier: &mut Hierarchy, root: u64) -> Vec<u64> {
        let mut dropped = Vec::new();
        if self.owner.is_none() {
            return dropped;
        }
        let mut budget = self.p.loads_per_cycle.max(1);
        self.issue_writes(now, mmu, hier, root, &mut budget, &mut dropped);
        if self.pass.is_none() {
            if let Some((lo, hi)) = self.stack.pop() {
                let leaf = hi - lo < self.p.cutoff as u64;
                let phase = if leaf { Phase::Leaf { finish: None } } else { Phase::Median };
                let (left_next, right_next) = (self.line_of(lo), self.line_of(hi));
                self.pass = Some(Pass {
                    lo,
                    hi,
                    phase,
                    lines: BTreeMap::new(),
                    written: Default::default(),
                    left_next,
                    right_next,
                });
            }
        }
        if let Some(mut pass) = self.pass.take() {
            for line in self.wanted(&pass) {
                if budget == 0 {
                    break;
                }
                match pass.lines.get(&line) {
                    Some(Slot::Ready { .. }) => continue,
                    Some(Slot::Waiting(t)) if *t > now => continue,
                    _ => {}
                }
                budget -= 1;
                let slot = self.load(line, now, mmu, hier, root, &mut dropped);
                pass.lines.insert(line, slot);
            }
            let done = self.step(now, &mut pass);
            if !done {
                self.pass = Some(pass);
            }
        }
        if self.pass.is_none()
            && self.stack.is_empty()
            && self.sb.is_empty()
            && self.release.is_empty()
            && now >= self.last_write
        {
            self.owner = None;
        }
        dropped
    }

    fn issue_writes(
        &mut self,
        now: SimTime,
        mmu: &mut Mmu,
        hier: &mut Hierarchy,
        root: u64,
        budget: &mut usize,
        dropped: &mut Vec<u64>,
    ) {
        while *budget > 0 {
            let Some(&(line, data, not_before)) = self.release.front() else { break };
            if not_before > now {
                break;
            }
            *budget -= 1;
            match engine_mem(mmu, hier, root, line, EngineOp::Write(&data), now) {
                MemResult::Done { completion, .. } => {
                    self.release.pop_front();
                    self.stats.line_writes += 1;
                    self.last_write = self.last_write.max(completion.done);
                    let merged = self.merges.remove(&line).unwrap_or(1);
                    if let Some(log) = self.write_log.as_mut() {
                        log.push(LineWrite { line, data, merged });
                    }
                }
                MemResult::Dropped { vaddr, .. } => {
                    self.stats.drops += 1;
                    dropped.push(vaddr);
                    self.release[0].2 = now + self.p.retry_ticks;
                    break;
                }
                MemResult::Stall { retry_at } => {
                    self.release[0].2 = retry_at;
                    break;
                }
            }
        }
    }

    fn wanted(&self, pass: &Pass) -> Vec<u64> {
        let (lo, hi) = (pass.lo, pass.hi);
        match pass.phase {
            Phase::Median => {
                let mut v = vec![self.line_of(lo), self.line_of(hi), self.line_of(lo + (hi - lo) / 2)];
                v.dedup();
                v
            }
            Phase::Leaf { finish: None } => {
                (self.line_of(lo)..=self.line_of(hi)).step_by(LINE_BYTES as usize).collect()
            }
            Phase::Scan { i, j, .. } => {
                let (first, last) = (self.line_of(lo), self.line_of(hi));
                let (li, lj) = (self.line_of(i.min(hi)), self.line_of(j.max(lo)));
                let mut v = Vec::new();
                for k in 0..self.p.lookahead_lines.max(1) as u64 {
                    let a = li + k * LINE_BYTES;
                    if a <= last && a <= lj {
                        v.push(a);
                    }
                    if let Some(b) = lj.checked_sub(k * LINE_BYTES) {
                        if b >= first && b >= li && b != a {
                            v.push(b);
                        }
                    }
                }
                v
            }
            _ => Vec::new(),
        }
    }

    fn load(&mut self, line: u64, now: SimTime, mmu: &mut Mmu, hier: &mut Hierarchy, root: u64, dropped: &mut Vec<u64>) -> Slot {
        let fast = now + self.p.period;
        if let SbRead::Hit(data) = self.sb.read(line, 0..64) {
            self.stats.buffer_forwards += 1;
            return Slot::Ready { data, at: fast };
        }
        if let Some(&(_, data, _)) = self.release.iter().rev().find(|r| r.0 == line) {
            self.stats.buffer_forwards += 1;
            return Slot::Ready { data, at: fast };
        }
        match engine_mem(mmu, hier, root, line, EngineOp::Read, now) {
            MemResult::Done { completion, .. } => {
                self.stats.line_loads += 1;
                let mut data = completion.line;
                if let Some(e) = self.sb.entry(line) {
                    for (k, b) in data.iter_mut().enumerate() {
                        if e.valid & (1 << k) != 0 {
                            *b = e.data[k];
                        }
                    }
                }
                Slot::Ready { data, at: completion.done.max(fast) }
            }
            MemResult::Dropped { vaddr, .. } => {
                self.stats.drops += 1;
                dropped.push(vaddr);
                Slot::Waiting(now + self.p.retry_ticks)
            }
            MemResult::Stall { retry_at } => Slot::Waiting(retry_at),
        }
    }

    fn get(&self, pass: &Pass, idx: u64, now: SimTime) -> Option<u32> {
        let addr = self.base + idx * ELEM;
        match pass.lines.get(&(addr & !(LINE_BYTES - 1)))? {
            Slot::Ready { data, at } if *at <= now => {
                let o = (addr % LINE_BYTES) as usize;
                Some(u32::from_le_bytes(data[o..o + 4].try_into().expect("4 bytes")))
            }
            _ => None,
        }
    }

    fn set(&self, pass: &mut Pass, idx: u64, v: u32) {
        let addr = self.base + idx * ELEM;
        let Some(Slot::Ready { data, .. }) = pass.lines.get_mut(&(addr & !(LINE_BYTES - 1))) else {
            panic!("writing an unloaded line");
        };
        let o = (addr % LINE_BYTES) as usize;
        data[o..o + 4].copy_from_slice(&v.to_le_bytes());
    }

    /// Writes this pass's bytes of `line` into the store buffer. False when
    /// the buffer is full.
    fn write_line(&mut self, pass: &mut Pass, line: u64, writers: u32, now: SimTime) -> bool {
        if pass.written.contains(&line) {
            return true;
        }
        let Some(Slot::Ready { data, .. }) = pass.lines.get(&line).copied() else {
            panic!("line {line:#x} written before it was loaded");
        };
        let (a, b) = self.span_in(line, pass.lo, pass.hi);
        let span = ((self.base + a * ELEM - line) as usize)..((self.base + (b + 1) * ELEM - line) as usize);
        let out = match self.sb.write(line, span.clone(), &data[span], writers) {
            Err(_) => return false,
            Ok(Some(d)) => Some(d),
            Ok(None) => self.sb.fill(line, &data),
        };
        *self.merges.entry(line).or_insert(0) += 1;
        if let Some(d) = out {
            self.release.push_back((line, d, now));
        }
        pass.written.insert(line);
        true
    }

    /// Writes lines both cursors have left behind.
    fn write_passed(&mut self, pass: &mut Pass, i: u64, j: u64, now: SimTime) -> bool {
        let (first, last) = (self.line_of(pass.lo), self.line_of(pass.hi));
        while pass.left_next <= last && self.span_in(pass.left_next, pass.lo, pass.hi).1 < i {
            if !self.write_line(pass, pass.left_next, 1, now) {
                return false;
            }
            pass.left_next += LINE_BYTES;
        }
        while pass.right_next >= first && self.span_in(pass.right_next, pass.lo, pass.hi).0 > j {
            if !self.write_line(pass, pass.right_next, 1, now) {
                return false;
            }
            if pass.right_next < LINE_BYTES {
                break;
            }
            pass.right_next -= LINE_BYTES;
        }
        true
    }

    /// Advances the current pass by one cycle. True when it finished.
    fn step(&mut self, now: SimTime, pass: &mut Pass) -> bool {
        let mut budget = self.p.compares_per_cycle.max(1);
        let (lo, hi) = (pass.lo, pass.hi);
        loop {
            match pass.phase {
                Phase::Median => {
                    let mid = lo + (hi - lo) / 2;
                    let mut v = [0u32; 3];
                    for (k, idx) in [lo, mid, hi].into_iter().enumerate() {
                        match self.get(pass, idx, now) {
                            Some(x) => v[k] = x,
                            None => {
                                self.stats.load_stall_cycles += 1;
                                return false;
                            }
                        }
                    }
                    self.stats.partitions += 1;
                    self.stats.compares += 3;
                    self.stats.swaps += median_of_three(&mut v, 0, 2);
                    for (k, idx) in [lo, mid, hi].into_iter().enumerate() {
                        self.set(pass, idx, v[k]);
                    }
                    pass.phase = Phase::Scan { i: lo, j: hi, pivot: v[1], left: true };
                    budget = budget.saturating_sub(3);
                    if budget == 0 {
                        return false;
                    }
                }
                Phase::Scan { mut i, mut j, pivot, mut left } => {
                    if !self.write_passed(pass, i, j, now) {
                        self.stats.buffer_stall_cycles += 1;
                        return false;
                    }
                    let mut split = None;
                    while budget > 0 {
                        let idx = if left { i } else { j };
                        let Some(x) = self.get(pass, idx, now) else {
                            self.stats.load_stall_cycles += 1;
                            break;
                        };
                        budget -= 1;
                        self.stats.compares += 1;
                        if left {
                            if x < pivot {
                                i += 1;
                            } else {
                                left = false;
                            }
                        } else if x > pivot {
                            j -= 1;
                        } else if i >= j {
                            split = Some(j);
                            break;
                        } else {
                            let y = self.get(pass, i, now).expect("cursor line loaded");
                            self.set(pass, i, x);
                            self.set(pass, j, y);
                            self.stats.swaps += 1;
                            i += 1;
                            j -= 1;
                            left = true;
                        }
                    }
                    match split {
                        Some(s) => pass.phase = Phase::Flush { split: Some(s) },
                        None => {
                            pass.phase = Phase::Scan { i, j, pivot, left };
                            return false;
                        }
                    }
                }
                Phase::Leaf { finish: None } => {
                    let mut v = Vec::with_capacity((hi - lo + 1) as usize);
                    for idx in lo..=hi {
                        match self.get(pass, idx, now) {
                            Some(x) => v.push(x),
                            None => {
                                self.stats.load_stall_cycles += 1;
                                return false;
                            }
                        }
                    }
                    let (cmp, moves) = insertion_sort(&mut v);
                    self.stats.leaves += 1;
                    self.stats.compares += cmp;
                    self.stats.swaps += moves;
                    for (k, x) in v.into_iter().enumerate() {
                        self.set(pass, lo + k as u64, x);
                    }
                    let cycles = cmp.div_ceil(self.p.compares_per_cycle.max(1) as u64).max(1);
                    pass.phase = Phase::Leaf { finish: Some(now + cycles * self.p.period) };
                    return false;
                }
                Phase::Leaf { finish: Some(f) } => {
                    if now < f {
                        return false;
                    }
                    pass.phase = Phase::Flush { split: None };
                }
                Phase::Flush { split } => {
                    let cutoff = self.p.cutoff as u64;
                    let kids = split.map(|s| [(lo, s), (s + 1, hi)]);
                    let small = |r: &(u64, u64)| r.1 > r.0 && r.1 - r.0 < cutoff;
                    let meeting = split.filter(|&s| self.line_of(s) == self.line_of(s + 1)).map(|s| self.line_of(s));
                    let mut l = self.line_of(lo);
                    while l <= self.line_of(hi) {
                        let writers = match (meeting, kids) {
                            (Some(m), Some(k)) if m == l => 1 + k.iter().filter(|r| small(r)).count() as u32,
                            _ => 1,
                        };
                        if !self.write_line(pass, l, writers, now) {
                            self.stats.buffer_stall_cycles += 1;
                            return false;
                        }
                        l += LINE_BYTES;
                    }
                    if let Some(k) = kids {
                        let mut big: Vec<_> = k.iter().copied().filter(|r| r.1 - r.0 >= cutoff).collect();
                        big.sort_by_key(|r| std::cmp::Reverse(r.1 - r.0));
                        self.stack.extend(big);
                        self.stack.extend(k.iter().rev().copied().filter(small));
                    }
                    return true;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{HierarchyParams, Port};
    use crate::mem::MemParams;
    use crate::noc::MeshDescription;
    use crate::vmem::{AddressSpace, PageSize, TranslationMode};
    use proptest::prelude::*;

    const BASE: u64 = 0x4000_0000;

    fn params() -> QsortParams {
        QsortParams {
            compares_per_cycle: 4,
            loads_per_cycle: 2,
            lookahead_lines: 8,
            cutoff: 16,
            store_buffer_entries: 16,
            retry_ticks: 1000,
            period: 1000,
        }
    }

    struct Rig {
        h: Hierarchy,
        s: AddressSpace,
        mmu: Mmu,
    }

    fn rig(bytes: u64) -> Rig {
        let mem = MemParams { channels: 4, fixed_latency: 50_000, channel_gib_per_sec: 4.8, capacity_bytes: 1 << 31 };
        let mut h = Hierarchy::new(HierarchyParams::defaults(2), MeshDescription::default_4x3(), 250, 250, mem);
        let mut s = AddressSpace::new(&mut h, (16 << 20, 64 << 20), (64 << 20, 1 << 30)).unwrap();
        let len = bytes.max(1).div_ceil(2 << 20) * (2 << 20);
        s.map_region(&mut h, BASE, len, PageSize::Huge).unwrap();
        Rig { h, s, mmu: Mmu::new(Port::Engine, 1, TranslationMode::Timed, 1000) }
    }

    fn run(keys: &[u32], p: QsortParams) -> (Vec<u32>, QsortEngine, SimTime) {
        let mut r = rig(keys.len() as u64 * 4);
        let pa = r.s.translate(&r.h, BASE).unwrap().0;
        let bytes: Vec<u8> = keys.iter().flat_map(|k| k.to_le_bytes()).collect();
        r.h.poke(pa, &bytes);
        let mut q = QsortEngine::new(p);
        q.write_log = Some(Vec::new());
        q.start(BASE, keys.len() as u64, 1);
        let mut t = SimTime(0);
        while q.busy() {
            let d = q.tick(t, &mut r.mmu, &mut r.h, r.s.root());
            assert!(d.is_empty());
            t += 1000;
            assert!(t.0 < 1 << 50, "engine hung");
        }
        let mut out = vec![0u8; bytes.len()];
        r.h.peek(pa, &mut out);
        let sorted = out.chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        (sorted, q, t)
    }

    #[test]
    fn sorted_sixteen_is_unchanged() {
        let keys: Vec<u32> = (0..16).collect();
        let (out, q, _) = run(&keys, params());
        assert_eq!(out, keys);
        assert_eq!(q.stats.leaves, 1);
    }

    #[test]
    fn reverse_1024_sorts_and_matches_reference_counts() {
        let keys: Vec<u32> = (0..1024).rev().collect();
        let (out, q, _) = run(&keys, params());
        let mut r = keys.clone();
        let c = qsort_reference(&mut r, 16);
        assert_eq!(out, r);
        assert_eq!(q.stats.compares, c.compares);
        assert_eq!(q.stats.partitions, c.partitions);
        assert_eq!(q.stats.leaves, c.leaves);
    }

    #[test]
    fn mid_line_split_shares_one_buffered_write() {
        // 24 keys over lines [0, 16) and [16, 24); the pivot 12 splits inside
        // line 0 and both children are leaves
        let mut keys: Vec<u32> = (0..24).map(|k| (k * 7) % 24).collect();
        let pos = |v: &Vec<u32>, x: u32| v.iter().position(|&k| k == x).unwrap();
        for (slot, val) in [(0usize, 0u32), (11, 12), (23, 23)] {
            let p = pos(&keys, val);
            keys.swap(slot, p);
        }
        let (out, q, _) = run(&keys, params());
        let sorted: Vec<u32> = (0..24).collect();
        assert_eq!(out, sorted);
        let log = q.write_log.as_ref().unwrap();
        let line0: Vec<_> = log.iter().filter(|w| w.line == BASE).collect();
        assert_eq!(line0.len(), 1, "shared line leaves the engine once");
        assert_eq!(line0[0].merged, 3, "parent and both sub-arrays merge");
        let want: Vec<u8> = sorted[..16].iter().flat_map(|k| k.to_le_bytes()).collect();
        assert_eq!(&line0[0].data[..], &want[..]);
        assert_eq!(log.iter().filter(|w| w.line == BASE + 64).count(), 2);
    }

    #[test]
    fn tiny_store_buffer_still_sorts() {
        let keys: Vec<u32> = (0..3000u32).map(|k| k.wrapping_mul(2654435761) % 997).collect();
        let (out, _, _) = run(&keys, QsortParams { store_buffer_entries: 4, lookahead_lines: 2, ..params() });
        let mut r = keys.clone();
        r.sort();
        assert_eq!(out, r);
    }

    #[test]
    fn trivial_sizes_finish() {
        for n in 0..3u32 {
            let keys: Vec<u32> = (0..n).rev().collect();
            let (out, _, _) = run(&keys, params());
            let mut r = keys.clone();
            r.sort();
            assert_eq!(out, r);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn engine_matches_reference(keys in prop::collection::vec(0u32..64, 0..600), cpc in 1usize..8) {
            let (out, q, _) = run(&keys, QsortParams { compares_per_cycle: cpc, ..params() });
            let mut r = keys.clone();
            let c = qsort_reference(&mut r, 16);
            prop_assert_eq!(&out, &r);
            prop_assert_eq!(q.stats.compares, c.compares);
            prop_assert_eq!(q.stats.swaps, c.swaps);
        }
    }
}
