//! Four-level page tables with 4 KiB and 2 MiB pages, fully associative
//! LRU TLBs and a single timed page-table walker per MMU.

use serde::{Deserialize, Serialize};

use crate::cache::{AccessKind, Hierarchy, Outcome, Port};
use crate::error::SetupError;
use crate::kernel::SimTime;
use crate::mem::SparseStore;
use crate::{PAGE_2M, PAGE_4K};

pub const PTE_PRESENT: u64 = 1;
pub const PTE_HUGE: u64 = 1 << 7;
const FRAME_MASK: u64 = ((1u64 << 52) - 1) & !(PAGE_4K - 1);
const ENTRIES: u64 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PageSize {
    #[serde(rename = "4k")]
    Small,
    #[serde(rename = "2m")]
    Huge,
}

impl PageSize {
    pub fn bytes(self) -> u64 {
        match self {
            PageSize::Small => PAGE_4K,
            PageSize::Huge => PAGE_2M,
        }
    }

    /// Page-table reads needed to resolve a miss.
    pub fn walk_depth(self) -> u32 {
        match self {
            PageSize::Small => 4,
            PageSize::Huge => 3,
        }
    }

    /// Transparent-hugepage policy: 2 MiB pages for regions of at least 2 MiB.
    pub fn for_region(len: u64) -> Self {
        if len >= PAGE_2M {
            PageSize::Huge
        } else {
            PageSize::Small
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslationMode {
    #[default]
    Timed,
    Functional,
}

/// Physical memory as seen by the page-table code.
pub trait PhysMem {
    fn read_u64(&self, paddr: u64) -> u64;
    fn write_u64(&mut self, paddr: u64, v: u64);
}

impl PhysMem for SparseStore {
    fn read_u64(&self, paddr: u64) -> u64 {
        SparseStore::read_u64(self, paddr)
    }

    fn write_u64(&mut self, paddr: u64, v: u64) {
        SparseStore::write_u64(self, paddr, v)
    }
}

impl PhysMem for Hierarchy {
    fn read_u64(&self, paddr: u64) -> u64 {
        self.peek_u64(paddr)
    }

    fn write_u64(&mut self, paddr: u64, v: u64) {
        self.poke(paddr, &v.to_le_bytes())
    }
}

/// Sequential bump allocator over `[next, end)`.
#[derive(Debug, Clone)]
pub struct FrameAllocator {
    next: u64,
    end: u64,
}

impl FrameAllocator {
    pub fn new(start: u64, end: u64) -> Self {
        FrameAllocator { next: start, end }
    }

    pub fn alloc(&mut self, size: u64, align: u64) -> Result<u64, SetupError> {
        let base = self.next.div_ceil(align) * align;
        if base + size > self.end {
            return Err(SetupError::OutOfMemory(size));
        }
        self.next = base + size;
        Ok(base)
    }

    pub fn used_until(&self) -> u64 {
        self.next
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub vaddr: u64,
    pub len: u64,
    pub page_size: PageSize,
    /// Physical base of each page, in order.
    pub frames: Vec<u64>,
}

impl Region {
    pub fn contains(&self, vaddr: u64) -> bool {
        vaddr >= self.vaddr && vaddr < self.vaddr + self.len
    }

    /// Translation recorded at map time.
    pub fn translate(&self, vaddr: u64) -> u64 {
        let ps = self.page_size.bytes();
        let page = (vaddr - self.vaddr) / ps;
        self.frames[page as usize] + vaddr % ps
    }
}

fn level_index(vaddr: u64, level: u32) -> u64 {
    // level 4 = root (bits 39..47), level 1 = leaf (bits 12..20)
    (vaddr >> (12 + 9 * (level - 1))) & (ENTRIES - 1)
}

/// One address space: the page-table tree rooted at `root` plus the
/// regions mapped into it.
#[derive(Debug, Clone)]
pub struct AddressSpace {
    root: u64,
    regions: Vec<Region>,
    tables: FrameAllocator,
    frames: FrameAllocator,
    table_pages: u64,
}

impl AddressSpace {
    /// Page tables come from `table_range`, data frames from `data_range`.
    pub fn new(mem: &mut impl PhysMem, table_range: (u64, u64), data_range: (u64, u64)) -> Result<Self, SetupError> {
        let mut tables = FrameAllocator::new(table_range.0, table_range.1);
        let root = tables.alloc(PAGE_4K, PAGE_4K)?;
        zero_table(mem, root);
        Ok(AddressSpace {
            root,
            regions: Vec::new(),
            tables,
            frames: FrameAllocator::new(data_range.0, data_range.1),
            table_pages: 1,
        })
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn table_pages(&self) -> u64 {
        self.table_pages
    }

    pub fn region_of(&self, vaddr: u64) -> Option<&Region> {
        self.regions.iter().find(|r| r.contains(vaddr))
    }

    /// Maps `[vaddr, vaddr + len)` with fresh frames of `page_size`.
    pub fn map_region(
        &mut self,
        mem: &mut impl PhysMem,
        vaddr: u64,
        len: u64,
        page_size: PageSize,
    ) -> Result<&Region, SetupError> {
        let ps = page_size.bytes();
        if !vaddr.is_multiple_of(ps) || !len.is_multiple_of(ps) || len == 0 {
            return Err(SetupError::Misaligned { start: vaddr, len, page: ps });
        }
        let end = vaddr + len;
        if self.regions.iter().any(|r| vaddr < r.vaddr + r.len && r.vaddr < end) {
            return Err(SetupError::Overlap { start: vaddr, end });
        }
        let pages = len / ps;
        let base = self.frames.alloc(len, ps)?;
        let frames: Vec<u64> = (0..pages).map(|i| base + i * ps).collect();
        for (i, &frame) in frames.iter().enumerate() {
            self.map_page(mem, vaddr + i as u64 * ps, frame, page_size)?;
        }
        self.regions.push(Region { vaddr, len, page_size, frames });
        Ok(self.regions.last().expect("just pushed"))
    }

    fn map_page(&mut self, mem: &mut impl PhysMem, vaddr: u64, frame: u64, page_size: PageSize) -> Result<(), SetupError> {
        let leaf_level = match page_size {
            PageSize::Small => 1,
            PageSize::Huge => 2,
        };
        let mut table = self.root;
        for level in (leaf_level + 1..=4).rev() {
            let slot = table + level_index(vaddr, level) * 8;
            let pte = mem.read_u64(slot);
            table = if pte & PTE_PRESENT != 0 {
                pte & FRAME_MASK
            } else {
                let t = self.tables.alloc(PAGE_4K, PAGE_4K)?;
                self.table_pages += 1;
                zero_table(mem, t);
                mem.write_u64(slot, t | PTE_PRESENT);
                t
            };
        }
        let slot = table + level_index(vaddr, leaf_level) * 8;
        let huge = if leaf_level == 2 { PTE_HUGE } else { 0 };
        mem.write_u64(slot, frame | huge | PTE_PRESENT);
        Ok(())
    }

    /// Physical addresses of the page-table entries a walk of `vaddr`
    /// reads, in order, and the outcome.
    pub fn walk_path(&self, mem: &impl PhysMem, vaddr: u64) -> (Vec<u64>, Option<(u64, PageSize)>) {
        walk_path(mem, self.root, vaddr)
    }

    /// Zero-latency translation.
    pub fn translate(&self, mem: &impl PhysMem, vaddr: u64) -> Option<(u64, PageSize)> {
        walk_path(mem, self.root, vaddr).1
    }
}

fn zero_table(mem: &mut impl PhysMem, table: u64) {
    for i in 0..ENTRIES {
        mem.write_u64(table + i * 8, 0);
    }
}

fn walk_path(mem: &impl PhysMem, root: u64, vaddr: u64) -> (Vec<u64>, Option<(u64, PageSize)>) {
    let mut reads = Vec::with_capacity(4);
    let mut table = root;
    for level in (1..=4).rev() {
        let slot = table + level_index(vaddr, level) * 8;
        reads.push(slot);
        let pte = mem.read_u64(slot);
        if pte & PTE_PRESENT == 0 {
            return (reads, None);
        }
        if level == 2 && pte & PTE_HUGE != 0 {
            return (reads, Some(((pte & FRAME_MASK & !(PAGE_2M - 1)) + vaddr % PAGE_2M, PageSize::Huge)));
        }
        if level == 1 {
            return (reads, Some(((pte & FRAME_MASK) + vaddr % PAGE_4K, PageSize::Small)));
        }
        table = pte & FRAME_MASK;
    }
    unreachable!("leaf level always returns")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TlbEntry {
    pub vpn: u64,
    pub pfn: u64,
    pub page_size: PageSize,
    pub lru_stamp: u64,
    /// Fill time of the walk that installed the entry.
    pub ready: SimTime,
}

/// Fully associative, true-LRU TLB holding both page sizes.
#[derive(Debug, Clone)]
pub struct Tlb {
    entries: Vec<TlbEntry>,
    capacity: usize,
    clock: u64,
}

impl Tlb {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "TLB needs at least one entry");
        Tlb { entries: Vec::with_capacity(capacity), capacity, clock: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&mut self, vaddr: u64) -> Option<(u64, SimTime)> {
        self.clock += 1;
        let clock = self.clock;
        self.entries.iter_mut().find(|e| vaddr / e.page_size.bytes() == e.vpn).map(|e| {
            e.lru_stamp = clock;
            let ps = e.page_size.bytes();
            (e.pfn * ps + vaddr % ps, e.ready)
        })
    }

    pub fn insert(&mut self, vaddr: u64, paddr: u64, page_size: PageSize, ready: SimTime) {
        self.clock += 1;
        let ps = page_size.bytes();
        let vpn = vaddr / ps;
        self.entries.retain(|e| !(e.page_size == page_size && e.vpn == vpn));
        if self.entries.len() == self.capacity {
            let lru = (0..self.entries.len()).min_by_key(|&i| self.entries[i].lru_stamp).expect("non-empty");
            self.entries.swap_remove(lru);
        }
        self.entries.push(TlbEntry { vpn, pfn: paddr / ps, page_size, lru_stamp: self.clock, ready });
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmuStats {
    pub lookups: u64,
    pub tlb_hits: u64,
    pub walks: u64,
    pub walk_reads: u64,
    pub faults: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Translation {
    Ok { paddr: u64, done: SimTime },
    Fault { vaddr: u64, done: SimTime },
}

impl Translation {
    pub fn done(&self) -> SimTime {
        match *self {
            Translation::Ok { done, .. } | Translation::Fault { done, .. } => done,
        }
    }
}

/// TLB plus walker attached to one cache port.
#[derive(Debug, Clone)]
pub struct Mmu {
    pub tlb: Tlb,
    pub mode: TranslationMode,
    port: Port,
    /// TLB hit latency in ticks.
    hit_ticks: u64,
    walker_busy_until: SimTime,
    pub stats: MmuStats,
}

impl Mmu {
    pub fn new(port: Port, tlb_entries: usize, mode: TranslationMode, hit_ticks: u64) -> Self {
        Mmu {
            tlb: Tlb::new(tlb_entries),
            mode,
            port,
            hit_ticks,
            walker_busy_until: SimTime::ZERO,
            stats: MmuStats::default(),
        }
    }

    /// Translates with the configured mode.
    pub fn translate(&mut self, hier: &mut Hierarchy, root: u64, vaddr: u64, at: SimTime) -> Translation {
        match self.mode {
            TranslationMode::Timed => self.translate_timed(hier, root, vaddr, at),
            TranslationMode::Functional => self.translate_functional(hier, root, vaddr, at),
        }
    }

    /// Instant translation with no TLB state change and no memory traffic.
    pub fn translate_functional(&mut self, hier: &Hierarchy, root: u64, vaddr: u64, at: SimTime) -> Translation {
        self.stats.lookups += 1;
        match walk_path(hier, root, vaddr).1 {
            Some((paddr, _)) => Translation::Ok { paddr, done: at },
            None => {
                self.stats.faults += 1;
                Translation::Fault { vaddr, done: at }
            }
        }
    }

    /// TLB lookup, and on a miss a walk whose reads go through the MMU's
    /// cache port one after another. The single walker serializes misses.
    pub fn translate_timed(&mut self, hier: &mut Hierarchy, root: u64, vaddr: u64, at: SimTime) -> Translation {
        self.stats.lookups += 1;
        let t = at + self.hit_ticks;
        if let Some((paddr, ready)) = self.tlb.lookup(vaddr) {
            self.stats.tlb_hits += 1;
            return Translation::Ok { paddr, done: t.max(ready) };
        }
        self.stats.walks += 1;
        let (reads, outcome) = walk_path(hier, root, vaddr);
        let mut now = t.max(self.walker_busy_until);
        for pte in reads {
            self.stats.walk_reads += 1;
            now = loop {
                match hier.access(self.port, pte, AccessKind::Read, None, now) {
                    Outcome::Done(c) => break c.done,
                    Outcome::Stall { retry_at } => now = retry_at,
                }
            };
        }
        self.walker_busy_until = now;
        match outcome {
            Some((paddr, ps)) => {
                self.tlb.insert(vaddr, paddr, ps, now);
                Translation::Ok { paddr, done: now }
            }
            None => {
                self.stats.faults += 1;
                Translation::Fault { vaddr, done: now }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::HierarchyParams;
    use crate::mem::MemParams;
    use crate::noc::MeshDescription;
    use proptest::prelude::*;

    const TABLES: (u64, u64) = (16 << 20, 64 << 20);
    const DATA: (u64, u64) = (64 << 20, 1 << 30);

    /// Recursive reference walker written against the raw entry format.
    fn oracle_walk(mem: &SparseStore, table: u64, vaddr: u64, level: u32) -> Option<u64> {
        let shift = 12 + 9 * (level - 1);
        let pte = mem.read_u64(table + ((vaddr >> shift) & 511) * 8);
        if pte & 1 == 0 {
            return None;
        }
        let frame = pte & 0x000F_FFFF_FFFF_F000;
        if level == 1 || (level == 2 && pte & 0x80 != 0) {
            return Some(frame + (vaddr & ((1 << shift) - 1)));
        }
        oracle_walk(mem, frame, vaddr, level - 1)
    }

    #[test]
    fn small_pages_create_leaf_entries() {
        let mut mem = SparseStore::new();
        let mut space = AddressSpace::new(&mut mem, TABLES, DATA).unwrap();
        space.map_region(&mut mem, 0x10000, 8192, PageSize::Small).unwrap();
        let (reads, out) = space.walk_path(&mem, 0x10000);
        assert_eq!(reads.len(), 4);
        let leaf = reads[3] & !(PAGE_4K - 1);
        let present = (0..512).filter(|i| mem.read_u64(leaf + i * 8) & PTE_PRESENT != 0).count();
        assert_eq!(present, 2);
        assert_eq!(out.unwrap().0, space.regions()[0].frames[0]);
    }

    #[test]
    fn huge_pages_stop_at_level_two() {
        let mut mem = SparseStore::new();
        let mut space = AddressSpace::new(&mut mem, TABLES, DATA).unwrap();
        let pages_before = space.table_pages();
        space.map_region(&mut mem, 0x4000_0000, 4 << 20, PageSize::Huge).unwrap();
        // one L3 table and one L2 table, no leaf tables
        assert_eq!(space.table_pages() - pages_before, 2);
        let (reads, out) = space.walk_path(&mem, 0x4000_0000 + (2 << 20) + 5);
        assert_eq!(reads.len(), 3);
        let (pa, ps) = out.unwrap();
        assert_eq!(ps, PageSize::Huge);
        assert_eq!(pa, space.regions()[0].frames[1] + 5);
        let l2 = reads[2] & !(PAGE_4K - 1);
        let huge = (0..512).filter(|i| mem.read_u64(l2 + i * 8) & PTE_HUGE != 0).count();
        assert_eq!(huge, 2);
    }

    #[test]
    fn overlap_and_misalignment_are_rejected() {
        let mut mem = SparseStore::new();
        let mut space = AddressSpace::new(&mut mem, TABLES, DATA).unwrap();
        space.map_region(&mut mem, 0x10000, 8192, PageSize::Small).unwrap();
        assert!(matches!(space.map_region(&mut mem, 0x11000, 4096, PageSize::Small), Err(SetupError::Overlap { .. })));
        assert!(matches!(space.map_region(&mut mem, 0x20000, 4096, PageSize::Huge), Err(SetupError::Misaligned { .. })));
        let mut tiny = AddressSpace::new(&mut mem, (0, 8192), (1 << 20, 2 << 20)).unwrap();
        assert!(matches!(tiny.map_region(&mut mem, 0, 2 << 20, PageSize::Small), Err(SetupError::OutOfMemory(_))));
    }

    proptest! {
        #[test]
        fn mapped_addresses_match_recursive_walk(
            maps in proptest::collection::vec((0u64..64, 1u64..4, any::<bool>()), 1..8),
            probes in proptest::collection::vec(0u64..(128u64 << 21), 64),
        ) {
            let mut mem = SparseStore::new();
            let mut space = AddressSpace::new(&mut mem, TABLES, DATA).unwrap();
            for (slot, pages, huge) in maps {
                let ps = if huge { PageSize::Huge } else { PageSize::Small };
                let _ = space.map_region(&mut mem, slot * 2 * PAGE_2M, pages * ps.bytes(), ps);
            }
            for r in space.regions().to_vec() {
                for off in [0, r.len / 2, r.len - 1] {
                    let v = r.vaddr + off;
                    prop_assert_eq!(oracle_walk(&mem, space.root(), v, 4), Some(r.translate(v)));
                    prop_assert_eq!(space.translate(&mem, v).map(|x| x.0), Some(r.translate(v)));
                }
            }
            for v in probes {
                let expect = space.region_of(v).map(|r| r.translate(v));
                prop_assert_eq!(oracle_walk(&mem, space.root(), v, 4), expect);
                prop_assert_eq!(space.translate(&mem, v).map(|x| x.0), expect);
            }
        }
    }

    fn hierarchy() -> Hierarchy {
        let mem = MemParams { channels: 4, fixed_latency: 50_000, channel_gib_per_sec: 4.8, capacity_bytes: 1 << 31 };
        Hierarchy::new(HierarchyParams::defaults(2), MeshDescription::default_4x3(), 250, 250, mem)
    }

    #[test]
    fn timed_walk_counts_and_hit_latency() {
        let mut h = hierarchy();
        let mut space = AddressSpace::new(&mut h, TABLES, DATA).unwrap();
        space.map_region(&mut h, 0x10000, 4 * PAGE_4K, PageSize::Small).unwrap();
        space.map_region(&mut h, 0x4000_0000, PAGE_2M, PageSize::Huge).unwrap();
        let mut mmu = Mmu::new(Port::Walk(0), 64, TranslationMode::Timed, 250);
        let r = mmu.translate_timed(&mut h, space.root(), 0x10008, SimTime(0));
        assert_eq!(mmu.stats.walk_reads, 4);
        let Translation::Ok { paddr, done } = r else { panic!("fault") };
        assert_eq!(paddr, space.regions()[0].frames[0] + 8);
        let hit = mmu.translate_timed(&mut h, space.root(), 0x10010, done);
        assert_eq!(hit, Translation::Ok { paddr: paddr + 8, done: done + 250 });
        mmu.translate_timed(&mut h, space.root(), 0x4000_1000, done);
        assert_eq!(mmu.stats.walk_reads, 7);
    }

    #[test]
    fn walk_with_l2_resident_tables_costs_four_l2_hits() {
        let mut h = hierarchy();
        let mut space = AddressSpace::new(&mut h, TABLES, DATA).unwrap();
        space.map_region(&mut h, 0x10000, PAGE_4K, PageSize::Small).unwrap();
        let mut mmu = Mmu::new(Port::Walk(0), 1, TranslationMode::Timed, 250);
        // warm the table lines into L2, then force a miss with another page
        let done = mmu.translate_timed(&mut h, space.root(), 0x10000, SimTime(0)).done();
        space.map_region(&mut h, 0x11000, PAGE_4K, PageSize::Small).unwrap();
        let start = done + 1_000_000;
        let t = mmu.translate_timed(&mut h, space.root(), 0x11000, start).done();
        // TLB lookup, then four (L1 tag + L2 hit) reads
        assert_eq!(t.0 - start.0, 250 + 4 * (4 + 12) * 250);
    }

    #[test]
    fn single_entry_tlb_thrashes_on_alternating_pages() {
        let mut h = hierarchy();
        let mut space = AddressSpace::new(&mut h, TABLES, DATA).unwrap();
        space.map_region(&mut h, 0x10000, 2 * PAGE_4K, PageSize::Small).unwrap();
        let mut mmu = Mmu::new(Port::Engine, 1, TranslationMode::Timed, 1000);
        let mut t = SimTime(0);
        for i in 0..20 {
            t = mmu.translate_timed(&mut h, space.root(), 0x10000 + (i % 2) * PAGE_4K, t).done();
        }
        assert_eq!(mmu.stats.tlb_hits, 0);
        assert_eq!(mmu.stats.walks, 20);
    }

    #[test]
    fn functional_matches_timed_and_faults_alike() {
        let mut h = hierarchy();
        let mut space = AddressSpace::new(&mut h, TABLES, DATA).unwrap();
        space.map_region(&mut h, 0x10000, PAGE_4K, PageSize::Small).unwrap();
        let mut timed = Mmu::new(Port::Engine, 1, TranslationMode::Timed, 1000);
        let mut func = Mmu::new(Port::Engine, 1, TranslationMode::Functional, 1000);
        for v in [0x10000u64, 0x10ff8, 0x20000, 0] {
            let a = timed.translate(&mut h, space.root(), v, SimTime(0));
            let b = func.translate(&mut h, space.root(), v, SimTime(0));
            match (a, b) {
                (Translation::Ok { paddr: x, .. }, Translation::Ok { paddr: y, done }) => {
                    assert_eq!(x, y);
                    assert_eq!(done, SimTime(0));
                }
                (Translation::Fault { .. }, Translation::Fault { .. }) => {}
                other => panic!("disagree: {other:?}"),
            }
        }
        assert_eq!(func.stats.walk_reads, 0);
    }
}
