//! MemTile memory controllers: a per-channel FIFO bandwidth/latency model
//! over a sparse backing store.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;
use crate::LINE_BYTES;

const STORE_PAGE: u64 = 4096;
/// Address-to-channel and address-to-MemTile interleaving granularity.
pub const INTERLEAVE_BYTES: u64 = 4096;

/// Zero-initialized physical memory, allocated on first touch.
#[derive(Default, Clone)]
pub struct SparseStore {
    pages: HashMap<u64, Box<[u8; STORE_PAGE as usize]>>,
}

impl SparseStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(&self, addr: u64, buf: &mut [u8]) {
        for (i, b) in buf.iter_mut().enumerate() {
            let a = addr + i as u64;
            *b = self.pages.get(&(a / STORE_PAGE)).map_or(0, |p| p[(a % STORE_PAGE) as usize]);
        }
    }

    pub fn write(&mut self, addr: u64, data: &[u8]) {
        for (i, &b) in data.iter().enumerate() {
            let a = addr + i as u64;
            let page = self.pages.entry(a / STORE_PAGE).or_insert_with(|| Box::new([0; STORE_PAGE as usize]));
            page[(a % STORE_PAGE) as usize] = b;
        }
    }

    pub fn read_line(&self, line_addr: u64) -> [u8; 64] {
        let mut out = [0u8; 64];
        debug_assert_eq!(line_addr % LINE_BYTES, 0);
        if let Some(p) = self.pages.get(&(line_addr / STORE_PAGE)) {
            let off = (line_addr % STORE_PAGE) as usize;
            out.copy_from_slice(&p[off..off + 64]);
        }
        out
    }

    pub fn write_line(&mut self, line_addr: u64, data: &[u8; 64]) {
        self.write(line_addr, data);
    }

    pub fn read_u64(&self, addr: u64) -> u64 {
        let mut b = [0u8; 8];
        self.read(addr, &mut b);
        u64::from_le_bytes(b)
    }

    pub fn write_u64(&mut self, addr: u64, v: u64) {
        self.write(addr, &v.to_le_bytes());
    }

    /// Touched pages in address order, for image comparison.
    pub fn touched_pages(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.pages.keys().copied().collect();
        v.sort_unstable();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemKind {
    Read,
    Writeback,
}

#[derive(Debug, Clone, Default)]
pub struct MemChannelState {
    pub busy_until: SimTime,
    pub requests: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MemStats {
    pub reads: u64,
    pub writebacks: u64,
    pub bytes: u64,
    pub first_start: Option<SimTime>,
    pub last_complete: SimTime,
}

impl MemStats {
    /// Achieved bandwidth in bytes per second over the active interval.
    pub fn achieved_bytes_per_sec(&self) -> f64 {
        match self.first_start {
            Some(s) if self.last_complete > s => self.bytes as f64 / ((self.last_complete.0 - s.0) as f64 * 1e-12),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemParams {
    pub channels: usize,
    /// Fixed access latency in ticks.
    pub fixed_latency: u64,
    /// Per-channel bandwidth in GiB/s.
    pub channel_gib_per_sec: f64,
    pub capacity_bytes: u64,
}

impl MemParams {
    /// Time to transfer one 64-byte line on one channel, in ticks.
    pub fn service_ticks(&self) -> u64 {
        let bytes_per_sec = self.channel_gib_per_sec * (1u64 << 30) as f64;
        (LINE_BYTES as f64 / bytes_per_sec * 1e12).round() as u64
    }
}

pub struct MemSystem {
    params: MemParams,
    service: u64,
    channels: Vec<MemChannelState>,
    pub store: SparseStore,
    pub stats: MemStats,
}

impl MemSystem {
    pub fn new(params: MemParams) -> Self {
        assert!(params.channels > 0);
        MemSystem {
            service: params.service_ticks(),
            channels: vec![MemChannelState::default(); params.channels],
            params,
            store: SparseStore::new(),
            stats: MemStats::default(),
        }
    }

    pub fn params(&self) -> &MemParams {
        &self.params
    }

    pub fn channel_of(&self, addr: u64) -> usize {
        ((addr / INTERLEAVE_BYTES) % self.channels.len() as u64) as usize
    }

    pub fn channel(&self, i: usize) -> &MemChannelState {
        &self.channels[i]
    }

    /// Timing of one line transfer arriving at the controller at `at`.
    /// Data movement is done separately through `store`.
    pub fn access(&mut self, addr: u64, kind: MemKind, at: SimTime) -> SimTime {
        assert!(
            addr < self.params.capacity_bytes,
            "physical address {addr:#x} beyond installed memory {:#x}",
            self.params.capacity_bytes
        );
        let ch = self.channel_of(addr);
        let chan = &mut self.channels[ch];
        let start = at.max(chan.busy_until);
        chan.busy_until = start + self.service;
        chan.requests += 1;
        let done = start + self.params.fixed_latency;
        match kind {
            MemKind::Read => self.stats.reads += 1,
            MemKind::Writeback => self.stats.writebacks += 1,
        }
        self.stats.bytes += LINE_BYTES;
        self.stats.first_start = Some(self.stats.first_start.map_or(start, |s| s.min(start)));
        // the data leaves the channel no earlier than the transfer finishes
        self.stats.last_complete = self.stats.last_complete.max(done).max(chan.busy_until);
        done
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn params() -> MemParams {
        MemParams { channels: 4, fixed_latency: 50_000, channel_gib_per_sec: 4.8, capacity_bytes: 1 << 32 }
    }

    #[test]
    fn idle_channel_latency() {
        let mut m = MemSystem::new(params());
        assert_eq!(m.access(0, MemKind::Read, SimTime(1000)), SimTime(51_000));
    }

    #[test]
    fn back_to_back_reads_serialize() {
        let mut m = MemSystem::new(params());
        // 64 B at 4.8 GiB/s
        let expected = (64.0 / (4.8 * 1073741824.0) * 1e12_f64).round() as u64;
        assert_eq!(m.params().service_ticks(), expected);
        assert!((12_400..12_450).contains(&expected));
        let a = m.access(0, MemKind::Read, SimTime(0));
        let b = m.access(64, MemKind::Read, SimTime(0));
        assert_eq!(b.0 - a.0, expected);
    }

    #[test]
    fn channel_interleave() {
        let m = MemSystem::new(params());
        assert_eq!(m.channel_of(0), 0);
        assert_eq!(m.channel_of(4095), 0);
        assert_eq!(m.channel_of(4096), 1);
        assert_eq!(m.channel_of(4 * 4096), 0);
    }

    #[test]
    fn sustained_random_reads_stay_under_ceiling() {
        let mut m = MemSystem::new(params());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for i in 0..20_000u64 {
            let addr = rng.gen_range(0..(1u64 << 30)) & !63;
            m.access(addr, MemKind::Read, SimTime(i * 100));
        }
        let ceiling = 19.2 * (1u64 << 30) as f64;
        let bw = m.stats.achieved_bytes_per_sec();
        assert!(bw <= ceiling, "{bw} > {ceiling}");
        assert!(bw > 0.5 * ceiling, "saturating load should approach the ceiling, got {bw}");
    }

    #[test]
    #[should_panic(expected = "beyond installed memory")]
    fn out_of_range_is_fatal() {
        let mut m = MemSystem::new(params());
        m.access(1 << 33, MemKind::Read, SimTime(0));
    }

    #[test]
    fn store_roundtrip() {
        let mut s = SparseStore::new();
        s.write(4094, &[1, 2, 3, 4]);
        let mut b = [0u8; 6];
        s.read(4093, &mut b);
        assert_eq!(b, [0, 1, 2, 3, 4, 0]);
        s.write_u64(128, 0xdead_beef);
        assert_eq!(s.read_u64(128), 0xdead_beef);
        assert_eq!(s.read_line(128)[..4], [0xef, 0xbe, 0xad, 0xde]);
    }
}
