//! Per-stream reference-prediction stride prefetcher.

use crate::{LINE_BYTES, PAGE_4K};

#[derive(Debug, Clone, Copy)]
struct Entry {
    stream: u32,
    last: u64,
    stride: i64,
    stamp: u64,
}

#[derive(Debug, Clone)]
pub struct StridePrefetcher {
    entries: Vec<Entry>,
    capacity: usize,
    degree: u32,
    clock: u64,
}

impl StridePrefetcher {
    pub fn new(capacity: usize, degree: u32) -> Self {
        StridePrefetcher { entries: Vec::with_capacity(capacity), capacity: capacity.max(1), degree, clock: 0 }
    }

    /// Records an access by `stream` to `addr` and returns line-aligned
    /// prefetch candidates. Two consecutive equal non-zero strides trigger
    /// `degree` prefetches; candidates never leave the 4 KiB page of `addr`.
    pub fn observe(&mut self, stream: u32, addr: u64) -> Vec<u64> {
        self.clock += 1;
        let clock = self.clock;
        let Some(e) = self.entries.iter_mut().find(|e| e.stream == stream) else {
            if self.entries.len() == self.capacity {
                let lru = (0..self.entries.len()).min_by_key(|&i| self.entries[i].stamp).unwrap();
                self.entries.swap_remove(lru);
            }
            self.entries.push(Entry { stream, last: addr, stride: 0, stamp: clock });
            return Vec::new();
        };
        e.stamp = clock;
        let stride = addr.wrapping_sub(e.last) as i64;
        e.last = addr;
        if stride == 0 || stride != e.stride {
            e.stride = stride;
            return Vec::new();
        }
        let page = addr / PAGE_4K;
        let cur_line = addr / LINE_BYTES;
        let mut out: Vec<u64> = Vec::new();
        for k in 1..=self.degree as i64 {
            let a = addr.wrapping_add((stride * k) as u64);
            if a / PAGE_4K != page {
                break;
            }
            let line = a / LINE_BYTES * LINE_BYTES;
            if a / LINE_BYTES != cur_line && out.last() != Some(&line) {
                out.push(line);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_unit_line_stride() {
        let mut p = StridePrefetcher::new(64, 4);
        assert!(p.observe(1, 0x100).is_empty());
        assert!(p.observe(1, 0x140).is_empty());
        let out = p.observe(1, 0x180);
        assert_eq!(out[0], 0x1C0);
        assert_eq!(out, vec![0x1C0, 0x200, 0x240, 0x280]);
    }

    #[test]
    fn irregular_stream_is_quiet() {
        let mut p = StridePrefetcher::new(64, 4);
        for a in [0x100, 0x348, 0x090] {
            assert!(p.observe(7, a).is_empty());
        }
    }

    #[test]
    fn streams_are_independent_and_page_bounded() {
        let mut p = StridePrefetcher::new(2, 4);
        p.observe(1, 0xF00);
        p.observe(2, 0x5000);
        p.observe(1, 0xF40);
        let out = p.observe(1, 0xF80);
        assert_eq!(out, vec![0xFC0]);
        // third stream evicts LRU (stream 2)
        p.observe(3, 0);
        p.observe(2, 0x5040);
        assert!(p.observe(2, 0x5080).is_empty());
    }
}
