//! Line-granularity write-combining buffer of the quicksort engine. A line
//! stays buffered until every sub-array expected to write into it has done
//! so and all of its bytes are valid; it is then released as one write.

use serde::{Deserialize, Serialize};

const ALL: u64 = u64::MAX;

fn span_mask(span: std::ops::Range<usize>) -> u64 {
    debug_assert!(span.end <= 64 && span.start <= span.end);
    if span.is_empty() {
        return 0;
    }
    let len = span.end - span.start;
    let bits = if len == 64 { ALL } else { (1u64 << len) - 1 };
    bits << span.start
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SbEntry {
    /// Line-aligned virtual address.
    pub line: u64,
    pub data: [u8; 64],
    pub valid: u64,
    pub expected_writers: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SbFull;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SbRead {
    Hit([u8; 64]),
    /// Buffered but some requested bytes are not yet valid.
    Partial,
    Miss,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SbStats {
    pub writes: u64,
    pub allocations: u64,
    pub releases: u64,
    pub forwards: u64,
    pub full_stalls: u64,
}

#[derive(Debug, Clone)]
pub struct StoreBuffer {
    entries: Vec<SbEntry>,
    capacity: usize,
    pub stats: SbStats,
}

impl StoreBuffer {
    pub fn new(capacity: usize) -> Self {
        StoreBuffer { entries: Vec::with_capacity(capacity), capacity: capacity.max(1), stats: SbStats::default() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn entry(&self, line: u64) -> Option<&SbEntry> {
        self.entries.iter().find(|e| e.line == line)
    }

    /// Reads `span` bytes of `line`.
    pub fn read(&mut self, line: u64, span: std::ops::Range<usize>) -> SbRead {
        let Some(e) = self.entries.iter().find(|e| e.line == line) else { return SbRead::Miss };
        let m = span_mask(span);
        if e.valid & m == m {
            self.stats.forwards += 1;
            SbRead::Hit(e.data)
        } else {
            SbRead::Partial
        }
    }

    /// Merges `bytes` at byte offset `span.start` into `line` on behalf of
    /// one writer. A new entry expects `writers` writers in total, this one
    /// included. Returns the line data when the entry is released.
    pub fn write(
        &mut self,
        line: u64,
        span: std::ops::Range<usize>,
        bytes: &[u8],
        writers: u32,
    ) -> Result<Option<[u8; 64]>, SbFull> {
        debug_assert_eq!(span.len(), bytes.len());
        let idx = match self.entries.iter().position(|e| e.line == line) {
            Some(i) => i,
            None => {
                if self.is_full() {
                    self.stats.full_stalls += 1;
                    return Err(SbFull);
                }
                self.stats.allocations += 1;
                self.entries.push(SbEntry { line, data: [0; 64], valid: 0, expected_writers: writers.max(1) });
                self.entries.len() - 1
            }
        };
        self.stats.writes += 1;
        let e = &mut self.entries[idx];
        e.data[span.clone()].copy_from_slice(bytes);
        e.valid |= span_mask(span);
        e.expected_writers = e.expected_writers.saturating_sub(1);
        Ok(self.try_release(idx))
    }

    /// Supplies fetched line data for bytes not yet valid.
    pub fn fill(&mut self, line: u64, fetched: &[u8; 64]) -> Option<[u8; 64]> {
        let idx = self.entries.iter().position(|e| e.line == line)?;
        let e = &mut self.entries[idx];
        for (i, b) in fetched.iter().enumerate() {
            if e.valid & (1 << i) == 0 {
                e.data[i] = *b;
            }
        }
        e.valid = ALL;
        self.try_release(idx)
    }

    fn try_release(&mut self, idx: usize) -> Option<[u8; 64]> {
        let e = &self.entries[idx];
        if e.expected_writers == 0 && e.valid == ALL {
            self.stats.releases += 1;
            Some(self.entries.swap_remove(idx).data)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forwards_buffered_bytes() {
        let mut sb = StoreBuffer::new(16);
        let bytes: Vec<u8> = (0..32).collect();
        assert_eq!(sb.write(0x40, 0..32, &bytes, 2), Ok(None));
        match sb.read(0x40, 0..32) {
            SbRead::Hit(d) => assert_eq!(&d[..32], &bytes[..]),
            other => panic!("{other:?}"),
        }
        assert_eq!(sb.read(0x40, 0..33), SbRead::Partial);
        assert_eq!(sb.read(0x80, 0..4), SbRead::Miss);
    }

    #[test]
    fn single_writer_full_line_releases_once() {
        let mut sb = StoreBuffer::new(16);
        let out = sb.write(0x40, 0..64, &[7; 64], 1).unwrap();
        assert_eq!(out, Some([7; 64]));
        assert!(sb.is_empty());
        assert_eq!(sb.stats.releases, 1);
    }

    #[test]
    fn shared_line_waits_for_all_writers() {
        let mut sb = StoreBuffer::new(16);
        assert_eq!(sb.write(0, 0..64, &[1; 64], 3).unwrap(), None);
        assert_eq!(sb.write(0, 0..20, &[2; 20], 0).unwrap(), None);
        let out = sb.write(0, 20..64, &[3; 44], 0).unwrap().expect("released");
        assert_eq!(&out[..20], &[2; 20]);
        assert_eq!(&out[20..], &[3; 44]);
        assert_eq!(sb.stats.releases, 1);
    }

    #[test]
    fn fill_completes_partial_line_and_full_buffer_stalls() {
        let mut sb = StoreBuffer::new(1);
        assert_eq!(sb.write(0, 8..16, &[9; 8], 1).unwrap(), None);
        assert_eq!(sb.write(64, 0..8, &[1; 8], 1), Err(SbFull));
        let out = sb.fill(0, &[5; 64]).expect("released");
        assert_eq!(&out[..8], &[5; 8]);
        assert_eq!(&out[8..16], &[9; 8]);
        assert!(sb.write(64, 0..8, &[1; 8], 1).is_ok());
    }
}
