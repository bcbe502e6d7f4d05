use super::CacheGeometry;

const INVALID: u64 = u64::MAX;

/// Set-associative tag store with true LRU and per-line metadata `M`.
///
/// Lines are identified by line number (`paddr / 64`). `interleave` divides
/// the line number before set selection so address-sliced caches use the
/// bits above the slice index.
#[derive(Clone)]
pub struct SetAssoc<M> {
    sets: usize,
    ways: usize,
    interleave: u64,
    tags: Vec<u64>,
    stamps: Vec<u64>,
    meta: Vec<M>,
    clock: u64,
}

impl<M: Clone + Default> SetAssoc<M> {
    pub fn new(geom: &CacheGeometry, interleave: u64) -> Self {
        let sets = geom.sets();
        let n = sets * geom.associativity;
        SetAssoc {
            sets,
            ways: geom.associativity,
            interleave: interleave.max(1),
            tags: vec![INVALID; n],
            stamps: vec![0; n],
            meta: vec![M::default(); n],
            clock: 0,
        }
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    fn set_base(&self, line: u64) -> usize {
        (((line / self.interleave) as usize) & (self.sets - 1)) * self.ways
    }

    pub fn find(&self, line: u64) -> Option<usize> {
        let base = self.set_base(line);
        (base..base + self.ways).find(|&i| self.tags[i] == line)
    }

    pub fn contains(&self, line: u64) -> bool {
        self.find(line).is_some()
    }

    pub fn touch(&mut self, idx: usize) {
        self.clock += 1;
        self.stamps[idx] = self.clock;
    }

    pub fn meta(&self, idx: usize) -> &M {
        &self.meta[idx]
    }

    pub fn meta_mut(&mut self, idx: usize) -> &mut M {
        &mut self.meta[idx]
    }

    pub fn tag(&self, idx: usize) -> Option<u64> {
        (self.tags[idx] != INVALID).then_some(self.tags[idx])
    }

    /// Slot that a fill of `line` would use: an invalid way if any, else LRU.
    pub fn victim_slot(&self, line: u64) -> usize {
        let base = self.set_base(line);
        let set = base..base + self.ways;
        if let Some(i) = set.clone().find(|&i| self.tags[i] == INVALID) {
            return i;
        }
        set.min_by_key(|&i| self.stamps[i]).expect("non-empty set")
    }

    /// True when filling `line` would evict a valid line.
    pub fn set_full(&self, line: u64) -> bool {
        let base = self.set_base(line);
        (base..base + self.ways).all(|i| self.tags[i] != INVALID)
    }

    /// Installs `line` at `idx`, returning whatever was there.
    pub fn fill(&mut self, idx: usize, line: u64, meta: M) -> Option<(u64, M)> {
        debug_assert_eq!(self.set_base(line), self.set_base_of_idx(idx));
        let old = self.take(idx);
        self.tags[idx] = line;
        self.meta[idx] = meta;
        self.touch(idx);
        old
    }

    fn set_base_of_idx(&self, idx: usize) -> usize {
        idx / self.ways * self.ways
    }

    /// Invalidates slot `idx`.
    pub fn take(&mut self, idx: usize) -> Option<(u64, M)> {
        if self.tags[idx] == INVALID {
            return None;
        }
        let line = std::mem::replace(&mut self.tags[idx], INVALID);
        Some((line, std::mem::take(&mut self.meta[idx])))
    }

    pub fn remove(&mut self, line: u64) -> Option<M> {
        let idx = self.find(line)?;
        self.take(idx).map(|(_, m)| m)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &M)> {
        self.tags.iter().zip(&self.meta).filter(|(t, _)| **t != INVALID).map(|(t, m)| (*t, m))
    }

    pub fn valid_lines(&self) -> usize {
        self.tags.iter().filter(|&&t| t != INVALID).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SetAssoc<u32> {
        // 2 sets x 2 ways
        SetAssoc::new(&CacheGeometry::new(256, 2, 1, 1), 1)
    }

    #[test]
    fn lru_eviction() {
        let mut c = tiny();
        for line in [0u64, 2] {
            let s = c.victim_slot(line);
            assert!(c.fill(s, line, line as u32).is_none());
        }
        let i0 = c.find(0).unwrap();
        c.touch(i0);
        let s = c.victim_slot(4);
        let evicted = c.fill(s, 4, 4).unwrap();
        assert_eq!(evicted, (2, 2));
        assert!(c.contains(0) && c.contains(4) && !c.contains(2));
        assert!(!c.set_full(1));
    }

    #[test]
    fn interleave_uses_upper_bits() {
        let mut c: SetAssoc<u32> = SetAssoc::new(&CacheGeometry::new(256, 2, 1, 1), 8);
        // lines 0 and 8 differ only above the slice bits -> different sets
        let s0 = c.victim_slot(0);
        c.fill(s0, 0, 0);
        let s8 = c.victim_slot(8);
        assert_ne!(s0 / 2, s8 / 2);
    }
}
