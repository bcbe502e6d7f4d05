//! Private L1/L2 caches, the address-sliced victim L3 with its directory,
//! the engine cache as a directory peer, and stride prefetchers.

mod hierarchy;
mod set_assoc;
mod stride;

pub use hierarchy::{
    AccessKind, CacheStats, Completion, HierStats, Hierarchy, HierarchyParams, Outcome, Port, Source,
};
pub use set_assoc::SetAssoc;
pub use stride::StridePrefetcher;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::LINE_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheGeometry {
    pub capacity_bytes: u64,
    pub associativity: usize,
    /// Cycles in the cache's clock domain.
    pub hit_latency: u64,
    pub tag_latency: u64,
}

impl CacheGeometry {
    pub fn new(capacity_bytes: u64, associativity: usize, hit_latency: u64, tag_latency: u64) -> Self {
        CacheGeometry { capacity_bytes, associativity, hit_latency, tag_latency }
    }

    pub fn sets(&self) -> usize {
        (self.capacity_bytes / (self.associativity.max(1) as u64 * LINE_BYTES)) as usize
    }

    pub fn validate(&self, name: &str) -> Result<(), ConfigError> {
        let bytes = self.capacity_bytes;
        if self.associativity == 0 || bytes == 0 {
            return Err(ConfigError::Invalid(format!("{name}: capacity and associativity must be non-zero")));
        }
        if !bytes.is_multiple_of(self.associativity as u64 * LINE_BYTES) {
            return Err(ConfigError::Invalid(format!(
                "{name}: capacity {bytes} not divisible by associativity x 64"
            )));
        }
        if !self.sets().is_power_of_two() {
            return Err(ConfigError::Invalid(format!("{name}: set count {} is not a power of two", self.sets())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Mesi {
    #[default]
    Invalid,
    Shared,
    Exclusive,
    Modified,
}

impl Mesi {
    pub fn is_valid(self) -> bool {
        self != Mesi::Invalid
    }

    pub fn is_owner(self) -> bool {
        matches!(self, Mesi::Exclusive | Mesi::Modified)
    }
}

/// Home L3 slice of a physical address: line number modulo slice count.
pub fn slice_of(paddr: u64, slices: usize) -> usize {
    ((paddr / LINE_BYTES) % slices as u64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn slice_examples() {
        assert_eq!(slice_of(0, 8), 0);
        assert_eq!(slice_of(0x1C0, 8), 7);
        assert_eq!(slice_of(0x1C0 + 63, 8), 7);
        assert_eq!(slice_of(0x200, 8), 0);
    }

    #[test]
    fn slice_distribution_is_uniform() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000u64;
        let mut hist = [0u64; 8];
        for _ in 0..n {
            hist[slice_of(rng.gen::<u64>() >> 16, 8)] += 1;
        }
        let expected = n as f64 / 8.0;
        let chi2: f64 = hist.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // 7 degrees of freedom: mean 7, sd sqrt(14); 3 sigma bound
        assert!(chi2 < 7.0 + 3.0 * 14f64.sqrt(), "chi2 = {chi2}");
        for &o in &hist {
            assert!((o as f64 - expected).abs() < 3.0 * (expected * 7.0 / 8.0).sqrt());
        }
    }

    #[test]
    fn table_geometries_validate() {
        for (name, g) in [
            ("l1i", CacheGeometry::new(32 << 10, 8, 4, 4)),
            ("l1d", CacheGeometry::new(48 << 10, 12, 4, 4)),
            ("l2", CacheGeometry::new(1 << 20, 16, 12, 12)),
            ("l3", CacheGeometry::new(4 << 20, 16, 8, 8)),
            ("engine", CacheGeometry::new(512 << 10, 8, 4, 4)),
            ("engine-small", CacheGeometry::new(1 << 10, 8, 4, 4)),
        ] {
            g.validate(name).unwrap();
        }
        assert!(CacheGeometry::new(48 << 10, 8, 4, 4).validate("bad").is_err());
    }
}
