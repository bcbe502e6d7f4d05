//! Accelerators hosted by the engine tile.

pub mod dapf;
pub mod qsort;
pub mod store_buffer;

pub use dapf::{Dapf, DapfParams, DapfStats, DigDescriptor, DigEdge, DigNode, DigNodeKind, DigRelation, HintTrace};
pub use qsort::{qsort_reference, LineWrite, QsortCounts, QsortEngine, QsortParams, QsortStats};
pub use store_buffer::{SbEntry, SbFull, SbRead, SbStats, StoreBuffer};
