//! Cycle-level simulator of a tiled multicore with a near-cache engine.

pub mod accel;
pub mod cache;
pub mod config;
pub mod cpu;
pub mod engine;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod litmus;
pub mod mem;
pub mod noc;
pub mod system;
pub mod vmem;
pub mod workload;

pub const LINE_BYTES: u64 = 64;
pub const PAGE_4K: u64 = 4096;
pub const PAGE_2M: u64 = 2 << 20;
