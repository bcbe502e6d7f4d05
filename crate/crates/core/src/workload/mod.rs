//! Workload generators: graphs, the BFS kernel and quicksort drivers.
//!
//! Streams are functional-first: each generator runs the algorithm on a
//! host copy of the data as it emits micro-ops, so every address is known
//! and every load carries the value it must observe.

use std::collections::VecDeque;

use crate::cpu::MicroOp;

pub mod bfs;
pub mod graph;
pub mod qsort;

pub use bfs::{bfs_reference, hint_eligible, BfsLayout, BfsResult, BfsSource, BfsStreamInfo, UNVISITED};
pub use graph::{gen_kronecker, CsrGraph, GraphReport, GraphSpec};
pub use qsort::{QsortLayout, QsortMode, QsortOffloadSource, QsortPattern, QsortSoftwareSource, QsortStreamInfo};

/// Virtual base of the workload heap.
pub const HEAP_BASE: u64 = 0x4000_0000;

/// Buffers generated micro-ops and numbers them in fetch order.
///
/// Branch model: with a non-zero `penalty`, a branch flagged as
/// mispredicted costs `penalty` cycles and every later op depends on it.
#[derive(Debug)]
pub(crate) struct Emitter {
    next_seq: u64,
    buf: VecDeque<MicroOp>,
    barrier: Option<u64>,
    penalty: u32,
}

impl Emitter {
    pub(crate) fn new(penalty: u32) -> Self {
        Emitter { next_seq: 0, buf: VecDeque::new(), barrier: None, penalty }
    }

    pub(crate) fn push(&mut self, mut op: MicroOp) -> u64 {
        if let Some(b) = self.barrier {
            if op.deps().len() < crate::cpu::MAX_DEPS && !op.deps().contains(&b) {
                op = op.dep(b);
            }
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.buf.push_back(op);
        seq
    }

    /// Emits a conditional branch resolving when `cond` completes. With a
    /// zero penalty branches are plain one-cycle computes.
    pub(crate) fn branch(&mut self, cond: u64, mispredict: bool) -> u64 {
        let mispredict = mispredict && self.penalty > 0;
        let lat = if mispredict { self.penalty } else { 1 };
        let seq = self.push(MicroOp::compute(lat).dep(cond));
        if mispredict {
            self.barrier = Some(seq);
        }
        seq
    }

    pub(crate) fn pop(&mut self) -> Option<MicroOp> {
        self.buf.pop_front()
    }

    /// Sequence number the next pushed op will receive.
    pub(crate) fn next_seq(&self) -> u64 {
        self.next_seq
    }
}

/// Rounds a heap length up to whole 2 MiB pages.
pub fn heap_len(bytes: u64) -> u64 {
    bytes.max(1).div_ceil(crate::PAGE_2M) * crate::PAGE_2M
}
