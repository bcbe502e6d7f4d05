//! The engine tile: per-core command queues and status words behind a UC
//! page, a privileged configuration channel reachable only through the
//! driver, the engine MMU, and the accelerator it hosts.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::accel::{Dapf, DapfParams, DigDescriptor, QsortEngine, QsortParams};
use crate::cache::{AccessKind, Completion, Hierarchy, Outcome, Port};
use crate::cpu::Core;
use crate::error::SetupError;
use crate::kernel::SimTime;
use crate::vmem::{AddressSpace, Mmu, PageSize, Translation, TranslationMode};
use crate::PAGE_4K;

/// Byte offset of the command doorbell in a UC page.
pub const DOORBELL_OFFSET: u64 = 0;
/// Byte offset of the status word in a UC page.
pub const STATUS_OFFSET: u64 = 64;

pub const OP_HINT: u8 = 1;
pub const OP_QSORT: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccelKind {
    None,
    #[default]
    Dapf,
    Qsort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EngineStatus {
    Idle,
    Busy,
    Done,
    QueueFull,
    Fault(u64),
}

impl EngineStatus {
    pub fn encode(self) -> u64 {
        match self {
            EngineStatus::Idle => 0,
            EngineStatus::Busy => 1,
            EngineStatus::Done => 2,
            EngineStatus::QueueFull => 3,
            EngineStatus::Fault(v) => (v << 8) | 4,
        }
    }

    pub fn decode(w: u64) -> Option<Self> {
        Some(match w & 0xff {
            0 => EngineStatus::Idle,
            1 => EngineStatus::Busy,
            2 => EngineStatus::Done,
            3 => EngineStatus::QueueFull,
            4 => EngineStatus::Fault(w >> 8),
            _ => return None,
        })
    }
}

/// A task descriptor carried by one 64-byte UC store: opcode in byte 0,
/// seven little-endian argument words from byte 8.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OffloadCommand {
    pub opcode: u8,
    pub args: [u64; 7],
    pub issuing_core: usize,
    /// Sequence number of the UC store that carried it.
    pub seq: u64,
}

impl OffloadCommand {
    pub fn new(opcode: u8, args: &[u64]) -> Self {
        assert!(args.len() <= 7, "at most 56 bytes of arguments");
        let mut a = [0; 7];
        a[..args.len()].copy_from_slice(args);
        OffloadCommand { opcode, args: a, issuing_core: 0, seq: 0 }
    }

    pub fn encode(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[0] = self.opcode;
        for (i, a) in self.args.iter().enumerate() {
            out[8 + i * 8..16 + i * 8].copy_from_slice(&a.to_le_bytes());
        }
        out
    }

    pub fn decode(core: usize, bytes: &[u8; 64]) -> Self {
        let mut args = [0u64; 7];
        for (i, a) in args.iter_mut().enumerate() {
            *a = u64::from_le_bytes(bytes[8 + i * 8..16 + i * 8].try_into().expect("8 bytes"));
        }
        OffloadCommand { opcode: bytes[0], args, issuing_core: core, seq: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineParams {
    pub enabled: bool,
    pub kind: AccelKind,
    pub queue_depth: usize,
    pub tlb_entries: usize,
    pub translation: TranslationMode,
    pub dapf_reads_per_cycle: usize,
    pub dapf_max_pending: usize,
    pub qsort_compares_per_cycle: usize,
    pub qsort_loads_per_cycle: usize,
    pub qsort_lookahead_lines: usize,
    pub qsort_cutoff: usize,
    pub store_buffer_entries: usize,
    /// Engine cycles before a dropped access is retried.
    pub retry_cycles: u64,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            enabled: true,
            kind: AccelKind::Dapf,
            queue_depth: 8,
            tlb_entries: 1,
            translation: TranslationMode::Timed,
            dapf_reads_per_cycle: 2,
            dapf_max_pending: 128,
            qsort_compares_per_cycle: 4,
            qsort_loads_per_cycle: 2,
            qsort_lookahead_lines: 8,
            qsort_cutoff: 16,
            store_buffer_entries: 16,
            retry_cycles: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    pub commands: u64,
    pub rejected: u64,
    pub status_reads: u64,
    pub faults: u64,
    pub dropped: u64,
    pub active_cycles: u64,
}

/// Privileged configuration state. Only [`Driver`] writes it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EngineConfigChannel {
    uc_ranges: Vec<(usize, u64, u64)>,
    dig: Option<DigDescriptor>,
    enabled: bool,
}

impl EngineConfigChannel {
    pub fn uc_ranges(&self) -> &[(usize, u64, u64)] {
        &self.uc_ranges
    }

    pub fn dig(&self) -> Option<&DigDescriptor> {
        self.dig.as_ref()
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }
}

pub enum Accel {
    None,
    Dapf(Dapf),
    Qsort(QsortEngine),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UcLogEntry {
    pub core: usize,
    pub seq: u64,
    pub store: bool,
    pub at: SimTime,
}

pub struct Engine {
    params: EngineParams,
    period: u64,
    queues: Vec<VecDeque<OffloadCommand>>,
    status: Vec<EngineStatus>,
    config: EngineConfigChannel,
    pub mmu: Mmu,
    pub accel: Accel,
    pub stats: EngineStats,
    pub uc_log: Option<Vec<UcLogEntry>>,
}

/// Result of one engine memory access.
#[derive(Debug, Clone, Copy)]
pub enum MemResult {
    Done { paddr: u64, completion: Completion },
    /// Translation found no mapping; the request was discarded.
    Dropped { vaddr: u64, at: SimTime },
    Stall { retry_at: SimTime },
}

#[derive(Debug, Clone, Copy)]
pub enum EngineOp<'a> {
    Read,
    Prefetch,
    Write(&'a [u8; 64]),
}

/// 64-byte virtual-address memory port of the engine: translate through
/// the engine MMU, then access coherently from the engine cache.
pub fn engine_mem(mmu: &mut Mmu, hier: &mut Hierarchy, root: u64, vaddr: u64, op: EngineOp<'_>, at: SimTime) -> MemResult {
    let line_vaddr = vaddr & !63;
    let (paddr, t) = match mmu.translate(hier, root, line_vaddr, at) {
        Translation::Ok { paddr, done } => (paddr, done),
        Translation::Fault { vaddr, done } => return MemResult::Dropped { vaddr, at: done },
    };
    let out = match op {
        EngineOp::Read => hier.access(Port::Engine, paddr, AccessKind::Read, None, t),
        EngineOp::Prefetch => match hier.engine_prefetch(paddr, t) {
            Some(c) => Outcome::Done(c),
            None => Outcome::Stall { retry_at: t + 1000 },
        },
        EngineOp::Write(data) => hier.access(Port::Engine, paddr, AccessKind::Write, Some(&data[..]), t),
    };
    match out {
        Outcome::Done(completion) => MemResult::Done { paddr, completion },
        Outcome::Stall { retry_at } => MemResult::Stall { retry_at },
    }
}

impl Engine {
    pub fn new(params: EngineParams, cores: usize, period: u64) -> Self {
        let accel = match params.kind {
            AccelKind::None => Accel::None,
            AccelKind::Dapf => Accel::Dapf(Dapf::new(DapfParams {
                reads_per_cycle: params.dapf_reads_per_cycle,
                max_pending: params.dapf_max_pending,
            })),
            AccelKind::Qsort => Accel::Qsort(QsortEngine::new(QsortParams {
                compares_per_cycle: params.qsort_compares_per_cycle,
                loads_per_cycle: params.qsort_loads_per_cycle,
                lookahead_lines: params.qsort_lookahead_lines,
                cutoff: params.qsort_cutoff,
                store_buffer_entries: params.store_buffer_entries,
                retry_ticks: params.retry_cycles * period,
                period,
            })),
        };
        Engine {
            period,
            queues: vec![VecDeque::new(); cores],
            status: vec![EngineStatus::Idle; cores],
            config: EngineConfigChannel::default(),
            mmu: Mmu::new(Port::Engine, params.tlb_entries, params.translation, period),
            accel,
            stats: EngineStats::default(),
            uc_log: None,
            params,
        }
    }

    pub fn params(&self) -> &EngineParams {
        &self.params
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn config(&self) -> &EngineConfigChannel {
        &self.config
    }

    pub fn status(&self, core: usize) -> EngineStatus {
        self.status[core]
    }

    pub fn queue_len(&self, core: usize) -> usize {
        self.queues[core].len()
    }

    pub fn queued(&self, core: usize) -> impl Iterator<Item = &OffloadCommand> {
        self.queues[core].iter()
    }

    /// A UC store delivered by core `core`'s forwarder.
    pub fn on_uc_store(&mut self, core: usize, seq: u64, offset: u64, payload: &[u8; 64], at: SimTime) {
        if let Some(log) = self.uc_log.as_mut() {
            log.push(UcLogEntry { core, seq, store: true, at });
        }
        if offset != DOORBELL_OFFSET {
            return;
        }
        let cmd = OffloadCommand { seq, ..OffloadCommand::decode(core, payload) };
        self.enqueue(cmd);
    }

    /// Appends a command to its core's queue, or reports the queue full.
    pub fn enqueue(&mut self, cmd: OffloadCommand) -> bool {
        let core = cmd.issuing_core;
        if self.queues[core].len() >= self.params.queue_depth {
            self.stats.rejected += 1;
            self.status[core] = EngineStatus::QueueFull;
            return false;
        }
        self.stats.commands += 1;
        self.queues[core].push_back(cmd);
        self.status[core] = EngineStatus::Busy;
        true
    }

    /// A UC load delivered by core `core`'s forwarder; returns the word the
    /// response carries.
    pub fn on_uc_load(&mut self, core: usize, seq: u64, offset: u64, at: SimTime) -> u64 {
        if let Some(log) = self.uc_log.as_mut() {
            log.push(UcLogEntry { core, seq, store: false, at });
        }
        self.stats.status_reads += 1;
        if offset == STATUS_OFFSET {
            self.status[core].encode()
        } else {
            0
        }
    }

    pub fn has_work(&self) -> bool {
        let queued = self.queues.iter().any(|q| !q.is_empty());
        match &self.accel {
            Accel::None => false,
            Accel::Dapf(d) => queued || d.busy(),
            Accel::Qsort(q) => queued || q.busy(),
        }
    }

    /// One engine clock edge. Returns whether more work remains.
    pub fn tick(&mut self, now: SimTime, hier: &mut Hierarchy, root: u64) -> bool {
        debug_assert_eq!(now.0 % self.period, 0, "engine logic runs on its own clock edges");
        self.stats.active_cycles += 1;
        let ncores = self.queues.len();
        match &mut self.accel {
            Accel::None => {}
            Accel::Dapf(d) => {
                let dig = self.config.dig.as_ref();
                for c in 0..ncores {
                    while d.can_accept() {
                        let Some(cmd) = self.queues[c].pop_front() else { break };
                        if let (OP_HINT, Some(dig)) = (cmd.opcode, dig) {
                            d.on_hint(dig, cmd.args[0], cmd.seq);
                        }
                    }
                    if self.queues[c].is_empty() && self.status[c] == EngineStatus::Busy {
                        self.status[c] = EngineStatus::Idle;
                    }
                }
                let dropped = d.tick(now, &mut self.mmu, hier, root);
                self.note_drops(dropped, None);
            }
            Accel::Qsort(q) => {
                if !q.busy() {
                    for c in 0..ncores {
                        if let Some(cmd) = self.queues[c].pop_front() {
                            if cmd.opcode == OP_QSORT {
                                q.start(cmd.args[0], cmd.args[1], c);
                                self.status[c] = EngineStatus::Busy;
                                break;
                            }
                        }
                    }
                }
                let owner = q.owner();
                let dropped = q.tick(now, &mut self.mmu, hier, root);
                let finished = owner.filter(|_| !q.busy());
                self.note_drops(dropped, owner);
                if let Some(c) = finished {
                    self.status[c] = EngineStatus::Done;
                }
            }
        }
        self.has_work()
    }

    fn note_drops(&mut self, dropped: Vec<u64>, owner: Option<usize>) {
        for v in dropped {
            self.stats.dropped += 1;
            self.stats.faults += 1;
            if let Some(c) = owner {
                self.status[c] = EngineStatus::Fault(v);
            }
        }
    }
}

/// Outcome of [`Driver::setup`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetupOutcome {
    /// Virtual address of the core's UC page.
    Uc(u64),
    /// No usable engine; run the software path.
    Fallback,
}

/// Initialization data handed to the engine during setup.
#[derive(Debug, Clone, Default)]
pub struct DriverInit {
    pub dig: Option<DigDescriptor>,
}

/// The privileged setup path: maps the UC page, registers its physical
/// range with the core's forwarder and the engine, and installs
/// initialization data through the configuration channel.
pub struct Driver;

impl Driver {
    pub fn setup(
        engine: Option<&mut Engine>,
        core: &mut Core,
        space: &mut AddressSpace,
        hier: &mut Hierarchy,
        uc_vaddr: u64,
        init: DriverInit,
    ) -> Result<SetupOutcome, SetupError> {
        let Some(engine) = engine.filter(|e| e.params.enabled && e.params.kind != AccelKind::None) else {
            return Ok(SetupOutcome::Fallback);
        };
        let region = space.map_region(hier, uc_vaddr, PAGE_4K, PageSize::Small)?;
        let pa = region.frames[0];
        core.register_uc(pa, PAGE_4K);
        engine.config.uc_ranges.push((core.id, pa, PAGE_4K));
        engine.config.enabled = true;
        if let Some(dig) = init.dig {
            engine.config.dig = Some(dig);
        }
        Ok(SetupOutcome::Uc(uc_vaddr))
    }

    /// Virtual address of core `core`'s UC page.
    pub fn uc_page_vaddr(core: usize) -> u64 {
        0x7f00_0000_0000 + core as u64 * PAGE_4K
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_roundtrip() {
        let c = OffloadCommand::new(OP_QSORT, &[0x4000_0000, 1000]);
        let d = OffloadCommand::decode(1, &c.encode());
        assert_eq!(d.opcode, OP_QSORT);
        assert_eq!(d.args[..2], [0x4000_0000, 1000]);
        assert_eq!(d.issuing_core, 1);
    }

    #[test]
    fn status_encoding() {
        for s in [EngineStatus::Idle, EngineStatus::Busy, EngineStatus::Done, EngineStatus::QueueFull, EngineStatus::Fault(0x1234)] {
            assert_eq!(EngineStatus::decode(s.encode()), Some(s));
        }
    }

    #[test]
    fn queue_depth_and_fifo() {
        let mut e = Engine::new(EngineParams { kind: AccelKind::None, ..EngineParams::default() }, 2, 1000);
        let mk = |core, i| OffloadCommand { issuing_core: core, ..OffloadCommand::new(OP_HINT, &[i]) };
        assert!(e.enqueue(mk(0, 0)));
        assert_eq!(e.status(0), EngineStatus::Busy);
        for i in 1..8 {
            assert!(e.enqueue(mk(0, i)));
        }
        assert!(!e.enqueue(mk(0, 8)));
        assert_eq!(e.status(0), EngineStatus::QueueFull);
        assert!(e.enqueue(mk(1, 100)));
        let order: Vec<u64> = e.queued(0).map(|c| c.args[0]).collect();
        assert_eq!(order, (0..8).collect::<Vec<_>>());
        assert_eq!(e.queue_len(1), 1);
    }

    #[test]
    fn commands_cannot_reach_config_channel() {
        let mut e = Engine::new(EngineParams::default(), 1, 1000);
        let before = e.config().clone();
        for op in 0..=255u8 {
            let mut payload = [op; 64];
            payload[0] = op;
            e.on_uc_store(0, 0, DOORBELL_OFFSET, &payload, SimTime(0));
            e.on_uc_store(0, 0, 128, &payload, SimTime(0));
        }
        assert_eq!(e.config(), &before);
    }

    proptest::proptest! {
        #[test]
        fn interleaved_cores_keep_per_core_order(picks in proptest::collection::vec(0usize..2, 0..16)) {
            let mut e = Engine::new(EngineParams { kind: AccelKind::None, queue_depth: 16, ..EngineParams::default() }, 2, 1000);
            let mut sent = [Vec::new(), Vec::new()];
            for (i, &c) in picks.iter().enumerate() {
                let cmd = OffloadCommand::new(OP_HINT, &[i as u64]);
                e.on_uc_store(c, i as u64, DOORBELL_OFFSET, &cmd.encode(), SimTime(i as u64));
                sent[c].push(i as u64);
            }
            for c in 0..2 {
                let got: Vec<u64> = e.queued(c).map(|x| x.args[0]).collect();
                proptest::prop_assert_eq!(&got, &sent[c]);
            }
        }
    }
}
