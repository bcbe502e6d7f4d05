//! Single-core rig for UC ordering litmus tests.
//!
//! A scripted micro-op list runs on one core against the real cache
//! hierarchy. The UC page is served by a stand-in endpoint that accepts
//! posted stores in arrival order and answers each UC load with the number
//! of UC stores it has accepted so far. Stores can be held until a given
//! time to model a full engine queue; everything behind a held request
//! waits with it.

use std::collections::{BTreeMap, VecDeque};

use crate::cache::{Hierarchy, HierarchyParams};
use crate::cpu::{Core, CoreCtx, CoreParams, Fetch, MicroOp, OpRecord, OpSource, UcKind, UcRequest};
use crate::kernel::SimTime;
use crate::mem::MemParams;
use crate::noc::MeshDescription;
use crate::vmem::{AddressSpace, PageSize};

/// Virtual base of the cacheable data page used by scripts.
pub const DATA_VA: u64 = 0x1000_0000;
/// Virtual address of the UC page; offsets below 4 KiB are forwarded.
pub const UC_VA: u64 = 0x7f00_0000_0000;

const CORE: usize = 1;
const PERIOD: u64 = 250;

#[derive(Debug, Clone)]
pub struct LitmusSetup {
    pub core: CoreParams,
    /// Posted UC stores are not accepted before this time.
    pub hold_stores_until: SimTime,
    /// Core cycles between a UC load reaching the endpoint and its response.
    pub respond_cycles: u64,
    /// Lines of the data page preloaded into the core's caches.
    pub warm_lines: u64,
}

impl Default for LitmusSetup {
    fn default() -> Self {
        LitmusSetup { core: CoreParams::default(), hold_stores_until: SimTime::ZERO, respond_cycles: 20, warm_lines: 0 }
    }
}

/// One request as seen by the UC endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub seq: u64,
    pub kind: UcKind,
    pub at: SimTime,
}

#[derive(Debug, Clone)]
pub struct LitmusOutcome {
    /// Retired ops, indexed by sequence number.
    pub records: Vec<OpRecord>,
    /// UC requests in the order the endpoint accepted them.
    pub deliveries: Vec<Delivery>,
    pub uc_order_violations: u64,
    pub value_mismatches: u64,
}

impl LitmusOutcome {
    pub fn done(&self, seq: u64) -> SimTime {
        self.records[seq as usize].done
    }

    pub fn value(&self, seq: u64) -> u64 {
        self.records[seq as usize].value
    }

    pub fn delivery_order(&self) -> Vec<u64> {
        self.deliveries.iter().map(|d| d.seq).collect()
    }

    pub fn delivered_at(&self, seq: u64) -> Option<SimTime> {
        self.deliveries.iter().find(|d| d.seq == seq).map(|d| d.at)
    }
}

struct Script(VecDeque<MicroOp>);

impl OpSource for Script {
    fn next(&mut self) -> Fetch {
        match self.0.pop_front() {
            Some(op) => Fetch::Op(op),
            None => Fetch::Finished,
        }
    }
}

fn next_edge(t: SimTime) -> SimTime {
    SimTime(t.0.div_ceil(PERIOD) * PERIOD)
}

/// Runs `ops` to completion and reports what the core and endpoint saw.
/// Sequence numbers, `dep` targets included, count from the first op of
/// `ops`; warm-up loads are not numbered.
pub fn run(ops: Vec<MicroOp>, setup: &LitmusSetup) -> LitmusOutcome {
    let mem = MemParams { channels: 4, fixed_latency: 50_000, channel_gib_per_sec: 4.8, capacity_bytes: 1 << 30 };
    let mut hier = Hierarchy::new(HierarchyParams::defaults(2), MeshDescription::default_4x3(), PERIOD, PERIOD, mem);
    let mut space = AddressSpace::new(&mut hier, (16 << 20, 64 << 20), (64 << 20, 1 << 30)).expect("address space");
    space.map_region(&mut hier, DATA_VA, 64 << 10, PageSize::Small).expect("data page");
    let uc = space.map_region(&mut hier, UC_VA, 4096, PageSize::Small).expect("uc page").frames[0];

    let mut core = Core::new(CORE, setup.core, PERIOD);
    core.register_uc(uc, 4096);
    core.trace = Some(Vec::new());
    let skip = setup.warm_lines;
    let mut warm: VecDeque<MicroOp> = (0..skip).map(|l| MicroOp::load(DATA_VA + l * 64, 8)).collect();
    warm.extend(ops.into_iter().map(|mut op| {
        op.shift_deps(skip);
        op
    }));
    core.set_source(Box::new(Script(warm)));

    let root = space.root();
    let mut uc_out: Vec<UcRequest> = Vec::new();
    let mut fifo: VecDeque<UcRequest> = VecDeque::new();
    let mut responses: BTreeMap<(SimTime, u64), u64> = BTreeMap::new();
    let mut deliveries = Vec::new();
    let mut accepted_stores = 0u64;
    let mut core_at = Some(SimTime::ZERO);
    let mut now = SimTime::ZERO;

    loop {
        // deliver whatever has arrived, in order, honoring the store hold
        while let Some(front) = fifo.front() {
            let ready = front.arrive.max(if front.kind == UcKind::Store { setup.hold_stores_until } else { SimTime::ZERO });
            if ready > now {
                break;
            }
            let r = fifo.pop_front().expect("front exists");
            deliveries.push(Delivery { seq: r.seq, kind: r.kind, at: now });
            match r.kind {
                UcKind::Store => {
                    accepted_stores += 1;
                    core.uc_accepted(r.seq);
                    core_at = Some(core_at.map_or(next_edge(now), |t| t.min(next_edge(now))));
                }
                UcKind::Load => {
                    responses.insert((now + setup.respond_cycles * PERIOD, r.seq), accepted_stores);
                }
            }
        }
        while let Some((&(t, seq), &v)) = responses.iter().next() {
            if t > now {
                break;
            }
            responses.remove(&(t, seq));
            core.uc_response(seq, v, t);
            core_at = Some(core_at.map_or(next_edge(now), |c| c.min(next_edge(now))));
        }
        if core_at == Some(now) {
            let mut ctx = CoreCtx { hier: &mut hier, root, uc_out: &mut uc_out, demand: None };
            core_at = core.tick(now, &mut ctx).expect("litmus scripts stay mapped");
            fifo.extend(uc_out.drain(..));
        }
        let mut next = core_at;
        if let Some(f) = fifo.front() {
            let hold = if f.kind == UcKind::Store { setup.hold_stores_until } else { SimTime::ZERO };
            let t = f.arrive.max(hold);
            next = Some(next.map_or(t, |n| n.min(t)));
        }
        if let Some(&(t, _)) = responses.keys().next() {
            next = Some(next.map_or(t, |n| n.min(t)));
        }
        let Some(t) = next else { break };
        now = t;
        assert!(now.0 < 1_000_000_000, "litmus script did not finish");
    }
    assert!(core.finished(now), "litmus script stalled");

    let records: Vec<OpRecord> = core
        .trace
        .take()
        .expect("trace enabled")
        .into_iter()
        .skip(skip as usize)
        .map(|mut r| {
            r.seq -= skip;
            r
        })
        .collect();
    let deliveries = deliveries.into_iter().map(|d: Delivery| Delivery { seq: d.seq - skip, ..d }).collect();
    LitmusOutcome {
        records,
        deliveries,
        uc_order_violations: core.stats.uc_order_violations,
        value_mismatches: core.stats.value_mismatches,
    }
}
