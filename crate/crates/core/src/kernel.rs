//! Discrete-event kernel: simulated time, clock domains, the global event
//! queue, and the statistics registry.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Simulated time in picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX >> 1);

    pub fn ticks(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, other: SimTime) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl std::ops::Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: u64) -> SimTime {
        SimTime(self.0 + rhs)
    }
}

impl std::ops::AddAssign<u64> for SimTime {
    fn add_assign(&mut self, rhs: u64) {
        self.0 += rhs;
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ps", self.0)
    }
}

/// Ticks per nanosecond.
pub const TICKS_PER_NS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Core,
    Engine,
}

/// A clock with an integer period in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClockDomain {
    period: u64,
}

impl ClockDomain {
    pub fn from_mhz(mhz: u64) -> Self {
        assert!(mhz > 0 && 1_000_000 % mhz == 0, "clock of {mhz} MHz has no integer period");
        ClockDomain { period: 1_000_000 / mhz }
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn cycles(&self, n: u64) -> u64 {
        n * self.period
    }

    /// The `n`-th rising edge strictly after `now`. `n == 0` snaps to the
    /// current edge if `now` is aligned, otherwise to the next one.
    pub fn edge(&self, now: SimTime, n: u64) -> SimTime {
        if n == 0 {
            return SimTime(now.0.div_ceil(self.period) * self.period);
        }
        SimTime((now.0 / self.period + n) * self.period)
    }

    /// First edge at or after `t`.
    pub fn at_or_after(&self, t: SimTime) -> SimTime {
        self.edge(t, 0)
    }

    pub fn to_cycles(&self, ticks: u64) -> u64 {
        ticks / self.period
    }
}

/// The two clock domains of the modeled chip.
#[derive(Debug, Clone, Copy)]
pub struct Clocks {
    pub core: ClockDomain,
    pub engine: ClockDomain,
}

impl Clocks {
    pub fn new(core_mhz: u64, engine_mhz: u64) -> Self {
        Clocks { core: ClockDomain::from_mhz(core_mhz), engine: ClockDomain::from_mhz(engine_mhz) }
    }

    pub fn domain(&self, d: Domain) -> &ClockDomain {
        match d {
            Domain::Core => &self.core,
            Domain::Engine => &self.engine,
        }
    }

    pub fn clock_edge(&self, d: Domain, now: SimTime, n: u64) -> SimTime {
        self.domain(d).edge(now, n)
    }
}

impl Default for Clocks {
    fn default() -> Self {
        Clocks::new(4000, 1000)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event<P> {
    pub fire_time: SimTime,
    pub sequence: u64,
    pub payload: P,
}

struct HeapItem<P> {
    key: (SimTime, u64),
    payload: P,
}

impl<P> PartialEq for HeapItem<P> {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl<P> Eq for HeapItem<P> {}
impl<P> PartialOrd for HeapItem<P> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for HeapItem<P> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

/// Global event queue ordered by `(fire_time, sequence)`.
pub struct EventQueue<P> {
    heap: BinaryHeap<Reverse<HeapItem<P>>>,
    now: SimTime,
    next_seq: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue { heap: BinaryHeap::new(), now: SimTime::ZERO, next_seq: 0 }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Enqueues `payload` at `at`; returns the assigned sequence number.
    ///
    /// Scheduling in the past is a simulator bug and panics.
    pub fn schedule(&mut self, at: SimTime, payload: P) -> u64 {
        assert!(at >= self.now, "event scheduled in the past: {at} < now {}", self.now);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(HeapItem { key: (at, seq), payload }));
        seq
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(i)| i.key.0)
    }

    /// Dequeues the next event and advances `now` to its fire time.
    pub fn pop(&mut self) -> Option<Event<P>> {
        let Reverse(item) = self.heap.pop()?;
        debug_assert!(item.key.0 >= self.now);
        self.now = item.key.0;
        Some(Event { fire_time: item.key.0, sequence: item.key.1, payload: item.payload })
    }

    /// Advances `now` without processing events (used when a run stops at a limit).
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitReason {
    Drained,
    LimitReached,
    WorkloadComplete,
}

/// What an event handler asks the loop to do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Complete,
}

/// Processes events in `(time, sequence)` order until the queue drains, the
/// next event lies beyond `limit`, or the handler signals completion.
pub fn run_until<P, F>(queue: &mut EventQueue<P>, limit: SimTime, mut handler: F) -> ExitReason
where
    F: FnMut(&mut EventQueue<P>, Event<P>) -> Flow,
{
    loop {
        match queue.peek_time() {
            None => return ExitReason::Drained,
            Some(t) if t > limit => {
                queue.advance_to(limit);
                return ExitReason::LimitReached;
            }
            Some(_) => {}
        }
        let ev = queue.pop().expect("peeked");
        if handler(queue, ev) == Flow::Complete {
            return ExitReason::WorkloadComplete;
        }
    }
}

/// Fixed-width linear histogram with an overflow bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bucket_width: u64,
    pub buckets: Vec<u64>,
    pub overflow: u64,
    pub count: u64,
    pub sum: u64,
    pub min: Option<u64>,
    pub max: Option<u64>,
}

impl Default for Histogram {
    fn default() -> Self {
        Histogram::new(1, 0)
    }
}

impl Histogram {
    pub fn new(bucket_width: u64, nbuckets: usize) -> Self {
        assert!(bucket_width > 0);
        Histogram {
            bucket_width,
            buckets: vec![0; nbuckets],
            overflow: 0,
            count: 0,
            sum: 0,
            min: None,
            max: None,
        }
    }

    pub fn sample(&mut self, v: u64) {
        let idx = (v / self.bucket_width) as usize;
        match self.buckets.get_mut(idx) {
            Some(b) => *b += 1,
            None => self.overflow += 1,
        }
        self.count += 1;
        self.sum += v;
        self.min = Some(self.min.map_or(v, |m| m.min(v)));
        self.max = Some(self.max.map_or(v, |m| m.max(v)));
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum as f64 / self.count as f64
        }
    }

    pub fn bucket_total(&self) -> u64 {
        self.buckets.iter().sum::<u64>() + self.overflow
    }
}

/// Named counters and histograms. Keys are ordered so dumps are byte-stable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatRegistry {
    counters: BTreeMap<String, u64>,
    histograms: BTreeMap<String, Histogram>,
}

impl StatRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, v: u64) {
        *self.counters.entry(name.to_string()).or_default() += v;
    }

    pub fn inc(&mut self, name: &str) {
        self.add(name, 1);
    }

    pub fn counter(&self, name: &str) -> u64 {
        self.counters.get(name).copied().unwrap_or(0)
    }

    pub fn counters(&self) -> &BTreeMap<String, u64> {
        &self.counters
    }

    pub fn histogram_mut(&mut self, name: &str, bucket_width: u64, nbuckets: usize) -> &mut Histogram {
        self.histograms
            .entry(name.to_string())
            .or_insert_with(|| Histogram::new(bucket_width, nbuckets))
    }

    pub fn histogram(&self, name: &str) -> Option<&Histogram> {
        self.histograms.get(name)
    }

    pub fn histograms(&self) -> &BTreeMap<String, Histogram> {
        &self.histograms
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn csv_header(&self) -> String {
        self.counters.keys().cloned().collect::<Vec<_>>().join(",")
    }

    pub fn csv_row(&self) -> String {
        self.counters.values().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn same_tick_fifo() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(10), 'a');
        q.schedule(SimTime(10), 'b');
        q.schedule(SimTime(9), 'c');
        let order: Vec<char> = std::iter::from_fn(|| q.pop().map(|e| e.payload)).collect();
        assert_eq!(order, vec!['c', 'a', 'b']);
    }

    #[test]
    fn now_fires_before_next_tick() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(1), "later");
        q.schedule(SimTime(0), "now");
        assert_eq!(q.pop().unwrap().payload, "now");
    }

    #[test]
    #[should_panic(expected = "in the past")]
    fn schedule_in_past_panics() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(5), ());
        q.pop();
        q.schedule(SimTime(4), ());
    }

    #[test]
    fn random_events_match_sort_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut q = EventQueue::new();
        let mut expected = Vec::new();
        for i in 0..10_000u32 {
            let t = SimTime(rng.gen_range(0..500));
            let seq = q.schedule(t, i);
            expected.push((t, seq, i));
        }
        expected.sort();
        let got: Vec<_> = std::iter::from_fn(|| q.pop().map(|e| (e.fire_time, e.sequence, e.payload))).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn clock_edges() {
        let c = Clocks::default();
        assert_eq!(c.clock_edge(Domain::Core, SimTime(0), 1), SimTime(250));
        assert_eq!(c.clock_edge(Domain::Engine, SimTime(0), 1), SimTime(1000));
        assert_eq!(c.clock_edge(Domain::Engine, SimTime(999), 1), SimTime(1000));
        assert_eq!(c.clock_edge(Domain::Engine, SimTime(1000), 0), SimTime(1000));
        assert_eq!(c.clock_edge(Domain::Core, SimTime(251), 0), SimTime(500));
    }

    #[test]
    fn run_until_reasons() {
        let mut q: EventQueue<u32> = EventQueue::new();
        assert_eq!(run_until(&mut q, SimTime(10), |_, _| Flow::Continue), ExitReason::Drained);

        q.schedule(SimTime(100), 1);
        q.schedule(SimTime(150), 2);
        let r = run_until(&mut q, SimTime(200), |_, e| if e.payload == 1 { Flow::Complete } else { Flow::Continue });
        assert_eq!(r, ExitReason::WorkloadComplete);
        assert_eq!(q.now(), SimTime(100));

        let r = run_until(&mut q, SimTime(120), |_, _| Flow::Continue);
        assert_eq!(r, ExitReason::LimitReached);
        assert_eq!(q.now(), SimTime(120));
    }

    proptest! {
        #[test]
        fn histogram_count_equals_bucket_total(samples in proptest::collection::vec(0u64..5000, 0..300)) {
            let mut h = Histogram::new(10, 64);
            for s in &samples {
                h.sample(*s);
            }
            prop_assert_eq!(h.count, h.bucket_total());
            prop_assert_eq!(h.count as usize, samples.len());
        }
    }
}
