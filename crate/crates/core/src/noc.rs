//! 2D mesh network-on-chip with dimension-ordered (XY) routing.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::kernel::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub x: u32,
    pub y: u32,
}

impl Coord {
    pub const fn new(x: u32, y: u32) -> Self {
        Coord { x, y }
    }

    pub fn manhattan(self, other: Coord) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TileKind {
    /// Core, private L1/L2 and one L3 slice.
    Core,
    /// L3 slice only.
    L3Only,
    Engine,
    Mem,
    Empty,
}

impl TileKind {
    pub fn token(self) -> char {
        match self {
            TileKind::Core => 'C',
            TileKind::L3Only => 'L',
            TileKind::Engine => 'E',
            TileKind::Mem => 'M',
            TileKind::Empty => '.',
        }
    }

    pub fn has_l3_slice(self) -> bool {
        matches!(self, TileKind::Core | TileKind::L3Only)
    }
}

impl FromStr for TileKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Ok(match s {
            "C" => TileKind::Core,
            "L" => TileKind::L3Only,
            "E" => TileKind::Engine,
            "M" => TileKind::Mem,
            "." => TileKind::Empty,
            other => return Err(ConfigError::Invalid(format!("unknown tile token `{other}` (expected C, L, E, M or .)"))),
        })
    }
}

/// Grid placement of tiles; row 0 is `y == 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeshDescription {
    width: u32,
    height: u32,
    tiles: Vec<TileKind>,
}

impl MeshDescription {
    pub fn new(width: u32, height: u32, tiles: Vec<TileKind>) -> Result<Self, ConfigError> {
        if width == 0 || height == 0 {
            return Err(ConfigError::Invalid("mesh must be at least 1x1".into()));
        }
        if tiles.len() != (width * height) as usize {
            return Err(ConfigError::Invalid(format!(
                "mesh has {} tiles, expected {}x{}",
                tiles.len(),
                width,
                height
            )));
        }
        let count = |k| tiles.iter().filter(|&&t| t == k).count();
        if count(TileKind::Mem) == 0 {
            return Err(ConfigError::Invalid("mesh needs at least one MemTile".into()));
        }
        if count(TileKind::Engine) > 1 {
            return Err(ConfigError::Invalid("mesh has more than one EngineTile".into()));
        }
        if count(TileKind::Core) == 0 {
            return Err(ConfigError::Invalid("mesh needs at least one CoreTile".into()));
        }
        if !tiles.iter().any(|t| t.has_l3_slice()) {
            return Err(ConfigError::Invalid("mesh has no L3 slice".into()));
        }
        Ok(MeshDescription { width, height, tiles })
    }

    /// Parses rows of whitespace-separated tile tokens.
    pub fn from_rows<S: AsRef<str>>(rows: &[S]) -> Result<Self, ConfigError> {
        let mut tiles = Vec::new();
        let mut width = None;
        for (y, row) in rows.iter().enumerate() {
            let toks: Vec<TileKind> = row.as_ref().split_whitespace().map(str::parse).collect::<Result<_, _>>()?;
            match width {
                None => width = Some(toks.len()),
                Some(w) if w != toks.len() => {
                    return Err(ConfigError::Invalid(format!("mesh row {y} has {} tiles, expected {w}", toks.len())))
                }
                _ => {}
            }
            tiles.extend(toks);
        }
        MeshDescription::new(width.unwrap_or(0) as u32, rows.len() as u32, tiles)
    }

    pub fn to_rows(&self) -> Vec<String> {
        (0..self.height)
            .map(|y| {
                (0..self.width)
                    .map(|x| self.kind(Coord::new(x, y)).token().to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }

    /// 4x3 mesh: two CoreTiles, six L3OnlyTiles, two MemTiles and the engine
    /// in a corner.
    pub fn default_4x3() -> Self {
        MeshDescription::from_rows(&["C C L L", "L L L L", "M . M E"]).expect("default mesh")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn kind(&self, c: Coord) -> TileKind {
        self.tiles[(c.y * self.width + c.x) as usize]
    }

    fn coords_of(&self, pred: impl Fn(TileKind) -> bool) -> Vec<Coord> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let c = Coord::new(x, y);
                if pred(self.kind(c)) {
                    out.push(c);
                }
            }
        }
        out
    }

    /// CoreTiles in row-major order; index is the core id.
    pub fn cores(&self) -> Vec<Coord> {
        self.coords_of(|k| k == TileKind::Core)
    }

    /// Tiles holding an L3 slice in row-major order; index is the slice id.
    pub fn l3_slices(&self) -> Vec<Coord> {
        self.coords_of(TileKind::has_l3_slice)
    }

    pub fn mem_tiles(&self) -> Vec<Coord> {
        self.coords_of(|k| k == TileKind::Mem)
    }

    pub fn engine(&self) -> Option<Coord> {
        self.coords_of(|k| k == TileKind::Engine).first().copied()
    }
}

/// Dimension-ordered path from `src` to `dst`, excluding `src`.
pub fn xy_route(mesh: &MeshDescription, src: Coord, dst: Coord) -> Result<Vec<Coord>, ConfigError> {
    for c in [src, dst] {
        if !mesh.contains(c) {
            return Err(ConfigError::Invalid(format!("coordinate {c} outside {}x{} mesh", mesh.width, mesh.height)));
        }
    }
    let mut path = Vec::with_capacity(src.manhattan(dst) as usize);
    let mut cur = src;
    while cur.x != dst.x {
        cur.x = if dst.x > cur.x { cur.x + 1 } else { cur.x - 1 };
        path.push(cur);
    }
    while cur.y != dst.y {
        cur.y = if dst.y > cur.y { cur.y + 1 } else { cur.y - 1 };
        path.push(cur);
    }
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MsgKind {
    Request,
    Response,
    Snoop,
    Writeback,
    UcForward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NocMessage {
    pub kind: MsgKind,
    pub src: Coord,
    pub dst: Coord,
    pub address: u64,
    pub payload_bytes: u32,
    pub transaction_id: u64,
}

impl NocMessage {
    pub const DATA_BYTES: u32 = 64;
    pub const CTRL_BYTES: u32 = 8;

    pub fn control(kind: MsgKind, src: Coord, dst: Coord, address: u64) -> Self {
        NocMessage { kind, src, dst, address, payload_bytes: Self::CTRL_BYTES, transaction_id: 0 }
    }

    pub fn data(kind: MsgKind, src: Coord, dst: Coord, address: u64) -> Self {
        NocMessage { kind, src, dst, address, payload_bytes: Self::DATA_BYTES, transaction_id: 0 }
    }

    pub fn carries_data(&self) -> bool {
        self.payload_bytes == Self::DATA_BYTES
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NocStats {
    pub sent: u64,
    pub delivered: u64,
    pub data_messages: u64,
    pub control_messages: u64,
    pub total_hops: u64,
    pub contention_ticks: u64,
}

/// Latency model: each router traversal costs `router`, each link `link`
/// (ticks). Data messages serialize on every link they cross, one per core
/// cycle; control messages do not.
pub struct Noc {
    mesh: MeshDescription,
    router: u64,
    link: u64,
    slot: u64,
    link_slots: Vec<BTreeSet<u64>>,
    last_pair: HashMap<(Coord, Coord), SimTime>,
    in_flight: BinaryHeap<Reverse<SimTime>>,
    next_txn: u64,
    pub stats: NocStats,
}

impl Noc {
    /// `router`, `link` and `slot` are in ticks; `slot` is the serialization
    /// period of a 64-byte payload on one link.
    pub fn new(mesh: MeshDescription, router: u64, link: u64, slot: u64) -> Self {
        let nlinks = (mesh.width * mesh.height * 4) as usize;
        Noc {
            mesh,
            router,
            link,
            slot: slot.max(1),
            link_slots: vec![BTreeSet::new(); nlinks],
            last_pair: HashMap::new(),
            in_flight: BinaryHeap::new(),
            next_txn: 0,
            stats: NocStats::default(),
        }
    }

    pub fn mesh(&self) -> &MeshDescription {
        &self.mesh
    }

    /// Contention-free latency for a path of `hops` hops.
    pub fn unloaded_latency(&self, hops: u32) -> u64 {
        self.router * (hops as u64 + 1) + self.link * hops as u64
    }

    fn link_index(&self, from: Coord, to: Coord) -> usize {
        let dir = if to.x > from.x {
            0
        } else if to.x < from.x {
            1
        } else if to.y > from.y {
            2
        } else {
            3
        };
        ((from.y * self.mesh.width + from.x) * 4 + dir) as usize
    }

    /// Injects `msg` at `at`; returns its delivery time.
    pub fn send(&mut self, mut msg: NocMessage, at: SimTime) -> SimTime {
        msg.transaction_id = self.next_txn;
        self.next_txn += 1;
        let path = xy_route(&self.mesh, msg.src, msg.dst).expect("NoC endpoints validated at build time");
        let mut t = at.0 + self.router;
        let mut prev = msg.src;
        for &hop in &path {
            if msg.carries_data() {
                let li = self.link_index(prev, hop);
                let slots = &mut self.link_slots[li];
                let mut s = t / self.slot;
                while slots.contains(&s) {
                    s += 1;
                }
                slots.insert(s);
                let depart = t.max(s * self.slot);
                self.stats.contention_ticks += depart - t;
                t = depart;
            }
            t += self.link + self.router;
            prev = hop;
        }
        let mut delivery = SimTime(t);
        let last = self.last_pair.entry((msg.src, msg.dst)).or_insert(SimTime::ZERO);
        if delivery < *last {
            delivery = *last;
        }
        *last = delivery;

        self.stats.sent += 1;
        self.stats.total_hops += path.len() as u64;
        if msg.carries_data() {
            self.stats.data_messages += 1;
        } else {
            self.stats.control_messages += 1;
        }
        self.in_flight.push(Reverse(delivery));
        delivery
    }

    /// Retires messages delivered by `now` and forgets link reservations
    /// older than `now`; future sends never depart before `now`.
    pub fn advance(&mut self, now: SimTime) {
        while let Some(&Reverse(t)) = self.in_flight.peek() {
            if t > now {
                break;
            }
            self.in_flight.pop();
            self.stats.delivered += 1;
        }
        let floor = now.0 / self.slot;
        for slots in &mut self.link_slots {
            while let Some(&first) = slots.first() {
                if first >= floor {
                    break;
                }
                slots.pop_first();
            }
        }
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn grid_bfs(mesh: &MeshDescription, src: Coord, dst: Coord) -> u32 {
        let mut dist = HashMap::new();
        let mut q = VecDeque::new();
        dist.insert(src, 0u32);
        q.push_back(src);
        while let Some(c) = q.pop_front() {
            let d = dist[&c];
            if c == dst {
                return d;
            }
            let mut nbrs = Vec::new();
            if c.x > 0 {
                nbrs.push(Coord::new(c.x - 1, c.y));
            }
            if c.y > 0 {
                nbrs.push(Coord::new(c.x, c.y - 1));
            }
            nbrs.push(Coord::new(c.x + 1, c.y));
            nbrs.push(Coord::new(c.x, c.y + 1));
            for n in nbrs {
                if mesh.contains(n) && !dist.contains_key(&n) {
                    dist.insert(n, d + 1);
                    q.push_back(n);
                }
            }
        }
        unreachable!()
    }

    #[test]
    fn route_examples() {
        let mesh = MeshDescription::default_4x3();
        assert!(xy_route(&mesh, Coord::new(1, 1), Coord::new(1, 1)).unwrap().is_empty());
        assert_eq!(
            xy_route(&mesh, Coord::new(0, 0), Coord::new(2, 1)).unwrap(),
            vec![Coord::new(1, 0), Coord::new(2, 0), Coord::new(2, 1)]
        );
        assert!(xy_route(&mesh, Coord::new(0, 0), Coord::new(4, 0)).is_err());
    }

    #[test]
    fn route_length_matches_grid_shortest_path() {
        let mesh = MeshDescription::default_4x3();
        for sy in 0..3 {
            for sx in 0..4 {
                for dy in 0..3 {
                    for dx in 0..4 {
                        let (s, d) = (Coord::new(sx, sy), Coord::new(dx, dy));
                        let path = xy_route(&mesh, s, d).unwrap();
                        assert_eq!(path.len() as u32, grid_bfs(&mesh, s, d));
                        if let Some(last) = path.last() {
                            assert_eq!(*last, d);
                        }
                        let mut prev = s;
                        for h in path {
                            assert_eq!(prev.manhattan(h), 1);
                            prev = h;
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn unloaded_latency_formula() {
        let mesh = MeshDescription::default_4x3();
        let mut noc = Noc::new(mesh, 250, 250, 250);
        let local = noc.send(NocMessage::control(MsgKind::Request, Coord::new(0, 0), Coord::new(0, 0), 0), SimTime(0));
        assert_eq!(local, SimTime(250));
        let three = noc.send(NocMessage::data(MsgKind::Response, Coord::new(0, 0), Coord::new(2, 1), 0), SimTime(0));
        assert_eq!(three, SimTime(7 * 250));
    }

    #[test]
    fn per_pair_fifo_and_no_loss() {
        let mesh = MeshDescription::default_4x3();
        let mut noc = Noc::new(mesh, 250, 250, 250);
        let (a, b) = (Coord::new(0, 0), Coord::new(3, 2));
        let d1 = noc.send(NocMessage::data(MsgKind::Response, a, b, 0), SimTime(0));
        let d2 = noc.send(NocMessage::control(MsgKind::Request, a, b, 64), SimTime(1));
        assert!(d2 >= d1);
        // a second data message on the same links must wait for its slot
        let d3 = noc.send(NocMessage::data(MsgKind::Response, a, b, 128), SimTime(0));
        assert!(d3 > d1);
        noc.advance(SimTime::MAX);
        assert_eq!(noc.stats.sent, noc.stats.delivered);
        assert_eq!(noc.in_flight(), 0);
    }

    #[test]
    fn mesh_validation() {
        assert!(MeshDescription::from_rows(&["C L", "L L"]).is_err());
        assert!(MeshDescription::from_rows(&["C E", "E M"]).is_err());
        assert!(MeshDescription::from_rows(&["C L", "M"]).is_err());
        assert!(MeshDescription::from_rows(&["C X"]).is_err());
        let m = MeshDescription::default_4x3();
        assert_eq!(m.cores().len(), 2);
        assert_eq!(m.l3_slices().len(), 8);
        assert_eq!(m.mem_tiles().len(), 2);
        assert_eq!(m.engine(), Some(Coord::new(3, 2)));
        assert_eq!(MeshDescription::from_rows(&m.to_rows()).unwrap(), m);
    }
}
