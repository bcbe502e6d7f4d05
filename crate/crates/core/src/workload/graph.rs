//! CSR graphs: Kronecker synthesis, edge-list text and the CSR1 binary cache.

use std::collections::HashSet;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, GraphError};

const MAGIC: &[u8; 4] = b"CSR1";

/// Undirected graph in compressed sparse row form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrGraph {
    offsets: Vec<u32>,
    neighbors: Vec<u32>,
}

impl CsrGraph {
    /// Builds a CSR from an edge list over nodes `0..n`. Self-loops are
    /// dropped, duplicates merged and every edge stored in both directions.
    pub fn from_edges(n: u32, edges: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n as usize];
        for (u, v) in edges {
            assert!(u < n && v < n, "edge ({u}, {v}) outside 0..{n}");
            if u != v {
                adj[u as usize].push(v);
                adj[v as usize].push(u);
            }
        }
        let mut offsets = Vec::with_capacity(n as usize + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len() as u32);
        }
        CsrGraph { offsets, neighbors }
    }

    /// Wraps raw arrays after checking the CSR invariants.
    pub fn from_parts(offsets: Vec<u32>, neighbors: Vec<u32>) -> Result<Self, GraphError> {
        let g = CsrGraph { offsets, neighbors };
        g.validate().map_err(GraphError::Format)?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.num_nodes();
        if self.offsets.first() != Some(&0) {
            return Err("offsets must start at 0".into());
        }
        if self.offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err("offsets decrease".into());
        }
        if *self.offsets.last().unwrap() as usize != self.neighbors.len() {
            return Err("last offset differs from neighbor count".into());
        }
        if let Some(v) = self.neighbors.iter().find(|&&v| v >= n) {
            return Err(format!("neighbor id {v} out of range"));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> u32 {
        (self.offsets.len() - 1) as u32
    }

    /// Undirected edge count.
    pub fn num_edges(&self) -> u64 {
        self.neighbors.len() as u64 / 2
    }

    pub fn offsets(&self) -> &[u32] {
        &self.offsets
    }

    pub fn neighbor_array(&self) -> &[u32] {
        &self.neighbors
    }

    pub fn neighbors(&self, u: u32) -> &[u32] {
        &self.neighbors[self.offsets[u as usize] as usize..self.offsets[u as usize + 1] as usize]
    }

    pub fn degree(&self, u: u32) -> u32 {
        self.offsets[u as usize + 1] - self.offsets[u as usize]
    }

    /// Each undirected edge once, as `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| self.neighbors(u).iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
    }

    pub fn report(&self) -> GraphReport {
        let n = self.num_nodes() as u64;
        let over = (0..self.num_nodes()).filter(|&u| self.degree(u) > 128).count() as u64;
        GraphReport {
            nodes: n,
            edges: self.num_edges(),
            avg_degree: if n == 0 { 0.0 } else { self.neighbors.len() as f64 / n as f64 },
            nodes_over_128: over,
            frac_over_128: if n == 0 { 0.0 } else { over as f64 / n as f64 },
            footprint_bytes: super::bfs::BfsLayout::new(self, super::HEAP_BASE).footprint(),
        }
    }

    pub fn write_edge_list(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# {} nodes, {} edges", self.num_nodes(), self.num_edges())?;
        for (u, v) in self.edges() {
            writeln!(out, "{u} {v}")?;
        }
        Ok(())
    }

    /// Parses whitespace-separated `u v` pairs. `#` starts a comment.
    pub fn read_edge_list(input: impl BufRead) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        let mut n = 0u32;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("");
            let toks: Vec<&str> = body.split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            let err = |message: String| GraphError::Parse { line: i + 1, message };
            if toks.len() != 2 {
                return Err(err(format!("expected `u v`, found {} fields", toks.len())));
            }
            let parse = |t: &str| t.parse::<u32>().map_err(|e| err(format!("`{t}`: {e}")));
            let (u, v) = (parse(toks[0])?, parse(toks[1])?);
            if u == u32::MAX || v == u32::MAX {
                return Err(err("node id too large".into()));
            }
            n = n.max(u + 1).max(v + 1);
            edges.push((u, v));
        }
        Ok(CsrGraph::from_edges(n, edges))
    }

    pub fn load_edge_list(path: &Path) -> Result<Self, GraphError> {
        Self::read_edge_list(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn write_csr1(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.num_nodes() as u64).to_le_bytes())?;
        out.write_all(&(self.neighbors.len() as u64).to_le_bytes())?;
        for &o in &self.offsets {
            out.write_all(&(o as u64).to_le_bytes())?;
        }
        for &v in &self.neighbors {
            out.write_all(&(v as u64).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_csr1(mut input: impl Read) -> Result<Self, GraphError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(GraphError::Format("missing CSR1 magic".into()));
        }
        let mut word = || -> Result<u64, GraphError> {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let (n, m) = (word()?, word()?);
        if n >= u32::MAX as u64 || m > u32::MAX as u64 {
            return Err(GraphError::Format(format!("graph too large: {n} nodes, {m} entries")));
        }
        let narrow = |x: u64| u32::try_from(x).map_err(|_| GraphError::Format(format!("value {x} exceeds 32 bits")));
        let offsets = (0..=n).map(|_| word().and_then(narrow)).collect::<Result<Vec<_>, _>>()?;
        let neighbors = (0..m).map(|_| word().and_then(narrow)).collect::<Result<Vec<_>, _>>()?;
        Self::from_parts(offsets, neighbors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphReport {
    pub nodes: u64,
    pub edges: u64,
    pub avg_degree: f64,
    pub nodes_over_128: u64,
    pub frac_over_128: f64,
    /// Bytes of the simulated BFS arrays in this artifact's layout.
    pub footprint_bytes: u64,
}

/// Kronecker (R-MAT) generator with the a=0.57, b=0.19, c=0.19 quadrant
/// weights. Draws edges until the deduplicated undirected edge count
/// reaches `n * degree / 2`, then relabels nodes by a seeded permutation.
pub fn gen_kronecker(scale: u32, degree: u32, seed: u64) -> Result<CsrGraph, ConfigError> {
    if scale == 0 || scale > 20 {
        return Err(ConfigError::Invalid(format!("kronecker scale {scale} outside 1..=20")));
    }
    let n = 1u64 << scale;
    let target = n * degree as u64 / 2;
    if target > n * (n - 1) / 4 {
        return Err(ConfigError::Invalid(format!("degree {degree} too dense for scale {scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b, c) = (0.57, 0.19, 0.19);
    let mut seen: HashSet<(u32, u32)> = HashSet::with_capacity(target as usize);
    let mut edges = Vec::with_capacity(target as usize);
    while (edges.len() as u64) < target {
        let (mut u, mut v) = (0u32, 0u32);
        for _ in 0..scale {
            let r: f64 = rng.gen();
            let (bu, bv) = if r < a {
                (0, 0)
            } else if r < a + b {
                (0, 1)
            } else if r < a + b + c {
                (1, 0)
            } else {
                (1, 1)
            };
            u = (u << 1) | bu;
            v = (v << 1) | bv;
        }
        if u == v {
            continue;
        }
        let key = (u.min(v), u.max(v));
        if seen.insert(key) {
            edges.push(key);
        }
    }
    let mut perm: Vec<u32> = (0..n as u32).collect();
    perm.shuffle(&mut rng);
    Ok(CsrGraph::from_edges(n as u32, edges.into_iter().map(|(u, v)| (perm[u as usize], perm[v as usize]))))
}

/// Where a graph comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GraphSpec {
    Kronecker { scale: u32, degree: u32, seed: u64 },
    File { path: PathBuf },
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec::Kronecker { scale: 12, degree: 52, seed: 1 }
    }
}

impl GraphSpec {
    /// Builds or loads the graph. `.csr1` files use the binary format,
    /// anything else is read as an edge list.
    pub fn build(&self) -> Result<CsrGraph, crate::error::SimError> {
        Ok(match self {
            GraphSpec::Kronecker { scale, degree, seed } => gen_kronecker(*scale, *degree, *seed)?,
            GraphSpec::File { path } => {
                if path.extension().is_some_and(|e| e == "csr1") {
                    CsrGraph::read_csr1(std::io::BufReader::new(std::fs::File::open(path)?))?
                } else {
                    CsrGraph::load_edge_list(path)?
                }
            }
        })
    }
}

/// Accepts `kron:scale=12,degree=52,seed=1` (fields optional) or
/// `file:<path>`.
impl FromStr for GraphSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(GraphSpec::File { path: PathBuf::from(path) });
        }
        let body = s
            .strip_prefix("kron")
            .ok_or_else(|| ConfigError::Invalid(format!("graph spec `{s}` must start with `kron` or `file:`")))?;
        let (mut scale, mut degree, mut seed) = (12, 52, 1);
        for kv in body.trim_start_matches(':').split(',').filter(|x| !x.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Invalid(format!("expected key=value, got `{kv}`")))?;
            let num = |v: &str| v.parse::<u64>().map_err(|e| ConfigError::Invalid(format!("`{k}={v}`: {e}")));
            match k {
                "scale" => scale = num(v)? as u32,
                "degree" => degree = num(v)? as u32,
                "seed" => seed = num(v)?,
                _ => return Err(ConfigError::Invalid(format!("unknown graph field `{k}`"))),
            }
        }
        Ok(GraphSpec::Kronecker { scale, degree, seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronecker_is_deterministic() {
        assert_eq!(gen_kronecker(4, 4, 7).unwrap(), gen_kronecker(4, 4, 7).unwrap());
        assert_ne!(gen_kronecker(6, 4, 7).unwrap(), gen_kronecker(6, 4, 8).unwrap());
    }

    #[test]
    fn kronecker_scale12_degree_and_skew() {
        let g = gen_kronecker(12, 52, 1).unwrap();
        let r = g.report();
        assert_eq!(r.nodes, 4096);
        assert!((r.avg_degree - 52.0).abs() <= 5.2, "{}", r.avg_degree);
        assert!(r.frac_over_128 > 0.01, "{}", r.frac_over_128);
        g.validate().unwrap();
    }

    #[test]
    fn symmetric() {
        let g = gen_kronecker(8, 16, 3).unwrap();
        for u in 0..g.num_nodes() {
            for &v in g.neighbors(u) {
                assert!(g.neighbors(v).binary_search(&u).is_ok());
                assert_ne!(u, v);
            }
        }
    }

    #[test]
    fn edge_list_path_and_duplicates() {
        let g = CsrGraph::read_edge_list("0 1\n1 2".as_bytes()).unwrap();
        assert_eq!(g.offsets(), &[0, 1, 3, 4]);
        assert_eq!(g.neighbor_array(), &[1, 0, 2, 1]);
        let d = CsrGraph::read_edge_list("# dup\n0 1\n1 0\n0 1 # again\n2 2\n".as_bytes()).unwrap();
        assert_eq!(d.num_edges(), 1);
        assert_eq!(d.num_nodes(), 3);
    }

    #[test]
    fn edge_list_errors_carry_line_numbers() {
        match CsrGraph::read_edge_list("0 1\n\n1 x\n".as_bytes()) {
            Err(GraphError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match CsrGraph::read_edge_list("0 1 2\n".as_bytes()) {
            Err(GraphError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trips() {
        let g = gen_kronecker(7, 8, 5).unwrap();
        let mut text = Vec::new();
        g.write_edge_list(&mut text).unwrap();
        let back = CsrGraph::read_edge_list(&text[..]).unwrap();
        // isolated trailing nodes are not representable in an edge list
        assert_eq!(back.neighbor_array(), g.neighbor_array());
        let mut bin = Vec::new();
        g.write_csr1(&mut bin).unwrap();
        assert_eq!(CsrGraph::read_csr1(&bin[..]).unwrap(), g);
        assert!(CsrGraph::read_csr1(&b"CSR0"[..]).is_err());
    }

    #[test]
    fn spec_strings() {
        assert_eq!("kron:scale=10,seed=3".parse::<GraphSpec>().unwrap(), GraphSpec::Kronecker { scale: 10, degree: 52, seed: 3 });
        assert_eq!("file:a.el".parse::<GraphSpec>().unwrap(), GraphSpec::File { path: "a.el".into() });
        assert!("grid:3".parse::<GraphSpec>().is_err());
    }
}
