//! Edge-node grid geometry.
//!
//! Nodes sit at the centres of a `rows x cols` partition of a square service
//! region. Node `r * cols + c` covers row `r` (the y axis) and column `c`
//! (the x axis). Three connectivity regimes are supported:
//!
//! - `High`: every node links to its 4-neighbours.
//! - `Middle`: a central `floor(rows/2) x floor(cols/2)` block keeps its
//!   lattice links; every other node hangs off that block through a
//!   breadth-first spanning tree over lattice links (no extra cycles).
//! - `Low`: a fishbone spanning tree (one horizontal trunk along the middle
//!   row, full vertical ribs in every column). `M - 1` links, no cycles.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Planar coordinates in metres.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn clamped(&self, side: f64) -> Position {
        Position {
            x: self.x.clamp(0.0, side),
            y: self.y.clamp(0.0, side),
        }
    }

    pub fn lerp(&self, other: &Position, w: f64) -> Position {
        Position {
            x: self.x + (other.x - self.x) * w,
            y: self.y + (other.y - self.y) * w,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    #[default]
    High,
    Middle,
    Low,
}

impl Connectivity {
    pub const ALL: [Connectivity; 3] = [Connectivity::High, Connectivity::Middle, Connectivity::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            Connectivity::High => "high",
            Connectivity::Middle => "middle",
            Connectivity::Low => "low",
        }
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "high" => Ok(Connectivity::High),
            "middle" => Ok(Connectivity::Middle),
            "low" => Ok(Connectivity::Low),
            other => Err(Error::invalid(format!("unknown connectivity `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    rows: usize,
    cols: usize,
    region_side: f64,
    kind: Connectivity,
    positions: Vec<Position>,
    neighbors: Vec<Vec<usize>>,
    hops: Vec<u32>,
}

impl Topology {
    pub fn grid(rows: usize, cols: usize, region_side: f64, kind: Connectivity) -> Result<Self> {
        build_grid_topology(rows, cols, region_side, kind)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn region_side(&self) -> f64 {
        self.region_side
    }

    pub fn kind(&self) -> Connectivity {
        self.kind
    }

    /// Number of edge nodes `M`.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.len()).map(NodeId)
    }

    pub fn position(&self, node: NodeId) -> Position {
        self.positions[node.0]
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn cell_of(&self, node: NodeId) -> (usize, usize) {
        (node.0 / self.cols, node.0 % self.cols)
    }

    pub fn node_at(&self, row: usize, col: usize) -> NodeId {
        NodeId(row * self.cols + col)
    }

    pub fn neighbors(&self, node: NodeId) -> &[usize] {
        &self.neighbors[node.0]
    }

    pub fn is_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbors[a.0].contains(&b.0)
    }

    /// Undirected edges as `(lo, hi)` pairs in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, ns) in self.neighbors.iter().enumerate() {
            for &b in ns {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.0 < self.len()
    }

    /// Hop distance without bounds checking beyond the slice index.
    pub(crate) fn hops_unchecked(&self, a: NodeId, b: NodeId) -> u32 {
        self.hops[a.0 * self.len() + b.0]
    }

    pub fn hop_distance(&self, a: NodeId, b: NodeId) -> Result<u32> {
        hop_distance(self, a, b)
    }

    pub fn nearest_node(&self, p: Position) -> NodeId {
        nearest_node(self, p)
    }

    /// Full hop matrix, row-major `M x M`.
    pub fn hop_matrix(&self) -> Vec<Vec<u32>> {
        let m = self.len();
        (0..m).map(|a| self.hops[a * m..(a + 1) * m].to_vec()).collect()
    }
}

pub fn build_grid_topology(
    rows: usize,
    cols: usize,
    region_side: f64,
    kind: Connectivity,
) -> Result<Topology> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("grid dimensions must be at least 1x1"));
    }
    if !(region_side > 0.0 && region_side.is_finite()) {
        return Err(Error::invalid("region side must be positive and finite"));
    }
    let m = rows * cols;
    let cell_w = region_side / cols as f64;
    let cell_h = region_side / rows as f64;
    let positions = (0..m)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            Position::new((c as f64 + 0.5) * cell_w, (r as f64 + 0.5) * cell_h)
        })
        .collect();

    let edges = match kind {
        Connectivity::High => lattice_edges(rows, cols, |_, _| true),
        Connectivity::Middle => middle_edges(rows, cols),
        Connectivity::Low => fishbone_edges(rows, cols),
    };

    let mut neighbors = vec![Vec::new(); m];
    for (a, b) in edges {
        neighbors[a].push(b);
        neighbors[b].push(a);
    }
    for ns in &mut neighbors {
        ns.sort_unstable();
        ns.dedup();
    }

    let hops = all_pairs_bfs(&neighbors)?;
    Ok(Topology {
        rows,
        cols,
        region_side,
        kind,
        positions,
        neighbors,
        hops,
    })
}

fn lattice_edges(
    rows: usize,
    cols: usize,
    keep: impl Fn(usize, usize) -> bool,
) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let a = r * cols + c;
            if c + 1 < cols && keep(a, a + 1) {
                edges.push((a, a + 1));
            }
            if r + 1 < rows && keep(a, a + cols) {
                edges.push((a, a + cols));
            }
        }
    }
    edges
}

fn middle_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let core_rows = (rows / 2).max(1);
    let core_cols = (cols / 2).max(1);
    let r0 = (rows - core_rows) / 2;
    let c0 = (cols - core_cols) / 2;
    let in_core = |i: usize| {
        let (r, c) = (i / cols, i % cols);
        (r0..r0 + core_rows).contains(&r) && (c0..c0 + core_cols).contains(&c)
    };

    let mut edges = lattice_edges(rows, cols, |a, b| in_core(a) && in_core(b));

    // Breadth-first growth from the core over lattice links; each outside node
    // is attached exactly once, by its lowest-index discovered parent.
    let m = rows * cols;
    let mut seen: Vec<bool> = (0..m).map(in_core).collect();
    let mut queue: VecDeque<usize> = (0..m).filter(|&i| seen[i]).collect();
    while let Some(a) = queue.pop_front() {
        for b in lattice_neighbors(a, rows, cols) {
            if !seen[b] {
                seen[b] = true;
                edges.push((a.min(b), a.max(b)));
                queue.push_back(b);
            }
        }
    }
    edges
}

fn fishbone_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let trunk = rows / 2;
    let mut edges = Vec::with_capacity(rows * cols);
    for c in 0..cols.saturating_sub(1) {
        let a = trunk * cols + c;
        edges.push((a, a + 1));
    }
    for c in 0..cols {
        for r in 0..rows.saturating_sub(1) {
            let a = r * cols + c;
            edges.push((a, a + cols));
        }
    }
    edges
}

fn lattice_neighbors(i: usize, rows: usize, cols: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (i / cols, i % cols);
    let up = (r > 0).then(|| i - cols);
    let left = (c > 0).then(|| i - 1);
    let right = (c + 1 < cols).then(|| i + 1);
    let down = (r + 1 < rows).then(|| i + cols);
    [up, left, right, down].into_iter().flatten()
}

fn all_pairs_bfs(neighbors: &[Vec<usize>]) -> Result<Vec<u32>> {
    let m = neighbors.len();
    let mut hops = vec![u32::MAX; m * m];
    let mut queue = VecDeque::with_capacity(m);
    for src in 0..m {
        let row = &mut hops[src * m..(src + 1) * m];
        row[src] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(a) = queue.pop_front() {
            let d = row[a];
            for &b in &neighbors[a] {
                if row[b] == u32::MAX {
                    row[b] = d + 1;
                    queue.push_back(b);
                }
            }
        }
        if row.contains(&u32::MAX) {
            return Err(Error::Internal(format!(
                "grid construction left node {src} disconnected"
            )));
        }
    }
    Ok(hops)
}

pub fn hop_distance(topology: &Topology, a: NodeId, b: NodeId) -> Result<u32> {
    let m = topology.len();
    if a.0 >= m || b.0 >= m {
        return Err(Error::invalid(format!(
            "node id out of range: ({a}, {b}) with {m} nodes"
        )));
    }
    Ok(topology.hops_unchecked(a, b))
}

/// Closest node centre to `p` (clamped into the region); ties go to the
/// lowest index.
pub fn nearest_node(topology: &Topology, p: Position) -> NodeId {
    let p = p.clamped(topology.region_side);
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in topology.positions.iter().enumerate() {
        let dx = p.x - c.x;
        let dy = p.y - c.y;
        let d = dx * dx + dy * dy;
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    NodeId(best)
}
