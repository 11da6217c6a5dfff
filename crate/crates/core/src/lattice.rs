//! Heavy-hex lattices: the fixed 27- and 127-qubit layouts, parametric
//! brick-wall lattices of `m × n` hexagons, bipartitions and proper 3-edge
//! colorings.
//!
//! Node ids are dense `0..n_nodes`. Every lattice carries a grid layout
//! `(row, col)` where even rows hold the horizontal qubit chains and odd rows
//! hold the bridge qubits that join neighbouring chains.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const EAGLE127_JSON: &str = include_str!("../data/eagle127.json");
const FALCON27_JSON: &str = include_str!("../data/falcon27.json");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("unsupported lattice kind `{0}`")]
    UnsupportedKind(String),
    #[error("hexgrid dimensions must be at least 1x1, got {0}x{1}")]
    EmptyGrid(usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("node {node} has degree {degree}, heavy-hex lattices are limited to 3")]
    DegreeTooHigh { node: usize, degree: usize },
    #[error("lattice is not connected: node {0} is unreachable from node 0")]
    Disconnected(usize),
    #[error("odd cycle through edge ({0}, {1}); lattice is not bipartite")]
    OddCycle(usize, usize),
    #[error("layout covers {got} nodes, expected {expected}")]
    LayoutSize { expected: usize, got: usize },
    #[error("invalid lattice document: {0}")]
    Format(String),
}

/// Which family a lattice was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LatticeKind {
    /// 127-qubit Eagle heavy-hex layout.
    Eagle127,
    /// 27-qubit Falcon heavy-hex layout.
    Falcon27,
    /// `rows × cols` fused heavy hexagons in brick-wall arrangement.
    HexGrid { rows: usize, cols: usize },
    Custom,
}

impl fmt::Display for LatticeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatticeKind::Eagle127 => write!(f, "eagle127"),
            LatticeKind::Falcon27 => write!(f, "falcon27"),
            LatticeKind::HexGrid { rows, cols } => write!(f, "hexgrid({rows},{cols})"),
            LatticeKind::Custom => write!(f, "custom"),
        }
    }
}

impl FromStr for LatticeKind {
    type Err = LatticeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "eagle127" | "eagle" => return Ok(LatticeKind::Eagle127),
            "falcon27" | "falcon" => return Ok(LatticeKind::Falcon27),
            "custom" => return Ok(LatticeKind::Custom),
            _ => {}
        }
        let inner = t
            .strip_prefix("hexgrid(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| t.strip_prefix("hexgrid:"))
            .ok_or_else(|| LatticeError::UnsupportedKind(s.to_string()))?;
        let mut parts = inner.split([',', 'x']);
        let parse = |p: Option<&str>| {
            p.and_then(|v| v.trim().parse::<usize>().ok())
                .ok_or_else(|| LatticeError::UnsupportedKind(s.to_string()))
        };
        let rows = parse(parts.next())?;
        let cols = parse(parts.next())?;
        if parts.next().is_some() {
            return Err(LatticeError::UnsupportedKind(s.to_string()));
        }
        Ok(LatticeKind::HexGrid { rows, cols })
    }
}

impl Serialize for LatticeKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LatticeKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Grid position of a node in the lattice drawing.
pub type GridPos = (i32, i32);

/// Simple undirected graph with degree ≤ 3 and a grid layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeavyHexLattice {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    layout: Vec<GridPos>,
    kind: LatticeKind,
    adjacency: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct LatticeDoc {
    n_nodes: usize,
    edges: Vec<[usize; 2]>,
    layout: BTreeMap<usize, [i32; 2]>,
    kind: LatticeKind,
}

impl HeavyHexLattice {
    /// Builds a lattice from raw parts, canonicalising the edge list and
    /// checking every heavy-hex invariant.
    pub fn from_parts(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        layout: Vec<GridPos>,
        kind: LatticeKind,
    ) -> Result<Self, LatticeError> {
        if layout.len() != n_nodes {
            return Err(LatticeError::LayoutSize {
                expected: n_nodes,
                got: layout.len(),
            });
        }
        let mut canon = Vec::new();
        for (u, v) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(LatticeError::NodeOutOfRange(u, v, n_nodes));
            }
            if u == v {
                return Err(LatticeError::SelfLoop(u));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(LatticeError::DuplicateEdge(w[0].0, w[0].1));
        }
        let mut adjacency = vec![Vec::new(); n_nodes];
        for &(u, v) in &canon {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in adjacency.iter_mut() {
            list.sort_unstable();
        }
        let lattice = HeavyHexLattice {
            n_nodes,
            edges: canon,
            layout,
            kind,
            adjacency,
        };
        lattice.check_degree()?;
        lattice.check_connected()?;
        Ok(lattice)
    }

    fn check_degree(&self) -> Result<(), LatticeError> {
        for (node, nbrs) in self.adjacency.iter().enumerate() {
            if nbrs.len() > 3 {
                return Err(LatticeError::DegreeTooHigh {
                    node,
                    degree: nbrs.len(),
                });
            }
        }
        Ok(())
    }

    fn check_connected(&self) -> Result<(), LatticeError> {
        if self.n_nodes == 0 {
            return Ok(());
        }
        let dist = self.bfs_distances(0);
        match dist.iter().position(|d| d.is_none()) {
            Some(node) => Err(LatticeError::Disconnected(node)),
            None => Ok(()),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Canonical edge list: pairs `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn layout(&self) -> &[GridPos] {
        &self.layout
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n_nodes && self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Index of edge `(u, v)` in the canonical edge list.
    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        self.edges.binary_search(&(u.min(v), u.max(v))).ok()
    }

    /// Unit-weight shortest path lengths from `source`; `None` marks
    /// unreachable nodes.
    pub fn bfs_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n_nodes];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap_or(0);
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Connected sub-lattice made of the first `size` nodes reached by a BFS
    /// from `root` (ties broken by node id). Nodes are relabelled `0..size`
    /// in BFS order; the induced edges are kept.
    pub fn bfs_fragment(&self, root: usize, size: usize) -> Result<Self, LatticeError> {
        let mut order = Vec::with_capacity(size);
        let mut seen = vec![false; self.n_nodes];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            if order.len() == size {
                break;
            }
            order.push(u);
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        self.induced(&order)
    }

    /// Induced sub-lattice on `nodes`, relabelled in the given order.
    pub fn induced(&self, nodes: &[usize]) -> Result<Self, LatticeError> {
        let mut relabel = vec![usize::MAX; self.n_nodes];
        for (new, &old) in nodes.iter().enumerate() {
            relabel[old] = new;
        }
        let edges = self
            .edges
            .iter()
            .filter(|(u, v)| relabel[*u] != usize::MAX && relabel[*v] != usize::MAX)
            .map(|&(u, v)| (relabel[u], relabel[v]));
        let layout = nodes.iter().map(|&n| self.layout[n]).collect();
        HeavyHexLattice::from_parts(nodes.len(), edges, layout, LatticeKind::Custom)
    }

    pub fn to_json(&self) -> String {
        let doc = LatticeDoc {
            n_nodes: self.n_nodes,
            edges: self.edges.iter().map(|&(u, v)| [u, v]).collect(),
            layout: self
                .layout
                .iter()
                .enumerate()
                .map(|(i, &(r, c))| (i, [r, c]))
                .collect(),
            kind: self.kind,
        };
        serde_json::to_string(&doc).expect("lattice document serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, LatticeError> {
        let doc: LatticeDoc =
            serde_json::from_str(text).map_err(|e| LatticeError::Format(e.to_string()))?;
        let mut layout = vec![(0, 0); doc.n_nodes];
        if doc.layout.len() != doc.n_nodes {
            return Err(LatticeError::LayoutSize {
                expected: doc.n_nodes,
                got: doc.layout.len(),
            });
        }
        for (node, [r, c]) in doc.layout {
            if node >= doc.n_nodes {
                return Err(LatticeError::Format(format!("layout key {node} out of range")));
            }
            layout[node] = (r, c);
        }
        HeavyHexLattice::from_parts(
            doc.n_nodes,
            doc.edges.into_iter().map(|[u, v]| (u, v)),
            layout,
            doc.kind,
        )
    }
}

/// Builds the lattice of the requested kind. Node numbering is deterministic.
pub fn make_heavy_hex(kind: LatticeKind) -> Result<HeavyHexLattice, LatticeError> {
    match kind {
        LatticeKind::Eagle127 => HeavyHexLattice::from_json(EAGLE127_JSON),
        LatticeKind::Falcon27 => HeavyHexLattice::from_json(FALCON27_JSON),
        LatticeKind::HexGrid { rows, cols } => hexgrid(rows, cols),
        LatticeKind::Custom => Err(LatticeError::UnsupportedKind("custom".into())),
    }
}

/// Brick-wall heavy-hex lattice with `rows` rows of `cols` hexagons.
///
/// Chain `r` (grid row `2r`) runs horizontally; hexagon row `r` joins chain
/// `r` and chain `r + 1` through bridge qubits at columns `off_r + 4j`,
/// `j = 0..=cols`, where `off_r` alternates 0, 2. Multi-row lattices carry one
/// pendant qubit past the last bridge of the top chain, as the 127-qubit
/// layout does.
fn hexgrid(rows: usize, cols: usize) -> Result<HeavyHexLattice, LatticeError> {
    if rows == 0 || cols == 0 {
        return Err(LatticeError::EmptyGrid(rows, cols));
    }
    let offset = |r: usize| -> i32 { if r % 2 == 0 { 0 } else { 2 } };
    let width = 4 * cols as i32;
    let mut layout: Vec<GridPos> = Vec::new();
    let mut index: BTreeMap<GridPos, usize> = BTreeMap::new();
    let mut push = |pos: GridPos, layout: &mut Vec<GridPos>| {
        index.insert(pos, layout.len());
        layout.push(pos);
    };
    let mut edges = Vec::new();
    let mut chain_spans = Vec::with_capacity(rows + 1);
    for chain in 0..=rows {
        let mut lo = i32::MAX;
        let mut hi = i32::MIN;
        if chain > 0 {
            lo = lo.min(offset(chain - 1));
            hi = hi.max(offset(chain - 1) + width);
        }
        if chain < rows {
            lo = lo.min(offset(chain));
            hi = hi.max(offset(chain) + width);
        }
        if chain == 0 && rows > 1 {
            hi += 1;
        }
        chain_spans.push((lo, hi));
    }
    for chain in 0..=rows {
        let (lo, hi) = chain_spans[chain];
        let row = 2 * chain as i32;
        for col in lo..=hi {
            push((row, col), &mut layout);
        }
        if chain < rows {
            for j in 0..=cols as i32 {
                push((row + 1, offset(chain) + 4 * j), &mut layout);
            }
        }
    }
    let at = |pos: GridPos| index.get(&pos).copied();
    for chain in 0..=rows {
        let (lo, hi) = chain_spans[chain];
        let row = 2 * chain as i32;
        for col in lo..hi {
            edges.push((at((row, col)).unwrap(), at((row, col + 1)).unwrap()));
        }
        if chain < rows {
            for j in 0..=cols as i32 {
                let col = offset(chain) + 4 * j;
                let bridge = at((row + 1, col)).unwrap();
                edges.push((at((row, col)).unwrap(), bridge));
                edges.push((bridge, at((row + 2, col)).unwrap()));
            }
        }
    }
    HeavyHexLattice::from_parts(
        layout.len(),
        edges,
        layout,
        LatticeKind::HexGrid { rows, cols },
    )
}

/// Proper edge coloring with colors `0..3`, aligned with
/// [`HeavyHexLattice::edges`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeColoring {
    pub colors: Vec<u8>,
}

impl EdgeColoring {
    /// Edges grouped by color; each group is a matching.
    pub fn layers(&self, lattice: &HeavyHexLattice) -> Vec<Vec<(usize, usize)>> {
        let n_colors = self.colors.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
        let mut layers = vec![Vec::new(); n_colors];
        for (&edge, &c) in lattice.edges().iter().zip(&self.colors) {
            layers[c as usize].push(edge);
        }
        layers
    }

    pub fn n_colors_used(&self) -> usize {
        let mut seen = [false; 256];
        for &c in &self.colors {
            seen[c as usize] = true;
        }
        seen.iter().filter(|&&b| b).count()
    }

    /// True when every edge is colored and no two edges at a node share a color.
    pub fn is_proper(&self, lattice: &HeavyHexLattice) -> bool {
        if self.colors.len() != lattice.n_edges() {
            return false;
        }
        let mut used = vec![0u32; lattice.n_nodes()];
        for (&(u, v), &c) in lattice.edges().iter().zip(&self.colors) {
            if c >= 32 {
                return false;
            }
            let bit = 1u32 << c;
            if used[u] & bit != 0 || used[v] & bit != 0 {
                return false;
            }
            used[u] |= bit;
            used[v] |= bit;
        }
        true
    }
}

/// Proper 3-edge coloring.
///
/// Edges are visited in layout order `(row, col, orientation)`. Each edge
/// takes a color free at both endpoints; when the free colors differ, the
/// two-colored alternating path leaving the far endpoint is swapped first.
/// On bipartite graphs of maximum degree 3 this always succeeds with three
/// colors.
pub fn three_edge_coloring(lattice: &HeavyHexLattice) -> Result<EdgeColoring, LatticeError> {
    lattice.check_degree()?;
    const NONE: u8 = u8::MAX;
    let n = lattice.n_nodes();
    // at[node][color] = neighbour joined by an edge of that color
    let mut at = vec![[usize::MAX; 3]; n];
    let mut order: Vec<usize> = (0..lattice.n_edges()).collect();
    let key = |e: usize| {
        let (u, v) = lattice.edges()[e];
        let (pu, pv) = (lattice.layout()[u], lattice.layout()[v]);
        let (a, b) = if pu <= pv { (pu, pv) } else { (pv, pu) };
        let horizontal = a.0 == b.0;
        (a.0, a.1, !horizontal, b.0, b.1, u, v)
    };
    order.sort_by_key(|&e| key(e));
    let free = |slots: &[usize; 3]| slots.iter().position(|&x| x == usize::MAX);
    for e in order {
        let (u, v) = lattice.edges()[e];
        let cu = free(&at[u]).ok_or(LatticeError::DegreeTooHigh { node: u, degree: 4 })?;
        let cv = free(&at[v]).ok_or(LatticeError::DegreeTooHigh { node: v, degree: 4 })?;
        let color = if at[v][cu] == usize::MAX {
            cu
        } else if at[u][cv] == usize::MAX {
            cv
        } else {
            // Swap colors cu/cv along the alternating path starting at v with
            // color cu. In a bipartite graph it cannot reach u.
            let mut path = Vec::new();
            let mut node = v;
            let mut c = cu;
            loop {
                let next = at[node][c];
                if next == usize::MAX {
                    break;
                }
                if next == u {
                    return Err(LatticeError::OddCycle(u, v));
                }
                path.push((node, next, c));
                node = next;
                c = if c == cu { cv } else { cu };
            }
            for &(a, b, c) in &path {
                at[a][c] = usize::MAX;
                at[b][c] = usize::MAX;
            }
            for &(a, b, c) in &path {
                let swapped = if c == cu { cv } else { cu };
                at[a][swapped] = b;
                at[b][swapped] = a;
            }
            cu
        };
        at[u][color] = v;
        at[v][color] = u;
    }
    let mut colors = vec![NONE; lattice.n_edges()];
    for (u, slots) in at.iter().enumerate() {
        for (c, &v) in slots.iter().enumerate() {
            if v != usize::MAX && u < v {
                let idx = lattice.edge_index(u, v).expect("colored pair is an edge");
                colors[idx] = c as u8;
            }
        }
    }
    debug_assert!(colors.iter().all(|&c| c != NONE));
    Ok(EdgeColoring { colors })
}

/// Two-coloring of the nodes such that every edge joins side 0 to side 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bipartition {
    pub side: Vec<u8>,
}

impl Bipartition {
    pub fn is_valid(&self, lattice: &HeavyHexLattice) -> bool {
        self.side.len() == lattice.n_nodes()
            && lattice
                .edges()
                .iter()
                .all(|&(u, v)| self.side[u] != self.side[v])
    }
}

pub fn bipartition(lattice: &HeavyHexLattice) -> Result<Bipartition, LatticeError> {
    let n = lattice.n_nodes();
    let mut side = vec![u8::MAX; n];
    for start in 0..n {
        if side[start] != u8::MAX {
            continue;
        }
        side[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in lattice.neighbors(u) {
                if side[v] == u8::MAX {
                    side[v] = 1 - side[u];
                    queue.push_back(v);
                } else if side[v] == side[u] {
                    return Err(LatticeError::OddCycle(u.min(v), u.max(v)));
                }
            }
        }
    }
    Ok(Bipartition { side })
}
