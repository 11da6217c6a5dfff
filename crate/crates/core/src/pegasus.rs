//! Pegasus hardware graphs, native (chain-free) embeddings of heavy-hex
//! lattices, translated tilings for parallel annealing and a randomized
//! native embedding search.
//!
//! Qubits are addressed either by linear index or by the coordinate tuple
//! `(u, w, k, z)`: `u` is the orientation, `w` the perpendicular tile offset,
//! `k` the index inside a 12-qubit tile and `z` the offset along the qubit
//! line. `linear = z + (m-1)·(k + 12·(w + m·u))`. Only the fabric is modelled:
//! the boundary qubits that have no internal couplers are absent.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::HeavyHexLattice;

const EAGLE127_TILE_JSON: &str = include_str!("../data/eagle127_p16_tile.json");

/// Perpendicular offsets of the standard Pegasus couplers, per `k`.
const OFFSETS_VERTICAL: [usize; 12] = [2, 2, 2, 2, 10, 10, 10, 10, 6, 6, 6, 6];
const OFFSETS_HORIZONTAL: [usize; 12] = [6, 6, 6, 6, 2, 2, 2, 2, 10, 10, 10, 10];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PegasusError {
    #[error("Pegasus size must be at least 2, got {0}")]
    SizeTooSmall(usize),
    #[error("defect qubit {0} is not a qubit of P{1}")]
    DefectNodeOutOfRange(usize, usize),
    #[error("defect coupler ({0}, {1}) is not a coupler of P{2}")]
    DefectEdgeOutOfRange(usize, usize, usize),
    #[error("invalid document: {0}")]
    Format(String),
}

/// Qubit coordinate `(u, w, k, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PegasusCoord {
    pub u: usize,
    pub w: usize,
    pub k: usize,
    pub z: usize,
}

/// Missing qubits and couplers of a physical device.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefectList {
    #[serde(default)]
    pub missing_nodes: Vec<usize>,
    #[serde(default)]
    pub missing_edges: Vec<[usize; 2]>,
}

impl DefectList {
    pub fn from_json(text: &str) -> Result<Self, PegasusError> {
        serde_json::from_str(text).map_err(|e| PegasusError::Format(e.to_string()))
    }
}

/// Pegasus `P_m` graph with defects removed. Immutable after construction.
#[derive(Debug, Clone)]
pub struct PegasusGraph {
    size: usize,
    present: Vec<bool>,
    adjacency: Vec<Vec<usize>>,
    edges: HashSet<(usize, usize)>,
    defects: DefectList,
}

impl PegasusGraph {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Number of linear indices, present or not: `24·m·(m-1)`.
    pub fn index_space(&self) -> usize {
        24 * self.size * (self.size - 1)
    }

    pub fn n_nodes(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_node(&self, q: usize) -> bool {
        q < self.present.len() && self.present[q]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn neighbors(&self, q: usize) -> &[usize] {
        &self.adjacency[q]
    }

    pub fn defects(&self) -> &DefectList {
        &self.defects
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.present
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(q, _)| q)
    }

    /// Sorted edge list.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<_> = self.edges.iter().copied().collect();
        e.sort_unstable();
        e
    }

    pub fn to_linear(&self, c: PegasusCoord) -> usize {
        coord_to_linear(self.size, c)
    }

    pub fn to_coord(&self, q: usize) -> PegasusCoord {
        linear_to_coord(self.size, q)
    }
}

pub fn coord_to_linear(m: usize, c: PegasusCoord) -> usize {
    c.z + (m - 1) * (c.k + 12 * (c.w + m * c.u))
}

pub fn linear_to_coord(m: usize, q: usize) -> PegasusCoord {
    let z = q % (m - 1);
    let rest = q / (m - 1);
    let k = rest % 12;
    let rest = rest / 12;
    let w = rest % m;
    let u = rest / m;
    PegasusCoord { u, w, k, z }
}

/// Whether a coordinate belongs to the fabric of `P_m`.
fn in_fabric(m: usize, c: PegasusCoord) -> bool {
    if c.u > 1 || c.w >= m || c.k >= 12 || c.z >= m - 1 {
        return false;
    }
    if c.w == 0 {
        c.k >= 2
    } else if c.w == m - 1 {
        c.k < 10
    } else {
        true
    }
}

/// Builds `P_size` minus the given defects.
pub fn make_pegasus(size: usize, defects: &DefectList) -> Result<PegasusGraph, PegasusError> {
    if size < 2 {
        return Err(PegasusError::SizeTooSmall(size));
    }
    let m = size;
    let total = 24 * m * (m - 1);
    let mut present: Vec<bool> = (0..total).map(|q| in_fabric(m, linear_to_coord(m, q))).collect();
    let mut edges: HashSet<(usize, usize)> = HashSet::new();
    let add = |a: PegasusCoord, b: PegasusCoord, edges: &mut HashSet<(usize, usize)>| {
        if in_fabric(m, a) && in_fabric(m, b) {
            let (x, y) = (coord_to_linear(m, a), coord_to_linear(m, b));
            edges.insert((x.min(y), x.max(y)));
        }
    };
    for u in 0..2 {
        for w in 0..m {
            for k in 0..12 {
                // external couplers along a qubit line
                for z in 0..m.saturating_sub(2) {
                    add(
                        PegasusCoord { u, w, k, z },
                        PegasusCoord { u, w, k, z: z + 1 },
                        &mut edges,
                    );
                }
                // odd couplers between paired parallel qubits
                if k % 2 == 0 {
                    for z in 0..m - 1 {
                        add(
                            PegasusCoord { u, w, k, z },
                            PegasusCoord { u, w, k: k + 1, z },
                            &mut edges,
                        );
                    }
                }
            }
        }
    }
    // internal couplers between crossing orthogonal qubits
    for w in 0..m {
        for k in 0..12 {
            for z in 0..m - 1 {
                for kk in 0..12 {
                    let w2 = z + usize::from(kk < OFFSETS_VERTICAL[k]);
                    let shift = usize::from(k < OFFSETS_HORIZONTAL[kk]);
                    if w < shift {
                        continue;
                    }
                    let z2 = w - shift;
                    if z2 >= m - 1 {
                        continue;
                    }
                    add(
                        PegasusCoord { u: 0, w, k, z },
                        PegasusCoord { u: 1, w: w2, k: kk, z: z2 },
                        &mut edges,
                    );
                }
            }
        }
    }
    for &q in &defects.missing_nodes {
        if q >= total || !present[q] {
            return Err(PegasusError::DefectNodeOutOfRange(q, m));
        }
    }
    for &[a, b] in &defects.missing_edges {
        if !edges.contains(&(a.min(b), a.max(b))) {
            return Err(PegasusError::DefectEdgeOutOfRange(a, b, m));
        }
    }
    for &q in &defects.missing_nodes {
        present[q] = false;
    }
    for &[a, b] in &defects.missing_edges {
        edges.remove(&(a.min(b), a.max(b)));
    }
    edges.retain(|&(a, b)| present[a] && present[b]);
    let mut adjacency = vec![Vec::new(); total];
    for &(a, b) in &edges {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    for list in adjacency.iter_mut() {
        list.sort_unstable();
    }
    Ok(PegasusGraph {
        size: m,
        present,
        adjacency,
        edges,
        defects: defects.clone(),
    })
}

/// Lattice node → qubit map of one embedded copy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Embedding {
    pub map: Vec<usize>,
    pub tile_index: usize,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingDoc {
    map: BTreeMap<usize, usize>,
    tile_index: usize,
}

impl Embedding {
    pub fn image(&self) -> impl Iterator<Item = usize> + '_ {
        self.map.iter().copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_doc()).expect("embedding serialises")
    }

    fn to_doc(&self) -> EmbeddingDoc {
        EmbeddingDoc {
            map: self.map.iter().copied().enumerate().collect(),
            tile_index: self.tile_index,
        }
    }

    fn from_doc(doc: EmbeddingDoc) -> Result<Self, PegasusError> {
        let n = doc.map.len();
        let mut map = Vec::with_capacity(n);
        for (expected, (node, q)) in doc.map.into_iter().enumerate() {
            if node != expected {
                return Err(PegasusError::Format(format!(
                    "embedding keys must be 0..{n}, missing node {expected}"
                )));
            }
            map.push(q);
        }
        Ok(Embedding {
            map,
            tile_index: doc.tile_index,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, PegasusError> {
        let doc: EmbeddingDoc =
            serde_json::from_str(text).map_err(|e| PegasusError::Format(e.to_string()))?;
        Self::from_doc(doc)
    }
}

impl Serialize for Embedding {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_doc().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Embedding {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = EmbeddingDoc::deserialize(d)?;
        Embedding::from_doc(doc).map_err(serde::de::Error::custom)
    }
}

/// A single problem with the embedding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    WrongSize { expected: usize, got: usize },
    NotInjective { nodes: (usize, usize), qubit: usize },
    MissingQubit { node: usize, qubit: usize },
    MissingCoupler { edge: (usize, usize), qubits: (usize, usize) },
}

/// Checks injectivity, qubit presence and coupler presence. Returns every
/// violation found.
pub fn verify_embedding(
    e: &Embedding,
    lattice: &HeavyHexLattice,
    pg: &PegasusGraph,
) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    if e.map.len() != lattice.n_nodes() {
        violations.push(Violation::WrongSize {
            expected: lattice.n_nodes(),
            got: e.map.len(),
        });
        return Err(violations);
    }
    let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
    for (node, &q) in e.map.iter().enumerate() {
        if let Some(&first) = owner.get(&q) {
            violations.push(Violation::NotInjective {
                nodes: (first, node),
                qubit: q,
            });
        } else {
            owner.insert(q, node);
        }
        if !pg.contains_node(q) {
            violations.push(Violation::MissingQubit { node, qubit: q });
        }
    }
    for &(a, b) in lattice.edges() {
        let (qa, qb) = (e.map[a], e.map[b]);
        if !pg.has_edge(qa, qb) {
            violations.push(Violation::MissingCoupler {
                edge: (a, b),
                qubits: (qa, qb),
            });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Base embedding plus the translation step used to tile it.
#[derive(Debug, Clone)]
pub struct TileTemplate {
    pub base: Embedding,
    /// Size of the Pegasus graph the base tile is written for.
    pub pegasus_size: usize,
    /// Translation step along `w` (horizontal qubits) and `z` (vertical
    /// qubits) between neighbouring tiles.
    pub period: usize,
}

#[derive(Deserialize)]
struct TileDoc {
    pegasus_size: usize,
    period_w: usize,
    map: BTreeMap<usize, usize>,
    tile_index: usize,
}

impl TileTemplate {
    /// The 127-qubit heavy-hex tile on `P16`: heavy-hex chains on full
    /// 15-qubit horizontal lines spread over three `w` blocks, bridges on
    /// vertical qubits. Translating by two `w` blocks gives six disjoint
    /// copies on a defect-free `P16`.
    pub fn eagle127_p16() -> Self {
        let doc: TileDoc = serde_json::from_str(EAGLE127_TILE_JSON).expect("tile fixture parses");
        TileTemplate {
            base: Embedding::from_doc(EmbeddingDoc {
                map: doc.map,
                tile_index: doc.tile_index,
            }).expect("tile fixture is dense"),
            pegasus_size: doc.pegasus_size,
            period: doc.period_w,
        }
    }

    /// Translated copy by `shift` periods, or `None` if any qubit leaves the
    /// coordinate range of `P_m`.
    pub fn translate(&self, m: usize, shift: isize) -> Option<Embedding> {
        let delta = shift * self.period as isize;
        let mut map = Vec::with_capacity(self.base.map.len());
        for &q in &self.base.map {
            let mut c = linear_to_coord(self.pegasus_size, q);
            if c.u == 0 {
                c.w = usize::try_from(c.w as isize + delta).ok()?;
            } else {
                c.z = usize::try_from(c.z as isize + delta).ok()?;
            }
            if !in_fabric(m, c) {
                return None;
            }
            map.push(coord_to_linear(m, c));
        }
        Some(Embedding { map, tile_index: 0 })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilingResult {
    pub embeddings: Vec<Embedding>,
    pub used_nodes: BTreeSet<usize>,
}

/// Places every translated copy of `template` that survives the defects of
/// `pg`. Copies sit on the template's translation lattice, so they are
/// pairwise disjoint; overlapping copies would be skipped.
pub fn tile_heavy_hex(
    lattice: &HeavyHexLattice,
    pg: &PegasusGraph,
    template: &TileTemplate,
) -> TilingResult {
    let m = pg.size() as isize;
    let mut embeddings = Vec::new();
    let mut used_nodes = BTreeSet::new();
    for shift in -2 * m..=2 * m {
        let Some(mut e) = template.translate(pg.size(), shift) else {
            continue;
        };
        if verify_embedding(&e, lattice, pg).is_err() {
            continue;
        }
        if e.map.iter().any(|q| used_nodes.contains(q)) {
            continue;
        }
        e.tile_index = embeddings.len();
        used_nodes.extend(e.map.iter().copied());
        embeddings.push(e);
    }
    TilingResult {
        embeddings,
        used_nodes,
    }
}

/// Result of a randomized native embedding search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchOutcome {
    Found { embedding: Embedding, attempts_used: usize },
    NotFound { attempts_used: usize },
}

impl SearchOutcome {
    pub fn attempts_used(&self) -> usize {
        match self {
            SearchOutcome::Found { attempts_used, .. } | SearchOutcome::NotFound { attempts_used } => {
                *attempts_used
            }
        }
    }

    pub fn embedding(&self) -> Option<&Embedding> {
        match self {
            SearchOutcome::Found { embedding, .. } => Some(embedding),
            SearchOutcome::NotFound { .. } => None,
        }
    }
}

/// Attempts run per parallel batch; results are merged by attempt index.
const SEARCH_BATCH: usize = 32;

/// Randomized search for a native embedding. Each attempt anchors a random
/// lattice node on a random qubit and extends along a randomized BFS order,
/// choosing for each node a free qubit adjacent to the images of all of its
/// already placed neighbours, with bounded backtracking. Attempt `i` draws
/// from its own RNG stream, so the outcome only depends on `seed`.
pub fn random_native_embed(
    lattice: &HeavyHexLattice,
    pg: &PegasusGraph,
    attempts: usize,
    seed: u64,
) -> SearchOutcome {
    let attempts = attempts.max(1);
    if lattice.n_nodes() > pg.n_nodes() || lattice.n_nodes() == 0 {
        return SearchOutcome::NotFound { attempts_used: 0 };
    }
    let candidates: Vec<usize> = pg
        .nodes()
        .filter(|&q| !pg.neighbors(q).is_empty())
        .collect();
    let mut start = 0;
    while start < attempts {
        let end = (start + SEARCH_BATCH).min(attempts);
        let found = (start..end)
            .into_par_iter()
            .map(|i| single_attempt(lattice, pg, &candidates, seed, i as u64).map(|m| (i, m)))
            .find_first(Option::is_some)
            .flatten();
        if let Some((i, map)) = found {
            return SearchOutcome::Found {
                embedding: Embedding { map, tile_index: 0 },
                attempts_used: i + 1,
            };
        }
        start = end;
    }
    SearchOutcome::NotFound {
        attempts_used: attempts,
    }
}

fn single_attempt(
    lattice: &HeavyHexLattice,
    pg: &PegasusGraph,
    roots: &[usize],
    seed: u64,
    attempt: u64,
) -> Option<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(attempt);
    let n = lattice.n_nodes();

    // randomized BFS order from a random root
    let root = rng.gen_range(0..n);
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        order.push(u);
        let mut nbrs = lattice.neighbors(u).to_vec();
        nbrs.shuffle(&mut rng);
        for v in nbrs {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }

    let mut placed = vec![usize::MAX; n];
    let mut used: HashSet<usize> = HashSet::with_capacity(n);
    let mut choices: Vec<Vec<usize>> = Vec::with_capacity(n);
    let budget = 20 * n + 200;
    let mut steps = 0usize;
    let mut depth = 0usize;

    let candidates_for = |depth: usize,
                          placed: &[usize],
                          used: &HashSet<usize>,
                          rng: &mut ChaCha8Rng|
     -> Vec<usize> {
        let node = order[depth];
        let mapped: Vec<usize> = lattice
            .neighbors(node)
            .iter()
            .filter(|&&v| placed[v] != usize::MAX)
            .map(|&v| placed[v])
            .collect();
        let unplaced = lattice.degree(node) - mapped.len();
        let pool: Vec<usize> = match mapped.first() {
            None => {
                let mut pool: Vec<usize> = (0..8).map(|_| roots[rng.gen_range(0..roots.len())]).collect();
                pool.dedup();
                pool
            }
            Some(&first) => pg
                .neighbors(first)
                .iter()
                .copied()
                .filter(|&q| mapped[1..].iter().all(|&p| pg.has_edge(p, q)))
                .collect(),
        };
        let mut pool: Vec<usize> = pool
            .into_iter()
            .filter(|q| !used.contains(q))
            .filter(|&q| {
                pg.neighbors(q).iter().filter(|x| !used.contains(x)).count() >= unplaced
            })
            .collect();
        pool.shuffle(rng);
        pool
    };

    choices.push(candidates_for(0, &placed, &used, &mut rng));
    loop {
        if steps > budget {
            return None;
        }
        steps += 1;
        match choices[depth].pop() {
            Some(q) => {
                let node = order[depth];
                placed[node] = q;
                used.insert(q);
                depth += 1;
                if depth == n {
                    return Some(placed);
                }
                let next = candidates_for(depth, &placed, &used, &mut rng);
                choices.push(next);
            }
            None => {
                // backtrack
                choices.pop();
                if depth == 0 {
                    return None;
                }
                depth -= 1;
                let node = order[depth];
                used.remove(&placed[node]);
                placed[node] = usize::MAX;
            }
        }
    }
}
