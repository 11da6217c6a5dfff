//! Independent oracles shared by the integration tests: dense matrices built
//! from Kronecker products or explicit index loops, never from the
//! simulator's own kernels.
#![allow(dead_code)]

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C;

use hexqa::lattice::{make_heavy_hex, HeavyHexLattice, LatticeKind};

pub fn fragment(n: usize) -> HeavyHexLattice {
    make_heavy_hex(LatticeKind::Eagle127).unwrap().bfs_fragment(0, n).unwrap()
}

pub fn kron(a: &DMatrix<C>, b: &DMatrix<C>) -> DMatrix<C> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    DMatrix::from_fn(ra * rb, ca * cb, |i, j| a[(i / rb, j / cb)] * b[(i % rb, j % cb)])
}

/// `op` on qubit `q` of `n`, qubit q being bit q of the basis index.
pub fn on_qubit(n: usize, q: usize, op: &DMatrix<C>) -> DMatrix<C> {
    let id = DMatrix::<C>::identity(2, 2);
    let mut m = DMatrix::<C>::identity(1, 1);
    for k in (0..n).rev() {
        m = kron(&m, if k == q { op } else { &id });
    }
    m
}

pub fn pauli_x() -> DMatrix<C> {
    DMatrix::from_row_slice(2, 2, &[C::new(0.0, 0.0), C::new(1.0, 0.0), C::new(1.0, 0.0), C::new(0.0, 0.0)])
}

pub fn pauli_z() -> DMatrix<C> {
    DMatrix::from_row_slice(2, 2, &[C::new(1.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 0.0), C::new(-1.0, 0.0)])
}

/// `exp(−iθX/2) = cos(θ/2)·I − i·sin(θ/2)·X`
pub fn rx_full(n: usize, q: usize, theta: f64) -> DMatrix<C> {
    let id = DMatrix::<C>::identity(1 << n, 1 << n);
    id * C::new((theta / 2.0).cos(), 0.0) + on_qubit(n, q, &pauli_x()) * C::new(0.0, -(theta / 2.0).sin())
}

/// `exp(−iφ/2·Z_aZ_b)`
pub fn rzz_full(n: usize, a: usize, b: usize, phi: f64) -> DMatrix<C> {
    let id = DMatrix::<C>::identity(1 << n, 1 << n);
    let zz = on_qubit(n, a, &pauli_z()) * on_qubit(n, b, &pauli_z());
    id * C::new((phi / 2.0).cos(), 0.0) + zz * C::new(0.0, -(phi / 2.0).sin())
}

pub fn basis0(n: usize) -> DVector<C> {
    let mut v = DVector::from_element(1 << n, C::new(0.0, 0.0));
    v[0] = C::new(1.0, 0.0);
    v
}

pub fn z_of(amps: &[C], n: usize) -> Vec<f64> {
    (0..n)
        .map(|q| {
            amps.iter()
                .enumerate()
                .map(|(i, a)| a.norm_sqr() * if (i >> q) & 1 == 0 { 1.0 } else { -1.0 })
                .sum()
        })
        .collect()
}

/// Real symmetric `jz·Σ Z_aZ_b + hx·Σ X_i` by explicit index loops.
pub fn dense_tfim(n: usize, edges: &[(usize, usize)], jz: f64, hx: f64) -> DMatrix<f64> {
    let dim = 1usize << n;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        let spin = |q: usize| if (i >> q) & 1 == 0 { 1.0 } else { -1.0 };
        h[(i, i)] = edges.iter().map(|&(a, b)| spin(a) * spin(b)).sum::<f64>() * jz;
        for q in 0..n {
            h[(i ^ (1 << q), i)] += hx;
        }
    }
    h
}

/// `e^{−iHt}|0…0⟩` for several `t`, by full diagonalisation.
pub struct EigenPropagator {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl EigenPropagator {
    pub fn new(h: DMatrix<f64>) -> Self {
        let e = SymmetricEigen::new(h);
        EigenPropagator {
            values: e.eigenvalues.iter().copied().collect(),
            vectors: e.eigenvectors,
        }
    }

    pub fn evolve_zero(&self, t: f64) -> Vec<C> {
        let dim = self.values.len();
        // coefficient of eigenvector k in |0⟩ is V[0, k]
        let c: Vec<C> = (0..dim)
            .map(|k| C::from_polar(1.0, -self.values[k] * t) * self.vectors[(0, k)])
            .collect();
        (0..dim)
            .map(|i| (0..dim).map(|k| c[k] * self.vectors[(i, k)]).sum())
            .collect()
    }
}

/// All-pairs hop distances by repeated BFS over an adjacency list built
/// from the edge list.
pub fn hop_distances(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<Option<usize>>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    (0..n)
        .map(|s| {
            let mut d = vec![None; n];
            d[s] = Some(0);
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if d[v].is_none() {
                        d[v] = Some(d[u].unwrap() + 1);
                        q.push_back(v);
                    }
                }
            }
            d
        })
        .collect()
}

/// Proper edge coloring check written independently of the library.
pub fn is_proper_coloring(n: usize, edges: &[(usize, usize)], colors: &[u8]) -> bool {
    let mut seen = vec![Vec::<u8>::new(); n];
    for (&(a, b), &c) in edges.iter().zip(colors) {
        if c > 2 || seen[a].contains(&c) || seen[b].contains(&c) {
            return false;
        }
        seen[a].push(c);
        seen[b].push(c);
    }
    colors.len() == edges.len()
}
