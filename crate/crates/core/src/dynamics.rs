//! Exact state-vector simulation: kicked-Ising Trotter circuits, continuous
//! time evolution under the annealing Hamiltonian, Z-basis sampling and spin
//! reversal gauges.
//!
//! Qubit `k` is bit `k` of the basis index (little-endian). Bit 0 is spin +1
//! ("up"), bit 1 is spin −1. Energies are GHz, times ns, so the propagator of
//! `H` over `t` is `exp(−i·2π·H·t)`.
//!
//! Parallel kernels only touch disjoint amplitude blocks; every reduction sums
//! fixed-size blocks in index order, so results do not depend on the number
//! of worker threads.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{CalibrationError, CalibrationTable};
use crate::lattice::{EdgeColoring, HeavyHexLattice};
use crate::scalar::Real;
use crate::schedule::{AnnealSchedule, HGainSchedule};

/// Block size of the deterministic reductions and parallel kernels.
const BLOCK: usize = 1 << 12;

/// Largest `τ·r` handled by one Chebyshev expansion.
const CHEB_CHUNK: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("{n} qubits exceed the configured cap of {cap}")]
    QubitCap { n: usize, cap: usize },
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("gauge vector must have one ±1 entry per node")]
    IncompleteGauge,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Ising model on labelled nodes. Couplers index into `labels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct IsingModel<T: Real> {
    pub labels: Vec<usize>,
    pub h: Vec<T>,
    pub couplers: Vec<(usize, usize)>,
    pub j: Vec<T>,
}

impl<T: Real> IsingModel<T> {
    pub fn new(
        labels: Vec<usize>,
        h: Vec<T>,
        couplers: Vec<(usize, usize)>,
        j: Vec<T>,
    ) -> Result<Self, DynamicsError> {
        let m = IsingModel { labels, h, couplers, j };
        m.check()?;
        Ok(m)
    }

    /// Uniform couplers on every lattice edge and a uniform field.
    pub fn from_lattice(lattice: &HeavyHexLattice, j: T, h: T) -> Self {
        IsingModel {
            labels: (0..lattice.n_nodes()).collect(),
            h: vec![h; lattice.n_nodes()],
            couplers: lattice.edges().to_vec(),
            j: vec![j; lattice.n_edges()],
        }
    }

    pub fn check(&self) -> Result<(), DynamicsError> {
        let n = self.labels.len();
        if self.h.len() != n {
            return Err(DynamicsError::InvalidModel("one field per node required".into()));
        }
        if self.j.len() != self.couplers.len() {
            return Err(DynamicsError::InvalidModel("one value per coupler required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &l in &self.labels {
            if !seen.insert(l) {
                return Err(DynamicsError::InvalidModel(format!("duplicate node label {l}")));
            }
        }
        let mut pairs = std::collections::HashSet::new();
        for &(a, b) in &self.couplers {
            if a >= n || b >= n || a == b {
                return Err(DynamicsError::InvalidModel(format!("bad coupler ({a}, {b})")));
            }
            if !pairs.insert((a.min(b), a.max(b))) {
                return Err(DynamicsError::InvalidModel(format!("duplicate coupler ({a}, {b})")));
            }
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn position_map(&self) -> HashMap<usize, usize> {
        self.labels.iter().enumerate().map(|(i, &l)| (l, i)).collect()
    }

    /// Sub-model on the given labels, in that order.
    pub fn restrict(&self, labels: &[usize]) -> Result<Self, DynamicsError> {
        let pos = self.position_map();
        let mut local = HashMap::new();
        let mut h = Vec::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            let &p = pos
                .get(l)
                .ok_or_else(|| DynamicsError::Mismatch(format!("node {l} not in model")))?;
            local.insert(p, i);
            h.push(self.h[p]);
        }
        let mut couplers = Vec::new();
        let mut j = Vec::new();
        for (&(a, b), &v) in self.couplers.iter().zip(&self.j) {
            match (local.get(&a), local.get(&b)) {
                (Some(&x), Some(&y)) => {
                    couplers.push((x, y));
                    j.push(v);
                }
                (None, None) => {}
                _ => {
                    return Err(DynamicsError::Mismatch(format!(
                        "coupler ({}, {}) crosses the node subset",
                        self.labels[a], self.labels[b]
                    )))
                }
            }
        }
        IsingModel::new(labels.to_vec(), h, couplers, j)
    }

    /// Connected components as label lists, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n_nodes();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &self.couplers {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut comp = vec![usize::MAX; n];
        let mut out: Vec<Vec<usize>> = Vec::new();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| self.labels[i]);
        for start in order {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![start];
            comp[start] = id;
            let mut k = 0;
            while k < members.len() {
                for &v in &adj[members[k]] {
                    if comp[v] == usize::MAX {
                        comp[v] = id;
                        members.push(v);
                    }
                }
                k += 1;
            }
            let mut labels: Vec<usize> = members.iter().map(|&i| self.labels[i]).collect();
            labels.sort_unstable();
            out.push(labels);
        }
        out
    }

    /// `Σ h_q z_q` per basis state.
    fn field_diagonal(&self) -> Vec<T> {
        diagonal(self.labels.len(), |i| {
            let mut acc = 0.0;
            for (q, &h) in self.h.iter().enumerate() {
                acc += h.as_f64() * spin_of(i, q);
            }
            acc
        })
    }

    /// `Σ J_ab z_a z_b` per basis state.
    fn coupler_diagonal(&self) -> Vec<T> {
        diagonal(self.labels.len(), |i| {
            let mut acc = 0.0;
            for (&(a, b), &j) in self.couplers.iter().zip(&self.j) {
                acc += j.as_f64() * spin_of(i, a) * spin_of(i, b);
            }
            acc
        })
    }
}

fn diagonal<T: Real>(n: usize, f: impl Fn(usize) -> f64 + Sync) -> Vec<T> {
    (0..1usize << n).into_par_iter().map(|i| T::lit(f(i))).collect()
}

#[inline]
fn spin_of(index: usize, q: usize) -> f64 {
    if (index >> q) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Sums `f` over `0..n` in fixed blocks, combining block sums in order.
fn ordered_sum(n: usize, f: impl Fn(Range<usize>) -> f64 + Sync) -> f64 {
    let blocks = n.div_ceil(BLOCK);
    let partial: Vec<f64> = (0..blocks)
        .into_par_iter()
        .map(|b| f(b * BLOCK..((b + 1) * BLOCK).min(n)))
        .collect();
    partial.into_iter().sum()
}

/// `2^n` complex amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T: Real> {
    n_qubits: usize,
    amps: Vec<Complex<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct StateDoc<T: Real> {
    n_qubits: usize,
    re: Vec<T>,
    im: Vec<T>,
}

impl<T: Real> Serialize for StateVector<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        StateDoc {
            n_qubits: self.n_qubits,
            re: self.amps.iter().map(|a| a.re).collect(),
            im: self.amps.iter().map(|a| a.im).collect(),
        }
        .serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for StateVector<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = StateDoc::<T>::deserialize(d)?;
        if doc.re.len() != 1 << doc.n_qubits || doc.im.len() != doc.re.len() {
            return Err(serde::de::Error::custom("amplitude count must be 2^n_qubits"));
        }
        let amps = doc.re.into_iter().zip(doc.im).map(|(r, i)| Complex::new(r, i)).collect();
        Ok(StateVector {
            n_qubits: doc.n_qubits,
            amps,
        })
    }
}

impl<T: Real> StateVector<T> {
    /// All spins up.
    pub fn zero_state(n_qubits: usize) -> Self {
        Self::basis_state(n_qubits, 0)
    }

    pub fn basis_state(n_qubits: usize, index: usize) -> Self {
        let mut amps = vec![Complex::new(T::zero(), T::zero()); 1 << n_qubits];
        amps[index] = Complex::new(T::one(), T::zero());
        StateVector { n_qubits, amps }
    }

    /// Classical state from ±1 spins, spin `k` on qubit `k`.
    pub fn from_spins(spins: &[i8]) -> Self {
        let index = spins
            .iter()
            .enumerate()
            .fold(0usize, |acc, (q, &s)| acc | (usize::from(s < 0) << q));
        Self::basis_state(spins.len(), index)
    }

    /// Tensor product of single-qubit states `[amp(up), amp(down)]`.
    pub fn product(qubits: &[[Complex<T>; 2]]) -> Self {
        let n = qubits.len();
        let amps = (0..1usize << n)
            .into_par_iter()
            .map(|i| {
                qubits
                    .iter()
                    .enumerate()
                    .fold(Complex::new(T::one(), T::zero()), |acc, (q, a)| acc * a[(i >> q) & 1])
            })
            .collect();
        StateVector { n_qubits: n, amps }
    }

    pub fn from_amplitudes(n_qubits: usize, amps: Vec<Complex<T>>) -> Result<Self, DynamicsError> {
        if amps.len() != 1 << n_qubits {
            return Err(DynamicsError::Mismatch("amplitude count must be 2^n".into()));
        }
        Ok(StateVector { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        ordered_sum(self.dim(), |r| self.amps[r].iter().map(|a| a.norm_sqr().as_f64()).sum()).sqrt()
    }

    pub fn normalize(&mut self) {
        let inv = T::lit(1.0 / self.norm());
        self.amps.par_iter_mut().for_each(|a| *a = *a * inv);
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (*a - *b).norm().as_f64())
            .fold(0.0, f64::max)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.par_iter().map(|a| a.norm_sqr().as_f64()).collect()
    }

    /// `Σ_i |ψ_i|² f(i)` with a deterministic summation order.
    pub fn expectation_diag(&self, f: impl Fn(usize) -> f64 + Sync) -> f64 {
        ordered_sum(self.dim(), |r| {
            r.map(|i| self.amps[i].norm_sqr().as_f64() * f(i)).sum()
        })
    }

    pub fn expect_z(&self, q: usize) -> f64 {
        self.expectation_diag(|i| spin_of(i, q))
    }

    pub fn expect_zz(&self, a: usize, b: usize) -> f64 {
        self.expectation_diag(|i| spin_of(i, a) * spin_of(i, b))
    }

    /// `⟨Z_q⟩` for every qubit in one pass.
    pub fn z_expectations(&self) -> Vec<f64> {
        let n = self.n_qubits;
        let blocks = self.dim().div_ceil(BLOCK);
        let partial: Vec<Vec<f64>> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut acc = vec![0.0; n];
                for i in b * BLOCK..((b + 1) * BLOCK).min(self.dim()) {
                    let p = self.amps[i].norm_sqr().as_f64();
                    for (q, a) in acc.iter_mut().enumerate() {
                        *a += p * spin_of(i, q);
                    }
                }
                acc
            })
            .collect();
        partial.into_iter().fold(vec![0.0; n], |mut acc, p| {
            acc.iter_mut().zip(p).for_each(|(a, x)| *a += x);
            acc
        })
    }

    /// `RX(θ) = exp(−iθX/2)` on qubit `q`.
    pub fn apply_rx(&mut self, q: usize, theta: T) {
        let half = theta / T::lit(2.0);
        let c = Complex::new(half.cos(), T::zero());
        let ms = Complex::new(T::zero(), -half.sin());
        let stride = 1usize << q;
        self.amps.par_chunks_mut(2 * stride).for_each(|chunk| {
            let (lo, hi) = chunk.split_at_mut(stride);
            lo.par_iter_mut()
                .zip(hi.par_iter_mut())
                .with_min_len(BLOCK)
                .for_each(|(a0, a1)| {
                    let (x, y) = (*a0, *a1);
                    *a0 = c * x + ms * y;
                    *a1 = ms * x + c * y;
                });
        });
    }

    /// `Π exp(−iφ/2·Z_aZ_b)` over a set of couplers.
    pub fn apply_rzz_layer(&mut self, edges: &[(usize, usize)], phi: T) {
        let m = edges.len();
        // z_a z_b = 1 − 2·[bits differ]; tabulate by the number of differing pairs
        let table: Vec<Complex<T>> = (0..=m)
            .map(|k| {
                let zz = (m as f64) - 2.0 * (k as f64);
                let ang = -phi.as_f64() / 2.0 * zz;
                Complex::new(T::lit(ang.cos()), T::lit(ang.sin()))
            })
            .collect();
        self.amps
            .par_chunks_mut(BLOCK)
            .enumerate()
            .for_each(|(b, chunk)| {
                let base = b * BLOCK;
                for (off, a) in chunk.iter_mut().enumerate() {
                    let i = base + off;
                    let k: usize = edges.iter().map(|&(x, y)| ((i >> x) ^ (i >> y)) & 1).sum();
                    *a = *a * table[k];
                }
            });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOrder {
    #[default]
    RxThenRzz,
    RzzThenRx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TrotterConfig<T: Real> {
    pub n_steps: usize,
    pub theta_h: T,
    pub rzz_angle: T,
    pub step_order: StepOrder,
    /// Order in which the color classes are applied; `None` is 0, 1, 2.
    pub layer_order: Option<Vec<usize>>,
    pub qubit_cap: usize,
}

impl<T: Real> TrotterConfig<T> {
    pub fn new(n_steps: usize, theta_h: T) -> Self {
        TrotterConfig {
            n_steps,
            theta_h,
            rzz_angle: -T::FRAC_PI_2(),
            step_order: StepOrder::default(),
            layer_order: None,
            qubit_cap: 27,
        }
    }
}

/// Kicked-Ising circuit from the all-up state: each step applies `RX(θ_h)` to
/// every qubit and `RZZ(rzz_angle)` on every edge, layer by color class.
pub fn trotter_evolve<T: Real>(
    lattice: &HeavyHexLattice,
    coloring: &EdgeColoring,
    cfg: &TrotterConfig<T>,
) -> Result<StateVector<T>, DynamicsError> {
    let n = lattice.n_nodes();
    if n > cfg.qubit_cap {
        return Err(DynamicsError::QubitCap { n, cap: cfg.qubit_cap });
    }
    if coloring.colors.len() != lattice.n_edges() {
        return Err(DynamicsError::Mismatch("coloring does not match the lattice".into()));
    }
    let layers = coloring.layers(lattice);
    let order: Vec<usize> = match &cfg.layer_order {
        Some(o) => {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            if sorted != (0..layers.len()).collect::<Vec<_>>() {
                return Err(DynamicsError::InvalidConfig(
                    "layer_order must be a permutation of the color classes".into(),
                ));
            }
            o.clone()
        }
        None => (0..layers.len()).collect(),
    };
    let mut psi = StateVector::zero_state(n);
    for _ in 0..cfg.n_steps {
        if cfg.step_order == StepOrder::RxThenRzz {
            (0..n).for_each(|q| psi.apply_rx(q, cfg.theta_h));
        }
        for &l in &order {
            psi.apply_rzz_layer(&layers[l], cfg.rzz_angle);
        }
        if cfg.step_order == StepOrder::RzzThenRx {
            (0..n).for_each(|q| psi.apply_rx(q, cfg.theta_h));
        }
    }
    Ok(psi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    /// Local error target per accepted step (2-norm of the state error).
    pub tolerance: f64,
    /// Upper bound on a single integrator step, ns.
    pub max_segment_ns: f64,
    /// Sign in front of the transverse term, ±1.
    pub transverse_sign: i8,
    pub qubit_cap: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            tolerance: 1e-10,
            max_segment_ns: 50.0,
            transverse_sign: 1,
            qubit_cap: 14,
        }
    }
}

/// `H = cz·D_J + ch·D_h + cx·ΣX`, in rad/ns.
#[derive(Debug, Clone, Copy)]
struct Coeffs {
    cz: f64,
    ch: f64,
    cx: f64,
}

impl Coeffs {
    fn combine(self, a: f64, other: Coeffs, b: f64) -> Coeffs {
        Coeffs {
            cz: a * self.cz + b * other.cz,
            ch: a * self.ch + b * other.ch,
            cx: a * self.cx + b * other.cx,
        }
    }
}

struct Propagator<'a, T: Real> {
    dzz: &'a [T],
    dz: &'a [T],
    n: usize,
}

impl<'a, T: Real> Propagator<'a, T> {
    /// `out = H ψ` for the given coefficients.
    fn apply(&self, c: Coeffs, scale: f64, shift: f64, psi: &[Complex<T>], out: &mut [Complex<T>]) {
        let n = self.n;
        let (cz, ch, cx) = (T::lit(c.cz), T::lit(c.ch), T::lit(c.cx));
        let (scale, shift) = (T::lit(scale), T::lit(shift));
        out.par_chunks_mut(BLOCK).enumerate().for_each(|(b, chunk)| {
            let base = b * BLOCK;
            for (off, o) in chunk.iter_mut().enumerate() {
                let i = base + off;
                let d = cz * self.dzz[i] + ch * self.dz[i] - shift;
                let mut acc = psi[i] * d;
                if cx != T::zero() {
                    let mut flip = Complex::new(T::zero(), T::zero());
                    for q in 0..n {
                        flip = flip + psi[i ^ (1 << q)];
                    }
                    acc = acc + flip * cx;
                }
                *o = acc * scale;
            }
        });
    }

    /// Spectral enclosure of `H` (Weyl: diagonal range widened by `|cx|·n`).
    fn bounds(&self, c: Coeffs) -> (f64, f64) {
        let (lo, hi) = (0..self.dzz.len())
            .into_par_iter()
            .with_min_len(BLOCK)
            .map(|i| {
                let d = c.cz * self.dzz[i].as_f64() + c.ch * self.dz[i].as_f64();
                (d, d)
            })
            .reduce(
                || (f64::INFINITY, f64::NEG_INFINITY),
                |a, b| (a.0.min(b.0), a.1.max(b.1)),
            );
        let w = c.cx.abs() * self.n as f64;
        (lo - w, hi + w)
    }

    /// `ψ ← exp(−iτH)ψ` by Chebyshev expansion, τ in rad per unit coefficient.
    fn exp_apply(&self, c: Coeffs, tau: f64, psi: &mut Vec<Complex<T>>) {
        if tau == 0.0 {
            return;
        }
        if c.cx == 0.0 {
            // diagonal: exact phases
            psi.par_iter_mut().enumerate().with_min_len(BLOCK).for_each(|(i, p)| {
                let d = c.cz * self.dzz[i].as_f64() + c.ch * self.dz[i].as_f64();
                let (s, co) = (-tau * d).sin_cos();
                *p = *p * Complex::new(T::lit(co), T::lit(s));
            });
            return;
        }
        let (lo, hi) = self.bounds(c);
        let centre = 0.5 * (lo + hi);
        let radius = (0.5 * (hi - lo)).max(1e-300) * (1.0 + 1e-12);
        let pieces = ((tau * radius) / CHEB_CHUNK).ceil().max(1.0) as usize;
        let dt = tau / pieces as f64;
        let dim = psi.len();
        let mut t0 = vec![Complex::new(T::zero(), T::zero()); dim];
        let mut t1 = t0.clone();
        let mut t2 = t0.clone();
        let mut acc = t0.clone();
        for _ in 0..pieces {
            let coeffs = bessel_series(dt * radius);
            // e^{−iτH} = e^{−iτc} Σ_k (2−δ_k0)(−i)^k J_k(τr) T_k((H−c)/r)
            let phase = Complex::new((-dt * centre).cos(), (-dt * centre).sin());
            t0.copy_from_slice(psi);
            let c0 = T::lit(coeffs[0]);
            acc.par_iter_mut().zip(t0.par_iter()).with_min_len(BLOCK).for_each(|(a, x)| *a = *x * c0);
            if coeffs.len() > 1 {
                self.apply(c, 1.0 / radius, centre, &t0, &mut t1);
                add_term(&mut acc, &t1, 1, coeffs[1]);
            }
            for (k, &jk) in coeffs.iter().enumerate().skip(2) {
                // T_k = 2 H̃ T_{k−1} − T_{k−2}
                self.apply(c, 2.0 / radius, centre, &t1, &mut t2);
                t2.par_iter_mut().zip(t0.par_iter()).with_min_len(BLOCK).for_each(|(a, b)| *a = *a - *b);
                add_term(&mut acc, &t2, k, jk);
                std::mem::swap(&mut t0, &mut t1);
                std::mem::swap(&mut t1, &mut t2);
            }
            let ph = Complex::new(T::lit(phase.re), T::lit(phase.im));
            psi.par_iter_mut().zip(acc.par_iter()).with_min_len(BLOCK).for_each(|(p, a)| *p = *a * ph);
        }
    }
}

/// `acc += 2(−i)^k J_k · term`.
fn add_term<T: Real>(acc: &mut [Complex<T>], term: &[Complex<T>], k: usize, jk: f64) {
    let w = 2.0 * jk;
    let f = match k % 4 {
        0 => Complex::new(T::lit(w), T::zero()),
        1 => Complex::new(T::zero(), T::lit(-w)),
        2 => Complex::new(T::lit(-w), T::zero()),
        _ => Complex::new(T::zero(), T::lit(w)),
    };
    acc.par_iter_mut().zip(term.par_iter()).with_min_len(BLOCK).for_each(|(a, t)| *a = *a + *t * f);
}

/// `J_0(x) .. J_K(x)` truncated where the tail is below double precision.
/// Miller's backward recurrence normalised by `J_0 + 2ΣJ_2k = 1`.
pub(crate) fn bessel_series(x: f64) -> Vec<f64> {
    if x == 0.0 {
        return vec![1.0];
    }
    let start = (x + 10.0 * x.cbrt() + 40.0).ceil() as usize;
    let start = start + start % 2;
    let mut j = vec![0.0f64; start + 2];
    j[start] = 1e-300;
    for k in (1..=start).rev() {
        j[k - 1] = 2.0 * k as f64 / x * j[k] - j[k + 1];
        if j[k - 1].abs() > 1e250 {
            for v in j[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let norm = j[0] + 2.0 * j.iter().skip(2).step_by(2).sum::<f64>();
    let mut out: Vec<f64> = j[..=start].iter().map(|v| v / norm).collect();
    let keep = out
        .iter()
        .enumerate()
        .rposition(|(k, v)| (k as f64) <= x || v.abs() > 1e-18)
        .unwrap_or(0);
    out.truncate(keep + 1);
    out
}

/// Schedule + h-gain as Hamiltonian coefficients, time in ns.
struct Drive<'a, T: Real> {
    sched: &'a AnnealSchedule<T>,
    hg: Option<&'a HGainSchedule<T>>,
    cal: &'a CalibrationTable<T>,
    sign: f64,
}

impl<'a, T: Real> Drive<'a, T> {
    fn coeffs(&self, t_ns: f64) -> Result<Coeffs, DynamicsError> {
        let t_us = T::lit(t_ns / 1000.0);
        let s = self.sched.s_at(t_us).max(T::zero()).min(T::one());
        let (a, b) = self.cal.interp(s)?;
        let g = self.hg.map_or(1.0, |h| h.g_at(t_us).as_f64());
        let pi = std::f64::consts::PI;
        Ok(Coeffs {
            cz: pi * b.as_f64(),
            ch: pi * b.as_f64() * g,
            cx: -self.sign * pi * a.as_f64(),
        })
    }

    /// Breakpoints of s(t) and g(t) in ns, sorted, within the schedule.
    fn breakpoints(&self) -> Vec<f64> {
        let end = self.sched.duration_us().as_f64() * 1000.0;
        let mut ts: Vec<f64> = self.sched.points.iter().map(|p| p.0.as_f64() * 1000.0).collect();
        if let Some(h) = self.hg {
            ts.extend(h.points.iter().map(|p| p.0.as_f64() * 1000.0).filter(|&t| t > 0.0 && t < end));
        }
        ts.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * end.max(1.0));
        ts
    }

    fn is_constant(&self, t0: f64, t1: f64) -> bool {
        let u = |t: f64| T::lit(t / 1000.0);
        let s_const = self.sched.s_at(u(t0)) == self.sched.s_at(u(t1));
        let g_const = self.hg.is_none_or(|h| h.g_at(u(t0)) == h.g_at(u(t1)));
        s_const && g_const
    }
}

/// Fourth-order commutator-free Magnus weights.
const CF4_A: f64 = 0.25 + 0.288_675_134_594_812_9; // 1/4 + √3/6
const CF4_B: f64 = 0.25 - 0.288_675_134_594_812_9;
const GAUSS_OFF: f64 = 0.288_675_134_594_812_9; // √3/6

/// Integrates `i dψ/dt = 2π[B(s)/2 (g Σh Z + ΣJ ZZ) − sign·A(s)/2 ΣX] ψ`
/// over the schedule. Segments with constant s and g use one exact
/// exponential; ramps use an adaptive fourth-order commutator-free Magnus
/// integrator with step-doubling error control.
pub fn anneal_evolve<T: Real>(
    model: &IsingModel<T>,
    sched: &AnnealSchedule<T>,
    hg: Option<&HGainSchedule<T>>,
    cal: &CalibrationTable<T>,
    cfg: &EvolutionConfig,
    initial: &StateVector<T>,
) -> Result<StateVector<T>, DynamicsError> {
    model.check()?;
    let n = model.n_nodes();
    if n > cfg.qubit_cap {
        return Err(DynamicsError::QubitCap { n, cap: cfg.qubit_cap });
    }
    if initial.n_qubits() != n {
        return Err(DynamicsError::Mismatch(format!(
            "initial state has {} qubits, model has {n}",
            initial.n_qubits()
        )));
    }
    if !(cfg.tolerance > 0.0) || !(cfg.max_segment_ns > 0.0) {
        return Err(DynamicsError::InvalidConfig("tolerance and max_segment_ns must be positive".into()));
    }
    if cfg.transverse_sign != 1 && cfg.transverse_sign != -1 {
        return Err(DynamicsError::InvalidConfig("transverse_sign must be ±1".into()));
    }
    sched
        .check_shape()
        .map_err(|e| DynamicsError::Mismatch(e.to_string()))?;

    let dzz = model.coupler_diagonal();
    let dz = model.field_diagonal();
    let prop = Propagator { dzz: &dzz, dz: &dz, n };
    let drive = Drive {
        sched,
        hg,
        cal,
        sign: f64::from(cfg.transverse_sign),
    };
    let mut psi = initial.amps.clone();
    let bps = drive.breakpoints();
    for w in bps.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        if drive.is_constant(ta, tb) {
            let c = drive.coeffs(0.5 * (ta + tb))?;
            prop.exp_apply(c, tb - ta, &mut psi);
        } else {
            integrate_ramp(&prop, &drive, ta, tb, cfg, &mut psi)?;
        }
    }
    Ok(StateVector { n_qubits: n, amps: psi })
}

fn cf4_step<T: Real>(
    prop: &Propagator<'_, T>,
    drive: &Drive<'_, T>,
    t: f64,
    dt: f64,
    psi: &mut Vec<Complex<T>>,
) -> Result<(), DynamicsError> {
    let h1 = drive.coeffs(t + (0.5 - GAUSS_OFF) * dt)?;
    let h2 = drive.coeffs(t + (0.5 + GAUSS_OFF) * dt)?;
    prop.exp_apply(h1.combine(CF4_A, h2, CF4_B), dt, psi);
    prop.exp_apply(h1.combine(CF4_B, h2, CF4_A), dt, psi);
    Ok(())
}

fn integrate_ramp<T: Real>(
    prop: &Propagator<'_, T>,
    drive: &Drive<'_, T>,
    ta: f64,
    tb: f64,
    cfg: &EvolutionConfig,
    psi: &mut Vec<Complex<T>>,
) -> Result<(), DynamicsError> {
    let mut t = ta;
    let mut dt = (tb - ta).min(cfg.max_segment_ns);
    let mut full = psi.clone();
    let mut fine = psi.clone();
    let mut rejections = 0usize;
    while t < tb {
        let last = tb - t <= dt * (1.0 + 1e-12);
        let h = if last { tb - t } else { dt };
        full.copy_from_slice(psi);
        fine.copy_from_slice(psi);
        cf4_step(prop, drive, t, h, &mut full)?;
        cf4_step(prop, drive, t, 0.5 * h, &mut fine)?;
        cf4_step(prop, drive, t + 0.5 * h, 0.5 * h, &mut fine)?;
        let err = ordered_sum(fine.len(), |r| {
            r.map(|i| (fine[i] - full[i]).norm_sqr().as_f64()).sum()
        })
        .sqrt();
        let factor = if err == 0.0 {
            4.0
        } else {
            (0.9 * (cfg.tolerance / err).powf(0.2)).clamp(0.1, 4.0)
        };
        if err <= cfg.tolerance || h < 1e-9 * (tb - ta).max(1e-300) {
            std::mem::swap(psi, &mut fine);
            t = if last { tb } else { t + h };
            dt = (h * factor).min(cfg.max_segment_ns);
            rejections = 0;
        } else {
            dt = h * factor;
            rejections += 1;
            if rejections > 200 {
                return Err(DynamicsError::InvalidConfig("step size control failed".into()));
            }
        }
    }
    Ok(())
}

/// Single-qubit ground states of `π[B·g·h_q Z − sign·A X]` at the start of
/// the schedule: the h-pinned initial state, ignoring couplers.
pub fn pinned_initial_state<T: Real>(
    model: &IsingModel<T>,
    sched: &AnnealSchedule<T>,
    hg: Option<&HGainSchedule<T>>,
    cal: &CalibrationTable<T>,
    transverse_sign: i8,
) -> Result<StateVector<T>, DynamicsError> {
    let s0 = sched.points[0].1;
    let (a, b) = cal.interp(s0)?;
    let g = hg.map_or(1.0, |h| h.g_at(T::zero()).as_f64());
    let qubits: Vec<[Complex<T>; 2]> = model
        .h
        .iter()
        .map(|&h| {
            let z = b.as_f64() * g * h.as_f64();
            let x = -f64::from(transverse_sign) * a.as_f64();
            // ground state of [[z, x], [x, −z]]
            let e = (z * z + x * x).sqrt();
            let (u, d) = if x == 0.0 {
                if z <= 0.0 {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            } else if z <= 0.0 {
                (x, -e - z)
            } else {
                (e - z, -x)
            };
            let nrm = (u * u + d * d).sqrt();
            let (u, d) = (u / nrm, d / nrm);
            [
                Complex::new(T::lit(u), T::zero()),
                Complex::new(T::lit(d), T::zero()),
            ]
        })
        .collect();
    Ok(StateVector::product(&qubits))
}

/// One Z-basis configuration and how often it was read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub spins: Vec<i8>,
    pub multiplicity: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub tile: Option<usize>,
    pub gauge: Option<usize>,
    pub seed: u64,
}

/// Z-basis reads; spin columns follow `labels`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSet {
    pub labels: Vec<usize>,
    pub records: Vec<SampleRecord>,
    pub metadata: SampleMetadata,
}

impl SampleSet {
    pub fn num_reads(&self) -> u64 {
        self.records.iter().map(|r| r.multiplicity).sum()
    }

    pub fn check(&self) -> Result<(), DynamicsError> {
        for r in &self.records {
            if r.multiplicity == 0 {
                return Err(DynamicsError::Mismatch("multiplicity must be at least 1".into()));
            }
            if r.spins.len() != self.labels.len() || r.spins.iter().any(|&s| s != 1 && s != -1) {
                return Err(DynamicsError::Mismatch("each record needs one ±1 spin per node".into()));
            }
        }
        Ok(())
    }

    /// Merges identical configurations; records sorted by configuration.
    pub fn aggregate(labels: Vec<usize>, reads: impl IntoIterator<Item = (Vec<i8>, u64)>, metadata: SampleMetadata) -> Self {
        let mut counts: BTreeMap<Vec<i8>, u64> = BTreeMap::new();
        for (spins, m) in reads {
            *counts.entry(spins).or_insert(0) += m;
        }
        SampleSet {
            labels,
            records: counts
                .into_iter()
                .map(|(spins, multiplicity)| SampleRecord { spins, multiplicity })
                .collect(),
            metadata,
        }
    }

    /// CSV: node labels then `multiplicity`, spins as ±1.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for l in &self.labels {
            out.push_str(&l.to_string());
            out.push(',');
        }
        out.push_str("multiplicity\n");
        for r in &self.records {
            for s in &r.spins {
                out.push_str(if *s > 0 { "1," } else { "-1," });
            }
            out.push_str(&r.multiplicity.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, DynamicsError> {
        let bad = |m: String| DynamicsError::Mismatch(format!("samples CSV: {m}"));
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.last() != Some(&"multiplicity") {
            return Err(bad("last column must be `multiplicity`".into()));
        }
        let labels = cols[..cols.len() - 1]
            .iter()
            .map(|c| c.parse::<usize>().map_err(|_| bad(format!("bad node label `{c}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| bad(e.to_string()))?;
            let mut spins = Vec::with_capacity(labels.len());
            for f in row.iter().take(labels.len()) {
                spins.push(f.parse::<i8>().map_err(|_| bad(format!("bad spin `{f}`")))?);
            }
            let multiplicity = row
                .get(labels.len())
                .ok_or_else(|| bad("missing multiplicity".into()))?
                .parse::<u64>()
                .map_err(|_| bad("bad multiplicity".into()))?;
            records.push(SampleRecord { spins, multiplicity });
        }
        let set = SampleSet {
            labels,
            records,
            metadata: SampleMetadata::default(),
        };
        set.check()?;
        Ok(set)
    }
}

/// Draws `shots` independent Z-basis reads from `|ψ|²`. Bit 0 reads as +1.
pub fn sample_z<T: Real>(state: &StateVector<T>, labels: &[usize], shots: u64, seed: u64) -> SampleSet {
    assert_eq!(labels.len(), state.n_qubits(), "one label per qubit");
    let probs = state.probabilities();
    let mut cum = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in probs {
        acc += p;
        cum.push(acc);
    }
    let total = acc;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
    for _ in 0..shots {
        let u = rng.gen::<f64>() * total;
        let idx = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        *counts.entry(idx).or_insert(0) += 1;
    }
    let n = state.n_qubits();
    SampleSet {
        labels: labels.to_vec(),
        records: counts
            .into_iter()
            .map(|(idx, multiplicity)| SampleRecord {
                spins: (0..n).map(|q| if (idx >> q) & 1 == 0 { 1 } else { -1 }).collect(),
                multiplicity,
            })
            .collect(),
        metadata: SampleMetadata {
            tile: None,
            gauge: None,
            seed,
        },
    }
}

fn check_gauge(r: &[i8], n: usize) -> Result<(), DynamicsError> {
    if r.len() != n || r.iter().any(|&x| x != 1 && x != -1) {
        return Err(DynamicsError::IncompleteGauge);
    }
    Ok(())
}

/// Spin reversal: `h_i → r_i h_i`, `J_ij → r_i r_j J_ij`.
pub fn gauge_transform<T: Real>(model: &IsingModel<T>, r: &[i8]) -> Result<IsingModel<T>, DynamicsError> {
    check_gauge(r, model.n_nodes())?;
    let sign = |x: i8| T::lit(f64::from(x));
    Ok(IsingModel {
        labels: model.labels.clone(),
        h: model.h.iter().zip(r).map(|(&h, &ri)| h * sign(ri)).collect(),
        couplers: model.couplers.clone(),
        j: model
            .couplers
            .iter()
            .zip(&model.j)
            .map(|(&(a, b), &j)| j * sign(r[a] * r[b]))
            .collect(),
    })
}

/// Undoes a gauge on samples: `s_i → r_i s_i`.
pub fn ungauge(samples: &SampleSet, r: &[i8]) -> Result<SampleSet, DynamicsError> {
    check_gauge(r, samples.labels.len())?;
    Ok(SampleSet::aggregate(
        samples.labels.clone(),
        samples.records.iter().map(|rec| {
            (
                rec.spins.iter().zip(r).map(|(&s, &ri)| s * ri).collect(),
                rec.multiplicity,
            )
        }),
        samples.metadata.clone(),
    ))
}

/// Applies a gauge to a classical spin configuration.
pub fn gauge_spins(spins: &[i8], r: &[i8]) -> Vec<i8> {
    spins.iter().zip(r).map(|(&s, &ri)| s * ri).collect()
}
