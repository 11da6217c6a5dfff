//! Z-basis observables from samples or exact states: magnetization,
//! spin-spin correlations, distance-binned correlations and RMSE against a
//! spline-interpolated reference curve.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{SampleSet, StateVector};
use crate::lattice::HeavyHexLattice;
use crate::scalar::{fmt17, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservableError {
    #[error("no samples")]
    Empty,
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("node {0} is not reachable from the anchor")]
    Disconnected(usize),
    #[error("{0}")]
    Mismatch(String),
    #[error("a cubic spline needs at least 4 strictly increasing knots")]
    TooFewKnots,
    #[error("x = {x} outside the reference range [{lo}, {hi}]")]
    Extrapolation { x: f64, lo: f64, hi: f64 },
}

/// Where observables come from. Spin column / qubit `k` is node `labels[k]`.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a, T: Real> {
    Samples(&'a SampleSet),
    State {
        state: &'a StateVector<T>,
        labels: &'a [usize],
    },
}

impl<'a, T: Real> Source<'a, T> {
    pub fn labels(&self) -> &'a [usize] {
        match self {
            Source::Samples(s) => &s.labels,
            Source::State { labels, .. } => labels,
        }
    }

    fn column(&self, node: usize) -> Result<usize, ObservableError> {
        self.labels()
            .iter()
            .position(|&l| l == node)
            .ok_or(ObservableError::UnknownNode(node))
    }

    fn check(&self) -> Result<(), ObservableError> {
        match self {
            Source::Samples(s) => {
                if s.num_reads() == 0 {
                    return Err(ObservableError::Empty);
                }
                s.check().map_err(|e| ObservableError::Mismatch(e.to_string()))
            }
            Source::State { state, labels } => {
                if state.n_qubits() != labels.len() {
                    return Err(ObservableError::Mismatch("one label per qubit required".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    LatticeMean,
    SingleSite(usize),
}

impl std::str::FromStr for Scope {
    type Err = String;

    /// `mean` or `site:<node>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "mean" || s == "lattice_mean" {
            return Ok(Scope::LatticeMean);
        }
        s.strip_prefix("site:")
            .and_then(|n| n.parse().ok())
            .map(Scope::SingleSite)
            .ok_or_else(|| format!("unknown scope `{s}` (mean | site:<node>)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Estimate<T: Real> {
    pub value: T,
    /// Zero for exact states.
    pub stderr: T,
}

/// Mean spin. For samples the error is the sample standard deviation of the
/// per-read values over `√reads`.
pub fn magnetization<T: Real>(src: Source<'_, T>, scope: Scope) -> Result<Estimate<T>, ObservableError> {
    src.check()?;
    let cols: Vec<usize> = match scope {
        Scope::LatticeMean => (0..src.labels().len()).collect(),
        Scope::SingleSite(node) => vec![src.column(node)?],
    };
    if cols.is_empty() {
        return Err(ObservableError::Empty);
    }
    match src {
        Source::State { state, .. } => {
            let z = state.z_expectations();
            let value = cols.iter().map(|&c| z[c]).sum::<f64>() / cols.len() as f64;
            Ok(Estimate {
                value: T::lit(value),
                stderr: T::zero(),
            })
        }
        Source::Samples(set) => {
            let reads = set.num_reads() as f64;
            let per_read: Vec<(f64, f64)> = set
                .records
                .iter()
                .map(|r| {
                    let v = cols.iter().map(|&c| f64::from(r.spins[c])).sum::<f64>() / cols.len() as f64;
                    (v, r.multiplicity as f64)
                })
                .collect();
            let mean = per_read.iter().map(|(v, m)| v * m).sum::<f64>() / reads;
            let stderr = if reads > 1.0 {
                let ss = per_read.iter().map(|(v, m)| m * (v - mean).powi(2)).sum::<f64>();
                (ss / (reads - 1.0)).sqrt() / reads.sqrt()
            } else {
                0.0
            };
            Ok(Estimate {
                value: T::lit(mean),
                stderr: T::lit(stderr),
            })
        }
    }
}

/// Per-node `⟨Z⟩`, in label order.
pub fn site_magnetizations<T: Real>(src: Source<'_, T>) -> Result<Vec<T>, ObservableError> {
    src.check()?;
    match src {
        Source::State { state, .. } => Ok(state.z_expectations().into_iter().map(T::lit).collect()),
        Source::Samples(set) => {
            let reads = set.num_reads() as f64;
            let mut acc = vec![0.0; set.labels.len()];
            for r in &set.records {
                for (a, &s) in acc.iter_mut().zip(&r.spins) {
                    *a += f64::from(s) * r.multiplicity as f64;
                }
            }
            Ok(acc.into_iter().map(|a| T::lit(a / reads)).collect())
        }
    }
}

/// Symmetric matrix of `⟨Z_i Z_j⟩`, unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CorrelationMatrix<T: Real> {
    pub labels: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Real> CorrelationMatrix<T> {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.n() + j]
    }

    /// `i,j,value` rows with node labels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,value\n");
        for a in 0..self.n() {
            for b in 0..self.n() {
                out.push_str(&format!("{},{},{}\n", self.labels[a], self.labels[b], fmt17(self.get(a, b))));
            }
        }
        out
    }
}

pub fn correlation_matrix<T: Real>(src: Source<'_, T>) -> Result<CorrelationMatrix<T>, ObservableError> {
    src.check()?;
    let n = src.labels().len();
    let mut v = vec![0.0f64; n * n];
    match src {
        Source::State { state, .. } => {
            for a in 0..n {
                for b in a + 1..n {
                    let c = state.expect_zz(a, b);
                    v[a * n + b] = c;
                    v[b * n + a] = c;
                }
            }
        }
        Source::Samples(set) => {
            let reads = set.num_reads() as f64;
            for r in &set.records {
                let m = r.multiplicity as f64;
                for a in 0..n {
                    for b in a + 1..n {
                        v[a * n + b] += m * f64::from(r.spins[a] * r.spins[b]);
                    }
                }
            }
            for a in 0..n {
                for b in a + 1..n {
                    v[a * n + b] /= reads;
                    v[b * n + a] = v[a * n + b];
                }
            }
        }
    }
    for a in 0..n {
        v[a * n + a] = 1.0;
    }
    Ok(CorrelationMatrix {
        labels: src.labels().to_vec(),
        values: v.into_iter().map(T::lit).collect(),
    })
}

/// Mean `Z_anchor·Z_j` over all `j` at each shortest-path distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DistanceBins<T: Real> {
    pub anchor: usize,
    pub bins: Vec<(usize, T)>,
}

/// Distance bins per θ_h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DistanceBinnedCorrelation<T: Real> {
    pub anchor: usize,
    pub per_theta: Vec<(T, Vec<(usize, T)>)>,
}

impl<T: Real> DistanceBinnedCorrelation<T> {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta_h,distance,value\n");
        for (theta, bins) in &self.per_theta {
            for (d, v) in bins {
                out.push_str(&format!("{},{},{}\n", fmt17(*theta), d, fmt17(*v)));
            }
        }
        out
    }
}

/// Unit-weight shortest paths from `anchor` (Dijkstra with unit weights is
/// breadth-first search). Source labels are lattice node ids.
pub fn distance_binned_correlation<T: Real>(
    src: Source<'_, T>,
    lattice: &HeavyHexLattice,
    anchor: usize,
) -> Result<DistanceBins<T>, ObservableError> {
    if anchor >= lattice.n_nodes() {
        return Err(ObservableError::UnknownNode(anchor));
    }
    let corr = correlation_matrix(src)?;
    let a = src.column(anchor)?;
    let dist = lattice.bfs_distances(anchor);
    let mut bins: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (col, &node) in corr.labels.iter().enumerate() {
        if node >= lattice.n_nodes() {
            return Err(ObservableError::UnknownNode(node));
        }
        let d = dist[node].ok_or(ObservableError::Disconnected(node))?;
        let e = bins.entry(d).or_insert((0.0, 0));
        e.0 += corr.get(a, col).as_f64();
        e.1 += 1;
    }
    Ok(DistanceBins {
        anchor,
        bins: bins
            .into_iter()
            .map(|(d, (s, c))| (d, T::lit(s / c as f64)))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CurvePoint<T: Real> {
    pub theta_h: T,
    pub value: T,
    pub stderr: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MagnetizationCurve<T: Real> {
    pub scope: Scope,
    pub points: Vec<CurvePoint<T>>,
}

impl<T: Real> MagnetizationCurve<T> {
    /// Sorts by θ and checks `|value| ≤ 1`.
    pub fn new(scope: Scope, mut points: Vec<CurvePoint<T>>) -> Result<Self, ObservableError> {
        points.sort_by(|a, b| a.theta_h.partial_cmp(&b.theta_h).expect("finite theta"));
        if points.iter().any(|p| !(p.value.abs() <= T::one() + T::lit(1e-12))) {
            return Err(ObservableError::Mismatch("|magnetization| exceeds 1".into()));
        }
        Ok(MagnetizationCurve { scope, points })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta_h,value,stderr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", fmt17(p.theta_h), fmt17(p.value), fmt17(p.stderr)));
        }
        out
    }
}

/// Natural cubic spline (zero second derivative at both ends).
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalCubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalCubicSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self, ObservableError> {
        let n = x.len();
        if n < 4 || y.len() != n || x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ObservableError::TooFewKnots);
        }
        // tridiagonal system for the interior second derivatives (Thomas algorithm)
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let mut m = vec![0.0; n];
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut upper = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            upper[i] = h[i + 1];
            rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]);
        }
        for i in 1..k {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        for i in (0..k).rev() {
            let next = if i + 1 < k { m[i + 2] } else { 0.0 };
            m[i + 1] = (rhs[i] - upper[i] * next) / diag[i];
        }
        Ok(NaturalCubicSpline {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    pub fn eval(&self, t: f64) -> Result<f64, ObservableError> {
        let (lo, hi) = (self.x[0], self.x[self.x.len() - 1]);
        if !(t >= lo && t <= hi) {
            return Err(ObservableError::Extrapolation { x: t, lo, hi });
        }
        let i = self.x.partition_point(|&v| v <= t).clamp(1, self.x.len() - 1) - 1;
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        Ok(a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub rmse: f64,
    pub n_points: usize,
    pub reference_id: String,
    pub spline: String,
}

/// RMSE of the curve against the natural-spline interpolant of the
/// reference samples, evaluated at the curve's θ values.
pub fn rmse_vs_reference<T: Real>(
    curve: &MagnetizationCurve<T>,
    reference: &[(f64, f64)],
    reference_id: &str,
) -> Result<RmseReport, ObservableError> {
    if curve.points.is_empty() {
        return Err(ObservableError::Empty);
    }
    let mut sorted = reference.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite reference"));
    let xs: Vec<f64> = sorted.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = sorted.iter().map(|p| p.1).collect();
    let spline = NaturalCubicSpline::new(&xs, &ys)?;
    let mut ss = 0.0;
    for p in &curve.points {
        let r = spline.eval(p.theta_h.as_f64())?;
        ss += (p.value.as_f64() - r).powi(2);
    }
    Ok(RmseReport {
        rmse: (ss / curve.points.len() as f64).sqrt(),
        n_points: curve.points.len(),
        reference_id: reference_id.to_string(),
        spline: "natural-cubic".into(),
    })
}

/// Reads a `theta_h,value` reference CSV (extra columns ignored).
pub fn load_reference_csv(text: &str) -> Result<Vec<(f64, f64)>, ObservableError> {
    let bad = |m: String| ObservableError::Mismatch(format!("reference CSV: {m}"));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let num = |k: usize| -> Result<f64, ObservableError> {
            row.get(k)
                .ok_or_else(|| bad("need two columns".into()))?
                .parse()
                .map_err(|_| bad(format!("bad number in row {:?}", row.position().map(|p| p.line()))))
        };
        out.push((num(0)?, num(1)?));
    }
    Ok(out)
}
