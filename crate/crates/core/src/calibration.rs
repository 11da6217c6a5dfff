//! Device calibration curves `A(s)`, `B(s)` (energy / h, in GHz) and device
//! constraint profiles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{fmt17, Real};

/// Slack allowed for plateaus in the monotonicity checks.
const MONOTONE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("calibration CSV: {0}")]
    Csv(String),
    #[error("expected header `s,A_GHz,B_GHz`, got `{0}`")]
    Header(String),
    #[error("calibration table is empty")]
    Empty,
    #[error("duplicate s = {0}")]
    DuplicateS(f64),
    #[error("s = {0} outside [0, 1]")]
    SOutOfRange(f64),
    #[error("calibration grid must include s = 0 and s = 1")]
    MissingEndpoint,
    #[error("negative or non-finite energy at s = {0}")]
    NegativeEnergy(f64),
    #[error("{column}(s) is not {expected} at s = {s}")]
    NotMonotone {
        column: &'static str,
        expected: &'static str,
        s: f64,
    },
    #[error("A(1) = {0} GHz is not close to zero")]
    FinalTransverseField(f64),
    #[error("column lengths differ")]
    Shape,
}

/// Piecewise-linear calibration table, immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable<T: Real> {
    s_grid: Vec<T>,
    a_ghz: Vec<T>,
    b_ghz: Vec<T>,
    device_id: String,
}

impl<T: Real> CalibrationTable<T> {
    /// Sorts rows by `s` and validates them.
    pub fn new(
        device_id: impl Into<String>,
        rows: Vec<(T, T, T)>,
    ) -> Result<Self, CalibrationError> {
        let mut rows = rows;
        if rows.is_empty() {
            return Err(CalibrationError::Empty);
        }
        for &(s, a, b) in &rows {
            if !s.is_finite() || s < T::zero() || s > T::one() {
                return Err(CalibrationError::SOutOfRange(s.as_f64()));
            }
            if !(a.is_finite() && b.is_finite()) || a < T::zero() || b < T::zero() {
                return Err(CalibrationError::NegativeEnergy(s.as_f64()));
            }
        }
        rows.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite"));
        for w in rows.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(CalibrationError::DuplicateS(w[0].0.as_f64()));
            }
        }
        if rows[0].0 != T::zero() || rows[rows.len() - 1].0 != T::one() {
            return Err(CalibrationError::MissingEndpoint);
        }
        let tol = T::lit(MONOTONE_TOL);
        for w in rows.windows(2) {
            if w[1].1 > w[0].1 + tol {
                return Err(CalibrationError::NotMonotone {
                    column: "A",
                    expected: "non-increasing",
                    s: w[1].0.as_f64(),
                });
            }
            if w[1].2 < w[0].2 - tol {
                return Err(CalibrationError::NotMonotone {
                    column: "B",
                    expected: "non-decreasing",
                    s: w[1].0.as_f64(),
                });
            }
        }
        let a_max = rows[0].1;
        let a_end = rows[rows.len() - 1].1;
        if a_end > T::lit(0.01) * a_max + tol {
            return Err(CalibrationError::FinalTransverseField(a_end.as_f64()));
        }
        Ok(CalibrationTable {
            s_grid: rows.iter().map(|r| r.0).collect(),
            a_ghz: rows.iter().map(|r| r.1).collect(),
            b_ghz: rows.iter().map(|r| r.2).collect(),
            device_id: device_id.into(),
        })
    }

    /// `A(s) = 2(1-s)`, `B(s) = 2s` on `points` evenly spaced grid points.
    /// The closed forms make it the reference fixture for the derivation.
    pub fn synthetic_linear(points: usize) -> Self {
        let points = points.max(2);
        let rows = (0..points)
            .map(|i| {
                let s = grid_point::<T>(i, points);
                (s, T::lit(2.0) * (T::one() - s), T::lit(2.0) * s)
            })
            .collect();
        Self::new("synthetic-linear", rows).expect("synthetic table is valid")
    }

    /// Illustrative curves with the qualitative shape of a production QPU
    /// (large transverse field at s = 0 dying off quickly, B of a few GHz
    /// at the end). Not vendor data.
    pub fn synthetic_realistic(points: usize) -> Self {
        let points = points.max(2);
        let rows = (0..points)
            .map(|i| {
                let s = grid_point::<T>(i, points);
                let one_minus = T::one() - s;
                (
                    s,
                    T::lit(6.0) * one_minus * one_minus * one_minus,
                    T::lit(0.2) + T::lit(11.0) * s * s,
                )
            })
            .collect();
        Self::new("synthetic-realistic", rows).expect("synthetic table is valid")
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn s_grid(&self) -> &[T] {
        &self.s_grid
    }

    pub fn a_ghz(&self) -> &[T] {
        &self.a_ghz
    }

    pub fn b_ghz(&self) -> &[T] {
        &self.b_ghz
    }

    pub fn len(&self) -> usize {
        self.s_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_grid.is_empty()
    }

    /// Piecewise-linear `(A(s), B(s))`; grid points return stored values.
    pub fn interp(&self, s: T) -> Result<(T, T), CalibrationError> {
        if !(s >= T::zero() && s <= T::one()) {
            return Err(CalibrationError::SOutOfRange(s.as_f64()));
        }
        let i = self.s_grid.partition_point(|&x| x < s);
        if self.s_grid[i] == s {
            return Ok((self.a_ghz[i], self.b_ghz[i]));
        }
        let (s0, s1) = (self.s_grid[i - 1], self.s_grid[i]);
        let f = (s - s0) / (s1 - s0);
        let lerp = |y: &[T]| y[i - 1] + (y[i] - y[i - 1]) * f;
        Ok((lerp(&self.a_ghz), lerp(&self.b_ghz)))
    }

    /// CSV with 17 significant digits; `load_calibration` reads it back
    /// bit-exactly.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# device: {}\ns,A_GHz,B_GHz\n", self.device_id);
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{}\n",
                fmt17(self.s_grid[i]),
                fmt17(self.a_ghz[i]),
                fmt17(self.b_ghz[i])
            ));
        }
        out
    }
}

fn grid_point<T: Real>(i: usize, points: usize) -> T {
    if i + 1 == points {
        T::one()
    } else {
        T::from_count(i) / T::from_count(points - 1)
    }
}

/// Parses `s,A_GHz,B_GHz` CSV text. Lines starting with `#` are comments; a
/// `# device: NAME` comment sets the device id.
pub fn load_calibration<T: Real>(
    text: &str,
    device_id: &str,
) -> Result<CalibrationTable<T>, CalibrationError> {
    let mut id = device_id.to_string();
    for line in text.lines() {
        if let Some(rest) = line.trim().strip_prefix("# device:") {
            id = rest.trim().to_string();
            break;
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CalibrationError::Csv(e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["s", "A_GHz", "B_GHz"] {
        return Err(CalibrationError::Header(names.join(",")));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CalibrationError::Csv(e.to_string()))?;
        let field = |k: usize| -> Result<T, CalibrationError> {
            record[k]
                .parse::<f64>()
                .map(T::lit)
                .map_err(|_| CalibrationError::Csv(format!("bad number `{}`", &record[k])))
        };
        rows.push((field(0)?, field(1)?, field(2)?));
    }
    CalibrationTable::new(id, rows)
}

/// Programmable limits of an annealer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConstraints {
    pub device_id: String,
    pub min_anneal_us: f64,
    pub max_anneal_us: f64,
    pub anneal_time_resolution_us: f64,
    pub h_gain_min: f64,
    pub j_range: [f64; 2],
    pub coupler_precision: f64,
    pub max_schedule_points: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintsError {
    #[error("invalid device profile: {0}")]
    Invalid(&'static str),
    #[error("device profile JSON: {0}")]
    Format(String),
    #[error("unknown device profile `{0}`")]
    Unknown(String),
}

impl DeviceConstraints {
    fn advantage(id: &str, h_gain_min: f64) -> Self {
        DeviceConstraints {
            device_id: id.to_string(),
            min_anneal_us: 0.5,
            max_anneal_us: 2000.0,
            anneal_time_resolution_us: 0.01,
            h_gain_min,
            j_range: [-1.0, 1.0],
            coupler_precision: 0.0005,
            max_schedule_points: 12,
        }
    }

    pub fn advantage_system4_1() -> Self {
        Self::advantage("Advantage_system4.1", -3.0)
    }

    pub fn advantage_system6_2() -> Self {
        Self::advantage("Advantage_system6.2", -4.0)
    }

    /// Looks up a built-in profile by device name (case-insensitive, `.` or
    /// `_` as separator).
    pub fn preset(name: &str) -> Result<Self, ConstraintsError> {
        let key = name.to_ascii_lowercase().replace('.', "_");
        match key.as_str() {
            "advantage_system4_1" => Ok(Self::advantage_system4_1()),
            "advantage_system6_2" => Ok(Self::advantage_system6_2()),
            _ => Err(ConstraintsError::Unknown(name.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), ConstraintsError> {
        if !(self.min_anneal_us > 0.0 && self.min_anneal_us < self.max_anneal_us) {
            return Err(ConstraintsError::Invalid("need 0 < min_anneal_us < max_anneal_us"));
        }
        if !(self.anneal_time_resolution_us > 0.0) {
            return Err(ConstraintsError::Invalid("resolution must be positive"));
        }
        if !(self.h_gain_min < 0.0) {
            return Err(ConstraintsError::Invalid("h_gain_min must be negative"));
        }
        if !(self.j_range[0] < self.j_range[1]) {
            return Err(ConstraintsError::Invalid("empty j_range"));
        }
        if !(self.coupler_precision >= 0.0) {
            return Err(ConstraintsError::Invalid("negative coupler precision"));
        }
        if self.max_schedule_points < 2 {
            return Err(ConstraintsError::Invalid("max_schedule_points < 2"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConstraintsError> {
        let dc: Self =
            serde_json::from_str(text).map_err(|e| ConstraintsError::Format(e.to_string()))?;
        dc.validate()?;
        Ok(dc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serialises")
    }

    /// Steepest allowed schedule slope, `1 / min_anneal_us` per µs.
    pub fn max_slope(&self) -> f64 {
        1.0 / self.min_anneal_us
    }
}
