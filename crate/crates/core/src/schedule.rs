//! Anneal parameters equivalent to a kicked-Ising circuit, and the reverse
//! anneal / h-gain schedules that realise them on a device.
//!
//! Units: calibration energies are GHz (energy / h), derived times are ns so
//! that `2π · GHz · ns` is a phase, schedule points are µs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{CalibrationError, CalibrationTable, DeviceConstraints};
use crate::scalar::Real;

/// Relative slack for floating point comparisons against device limits.
const LIMIT_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("theta_h must lie in (0, pi/2], got {0}")]
    ThetaOutOfRange(f64),
    #[error("n_steps must be at least 1")]
    NoSteps,
    #[error("j_qa must be negative (ferromagnetic), got {0}")]
    NotFerromagnetic(f64),
    #[error("no calibration point with B(s) > 0")]
    NoCoupling,
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("schedule lasts {total_us} us, outside the device window [{min_us}, {max_us}] us")]
    OutsideWindow { total_us: f64, min_us: f64, max_us: f64 },
    #[error("h-gain ramp-down of {ramp_down_ns} ns does not fit in the {ramp_ns} ns forward ramp")]
    RampDownTooLong { ramp_down_ns: f64, ramp_ns: f64 },
    #[error("anneal time {0} us is too short for the fixed ramp budget")]
    AnnealTimeTooShort(f64),
    #[error("invalid schedule: {0}")]
    Invalid(String),
}

/// How `s*` is picked from the calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SSelection {
    /// Grid point minimising the ratio residual (ties to the smaller s).
    #[default]
    Grid,
    /// Exact root of the piecewise-linear ratio condition; falls back to
    /// the grid rule when the condition has no root.
    Continuous,
}

/// Why a parameter set cannot be programmed as is. `true` means ok.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feasibility {
    pub pause_in_window: bool,
    pub coupler_resolvable: bool,
    pub j_in_range: bool,
    pub above_resolution: bool,
}

impl Feasibility {
    pub fn all(&self) -> bool {
        self.pause_in_window && self.coupler_resolvable && self.j_in_range && self.above_resolution
    }

    pub fn reasons(&self) -> Vec<&'static str> {
        let mut r = Vec::new();
        if !self.pause_in_window {
            r.push("pause outside anneal time window");
        }
        if !self.coupler_resolvable {
            r.push("|j_qa| below coupler precision");
        }
        if !self.j_in_range {
            r.push("j_qa outside programmable range");
        }
        if !self.above_resolution {
            r.push("pause below anneal time resolution");
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DerivedParams<T: Real> {
    pub theta_h: T,
    pub n_steps: usize,
    pub j_qa: T,
    pub s_star: T,
    pub a_ghz: T,
    pub b_ghz: T,
    pub t_from_b_ns: T,
    /// `None` when `A(s*) = 0`; the pause then follows the B branch only.
    pub t_from_a_ns: Option<T>,
    pub pause_ns: T,
    pub ratio_residual: T,
    pub selection: SSelection,
    pub feasible: Feasibility,
}

impl<T: Real> DerivedParams<T> {
    pub fn is_feasible(&self) -> bool {
        self.feasible.all()
    }

    pub fn pause_us(&self) -> T {
        self.pause_ns / T::lit(1000.0)
    }

    /// `|2T·2π·B·j + Nπ|` at `T = pause`.
    pub fn coupling_time_residual(&self) -> T {
        let two_pi = T::TAU();
        (T::lit(2.0) * self.pause_ns * two_pi * self.b_ghz * self.j_qa
            + T::from_count(self.n_steps) * T::PI())
        .abs()
    }

    /// `|T·2π·A − Nθ|` at `T = pause`.
    pub fn field_time_residual(&self) -> T {
        (self.pause_ns * T::TAU() * self.a_ghz - T::from_count(self.n_steps) * self.theta_h).abs()
    }
}

/// `|A/(B·j) + 2θ/π|`, infinite where `B = 0`.
fn ratio_residual<T: Real>(a: T, b: T, j: T, theta: T) -> T {
    if b <= T::zero() {
        return T::infinity();
    }
    (a / (b * j) + T::lit(2.0) * theta / T::PI()).abs()
}

/// Parameters of the anneal pause equivalent to `n_steps` Trotter steps of
/// the kicked-Ising circuit with angle `theta_h`.
pub fn derive_params<T: Real>(
    theta_h: T,
    n_steps: usize,
    j_qa: T,
    cal: &CalibrationTable<T>,
    dc: &DeviceConstraints,
    selection: SSelection,
) -> Result<DerivedParams<T>, ScheduleError> {
    if !(theta_h > T::zero() && theta_h <= T::FRAC_PI_2() * T::lit(1.0 + 1e-12)) {
        return Err(ScheduleError::ThetaOutOfRange(theta_h.as_f64()));
    }
    if n_steps == 0 {
        return Err(ScheduleError::NoSteps);
    }
    if !(j_qa < T::zero()) {
        return Err(ScheduleError::NotFerromagnetic(j_qa.as_f64()));
    }

    let grid = select_on_grid(theta_h, j_qa, cal)?;
    let s_star = match selection {
        SSelection::Grid => grid,
        SSelection::Continuous => select_continuous(theta_h, j_qa, cal).unwrap_or(grid),
    };
    let (a, b) = cal.interp(s_star)?;
    let n = T::from_count(n_steps);
    let t_from_b = -n / (T::lit(4.0) * b * j_qa);
    let t_from_a = if a > T::zero() {
        Some(n * theta_h / (T::TAU() * a))
    } else {
        None
    };
    let pause_ns = match t_from_a {
        Some(ta) => (t_from_b + ta) / T::lit(2.0),
        None => t_from_b,
    };

    let pause_us = pause_ns.as_f64() / 1000.0;
    let j = j_qa.as_f64();
    let feasible = Feasibility {
        pause_in_window: pause_us >= dc.min_anneal_us * (1.0 - LIMIT_SLACK)
            && pause_us <= dc.max_anneal_us * (1.0 + LIMIT_SLACK),
        coupler_resolvable: j.abs() >= dc.coupler_precision,
        j_in_range: j >= dc.j_range[0] && j <= dc.j_range[1],
        above_resolution: pause_us >= dc.anneal_time_resolution_us * (1.0 - LIMIT_SLACK),
    };
    Ok(DerivedParams {
        theta_h,
        n_steps,
        j_qa,
        s_star,
        a_ghz: a,
        b_ghz: b,
        t_from_b_ns: t_from_b,
        t_from_a_ns: t_from_a,
        pause_ns,
        ratio_residual: ratio_residual(a, b, j_qa, theta_h),
        selection,
        feasible,
    })
}

fn select_on_grid<T: Real>(theta: T, j: T, cal: &CalibrationTable<T>) -> Result<T, ScheduleError> {
    let mut best: Option<(T, T)> = None;
    for i in 0..cal.len() {
        let r = ratio_residual(cal.a_ghz()[i], cal.b_ghz()[i], j, theta);
        if !r.is_finite() {
            continue;
        }
        // strict comparison keeps the smaller s on ties
        if best.map_or(true, |(_, br)| r < br) {
            best = Some((cal.s_grid()[i], r));
        }
    }
    best.map(|(s, _)| s).ok_or(ScheduleError::NoCoupling)
}

/// Root of `A(s) − κ·B(s)` with `κ = 2θ|j|/π`, which is decreasing in s.
fn select_continuous<T: Real>(theta: T, j: T, cal: &CalibrationTable<T>) -> Option<T> {
    let kappa = T::lit(2.0) * theta * j.abs() / T::PI();
    let f = |i: usize| cal.a_ghz()[i] - kappa * cal.b_ghz()[i];
    for i in 0..cal.len() {
        let fi = f(i);
        if fi == T::zero() && cal.b_ghz()[i] > T::zero() {
            return Some(cal.s_grid()[i]);
        }
        if i + 1 < cal.len() {
            let fn_ = f(i + 1);
            if fi > T::zero() && fn_ < T::zero() {
                let (s0, s1) = (cal.s_grid()[i], cal.s_grid()[i + 1]);
                return Some(s0 + (s1 - s0) * fi / (fi - fn_));
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Starts at s = 1 in a classical state.
    Reverse,
    /// Starts at s = 0.
    Forward,
    /// Constant s; the idealised pause without quenches.
    Hold,
}

/// Piecewise-linear `s(t)`, `t` in µs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AnnealSchedule<T: Real> {
    pub points: Vec<(T, T)>,
    pub kind: ScheduleKind,
}

/// Piecewise-linear h-gain `g(t)`, `t` in µs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HGainSchedule<T: Real> {
    pub points: Vec<(T, T)>,
}

fn piecewise<T: Real>(points: &[(T, T)], t: T) -> T {
    let i = points.partition_point(|p| p.0 <= t);
    if i == 0 {
        return points[0].1;
    }
    if i == points.len() {
        return points[i - 1].1;
    }
    let (t0, y0) = points[i - 1];
    let (t1, y1) = points[i];
    y0 + (y1 - y0) * (t - t0) / (t1 - t0)
}

fn check_times<T: Real>(points: &[(T, T)]) -> Result<(), ScheduleError> {
    if points.len() < 2 {
        return Err(ScheduleError::Invalid("fewer than two points".into()));
    }
    if points[0].0 != T::zero() {
        return Err(ScheduleError::Invalid("first point must be at t = 0".into()));
    }
    if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(ScheduleError::Invalid("times must be strictly increasing".into()));
    }
    Ok(())
}

impl<T: Real> AnnealSchedule<T> {
    /// Constant `s` for `duration_us`.
    pub fn hold(s: T, duration_us: T) -> Self {
        AnnealSchedule {
            points: vec![(T::zero(), s), (duration_us, s)],
            kind: ScheduleKind::Hold,
        }
    }

    pub fn duration_us(&self) -> T {
        self.points.last().map_or(T::zero(), |p| p.0)
    }

    pub fn s_at(&self, t_us: T) -> T {
        piecewise(&self.points, t_us)
    }

    /// Structural rules only: times, s range and endpoint rules.
    pub fn check_shape(&self) -> Result<(), ScheduleError> {
        check_times(&self.points)?;
        if self.points.iter().any(|p| !(p.1 >= T::zero() && p.1 <= T::one())) {
            return Err(ScheduleError::Invalid("s outside [0, 1]".into()));
        }
        let first = self.points[0].1;
        let last = self.points[self.points.len() - 1].1;
        match self.kind {
            ScheduleKind::Reverse if first != T::one() => {
                Err(ScheduleError::Invalid("reverse schedule must start at s = 1".into()))
            }
            ScheduleKind::Forward if first != T::zero() => {
                Err(ScheduleError::Invalid("forward schedule must start at s = 0".into()))
            }
            ScheduleKind::Reverse | ScheduleKind::Forward if last != T::one() => {
                Err(ScheduleError::Invalid("schedule must end at s = 1 for readout".into()))
            }
            ScheduleKind::Hold if self.points.iter().any(|p| p.1 != first) => {
                Err(ScheduleError::Invalid("hold schedule must keep s constant".into()))
            }
            _ => Ok(()),
        }
    }

    /// Full device validation: shape, slope bound, duration window and point
    /// budget.
    pub fn validate(&self, dc: &DeviceConstraints) -> Result<(), ScheduleError> {
        self.check_shape()?;
        let max_slope = dc.max_slope() * (1.0 + LIMIT_SLACK);
        for w in self.points.windows(2) {
            let slope = ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).as_f64().abs();
            if slope > max_slope {
                return Err(ScheduleError::Invalid(format!(
                    "slope {slope} per us exceeds 1/min_anneal_us"
                )));
            }
        }
        if self.points.len() > dc.max_schedule_points {
            return Err(ScheduleError::Invalid(format!(
                "{} points exceed the device limit of {}",
                self.points.len(),
                dc.max_schedule_points
            )));
        }
        check_window(self.duration_us().as_f64(), dc)
    }
}

impl<T: Real> HGainSchedule<T> {
    pub fn g_at(&self, t_us: T) -> T {
        piecewise(&self.points, t_us)
    }

    pub fn duration_us(&self) -> T {
        self.points.last().map_or(T::zero(), |p| p.0)
    }

    pub fn validate(&self, dc: &DeviceConstraints) -> Result<(), ScheduleError> {
        check_times(&self.points)?;
        let gmin = T::lit(dc.h_gain_min);
        if self.points.iter().any(|p| !(p.1 >= gmin && p.1 <= T::zero())) {
            return Err(ScheduleError::Invalid("g outside [h_gain_min, 0]".into()));
        }
        let n = self.points.len();
        if self.points[n - 1].1 != T::zero() || self.points[n - 2].1 != T::zero() {
            return Err(ScheduleError::Invalid("final h-gain segment must be 0".into()));
        }
        if n > dc.max_schedule_points {
            return Err(ScheduleError::Invalid("too many h-gain points".into()));
        }
        Ok(())
    }
}

fn check_window(total_us: f64, dc: &DeviceConstraints) -> Result<(), ScheduleError> {
    if total_us < dc.min_anneal_us * (1.0 - LIMIT_SLACK) || total_us > dc.max_anneal_us * (1.0 + LIMIT_SLACK) {
        return Err(ScheduleError::OutsideWindow {
            total_us,
            min_us: dc.min_anneal_us,
            max_us: dc.max_anneal_us,
        });
    }
    Ok(())
}

/// Integer tick arithmetic on the device time grid, so that emitted times
/// are exact multiples of the resolution.
struct Clock {
    resolution: f64,
    per_us: Option<f64>,
}

impl Clock {
    fn new(dc: &DeviceConstraints) -> Self {
        let inv = 1.0 / dc.anneal_time_resolution_us;
        let per_us = ((inv - inv.round()).abs() < 1e-9 * inv).then(|| inv.round());
        Clock {
            resolution: dc.anneal_time_resolution_us,
            per_us,
        }
    }

    fn ticks_up(&self, us: f64) -> i64 {
        (us / self.resolution - 1e-9).ceil().max(0.0) as i64
    }

    fn ticks_nearest(&self, us: f64) -> i64 {
        (us / self.resolution).round() as i64
    }

    fn us<T: Real>(&self, ticks: i64) -> T {
        match self.per_us {
            Some(p) => T::lit(ticks as f64 / p),
            None => T::lit(ticks as f64 * self.resolution),
        }
    }
}

fn push_point<T: Real>(points: &mut Vec<(T, T)>, t: T, y: T) {
    if points.last().is_some_and(|p| p.0 == t) {
        return;
    }
    points.push((t, y));
}

/// Reverse anneal: quench from s = 1 to `s*` at the maximum slope, pause,
/// quench back to s = 1 for readout.
pub fn build_reverse_schedule<T: Real>(
    p: &DerivedParams<T>,
    dc: &DeviceConstraints,
) -> Result<AnnealSchedule<T>, ScheduleError> {
    let clock = Clock::new(dc);
    let s = p.s_star;
    let ramp = clock.ticks_up((T::one() - s).as_f64() * dc.min_anneal_us);
    let pause = clock.ticks_nearest(p.pause_us().as_f64());
    let mut points = vec![(T::zero(), T::one())];
    push_point(&mut points, clock.us(ramp), s);
    push_point(&mut points, clock.us(ramp + pause), s);
    push_point(&mut points, clock.us(2 * ramp + pause), T::one());
    if points.len() == 1 {
        return Err(ScheduleError::Invalid("pause rounds to zero at s = 1".into()));
    }
    let sched = AnnealSchedule {
        points,
        kind: ScheduleKind::Reverse,
    };
    check_window(sched.duration_us().as_f64(), dc)?;
    sched.validate(dc)?;
    Ok(sched)
}

/// Forward anneal to `s*` with a strong negative h-gain pinning the spins up,
/// released `ramp_down_ns` before the pause starts.
pub fn build_hgain_schedules<T: Real>(
    p: &DerivedParams<T>,
    dc: &DeviceConstraints,
    ramp_down_ns: f64,
) -> Result<(AnnealSchedule<T>, HGainSchedule<T>), ScheduleError> {
    let clock = Clock::new(dc);
    let s = p.s_star;
    let up = clock.ticks_up(s.as_f64() * dc.min_anneal_us);
    let pause = clock.ticks_nearest(p.pause_us().as_f64());
    let rest = clock.ticks_up((T::one() - s).as_f64() * dc.min_anneal_us);
    let ramp_ns = clock.us::<f64>(up) * 1000.0;
    if ramp_down_ns >= ramp_ns {
        return Err(ScheduleError::RampDownTooLong { ramp_down_ns, ramp_ns });
    }
    let mut points = vec![(T::zero(), T::zero())];
    push_point(&mut points, clock.us(up), s);
    push_point(&mut points, clock.us(up + pause), s);
    push_point(&mut points, clock.us(up + pause + rest), T::one());
    let sched = AnnealSchedule {
        points,
        kind: ScheduleKind::Forward,
    };
    let t1: T = clock.us(up);
    let release = t1 - T::lit(ramp_down_ns / 1000.0);
    let gmin = T::lit(dc.h_gain_min);
    let mut g = vec![(T::zero(), gmin)];
    push_point(&mut g, release, gmin);
    push_point(&mut g, t1, T::zero());
    push_point(&mut g, sched.duration_us(), T::zero());
    let hg = HGainSchedule { points: g };
    check_window(sched.duration_us().as_f64(), dc)?;
    sched.validate(dc)?;
    hg.validate(dc)?;
    Ok((sched, hg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMethod {
    ReverseAnneal,
    HGain,
}

impl std::str::FromStr for SweepMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "reverse" | "reverse_anneal" => Ok(SweepMethod::ReverseAnneal),
            "hgain" | "h_gain" => Ok(SweepMethod::HGain),
            other => Err(format!("unknown method `{other}` (reverse | hgain)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    ThetaH,
    AnnealFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SweepEntry<T: Real> {
    /// θ_h for angle sweeps, s for fixed-time sweeps.
    pub value: T,
    pub params: Option<DerivedParams<T>>,
    pub schedule: Option<AnnealSchedule<T>>,
    pub hgain: Option<HGainSchedule<T>>,
    pub pause_us: Option<T>,
    pub feasible: bool,
    pub issues: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SweepPlan<T: Real> {
    pub axis: SweepAxis,
    pub method: SweepMethod,
    pub entries: Vec<SweepEntry<T>>,
}

/// Default h-gain release used by the angle sweeps.
pub const DEFAULT_RAMP_DOWN_NS: f64 = 30.0;

/// One entry per angle `θ_k = (π/2)·k/n`, `k = 1..=n`. Infeasible entries
/// are kept and flagged.
#[allow(clippy::too_many_arguments)]
pub fn plan_sweep<T: Real>(
    n_steps: usize,
    j_qa: T,
    n_angles: usize,
    method: SweepMethod,
    cal: &CalibrationTable<T>,
    dc: &DeviceConstraints,
    selection: SSelection,
    ramp_down_ns: f64,
) -> SweepPlan<T> {
    let n_angles = n_angles.max(1);
    let entries = (1..=n_angles)
        .into_par_iter()
        .map(|k| {
            let theta = if k == n_angles {
                T::FRAC_PI_2()
            } else {
                T::FRAC_PI_2() * T::from_count(k) / T::from_count(n_angles)
            };
            sweep_entry(theta, n_steps, j_qa, method, cal, dc, selection, ramp_down_ns)
        })
        .collect();
    SweepPlan {
        axis: SweepAxis::ThetaH,
        method,
        entries,
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep_entry<T: Real>(
    theta: T,
    n_steps: usize,
    j_qa: T,
    method: SweepMethod,
    cal: &CalibrationTable<T>,
    dc: &DeviceConstraints,
    selection: SSelection,
    ramp_down_ns: f64,
) -> SweepEntry<T> {
    let mut entry = SweepEntry {
        value: theta,
        params: None,
        schedule: None,
        hgain: None,
        pause_us: None,
        feasible: false,
        issues: Vec::new(),
    };
    let p = match derive_params(theta, n_steps, j_qa, cal, dc, selection) {
        Ok(p) => p,
        Err(e) => {
            entry.issues.push(e.to_string());
            return entry;
        }
    };
    entry.issues.extend(p.feasible.reasons().into_iter().map(String::from));
    entry.pause_us = Some(p.pause_us());
    let built = match method {
        SweepMethod::ReverseAnneal => build_reverse_schedule(&p, dc).map(|s| (s, None)),
        SweepMethod::HGain => build_hgain_schedules(&p, dc, ramp_down_ns).map(|(s, g)| (s, Some(g))),
    };
    match built {
        Ok((s, g)) => {
            entry.schedule = Some(s);
            entry.hgain = g;
        }
        Err(e) => entry.issues.push(e.to_string()),
    }
    entry.feasible = entry.issues.is_empty();
    entry.params = Some(p);
    entry
}

/// Fixed-total-time sweep over the anneal fraction. Reverse: 0.5 µs quenches
/// in and out, pause `AT − 1`. h-gain: 0.5 µs quenches, the field held for
/// 1 µs and released over 10 ns, leaving a free pause of `AT − 1.51`.
pub fn plan_fixed_time_sweep<T: Real>(
    anneal_time_us: T,
    j_qa: T,
    method: SweepMethod,
    dc: &DeviceConstraints,
    s_step: T,
) -> Result<SweepPlan<T>, ScheduleError> {
    let at = anneal_time_us;
    let budget = match method {
        SweepMethod::ReverseAnneal => T::one(),
        SweepMethod::HGain => T::lit(1.51),
    };
    if !(at > budget) || at < T::lit(dc.min_anneal_us) {
        return Err(ScheduleError::AnnealTimeTooShort(at.as_f64()));
    }
    if !(s_step > T::zero()) {
        return Err(ScheduleError::Invalid("s_step must be positive".into()));
    }
    let count = (T::one() / s_step).round().to_usize().unwrap_or(0);
    let half = T::lit(0.5);
    let mut issues_common = Vec::new();
    if j_qa.abs().as_f64() < dc.coupler_precision {
        issues_common.push("|j_qa| below coupler precision".to_string());
    }
    if j_qa.as_f64() < dc.j_range[0] || j_qa.as_f64() > dc.j_range[1] {
        issues_common.push("j_qa outside programmable range".to_string());
    }
    let entries = (0..=count)
        .map(|i| {
            let s = if i == count {
                T::one()
            } else {
                T::from_count(i) / T::from_count(count)
            };
            let (schedule, hgain, pause) = match method {
                SweepMethod::ReverseAnneal => (
                    AnnealSchedule {
                        points: vec![(T::zero(), T::one()), (half, s), (at - half, s), (at, T::one())],
                        kind: ScheduleKind::Reverse,
                    },
                    None,
                    at - T::one(),
                ),
                SweepMethod::HGain => (
                    AnnealSchedule {
                        points: vec![(T::zero(), T::zero()), (half, s), (at - half, s), (at, T::one())],
                        kind: ScheduleKind::Forward,
                    },
                    Some(HGainSchedule {
                        points: vec![
                            (T::zero(), T::lit(dc.h_gain_min)),
                            (T::one(), T::lit(dc.h_gain_min)),
                            (T::lit(1.01), T::zero()),
                            (at, T::zero()),
                        ],
                    }),
                    at - T::lit(1.51),
                ),
            };
            let mut issues = issues_common.clone();
            if let Err(e) = schedule.validate(dc) {
                issues.push(e.to_string());
            }
            if let Some(Err(e)) = hgain.as_ref().map(|g| g.validate(dc)) {
                issues.push(e.to_string());
            }
            SweepEntry {
                value: s,
                params: None,
                schedule: Some(schedule),
                hgain,
                pause_us: Some(pause),
                feasible: issues.is_empty(),
                issues,
            }
        })
        .collect();
    Ok(SweepPlan {
        axis: SweepAxis::AnnealFraction,
        method,
        entries,
    })
}

/// Two-column waveform CSV (`t_us,<column>`).
pub fn waveform_csv<T: Real>(column: &str, points: &[(T, T)]) -> String {
    let mut out = format!("t_us,{column}\n");
    for &(t, y) in points {
        out.push_str(&format!("{},{}\n", crate::scalar::fmt17(t), crate::scalar::fmt17(y)));
    }
    out
}
