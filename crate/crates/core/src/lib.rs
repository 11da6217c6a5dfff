//! Quantum-annealing schedules equivalent to kicked-Ising (Trotterized
//! transverse-field Ising) circuits on heavy-hex lattices: lattice and
//! Pegasus embedding generation, schedule derivation under device
//! constraints, exact simulators and Z-basis observables.
//!
//! Numeric types are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

pub mod backend;
pub mod calibration;
pub mod cli;
pub mod dynamics;
pub mod lattice;
pub mod observables;
pub mod pegasus;
pub mod scalar;
pub mod schedule;

pub use scalar::Real;

pub type CalibrationTableF64 = calibration::CalibrationTable<f64>;
pub type CalibrationTableF32 = calibration::CalibrationTable<f32>;
pub type DerivedParamsF64 = schedule::DerivedParams<f64>;
pub type AnnealScheduleF64 = schedule::AnnealSchedule<f64>;
pub type HGainScheduleF64 = schedule::HGainSchedule<f64>;
pub type IsingModelF64 = dynamics::IsingModel<f64>;
pub type StateVectorF64 = dynamics::StateVector<f64>;
pub type StateVectorF32 = dynamics::StateVector<f32>;
pub type MagnetizationCurveF64 = observables::MagnetizationCurve<f64>;
pub type CorrelationMatrixF64 = observables::CorrelationMatrix<f64>;
pub type MockSamplerF64 = backend::MockSampler<f64>;
