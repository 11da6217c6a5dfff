mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hexqa::calibration::{CalibrationTable, DeviceConstraints};
use hexqa::dynamics::{SampleRecord, 
    anneal_evolve, gauge_spins, gauge_transform, pinned_initial_state, sample_z, trotter_evolve, ungauge,
    DynamicsError, EvolutionConfig, IsingModel, SampleSet, StateVector, StepOrder, TrotterConfig,
};
use hexqa::lattice::three_edge_coloring;
use hexqa::schedule::{build_hgain_schedules, build_reverse_schedule, derive_params, AnnealSchedule, SSelection};

use common::*;

fn fast_device() -> DeviceConstraints {
    DeviceConstraints {
        device_id: "test-fast".into(),
        min_anneal_us: 1e-3,
        anneal_time_resolution_us: 1e-5,
        ..DeviceConstraints::advantage_system6_2()
    }
}

fn random_spins(n: usize, seed: u64) -> Vec<i8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect()
}

#[test]
fn trotter_matches_dense_on_eight_qubits() {
    let lat = fragment(8);
    let n = 8;
    let coloring = three_edge_coloring(&lat).unwrap();
    let theta = 0.9;
    let mut step = DMatrix::identity(1 << n, 1 << n);
    for q in 0..n {
        step = rx_full(n, q, theta) * step;
    }
    for &(a, b) in lat.edges() {
        step = rzz_full(n, a, b, -FRAC_PI_2) * step;
    }
    let mut v = basis0(n);
    for steps in 0..=6 {
        let psi: StateVector<f64> = trotter_evolve(&lat, &coloring, &TrotterConfig::new(steps, theta)).unwrap();
        let d = psi.amplitudes().iter().zip(v.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(d < 1e-10, "N = {steps}: {d:e}");
        v = &step * v;
    }
}

#[test]
fn zero_steps_is_identity() {
    let lat = fragment(6);
    let coloring = three_edge_coloring(&lat).unwrap();
    let psi: StateVector<f64> = trotter_evolve(&lat, &coloring, &TrotterConfig::new(0, 1.0)).unwrap();
    assert_eq!(psi, StateVector::zero_state(6));
}

#[test]
fn zero_angle_keeps_spins_up() {
    let lat = fragment(7);
    let coloring = three_edge_coloring(&lat).unwrap();
    let psi: StateVector<f64> = trotter_evolve(&lat, &coloring, &TrotterConfig::new(9, 0.0)).unwrap();
    assert!(psi.z_expectations().iter().all(|&z| (z - 1.0).abs() < 1e-15));
}

#[test]
fn color_layers_commute() {
    let lat = fragment(12);
    let coloring = three_edge_coloring(&lat).unwrap();
    assert_eq!(coloring.layers(&lat).len(), 3);
    let base: StateVector<f64> = trotter_evolve(&lat, &coloring, &TrotterConfig::new(7, 0.6)).unwrap();
    for order in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
        let cfg = TrotterConfig {
            layer_order: Some(order.to_vec()),
            ..TrotterConfig::new(7, 0.6)
        };
        let psi = trotter_evolve(&lat, &coloring, &cfg).unwrap();
        assert!(psi.max_abs_diff(&base) < 1e-12);
    }
    let bad = TrotterConfig {
        layer_order: Some(vec![0, 0, 1]),
        ..TrotterConfig::new(1, 0.6)
    };
    assert!(trotter_evolve::<f64>(&lat, &coloring, &bad).is_err());
}

#[test]
fn step_order_variant() {
    // RZZ first from |0…0⟩ only adds a global phase in the first step
    let lat = fragment(5);
    let coloring = three_edge_coloring(&lat).unwrap();
    let cfg = TrotterConfig {
        step_order: StepOrder::RzzThenRx,
        ..TrotterConfig::new(1, 0.4)
    };
    let a: StateVector<f64> = trotter_evolve(&lat, &coloring, &cfg).unwrap();
    let b: StateVector<f64> = trotter_evolve(&lat, &coloring, &TrotterConfig::new(1, 0.4)).unwrap();
    let za = a.z_expectations();
    for (x, y) in za.iter().zip(b.z_expectations()) {
        assert!((x - y).abs() < 1e-14);
    }
}

#[test]
fn single_precision_tracks_double() {
    let lat = fragment(10);
    let coloring = three_edge_coloring(&lat).unwrap();
    let a: StateVector<f64> = trotter_evolve(&lat, &coloring, &TrotterConfig::new(20, 0.7)).unwrap();
    let b: StateVector<f32> = trotter_evolve(&lat, &coloring, &TrotterConfig::new(20, 0.7f32)).unwrap();
    for (x, y) in a.z_expectations().iter().zip(b.z_expectations()) {
        assert!((x - y).abs() < 1e-4);
    }
}

#[test]
fn qubit_cap_enforced() {
    let lat = fragment(12);
    let coloring = three_edge_coloring(&lat).unwrap();
    let cfg = TrotterConfig {
        qubit_cap: 10,
        ..TrotterConfig::new(1, 0.1)
    };
    assert!(matches!(
        trotter_evolve::<f64>(&lat, &coloring, &cfg),
        Err(DynamicsError::QubitCap { n: 12, cap: 10 })
    ));
}

/// `2π[B/2·(Σh Z + ΣJ ZZ) − sign·A/2·ΣX]` as a dense real matrix.
fn dense_qa(model: &IsingModel<f64>, a: f64, b: f64, sign: f64) -> DMatrix<f64> {
    let n = model.n_nodes();
    let dim = 1 << n;
    let mut h = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let z = |q: usize| if (i >> q) & 1 == 0 { 1.0 } else { -1.0 };
        let field: f64 = (0..n).map(|q| model.h[q] * z(q)).sum();
        let coupling: f64 = model.couplers.iter().zip(&model.j).map(|(&(p, q), &j)| j * z(p) * z(q)).sum();
        h[(i, i)] = PI * b * (field + coupling);
        for q in 0..n {
            h[(i ^ (1 << q), i)] += -sign * PI * a;
        }
    }
    h
}

#[test]
fn constant_segment_matches_dense_exponential() {
    let lat = fragment(8);
    let cal = CalibrationTable::<f64>::synthetic_realistic(1001);
    let mut model = IsingModel::from_lattice(&lat, -0.3, 0.0);
    model.h = (0..8).map(|q| 0.1 * q as f64 - 0.35).collect();
    for &(s, t_us) in &[(0.3, 0.02), (0.55, 0.137), (0.9, 0.4)] {
        let (a, b) = cal.interp(s).unwrap();
        for sign in [1i8, -1] {
            let cfg = EvolutionConfig { transverse_sign: sign, ..EvolutionConfig::default() };
            let psi = anneal_evolve(&model, &AnnealSchedule::hold(s, t_us), None, &cal, &cfg, &StateVector::zero_state(8))
                .unwrap();
            let want = EigenPropagator::new(dense_qa(&model, a, b, sign as f64)).evolve_zero(t_us * 1000.0);
            let d = psi.amplitudes().iter().zip(&want).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            assert!(d < 1e-8, "s = {s}, sign {sign}: {d:e}");
        }
    }
}

#[test]
fn diagonal_hamiltonian_keeps_z() {
    // A(1) = 0: a computational state only picks up a phase
    let lat = fragment(6);
    let cal = CalibrationTable::<f64>::synthetic_linear(101);
    let model = IsingModel::from_lattice(&lat, -0.7, 0.2);
    let spins = random_spins(6, 4);
    let init = StateVector::from_spins(&spins);
    let psi = anneal_evolve(&model, &AnnealSchedule::hold(1.0, 3.0), None, &cal, &EvolutionConfig::default(), &init)
        .unwrap();
    for (z, &s) in psi.z_expectations().iter().zip(&spins) {
        assert!((z - f64::from(s)).abs() < 1e-12, "{z} vs {s}");
    }
}

#[test]
fn norm_and_sign_invariance_with_ramps() {
    let lat = fragment(8);
    let cal = CalibrationTable::<f64>::synthetic_realistic(1001);
    let dc = fast_device();
    let mut model = IsingModel::from_lattice(&lat, -0.2, 0.0);
    let p = derive_params(0.8, 6, -0.2, &cal, &dc, SSelection::Grid).unwrap();
    let rev = build_reverse_schedule(&p, &dc).unwrap();
    let cfg = EvolutionConfig::default();
    for seed in 0..3 {
        let init = StateVector::from_spins(&random_spins(8, seed));
        let run = |sign: i8| {
            let c = EvolutionConfig { transverse_sign: sign, ..cfg.clone() };
            anneal_evolve(&model, &rev, None, &cal, &c, &init).unwrap()
        };
        let (plus, minus) = (run(1), run(-1));
        assert!((plus.norm() - 1.0).abs() < 1e-9);
        assert!((minus.norm() - 1.0).abs() < 1e-9);
        for (a, b) in plus.z_expectations().iter().zip(minus.z_expectations()) {
            assert!((a - b).abs() <= 2.0 * cfg.tolerance);
        }
    }

    // forward anneal with the h-gain pinning field
    model.h = vec![1.0; 8];
    let (fwd, g) = build_hgain_schedules(&p, &dc, 0.3).unwrap();
    let init = pinned_initial_state(&model, &fwd, Some(&g), &cal, 1).unwrap();
    let psi = anneal_evolve(&model, &fwd, Some(&g), &cal, &cfg, &init).unwrap();
    assert!((psi.norm() - 1.0).abs() < 1e-9);
}

#[test]
fn pinned_state_starts_spin_up() {
    let lat = fragment(4);
    let cal = CalibrationTable::<f64>::synthetic_linear(101);
    let model = IsingModel::from_lattice(&lat, -0.1, 1.0);
    let dc = fast_device();
    let p = derive_params(1.0, 10, -0.1, &cal, &dc, SSelection::Grid).unwrap();
    let (fwd, g) = build_hgain_schedules(&p, &dc, 0.1).unwrap();
    // at s = 0 the state is the transverse-field ground state: <Z> = 0
    let init = pinned_initial_state(&model, &fwd, Some(&g), &cal, 1).unwrap();
    assert!(init.z_expectations().iter().all(|z| z.abs() < 1e-12));
    assert!((init.norm() - 1.0).abs() < 1e-12);
}

#[test]
fn sampling_statistics() {
    let up = StateVector::<f64>::zero_state(3);
    let s = sample_z(&up, &[0, 1, 2], 100, 1);
    assert_eq!(s.records.len(), 1);
    assert_eq!(s.records[0].spins, vec![1, 1, 1]);

    let mut plus = StateVector::<f64>::zero_state(1);
    plus.apply_rx(0, FRAC_PI_2);
    let shots = 100_000;
    let s = sample_z(&plus, &[0], shots, 7);
    let mean: f64 = s.records.iter().map(|r| f64::from(r.spins[0]) * r.multiplicity as f64).sum::<f64>() / shots as f64;
    assert!(mean.abs() < 5.0 / (shots as f64).sqrt());
    assert_eq!(sample_z(&plus, &[0], shots, 7), s);
    assert_ne!(sample_z(&plus, &[0], shots, 8), s);
}

#[test]
fn samples_csv_round_trip() {
    let mut psi = StateVector::<f64>::zero_state(3);
    psi.apply_rx(1, 1.0);
    let s = sample_z(&psi, &[5, 7, 9], 500, 3);
    let back = SampleSet::from_csv(&s.to_csv()).unwrap();
    assert_eq!(back.labels, s.labels);
    assert_eq!(back.records, s.records);
    assert_eq!(back.num_reads(), 500);
}

#[test]
fn gauge_round_trip_keeps_observables() {
    let lat = fragment(7);
    let cal = CalibrationTable::<f64>::synthetic_realistic(1001);
    let mut model = IsingModel::from_lattice(&lat, -0.4, 0.0);
    model.h = (0..7).map(|q| 0.05 * q as f64).collect();
    let sched = AnnealSchedule::hold(0.6, 0.05);
    let spins = random_spins(7, 1);
    let cfg = EvolutionConfig::default();
    let plain = anneal_evolve(&model, &sched, None, &cal, &cfg, &StateVector::from_spins(&spins)).unwrap();
    let r = random_spins(7, 2);
    let gauged = gauge_transform(&model, &r).unwrap();
    let psi = anneal_evolve(&gauged, &sched, None, &cal, &cfg, &StateVector::from_spins(&gauge_spins(&spins, &r)))
        .unwrap();
    for (q, (a, b)) in plain.z_expectations().iter().zip(psi.z_expectations()).enumerate() {
        assert!((a - f64::from(r[q]) * b).abs() < 1e-10);
    }
    // samples: ungauge is an involution on the spins
    let s = sample_z(&psi, &gauged.labels, 200, 5);
    let back = ungauge(&ungauge(&s, &r).unwrap(), &r).unwrap();
    let sorted = |mut v: Vec<SampleRecord>| {
        v.sort_by(|a, b| a.spins.cmp(&b.spins));
        v
    };
    assert_eq!(sorted(back.records.clone()), sorted(s.records.clone()));
    assert!(gauge_transform(&model, &r[..3]).is_err());
}

#[test]
fn state_json_round_trip() {
    let mut psi = StateVector::<f64>::zero_state(2);
    psi.apply_rx(0, 0.3);
    let text = serde_json::to_string(&psi).unwrap();
    let back: StateVector<f64> = serde_json::from_str(&text).unwrap();
    assert_eq!(back, psi);
}
