//! End-to-end acceptance run: one line per criterion.
//!
//! `cargo test --test acceptance` runs all of them; pass criterion numbers
//! after `--` to run a subset. The 27-qubit curve check needs
//! `HEXQA_HEAVY=1` (about 1 GiB of memory and a long single-core runtime).

mod common;

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hexqa::calibration::{CalibrationTable, DeviceConstraints};
use hexqa::dynamics::{
    anneal_evolve, sample_z, trotter_evolve, EvolutionConfig, IsingModel, StateVector, TrotterConfig,
};
use hexqa::lattice::{make_heavy_hex, three_edge_coloring, LatticeKind};
use hexqa::observables::{
    correlation_matrix, distance_binned_correlation, magnetization, rmse_vs_reference, CurvePoint,
    MagnetizationCurve, NaturalCubicSpline, Scope, Source,
};
use hexqa::pegasus::{make_pegasus, tile_heavy_hex, verify_embedding, DefectList, TileTemplate};
use hexqa::schedule::{build_reverse_schedule, derive_params, AnnealSchedule, SSelection};

use common::*;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Verdict::*;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Option<Duration>,
    /// Qualitative criteria are reported but do not fail the run.
    gating: bool,
    run: fn() -> Verdict,
}

fn main() {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria = [
        Criterion { id: 1, name: "single-qubit kicked-Ising oracle", budget: Some(Duration::from_secs(1)), gating: true, run: c1_single_qubit },
        Criterion { id: 2, name: "trotter vs dense layer products", budget: Some(Duration::from_secs(10)), gating: true, run: c2_trotter_dense },
        Criterion { id: 3, name: "derivation closed form", budget: Some(Duration::from_secs(1)), gating: true, run: c3_closed_form },
        Criterion { id: 4, name: "pause equals exact circuit Hamiltonian", budget: Some(Duration::from_secs(120)), gating: true, run: c4_equivalence },
        Criterion { id: 5, name: "transverse-sign invariance", budget: Some(Duration::from_secs(120)), gating: true, run: c5_sign },
        Criterion { id: 6, name: "quench effect vs pause/ramp ratio", budget: None, gating: false, run: c6_quench },
        Criterion { id: 7, name: "P16 tiling counts", budget: Some(Duration::from_secs(30)), gating: true, run: c7_tiling },
        Criterion { id: 8, name: "27-qubit magnetization curves", budget: Some(Duration::from_secs(1800)), gating: true, run: c8_falcon27 },
        Criterion { id: 9, name: "observable estimators", budget: None, gating: true, run: c9_observables },
        Criterion { id: 10, name: "RMSE harness", budget: None, gating: true, run: c10_rmse },
        Criterion { id: 11, name: "pipeline determinism", budget: None, gating: true, run: c11_pipeline },
    ];
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let start = Instant::now();
        let verdict = std::panic::catch_unwind(c.run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let verdict = match (verdict, c.budget) {
            (Pass(d), Some(b)) if took > b => Fail(format!("{d}; runtime {took:.2?} over budget {b:?}")),
            (v, _) => v,
        };
        let (tag, detail) = match verdict {
            Pass(d) => ("PASS", d),
            Fail(d) if c.gating => {
                failed += 1;
                ("FAIL", d)
            }
            Fail(d) => ("FAIL", format!("{d} (qualitative, reported only)")),
            Skip(d) => ("SKIP", d),
        };
        println!("{tag} {:>2} {} [{:.2}s] {detail}", c.id, c.name, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

macro_rules! check {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Fail(format!($($fmt)*));
        }
    };
}

fn thetas(count: usize) -> Vec<f64> {
    (1..=count).map(|k| FRAC_PI_2 * k as f64 / count as f64).collect()
}

fn c1_single_qubit() -> Verdict {
    let one = make_heavy_hex(LatticeKind::Falcon27).unwrap().induced(&[0]).unwrap();
    let coloring = three_edge_coloring(&one).unwrap();
    let mut worst = 0.0f64;
    for n in 1..=50 {
        for &theta in &thetas(100) {
            let psi: StateVector<f64> = trotter_evolve(&one, &coloring, &TrotterConfig::new(n, theta)).unwrap();
            worst = worst.max((psi.expect_z(0) - (n as f64 * theta).cos()).abs());
        }
    }
    check!(worst < 1e-12, "max |<Z> - cos(N theta)| = {worst:.3e}");
    Pass(format!("5000 runs, max deviation {worst:.2e}"))
}

fn c2_trotter_dense() -> Verdict {
    let lat = fragment(6);
    let n = lat.n_nodes();
    let coloring = three_edge_coloring(&lat).unwrap();
    let layers = coloring.layers(&lat);
    let phi = -FRAC_PI_2;
    let mut worst = 0.0f64;
    for &theta in &[0.1, 0.7, 1.3, FRAC_PI_2] {
        let mut step = nalgebra::DMatrix::<num_complex::Complex64>::identity(1 << n, 1 << n);
        for q in 0..n {
            step = rx_full(n, q, theta) * step;
        }
        for layer in &layers {
            for &(a, b) in layer {
                step = rzz_full(n, a, b, phi) * step;
            }
        }
        let mut v = basis0(n);
        for steps in 0..=20 {
            let psi: StateVector<f64> = trotter_evolve(&lat, &coloring, &TrotterConfig::new(steps, theta)).unwrap();
            let d = psi
                .amplitudes()
                .iter()
                .zip(v.iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            worst = worst.max(d);
            v = &step * v;
        }
    }
    check!(worst < 1e-10, "max amplitude deviation {worst:.3e}");
    Pass(format!("N = 0..20, 4 angles, max amplitude deviation {worst:.2e}"))
}

fn c3_closed_form() -> Verdict {
    let dc = DeviceConstraints::advantage_system6_2();
    let cal = CalibrationTable::<f64>::synthetic_linear(1001);
    let j = -0.5;
    let h = 1e-3;
    let mut worst_s = 0.0f64;
    let mut worst_pause = 0.0f64;
    let mut worst_resid = 0.0f64;
    let mut worst_grid_excess = f64::NEG_INFINITY;
    for &n in &[1usize, 20, 1000] {
        for &theta in &thetas(100) {
            let p = derive_params(theta, n, j, &cal, &dc, SSelection::Continuous).unwrap();
            let s_exact = PI / (PI + theta);
            let pause_exact = n as f64 * (PI + theta) / (4.0 * PI);
            worst_s = worst_s.max((p.s_star - s_exact).abs());
            worst_pause = worst_pause.max((p.pause_ns - pause_exact).abs() / n as f64);
            let r = p.coupling_time_residual().abs().max(p.field_time_residual().abs());
            worst_resid = worst_resid.max(r / n as f64);

            let g = derive_params(theta, n, j, &cal, &dc, SSelection::Grid).unwrap();
            check!((g.s_star - s_exact).abs() <= h + 1e-15, "grid s* {} vs {s_exact}", g.s_star);
            // A/(B|j|) = 2(1-s)/s on this table: |r'| = 2/s² bounds the ratio error
            let ratio = |s: f64| 2.0 * (1.0 - s) / s;
            let slope = 2.0 / (g.s_star - h).powi(2);
            let bound = g.t_from_b_ns * slope * h / 2.0 / ratio(g.s_star);
            let gap = (g.t_from_a_ns.unwrap() - g.t_from_b_ns).abs();
            worst_grid_excess = worst_grid_excess.max(gap - bound);
        }
    }
    let at_half_pi = derive_params(FRAC_PI_2, 8, j, &cal, &dc, SSelection::Continuous).unwrap();
    check!(worst_s < 1e-12, "s* off the closed form by {worst_s:.3e}");
    check!(worst_pause < 1e-12, "pause off the closed form by {worst_pause:.3e} per step");
    check!(worst_resid < 1e-12, "time residuals reach {worst_resid:.3e} per step");
    check!((at_half_pi.pause_ns - 3.0).abs() < 1e-12, "theta = pi/2, N = 8 pause {} ns, not 3N/8", at_half_pi.pause_ns);
    check!(worst_grid_excess <= 1e-9, "grid |T_A - T_B| exceeds its bound by {worst_grid_excess:.3e} ns");

    // realistic scale, for the report only
    let real = CalibrationTable::<f64>::synthetic_realistic(1001);
    let gap = thetas(100)
        .iter()
        .map(|&t| {
            let p = derive_params(t, 200, -0.001, &real, &dc, SSelection::Grid).unwrap();
            (p.t_from_a_ns.unwrap() - p.t_from_b_ns).abs()
        })
        .fold(0.0, f64::max);
    Pass(format!(
        "s* = pi/(pi+theta), pause = N(pi+theta)/(4 pi) (3N/8 at pi/2), residual/N {worst_resid:.1e}; \
         grid gap within bound; realistic N=200 j=-0.001 max |T_A - T_B| = {gap:.1} ns"
    ))
}

fn test_device() -> DeviceConstraints {
    // fast ramps and a short minimum so that j = -0.5 schedules fit the window
    DeviceConstraints {
        device_id: "test-fast".into(),
        min_anneal_us: 1e-4,
        max_anneal_us: 2000.0,
        anneal_time_resolution_us: 1e-6,
        ..DeviceConstraints::advantage_system6_2()
    }
}

fn c4_equivalence() -> Verdict {
    let lat = fragment(10);
    let n = lat.n_nodes();
    let cal = CalibrationTable::<f64>::synthetic_linear(1001);
    let dc = DeviceConstraints::advantage_system6_2();
    let j = -0.5;
    let model = IsingModel::from_lattice(&lat, j, 0.0);
    let cfg = EvolutionConfig {
        transverse_sign: -1,
        ..EvolutionConfig::default()
    };
    let zero = StateVector::<f64>::zero_state(n);
    let mut worst = 0.0f64;
    for &theta in &thetas(10) {
        let oracle = EigenPropagator::new(dense_tfim(n, lat.edges(), -FRAC_PI_4, theta / 2.0));
        for &steps in &[1usize, 2, 5, 10] {
            let p = derive_params(theta, steps, j, &cal, &dc, SSelection::Continuous).unwrap();
            let sched = AnnealSchedule::hold(p.s_star, p.pause_us());
            let psi = anneal_evolve(&model, &sched, None, &cal, &cfg, &zero).unwrap();
            let want = z_of(&oracle.evolve_zero(steps as f64), n);
            let got = psi.z_expectations();
            let d = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(d);
        }
    }
    check!(worst < 1e-8, "max <Z_i> deviation {worst:.3e}");
    Pass(format!("10 qubits, N in {{1,2,5,10}}, 10 angles, max <Z_i> deviation {worst:.2e}"))
}

fn c5_sign() -> Verdict {
    let lat = fragment(10);
    let cal = CalibrationTable::<f64>::synthetic_linear(1001);
    let dc = test_device();
    let j = -0.5;
    let model = IsingModel::from_lattice(&lat, j, 0.0);
    let cfg = EvolutionConfig::default();
    let zero = StateVector::<f64>::zero_state(lat.n_nodes());
    let mut worst = 0.0f64;
    let mut runs = 0;
    for &theta in &thetas(10) {
        for &steps in &[1usize, 2, 5, 10] {
            let p = derive_params(theta, steps, j, &cal, &dc, SSelection::Continuous).unwrap();
            let scheds = [
                AnnealSchedule::hold(p.s_star, p.pause_us()),
                build_reverse_schedule(&p, &dc).unwrap(),
            ];
            for sched in &scheds {
                let z = |sign: i8| {
                    let c = EvolutionConfig { transverse_sign: sign, ..cfg.clone() };
                    anneal_evolve(&model, sched, None, &cal, &c, &zero).unwrap().z_expectations()
                };
                let (plus, minus) = (z(1), z(-1));
                let d = plus.iter().zip(&minus).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst = worst.max(d);
                runs += 1;
            }
        }
    }
    let limit = 2.0 * cfg.tolerance;
    check!(worst <= limit, "max <Z_i> difference {worst:.3e} over {limit:.1e}");
    Pass(format!("{runs} schedule pairs (pause only and with ramps), max difference {worst:.2e}"))
}

fn c6_quench() -> Verdict {
    // realistic device: ramps at the maximum slope of 1/0.5 us
    let lat = fragment(10);
    let cal = CalibrationTable::<f64>::synthetic_linear(1001);
    let dc = DeviceConstraints::advantage_system6_2();
    let (theta, j) = (FRAC_PI_4, -0.05);
    let model = IsingModel::from_lattice(&lat, j, 0.0);
    let cfg = EvolutionConfig::default();
    let zero = StateVector::<f64>::zero_state(lat.n_nodes());
    let mut rows = Vec::new();
    for &steps in &[200usize, 2000, 20_000, 200_000] {
        let p = derive_params(theta, steps, j, &cal, &dc, SSelection::Grid).unwrap();
        let ramped = match build_reverse_schedule(&p, &dc) {
            Ok(s) => s,
            Err(e) => return Fail(format!("N = {steps}: {e}")),
        };
        let pause = ramped.points[2].0 - ramped.points[1].0;
        let ramp = ramped.points[1].0;
        let hold = AnnealSchedule::hold(p.s_star, pause);
        let m = |s: &AnnealSchedule<f64>| {
            let psi = anneal_evolve(&model, s, None, &cal, &cfg, &zero).unwrap();
            magnetization(Source::State { state: &psi, labels: &(0..10).collect::<Vec<_>>() }, Scope::LatticeMean)
                .unwrap()
                .value
        };
        rows.push((steps, pause / ramp, (m(&ramped) - m(&hold)).abs()));
    }
    // control: the same comparison with near-instant ramps must vanish
    let fast = test_device();
    let p = derive_params(theta, 200, j, &cal, &fast, SSelection::Grid).unwrap();
    let ramped = build_reverse_schedule(&p, &fast).unwrap();
    let hold = AnnealSchedule::hold(p.s_star, ramped.points[2].0 - ramped.points[1].0);
    let z = |s: &AnnealSchedule<f64>| anneal_evolve(&model, s, None, &cal, &cfg, &zero).unwrap().z_expectations();
    let control = z(&ramped).iter().zip(z(&hold)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let report = rows
        .iter()
        .map(|(n, ratio, d)| format!("N={n} pause/ramp={ratio:.0} |dM|={d:.3e}"))
        .chain(std::iter::once(format!("control with 1e-4 us ramps {control:.1e}")))
        .collect::<Vec<_>>()
        .join(", ");
    let monotone = rows.windows(2).all(|w| w[1].2 < w[0].2);
    check!(monotone, "not monotone: {report}");
    Pass(report)
}

fn c7_tiling() -> Verdict {
    let lat = make_heavy_hex(LatticeKind::Eagle127).unwrap();
    let template = TileTemplate::eagle127_p16();
    let clean = make_pegasus(16, &DefectList::default()).unwrap();
    let tiling = tile_heavy_hex(&lat, &clean, &template);
    let k = tiling.embeddings.len();
    check!(k >= 6, "only {k} tiles on a defect-free P16");
    for e in &tiling.embeddings {
        check!(verify_embedding(e, &lat, &clean).is_ok(), "tile {} fails verification", e.tile_index);
    }
    let union: std::collections::HashSet<usize> = tiling.embeddings.iter().flat_map(|e| e.map.iter().copied()).collect();
    check!(union.len() == 127 * k, "tiles overlap: {} distinct qubits for {k} tiles", union.len());

    // one dead qubit inside each of three tiles
    let hit = [0usize, 2, 4];
    let defects = DefectList {
        missing_nodes: hit.iter().map(|&t| tiling.embeddings[t].map[62]).collect(),
        missing_edges: vec![],
    };
    let broken = make_pegasus(16, &defects).unwrap();
    let survivors = tile_heavy_hex(&lat, &broken, &template);
    for e in &survivors.embeddings {
        check!(verify_embedding(e, &lat, &broken).is_ok(), "surviving tile fails verification");
    }
    let expected = k - hit.len();
    check!(
        survivors.embeddings.len() == expected,
        "{} tiles with 3 defective, expected {expected}",
        survivors.embeddings.len()
    );
    Pass(format!("{k} verified disjoint tiles; {expected} survive defects in 3 tiles"))
}

fn c8_falcon27() -> Verdict {
    if std::env::var("HEXQA_HEAVY").map_or(true, |v| v != "1") {
        return Skip("opt-in: set HEXQA_HEAVY=1 (2^27 amplitudes, f32)".into());
    }
    let lat = make_heavy_hex(LatticeKind::Falcon27).unwrap();
    let coloring = three_edge_coloring(&lat).unwrap();
    let grid: Vec<f64> = (0..30).map(|k| FRAC_PI_2 * k as f64 / 29.0).collect();
    let mut curves = Vec::new();
    for &n in &[5usize, 20, 100] {
        let curve: Vec<f64> = grid
            .iter()
            .map(|&t| {
                let psi: StateVector<f32> = trotter_evolve(&lat, &coloring, &TrotterConfig::new(n, t as f32)).unwrap();
                psi.z_expectations().iter().sum::<f64>() / 27.0
            })
            .collect();
        check!(curve[0] == 1.0, "N = {n}: M(0) = {}", curve[0]);
        if n >= 20 {
            check!(curve[29] < 0.1, "N = {n}: M(pi/2) = {}", curve[29]);
        }
        curves.push(curve);
    }
    for w in curves.windows(2) {
        for k in 8..22 {
            check!(w[1][k] <= w[0][k] + 0.05, "larger N above smaller N at theta = {:.3}", grid[k]);
        }
    }
    Pass("M(0) = 1, M(pi/2) < 0.1 for N >= 20, mid-range ordering holds".into())
}

fn random_state(n: usize, seed: u64) -> StateVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amps = (0..1 << n)
        .map(|_| num_complex::Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
        .collect();
    let mut s = StateVector::from_amplitudes(n, amps).unwrap();
    s.normalize();
    s
}

fn c9_observables() -> Verdict {
    let lat = fragment(4);
    let labels: Vec<usize> = (0..4).collect();
    let hops = hop_distances(4, lat.edges());
    let mut exact_pairs = 0;
    let mut worst_z = 0.0f64;
    for seed in 0..8 {
        let psi = random_state(4, seed);
        let amps = psi.amplitudes();
        // enumeration oracle
        let mut c = [[0.0f64; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                c[a][b] = if a == b {
                    1.0
                } else {
                    amps.iter()
                        .enumerate()
                        .map(|(i, x)| {
                            let za = if (i >> a) & 1 == 0 { 1.0 } else { -1.0 };
                            let zb = if (i >> b) & 1 == 0 { 1.0 } else { -1.0 };
                            (x.re * x.re + x.im * x.im) * (za * zb)
                        })
                        .sum()
                };
            }
        }
        let src = Source::State { state: &psi, labels: &labels };
        let m = correlation_matrix(src).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                check!(m.get(a, b) == c[a][b], "seed {seed}: C[{a}][{b}] = {} vs {}", m.get(a, b), c[a][b]);
                exact_pairs += 1;
            }
        }
        for anchor in 0..4 {
            let bins = distance_binned_correlation(src, &lat, anchor).unwrap();
            let maxd = hops[anchor].iter().map(|d| d.unwrap()).max().unwrap();
            check!(bins.bins.len() == maxd + 1, "bin count");
            for &(d, v) in &bins.bins {
                let members: Vec<usize> = (0..4).filter(|&j| hops[anchor][j] == Some(d)).collect();
                let want = members.iter().map(|&j| c[anchor][j]).sum::<f64>() / members.len() as f64;
                check!(v == want, "seed {seed} anchor {anchor} d {d}: {v} vs {want}");
            }
        }

        // sampled estimators: 5 sigma at every shot count, error shrinking like 1/sqrt(shots)
        for (k, &shots) in [1_000u64, 10_000, 100_000].iter().enumerate() {
            let samples = sample_z(&psi, &labels, shots, 1000 + seed * 10 + k as u64);
            let est = correlation_matrix::<f64>(Source::Samples(&samples)).unwrap();
            for a in 0..4 {
                for b in a + 1..4 {
                    let sigma = ((1.0 - c[a][b] * c[a][b]) / shots as f64).sqrt();
                    let z = (est.get(a, b) - c[a][b]).abs() / sigma.max(1e-300);
                    check!(z <= 5.0, "seed {seed}, {shots} shots: C[{a}][{b}] off by {z:.2} sigma");
                    worst_z = worst_z.max(z);
                }
            }
            let bins = distance_binned_correlation::<f64>(Source::Samples(&samples), &lat, 0).unwrap();
            for &(d, v) in &bins.bins {
                let members: Vec<usize> = (0..4).filter(|&j| hops[0][j] == Some(d)).collect();
                let want = members.iter().map(|&j| c[0][j]).sum::<f64>() / members.len() as f64;
                // mean of correlated estimators: bounded by the mean of their sigmas
                let sigma = members
                    .iter()
                    .map(|&j| ((1.0 - c[0][j] * c[0][j]) / shots as f64).sqrt())
                    .sum::<f64>()
                    / members.len() as f64;
                check!(
                    (v - want).abs() <= 5.0 * sigma + 1e-15,
                    "seed {seed}, {shots} shots: distance {d} bin off by {:.3e}",
                    (v - want).abs()
                );
            }
        }
    }
    Pass(format!("{exact_pairs} exact entries bit-equal; sampled worst {worst_z:.2} sigma"))
}

fn c10_rmse() -> Verdict {
    let xs = [0.0, 0.3, 0.6, 0.9, 1.2, 1.5];
    let f = |x: f64| (2.0 * x).cos() * 0.8;
    let reference: Vec<(f64, f64)> = xs.iter().map(|&x| (x, f(x))).collect();
    let curve = |offset: f64| {
        MagnetizationCurve::new(
            Scope::LatticeMean,
            xs.iter()
                .map(|&x| CurvePoint { theta_h: x, value: f(x) + offset, stderr: 0.0 })
                .collect(),
        )
        .unwrap()
    };
    let same = rmse_vs_reference(&curve(0.0), &reference, "self").unwrap();
    check!(same.rmse == 0.0, "identical curves give {}", same.rmse);
    for &delta in &[0.0375, -0.125] {
        let r = rmse_vs_reference(&curve(delta), &reference, "offset").unwrap();
        check!((r.rmse - delta.abs()).abs() < 1e-12, "offset {delta} gives {}", r.rmse);
    }
    // natural spline through (0,1) (1,1/2) (2,-1/4) (4,3/4) (5,0), solved in exact rationals
    let spline = NaturalCubicSpline::new(&[0.0, 1.0, 2.0, 4.0, 5.0], &[1.0, 0.5, -0.25, 0.75, 0.0]).unwrap();
    let fixture = [
        (0.5, 393.0 / 488.0),
        (1.5, 103.0 / 1952.0),
        (3.0, 217.0 / 976.0),
        (4.5, 1935.0 / 3904.0),
        (2.0, -0.25),
    ];
    for &(x, want) in &fixture {
        let got = spline.eval(x).unwrap();
        check!((got - want).abs() < 1e-14, "spline({x}) = {got}, expected {want}");
    }
    Pass("zero on identical curves, offsets recovered to 1e-12, 5-knot spline matches".into())
}

fn run_hexqa(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hexqa"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn pipeline(dir: &Path, threads: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    let t = ["--threads", threads];
    let frag = ["--lattice", "eagle127", "--fragment", "10"];
    run_hexqa(dir, &[&t[..], &["derive", "--theta", "0.785398", "--steps", "40", "--j", "-0.01", "--out", "derived.json"]].concat())?;
    run_hexqa(dir, &[&t[..], &["schedule", "--params", "derived.json", "--out", "schedule.json", "--waveform", "schedule.csv"]].concat())?;
    run_hexqa(dir, &[&t[..], &["simulate", "--mode", "anneal"], &frag[..], &["--schedule", "schedule.json", "--out", "z.csv"]].concat())?;
    run_hexqa(
        dir,
        &[&t[..], &["sample"], &frag[..], &["--schedule", "schedule.json", "--reads", "2000", "--gauges", "4", "--seed", "11", "--samples", "samples.csv"]].concat(),
    )?;
    run_hexqa(dir, &[&t[..], &["analyze", "--samples", "samples.csv", "--observable", "mean", "--out", "mean.csv"]].concat())?;
    run_hexqa(dir, &[&t[..], &["analyze", "--samples", "samples.csv", "--observable", "dist:0"], &frag[..], &["--out", "dist.csv"]].concat())?;
    let mut files = Vec::new();
    for name in ["derived.json", "schedule.json", "schedule.csv", "z.csv", "samples.csv", "mean.csv", "dist.csv"] {
        files.push((name.to_string(), std::fs::read(dir.join(name)).map_err(|e| e.to_string())?));
    }
    Ok(files)
}

fn c11_pipeline() -> Verdict {
    let runs: Vec<_> = ["1", "1", "4"]
        .iter()
        .map(|threads| {
            let dir = tempfile::tempdir().unwrap();
            let files = pipeline(dir.path(), threads);
            (threads.to_string(), files)
        })
        .collect();
    let mut base = None;
    for (threads, files) in runs {
        let files = match files {
            Ok(f) => f,
            Err(e) => return Fail(e),
        };
        match &base {
            None => base = Some(files),
            Some(b) => {
                for ((name, x), (_, y)) in b.iter().zip(&files) {
                    check!(x == y, "{name} differs with --threads {threads}");
                }
            }
        }
    }
    Pass("7 outputs byte-identical over two runs and --threads 1/4".into())
}
