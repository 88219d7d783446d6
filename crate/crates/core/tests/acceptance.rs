//! End-to-end acceptance checks. Each test prints one PASS line with the
//! measured quantity so a full run doubles as a verification report.

use qgraph::boundary::BoundaryConditions;
use qgraph::graph::{Edge, MetricGraph};
use qgraph::report::run_identity_suite;
use qgraph::scattering::ScatteringEvaluator;
use qgraph::spectrum::{compute_spectrum, zero_modes, zero_modes_at, SolverOptions, Spectrum};
use qgraph::traceformula::{
    evaluate_tf, heat_asymptotics, heat_trace, matrix_trace_d, matrix_trace_resolvent,
    required_k_max, AmplitudeEvaluator, TestFunction,
};
use qgraph::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn interval(length: f64) -> MetricGraph {
    MetricGraph::new(
        2,
        vec![Edge {
            from: 0,
            to: 1,
            length,
        }],
    )
    .unwrap()
}

fn loop_graph(length: f64) -> MetricGraph {
    MetricGraph::new(
        1,
        vec![Edge {
            from: 0,
            to: 0,
            length,
        }],
    )
    .unwrap()
}

fn three_star() -> MetricGraph {
    MetricGraph::new(
        4,
        vec![
            Edge {
                from: 0,
                to: 1,
                length: 1.0,
            },
            Edge {
                from: 0,
                to: 2,
                length: 1.0,
            },
            Edge {
                from: 0,
                to: 3,
                length: 1.0,
            },
        ],
    )
    .unwrap()
}

fn solve(graph: &MetricGraph, bc: &BoundaryConditions, k_max: f64) -> (ScatteringEvaluator, Spectrum) {
    let ev = ScatteringEvaluator::new(graph, bc).unwrap();
    let spectrum = compute_spectrum(
        graph,
        &ev,
        &SolverOptions {
            k_max,
            ..SolverOptions::default()
        },
    )
    .unwrap();
    (ev, spectrum)
}

#[test]
fn criterion_1_interval_spectra_are_exact() {
    let start = Instant::now();
    let g = interval(std::f64::consts::PI);
    for (name, bc, zero_count) in [
        ("neumann", BoundaryConditions::neumann(&g), 1usize),
        ("dirichlet", BoundaryConditions::dirichlet(&g), 0usize),
    ] {
        let (_, spec) = solve(&g, &bc, 50.5);
        assert_eq!(spec.zero.g0, zero_count, "{name} zero modes");
        assert!(spec.negative.is_empty(), "{name} negatives");
        assert!(spec.positive.len() >= 50, "{name} found {}", spec.positive.len());
        let mut worst = 0.0f64;
        for (i, pe) in spec.positive.iter().take(50).enumerate() {
            assert_eq!(pe.multiplicity, 1);
            worst = worst.max((pe.k - (i + 1) as f64).abs());
        }
        assert!(worst < 1e-10, "{name} worst deviation {worst}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!(
        "criterion 1 PASS: interval spectra k_n = n to 1e-10 in {:.2}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_2_robin_negative_eigenvalue_is_sharp() {
    let g = interval(4.0);
    let bc = BoundaryConditions::robin_uniform(&g, 1.0);
    let (_, spec) = solve(&g, &bc, 10.0);
    let count: usize = spec.negative.iter().map(|n| n.multiplicity).sum();
    assert!((1..=2).contains(&count), "negative count {count}");
    assert!(spec.negative.iter().all(|n| n.resolved));

    // Deepest eigenvalue: even branch, kappa tanh(2 kappa) = 1.
    let f = |x: f64| x * (2.0 * x).tanh() - 1.0;
    let (mut lo, mut hi) = (0.5f64, 2.0f64);
    assert!(f(lo) < 0.0 && f(hi) > 0.0);
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let reference = 0.5 * (lo + hi);
    let deepest = spec
        .negative
        .iter()
        .map(|n| n.kappa)
        .fold(0.0f64, f64::max);
    let dev = (deepest - reference).abs();
    assert!(dev < 1e-9, "kappa {deepest} vs bisection {reference}");
    println!(
        "criterion 2 PASS: deepest kappa matches bisection to {dev:.2e}, negative count {count}"
    );
}

#[test]
fn criterion_3_weyl_law_on_three_star() {
    let start = Instant::now();
    let g = three_star();
    let bc = BoundaryConditions::kirchhoff_standard(&g);
    let (_, spec) = solve(&g, &bc, 200.0);
    let density = 3.0 / std::f64::consts::PI;
    let mut worst = 0.0f64;
    // The counting function is a right-continuous step function, so the
    // deviation is extremal at the jump points and at the endpoint.
    for pe in &spec.positive {
        worst = worst.max((spec.counting(pe.k - 1e-9) as f64 - density * pe.k).abs());
        worst = worst.max((spec.counting(pe.k) as f64 - density * pe.k).abs());
    }
    worst = worst.max((spec.counting(200.0) as f64 - density * 200.0).abs());
    assert!(worst <= 5.0, "worst Weyl deviation {worst}");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "criterion 3 PASS: |N(K) - 3K/pi| <= {worst:.3} for K <= 200 in {:.2}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_4_absolutely_convergent_identity_on_three_star() {
    let g = three_star();
    let bc = BoundaryConditions::kirchhoff_standard(&g);
    let h = TestFunction::Gaussian { t: 0.05 };
    let k_req = required_k_max(&g, &h, 1e-10);
    let (ev, spec) = solve(&g, &bc, k_req + 1.0);
    let report = evaluate_tf(&g, &ev, &spec, &h, 12).unwrap();
    assert_eq!(report.identity, "TF2");
    assert!(report.residual < 1e-6, "residual {}", report.residual);
    let rows = report.residuals_by_cutoff();
    let knee = rows
        .iter()
        .position(|&(_, r)| r < 1e-6)
        .expect("residual crosses 1e-6");
    for w in rows[knee..].windows(2) {
        assert!(
            w[1].1 <= w[0].1 + 1e-13,
            "residual rose from {:?} to {:?}",
            w[0],
            w[1]
        );
    }
    println!(
        "criterion 4 PASS: residual {:.2e} at cutoff 12, nonincreasing past cutoff {}",
        report.residual,
        rows[knee].0
    );
}

#[test]
fn criterion_5_heat_identity_with_erfc_term() {
    let ts = [0.01, 0.05, 0.1, 0.5];

    let g = interval(4.0);
    let bc = BoundaryConditions::robin_uniform(&g, 1.0);
    let k_req = required_k_max(&g, &TestFunction::Gaussian { t: 0.01 }, 1e-10);
    let (ev, spec) = solve(&g, &bc, k_req + 1.0);
    let mut worst_robin = 0.0f64;
    for &t in &ts {
        let r = heat_trace(&g, &ev, &spec, t, 12).unwrap();
        assert_eq!(r.identity, "TF3");
        // Both endpoints carry lambda = 1, so the erfc sum contributes
        // -e^t erfc(sqrt t), far from zero on this range.
        assert!(r.terms.im_tr_s_term < -0.3, "erfc term {}", r.terms.im_tr_s_term);
        worst_robin = worst_robin.max(r.residual);
    }
    assert!(worst_robin < 1e-6, "robin worst residual {worst_robin}");

    let g = three_star();
    let bc = BoundaryConditions::kirchhoff_standard(&g);
    let k_req = required_k_max(&g, &TestFunction::Gaussian { t: 0.01 }, 1e-10);
    let (ev, spec) = solve(&g, &bc, k_req + 1.0);
    let mut worst_star = 0.0f64;
    for &t in &ts {
        let r = heat_trace(&g, &ev, &spec, t, 12).unwrap();
        assert_eq!(r.terms.im_tr_s_term, 0.0);
        worst_star = worst_star.max(r.residual);
    }
    assert!(worst_star < 1e-6, "star worst residual {worst_star}");
    println!(
        "criterion 5 PASS: heat residuals robin {worst_robin:.2e} (erfc active), star {worst_star:.2e}"
    );
}

#[test]
fn criterion_6_heat_asymptotic_constant() {
    // Robin interval: the constant mixes count data with imaginary-axis
    // windings, so the fit needs the default small-t grid.
    let g = interval(4.0);
    let bc = BoundaryConditions::robin_uniform(&g, 1.0);
    let (ev, spec) = solve(&g, &bc, 185.0);
    let r = heat_asymptotics(&g, &ev, &spec, None).unwrap();
    assert!(r.difference < 1e-3, "robin fit difference {}", r.difference);
    assert!((r.gamma_formula - 0.5).abs() < 1e-12);
    assert!(r.quarter_trace_s.is_none());
    let robin_diff = r.difference;

    // Constant S: the constant is tr S / 4 exactly, and connected
    // standard-coupling graphs give (V - E)/2. A moderate t-grid keeps the
    // spectral requirement small; the subtracted heat sum is constant on
    // it up to terms below machine precision.
    let grid: Vec<f64> = (0..12).map(|i| 0.01 * (10.0f64).powf(i as f64 / 11.0)).collect();
    let cases: [(&str, MetricGraph, fn(&MetricGraph) -> BoundaryConditions, f64); 4] = [
        ("neumann interval", interval(std::f64::consts::PI), BoundaryConditions::neumann, 0.5),
        ("dirichlet interval", interval(std::f64::consts::PI), BoundaryConditions::dirichlet, -0.5),
        ("kirchhoff star", three_star(), BoundaryConditions::kirchhoff_standard, 0.5),
        ("kirchhoff loop", loop_graph(2.0), BoundaryConditions::kirchhoff_standard, 0.0),
    ];
    for (name, g, bc_of, expected) in cases {
        let bc = bc_of(&g);
        let k_req = required_k_max(&g, &TestFunction::Gaussian { t: 0.01 }, 1e-10);
        let (ev, spec) = solve(&g, &bc, k_req + 1.0);
        let r = heat_asymptotics(&g, &ev, &spec, Some(&grid)).unwrap();
        let quarter = r.quarter_trace_s.expect("constant S");
        assert_eq!(r.gamma_formula, quarter, "{name}");
        assert_eq!(r.gamma_formula, expected, "{name}");
        assert!(r.difference < 1e-3, "{name} fit difference {}", r.difference);
    }
    // (V - E)/2 for the connected standard-coupling cases.
    assert_eq!(0.5, (4.0 - 3.0) / 2.0);
    assert_eq!(0.0, (1.0 - 1.0) / 2.0);
    println!(
        "criterion 6 PASS: robin fit difference {robin_diff:.2e}; constant-S cases equal tr S / 4 and (V-E)/2 exactly"
    );
}

#[test]
fn criterion_7_identity_suite() {
    let expected_tols = [
        ("s_unitarity", 1e-12),
        ("u_unitarity", 1e-12),
        ("functional_equation", 1e-10),
        ("s_derivative_fd", 1e-6),
        ("theta_prime_fd", 1e-5),
        ("norm_bounds", 1e-10),
        ("orbit_trace_oracle", 1e-9),
    ];
    let star = three_star();
    let star_bc = BoundaryConditions::kirchhoff_standard(&star);
    let robin = interval(4.0);
    let robin_bc = BoundaryConditions::robin_uniform(&robin, 1.0);
    for (name, g, bc) in [
        ("star", &star, &star_bc),
        ("robin interval", &robin, &robin_bc),
    ] {
        let ev = ScatteringEvaluator::new(g, bc).unwrap();
        let suite = run_identity_suite(g, &ev, 7).unwrap();
        assert!(suite.all_pass, "{name}");
        for (check_name, tol) in expected_tols {
            let c = suite
                .checks
                .iter()
                .find(|c| c.name == check_name)
                .unwrap_or_else(|| panic!("{name}: missing {check_name}"));
            assert_eq!(c.tolerance, tol, "{name}: {check_name}");
            assert!(
                c.pass && c.max_residual < tol,
                "{name}: {check_name} residual {}",
                c.max_residual
            );
        }
        let fe = suite
            .checks
            .iter()
            .find(|c| c.name == "functional_equation")
            .unwrap();
        assert_eq!(fe.samples, 100, "{name}: functional equation sample count");
    }
    println!("criterion 7 PASS: all structural identities within tolerance on star and robin interval");
}

#[test]
fn criterion_8_orbit_sums_match_matrix_traces() {
    let robin = interval(4.0);
    let robin_bc = BoundaryConditions::robin_uniform(&robin, 1.0);
    let lg = loop_graph(2.0);
    let lg_bc = BoundaryConditions::kirchhoff_standard(&lg);
    let star = three_star();
    let star_bc = BoundaryConditions::kirchhoff_standard(&star);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for (g, bc) in [(&robin, &robin_bc), (&lg, &lg_bc), (&star, &star_bc)] {
        let ev = ScatteringEvaluator::new(g, bc).unwrap();
        let table = g.enumerate_orbits(&ev.transition_mask(), 6, 200_000).unwrap();
        let amp = AmplitudeEvaluator::new(g, &ev);
        for l in 1..=6usize {
            for _ in 0..20 {
                let k = Complex64::new(rng.gen_range(0.2..6.0), 0.0);
                let mut d_sum = Complex64::new(0.0, 0.0);
                let mut r_sum = Complex64::new(0.0, 0.0);
                for p in table.of_length(l) {
                    let osc = Complex64::new(0.0, k.re * p.metric_len).exp();
                    d_sum += p.primitive_len * amp.a1(p, k).unwrap() * osc;
                    r_sum += amp.a2(p, k).unwrap() * osc;
                }
                worst = worst.max((d_sum - matrix_trace_d(&ev, l as u32, k).unwrap()).norm());
                worst = worst
                    .max((r_sum - matrix_trace_resolvent(&ev, l as u32, k).unwrap()).norm());
            }
        }
    }
    assert!(worst < 1e-9, "worst orbit/trace deviation {worst}");
    println!("criterion 8 PASS: grouped orbit sums match matrix traces to {worst:.2e} for l <= 6");
}

#[test]
fn criterion_9_zero_modes_of_standard_coupling_graphs() {
    let triangle = MetricGraph::new(
        3,
        vec![
            Edge { from: 0, to: 1, length: 1.0 },
            Edge { from: 1, to: 2, length: 1.3 },
            Edge { from: 2, to: 0, length: 0.7 },
        ],
    )
    .unwrap();
    let theta = MetricGraph::new(
        2,
        vec![
            Edge { from: 0, to: 1, length: 1.0 },
            Edge { from: 0, to: 1, length: 1.2 },
            Edge { from: 0, to: 1, length: 0.8 },
        ],
    )
    .unwrap();
    let cases = [
        ("star", three_star()),
        ("loop", loop_graph(2.0)),
        ("triangle", triangle),
        ("theta", theta),
    ];
    for (name, g) in cases {
        assert!(g.is_connected());
        let bc = BoundaryConditions::kirchhoff_standard(&g);
        let ev = ScatteringEvaluator::new(&g, &bc).unwrap();
        let expected_n = g.num_edges() + 2 - g.num_vertices();
        let zm = zero_modes(&g, &ev).unwrap();
        assert_eq!(zm.g0, 1, "{name}: zero-mode count");
        assert_eq!(zm.n_secular, expected_n, "{name}: eigenvalue-one multiplicity");
        // The counting matrix gives the same answer at every sample point.
        let again = zero_modes_at(&g, &ev, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(again.g0, zm.g0, "{name}");
        assert_eq!(again.n_secular, zm.n_secular, "{name}");
    }
    println!("criterion 9 PASS: (g0, N) = (1, E - V + 2) on four connected standard-coupling graphs");
}
