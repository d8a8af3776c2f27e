use nalgebra::DMatrix;
use npe::beam::{
    assemble_cd, build_beam, build_beam_with, min_imag_eigenvalue, residual_report, solve_riccati, AmplitudeLaw,
    BeamConfig, CMatrix, ResidualConfig,
};
use npe::geometry::{build_null_geodesic, fermi_chart, FermiChart, GeodesicOptions, NullGeodesic};
use npe::medium::{Domain, Field, MediumSpec};
use npe::Complex64;
use proptest::prelude::*;

fn medium(dim: usize, c1: Field, half: f64) -> MediumSpec {
    let d = Domain::boxed(dim, &[-half; 3], &[half; 3], 11).unwrap();
    MediumSpec::new(d, c1, Field::constant(1.0), 2, 20.0).unwrap()
}

fn bump() -> Field {
    Field::bump(1.0, 0.3, [0.2, -0.1, 0.1], 0.6)
}

fn quadratic() -> Field {
    Field::Quadratic {
        base: 1.0,
        gradient: [0.1, 0.05, -0.04],
        hessian: [[0.4, 0.1, 0.0], [0.1, -0.2, 0.05], [0.0, 0.05, 0.3]],
        center: [0.0; 3],
    }
}

fn null_line(spec: &MediumSpec, xi: [f64; 3]) -> NullGeodesic {
    let o = GeodesicOptions { step: 0.005, margin: 0.4, max_length: 100.0 };
    build_null_geodesic(spec, &[0.0; 3], &xi, 0.5 * spec.t_final, 1, &o).unwrap()
}

fn ih(d: usize, s: f64) -> CMatrix {
    CMatrix::identity(d, d) * Complex64::new(0.0, s)
}

fn g_rr(chart: &FermiChart, z: &[f64], c1: &Field) -> f64 {
    let d = chart.dim;
    let n = d + 1;
    let h = 1e-4;
    let mut j = DMatrix::<f64>::zeros(n, n);
    for b in 0..n {
        let at = |k: f64| {
            let mut w = z.to_vec();
            w[b] += k * h;
            chart.from_fermi_unbounded(&w).unwrap()
        };
        let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
        let diff = |f: &dyn Fn(&npe::geometry::SpaceTime) -> f64| (-f(&p2) + 8.0 * f(&p1) - 8.0 * f(&m1) + f(&m2)) / (12.0 * h);
        j[(0, b)] = diff(&|q| q.t);
        for a in 0..d {
            j[(a + 1, b)] = diff(&|q| q.x[a]);
        }
    }
    let q = chart.from_fermi_unbounded(z).unwrap();
    let mut g = DMatrix::<f64>::zeros(n, n);
    g[(0, 0)] = -1.0;
    for a in 0..d {
        g[(a + 1, a + 1)] = 1.0 / c1.value(d, &q.x);
    }
    let metric = j.transpose() * g * &j;
    metric.try_inverse().unwrap()[(1, 1)]
}

fn hessian_fd(chart: &FermiChart, tau: f64, c1: &Field, k: f64) -> DMatrix<f64> {
    let d = chart.dim;
    let f = |a: usize, sa: f64, b: usize, sb: f64| {
        let mut z = vec![0.0; d + 1];
        z[0] = tau;
        z[1 + a] += sa;
        z[1 + b] += sb;
        g_rr(chart, &z, c1)
    };
    let mut h = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            h[(a, b)] = if a == b {
                (f(a, k, a, 0.0) - 2.0 * f(a, 0.0, a, 0.0) + f(a, -k, a, 0.0)) / (k * k)
            } else {
                (f(a, k, b, k) - f(a, k, b, -k) - f(a, -k, b, k) + f(a, -k, b, -k)) / (4.0 * k * k)
            };
        }
    }
    h
}

#[test]
fn riccati_coefficients() {
    let spec = medium(3, Field::constant(2.0), 1.0);
    let chart = fermi_chart(&null_line(&spec, [1.0, 0.0, 0.0]), 0.4).unwrap();
    let (c, d) = assemble_cd(&chart, 0.3).unwrap();
    assert_eq!(c, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, 2.0, 2.0])));
    assert!(d.norm() < 1e-15);
    assert!(assemble_cd(&chart, chart.tau_max + 1.0).is_err());
}

#[test]
fn curvature_term_matches_metric_differences() {
    for (dim, xi) in [(3, [0.6, 0.8, 0.0]), (2, [0.0, 1.0, 0.0])] {
        let c1 = quadratic();
        let spec = medium(dim, c1.clone(), 1.0);
        let chart = fermi_chart(&null_line(&spec, xi), 0.4).unwrap();
        for tau in [0.0, 0.4] {
            let (_, d) = assemble_cd(&chart, tau).unwrap();
            let coarse = hessian_fd(&chart, tau, &c1, 0.02);
            let fine = hessian_fd(&chart, tau, &c1, 0.01);
            let rich = (fine * 4.0 - coarse) / 3.0 * 0.25;
            let err = (&rich - &d).amax();
            assert!(err < 1e-6, "dim {dim}, tau {tau}: {err}\n{rich}\n{d}");
        }
    }
}

#[test]
fn flat_riccati_closed_form() {
    let spec = medium(3, Field::constant(1.0), 3.0);
    let chart = fermi_chart(&null_line(&spec, [0.0, 0.0, 1.0]), 0.4).unwrap();
    let sol = solve_riccati(&chart, &ih(3, 1.0), 0.01).unwrap();
    let i = Complex64::new(0.0, 1.0);
    for (k, &tau) in sol.taus.iter().enumerate() {
        let w = Complex64::new(1.0, 2.0 * tau);
        let h = &sol.h[k];
        let y = &sol.y[k];
        assert!((y[(0, 0)] - 1.0).norm() < 1e-12 && (y[(1, 1)] - w).norm() < 1e-12 && (y[(2, 2)] - w).norm() < 1e-12);
        assert!((h[(0, 0)] - i).norm() < 1e-8);
        assert!((h[(1, 1)] - i / w).norm() < 1e-8 && (h[(2, 2)] - i / w).norm() < 1e-8);
        assert!(h[(0, 1)].norm() < 1e-12);
        assert!((sol.invariant[k] - 1.0).abs() < 1e-10);
    }
}

#[test]
fn bump_riccati_invariants() {
    for dim in [2, 3] {
        let spec = medium(dim, bump(), 1.0);
        let chart = fermi_chart(&null_line(&spec, [0.6, 0.8, 0.0]), 0.4).unwrap();
        let mut h0 = ih(dim, 1.0);
        h0[(0, 1)] = Complex64::new(0.3, 0.1);
        h0[(1, 0)] = h0[(0, 1)];
        let sol = solve_riccati(&chart, &h0, 0.01).unwrap();
        assert!(sol.symmetry_defect < 1e-8);
        assert!(sol.min_imag_eigenvalue > 0.0);
        assert!(sol.invariant_drift < 1e-6, "dim {dim}: drift {}", sol.invariant_drift);
    }
}

#[test]
fn riccati_rejects_bad_initial_data() {
    let spec = medium(2, Field::constant(1.0), 1.0);
    let chart = fermi_chart(&null_line(&spec, [1.0, 0.0, 0.0]), 0.4).unwrap();
    assert!(solve_riccati(&chart, &CMatrix::identity(2, 2), 0.01).is_err());
    let mut h = ih(2, 1.0);
    h[(0, 1)] = Complex64::new(1.0, 0.0);
    assert!(solve_riccati(&chart, &h, 0.01).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn imaginary_part_stays_positive(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0) {
        let spec = medium(2, Field::constant(1.0), 4.0);
        let chart = fermi_chart(&null_line(&spec, [1.0, 0.0, 0.0]), 0.4).unwrap();
        let mut h0 = ih(2, 1.0);
        h0[(0, 0)] += a;
        h0[(1, 1)] += c;
        h0[(0, 1)] += b;
        h0[(1, 0)] += b;
        let sol = solve_riccati(&chart, &h0, 0.02).unwrap();
        prop_assert!(sol.taus[0] <= -5.0 && *sol.taus.last().unwrap() >= 5.0);
        prop_assert!(sol.min_imag_eigenvalue > 0.0);
    }
}

#[test]
fn flat_amplitude_closed_form() {
    let spec = medium(3, Field::constant(1.0), 1.0);
    let ng = null_line(&spec, [1.0, 0.0, 0.0]);
    let beam = build_beam(&spec, &ng, &ih(3, 1.0), 10.0, 0.6, 1.0).unwrap();
    for tau in [-0.8, -0.25, 0.0, 0.33, 1.1] {
        let expected = beam.a0(0.0).unwrap() / Complex64::new(1.0, 2.0 * tau);
        assert!((beam.a0(tau).unwrap() - expected).norm() < 1e-10, "tau {tau}");
    }
    let p = ng.oriented.point(0.0).unwrap();
    let v = beam.evaluate(ng.t0, &p);
    assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
}

#[test]
fn branch_is_continuous_over_long_range() {
    let spec = medium(2, Field::constant(1.0), 4.0);
    let ng = null_line(&spec, [1.0, 0.0, 0.0]);
    let beam = build_beam(&spec, &ng, &ih(2, 1.0), 10.0, 0.6, 1.0).unwrap();
    let mut prev = beam.a0(0.0).unwrap();
    let mut tau = 0.0;
    while tau < 5.0 {
        tau += 0.01;
        let a = beam.a0(tau).unwrap();
        assert!((a - prev).norm() < 0.05, "jump at {tau}");
        let w = Complex64::new(1.0, 2.0 * tau).sqrt();
        assert!((a - 1.0 / w).norm() < 1e-9, "tau {tau}: {a} vs {}", 1.0 / w);
        prev = a;
    }
}

#[test]
fn cutoff_and_conjugation() {
    let spec = medium(3, bump(), 1.0);
    let ng = null_line(&spec, [0.0, 0.6, 0.8]);
    let beam = build_beam(&spec, &ng, &ih(3, 1.0), 25.0, 0.8, 1.0).unwrap();
    let conj = beam.with_kappa(-1.0);
    assert!(conj.conjugated);
    let chart = &beam.chart;
    for (z, inside) in [
        ([0.2, 0.1, 0.05, -0.1], true),
        ([-0.3, 0.0, 0.15, 0.1], true),
        ([0.0, 0.3, 0.3, 0.0], false),
        ([0.1, 0.0, 0.0, 0.4], false),
    ] {
        let q = chart.from_fermi_unbounded(&z).unwrap();
        let v = beam.evaluate(q.t, &q.x);
        let w = conj.evaluate(q.t, &q.x);
        assert!((w - v.conj()).norm() < 1e-14);
        if inside {
            let expected = (Complex64::new(0.0, 25.0) * beam.phase(&z).unwrap()).exp() * beam.a0(z[0]).unwrap();
            assert!((v - expected).norm() < 1e-9 * expected.norm().max(1e-300));
        } else {
            assert_eq!(v, Complex64::new(0.0, 0.0));
        }
    }
}

#[test]
fn imaginary_phase_is_quadratically_bounded() {
    let spec = medium(2, bump(), 1.0);
    let ng = null_line(&spec, [0.6, 0.8, 0.0]);
    let beam = build_beam(&spec, &ng, &ih(2, 1.0), 25.0, 0.8, 1.0).unwrap();
    for tau in [-0.5, 0.0, 0.5] {
        let h = beam.riccati.h_at(&beam.chart, tau).unwrap();
        let m = min_imag_eigenvalue(&h);
        for k in 0..12 {
            let a = k as f64 * 0.5;
            let rho = 0.05 + 0.02 * k as f64;
            let z = [tau, rho * a.cos(), rho * a.sin()];
            let im = beam.phase(&z).unwrap().im;
            assert!(im >= 0.9 * m * rho * rho);
        }
    }
}

#[test]
fn flat_eikonal_residual_is_the_cubic_remainder() {
    let spec = medium(3, Field::constant(1.0), 1.0);
    let ng = null_line(&spec, [0.0, 1.0, 0.0]);
    let mut h0 = ih(3, 1.0);
    h0[(0, 1)] = Complex64::new(0.2, 0.0);
    h0[(1, 0)] = h0[(0, 1)];
    h0[(1, 2)] = Complex64::new(-0.1, 0.1);
    h0[(2, 1)] = h0[(1, 2)];
    let beam = build_beam(&spec, &ng, &h0, 10.0, 0.8, 1.0).unwrap();
    for z in [[0.1, 0.05, -0.1, 0.08], [-0.4, -0.1, 0.1, 0.12], [0.3, 0.0, 0.15, 0.0]] {
        let q = beam.chart.from_fermi(&z).unwrap();
        let terms = beam.local_terms(q.t, &q.x, 1.0).unwrap();
        let h = beam.riccati.h_at(&beam.chart, z[0]).unwrap();
        let zp = nalgebra::DVector::from_vec(vec![Complex64::new(z[1], 0.0), z[2].into(), z[3].into()]);
        let hz = &h * zp;
        let q2 = hz[1] * hz[1] + hz[2] * hz[2];
        let expected = -8.0 * q2 * hz[0];
        assert!((terms.s_phi - expected).norm() < 1e-9, "{z:?}: {} vs {expected}", terms.s_phi);
    }
    let on_axis = beam.chart.axis_point(0.2).unwrap();
    assert!(beam.local_terms(on_axis.t, &on_axis.x, 1.0).unwrap().s_phi.norm() < 1e-10);
}

fn residual_cfg() -> ResidualConfig {
    ResidualConfig { transverse_nodes: 25, tau_nodes: 5, ..ResidualConfig::default() }
}

#[test]
fn bump_eikonal_residual_decays_cubically() {
    let spec = medium(2, bump(), 1.0);
    let ng = null_line(&spec, [0.6, 0.8, 0.0]);
    let beam = build_beam(&spec, &ng, &ih(2, 1.0), 20.0, 0.8, 1.0).unwrap();
    let report = residual_report(&spec, &beam, &[20.0], &residual_cfg()).unwrap();
    assert!(report.eikonal_fit.slope >= 2.8, "{:?}", report.eikonal_fit);
}

#[test]
fn transport_exponent_cancels_axis_residual() {
    let spec = medium(3, bump(), 1.0);
    let ng = null_line(&spec, [0.6, 0.8, 0.0]);
    let cfg = BeamConfig { law: AmplitudeLaw::Transport, ..BeamConfig::default() };
    let good = build_beam_with(&spec, &ng, &ih(3, 1.0), 20.0, 0.8, 1.0, &cfg).unwrap();
    let cfg = BeamConfig { law: AmplitudeLaw::Constant, ..BeamConfig::default() };
    let bad = build_beam_with(&spec, &ng, &ih(3, 1.0), 20.0, 0.8, 1.0, &cfg).unwrap();
    for tau in [-0.3, 0.0, 0.3] {
        let q = good.chart.axis_point(tau).unwrap();
        let c1 = spec.c1_at(&q.x);
        let g = good.local_terms(q.t, &q.x, c1).unwrap().l1.norm();
        let b = bad.local_terms(q.t, &q.x, c1).unwrap().l1.norm();
        assert!(g < 1e-6, "tau {tau}: {g}");
        assert!(b > 1e-2, "tau {tau}: {b}");
    }
}

#[test]
fn correct_transport_lowers_residual_growth() {
    let spec = medium(2, bump(), 1.0);
    let ng = null_line(&spec, [0.6, 0.8, 0.0]);
    let lambdas = [20.0, 40.0, 80.0, 160.0];
    let fit = |law| {
        let cfg = BeamConfig { law, ..BeamConfig::default() };
        let beam = build_beam_with(&spec, &ng, &ih(2, 2.0), 20.0, 1.0, 1.0, &cfg).unwrap();
        residual_report(&spec, &beam, &lambdas, &residual_cfg()).unwrap().pde_fit.slope
    };
    let good = fit(AmplitudeLaw::Transport);
    let bad = fit(AmplitudeLaw::Constant);
    assert!(bad - good >= 0.5, "transport {good}, constant {bad}");
}
