use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use npe::asymptotics::{
    find_critical_point, quadrature, stationary_phase_leading, CriticalPointData, OscillatoryIntegrand, PointFn,
};
use npe::beam::cutoff;
use npe::stats::fit_power;
use npe::{Complex64, NpeError};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn radial_bump(radius: f64) -> PointFn {
    Arc::new(move |p: &[f64]| c(cutoff(p.iter().map(|v| v * v).sum::<f64>().sqrt() / radius), 0.0))
}

fn integrand(dim: usize, half: f64, nodes: usize, phase: PointFn, amp: PointFn) -> OscillatoryIntegrand {
    OscillatoryIntegrand::new(vec![-half; dim], vec![half; dim], vec![nodes; dim], phase, amp).unwrap()
}

#[test]
fn zero_amplitude_gives_zero() {
    let int = integrand(2, 1.0, 41, Arc::new(|p: &[f64]| c(p[0], 0.0)), Arc::new(|_: &[f64]| c(0.0, 0.0)));
    assert_eq!(quadrature(&int, 5.0).unwrap(), c(0.0, 0.0));
}

#[test]
fn gaussian_integral_limit() {
    let int = integrand(1, 1.0, 2001, Arc::new(|p: &[f64]| c(0.0, 0.5 * p[0] * p[0])), radial_bump(2.0));
    for lambda in [100.0, 400.0] {
        let q = quadrature(&int, lambda).unwrap();
        let exact = (2.0 * PI / lambda).sqrt();
        assert!((q - exact).norm() < 1e-8 * exact, "lambda {lambda}: {q} vs {exact}");
    }
}

#[test]
fn no_oscillation_reduces_to_plain_integral() {
    let amp: PointFn = Arc::new(|p: &[f64]| c((1.0 + p[0]) * p[1] * p[1], p[0] * p[0]));
    let int = integrand(2, 1.0, 801, Arc::new(|p: &[f64]| c(p[0] * p[1], 0.3)), amp);
    let q = quadrature(&int, 0.0).unwrap();
    let exact = c(2.0 * 2.0 / 3.0, 2.0 / 3.0 * 2.0);
    assert!((q - exact).norm() < 1e-5, "{q} vs {exact}");
}

#[test]
fn under_resolved_grid_is_refused() {
    let int = integrand(1, 1.0, 21, Arc::new(|p: &[f64]| c(p[0], 0.0)), radial_bump(2.0));
    match quadrature(&int, 100.0) {
        Err(NpeError::Resolution(msg)) => assert!(msg.contains("need")),
        other => panic!("expected refusal, got {other:?}"),
    }
}

#[test]
fn real_saddle_leading_term() {
    let h = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]);
    let cp = CriticalPointData::from_hessian(vec![0.0, 0.0], c(0.0, 0.0), h);
    assert_eq!(cp.signature, 0);
    for lambda in [10.0, 40.0] {
        let lead = stationary_phase_leading(&cp, c(1.0, 0.0), lambda, 2).unwrap();
        assert!((lead - 2.0 * PI / lambda).norm() < 1e-12);
    }
    let int = integrand(
        2,
        1.6,
        1201,
        Arc::new(|p: &[f64]| c(0.5 * (p[0] * p[0] - p[1] * p[1]), 0.0)),
        radial_bump(3.0),
    );
    for lambda in [40.0, 80.0] {
        let q = quadrature(&int, lambda).unwrap();
        let lead = 2.0 * PI / lambda;
        assert!((q - lead).norm() / lead < 30.0 / (lambda * lambda), "lambda {lambda}: {q}");
    }
    assert_eq!(stationary_phase_leading(&cp, c(0.0, 0.0), 10.0, 2).unwrap(), c(0.0, 0.0));
}

#[test]
fn complex_gaussian_branch_agrees_with_closed_form() {
    let cp = CriticalPointData::from_hessian(vec![0.0], c(0.0, 0.0), DMatrix::from_element(1, 1, c(0.0, 1.0)));
    let lead = stationary_phase_leading(&cp, c(2.0, 0.0), 50.0, 1).unwrap();
    assert!((lead - 2.0 * (2.0 * PI / 50.0).sqrt()).norm() < 1e-12);
}

#[test]
fn degenerate_hessian_is_rejected() {
    let cp = CriticalPointData::from_hessian(vec![0.0, 0.0], c(0.0, 0.0), DMatrix::from_element(2, 2, c(1.0, 0.0)));
    assert!(matches!(stationary_phase_leading(&cp, c(1.0, 0.0), 10.0, 2), Err(NpeError::Degenerate(_))));
}

#[test]
fn leading_term_scales_with_half_dimension() {
    let h = DMatrix::from_row_slice(3, 3, &[c(1.0, 0.5), c(0.2, 0.0), c(0.0, 0.0), c(0.2, 0.0), c(-2.0, 0.3), c(0.1, 0.1), c(0.0, 0.0), c(0.1, 0.1), c(0.5, 1.0)]);
    let cp = CriticalPointData::from_hessian(vec![0.0; 3], c(0.0, 0.0), h);
    let a = stationary_phase_leading(&cp, c(1.0, 0.0), 10.0, 3).unwrap();
    let b = stationary_phase_leading(&cp, c(1.0, 0.0), 40.0, 3).unwrap();
    assert!((a / b - 8.0).norm() < 1e-12);
}

fn cubic_phase() -> PointFn {
    Arc::new(|p: &[f64]| c(0.5 * (p[0] * p[0] - p[1] * p[1]) + p[0].powi(3) / 6.0, 0.25 * (p[0] * p[0] + p[1] * p[1])))
}

fn tilted_amplitude() -> PointFn {
    let bump = radial_bump(2.4);
    Arc::new(move |p: &[f64]| bump(p) * c(1.0 + p[0] + p[1] * p[1], 0.2 * p[1]))
}

#[test]
fn quadrature_converges_to_leading_term() {
    let int = integrand(2, 1.2, 1001, cubic_phase(), tilted_amplitude());
    let cp = find_critical_point(&int, &[0.3, -0.2]).unwrap();
    assert!(cp.location.iter().all(|v| v.abs() < 1e-8));
    let lambdas = [20.0, 40.0, 80.0, 160.0];
    let errs: Vec<f64> = lambdas
        .iter()
        .map(|&l| {
            let q = quadrature(&int, l).unwrap();
            let lead = stationary_phase_leading(&cp, c(1.0, 0.0), l, 2).unwrap();
            (q - lead).norm() / lead.norm()
        })
        .collect();
    let fit = fit_power(&lambdas, &errs);
    assert!(-fit.slope >= 0.8, "decay {} from {errs:?}", -fit.slope);
}

#[test]
fn quadrature_is_linear_and_conjugation_symmetric() {
    let int = integrand(2, 1.2, 401, cubic_phase(), tilted_amplitude());
    let phase = cubic_phase();
    let amp = tilted_amplitude();
    let doubled = integrand(2, 1.2, 401, cubic_phase(), Arc::new(move |p: &[f64]| amp(p) * c(2.0, -1.0)));
    let amp = tilted_amplitude();
    let conj = integrand(2, 1.2, 401, Arc::new(move |p: &[f64]| -phase(p).conj()), Arc::new(move |p: &[f64]| amp(p).conj()));
    let base = quadrature(&int, 30.0).unwrap();
    assert!((quadrature(&doubled, 30.0).unwrap() - base * c(2.0, -1.0)).norm() < 1e-12);
    assert!((quadrature(&conj, 30.0).unwrap() - base.conj()).norm() < 1e-12);
}

#[test]
fn newton_is_exact_on_quadratic_saddle() {
    let int = integrand(
        2,
        2.0,
        41,
        Arc::new(|p: &[f64]| c(0.5 * ((p[0] - 0.3).powi(2) - 2.0 * (p[1] + 0.1).powi(2)) + (p[0] - 0.3) * (p[1] + 0.1), 0.0)),
        radial_bump(8.0),
    );
    for seed in [[1.0, 1.0], [-1.5, 0.7]] {
        let cp = find_critical_point(&int, &seed).unwrap();
        assert!((cp.location[0] - 0.3).abs() < 1e-9 && (cp.location[1] + 0.1).abs() < 1e-9, "{:?}", cp.location);
    }
}

#[test]
fn critical_point_outside_support_is_not_found() {
    let int = integrand(
        1,
        2.0,
        101,
        Arc::new(|p: &[f64]| c(0.5 * p[0] * p[0], 0.0)),
        Arc::new(|p: &[f64]| c(if p[0] > 0.5 { 1.0 } else { 0.0 }, 0.0)),
    );
    assert!(matches!(find_critical_point(&int, &[1.0]), Err(NpeError::NotFound(_))));
}
