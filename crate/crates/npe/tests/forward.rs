use std::sync::Arc;

use npe::forward::{
    dtn_trace, energy_norm, l1, l2, solve_conservation_1d, solve_linear_wave, solve_npe, BoundaryData, Grid,
};
use npe::medium::{Domain, Field, MediumSpec};
use npe::stats::observed_order;
use npe::NpeError;
use proptest::prelude::*;

fn interval(c2: f64, t_final: f64) -> MediumSpec {
    let d = Domain::boxed(1, &[0.0], &[1.0], 11).unwrap();
    MediumSpec::new(d, Field::constant(1.0), Field::constant(c2), 2, t_final).unwrap()
}

fn pulse(x: f64, center: f64, width: f64) -> f64 {
    let s = (x - center) / width;
    if s.abs() < 1.0 {
        (1.0 - s * s).powi(6)
    } else {
        0.0
    }
}

fn pulse_slope(x: f64, center: f64, width: f64) -> f64 {
    let s = (x - center) / width;
    if s.abs() < 1.0 {
        -12.0 * s * (1.0 - s * s).powi(5) / width
    } else {
        0.0
    }
}

fn right_moving(amp: f64) -> BoundaryData {
    BoundaryData::initial(
        Arc::new(move |x: &[f64; 3]| amp * pulse(x[0], 0.35, 0.15)),
        Some(Arc::new(move |x: &[f64; 3]| -amp * pulse_slope(x[0], 0.35, 0.15))),
    )
}

fn dalembert_error(nodes: usize) -> f64 {
    let spec = interval(0.0, 0.3);
    let grid = Grid::from_cfl(&spec, nodes, 0.5, 0.0).unwrap();
    let u = solve_npe(&spec, &right_moving(1.0), &grid).unwrap();
    let t = grid.t_final();
    let exact: Vec<f64> = (0..grid.npts()).map(|i| pulse(grid.coords(i)[0] - t, 0.35, 0.15)).collect();
    let diff: Vec<f64> = u.frame(grid.nt).iter().zip(&exact).map(|(a, b)| a - b).collect();
    l2(&grid, &diff)
}

#[test]
fn linear_pulse_translates_like_dalembert() {
    let errs: Vec<f64> = [129, 257, 513].iter().map(|&n| dalembert_error(n)).collect();
    assert!(errs[2] <= 1e-3, "{errs:?}");
    let p1 = observed_order(errs[0], errs[1], 2.0);
    let p2 = observed_order(errs[1], errs[2], 2.0);
    assert!(p1 >= 1.8 && p2 >= 1.8, "orders {p1} {p2} from {errs:?}");
}

#[test]
fn linear_solver_matches_npe_without_nonlinearity() {
    let spec = interval(0.0, 0.3);
    let grid = Grid::from_cfl(&spec, 129, 0.5, 0.0).unwrap();
    let a = solve_npe(&spec, &right_moving(1.0), &grid).unwrap();
    let b = solve_linear_wave(&spec, None, &right_moving(1.0), &grid).unwrap();
    assert!(a.combine(1.0, &b, -1.0).unwrap().max_abs() < 1e-13);
}

fn lax_friedrichs_gap(nodes: usize) -> f64 {
    let spec = interval(1.0, 0.2);
    let amp = 0.05;
    let grid = Grid::from_cfl(&spec, nodes, 0.8, amp).unwrap();
    let rho0 = move |x: f64| amp * pulse(x, 0.5, 0.2);
    let (rho, _) = solve_conservation_1d(&spec, &rho0, &|_| 0.0, &grid).unwrap();
    let u = solve_npe(&spec, &BoundaryData::initial(Arc::new(move |x: &[f64; 3]| rho0(x[0])), None), &grid).unwrap();
    let diff: Vec<f64> = rho.frame(grid.nt).iter().zip(u.frame(grid.nt)).map(|(a, b)| a - b).collect();
    l1(&grid, &diff)
}

#[test]
fn conservation_law_and_npe_agree_before_shocks() {
    let gaps: Vec<f64> = [101, 201, 401, 801].iter().map(|&n| lax_friedrichs_gap(n)).collect();
    for w in gaps.windows(2) {
        assert!(w[1] < w[0], "{gaps:?}");
    }
    let p = observed_order(gaps[2], gaps[3], 2.0);
    assert!(p >= 0.8, "order {p} from {gaps:?}");
}

#[test]
fn nonlinear_steepening_differs_from_linear_transport() {
    let spec = interval(1.0, 0.3);
    let grid = Grid::from_cfl(&spec, 257, 0.5, 0.2).unwrap();
    let lin = solve_linear_wave(&spec, None, &right_moving(0.2), &grid).unwrap();
    let non = solve_npe(&spec, &right_moving(0.2), &grid).unwrap();
    let gap = non.combine(1.0, &lin, -1.0).unwrap().max_abs();
    assert!(gap > 1e-3 && gap < 0.2, "{gap}");
}

#[test]
fn zero_data_gives_zero_trace_and_energy() {
    let spec = interval(1.0, 0.5);
    let grid = Grid::from_cfl(&spec, 65, 0.5, 0.0).unwrap();
    let u = solve_npe(&spec, &BoundaryData::zero(), &grid).unwrap();
    assert_eq!(dtn_trace(&u, &spec).unwrap().max_abs(), 0.0);
    assert_eq!(energy_norm(&u, 1).unwrap(), 0.0);
}

#[test]
fn cfl_violation_is_refused() {
    let spec = interval(0.0, 0.5);
    let d = spec.domain.clone();
    let grid = Grid::with_dt(&d, 101, 0.5, 0.05).unwrap();
    assert!(matches!(grid.check_cfl(&spec, 0.0, 1.0), Err(NpeError::Precondition(_))));
    assert!(solve_npe(&spec, &right_moving(1.0), &grid).is_err());
}

#[test]
fn dirichlet_data_enter_through_the_boundary() {
    let spec = interval(0.0, 0.8);
    let grid = Grid::from_cfl(&spec, 201, 0.5, 0.0).unwrap();
    let h = BoundaryData::lateral(Arc::new(|t, x: &[f64; 3]| if x[0] < 0.5 { pulse(t, 0.2, 0.15) } else { 0.0 }));
    let u = solve_npe(&spec, &h, &grid).unwrap();
    let k = grid.nt * 5 / 8;
    let t = grid.time(k);
    let exact: Vec<f64> = (0..grid.npts()).map(|i| pulse(t - grid.coords(i)[0], 0.2, 0.15)).collect();
    let diff: Vec<f64> = u.frame(k).iter().zip(&exact).map(|(a, b)| a - b).collect();
    assert!(l2(&grid, &diff) < 1e-2, "{}", l2(&grid, &diff));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn linear_solve_is_linear(a in -2.0f64..2.0) {
        let spec = interval(0.0, 0.3);
        let grid = Grid::from_cfl(&spec, 65, 0.5, 0.0).unwrap();
        let f = |s: f64| {
            BoundaryData::initial(
                Arc::new(move |x: &[f64; 3]| s * pulse(x[0], 0.4, 0.2)),
                Some(Arc::new(move |x: &[f64; 3]| s * (x[0] - 0.5) * pulse(x[0], 0.6, 0.2))),
            )
        };
        let ua = solve_linear_wave(&spec, None, &f(1.0), &grid).unwrap();
        let sum = solve_linear_wave(&spec, None, &f(a), &grid).unwrap();
        let diff = sum.combine(1.0, &ua, -a).unwrap();
        prop_assert!(diff.max_abs() < 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn npe_is_odd_for_quadratic_free_media(s in 0.01f64..0.2) {
        let d = Domain::boxed(1, &[0.0], &[1.0], 11).unwrap();
        let spec = MediumSpec::new(d, Field::constant(1.0), Field::constant(1.0), 3, 0.3).unwrap();
        let grid = Grid::from_cfl(&spec, 65, 0.5, s).unwrap();
        let plus = solve_npe(&spec, &right_moving(s), &grid).unwrap();
        let minus = solve_npe(&spec, &right_moving(-s), &grid).unwrap();
        prop_assert!(plus.combine(1.0, &minus, 1.0).unwrap().max_abs() < 1e-14);
    }
}
