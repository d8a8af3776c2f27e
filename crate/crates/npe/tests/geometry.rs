use npe::geometry::{build_null_geodesic, diameter, fermi_chart, trace_geodesic, Conformal, GeodesicOptions};
use npe::medium::{Domain, Field, MediumSpec};
use npe::stats::fit_power;
use proptest::prelude::*;

fn medium(dim: usize, c1: Field, half: f64) -> MediumSpec {
    let d = Domain::boxed(dim, &[-half; 3], &[half; 3], 11).unwrap();
    MediumSpec::new(d, c1, Field::constant(1.0), 2, 6.0).unwrap()
}

fn sphere() -> Field {
    Field::RadialPower { scale: 1.0, coeff: 1.0, power: 2.0 }
}

fn bump() -> Field {
    Field::bump(1.0, 0.3, [0.2, -0.1, 0.1], 0.5)
}

fn opts(step: f64) -> GeodesicOptions {
    GeodesicOptions { step, margin: 0.3, max_length: 50.0 }
}

#[test]
fn radial_geodesic_matches_arctangent_distance() {
    let spec = medium(2, sphere(), 1.0);
    let g = trace_geodesic(&spec, &[0.0; 3], &[1.0, 0.0, 0.0], &opts(0.01)).unwrap();
    for s in [0.1, 0.4, 0.7] {
        let x = g.point(s).unwrap();
        assert!((x[0] - f64::tan(s)).abs() < 1e-8, "s={s}: {x:?}");
        assert!(x[1].abs() < 1e-14);
    }
    assert!((g.s_plus - std::f64::consts::FRAC_PI_4).abs() < 1e-8);
}

#[test]
fn step_halving_converges_at_fourth_order() {
    let spec = medium(2, sphere(), 1.0);
    let x0 = [0.1, -0.2, 0.0];
    let dir = [0.6, 0.8, 0.0];
    let at = |h: f64| trace_geodesic(&spec, &x0, &dir, &opts(h)).unwrap().point(0.5).unwrap();
    let (a, b, c) = (at(0.04), at(0.02), at(0.01));
    let e1 = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let e2 = ((b[0] - c[0]).powi(2) + (b[1] - c[1]).powi(2)).sqrt();
    let order = (e1 / e2).log2();
    assert!(order > 3.5, "observed order {order}");
}

#[test]
fn speed_and_frame_are_preserved() {
    for dim in [2, 3] {
        let spec = medium(dim, bump(), 1.0);
        let g = trace_geodesic(&spec, &[0.0; 3], &[0.3, 1.0, -0.4], &opts(0.01)).unwrap();
        assert!(g.speed_defect() < 1e-8, "dim {dim}: speed {}", g.speed_defect());
        assert!(g.frame_defect() < 1e-8, "dim {dim}: frame {}", g.frame_defect());
    }
}

#[test]
fn geodesic_is_reversible() {
    let spec = medium(3, bump(), 1.0);
    let x0 = [0.1, 0.0, -0.2];
    let g = trace_geodesic(&spec, &x0, &[1.0, 0.5, 0.2], &opts(0.01)).unwrap();
    let s1 = 0.6;
    let x1 = g.point(s1).unwrap();
    let v1 = g.velocity(s1).unwrap();
    let back = trace_geodesic(&spec, &x1, &v1.map(|v| -v), &opts(0.01)).unwrap();
    let y = back.point(s1).unwrap();
    let err: f64 = (0..3).map(|a| (y[a] - x0[a]).powi(2)).sum::<f64>().sqrt();
    assert!(err < 1e-9, "return error {err}");
}

#[test]
fn diameter_of_unit_cube() {
    let spec = medium(3, Field::constant(1.0), 0.5);
    let est = diameter(&spec, 3, &opts(0.01)).unwrap();
    assert!((est.value - 3f64.sqrt()).abs() < 1e-9, "{est:?}");
    let slow = medium(3, Field::constant(4.0), 0.5);
    let est = diameter(&slow, 3, &opts(0.01)).unwrap();
    assert!((est.value - 3f64.sqrt() / 2.0).abs() < 1e-9);
}

#[test]
fn cotangent_stays_null() {
    let spec = medium(2, bump(), 1.0);
    let ng = build_null_geodesic(&spec, &[0.0; 3], &[0.6, 0.8, 0.0], 3.0, -1, &opts(0.01)).unwrap();
    assert!(ng.cotangent_defect() < 1e-8);
    assert_eq!(ng.cotangent().0, -spec.c1_at(&[0.0; 3]).sqrt());
}

#[test]
fn sectional_curvature_of_radial_medium_is_four() {
    let c1 = sphere();
    for x in [[0.0, 0.0, 0.0], [0.3, -0.2, 0.1], [-0.5, 0.4, 0.2]] {
        let m = Conformal::at(&c1, 3, &x);
        let s = m.c1.sqrt();
        let e1 = [s, 0.0, 0.0];
        let e2 = [0.0, s * 0.6, s * 0.8];
        let k = m.curvature_xabx(&e1, &e2, &e2, 3);
        assert!((k - 4.0).abs() < 1e-12, "{x:?}: {k}");
    }
}

#[test]
fn second_order_chart_error_is_cubic() {
    let spec = medium(3, bump(), 1.0);
    let ng = build_null_geodesic(&spec, &[0.0; 3], &[0.0, 1.0, 0.0], 3.0, 1, &opts(0.005)).unwrap();
    let chart = fermi_chart(&ng, 0.5).unwrap();
    let radii = [0.02, 0.04, 0.08, 0.16];
    let errs: Vec<f64> = radii
        .iter()
        .map(|&r| {
            let y = [0.6 * r, 0.8 * r];
            let a = chart.spatial_map(0.2, &y).unwrap();
            let b = chart.exact_spatial_map(0.2, &y, 400).unwrap();
            (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    let fit = fit_power(&radii, &errs);
    assert!(fit.slope >= 2.8, "exponent {} from {errs:?}", fit.slope);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fermi_round_trip(tau in -1.0f64..1.0, r in -0.2f64..0.2, a in -0.2f64..0.2, b in -0.2f64..0.2) {
        let spec = medium(3, bump(), 1.0);
        let ng = build_null_geodesic(&spec, &[0.0; 3], &[0.6, 0.0, 0.8], 3.0, 1, &opts(0.01)).unwrap();
        let chart = fermi_chart(&ng, 0.5).unwrap();
        let z = [tau, r, a, b];
        let q = chart.from_fermi(&z).unwrap();
        let back = chart.to_fermi(q.t, &q.x).unwrap();
        for k in 0..4 {
            prop_assert!((back[k] - z[k]).abs() < 1e-10, "{z:?} -> {back:?}");
        }
    }

    #[test]
    fn frame_orthonormal_for_random_directions(dx in -1.0f64..1.0, dy in -1.0f64..1.0, dz in 0.1f64..1.0) {
        let spec = medium(3, bump(), 1.0);
        let g = trace_geodesic(&spec, &[0.05, 0.0, 0.0], &[dx, dy, dz], &opts(0.02)).unwrap();
        prop_assert!(g.frame_defect() < 1e-8);
        prop_assert!(g.speed_defect() < 1e-8);
    }
}
