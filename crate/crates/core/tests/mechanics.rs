mod common;

use proptest::prelude::*;
use serde::Deserialize;
use tapegrip_core::config::mechanics_fragment;
use tapegrip_core::kinematics::forward_kinematics;
use tapegrip_core::mechanics::{
    estimate_contact_force, estimate_with_torques, fit_buckling, fit_spring, fit_torque, read_samples, simulate_load_cell, LeverGeometry,
    MechanicsError, BUCKLING_HEADER,
};
use tapegrip_core::{BendSpring, BucklingModel, Side, TorqueSpline};

use common::geom;

fn spline() -> TorqueSpline {
    TorqueSpline::new(vec![0.0, 0.5, 1.5, 3.0, 6.3], vec![0.0, 4.0, 9.0, 12.0, 14.0]).unwrap()
}

#[test]
fn default_buckling_meets_its_anchor() {
    // 4.97 N at 200 mm.
    let f: f64 = BucklingModel::default().force(200.0).unwrap();
    assert!((f - 4.97).abs() < 1e-12);
}

#[test]
fn below_offset_is_an_error() {
    let m = BucklingModel::offset(1000.0, 50.0);
    assert!(matches!(m.force(50.5), Err(MechanicsError::BelowOffset { .. })));
}

#[test]
fn two_rows_are_degenerate() {
    let rows = [(200.0, 5.0), (400.0, 2.5)];
    assert!(matches!(fit_buckling(&rows, false), Err(MechanicsError::DegenerateData(_))));
}

#[test]
fn fragments_parse_back() {
    #[derive(Deserialize)]
    struct Root {
        mechanics: Inner,
    }
    #[derive(Deserialize)]
    struct Inner {
        buckling: Option<BucklingModel>,
        spring: Option<BendSpring>,
    }
    let m = BucklingModel::offset(1234.5, 12.25);
    let text = mechanics_fragment("buckling", &m).unwrap();
    assert!(text.contains("[mechanics.buckling]"));
    let back: Root = toml::from_str(&text).unwrap();
    assert_eq!(back.mechanics.buckling, Some(m));
    let s = BendSpring::default();
    let back: Root = toml::from_str(&mechanics_fragment("spring", &s).unwrap()).unwrap();
    assert_eq!(back.mechanics.spring, Some(s));
}

#[test]
fn samples_need_the_documented_header() {
    let ok = "length_mm,force_N\n200,4.97\n400, 2.485\n";
    assert_eq!(read_samples(ok.as_bytes(), BUCKLING_HEADER).unwrap(), vec![(200.0, 4.97), (400.0, 2.485)]);
    assert!(read_samples("l,f\n1,2\n".as_bytes(), BUCKLING_HEADER).is_err());
    assert!(read_samples("length_mm,force_N\n1,x\n".as_bytes(), BUCKLING_HEADER).is_err());
}

#[test]
fn spring_fit_audits_monotonicity() {
    // A cubic that turns over inside the sampled range.
    let bad: Vec<(f64, f64)> = (1..=20).map(|k| {
        let d = k as f64 * 0.5;
        (d, d - 0.02 * d * d * d)
    }).collect();
    assert!(!fit_spring(&bad, 3).unwrap().monotone);
    let good: Vec<(f64, f64)> = (1..=20).map(|k| {
        let d = k as f64 * 0.5;
        (d, 0.05 * d + 0.002 * d * d * d)
    }).collect();
    let fit = fit_spring(&good, 3).unwrap();
    assert!(fit.monotone && fit.rms < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn estimator_inverts_the_virtual_load_cell(
        l in 400.0..1400.0f64,
        t4 in 0.0..1.5f64,
        a in 40.0..120.0f64,
        s1 in 0.05..1.0f64,
        s2 in 0.05..1.0f64,
        force in 0.0..20.0f64,
    ) {
        let g = geom();
        let st = forward_kinematics(&g, Side::Left, l, t4, a).unwrap();
        let tau = spline();
        let (l1p, l2p) = (s1 * st.l1, s2 * st.l2);
        match simulate_load_cell(&st, force, l1p, l2p, &tau) {
            Ok(read) => {
                let est = estimate_contact_force(&st, read, l1p, l2p, &tau).unwrap();
                prop_assert!((est.f2_prime_raw - force).abs() < 1e-9);
            }
            Err(MechanicsError::NearSingular { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn identity_lever_returns_the_reading(t in -1.0..1.5f64, l1 in 1.0..1400.0f64, l2 in 1.0..1400.0f64, f in -50.0..50.0f64) {
        let lever = LeverGeometry { theta1: t, theta4: t, l1, l2, l1_prime: l1, l2_prime: l2 };
        prop_assert_eq!(estimate_with_torques(&lever, f, 0.0, 0.0).unwrap(), f);
    }

    #[test]
    fn buckling_fit_recovers_exact_parameters(m in 300.0..3000.0f64, l0 in 5.0..120.0f64) {
        let rows: Vec<(f64, f64)> = (0..12).map(|k| {
            let l = 150.0 + 110.0 * k as f64;
            (l, m / (l - l0))
        }).collect();
        let fit = fit_buckling(&rows, false).unwrap();
        let BucklingModel::Offset { moment, length_offset } = fit.model else { panic!("form changed") };
        prop_assert!(((moment - m) / m).abs() < 1e-3);
        prop_assert!(((length_offset - l0) / l0).abs() < 1e-3);
    }

    #[test]
    fn buckling_force_falls_with_length(l in 150.0..1500.0f64, dl in 0.1..100.0f64) {
        let m = BucklingModel::offset(994.0, 40.0);
        prop_assert!(m.force(l + dl).unwrap() < m.force(l).unwrap());
    }

    #[test]
    fn spring_inverse_round_trips(d in 0.0..15.0f64) {
        let s = BendSpring::default();
        let f = s.loading_force(d).unwrap();
        prop_assert!((s.displacement_for_force(f).unwrap() - d).abs() < 1e-9);
    }

    #[test]
    fn torque_fit_passes_through_distinct_knots(
        raw in proptest::collection::vec((0.0..6.0f64, -20.0..20.0f64), 2..12)
    ) {
        let mut rows = raw;
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        rows.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-6);
        prop_assume!(rows.len() >= 2);
        let s = fit_torque(&rows).unwrap();
        for &(a, t) in &rows {
            prop_assert!((s.evaluate(a).torque - t).abs() < 1e-9);
        }
    }

    #[test]
    fn monotone_torque_data_interpolates_monotonically(steps in proptest::collection::vec(0.0..5.0f64, 3..10)) {
        let angles: Vec<f64> = (0..steps.len()).map(|k| k as f64 * 0.6).collect();
        let torques: Vec<f64> = steps.iter().scan(0.0, |acc, s| { *acc += s; Some(*acc) }).collect();
        let s = TorqueSpline::new(angles.clone(), torques).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=400 {
            let a = angles[angles.len() - 1] * k as f64 / 400.0;
            let t = s.evaluate(a).torque;
            prop_assert!(t >= prev - 1e-12);
            prev = t;
        }
    }
}
