mod common;

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use proptest::prelude::*;
use tapegrip_core::control::{
    apply_progress_command, AutoGrip, AutoGripPhase, ControlError, Controller, Convey, FailReason, ForceServoParams,
    GoTo, Progress, Release, RotateInGrasp, Translate,
};
use tapegrip_core::sim::{restore, Shape, Simulator, StepCommand, WorldEvent};
use tapegrip_core::{SimConfig, Side, Vec2};

use common::{at, circle, drive, grasped, run, sim, sim_with, Lcg};

fn rotate_circle(config: SimConfig) -> (f64, [f64; 2], Vec2) {
    let mut s = sim_with(config);
    let id = grasped(&mut s, circle(20.0), 0.0, 400.0, 0.6);
    let start = s.state().object(id).unwrap().pose.position;
    let mut r = RotateInGrasp::new(&s, id, FRAC_PI_2, None).unwrap();
    let mut disp = [0.0; 2];
    let (_, result, _) = drive(&mut s, &mut r, 100_000, |before, _, after| {
        for (k, side) in Side::BOTH.into_iter().enumerate() {
            disp[k] += after.contact(id, side).map_or(0.0, |c| c.surface_displacement);
            // Spooling keeps the total length for a round object.
            assert!((after.appendage(side).length - before.appendage(side).length).abs() < 1e-9);
        }
    });
    assert_eq!(result, Ok(()));
    let o = s.state().object(id).unwrap();
    (o.pose.orientation, disp, o.pose.position - start)
}

#[test]
fn quarter_turn_of_a_circle_spools_pi_r_over_two() {
    let (phi, disp, moved) = rotate_circle(SimConfig::default());
    let expected = PI * 20.0 / 2.0;
    for d in disp {
        assert!((d.abs() - expected).abs() < 1e-6, "surface displacement {d}");
    }
    assert!(disp[0] * disp[1] < 0.0, "surface motions must oppose");
    assert!(moved.norm() < 1e-6);
    let mut fine = SimConfig::default();
    fine.tick_dt /= 10.0;
    let (phi_fine, _, _) = rotate_circle(fine);
    assert!((phi - FRAC_PI_2).abs().to_degrees() < 0.01);
    assert!((phi - phi_fine).abs().to_degrees() < 0.01);
}

#[test]
fn zero_angle_rotation_is_empty() {
    let mut s = sim();
    let id = grasped(&mut s, circle(20.0), 0.0, 400.0, 0.6);
    let mut r = RotateInGrasp::new(&s, id, 0.0, None).unwrap();
    assert_eq!(r.step(&s).unwrap(), Progress::Done);
}

fn rotate_ellipse(servo: Option<ForceServoParams>, grip: f64) -> (Result<(), FailReason>, Vec<WorldEvent>, f64, (f64, f64)) {
    let mut s = sim();
    let id = grasped(&mut s, Shape::Ellipse { semi_major: 20.0, semi_minor: 10.0 }, 0.0, 400.0, grip);
    let mut r = RotateInGrasp::new(&s, id, TAU, servo).unwrap();
    let mut band = (f64::INFINITY, f64::NEG_INFINITY);
    let (_, result, events) = drive(&mut s, &mut r, 100_000, |_, _, after| {
        if let (Some(l), Some(rt)) = (after.contact(id, Side::Left), after.contact(id, Side::Right)) {
            let f = 0.5 * (l.force + rt.force);
            band = (band.0.min(f), band.1.max(f));
        }
    });
    let phi = s.state().object(id).map_or(f64::NAN, |o| o.pose.orientation);
    (result, events, phi, band)
}

#[test]
fn open_loop_ellipse_rotation_drops_the_object() {
    let (result, events, _, _) = rotate_ellipse(None, 0.6);
    assert!(matches!(result, Err(FailReason::ObjectDropped { object: 1 })));
    assert!(events.contains(&WorldEvent::ObjectDropped { object: 1 }));
}

#[test]
fn servoed_ellipse_rotation_completes_a_turn() {
    let servo = ForceServoParams::default();
    let (result, events, phi, (lo, hi)) = rotate_ellipse(Some(servo), servo.f_desired);
    assert_eq!(result, Ok(()));
    assert!(events.iter().all(|e| !e.is_failure()));
    assert!((phi - TAU).abs() < 1e-6);
    assert!(lo >= 0.8 * servo.f_desired && hi <= 1.2 * servo.f_desired, "force band {lo}..{hi}");
}

#[test]
fn diagonal_translate_holds_the_force() {
    let mut s = sim();
    let id = grasped(&mut s, circle(20.0), -50.0, 250.0, 0.6);
    let target = Vec2::new(50.0, 250.0 + 300f64.sqrt() * 10.0);
    assert!((target - Vec2::new(-50.0, 250.0)).norm() - 200.0 < 1e-9);
    let start: Vec<f64> = s.state().contacts.iter().map(|c| c.force).collect();
    let mut t = Translate::new(&s, id, target).unwrap();
    let (_, result, _) = drive(&mut s, &mut t, 100_000, |_, _, after| {
        let f: Vec<f64> = after.contacts.iter().map(|c| c.force).collect();
        assert_eq!(f.len(), 2);
        for (a, b) in f.iter().zip(&start) {
            assert!((a - b).abs() < 1e-6);
        }
    });
    assert_eq!(result, Ok(()));
    assert!(s.state().object(id).unwrap().pose.position.distance(target) < 1e-3);
}

#[test]
fn translate_edge_cases() {
    let mut s = sim();
    let id = grasped(&mut s, circle(20.0), 0.0, 300.0, 0.6);
    let here = s.state().object(id).unwrap().pose.position;
    let mut t = Translate::new(&s, id, here).unwrap();
    assert_eq!(t.step(&s).unwrap(), Progress::Done);
    let before = s.snapshot();
    assert!(matches!(Translate::new(&s, id, Vec2::new(0.0, 1400.0)), Err(ControlError::Kinematics(_))));
    assert_eq!(s.snapshot(), before);
}

#[test]
fn release_lets_go() {
    let mut s = sim();
    let id = grasped(&mut s, circle(20.0), 0.0, 350.0, 0.6);
    let mut r = Release::new(&s, None).unwrap();
    let out = run(&mut s, &mut r, 10_000);
    assert_eq!(out.result, Ok(()));
    assert!(out.events.iter().any(|(_, e)| *e == WorldEvent::ObjectReleased { object: id }));
    assert!(!s.state().object(id).unwrap().held);
}

#[test]
fn three_circles_convey_together() {
    let mut s = sim();
    for (side, x) in [(Side::Left, -65.0), (Side::Right, 65.0)] {
        let mut g = GoTo::new(&s, side, Vec2::new(x, 700.0)).unwrap();
        assert_eq!(run(&mut s, &mut g, 10_000).result, Ok(()));
    }
    let ids: Vec<u32> = [300.0, 420.0, 540.0].iter().map(|&y| s.spawn(circle(53.0), at(0.0, y)).unwrap()).collect();
    s.step(&StepCommand::default()).unwrap();
    let start: Vec<Vec2> = ids.iter().map(|&id| s.state().object(id).unwrap().pose.position).collect();
    let mut c = Convey::new(&s, 150.0).unwrap();
    let (_, result, events) = drive(&mut s, &mut c, 100_000, |before, _, after| {
        let d: Vec<Vec2> = ids
            .iter()
            .map(|&id| after.object(id).unwrap().pose.position - before.object(id).unwrap().pose.position)
            .collect();
        for v in &d[1..] {
            assert!(v.distance(d[0]) < 1e-9, "unequal per-tick displacement");
        }
        for (k, &a) in ids.iter().enumerate() {
            for &b in &ids[k + 1..] {
                assert!(!after.object(a).unwrap().overlaps(after.object(b).unwrap()));
            }
        }
    });
    assert_eq!(result, Ok(()));
    assert!(events.iter().all(|e| !e.is_failure()));
    for (id, p0) in ids.iter().zip(start) {
        let o = s.state().object(*id).unwrap();
        assert!(((p0.y - o.pose.position.y) - 150.0).abs() < 1e-6);
        assert!((o.pose.position.x - p0.x).abs() < 1e-9);
        assert!(o.pose.orientation.abs() < 1e-12);
    }
}

fn auto_grip(s: &mut Simulator) -> (Result<(), FailReason>, AutoGrip) {
    let mut ag = AutoGrip::new(s).unwrap();
    let (_, result, _) = drive(s, &mut ag, 200_000, |_, _, _| {});
    (result, ag)
}

#[test]
fn auto_grip_finds_circles_across_the_grip_region() {
    let mut rng = Lcg(0x5eed);
    let spring = SimConfig::default().mechanics.spring;
    let width_bias = spring.displacement_for_force(0.25).unwrap();
    for _ in 0..10 {
        let truth = Vec2::new(rng.range(-40.0, 40.0), rng.range(250.0, 450.0));
        let mut s = sim();
        let id = s.spawn(circle(25.0), at(truth.x, truth.y)).unwrap();
        let (result, ag) = auto_grip(&mut s);
        assert_eq!(result, Ok(()), "at {truth:?}");
        let ctx = ag.context();
        assert_eq!(ctx.phase, AutoGripPhase::Grasped);
        assert_eq!(ctx.threshold, 0.25);
        let sweep = SimConfig::default().auto_grip.sweep_step;
        let range = truth.norm();
        let bound = (sweep * range).max(2.0);
        let centre = ctx.center_estimate.unwrap();
        assert!(centre.distance(truth) <= bound, "centre {centre:?} vs {truth:?}");
        let w = ctx.object_width.unwrap();
        assert!((w - 50.0).abs() <= width_bias, "width {w}");
        assert!(s.state().object(id).unwrap().held);
    }
}

#[test]
fn auto_grip_phases_never_go_back() {
    let mut s = sim();
    s.spawn(circle(25.0), at(10.0, 380.0)).unwrap();
    let mut ag = AutoGrip::new(&s).unwrap();
    let mut phases = vec![ag.context().phase];
    loop {
        let p = ag.step(&s).unwrap();
        let now = ag.context().phase;
        assert!(now >= *phases.last().unwrap(), "{now:?} after {phases:?}");
        if now != *phases.last().unwrap() {
            phases.push(now);
        }
        match p {
            Progress::Running(cmd) => {
                apply_progress_command(&mut s, &mut ag, &cmd).unwrap();
            }
            _ => break,
        }
    }
    assert_eq!(phases.last(), Some(&AutoGripPhase::Grasped));
}

#[test]
fn empty_world_finds_nothing() {
    let mut s = sim();
    let (result, ag) = auto_grip(&mut s);
    assert_eq!(result, Err(FailReason::NoObjectFound));
    assert_eq!(ag.context().phase, AutoGripPhase::Failed);
    assert!(ag.context().sweep_contacts.left.is_none());
}

#[test]
fn object_outside_the_grip_region_is_not_found() {
    let mut s = sim();
    s.spawn(circle(25.0), at(0.0, 1500.0)).unwrap();
    assert_eq!(auto_grip(&mut s).0, Err(FailReason::NoObjectFound));
}

#[test]
fn snapshots_restore_exactly() {
    let mut s = sim();
    grasped(&mut s, circle(20.0), 0.0, 400.0, 0.6);
    let line = s.snapshot();
    let back = restore(&line).unwrap();
    assert_eq!(&back, s.state());
    assert_eq!(Simulator::from_state(SimConfig::default(), back).unwrap().snapshot(), line);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn servo_sign_is_correct(measured in 0.0..3.0f64, dt in 0.001..0.05f64) {
        let servo = ForceServoParams::default();
        let dw = RotateInGrasp::servo_correction(&servo, measured, dt);
        if measured < servo.f_desired - servo.deadband {
            prop_assert!(dw < 0.0);
        } else if measured > servo.f_desired + servo.deadband {
            prop_assert!(dw > 0.0);
        } else {
            prop_assert_eq!(dw, 0.0);
        }
        prop_assert!(dw.abs() <= servo.width_rate_limit * dt + 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn goto_respects_limits_and_arrives(x in -150.0..150.0f64, y in 250.0..700.0f64, right in any::<bool>()) {
        let side = if right { Side::Right } else { Side::Left };
        let mut s = sim();
        let target = Vec2::new(x, y);
        let Ok(mut g) = GoTo::new(&s, side, target) else { return Ok(()) };
        let (_, result, _) = drive(&mut s, &mut g, 100_000, |_, _, _| {});
        prop_assert_eq!(result, Ok(()));
        prop_assert!(s.world_tip(side).distance(target) < 1e-6);
    }

    #[test]
    fn identical_streams_give_identical_snapshots(x in -30.0..30.0f64, y in 300.0..450.0f64, angle in -3.0..3.0f64) {
        let go = || {
            let mut s = sim();
            let id = grasped(&mut s, circle(20.0), x, y, 0.6);
            let mut r = RotateInGrasp::new(&s, id, angle, Some(ForceServoParams::default())).unwrap();
            let mut lines = vec![s.snapshot()];
            assert_eq!(drive(&mut s, &mut r, 100_000, |_, _, _| {}).1, Ok(()));
            lines.push(s.snapshot());
            lines
        };
        prop_assert_eq!(go(), go());
    }
}
