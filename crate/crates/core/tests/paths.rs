use proptest::prelude::*;
use tapegrip_core::control::{follow_path, read_trace, write_trace, ControlError, PathShape, PathSpec, TraceSample};
use tapegrip_core::sim::{InitialPose, Simulator};
use tapegrip_core::{SimConfig, Side, Vec2};

fn sim() -> Simulator {
    Simulator::new(SimConfig::default(), &InitialPose::default()).unwrap()
}

fn spec(shape: PathShape, center: Vec2, size: f64, speed: f64, loops: u32) -> PathSpec {
    PathSpec { waypoints: shape.waypoints(center, size), speeds: vec![speed], loops }
}

fn loop_trace(trace: &[TraceSample], k: u32) -> Vec<(Vec2, Vec2)> {
    trace.iter().filter(|s| s.loop_index == k).map(|s| (s.commanded, s.achieved)).collect()
}

#[test]
fn stationary_waypoint_converges() {
    let mut s = sim();
    let p = Vec2::new(40.0, 420.0);
    let path = PathSpec { waypoints: vec![p, p], speeds: vec![50.0], loops: 1 };
    let trace = follow_path(&mut s, Side::Right, &path).unwrap();
    assert!(s.world_tip(Side::Right).distance(p) < 1e-6);
    assert!(trace.last().unwrap().error() < 1e-6);
}

#[test]
fn square_tracking_error_is_bounded_by_one_tick_of_travel() {
    let mut s = sim();
    let speed = 50.0;
    let trace = follow_path(&mut s, Side::Right, &spec(PathShape::Square, Vec2::new(0.0, 400.0), 100.0, speed, 1)).unwrap();
    let bound = speed * s.config().tick_dt;
    let worst = trace.iter().filter(|t| t.loop_index > 0).map(TraceSample::error).fold(0.0, f64::max);
    assert!(worst <= bound, "max error {worst} > {bound}");
}

#[test]
fn repeated_loops_are_identical() {
    for shape in [PathShape::Square, PathShape::Triangle, PathShape::Circle, PathShape::Star] {
        for side in Side::BOTH {
            let mut s = sim();
            let trace = follow_path(&mut s, side, &spec(shape, Vec2::new(0.0, 420.0), 60.0, 50.0, 3)).unwrap();
            let first = loop_trace(&trace, 1);
            assert!(!first.is_empty());
            for k in 2..=3 {
                let other = loop_trace(&trace, k);
                assert_eq!(other.len(), first.len());
                for ((c1, a1), (c2, a2)) in first.iter().zip(&other) {
                    assert_eq!(c1, c2, "{shape:?} {side:?} loop {k}");
                    assert!(a1.distance(*a2) < 1e-9, "{shape:?} {side:?} loop {k}");
                }
            }
        }
    }
}

#[test]
fn closed_circle_returns_to_its_start() {
    let mut s = sim();
    let trace = follow_path(&mut s, Side::Left, &spec(PathShape::Circle, Vec2::new(-20.0, 380.0), 60.0, 40.0, 1)).unwrap();
    let start = trace.iter().rev().find(|t| t.loop_index == 0).unwrap().achieved;
    assert!(trace.last().unwrap().achieved.distance(start) < 1e-6);
}

#[test]
fn unreachable_paths_abort_before_moving() {
    let mut s = sim();
    let before = s.snapshot();
    let err = follow_path(&mut s, Side::Right, &spec(PathShape::Square, Vec2::new(0.0, 1600.0), 60.0, 50.0, 1)).unwrap_err();
    assert!(matches!(err.error, ControlError::Kinematics(_)));
    assert!(err.trace.is_empty());
    assert_eq!(s.snapshot(), before);
}

#[test]
fn invalid_specs_are_rejected() {
    let p = Vec2::new(0.0, 400.0);
    let bad = [
        PathSpec { waypoints: vec![p], speeds: vec![50.0], loops: 1 },
        PathSpec { waypoints: vec![p, p], speeds: vec![0.0], loops: 1 },
        PathSpec { waypoints: vec![p, p], speeds: vec![50.0], loops: 0 },
        PathSpec { waypoints: vec![p, p, p], speeds: vec![50.0, 50.0, 50.0], loops: 1 },
    ];
    for spec in bad {
        assert!(spec.validate().is_err(), "{spec:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_csv_round_trips_bit_for_bit(
        raw in proptest::collection::vec((0u64..100_000, 0u32..5, -1e3..1e3f64, -1e3..1e3f64, -1e3..1e3f64, -1e3..1e3f64), 0..40)
    ) {
        let trace: Vec<TraceSample> = raw
            .into_iter()
            .map(|(tick, loop_index, a, b, c, d)| TraceSample { tick, loop_index, commanded: Vec2::new(a, b), achieved: Vec2::new(c, d) })
            .collect();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        prop_assert_eq!(read_trace(buf.as_slice()).unwrap(), trace);
    }
}
