mod common;

use proptest::prelude::*;
use rpred_core::{from_agent_frame, retarget, to_agent_frame, AgentKind, AgentTrack, MapElement, Pose2, Scenario, SceneVector, TrajState};

fn track(points: &[(f64, f64)], kind: AgentKind) -> AgentTrack {
    AgentTrack::new("a", points.iter().map(|&(x, y)| TrajState::new(x, y, kind)).collect(), None).unwrap()
}

fn all_points(s: &Scenario) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = s.scene.iter().map(|v| (v.x, v.y)).collect();
    for a in &s.agents {
        pts.extend(a.past.iter().map(|p| (p.x, p.y)));
    }
    pts
}

/// Independent rotation: world -> frame with origin `o` and heading `h`.
fn oracle_to_local(o: (f64, f64), h: f64, p: (f64, f64)) -> (f64, f64) {
    let (c, s) = (h.cos(), h.sin());
    let (dx, dy) = (p.0 - o.0, p.1 - o.1);
    (c * dx + s * dy, -s * dx + c * dy)
}

#[test]
fn rotation_matrix_oracle_on_random_tracks() {
    for seed in 0..20 {
        let s = common::random_scenario(seed, 3, 6, 5);
        let target = s.agents[1].current_pose;
        let out = to_agent_frame(&s, 1).unwrap();
        for (v, w) in s.scene.iter().zip(&out.scene) {
            let (x, y) = oracle_to_local((target.x, target.y), target.heading, (v.x, v.y));
            assert!((x - w.x).abs() < 1e-9 && (y - w.y).abs() < 1e-9);
        }
        let p = out.agents[1].current_pose;
        assert!(p.x.abs() < 1e-9 && p.y.abs() < 1e-9 && p.heading.abs() < 1e-9);
    }
}

#[test]
fn round_trip_through_frame_recovers_world() {
    let s = common::random_scenario(3, 4, 6, 5);
    let local = to_agent_frame(&s, 2).unwrap();
    let pts: Vec<(f64, f64)> = local.scene.iter().map(|v| (v.x, v.y)).collect();
    let back = from_agent_frame(&pts, &local.frame).unwrap();
    for (b, v) in back.iter().zip(&s.scene) {
        assert!((b.0 - v.x).abs() < 1e-9 && (b.1 - v.y).abs() < 1e-9);
    }
}

#[test]
fn from_agent_frame_rejects_non_finite() {
    let frame = Pose2::new(5.0, 5.0, std::f64::consts::FRAC_PI_2);
    assert!(from_agent_frame(&[(f64::NAN, 0.0)], &frame).is_err());
    assert!(from_agent_frame(&[(1.0, 2.0)], &Pose2::identity()).unwrap() == vec![(1.0, 2.0)]);
}

#[test]
fn retarget_then_back_matches_direct_frame() {
    let s = common::random_scenario(9, 3, 6, 5);
    let r = retarget(&s, 2).unwrap();
    assert_eq!(r.agents[0].id, s.agents[2].id);
    let direct = to_agent_frame(&s, 2).unwrap();
    for (a, b) in r.scene.iter().zip(&direct.scene) {
        assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn isometry_idempotence_and_codes(
        px in -100.0f64..100.0, py in -100.0f64..100.0,
        vx in -5.0f64..5.0, vy in -5.0f64..5.0,
        scene in prop::collection::vec((-200.0f64..200.0, -200.0f64..200.0, 0u8..3), 1..12),
    ) {
        prop_assume!(vx.hypot(vy) > 1e-3);
        let kinds = [AgentKind::Vehicle, AgentKind::Pedestrian, AgentKind::Cyclist];
        let attrs = [MapElement::LaneCenterline, MapElement::RoadBoundary, MapElement::Crosswalk];
        let pts: Vec<(f64, f64)> = (0..4).map(|t| (px + vx * t as f64, py + vy * t as f64)).collect();
        let vectors: Vec<SceneVector> = scene.iter().map(|&(x, y, a)| SceneVector::new(x, y, attrs[a as usize])).collect();
        let s = Scenario::new("p", vectors, vec![track(&pts, kinds[scene.len() % 3])], Pose2::identity()).unwrap();
        let once = to_agent_frame(&s, 0).unwrap();
        let twice = to_agent_frame(&once, 0).unwrap();

        let before = all_points(&s);
        let after = all_points(&once);
        for i in 0..before.len() {
            for j in (i + 1)..before.len() {
                let d0 = (before[i].0 - before[j].0).hypot(before[i].1 - before[j].1);
                let d1 = (after[i].0 - after[j].0).hypot(after[i].1 - after[j].1);
                prop_assert!((d0 - d1).abs() < 1e-9);
            }
        }
        for (a, b) in all_points(&once).iter().zip(all_points(&twice)) {
            prop_assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        }
        for (a, b) in s.scene.iter().zip(&once.scene) {
            prop_assert_eq!(a.attribute, b.attribute);
        }
        prop_assert_eq!(s.agents[0].past[0].semantic, once.agents[0].past[0].semantic);
    }
}
