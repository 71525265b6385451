use std::collections::BTreeSet;

use jointdrive_sim::generator::scenario_rng;
use jointdrive_sim::*;
use proptest::prelude::*;

fn single_vehicle(route_len: f64, speed: f64) -> Scenario {
    let n = route_len as usize;
    Scenario {
        schema_version: SCENARIO_SCHEMA_VERSION,
        kind: ScenarioKind::EmptyRoad,
        seed: 0,
        map: straight_map(),
        ego_id: 0,
        ego_targets: vec![Vec2::new(route_len - 10.0, 0.0)],
        vehicles: vec![VehicleSpec {
            initial: VehicleState::new(0, 0.0, 0.0, 0.0, speed),
            route: (0..=n)
                .map(|i| RoutePoint {
                    x: i as f64 - 10.0,
                    y: 0.0,
                    lane: 0,
                })
                .collect(),
            cruise_speed: 8.0,
            script: None,
        }],
        stop_zones: vec![],
        duration: 30.0,
    }
}

#[test]
fn constant_steer_traces_circle() {
    let delta: f64 = 0.3;
    let steer = delta / MAX_WHEEL_ANGLE;
    let v = 5.0;
    let r = WHEELBASE / delta.tan();
    let mut s = VehicleState::new(0, 0.0, 0.0, 0.0, v);
    let c = Controls {
        steer,
        throttle: 0.0,
        brake: 0.0,
    };
    for k in 1..=100 {
        s = advance(&s, &c, DT).unwrap();
        // Closed-form circle: centre at (0, r), angle swept = v t / r.
        let phi = v * DT * k as f64 / r;
        let (ex, ey) = (r * phi.sin(), r - r * phi.cos());
        assert!((s.x - ex).hypot(s.y - ey) < 1e-3, "tick {k}");
        assert!((s.position().dist(Vec2::new(0.0, r)) - r).abs() < 1e-9);
    }
}

#[test]
fn free_flow_accelerates_straight() {
    let mut w = World::new(&single_vehicle(200.0, 0.0)).unwrap();
    let d = w.expert(0).unwrap();
    assert!(d.controls.throttle > 0.9 && d.controls.brake == 0.0);
    assert!(d.controls.steer.abs() < 1e-9);
    assert_eq!(d.behavior, HighLevelBehavior::GoStraight);
    for _ in 0..150 {
        w.step_expert().unwrap();
    }
    let v = w.vehicle(0).unwrap();
    assert!(v.speed > 7.0 && v.speed <= 8.0 + 1e-9, "speed {}", v.speed);
    assert!(v.y.abs() < 1e-9);
}

#[test]
fn brakes_behind_stopped_lead_without_overlap() {
    let mut sc = single_vehicle(200.0, 5.0);
    // Lead at rest with a 2 m bumper gap.
    let lead_x = 4.5 + 2.0;
    sc.vehicles.push(VehicleSpec {
        initial: VehicleState::new(1, lead_x, 0.0, 0.0, 0.0),
        route: (0..=2)
            .map(|i| RoutePoint {
                x: lead_x + i as f64 * 0.5,
                y: 0.0,
                lane: 0,
            })
            .collect(),
        cruise_speed: 8.0,
        script: None,
    });
    let mut w = World::new(&sc).unwrap();
    let d = w.expert(0).unwrap();
    assert_eq!(d.controls.brake, 1.0);
    assert_eq!(d.behavior, HighLevelBehavior::Following);
    for _ in 0..50 {
        w.step_expert().unwrap();
        assert!(w.overlapping_pairs().is_empty());
    }
    assert_eq!(w.vehicle(0).unwrap().speed, 0.0);
}

#[test]
fn idm_equilibrium_at_min_gap() {
    let mut sc = single_vehicle(200.0, 0.0);
    let lead_x = 4.5 + 2.0;
    sc.vehicles.push(VehicleSpec {
        initial: VehicleState::new(1, lead_x, 0.0, 0.0, 0.0),
        route: vec![
            RoutePoint { x: lead_x, y: 0.0, lane: 0 },
            RoutePoint { x: lead_x + 1.0, y: 0.0, lane: 0 },
        ],
        cruise_speed: 8.0,
        script: None,
    });
    // At rest exactly s0 behind a stopped leader, the free and interaction terms cancel.
    let w = World::new(&sc).unwrap();
    let c = w.expert(0).unwrap().controls;
    assert!(c.throttle.abs() < 1e-12 && c.brake.abs() < 1e-12, "{c:?}");
}

#[test]
fn left_turn_ahead_is_labelled() {
    // Every approach with a left route, checked from 10 m before the junction.
    for seed in 0..40 {
        let s = generate_kind(ScenarioKind::Intersection, seed, 0);
        let ego = s.vehicle(s.ego_id).unwrap();
        let line = Polyline::new(ego.route.iter().map(|p| p.position()).collect());
        let turn = wrap_angle(line.heading_at(line.length()) - line.heading_at(0.0));
        let w = World::new(&s).unwrap();
        let (s0, _, _) = w.route_status(s.ego_id).unwrap();
        // Distance from the vehicle to where the heading starts changing.
        let bend = (0..line.length() as usize)
            .map(|k| k as f64)
            .find(|&d| wrap_angle(line.heading_at(d) - line.heading_at(0.0)).abs() > 0.05)
            .unwrap_or(f64::INFINITY);
        let label = w.expert(s.ego_id).unwrap().behavior;
        if bend - s0 < 10.0 && turn > 1.0 {
            assert_eq!(label, HighLevelBehavior::TurnLeft);
        }
        if bend - s0 < 10.0 && turn < -1.0 {
            assert_eq!(label, HighLevelBehavior::TurnRight);
        }
    }
}

#[test]
fn left_turn_label_fixed_case() {
    let map = intersection_map();
    // Approach 0 (northbound) turning left uses connector 8 + 1.
    let connector = &map.lanes[9];
    let mut pts = vec![Vec2::new(1.75, -12.0)];
    pts.extend(connector.centerline.iter().copied());
    pts.push(map.lanes[connector.successors[0]].centerline[1]);
    let route: Vec<RoutePoint> = Polyline::new(pts)
        .resampled(1.0)
        .points()
        .iter()
        .map(|p| RoutePoint { x: p.x, y: p.y, lane: 0 })
        .collect();
    let sc = Scenario {
        schema_version: SCENARIO_SCHEMA_VERSION,
        kind: ScenarioKind::Intersection,
        seed: 0,
        map,
        ego_id: 0,
        ego_targets: vec![route.last().unwrap().position()],
        vehicles: vec![VehicleSpec {
            initial: VehicleState::new(0, 1.75, -10.0, std::f64::consts::FRAC_PI_2, 3.0),
            route,
            cruise_speed: 8.0,
            script: None,
        }],
        stop_zones: vec![],
        duration: 10.0,
    };
    let w = World::new(&sc).unwrap();
    assert_eq!(w.expert(0).unwrap().behavior, HighLevelBehavior::TurnLeft);
}

#[test]
fn vehicle_without_route_is_rejected() {
    let mut sc = single_vehicle(50.0, 0.0);
    sc.vehicles[0].route.truncate(1);
    assert!(matches!(World::new(&sc), Err(SimError::NoRoute(0))));
}

#[test]
fn rollout_of_stationary_world_is_origin() {
    // Route ends within the minimum gap: the vehicle stays put.
    let mut sc = single_vehicle(0.0, 0.0);
    sc.vehicles[0].route = vec![
        RoutePoint { x: -1.0, y: 0.0, lane: 0 },
        RoutePoint { x: 1.0, y: 0.0, lane: 0 },
    ];
    let w = World::new(&sc).unwrap();
    let labels = rollout_labels(&w, 0, 10, 0.5).unwrap();
    assert_eq!(labels.len(), 10);
    assert!(labels.iter().all(|p| p.x == 0.0 && p.y == 0.0));
}

#[test]
fn rollout_uniform_motion() {
    let mut sc = single_vehicle(250.0, 5.0);
    sc.vehicles[0].cruise_speed = 5.0;
    let mut params = ExpertParams::default();
    params.desired_speed = 5.0;
    // At exactly the desired speed the free-flow term is zero.
    let w = World::with_params(&sc, params).unwrap();
    let labels = rollout_labels(&w, 0, 10, 0.5).unwrap();
    for (k, p) in labels.iter().enumerate() {
        let want = 2.5 * (k + 1) as f64;
        assert!((p.x - want).abs() < 1e-9 && p.y.abs() < 1e-9, "{k}: {p:?}");
    }
}

#[test]
fn rollout_matches_independent_resimulation() {
    let sc = generate_kind(ScenarioKind::Intersection, 9, 2);
    let w = World::new(&sc).unwrap();
    let ego = sc.ego_id;
    let labels = rollout_labels(&w, ego, 10, 0.5).unwrap();
    let pose = w.vehicle(ego).unwrap().pose();
    let mut sim = World::new(&sc).unwrap();
    for (k, label) in labels.iter().enumerate() {
        for _ in 0..5 {
            let controls: Vec<Controls> = sim
                .vehicles()
                .iter()
                .map(|v| sim.expert(v.id).unwrap().controls)
                .collect();
            sim.step(&controls).unwrap();
        }
        let p = pose.to_local(sim.vehicle(ego).unwrap().position());
        assert_eq!((p.x, p.y), (label.x, label.y), "step {k}");
    }
    let many = rollout_labels_many(&w, &[ego, 1.min(sc.vehicles.len() as u32 - 1)], 10, 0.5).unwrap();
    assert_eq!(many[0], labels);
}

#[test]
fn label_interval_must_be_tick_multiple() {
    let w = World::new(&single_vehicle(50.0, 0.0)).unwrap();
    assert!(rollout_labels(&w, 0, 3, 0.25).is_err());
    assert!(matches!(rollout_labels(&w, 7, 3, 0.5), Err(SimError::UnknownVehicle(7))));
}

#[test]
fn non_finite_control_is_error() {
    let mut w = World::new(&single_vehicle(50.0, 0.0)).unwrap();
    let c = Controls {
        steer: 0.0,
        throttle: f64::INFINITY,
        brake: 0.0,
    };
    assert!(matches!(w.step(&[c]), Err(SimError::NonFiniteControl { .. })));
    assert!(matches!(w.step(&[]), Err(SimError::ControlCount { .. })));
}

fn expert_episode(sc: &Scenario) -> EpisodeLog {
    run_episode(sc, &mut ExpertAgent, &EpisodeConfig::default()).unwrap()
}

#[test]
fn episodes_are_deterministic() {
    let sc = generate(21, 3);
    let a = expert_episode(&sc);
    let b = expert_episode(&sc);
    let mut ja = Vec::new();
    let mut jb = Vec::new();
    a.write_jsonl(&mut ja).unwrap();
    b.write_jsonl(&mut jb).unwrap();
    assert_eq!(ja, jb);
    assert!(!ja.is_empty());
    assert_eq!(ja.iter().filter(|&&c| c == b'\n').count(), a.ticks.len());
}

#[test]
fn episode_log_invariants() {
    for i in 0..6 {
        let sc = generate(4, i);
        let log = expert_episode(&sc);
        for w in log.ticks.windows(2) {
            assert!(w[1].time > w[0].time);
            assert!(w[1].progress >= w[0].progress);
        }
    }
}

#[test]
fn no_teleporting() {
    let bound = MAX_SPEED * DT + 1e-6;
    for i in 0..6 {
        let sc = generate(8, i);
        let mut w = World::new(&sc).unwrap();
        let mut prev = w.vehicles();
        for _ in 0..200 {
            w.step_expert().unwrap();
            let now = w.vehicles();
            for (a, b) in prev.iter().zip(&now) {
                assert!(a.position().dist(b.position()) <= bound);
            }
            prev = now;
        }
    }
}

/// Runs every vehicle under the expert for the whole scenario.
fn expert_collisions(sc: &Scenario) -> Vec<(u32, u32, u64)> {
    let mut w = World::new(sc).unwrap();
    let ticks = (sc.duration / DT).round() as u64;
    let mut out = Vec::new();
    for _ in 0..ticks {
        w.step_expert().unwrap();
        for (a, b) in w.overlapping_pairs() {
            out.push((a, b, w.tick()));
        }
    }
    out
}

#[test]
fn expert_smoke_suite_is_collision_free() {
    for i in 0..20 {
        let sc = generate(2024, i);
        let hits = expert_collisions(&sc);
        assert!(hits.is_empty(), "scenario {i} ({:?}): {:?}", sc.kind, &hits[..hits.len().min(5)]);
        let m = compute_metrics(&expert_episode(&sc)).unwrap();
        assert_eq!(m.collisions, 0);
        assert_eq!(m.stop_violations, 0, "scenario {i}");
    }
}

#[test]
fn behavior_labels_cover_all_six() {
    let mut seen = BTreeSet::new();
    for i in 0..20 {
        let sc = generate(2024, i);
        let mut w = World::new(&sc).unwrap();
        for t in 0..(sc.duration / DT) as usize {
            if t % 5 == 0 {
                seen.insert(w.expert(sc.ego_id).unwrap().behavior);
            }
            w.step_expert().unwrap();
        }
    }
    assert_eq!(seen.len(), 6, "{seen:?}");
}

#[test]
fn scenario_json_roundtrip_and_schema_check() {
    let sc = generate(1, 0);
    let text = sc.to_json().unwrap();
    assert_eq!(Scenario::from_json(&text).unwrap(), sc);
    let bumped = text.replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
    assert!(matches!(
        Scenario::from_json(&bumped),
        Err(SimError::SchemaVersion { found: 99, .. })
    ));
}

#[test]
fn overlapping_initial_states_rejected() {
    let mut sc = single_vehicle(50.0, 0.0);
    let mut other = sc.vehicles[0].clone();
    other.initial.id = 1;
    other.initial.x = 3.0;
    sc.vehicles.push(other);
    assert!(matches!(sc.validate(), Err(SimError::InvalidScenario(_))));
}

#[test]
fn off_road_route_rejected() {
    let mut sc = single_vehicle(50.0, 0.0);
    sc.vehicles[0].route[5].y = 30.0;
    assert!(matches!(sc.validate(), Err(SimError::InvalidScenario(_))));
}

#[test]
fn expert_completes_empty_road() {
    let sc = generate_kind(ScenarioKind::EmptyRoad, 0, 0);
    let log = expert_episode(&sc);
    let m = compute_metrics(&log).unwrap();
    assert_eq!(log.termination, Some(Termination::Completed));
    assert_eq!((m.rc, m.is, m.ds), (100.0, 1.0, 100.0));
}

#[test]
fn stop_zones_hold_traffic_at_red() {
    // An intersection ego must never be inside the junction box of an active approach zone.
    for seed in 0..10 {
        let sc = generate_kind(ScenarioKind::Intersection, seed, 1);
        let log = expert_episode(&sc);
        assert!(log
            .events()
            .all(|e| !matches!(e, Infraction::StopViolation { .. })));
    }
}

#[test]
fn rng_streams_are_independent() {
    use rand::Rng;
    let a: u64 = scenario_rng(3, 0).gen();
    let b: u64 = scenario_rng(3, 1).gen();
    let c: u64 = scenario_rng(3, 0).gen();
    assert_ne!(a, b);
    assert_eq!(a, c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn advance_respects_bounds(
        speed in 0.0..15.0f64,
        heading in -3.14..3.14f64,
        steer in -3.0..3.0f64,
        throttle in -1.0..2.0f64,
        brake in -1.0..2.0f64,
    ) {
        let s = VehicleState::new(0, 1.0, 2.0, heading, speed);
        let n = advance(&s, &Controls { steer, throttle, brake }, DT).unwrap();
        prop_assert!(n.speed >= 0.0 && n.speed <= MAX_SPEED);
        prop_assert!(n.heading > -std::f64::consts::PI && n.heading <= std::f64::consts::PI);
        prop_assert!(s.position().dist(n.position()) <= MAX_SPEED * DT + 1e-6);
    }
}
