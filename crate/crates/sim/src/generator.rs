//! Seeded scenario construction: straight roads, four-way intersections,
//! lane changes, plus the hard-brake and empty-road evaluation suites.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Polyline, Vec2};
use crate::map::{Lane, RoadMap, LANE_WIDTH};
use crate::scenario::{
    BrakeScript, RoutePoint, Scenario, ScenarioKind, Schedule, StopZone, VehicleSpec,
    SCENARIO_SCHEMA_VERSION,
};
use crate::vehicle::VehicleState;

const ROAD_START: f64 = -40.0;
const ROAD_END: f64 = 260.0;
const BOX_HALF: f64 = 7.0;
const ARM_LENGTH: f64 = 70.0;
const GREEN: f64 = 9.0;
const CLEARANCE: f64 = 4.0;
const ROUTE_SPACING: f64 = 1.0;
const MAX_BACKGROUND: usize = 9;

/// Deterministic RNG for scenario `index` under `seed`.
pub fn scenario_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mixed training/evaluation scenario; the kind cycles with `index` so every
/// three consecutive indices cover all road layouts.
pub fn generate(seed: u64, index: u64) -> Scenario {
    let kind = match index % 3 {
        0 => ScenarioKind::Intersection,
        1 => ScenarioKind::Straight,
        _ => ScenarioKind::LaneChange,
    };
    generate_kind(kind, seed, index)
}

pub fn generate_kind(kind: ScenarioKind, seed: u64, index: u64) -> Scenario {
    let mut rng = scenario_rng(seed, index);
    let mut b = match kind {
        ScenarioKind::Straight => straight(&mut rng),
        ScenarioKind::Intersection => intersection(&mut rng),
        ScenarioKind::LaneChange => lane_change(&mut rng),
        ScenarioKind::HardBrake => hard_brake(&mut rng),
        ScenarioKind::EmptyRoad => empty_road(&mut rng),
    };
    b.scenario.kind = kind;
    b.scenario.seed = seed;
    b.finish()
}

struct Builder {
    scenario: Scenario,
    next_id: u32,
}

impl Builder {
    fn new(map: RoadMap, duration: f64) -> Self {
        Builder {
            scenario: Scenario {
                schema_version: SCENARIO_SCHEMA_VERSION,
                kind: ScenarioKind::Straight,
                seed: 0,
                map,
                ego_id: 0,
                ego_targets: Vec::new(),
                vehicles: Vec::new(),
                stop_zones: Vec::new(),
                duration,
            },
            next_id: 0,
        }
    }

    fn fits(&self, p: Vec2, heading: f64, spacing: f64) -> bool {
        let dir = Vec2::from_angle(heading);
        self.scenario.vehicles.iter().all(|v| {
            let q = v.initial.position();
            let d = q - p;
            let same_lane = (v.initial.heading - heading).cos() > 0.9 && d.perp().dot(dir).abs() < 1.0;
            d.norm() > 5.5 && (!same_lane || d.dot(dir).abs() >= spacing)
        })
    }

    fn add(&mut self, route: Vec<RoutePoint>, at: Vec2, speed: f64, cruise: f64) -> u32 {
        let line = Polyline::new(route.iter().map(|p| p.position()).collect());
        let heading = line.heading_at(line.project(at).s);
        let id = self.next_id;
        self.next_id += 1;
        self.scenario.vehicles.push(VehicleSpec {
            initial: VehicleState::new(id, at.x, at.y, heading, speed),
            route,
            cruise_speed: cruise,
            script: None,
        });
        id
    }

    fn set_ego(&mut self, id: u32) {
        self.scenario.ego_id = id;
        let spec = &self.scenario.vehicles[id as usize];
        let line = Polyline::new(spec.route.iter().map(|p| p.position()).collect());
        let start = line.project(spec.initial.position()).s;
        let mut targets = Vec::new();
        let mut s = start + 25.0;
        while s < line.length() - 5.0 {
            targets.push(line.point_at(s));
            s += 25.0;
        }
        targets.push(line.point_at(line.length()));
        self.scenario.ego_targets = targets;
    }

    fn finish(self) -> Scenario {
        debug_assert!(self.scenario.validate().is_ok(), "{:?}", self.scenario.validate());
        self.scenario
    }
}

fn lane(id: usize, pts: Vec<Vec2>, lane_index: u32, junction: bool) -> Lane {
    Lane {
        id,
        centerline: pts,
        width: LANE_WIDTH,
        successors: Vec::new(),
        lane_index,
        junction,
    }
}

/// Two forward lanes (y = 0 and 3.5, heading +x) and one oncoming lane (y = 7).
pub fn straight_map() -> RoadMap {
    RoadMap {
        lanes: vec![
            lane(0, vec![Vec2::new(ROAD_START, 0.0), Vec2::new(ROAD_END, 0.0)], 0, false),
            lane(1, vec![Vec2::new(ROAD_START, LANE_WIDTH), Vec2::new(ROAD_END, LANE_WIDTH)], 1, false),
            lane(2, vec![Vec2::new(ROAD_END, 2.0 * LANE_WIDTH), Vec2::new(ROAD_START, 2.0 * LANE_WIDTH)], 0, false),
        ],
    }
}

/// Straight route along a straight-map lane between two x coordinates.
fn straight_route(lane_id: usize, x0: f64, x1: f64) -> Vec<RoutePoint> {
    let (y, lane_index) = match lane_id {
        0 => (0.0, 0),
        1 => (LANE_WIDTH, 1),
        _ => (2.0 * LANE_WIDTH, 0),
    };
    let n = ((x1 - x0).abs() / ROUTE_SPACING).ceil().max(1.0) as usize;
    (0..=n)
        .map(|k| RoutePoint {
            x: x0 + (x1 - x0) * k as f64 / n as f64,
            y,
            lane: lane_index,
        })
        .collect()
}

fn lane_y(lane_id: usize) -> f64 {
    [0.0, LANE_WIDTH, 2.0 * LANE_WIDTH][lane_id]
}

/// Places up to `count` vehicles on the straight map, keeping clear of `keep_out`
/// (lane, x-range) regions.
fn straight_background<R: Rng>(
    b: &mut Builder,
    rng: &mut R,
    count: usize,
    x_range: (f64, f64),
    keep_out: &[(usize, f64, f64)],
) {
    let mut placed = 0;
    for _ in 0..count * 20 {
        if placed == count {
            break;
        }
        let lane_id = rng.gen_range(0..3usize);
        let x = rng.gen_range(x_range.0..x_range.1);
        if keep_out.iter().any(|&(l, lo, hi)| l == lane_id && x > lo && x < hi) {
            continue;
        }
        let heading = if lane_id == 2 { std::f64::consts::PI } else { 0.0 };
        let at = Vec2::new(x, lane_y(lane_id));
        let speed: f64 = rng.gen_range(2.0..8.0);
        if !b.fits(at, heading, 12.0 + speed) {
            continue;
        }
        let route = if lane_id == 2 {
            straight_route(2, (x + 10.0).min(ROAD_END), ROAD_START)
        } else {
            straight_route(lane_id, (x - 10.0).max(ROAD_START), ROAD_END)
        };
        let cruise = rng.gen_range(5.0..8.0);
        b.add(route, at, speed, cruise);
        placed += 1;
    }
}

fn straight<R: Rng>(rng: &mut R) -> Builder {
    let mut b = Builder::new(straight_map(), 25.0);
    let ego_lane = rng.gen_range(0..2usize);
    let ego_speed = rng.gen_range(2.0..8.0);
    let ego = b.add(
        straight_route(ego_lane, -10.0, 220.0),
        Vec2::new(0.0, lane_y(ego_lane)),
        ego_speed,
        8.0,
    );
    b.set_ego(ego);
    if rng.gen_bool(0.5) {
        let gap = rng.gen_range(8.0..22.0);
        let x = gap + 4.5;
        let speed = rng.gen_range(2.0..6.0);
        let cruise = rng.gen_range(3.5..6.0);
        b.add(
            straight_route(ego_lane, x - 10.0, ROAD_END),
            Vec2::new(x, lane_y(ego_lane)),
            speed,
            cruise,
        );
    }
    let n = rng.gen_range(0..=MAX_BACKGROUND - (b.scenario.vehicles.len() - 1));
    straight_background(&mut b, rng, n, (-30.0, 120.0), &[]);
    b
}

fn lane_change<R: Rng>(rng: &mut R) -> Builder {
    let mut b = Builder::new(straight_map(), 25.0);
    let from = rng.gen_range(0..2usize);
    let to = 1 - from;
    let start = rng.gen_range(15.0..35.0);
    let length = 25.0;
    let (ya, yb) = (lane_y(from), lane_y(to));
    let (x0, x1) = (-10.0, 220.0);
    let n = ((x1 - x0) / ROUTE_SPACING) as usize;
    let route: Vec<RoutePoint> = (0..=n)
        .map(|k| {
            let x = x0 + (x1 - x0) * k as f64 / n as f64;
            let u = ((x - start) / length).clamp(0.0, 1.0);
            let w = 0.5 - 0.5 * (std::f64::consts::PI * u).cos();
            let y = ya + (yb - ya) * w;
            RoutePoint {
                x,
                y,
                lane: if w < 0.5 { from as u32 } else { to as u32 },
            }
        })
        .collect();
    let ego = b.add(route, Vec2::new(0.0, ya), rng.gen_range(4.0..8.0), 8.0);
    b.set_ego(ego);
    let n = rng.gen_range(0..=6);
    let end = start + length;
    straight_background(
        &mut b,
        rng,
        n,
        (-40.0, 130.0),
        &[(from, -15.0, end + 40.0), (to, -25.0, end + 45.0)],
    );
    b
}

fn hard_brake<R: Rng>(rng: &mut R) -> Builder {
    let mut b = Builder::new(straight_map(), 25.0);
    let speed = rng.gen_range(6.0..8.0);
    let ego = b.add(straight_route(0, -10.0, 120.0), Vec2::new(0.0, 0.0), speed, 8.0);
    b.set_ego(ego);
    let gap = rng.gen_range(12.0..20.0);
    let x = gap + 4.5;
    let lead = b.add(straight_route(0, x - 10.0, ROAD_END), Vec2::new(x, 0.0), speed, 8.0);
    b.scenario.vehicles[lead as usize].script = Some(BrakeScript {
        start: rng.gen_range(1.5..3.5),
        hold: 3.0,
    });
    b
}

fn empty_road<R: Rng>(rng: &mut R) -> Builder {
    let mut b = Builder::new(straight_map(), 30.0);
    let lane_id = rng.gen_range(0..2usize);
    let ego = b.add(
        straight_route(lane_id, -10.0, 100.0),
        Vec2::new(0.0, lane_y(lane_id)),
        rng.gen_range(3.0..6.0),
        8.0,
    );
    b.set_ego(ego);
    b
}

/// Travel direction of approach `k` (0 = northbound, then counter-clockwise).
fn approach_dir(k: usize) -> Vec2 {
    Vec2::from_angle(FRAC_PI_2 + k as f64 * FRAC_PI_2)
}

fn right_of(d: Vec2) -> Vec2 {
    Vec2::new(d.y, -d.x)
}

fn cubic(p0: Vec2, p1: Vec2, p2: Vec2, p3: Vec2, n: usize) -> Vec<Vec2> {
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let u = 1.0 - t;
            p0 * (u * u * u) + p1 * (3.0 * u * u * t) + p2 * (3.0 * u * t * t) + p3 * (t * t * t)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Maneuver {
    Straight,
    Left,
    Right,
}

impl Maneuver {
    fn exit_dir(self, d: Vec2) -> Vec2 {
        match self {
            Maneuver::Straight => d,
            Maneuver::Left => d.perp(),
            Maneuver::Right => right_of(d),
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

const MANEUVERS: [Maneuver; 3] = [Maneuver::Straight, Maneuver::Left, Maneuver::Right];

/// Lane ids: approaches 0..4, exits 4..8 (exit k travels along `approach_dir(k)`),
/// connectors 8 + 3·k + maneuver.
pub fn intersection_map() -> RoadMap {
    let half = LANE_WIDTH / 2.0;
    let mut lanes = Vec::new();
    for k in 0..4 {
        let d = approach_dir(k);
        let r = right_of(d);
        let a = -d * (BOX_HALF + ARM_LENGTH) + r * half;
        let e = -d * BOX_HALF + r * half;
        lanes.push(lane(k, vec![a, e], 0, false));
    }
    for k in 0..4 {
        let d = approach_dir(k);
        let r = right_of(d);
        lanes.push(lane(4 + k, vec![d * BOX_HALF + r * half, d * (BOX_HALF + ARM_LENGTH) + r * half], 0, false));
    }
    for k in 0..4 {
        let d = approach_dir(k);
        let entry = -d * BOX_HALF + right_of(d) * half;
        for m in MANEUVERS {
            let e = m.exit_dir(d);
            let exit = e * BOX_HALF + right_of(e) * half;
            let handle = match m {
                Maneuver::Straight => 2.0 * BOX_HALF / 3.0,
                Maneuver::Left => 0.5523 * (BOX_HALF + half),
                Maneuver::Right => 0.5523 * (BOX_HALF - half),
            };
            let pts = cubic(entry, entry + d * handle, exit - e * handle, exit, 24);
            let id = lanes.len();
            let exit_lane = 4 + (0..4).find(|&j| approach_dir(j).dist(e) < 1e-9).unwrap();
            let mut l = lane(id, pts, 0, true);
            l.successors = vec![exit_lane];
            lanes.push(l);
        }
    }
    for k in 0..4 {
        lanes[k].successors = (0..3).map(|m| 8 + 3 * k + m).collect();
    }
    RoadMap { lanes }
}

/// Route from `dist` metres before the junction on approach `k` through `m`
/// to the end of the exit arm.
fn junction_route(map: &RoadMap, k: usize, m: Maneuver, dist: f64) -> Vec<RoutePoint> {
    let connector = &map.lanes[8 + 3 * k + m.index()];
    let exit = &map.lanes[connector.successors[0]];
    let approach = &map.lanes[k];
    let d = approach_dir(k);
    let entry = approach.centerline[1];
    let mut pts = vec![entry - d * (dist + 10.0).min(ARM_LENGTH)];
    pts.extend(connector.centerline.iter().copied());
    pts.push(exit.centerline[1]);
    Polyline::new(pts)
        .resampled(ROUTE_SPACING)
        .points()
        .iter()
        .map(|p| RoutePoint { x: p.x, y: p.y, lane: 0 })
        .collect()
}

fn exit_route(map: &RoadMap, k: usize, from: f64) -> Vec<RoutePoint> {
    let exit = &map.lanes[4 + k];
    let d = approach_dir(k);
    let a = exit.centerline[0] + d * (from - 10.0).max(0.0);
    Polyline::new(vec![a, exit.centerline[1]])
        .resampled(ROUTE_SPACING)
        .points()
        .iter()
        .map(|p| RoutePoint { x: p.x, y: p.y, lane: 0 })
        .collect()
}

fn intersection<R: Rng>(rng: &mut R) -> Builder {
    let map = intersection_map();
    let half = LANE_WIDTH / 2.0;
    let mut b = Builder::new(map.clone(), 35.0);
    let period = GREEN + CLEARANCE;
    let cycle = 4.0 * period;
    let ego_k = rng.gen_range(0..4usize);
    let green_in = rng.gen_range(0.0..12.0);
    let offset = (ego_k as f64 * period - green_in).rem_euclid(cycle);
    for k in 0..4 {
        let d = approach_dir(k);
        let r = right_of(d);
        let p = |a: f64, w: f64| -d * a + r * w;
        b.scenario.stop_zones.push(StopZone {
            polygon: vec![p(BOX_HALF, half - LANE_WIDTH / 2.0), p(BOX_HALF, half + LANE_WIDTH / 2.0), p(BOX_HALF + 2.0, half + LANE_WIDTH / 2.0), p(BOX_HALF + 2.0, half - LANE_WIDTH / 2.0)],
            schedule: Schedule {
                cycle,
                offset,
                open_from: k as f64 * period,
                open_until: k as f64 * period + GREEN,
            },
        });
    }
    // Speed from which a vehicle `dist` metres before the box can stop comfortably.
    let stoppable = |dist: f64| (2.0 * 3.0 * (dist - 4.5).max(0.0)).sqrt();

    let ego_m = MANEUVERS[rng.gen_range(0..3)];
    let ego_dist = rng.gen_range(20.0..45.0);
    let ego_at = -approach_dir(ego_k) * (BOX_HALF + ego_dist) + right_of(approach_dir(ego_k)) * half;
    let speed = rng.gen_range(3.0..8.0f64).min(stoppable(ego_dist));
    let ego = b.add(junction_route(&map, ego_k, ego_m, ego_dist), ego_at, speed, 8.0);
    b.set_ego(ego);

    let n = rng.gen_range(0..=MAX_BACKGROUND);
    let mut placed = 0;
    for _ in 0..n * 20 {
        if placed == n {
            break;
        }
        let k = rng.gen_range(0..4usize);
        let d = approach_dir(k);
        let r = right_of(d);
        let speed_draw = rng.gen_range(2.0..8.0f64);
        if rng.gen_bool(0.65) {
            let dist = rng.gen_range(5.0..60.0);
            let at = -d * (BOX_HALF + dist) + r * half;
            let speed = speed_draw.min(stoppable(dist));
            if !b.fits(at, d.angle(), 12.0 + speed) {
                continue;
            }
            let m = MANEUVERS[rng.gen_range(0..3)];
            b.add(junction_route(&map, k, m, dist), at, speed, rng.gen_range(6.0..8.0));
        } else {
            let dist = rng.gen_range(8.0..50.0);
            let at = d * (BOX_HALF + dist) + r * half;
            if !b.fits(at, d.angle(), 12.0 + speed_draw) {
                continue;
            }
            b.add(exit_route(&map, k, dist), at, speed_draw, rng.gen_range(6.0..8.0));
        }
        placed += 1;
    }
    b
}
