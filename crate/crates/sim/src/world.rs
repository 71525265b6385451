use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::behavior::HighLevelBehavior;
use crate::error::{Result, SimError};
use crate::geometry::{convex_overlap, rect_corners, wrap_angle, Polyline, Vec2};
use crate::map::RoadMap;
use crate::scenario::{BrakeScript, Scenario};
use crate::vehicle::{advance, Controls, VehicleState, BRAKE_DECEL, MAX_WHEEL_ANGLE, WHEELBASE};

/// Simulation tick in seconds.
pub const DT: f64 = 0.1;

/// Constants of the scripted expert (IDM longitudinal, pure-pursuit lateral).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertParams {
    pub desired_speed: f64,
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub lookahead: f64,
    /// Distance ahead inspected when labelling behaviour.
    pub label_horizon: f64,
    /// Heading change (radians) over the label horizon that counts as a turn.
    pub turn_threshold: f64,
    /// A lead vehicle closer than this (bumper gap) means "following".
    pub follow_distance: f64,
    /// Stop zones about to activate within this many seconds are already obeyed.
    pub anticipation: f64,
    /// Deceleration beyond which a stop zone can no longer be obeyed safely.
    pub max_stop_decel: f64,
    /// Lateral acceleration bound used to slow down before curves.
    pub lateral_accel: f64,
    /// How far ahead (m) lead vehicles and stop zones are considered.
    pub sensing_range: f64,
}

impl Default for ExpertParams {
    fn default() -> Self {
        ExpertParams {
            desired_speed: 8.0,
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 3.0,
            comfort_decel: 4.0,
            lookahead: 5.0,
            label_horizon: 20.0,
            turn_threshold: 30f64.to_radians(),
            follow_distance: 20.0,
            anticipation: 3.0,
            max_stop_decel: 6.0,
            lateral_accel: 2.5,
            sensing_range: 60.0,
        }
    }
}

#[derive(Debug)]
struct RoutePath {
    line: Polyline,
    lanes: Vec<u32>,
    /// (zone index, arc length where the route first enters the zone).
    zone_entries: Vec<(usize, f64)>,
    /// Arc length of each sparse target (ego only; empty otherwise).
    target_s: Vec<f64>,
}

impl RoutePath {
    fn lane_at(&self, s: f64) -> u32 {
        let arc = self.line.arc();
        let i = arc.partition_point(|&a| a < s).min(arc.len() - 1);
        self.lanes[i]
    }

    fn curvature_at(&self, s: f64) -> f64 {
        let h = 1.0;
        (wrap_angle(self.line.heading_at(s + h) - self.line.heading_at(s - h)) / (2.0 * h)).abs()
    }
}

#[derive(Clone, Debug)]
struct Agent {
    state: VehicleState,
    path: Arc<RoutePath>,
    /// Arc length of the vehicle's projection onto its route.
    s: f64,
    lateral: f64,
    cruise: f64,
    script: Option<BrakeScript>,
    stopped_at: Option<f64>,
}

/// Output of the expert for one vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpertDecision {
    pub controls: Controls,
    pub behavior: HighLevelBehavior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneView {
    pub polygon: Vec<Vec2>,
    pub active: bool,
}

/// Everything the map-view rasteriser needs about one instant, seen by one ego.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub time: f64,
    pub ego_id: u32,
    pub vehicles: Vec<VehicleState>,
    pub map: RoadMap,
    /// Ego route polyline near the ego (world frame).
    pub ego_route: Vec<Vec2>,
    pub stop_zones: Vec<ZoneView>,
    /// Ground-truth signal that the ego must stop for an active zone.
    pub stop_flag: bool,
    /// Next sparse route target (world frame).
    pub gnss_target: Vec2,
}

impl WorldSnapshot {
    pub fn ego(&self) -> Option<&VehicleState> {
        self.vehicles.iter().find(|v| v.id == self.ego_id)
    }
}

#[derive(Clone, Debug)]
pub struct World {
    scenario: Arc<Scenario>,
    params: ExpertParams,
    agents: Vec<Agent>,
    tick: u64,
}

struct Obstacle {
    gap: f64,
    speed: f64,
    vehicle: bool,
}

impl World {
    pub fn new(scenario: &Scenario) -> Result<World> {
        World::with_params(scenario, ExpertParams::default())
    }

    pub fn with_params(scenario: &Scenario, params: ExpertParams) -> Result<World> {
        scenario.validate()?;
        let agents = scenario
            .vehicles
            .iter()
            .map(|spec| {
                let pts: Vec<Vec2> = spec.route.iter().map(|p| p.position()).collect();
                let line = Polyline::new(pts);
                let mut zone_entries = Vec::new();
                for (zi, zone) in scenario.stop_zones.iter().enumerate() {
                    let arc = line.arc();
                    if let Some(k) = line.points().iter().position(|p| zone.contains(*p)) {
                        // Refine the entry between the last outside point and the first inside one.
                        let s = if k == 0 {
                            0.0
                        } else {
                            let (mut lo, mut hi) = (arc[k - 1], arc[k]);
                            for _ in 0..30 {
                                let mid = 0.5 * (lo + hi);
                                if zone.contains(line.point_at(mid)) {
                                    hi = mid;
                                } else {
                                    lo = mid;
                                }
                            }
                            hi
                        };
                        zone_entries.push((zi, s));
                    }
                }
                let target_s = if spec.initial.id == scenario.ego_id {
                    scenario.ego_targets.iter().map(|t| line.project(*t).s).collect()
                } else {
                    Vec::new()
                };
                let path = RoutePath {
                    lanes: spec.route.iter().map(|p| p.lane).collect(),
                    line,
                    zone_entries,
                    target_s,
                };
                let proj = path.line.project(spec.initial.position());
                Agent {
                    state: spec.initial,
                    s: proj.s,
                    lateral: proj.lateral,
                    path: Arc::new(path),
                    cruise: spec.cruise_speed,
                    script: spec.script,
                    stopped_at: None,
                }
            })
            .collect();
        Ok(World {
            scenario: Arc::new(scenario.clone()),
            params,
            agents,
            tick: 0,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn params(&self) -> &ExpertParams {
        &self.params
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * DT
    }

    pub fn ego_id(&self) -> u32 {
        self.scenario.ego_id
    }

    pub fn vehicles(&self) -> Vec<VehicleState> {
        self.agents.iter().map(|a| a.state).collect()
    }

    pub fn vehicle(&self, id: u32) -> Option<&VehicleState> {
        self.agents.iter().find(|a| a.state.id == id).map(|a| &a.state)
    }

    fn agent(&self, id: u32) -> Result<&Agent> {
        self.agents
            .iter()
            .find(|a| a.state.id == id)
            .ok_or(SimError::UnknownVehicle(id))
    }

    /// (arc position, route length, signed lateral offset) of a vehicle on its route.
    pub fn route_status(&self, id: u32) -> Result<(f64, f64, f64)> {
        let a = self.agent(id)?;
        Ok((a.s, a.path.line.length(), a.lateral))
    }

    /// Route polyline of a vehicle between `s - behind` and `s + ahead`,
    /// resampled at `spacing` metres.
    pub fn route_window(&self, id: u32, behind: f64, ahead: f64, spacing: f64) -> Result<Vec<Vec2>> {
        let a = self.agent(id)?;
        let len = a.path.line.length();
        let lo = (a.s - behind).max(0.0);
        let hi = (a.s + ahead).min(len);
        if hi <= lo {
            return Ok(vec![a.path.line.point_at(len)]);
        }
        let n = ((hi - lo) / spacing).ceil().max(1.0) as usize;
        Ok((0..=n)
            .map(|k| a.path.line.point_at(lo + (hi - lo) * k as f64 / n as f64))
            .collect())
    }

    /// Point on a vehicle's route at arc length `s`.
    pub fn route_point(&self, id: u32, s: f64) -> Result<Vec2> {
        Ok(self.agent(id)?.path.line.point_at(s))
    }

    pub fn zone_active(&self, zone: usize) -> bool {
        self.scenario.stop_zones[zone].schedule.active(self.time())
    }

    /// Next sparse target at least 5 m ahead of the vehicle along its route.
    pub fn gnss_target(&self, id: u32) -> Result<Vec2> {
        let a = self.agent(id)?;
        let targets = &self.scenario.ego_targets;
        if a.path.target_s.is_empty() {
            return Ok(a.path.line.point_at(a.path.line.length()));
        }
        let k = a
            .path
            .target_s
            .iter()
            .position(|&s| s > a.s + 5.0)
            .unwrap_or(targets.len() - 1);
        Ok(targets[k])
    }

    /// Stop zones the vehicle must respect now: (gap to stop line, zone index).
    fn blocking_zones(&self, a: &Agent) -> Vec<(f64, usize)> {
        let p = &self.params;
        let t = self.time();
        let v = a.state.speed;
        let front = a.s + a.state.length / 2.0;
        a.path
            .zone_entries
            .iter()
            .filter_map(|&(zi, entry)| {
                let gap = entry - front - 0.5;
                if gap < -0.5 || gap > p.sensing_range {
                    return None;
                }
                let schedule = &self.scenario.stop_zones[zi].schedule;
                if schedule.time_until_active(t) > p.anticipation {
                    return None;
                }
                let needed = v * v / (2.0 * gap.max(0.01));
                if needed > p.max_stop_decel && v > 0.5 {
                    return None;
                }
                Some((gap, zi))
            })
            .collect()
    }

    fn obstacles(&self, idx: usize) -> Vec<Obstacle> {
        let a = &self.agents[idx];
        let p = &self.params;
        let line = &a.path.line;
        let mut out = Vec::new();
        for (j, b) in self.agents.iter().enumerate() {
            if j == idx {
                continue;
            }
            let proj = line.project_window(b.state.position(), a.s - 1.0, a.s + p.sensing_range);
            let ds = proj.s - a.s;
            let corridor = 0.5 * (a.state.width + b.state.width) + 0.4;
            if ds <= 0.0 || ds > p.sensing_range || proj.lateral.abs() > corridor {
                continue;
            }
            let along = (b.state.heading - line.heading_at(proj.s)).cos() * b.state.speed;
            out.push(Obstacle {
                gap: ds - 0.5 * (a.state.length + b.state.length),
                speed: along.max(0.0),
                vehicle: true,
            });
        }
        for (gap, _) in self.blocking_zones(a) {
            out.push(Obstacle {
                gap,
                speed: 0.0,
                vehicle: false,
            });
        }
        // Vehicles come to rest with their centre near the route end.
        let end_gap = line.length() - a.s;
        if end_gap < p.sensing_range {
            out.push(Obstacle {
                gap: end_gap,
                speed: 0.0,
                vehicle: false,
            });
        }
        out
    }

    /// Ground-truth stop signal: an obeyable active zone lies within braking reach.
    pub fn stop_flag(&self, id: u32) -> Result<bool> {
        let a = self.agent(id)?;
        let v = a.state.speed;
        let reach = v * v / (2.0 * self.params.max_stop_decel) + 4.0;
        Ok(self.blocking_zones(a).iter().any(|&(gap, _)| gap <= reach))
    }

    fn behavior(&self, a: &Agent, obstacles: &[Obstacle]) -> HighLevelBehavior {
        let p = &self.params;
        let line = &a.path.line;
        let ahead = (a.s + p.label_horizon).min(line.length());
        let dh = wrap_angle(line.heading_at(ahead) - line.heading_at(a.s));
        if dh > p.turn_threshold {
            return HighLevelBehavior::TurnLeft;
        }
        if dh < -p.turn_threshold {
            return HighLevelBehavior::TurnRight;
        }
        let (l0, l1) = (a.path.lane_at(a.s), a.path.lane_at(ahead));
        if l1 > l0 {
            return HighLevelBehavior::ChangeLeft;
        }
        if l1 < l0 {
            return HighLevelBehavior::ChangeRight;
        }
        if obstacles
            .iter()
            .any(|o| o.vehicle && o.gap < p.follow_distance)
        {
            return HighLevelBehavior::Following;
        }
        HighLevelBehavior::GoStraight
    }

    /// IDM speed law plus pure-pursuit steering for one vehicle.
    pub fn expert(&self, id: u32) -> Result<ExpertDecision> {
        let idx = self
            .agents
            .iter()
            .position(|a| a.state.id == id)
            .ok_or(SimError::UnknownVehicle(id))?;
        let a = &self.agents[idx];
        if a.path.line.len() < 2 {
            return Err(SimError::NoRoute(id));
        }
        let p = &self.params;
        let v = a.state.speed;

        let target = a.path.line.point_at(a.s + p.lookahead);
        let local = a.state.pose().to_local(target);
        let ld2 = local.dot(local).max(1e-6);
        let wheel = (WHEELBASE * 2.0 * local.y / ld2).atan();
        let steer = wheel / MAX_WHEEL_ANGLE;

        // Desired speed capped by upcoming curvature, reachable with comfortable braking.
        let mut v0 = p.desired_speed.min(a.cruise);
        for k in 0..=30 {
            let d = k as f64;
            let kappa = a.path.curvature_at(a.s + d);
            if kappa > 1e-3 {
                let vc = (p.lateral_accel / kappa).sqrt();
                v0 = v0.min((vc * vc + 2.0 * p.comfort_decel * d).sqrt());
            }
        }
        v0 = v0.max(0.5);

        let obstacles = self.obstacles(idx);
        let free = p.max_accel * (1.0 - (v / v0).powi(4));
        let mut interact: f64 = 0.0;
        for o in &obstacles {
            if o.gap <= 0.05 {
                interact = f64::NEG_INFINITY;
                break;
            }
            let dv = v - o.speed;
            let s_star = p.min_gap
                + (v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt())).max(0.0);
            interact = interact.min(-p.max_accel * (s_star / o.gap).powi(2));
        }
        let mut accel = (free + interact).max(-BRAKE_DECEL);
        if let Some(script) = a.script {
            let t = self.time();
            let holding = a.stopped_at.map_or(true, |t0| t < t0 + script.hold);
            if t >= script.start && holding {
                accel = -BRAKE_DECEL;
            }
        }
        Ok(ExpertDecision {
            controls: Controls::from_accel(steer, accel),
            behavior: self.behavior(a, &obstacles),
        })
    }

    /// Expert commands for every vehicle, in vehicle order.
    pub fn expert_controls(&self) -> Result<Vec<Controls>> {
        self.agents
            .iter()
            .map(|a| self.expert(a.state.id).map(|d| d.controls))
            .collect()
    }

    /// Advances every vehicle one tick; `controls` is in vehicle order.
    pub fn step(&mut self, controls: &[Controls]) -> Result<()> {
        if controls.len() != self.agents.len() {
            return Err(SimError::ControlCount {
                expected: self.agents.len(),
                got: controls.len(),
            });
        }
        let next: Vec<VehicleState> = self
            .agents
            .iter()
            .zip(controls)
            .map(|(a, c)| advance(&a.state, c, DT))
            .collect::<Result<_>>()?;
        self.tick += 1;
        let t = self.time();
        for (a, s) in self.agents.iter_mut().zip(next) {
            a.state = s;
            let proj = a
                .path
                .line
                .project_window(s.position(), a.s - 3.0, a.s + 6.0);
            a.s = proj.s;
            a.lateral = proj.lateral;
            if let Some(script) = a.script {
                if t >= script.start && a.stopped_at.is_none() && s.speed == 0.0 {
                    a.stopped_at = Some(t);
                }
            }
        }
        Ok(())
    }

    /// Advances one tick with every vehicle under the expert.
    pub fn step_expert(&mut self) -> Result<()> {
        let c = self.expert_controls()?;
        self.step(&c)
    }

    /// Advances one tick with `ego` commanded externally and everyone else by the expert.
    pub fn step_with(&mut self, ego: u32, ego_controls: Controls) -> Result<()> {
        let mut c = Vec::with_capacity(self.agents.len());
        let mut found = false;
        for a in &self.agents {
            if a.state.id == ego {
                c.push(ego_controls);
                found = true;
            } else {
                c.push(self.expert(a.state.id)?.controls);
            }
        }
        if !found {
            return Err(SimError::UnknownVehicle(ego));
        }
        self.step(&c)
    }

    /// Pairs of vehicle ids whose footprints overlap.
    pub fn overlapping_pairs(&self) -> Vec<(u32, u32)> {
        let rects: Vec<_> = self
            .agents
            .iter()
            .map(|a| rect_corners(&a.state.pose(), a.state.length, a.state.width))
            .collect();
        let mut out = Vec::new();
        for i in 0..rects.len() {
            for j in i + 1..rects.len() {
                let (a, b) = (&self.agents[i].state, &self.agents[j].state);
                if a.position().dist(b.position()) <= a.half_diagonal() + b.half_diagonal()
                    && convex_overlap(&rects[i], &rects[j])
                {
                    out.push((a.id, b.id));
                }
            }
        }
        out
    }

    pub fn snapshot(&self, ego_id: u32) -> Result<WorldSnapshot> {
        let ego_route = self.route_window(ego_id, 20.0, 80.0, 2.0)?;
        Ok(WorldSnapshot {
            time: self.time(),
            ego_id,
            vehicles: self.vehicles(),
            map: self.scenario.map.clone(),
            ego_route,
            stop_zones: self
                .scenario
                .stop_zones
                .iter()
                .enumerate()
                .map(|(i, z)| ZoneView {
                    polygon: z.polygon.clone(),
                    active: self.zone_active(i),
                })
                .collect(),
            stop_flag: self.stop_flag(ego_id)?,
            gnss_target: self.gnss_target(ego_id)?,
        })
    }
}
