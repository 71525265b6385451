use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::{point_in_polygon, Polyline, Vec2};
use crate::map::RoadMap;
use crate::vehicle::VehicleState;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Straight,
    Intersection,
    LaneChange,
    HardBrake,
    EmptyRoad,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutePoint {
    pub x: f64,
    pub y: f64,
    /// Lateral lane index at this point (0 = rightmost).
    pub lane: u32,
}

impl RoutePoint {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Scripted emergency stop: full brake from `start` until standstill, then
/// hold for `hold` seconds before resuming normal driving.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrakeScript {
    pub start: f64,
    pub hold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub initial: VehicleState,
    pub route: Vec<RoutePoint>,
    /// Upper bound on the expert's desired speed for this vehicle.
    pub cruise_speed: f64,
    #[serde(default)]
    pub script: Option<BrakeScript>,
}

/// Periodic signal: the zone is passable during `[open_from, open_until)` of
/// each cycle (after shifting time by `offset`) and active otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub cycle: f64,
    pub offset: f64,
    pub open_from: f64,
    pub open_until: f64,
}

impl Schedule {
    fn phase(&self, t: f64) -> f64 {
        (t + self.offset).rem_euclid(self.cycle)
    }

    pub fn active(&self, t: f64) -> bool {
        let u = self.phase(t);
        !(self.open_from <= u && u < self.open_until)
    }

    /// Seconds until the zone next becomes active (0 when already active).
    pub fn time_until_active(&self, t: f64) -> f64 {
        if self.active(t) {
            0.0
        } else {
            self.open_until - self.phase(t)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopZone {
    pub polygon: Vec<Vec2>,
    pub schedule: Schedule,
}

impl StopZone {
    pub fn contains(&self, p: Vec2) -> bool {
        point_in_polygon(p, &self.polygon)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub map: RoadMap,
    pub ego_id: u32,
    /// Sparse goal points along the ego route, in order.
    pub ego_targets: Vec<Vec2>,
    pub vehicles: Vec<VehicleSpec>,
    pub stop_zones: Vec<StopZone>,
    /// Episode time limit in seconds.
    pub duration: f64,
}

impl Scenario {
    pub fn vehicle(&self, id: u32) -> Option<&VehicleSpec> {
        self.vehicles.iter().find(|v| v.initial.id == id)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| SimError::InvalidScenario("missing schema_version".into()))?;
        if found != SCENARIO_SCHEMA_VERSION as u64 {
            return Err(SimError::SchemaVersion {
                found: found as u32,
                expected: SCENARIO_SCHEMA_VERSION,
            });
        }
        let s: Scenario = serde_json::from_value(value)?;
        s.validate()?;
        Ok(s)
    }

    /// Checks the structural invariants: unique ids, ego present, routes on
    /// the road graph, and pairwise-disjoint footprint discs.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(SimError::SchemaVersion {
                found: self.schema_version,
                expected: SCENARIO_SCHEMA_VERSION,
            });
        }
        if self.vehicle(self.ego_id).is_none() {
            return bad(format!("ego {} not among vehicles", self.ego_id));
        }
        if !(self.duration > 0.0) {
            return bad("duration must be positive".into());
        }
        let lanes: Vec<(Polyline, f64)> = self
            .map
            .lanes
            .iter()
            .map(|l| (l.polyline(), l.width))
            .collect();
        for (i, v) in self.vehicles.iter().enumerate() {
            let s = &v.initial;
            if self.vehicles[..i].iter().any(|o| o.initial.id == s.id) {
                return bad(format!("duplicate vehicle id {}", s.id));
            }
            if !(s.length > 0.0 && s.width > 0.0 && s.speed >= 0.0)
                || !s.pose().is_finite()
            {
                return bad(format!("vehicle {} has an invalid state", s.id));
            }
            if v.route.len() < 2 {
                return Err(SimError::NoRoute(s.id));
            }
            for p in &v.route {
                let on = lanes
                    .iter()
                    .any(|(pl, w)| pl.distance(p.position()) <= w / 2.0 + 1e-6);
                if !on {
                    return bad(format!(
                        "route of vehicle {} leaves the road at ({:.2}, {:.2})",
                        s.id, p.x, p.y
                    ));
                }
            }
            for o in &self.vehicles[..i] {
                let o = &o.initial;
                if s.position().dist(o.position()) <= s.half_diagonal() + o.half_diagonal() {
                    return bad(format!("vehicles {} and {} overlap initially", o.id, s.id));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_phases() {
        let s = Schedule {
            cycle: 10.0,
            offset: 0.0,
            open_from: 2.0,
            open_until: 6.0,
        };
        assert!(s.active(1.0));
        assert!(!s.active(2.0));
        assert!(s.active(6.0));
        assert!((s.time_until_active(3.5) - 2.5).abs() < 1e-12);
        assert_eq!(s.time_until_active(7.0), 0.0);
        assert!(!s.active(13.0));
    }
}
