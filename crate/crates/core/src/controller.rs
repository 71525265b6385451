//! Collision-aware tracking controller: checks the plan against predicted
//! trajectories, tracks a maximum-curvature preview point with a lateral PID
//! and a target speed with a longitudinal PID, and force-stops on risk or an
//! active stop signal.

use jointdrive_sim::{Controls, Pose, Vec2};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

/// How vehicle footprints are approximated in the collision check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Footprint {
    /// One disc of radius equal to the half-diagonal.
    Disc,
    /// Three discs along the vehicle axis covering thirds of its length.
    ThreeDisc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub lateral: PidGains,
    pub longitudinal: PidGains,
    /// Bound on the longitudinal integral term's accumulator.
    pub integral_clamp: f64,
    pub max_speed: f64,
    /// Extra clearance added to the summed radii, metres.
    pub margin: f64,
    /// Number of leading waypoints checked for collisions.
    pub check_horizon: usize,
    pub collision_check: bool,
    pub footprint: Footprint,
    /// Seconds between plan waypoints.
    pub dt_wp: f64,
    /// Seconds between control calls.
    pub dt: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            lateral: PidGains { kp: 1.2, ki: 0.0, kd: 0.2 },
            longitudinal: PidGains { kp: 0.8, ki: 0.05, kd: 0.0 },
            integral_clamp: 5.0,
            max_speed: 8.0,
            margin: 0.5,
            check_horizon: 6,
            collision_check: true,
            footprint: Footprint::Disc,
            dt_wp: 0.5,
            dt: 0.1,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.integral_clamp >= 0.0
            && self.max_speed > 0.0
            && self.margin >= 0.0
            && self.dt_wp > 0.0
            && self.dt > 0.0
            && [self.lateral, self.longitudinal]
                .iter()
                .all(|g| g.kp.is_finite() && g.ki.is_finite() && g.kd.is_finite());
        match ok {
            true => Ok(()),
            false => Err(CoreError::Config("invalid controller settings".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PidState {
    pub gains: PidGains,
    pub integral: f64,
    pub prev_error: Option<f64>,
    pub clamp: f64,
}

impl PidState {
    pub fn new(gains: PidGains, clamp: f64) -> Self {
        PidState {
            gains,
            integral: 0.0,
            prev_error: None,
            clamp,
        }
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    /// One update; the derivative term is zero on the first call after a reset.
    pub fn update(&mut self, error: f64, dt: f64) -> f64 {
        self.integral = (self.integral + error * dt).clamp(-self.clamp, self.clamp);
        let derivative = self.prev_error.map_or(0.0, |p| (error - p) / dt);
        self.prev_error = Some(error);
        self.gains.kp * error + self.gains.ki * self.integral + self.gains.kd * derivative
    }
}

/// Another vehicle's predicted trajectory, expressed in its own frame at the
/// current instant, with the pose that frame has relative to the ego.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedVehicle {
    pub id: u32,
    pub pose: Pose,
    pub length: f64,
    pub width: f64,
    pub trajectory: Vec<Vec2>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CollisionRisk {
    /// Index into the predictions slice.
    pub vehicle: usize,
    /// 1-based waypoint index.
    pub step: usize,
}

fn check_finite(points: &[Vec2], what: &str) -> Result<()> {
    match points.iter().all(|p| p.x.is_finite() && p.y.is_finite()) {
        true => Ok(()),
        false => Err(CoreError::NonFinite(what.into())),
    }
}

/// Disc centres and radius of a footprint at `center` facing `heading`.
fn discs(kind: Footprint, center: Vec2, heading: f64, length: f64, width: f64) -> (Vec<Vec2>, f64) {
    match kind {
        Footprint::Disc => (vec![center], 0.5 * length.hypot(width)),
        Footprint::ThreeDisc => {
            let dir = Vec2::from_angle(heading);
            let third = length / 3.0;
            let r = (0.5 * third).hypot(0.5 * width);
            (vec![center - dir * third, center, center + dir * third], r)
        }
    }
}

/// Headings along a trajectory from successive displacements, starting from
/// `initial` and holding the last heading over near-zero moves.
fn path_headings(start: Vec2, initial: f64, points: &[Vec2]) -> Vec<f64> {
    let mut prev = start;
    let mut heading = initial;
    points
        .iter()
        .map(|&p| {
            let d = p - prev;
            if d.norm() > 1e-3 {
                heading = d.angle();
            }
            prev = p;
            heading
        })
        .collect()
}

/// Earliest (vehicle, step) within the first `check_horizon` steps where the
/// plan and a prediction come closer than the summed radii plus margin.
pub fn collision_check(
    plan: &[Vec2],
    ego_dims: (f64, f64),
    predictions: &[PredictedVehicle],
    cfg: &ControllerConfig,
) -> Result<Option<CollisionRisk>> {
    check_finite(plan, "plan")?;
    let horizon = cfg.check_horizon.min(plan.len());
    let plan_heading = path_headings(Vec2::new(0.0, 0.0), 0.0, plan);
    let mut world_preds = Vec::with_capacity(predictions.len());
    for p in predictions {
        if p.trajectory.len() != plan.len() {
            return Err(CoreError::LengthMismatch {
                what: "predicted trajectory",
                expected: plan.len(),
                got: p.trajectory.len(),
            });
        }
        check_finite(&p.trajectory, "prediction")?;
        let pts: Vec<Vec2> = p.trajectory.iter().map(|&q| p.pose.to_world(q)).collect();
        let headings = path_headings(p.pose.position(), p.pose.heading, &pts);
        world_preds.push((pts, headings));
    }
    for step in 0..horizon {
        let (ego_discs, r_ego) = discs(cfg.footprint, plan[step], plan_heading[step], ego_dims.0, ego_dims.1);
        for (vi, (p, (pts, headings))) in predictions.iter().zip(&world_preds).enumerate() {
            let (other, r_other) = discs(cfg.footprint, pts[step], headings[step], p.length, p.width);
            let limit = r_ego + r_other + cfg.margin;
            let hit = ego_discs.iter().any(|a| other.iter().any(|b| a.dist(*b) < limit));
            if hit {
                return Ok(Some(CollisionRisk {
                    vehicle: vi,
                    step: step + 1,
                }));
            }
        }
    }
    Ok(None)
}

/// Menger curvature `4·area / (|a||b||c|)`; zero for degenerate triples.
pub fn menger_curvature(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    let (ab, bc, ca) = (a.dist(b), b.dist(c), c.dist(a));
    if ab < 1e-6 || bc < 1e-6 || ca < 1e-6 {
        return 0.0;
    }
    let area2 = (b - a).cross(c - a).abs();
    2.0 * area2 / (ab * bc * ca)
}

/// 0-based index of the preview waypoint: the interior waypoint of maximal
/// curvature, earliest on ties, never the first waypoint.
pub fn preview_index(traj: &[Vec2]) -> Option<usize> {
    match traj.len() {
        0 => None,
        1 | 2 => Some(traj.len() - 1),
        n => {
            let mut best = (1, 0.0);
            for t in 1..n - 1 {
                let k = menger_curvature(traj[t - 1], traj[t], traj[t + 1]);
                if k > best.1 {
                    best = (t, k);
                }
            }
            Some(best.0)
        }
    }
}

pub fn preview_point(traj: &[Vec2]) -> Option<Vec2> {
    preview_index(traj).map(|i| traj[i])
}

/// `min(max_speed, ‖p_T‖ / (T·Δt_wp))`.
pub fn target_speed(plan: &[Vec2], cfg: &ControllerConfig) -> f64 {
    match plan.last() {
        Some(last) => (last.norm() / (plan.len() as f64 * cfg.dt_wp)).min(cfg.max_speed),
        None => 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlDecision {
    pub command: Controls,
    pub risk: Option<CollisionRisk>,
    pub forced_stop: bool,
}

/// The stateful controller owned by one control loop.
#[derive(Clone, Debug)]
pub struct Controller {
    pub config: ControllerConfig,
    pub lateral: PidState,
    pub longitudinal: PidState,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Controller {
            lateral: PidState::new(config.lateral, config.integral_clamp),
            longitudinal: PidState::new(config.longitudinal, config.integral_clamp),
            config,
        })
    }

    pub fn reset(&mut self) {
        self.lateral.reset();
        self.longitudinal.reset();
    }

    /// Plan and predictions in the ego frame convention described on
    /// [`PredictedVehicle`]; `ego_dims` is (length, width).
    pub fn step(
        &mut self,
        plan: &[Vec2],
        predictions: &[PredictedVehicle],
        ego_dims: (f64, f64),
        speed: f64,
        stop_flag: bool,
    ) -> Result<ControlDecision> {
        if !speed.is_finite() {
            return Err(CoreError::NonFinite("speed".into()));
        }
        check_finite(plan, "plan")?;
        let risk = match self.config.collision_check {
            true => collision_check(plan, ego_dims, predictions, &self.config)?,
            false => None,
        };
        if stop_flag || risk.is_some() {
            return Ok(ControlDecision {
                command: Controls::STOP,
                risk,
                forced_stop: true,
            });
        }
        let dt = self.config.dt;
        let steer = match preview_point(plan) {
            Some(p) if p.norm() > 1e-6 => self.lateral.update(p.y.atan2(p.x), dt),
            _ => self.lateral.update(0.0, dt),
        };
        let accel = self.longitudinal.update(target_speed(plan, &self.config) - speed, dt);
        let command = Controls {
            steer: steer.clamp(-1.0, 1.0),
            throttle: accel.clamp(0.0, 1.0),
            brake: (-accel).clamp(0.0, 1.0),
        };
        Ok(ControlDecision {
            command,
            risk: None,
            forced_stop: false,
        })
    }
}
