use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::{wrap_angle, Pose, Vec2};

pub const WHEELBASE: f64 = 2.7;
pub const MAX_WHEEL_ANGLE: f64 = 35.0 * std::f64::consts::PI / 180.0;
pub const MAX_SPEED: f64 = 15.0;
pub const THROTTLE_ACCEL: f64 = 3.0;
pub const BRAKE_DECEL: f64 = 8.0;
pub const DEFAULT_LENGTH: f64 = 4.5;
pub const DEFAULT_WIDTH: f64 = 1.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

impl VehicleState {
    pub fn new(id: u32, x: f64, y: f64, heading: f64, speed: f64) -> Self {
        VehicleState {
            id,
            x,
            y,
            heading: wrap_angle(heading),
            speed: speed.clamp(0.0, MAX_SPEED),
            length: DEFAULT_LENGTH,
            width: DEFAULT_WIDTH,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.heading)
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_angle(self.heading) * self.speed
    }

    /// Radius of the disc enclosing the footprint.
    pub fn half_diagonal(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }

    pub fn front(&self) -> Vec2 {
        self.pose().to_world(Vec2::new(self.length / 2.0, 0.0))
    }
}

/// Normalised driving command.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    pub steer: f64,
    pub throttle: f64,
    pub brake: f64,
}

impl Controls {
    pub const STOP: Controls = Controls {
        steer: 0.0,
        throttle: 0.0,
        brake: 1.0,
    };

    pub fn is_finite(&self) -> bool {
        self.steer.is_finite() && self.throttle.is_finite() && self.brake.is_finite()
    }

    pub fn clamped(&self) -> Controls {
        Controls {
            steer: self.steer.clamp(-1.0, 1.0),
            throttle: self.throttle.clamp(0.0, 1.0),
            brake: self.brake.clamp(0.0, 1.0),
        }
    }

    /// Maps a desired acceleration onto throttle or brake.
    pub fn from_accel(steer: f64, accel: f64) -> Controls {
        let (throttle, brake) = if accel >= 0.0 {
            (accel / THROTTLE_ACCEL, 0.0)
        } else {
            (0.0, -accel / BRAKE_DECEL)
        };
        Controls { steer, throttle, brake }.clamped()
    }
}

/// Advances a vehicle one tick with the kinematic bicycle model.
///
/// The speed update is explicit; position and heading integrate the arc
/// driven at the tick's mean speed exactly, so constant-speed, constant-steer
/// motion traces a true circle of radius `WHEELBASE / tan(δ)`.
pub fn advance(state: &VehicleState, controls: &Controls, dt: f64) -> Result<VehicleState> {
    if !controls.is_finite() {
        return Err(SimError::NonFiniteControl {
            id: state.id,
            steer: controls.steer,
            throttle: controls.throttle,
            brake: controls.brake,
        });
    }
    let c = controls.clamped();
    let accel = THROTTLE_ACCEL * c.throttle - BRAKE_DECEL * c.brake;
    let v1 = (state.speed + accel * dt).clamp(0.0, MAX_SPEED);
    let dist = 0.5 * (state.speed + v1) * dt;
    let delta = c.steer * MAX_WHEEL_ANGLE;
    let curvature = delta.tan() / WHEELBASE;
    let dtheta = dist * curvature;
    let (x, y) = if dtheta.abs() < 1e-12 {
        (
            state.x + dist * state.heading.cos(),
            state.y + dist * state.heading.sin(),
        )
    } else {
        let r = 1.0 / curvature;
        let h1 = state.heading + dtheta;
        (
            state.x + r * (h1.sin() - state.heading.sin()),
            state.y - r * (h1.cos() - state.heading.cos()),
        )
    };
    Ok(VehicleState {
        x,
        y,
        heading: wrap_angle(state.heading + dtheta),
        speed: v1,
        ..*state
    })
}
