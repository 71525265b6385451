//! Deterministic 2D multi-vehicle traffic simulator with a scripted expert.
//!
//! Vehicles follow a kinematic bicycle model. The expert combines an
//! intelligent-driver-model speed law with pure-pursuit steering and obeys
//! scheduled stop zones; its rollouts provide trajectory labels, and the
//! episode runner scores closed-loop driving.

pub mod behavior;
pub mod episode;
pub mod error;
pub mod generator;
pub mod geometry;
pub mod labels;
pub mod map;
pub mod scenario;
pub mod vehicle;
pub mod world;

pub use behavior::HighLevelBehavior;
pub use episode::{
    compute_metrics, run_episode, EgoAgent, EpisodeConfig, EpisodeLog, ExpertAgent, Infraction,
    Metrics, Termination, TickRecord,
};
pub use error::{Result, SimError};
pub use generator::{generate, generate_kind, intersection_map, straight_map};
pub use geometry::{wrap_angle, Polyline, Pose, Vec2};
pub use labels::{rollout_labels, rollout_labels_many};
pub use map::{Lane, RoadMap, LANE_WIDTH};
pub use scenario::{
    BrakeScript, RoutePoint, Scenario, ScenarioKind, Schedule, StopZone, VehicleSpec,
    SCENARIO_SCHEMA_VERSION,
};
pub use vehicle::{advance, Controls, VehicleState, MAX_SPEED, MAX_WHEEL_ANGLE, WHEELBASE};
pub use world::{ExpertDecision, ExpertParams, World, WorldSnapshot, ZoneView, DT};
