use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::scenario::Scenario;
use crate::vehicle::{Controls, VehicleState};
use crate::world::{World, DT};

pub const COLLISION_PENALTY: f64 = 0.60;
pub const STOP_VIOLATION_PENALTY: f64 = 0.80;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Infraction {
    Collision { other: u32 },
    StopViolation { zone: usize },
    OffRoute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub time: f64,
    pub vehicles: Vec<VehicleState>,
    pub ego_control: Controls,
    pub events: Vec<Infraction>,
    /// Route completion fraction in [0, 1], never decreasing.
    pub progress: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    OffRoute,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub ego_id: u32,
    pub seed: u64,
    pub ticks: Vec<TickRecord>,
    pub termination: Option<Termination>,
}

impl EpisodeLog {
    /// JSON-lines export, one tick per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.ticks {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn events(&self) -> impl Iterator<Item = &Infraction> {
        self.ticks.iter().flat_map(|t| t.events.iter())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Route completion, percent.
    pub rc: f64,
    /// Infraction score in (0, 1].
    pub is: f64,
    /// Driving score, percent.
    pub ds: f64,
    pub collisions: usize,
    pub stop_violations: usize,
    pub off_route: bool,
}

pub fn compute_metrics(log: &EpisodeLog) -> Result<Metrics> {
    let last = log.ticks.last().ok_or(SimError::EmptyLog)?;
    let rc = (last.progress * 100.0).clamp(0.0, 100.0);
    let (mut collisions, mut stop_violations, mut off_route) = (0, 0, false);
    for e in log.events() {
        match e {
            Infraction::Collision { .. } => collisions += 1,
            Infraction::StopViolation { .. } => stop_violations += 1,
            Infraction::OffRoute => off_route = true,
        }
    }
    let is = COLLISION_PENALTY.powi(collisions as i32)
        * STOP_VIOLATION_PENALTY.powi(stop_violations as i32);
    Ok(Metrics {
        rc,
        is,
        ds: rc * is,
        collisions,
        stop_violations,
        off_route,
    })
}

/// Something that drives the ego vehicle in closed loop.
pub trait EgoAgent {
    fn act(&mut self, world: &World) -> std::result::Result<Controls, Box<dyn std::error::Error + Send + Sync>>;
}

/// Drives the ego with the scripted expert itself.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExpertAgent;

impl EgoAgent for ExpertAgent {
    fn act(&mut self, world: &World) -> std::result::Result<Controls, Box<dyn std::error::Error + Send + Sync>> {
        Ok(world.expert(world.ego_id())?.controls)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Lateral deviation from the route that ends the episode.
    pub off_route_distance: f64,
    /// Remaining route length counted as arrival.
    pub arrival_tolerance: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            off_route_distance: 3.0,
            arrival_tolerance: 3.0,
        }
    }
}

/// Runs one closed-loop episode, scoring only the ego's infractions.
pub fn run_episode(scenario: &Scenario, agent: &mut dyn EgoAgent, cfg: &EpisodeConfig) -> Result<EpisodeLog> {
    let mut world = World::new(scenario)?;
    let ego = scenario.ego_id;
    let max_ticks = (scenario.duration / DT).round() as u64;
    let mut ticks = Vec::new();
    let mut touching: Vec<u32> = Vec::new();
    let mut inside: Vec<bool> = vec![false; scenario.stop_zones.len()];
    let mut progress: f64 = 0.0;
    let mut termination = None;
    while world.tick() < max_ticks {
        let control = agent.act(&world).map_err(SimError::Agent)?;
        world.step_with(ego, control)?;
        let mut events = Vec::new();

        let now: Vec<u32> = world
            .overlapping_pairs()
            .into_iter()
            .filter_map(|(a, b)| match (a == ego, b == ego) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect();
        for &o in &now {
            if !touching.contains(&o) {
                events.push(Infraction::Collision { other: o });
            }
        }
        touching = now;

        let state = *world.vehicle(ego).ok_or(SimError::UnknownVehicle(ego))?;
        let front = state.front();
        for (zi, zone) in scenario.stop_zones.iter().enumerate() {
            let is_in = zone.contains(front);
            if is_in && !inside[zi] && world.zone_active(zi) {
                events.push(Infraction::StopViolation { zone: zi });
            }
            inside[zi] = is_in;
        }

        let (s, len, lateral) = world.route_status(ego)?;
        let denom = (len - cfg.arrival_tolerance).max(1e-9);
        progress = progress.max((s / denom).clamp(0.0, 1.0));
        if lateral.abs() > cfg.off_route_distance {
            events.push(Infraction::OffRoute);
            termination = Some(Termination::OffRoute);
        } else if progress >= 1.0 {
            termination = Some(Termination::Completed);
        }
        ticks.push(TickRecord {
            tick: world.tick(),
            time: world.time(),
            vehicles: world.vehicles(),
            ego_control: control,
            events,
            progress,
        });
        if termination.is_some() {
            break;
        }
    }
    Ok(EpisodeLog {
        ego_id: ego,
        seed: scenario.seed,
        ticks,
        termination: Some(termination.unwrap_or(Termination::Timeout)),
    })
}
