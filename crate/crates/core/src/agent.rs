//! Closed-loop ego agents built on the controller.

use jointdrive_numerics::{Graph, ParamStore};
use jointdrive_sim::{Controls, EgoAgent, HighLevelBehavior, Pose, Vec2, World};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::controller::{ControlDecision, Controller, ControllerConfig, PredictedVehicle};
use crate::error::{CoreError, Result};
use crate::model::{assemble, AssembleMode, Model, SceneInput};
use crate::raster::rasterize;

type AgentResult = std::result::Result<Controls, Box<dyn std::error::Error + Send + Sync>>;

/// Plan, predictions and command of one control tick, kept for rendering.
#[derive(Clone, Debug)]
pub struct TickTrace {
    pub behavior: HighLevelBehavior,
    pub plan: Vec<Vec2>,
    pub predictions: Vec<PredictedVehicle>,
    pub decision: ControlDecision,
}

/// Drives the ego with the network's plan and predictions.
pub struct ModelAgent<'a> {
    pub model: &'a Model,
    pub store: &'a ParamStore,
    pub controller: Controller,
    pub last: Option<TickTrace>,
}

impl<'a> ModelAgent<'a> {
    pub fn new(model: &'a Model, store: &'a ParamStore, config: ControllerConfig) -> Result<Self> {
        Ok(ModelAgent {
            model,
            store,
            controller: Controller::new(config)?,
            last: None,
        })
    }

    /// Runs the network on the current world and returns plan and predictions.
    pub fn infer(&self, world: &World) -> Result<(HighLevelBehavior, Vec<Vec2>, Vec<PredictedVehicle>)> {
        let cfg = &self.model.config;
        let ego_id = world.ego_id();
        let ego = *world.vehicle(ego_id).ok_or(CoreError::MissingVehicle(ego_id))?;
        let ego_pose = ego.pose();
        let snapshot = world.snapshot(ego_id)?;
        let feature = rasterize(&snapshot, ego_id, &cfg.grid)?;
        let visible: Vec<(u32, f64)> = snapshot
            .vehicles
            .iter()
            .filter(|v| v.id != ego_id && cfg.grid.contains(ego_pose.to_local(v.position())))
            .map(|v| (v.id, v.position().dist(ego.position())))
            .collect();
        let seq = assemble(
            ego_id,
            &visible,
            cfg.max_vehicles,
            AssembleMode::Inference,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        let selected: Vec<_> = seq
            .others()
            .into_iter()
            .map(|id| world.vehicle(id).copied().ok_or(CoreError::MissingVehicle(id)))
            .collect::<Result<_>>()?;
        let poses: Vec<Pose> = selected.iter().map(|v| ego_pose.relative(&v.pose())).collect();
        let behavior = world.expert(ego_id)?.behavior;
        let gnss = ego_pose.to_local(world.gnss_target(ego_id)?);
        let mut g = Graph::new(self.store);
        let input = SceneInput {
            raster: &feature.values,
            others: &poses,
            behavior: behavior.index(),
            gnss,
        };
        let out = self.model.forward(&mut g, &input, false)?;
        let to_points = |v| {
            g.value(v)
                .chunks_exact(2)
                .map(|c| Vec2::new(c[0], c[1]))
                .collect::<Vec<_>>()
        };
        let plan = to_points(out.plan.plan);
        let predictions = selected
            .iter()
            .zip(&poses)
            .zip(&out.plan.predictions)
            .map(|((v, pose), &p)| PredictedVehicle {
                id: v.id,
                pose: *pose,
                length: v.length,
                width: v.width,
                trajectory: to_points(p),
            })
            .collect();
        Ok((behavior, plan, predictions))
    }

    fn act_inner(&mut self, world: &World) -> Result<Controls> {
        let ego_id = world.ego_id();
        let ego = *world.vehicle(ego_id).ok_or(CoreError::MissingVehicle(ego_id))?;
        let (behavior, plan, predictions) = self.infer(world)?;
        let decision = self.controller.step(
            &plan,
            &predictions,
            (ego.length, ego.width),
            ego.speed,
            world.stop_flag(ego_id)?,
        )?;
        self.last = Some(TickTrace {
            behavior,
            plan,
            predictions,
            decision,
        });
        Ok(decision.command)
    }
}

impl EgoAgent for ModelAgent<'_> {
    fn act(&mut self, world: &World) -> AgentResult {
        Ok(self.act_inner(world)?)
    }
}

/// Non-learned baseline feeding the same controller: the plan follows the
/// route at a fixed speed and every other vehicle is predicted to keep its
/// current velocity. Isolates the controller's collision handling from the
/// network's accuracy.
pub struct RouteFollowAgent {
    pub controller: Controller,
    pub plan_speed: f64,
    pub horizon: usize,
    /// Other vehicles farther than this are ignored.
    pub range: f64,
}

impl RouteFollowAgent {
    pub fn new(config: ControllerConfig, horizon: usize) -> Result<Self> {
        Ok(RouteFollowAgent {
            plan_speed: config.max_speed,
            controller: Controller::new(config)?,
            horizon,
            range: 60.0,
        })
    }

    pub fn plan(&self, world: &World) -> Result<(Vec<Vec2>, Vec<PredictedVehicle>)> {
        let ego_id = world.ego_id();
        let ego = *world.vehicle(ego_id).ok_or(CoreError::MissingVehicle(ego_id))?;
        let pose = ego.pose();
        let (s, len, _) = world.route_status(ego_id)?;
        let dt_wp = self.controller.config.dt_wp;
        let plan = (1..=self.horizon)
            .map(|t| {
                let target = (s + self.plan_speed * dt_wp * t as f64).min(len);
                Ok(pose.to_local(world.route_point(ego_id, target)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let predictions = world
            .vehicles()
            .iter()
            .filter(|v| v.id != ego_id && v.position().dist(ego.position()) < self.range)
            .map(|v| PredictedVehicle {
                id: v.id,
                pose: pose.relative(&v.pose()),
                length: v.length,
                width: v.width,
                trajectory: (1..=self.horizon)
                    .map(|t| Vec2::new(v.speed * dt_wp * t as f64, 0.0))
                    .collect(),
            })
            .collect();
        Ok((plan, predictions))
    }
}

impl EgoAgent for RouteFollowAgent {
    fn act(&mut self, world: &World) -> AgentResult {
        let ego_id = world.ego_id();
        let ego = *world.vehicle(ego_id).ok_or(CoreError::MissingVehicle(ego_id))?;
        let (plan, predictions) = self.plan(world)?;
        let stop = world.stop_flag(ego_id)?;
        let d = self
            .controller
            .step(&plan, &predictions, (ego.length, ego.width), ego.speed, stop)?;
        Ok(d.command)
    }
}
