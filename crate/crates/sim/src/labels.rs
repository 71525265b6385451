use crate::error::{Result, SimError};
use crate::geometry::Vec2;
use crate::world::{World, DT};

fn ticks_per_step(dt_wp: f64) -> Result<usize> {
    let k = (dt_wp / DT).round();
    if !(k >= 1.0) || (k * DT - dt_wp).abs() > 1e-9 {
        return Err(SimError::InvalidScenario(format!(
            "label interval {dt_wp} s is not a positive multiple of the {DT} s tick"
        )));
    }
    Ok(k as usize)
}

/// Future positions of `id` over `horizon` label steps of `dt_wp` seconds,
/// with every vehicle driven by the expert, expressed in the vehicle's
/// current frame (x forward, y left). The first point is one interval ahead.
pub fn rollout_labels(world: &World, id: u32, horizon: usize, dt_wp: f64) -> Result<Vec<Vec2>> {
    let mut all = rollout_labels_many(world, &[id], horizon, dt_wp)?;
    Ok(all.remove(0))
}

/// Same as [`rollout_labels`] for several vehicles from a single shared rollout.
pub fn rollout_labels_many(
    world: &World,
    ids: &[u32],
    horizon: usize,
    dt_wp: f64,
) -> Result<Vec<Vec<Vec2>>> {
    let per = ticks_per_step(dt_wp)?;
    let poses = ids
        .iter()
        .map(|&id| {
            world
                .vehicle(id)
                .map(|v| v.pose())
                .ok_or(SimError::UnknownVehicle(id))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sim = world.clone();
    let mut out = vec![Vec::with_capacity(horizon); ids.len()];
    for _ in 0..horizon {
        for _ in 0..per {
            sim.step_expert()?;
        }
        for ((traj, pose), &id) in out.iter_mut().zip(&poses).zip(ids) {
            let v = sim.vehicle(id).ok_or(SimError::UnknownVehicle(id))?;
            traj.push(pose.to_local(v.position()));
        }
    }
    Ok(out)
}
