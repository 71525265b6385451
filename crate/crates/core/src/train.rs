//! Three-stage training: perception surrogate, then the joint
//! planning/prediction network with perception frozen, then everything.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use jointdrive_numerics::{Adam, AdamConfig, Gradients, Graph, ParamId, ParamStore, StepLr, Var};
use jointdrive_sim::{Pose, Vec2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::Sample;
use crate::error::{CoreError, Result};
use crate::loss::{loss_planning, loss_prediction, loss_seg, loss_total};
use crate::model::{assemble, AssembleMode, Model, ModelConfig, SceneInput};
use crate::raster::rasterize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Segmentation loss on the perception surrogate only.
    Perception,
    /// Planning and prediction losses; perception frozen.
    Joint,
    /// Weighted sum of all losses; every parameter trains.
    Full,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Perception, Stage::Joint, Stage::Full];

    pub fn number(self) -> u8 {
        match self {
            Stage::Perception => 1,
            Stage::Joint => 2,
            Stage::Full => 3,
        }
    }

    pub fn from_number(n: u8) -> Result<Stage> {
        Stage::ALL
            .get((n as usize).wrapping_sub(1))
            .copied()
            .ok_or_else(|| CoreError::Config(format!("stage must be 1, 2 or 3, got {n}")))
    }
}

/// What one unit of the step-decay schedule counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrUnit {
    Epoch,
    Step,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Weight of the joint planning/prediction loss against the perception loss.
    pub lambda: f64,
    /// Seconds between waypoints.
    pub dt_wp: f64,
    pub lr: f64,
    pub step_size: u32,
    pub gamma: f64,
    pub lr_unit: LrUnit,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    /// Optimizer steps for stages 1, 2 and 3.
    pub stage_steps: [u64; 3],
    /// Draw a random subset of other vehicles per sample (otherwise the nearest).
    pub random_subsets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            lambda: 1.0,
            dt_wp: 0.5,
            lr: 3e-4,
            step_size: 3,
            gamma: 0.5,
            lr_unit: LrUnit::Epoch,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 4,
            stage_steps: [300, 3000, 1000],
            random_subsets: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.to_string()));
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.lr > 0.0) || !(self.gamma > 0.0) || self.step_size == 0 {
            return bad("lr, gamma and step_size must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.dt_wp > 0.0) {
            return bad("dt_wp must be positive");
        }
        Ok(())
    }

    pub fn schedule(&self) -> StepLr {
        StepLr {
            base_lr: self.lr,
            step_size: self.step_size,
            gamma: self.gamma,
        }
    }

    fn adam(&self) -> Adam {
        Adam::new(AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        })
    }
}

/// One sample made ready for the network.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub raster: jointdrive_numerics::Tensor,
    pub seg_targets: Vec<f64>,
    pub others: Vec<Pose>,
    pub other_labels: Vec<Vec<Vec2>>,
    pub behavior: usize,
    pub gnss: Vec2,
    pub ego_label: Vec<Vec2>,
}

impl Prepared {
    pub fn input(&self) -> SceneInput<'_> {
        SceneInput {
            raster: &self.raster,
            others: &self.others,
            behavior: self.behavior,
            gnss: self.gnss,
        }
    }
}

/// Rasterises a sample and selects its other vehicles.
pub fn prepare(sample: &Sample, cfg: &ModelConfig, mode: AssembleMode, rng: &mut ChaCha8Rng) -> Result<Prepared> {
    if sample.ego_label.len() != cfg.horizon {
        return Err(CoreError::LengthMismatch {
            what: "ego label",
            expected: cfg.horizon,
            got: sample.ego_label.len(),
        });
    }
    let ego = sample.snapshot.ego_id;
    let feature = rasterize(&sample.snapshot, ego, &cfg.grid)?;
    let candidates: Vec<(u32, f64)> = sample.others.iter().map(|o| (o.id, o.distance)).collect();
    let seq = assemble(ego, &candidates, cfg.max_vehicles, mode, rng);
    let mut others = Vec::new();
    let mut other_labels = Vec::new();
    for id in seq.others() {
        let o = sample
            .others
            .iter()
            .find(|o| o.id == id)
            .ok_or(CoreError::MissingVehicle(id))?;
        if o.label.len() != cfg.horizon {
            return Err(CoreError::LengthMismatch {
                what: "other-vehicle label",
                expected: cfg.horizon,
                got: o.label.len(),
            });
        }
        others.push(o.pose);
        other_labels.push(o.label.clone());
    }
    Ok(Prepared {
        seg_targets: feature.seg_targets(),
        raster: feature.values,
        others,
        other_labels,
        behavior: sample.behavior.index(),
        gnss: sample.gnss,
        ego_label: sample.ego_label.clone(),
    })
}

/// Loss values of one sample or the mean over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub seg: f64,
    pub planning: f64,
    pub prediction: f64,
    pub total: f64,
}

/// Builds the stage's loss for one prepared sample.
pub fn sample_loss(
    model: &Model,
    g: &mut Graph<'_>,
    p: &Prepared,
    stage: Stage,
    lambda: f64,
) -> Result<(Var, LossParts)> {
    let mut parts = LossParts::default();
    let loss = match stage {
        Stage::Perception => {
            let raster = g.input(p.raster.clone());
            let feature = model.perception.feature(g, raster)?;
            let logits = model.perception.seg_logits(g, feature)?;
            let l = loss_seg(g, logits, &p.seg_targets)?;
            parts.seg = g.scalar(l);
            l
        }
        Stage::Joint | Stage::Full => {
            let out = model.forward(g, &p.input(), stage == Stage::Full)?;
            let plan = loss_planning(g, out.plan.plan, &p.ego_label)?;
            let pred = loss_prediction(g, &out.plan.predictions, &p.other_labels)?;
            parts.planning = g.scalar(plan);
            parts.prediction = g.scalar(pred);
            let jpp = g.add(plan, pred)?;
            match out.seg_logits {
                Some(logits) => {
                    let seg = loss_seg(g, logits, &p.seg_targets)?;
                    parts.seg = g.scalar(seg);
                    loss_total(g, seg, jpp, lambda)?
                }
                None => jpp,
            }
        }
    };
    parts.total = g.scalar(loss);
    if !parts.total.is_finite() {
        return Err(CoreError::NonFinite(format!("stage {} loss", stage.number())));
    }
    Ok((loss, parts))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: Stage,
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: LossParts,
}

fn mix(seed: u64, stage: Stage, a: u64, b: u64) -> u64 {
    let mut z = seed ^ (u64::from(stage.number()) << 56) ^ a.rotate_left(17) ^ b.rotate_left(41);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub struct Trainer {
    pub model: Model,
    pub store: ParamStore,
    pub config: TrainConfig,
    /// Stage being trained and optimizer steps already taken in it.
    pub stage: Stage,
    pub step: u64,
    perception: HashSet<ParamId>,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (store, model) = Model::build(model_cfg, config.seed)?;
        Ok(Self::assemble(model, store, config, Stage::Perception, 0))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.train.validate()?;
        let (store, model) = ckpt.restore()?;
        Ok(Self::assemble(model, store, ckpt.train.clone(), ckpt.stage, ckpt.step))
    }

    fn assemble(model: Model, store: ParamStore, config: TrainConfig, stage: Stage, step: u64) -> Self {
        let perception = Model::perception_params(&store).into_iter().collect();
        Trainer {
            model,
            store,
            config,
            stage,
            step,
            perception,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.model.config, &self.config, self.stage, self.step, &self.store)
    }

    pub fn set_stage(&mut self, stage: Stage) {
        if stage != self.stage {
            self.stage = stage;
            self.step = 0;
        }
    }

    fn epoch_of(&self, step: u64, n: usize) -> u64 {
        step * self.config.batch_size as u64 / n as u64
    }

    fn lr_at(&self, step: u64, n: usize) -> Result<f64> {
        let unit = match self.config.lr_unit {
            LrUnit::Epoch => self.epoch_of(step, n),
            LrUnit::Step => step,
        };
        Ok(self.config.schedule().lr(unit as i64)?)
    }

    /// Sample indices of the current step: consecutive slices of a per-epoch
    /// shuffle, so every sample is seen once per epoch.
    fn batch_indices(&self, n: usize) -> Vec<usize> {
        let b = self.config.batch_size;
        let start = self.step as usize * b;
        let mut perm_epoch = usize::MAX;
        let mut perm: Vec<usize> = Vec::new();
        (start..start + b)
            .map(|k| {
                let epoch = k / n;
                if epoch != perm_epoch {
                    perm = (0..n).collect();
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(self.config.seed, self.stage, epoch as u64, 0x5eed));
                    perm.shuffle(&mut rng);
                    perm_epoch = epoch;
                }
                perm[k % n]
            })
            .collect()
    }

    /// Mean gradient and losses of the current step's batch, without updating.
    pub fn batch_gradients(&self, data: &[Sample]) -> Result<(Gradients, LossParts)> {
        if data.is_empty() {
            return Err(CoreError::EmptyDataset);
        }
        let mode = match self.config.random_subsets {
            true => AssembleMode::Training,
            false => AssembleMode::Inference,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.config.seed, self.stage, self.step, 0xda7a));
        let mut grads = Gradients::new(self.store.len());
        let mut mean = LossParts::default();
        let indices = self.batch_indices(data.len());
        for &i in &indices {
            let prepared = prepare(&data[i], &self.model.config, mode, &mut rng)?;
            let mut g = Graph::new(&self.store);
            let (loss, parts) = sample_loss(&self.model, &mut g, &prepared, self.stage, self.config.lambda)?;
            grads.accumulate(g.backward(loss)?.params());
            mean.seg += parts.seg;
            mean.planning += parts.planning;
            mean.prediction += parts.prediction;
            mean.total += parts.total;
        }
        let k = indices.len() as f64;
        grads.scale(1.0 / k);
        for v in [&mut mean.seg, &mut mean.planning, &mut mean.prediction, &mut mean.total] {
            *v /= k;
        }
        match self.stage {
            Stage::Perception => grads.retain(|id| self.perception.contains(&id)),
            Stage::Joint => grads.retain(|id| !self.perception.contains(&id)),
            Stage::Full => {}
        }
        if !grads.is_finite() {
            return Err(CoreError::NonFinite(format!("stage {} gradients", self.stage.number())));
        }
        Ok((grads, mean))
    }

    /// One optimizer step on the current stage.
    pub fn train_step(&mut self, data: &[Sample]) -> Result<StepRecord> {
        let (grads, loss) = self.batch_gradients(data)?;
        let lr = self.lr_at(self.step, data.len())?;
        self.config.adam().step(&mut self.store, &grads, lr)?;
        let record = StepRecord {
            stage: self.stage,
            step: self.step,
            epoch: self.epoch_of(self.step, data.len()),
            lr,
            loss,
        };
        self.step += 1;
        Ok(record)
    }

    /// Runs the current stage up to its configured step count.
    pub fn run_stage(&mut self, data: &[Sample], mut on_step: impl FnMut(&StepRecord)) -> Result<Vec<StepRecord>> {
        let target = self.config.stage_steps[self.stage.number() as usize - 1];
        let mut records = Vec::new();
        while self.step < target {
            let r = self.train_step(data)?;
            on_step(&r);
            records.push(r);
        }
        Ok(records)
    }

    /// Runs the given stages in order. With `out_dir`, writes
    /// `stage<k>.ckpt` after each stage and `metrics.csv` with one row per
    /// (stage, epoch).
    pub fn train_stages(&mut self, data: &[Sample], stages: &[Stage], out_dir: Option<&Path>) -> Result<Vec<StepRecord>> {
        if data.is_empty() {
            return Err(CoreError::EmptyDataset);
        }
        let mut all = Vec::new();
        for &stage in stages {
            self.set_stage(stage);
            all.extend(self.run_stage(data, |_| {})?);
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(dir)?;
                self.checkpoint().save(&dir.join(format!("stage{}.ckpt", stage.number())))?;
            }
        }
        if let Some(dir) = out_dir {
            write_metrics_csv(&dir.join("metrics.csv"), &all)?;
        }
        Ok(all)
    }
}

/// Per-epoch means of the step records.
pub fn write_metrics_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "stage,epoch,steps,lr,seg,planning,prediction,total")?;
    let mut i = 0;
    while i < records.len() {
        let (stage, epoch) = (records[i].stage, records[i].epoch);
        let group: Vec<&StepRecord> = records[i..]
            .iter()
            .take_while(|r| r.stage == stage && r.epoch == epoch)
            .collect();
        let k = group.len() as f64;
        let avg = |f: fn(&LossParts) -> f64| group.iter().map(|r| f(&r.loss)).sum::<f64>() / k;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            stage.number(),
            epoch,
            group.len(),
            group[0].lr,
            avg(|l| l.seg),
            avg(|l| l.planning),
            avg(|l| l.prediction),
            avg(|l| l.total)
        )?;
        i += group.len();
    }
    w.flush()?;
    Ok(())
}

/// Held-out errors with the nearest-vehicle selection used at inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalLosses {
    pub samples: usize,
    /// Mean planning L1 per ego waypoint.
    pub planning_per_wp: f64,
    /// Mean prediction L1 per other-vehicle waypoint.
    pub prediction_per_wp: f64,
    /// Mean L1 per waypoint over ego and other vehicles together.
    pub joint_per_wp: f64,
}

pub fn evaluate(model: &Model, store: &ParamStore, data: &[Sample]) -> Result<EvalLosses> {
    if data.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let t = model.config.horizon as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut plan, mut pred, mut pred_traj) = (0.0, 0.0, 0usize);
    for s in data {
        let p = prepare(s, &model.config, AssembleMode::Inference, &mut rng)?;
        let mut g = Graph::new(store);
        let (_, parts) = sample_loss(model, &mut g, &p, Stage::Joint, 1.0)?;
        plan += parts.planning;
        pred += parts.prediction;
        pred_traj += p.others.len();
    }
    let n = data.len() as f64;
    Ok(EvalLosses {
        samples: data.len(),
        planning_per_wp: plan / (n * t),
        prediction_per_wp: if pred_traj > 0 { pred / (pred_traj as f64 * t) } else { 0.0 },
        joint_per_wp: (plan + pred) / ((n + pred_traj as f64) * t),
    })
}
