//! The joint planning-and-prediction network.
//!
//! Data flow for one scene: the map-view raster passes through a 1×1
//! perception stem; every selected vehicle gets a rotated crop of the result;
//! the local transformer (shared weights) refines each crop; the global
//! transformer mixes one pooled token per vehicle and adds the result back;
//! a shared embedder feeds the behavior-branched ego decoder with GNSS
//! refinement and the single other-vehicle decoder.

mod config;
mod decoder;
mod global;
mod layers;
mod local;

pub use config::{GlobalRebuild, ModelConfig, Variant};
pub use decoder::{accumulate, Embedder, EgoDecoder, GruDecoder, OtherDecoder, Refiner};
pub use global::{assemble, AssembleMode, GlobalTransformer, Rebuild, SceneSequence};
pub use layers::{Attention, Conv, Encoder, EncoderLayer, Gru, Init, InitKind, Linear, Norm};
pub use local::{accumulate_attention, AttentionRecord, LocalTransformer};

use jointdrive_numerics::{Conv2dSpec, Graph, ParamId, ParamStore, Tensor, Var};
use jointdrive_sim::{Pose, Vec2};

use crate::error::{CoreError, Result};
use crate::raster::{crop_vehicle_frame, SEG_CLASSES};

/// Name prefix of the perception-surrogate parameters (stem and seg head).
pub const PERCEPTION_PREFIX: &str = "perception.";

/// Learnable stand-in for the sensor backbone: an identity-initialised 1×1
/// stem producing the feature the crops read from, plus the segmentation
/// head (two 3×3 convolutions) carrying the segmentation loss.
#[derive(Clone, Debug)]
pub struct Perception {
    pub stem: Conv,
    pub seg1: Conv,
    pub seg2: Conv,
}

impl Perception {
    fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.channels();
        let same = Conv2dSpec::new(1, 1);
        Ok(Perception {
            stem: Conv::identity(init, "perception.stem", c)?,
            seg1: Conv::new(init, "perception.seg1", c, cfg.seg_hidden, 3, same, InitKind::FanIn)?,
            seg2: Conv::new(init, "perception.seg2", cfg.seg_hidden, SEG_CLASSES, 3, same, InitKind::FanIn)?,
        })
    }

    /// `[C, H, W]` → `[C, H, W]`.
    pub fn feature(&self, g: &mut Graph<'_>, raster: Var) -> Result<Var> {
        let shape = g.shape(raster).to_vec();
        let x = g.reshape(raster, &[1, shape[0], shape[1], shape[2]])?;
        let y = self.stem.forward(g, x)?;
        Ok(g.reshape(y, &shape)?)
    }

    /// `[C, H, W]` → `[3, H, W]` segmentation logits.
    pub fn seg_logits(&self, g: &mut Graph<'_>, feature: Var) -> Result<Var> {
        let shape = g.shape(feature).to_vec();
        let x = g.reshape(feature, &[1, shape[0], shape[1], shape[2]])?;
        let y = self.seg1.forward(g, x)?;
        let y = g.relu(y);
        let y = self.seg2.forward(g, y)?;
        Ok(g.reshape(y, &[SEG_CLASSES, shape[1], shape[2]])?)
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub perception: Perception,
    pub local: Option<LocalTransformer>,
    pub global: Option<GlobalTransformer>,
    pub embed: Embedder,
    pub ego: EgoDecoder,
    pub refine: Refiner,
    pub other: OtherDecoder,
}

/// Everything a scene forward needs besides parameters.
#[derive(Clone, Debug)]
pub struct SceneInput<'a> {
    /// Map-view raster `[C, H, W]` in the ego frame.
    pub raster: &'a Tensor,
    /// Poses of the selected other vehicles relative to the ego, in slot order.
    pub others: &'a [Pose],
    pub behavior: usize,
    /// GNSS target in the ego frame.
    pub gnss: Vec2,
}

/// Which parameters each per-vehicle module touched, in vehicle order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamUsage {
    pub local: Vec<Vec<ParamId>>,
    pub other_decoder: Vec<Vec<ParamId>>,
}

#[derive(Clone, Debug)]
pub struct PlanOutput {
    /// Refined ego waypoints `[T, 2]`.
    pub plan: Var,
    /// Ego deltas before refinement `[T, 2]`.
    pub coarse: Var,
    /// Waypoints `[T, 2]` of each other vehicle in its own frame.
    pub predictions: Vec<Var>,
    /// Per vehicle, per layer attention probabilities `[1, h, 36, 36]`.
    pub local_attention: Vec<Vec<Var>>,
    /// Per layer `[1, h, S, S]`.
    pub global_attention: Vec<Var>,
    pub usage: ParamUsage,
}

#[derive(Clone, Debug)]
pub struct SceneOutput {
    pub raster: Var,
    pub feature: Var,
    pub seg_logits: Option<Var>,
    pub crops: Vec<Var>,
    pub plan: PlanOutput,
}

impl Model {
    /// Registers every parameter in a fresh store. Initial values depend on
    /// `(seed, parameter name)` only, so variants share their common weights.
    pub fn build(config: ModelConfig, seed: u64) -> Result<(ParamStore, Model)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let model = {
            let mut init = Init::new(&mut store, seed);
            let cfg = &config;
            Model {
                perception: Perception::new(&mut init, cfg)?,
                local: match cfg.variant.has_local() {
                    true => Some(LocalTransformer::new(&mut init, cfg)?),
                    false => None,
                },
                global: match cfg.variant.has_global() {
                    true => Some(GlobalTransformer::new(&mut init, cfg)?),
                    false => None,
                },
                embed: Embedder::new(&mut init, cfg)?,
                ego: EgoDecoder::new(&mut init, cfg)?,
                refine: Refiner::new(&mut init, cfg)?,
                other: OtherDecoder::new(&mut init, cfg)?,
                config: config.clone(),
            }
        };
        Ok((store, model))
    }

    pub fn perception_params(store: &ParamStore) -> Vec<ParamId> {
        store
            .iter()
            .filter(|(_, p)| p.name.starts_with(PERCEPTION_PREFIX))
            .map(|(id, _)| id)
            .collect()
    }

    /// Full forward from the raster. `with_seg` adds the segmentation logits.
    pub fn forward(&self, g: &mut Graph<'_>, input: &SceneInput<'_>, with_seg: bool) -> Result<SceneOutput> {
        let cfg = &self.config;
        if input.others.len() + 1 > cfg.max_vehicles {
            return Err(CoreError::LengthMismatch {
                what: "vehicles in scene",
                expected: cfg.max_vehicles,
                got: input.others.len() + 1,
            });
        }
        let raster = g.input(input.raster.clone());
        let feature = self.perception.feature(g, raster)?;
        let seg_logits = match with_seg {
            true => Some(self.perception.seg_logits(g, feature)?),
            false => None,
        };
        let identity = Pose::new(0.0, 0.0, 0.0);
        let mut crops = Vec::with_capacity(input.others.len() + 1);
        for pose in std::iter::once(&identity).chain(input.others) {
            crops.push(crop_vehicle_frame(g, feature, &cfg.grid, &cfg.crop, pose)?);
        }
        let plan = self.forward_from_crops(g, &crops, input.behavior, input.gnss)?;
        Ok(SceneOutput {
            raster,
            feature,
            seg_logits,
            crops,
            plan,
        })
    }

    /// Forward from per-vehicle crops `[C, s, s]`; crop 0 is the ego.
    pub fn forward_from_crops(&self, g: &mut Graph<'_>, crops: &[Var], behavior: usize, gnss: Vec2) -> Result<PlanOutput> {
        let cfg = &self.config;
        let n = crops.len();
        if n == 0 || n > cfg.max_vehicles {
            return Err(CoreError::LengthMismatch {
                what: "vehicle crops",
                expected: cfg.max_vehicles,
                got: n,
            });
        }
        let mut usage = ParamUsage::default();
        let mut local_attention = Vec::new();
        let fstars: Vec<Var> = match &self.local {
            Some(local) => {
                let mut out = Vec::with_capacity(n);
                for &crop in crops {
                    let mark = g.param_mark();
                    let (y, probs) = local.forward(g, crop)?;
                    usage.local.push(g.params_used_since(mark));
                    local_attention.push(probs);
                    out.push(y);
                }
                out
            }
            None => crops.to_vec(),
        };
        let mut global_attention = Vec::new();
        let fused = match &self.global {
            Some(global) => {
                let mut tokens = Vec::with_capacity(cfg.max_vehicles);
                for &f in &fstars {
                    tokens.push(Some(global.pool_flatten(g, f)?));
                }
                tokens.resize(cfg.max_vehicles, None);
                let valid: Vec<bool> = tokens.iter().map(Option::is_some).collect();
                let seq = global.sequence(g, &tokens)?;
                let (encoded, probs) = global.encode(g, seq, &valid)?;
                global_attention = probs;
                global.rebuild_fused(g, encoded, &fstars, &valid)?
            }
            None => fstars,
        };
        let (c, s) = (cfg.channels(), cfg.crop.size);
        let batch = fused
            .iter()
            .map(|&f| g.reshape(f, &[1, c, s, s]))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let batch = g.concat(&batch, 0)?;
        let embedded = self.embed.forward(g, batch)?;

        let steps = cfg.horizon;
        let v0 = g.narrow(embedded, 0, 0, 1)?;
        let coarse = self.ego.forward(g, v0, behavior, steps)?;
        let refined = self.refine.forward(g, coarse, gnss)?;
        let plan = accumulate(g, refined, Vec2::new(0.0, 0.0))?;

        let mut predictions = Vec::with_capacity(n - 1);
        for i in 1..n {
            let mark = g.param_mark();
            let v = g.narrow(embedded, 0, i, 1)?;
            let d = self.other.forward(g, v, steps)?;
            predictions.push(accumulate(g, d, Vec2::new(0.0, 0.0))?);
            usage.other_decoder.push(g.params_used_since(mark));
        }
        Ok(PlanOutput {
            plan,
            coarse,
            predictions,
            local_attention,
            global_attention,
            usage,
        })
    }
}
