//! Scene-level attention over one pooled token per vehicle.

use jointdrive_numerics::{Conv2dSpec, Graph, ParamId, Tensor, Var, MASK_FILL};
use rand::seq::index::sample;
use rand::Rng;

use super::config::{GlobalRebuild, ModelConfig};
use super::layers::{Conv, Encoder, Init, InitKind, Linear};
use crate::error::{CoreError, Result};

#[derive(Clone, Debug)]
pub enum Rebuild {
    Broadcast(Linear),
    TileConv(Conv),
}

#[derive(Clone, Debug)]
pub struct GlobalTransformer {
    pub proj: Linear,
    pub ego_flag: ParamId,
    pub encoder: Encoder,
    pub rebuild: Rebuild,
    channels: usize,
    crop: usize,
    pool: usize,
    d_global: usize,
}

/// Fixed-length vehicle sequence: slot 0 is the ego, then selected others in
/// ascending distance, then padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneSequence {
    pub slots: Vec<Option<u32>>,
}

impl SceneSequence {
    pub fn valid_mask(&self) -> Vec<bool> {
        self.slots.iter().map(|s| s.is_some()).collect()
    }

    /// Ids of the selected other vehicles in slot order.
    pub fn others(&self) -> Vec<u32> {
        self.slots.iter().skip(1).flatten().copied().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssembleMode {
    /// The nearest vehicles, ties broken by lower id.
    Inference,
    /// A uniformly drawn count, then a uniform subset of that size.
    Training,
}

/// Picks which other vehicles join the ego in a sequence of `len` slots.
/// `others` holds `(id, distance to ego)`.
pub fn assemble<R: Rng + ?Sized>(
    ego: u32,
    others: &[(u32, f64)],
    len: usize,
    mode: AssembleMode,
    rng: &mut R,
) -> SceneSequence {
    let cap = len.saturating_sub(1).min(others.len());
    let mut sorted: Vec<(u32, f64)> = others.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let chosen: Vec<(u32, f64)> = match mode {
        AssembleMode::Inference => sorted[..cap].to_vec(),
        AssembleMode::Training => {
            let k = rng.gen_range(0..=cap);
            let mut idx = sample(rng, sorted.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| sorted[i]).collect()
        }
    };
    let mut slots = vec![None; len];
    slots[0] = Some(ego);
    for (slot, (id, _)) in slots.iter_mut().skip(1).zip(chosen) {
        *slot = Some(id);
    }
    SceneSequence { slots }
}

impl GlobalTransformer {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.channels();
        let dg = cfg.d_global;
        let rebuild = match cfg.global_rebuild {
            GlobalRebuild::Broadcast => Rebuild::Broadcast(Linear::new(init, "global.rebuild", dg, c, InitKind::Zero)?),
            GlobalRebuild::TileConv => Rebuild::TileConv(Conv::new(
                init,
                "global.rebuild",
                c + dg,
                c,
                1,
                Conv2dSpec::default(),
                InitKind::Zero,
            )?),
        };
        Ok(GlobalTransformer {
            proj: Linear::new(init, "global.proj", cfg.tokens() * c, dg, InitKind::FanIn)?,
            ego_flag: init.uniform("global.ego_flag", &[dg], 0.1)?,
            encoder: Encoder::new(init, "global", dg, cfg.global_layers, cfg.global_heads, cfg.ffn_mult)?,
            rebuild,
            channels: c,
            crop: cfg.crop.size,
            pool: cfg.patch(),
            d_global: dg,
        })
    }

    /// `[C, s, s]` → average pool → flatten → `[1, d_global]` token.
    pub fn pool_flatten(&self, g: &mut Graph<'_>, fstar: Var) -> Result<Var> {
        let pooled = g.avg_pool2d(fstar, self.pool)?;
        let n = g.shape(pooled).iter().product::<usize>();
        let flat = g.reshape(pooled, &[1, n])?;
        self.proj.forward(g, flat)
    }

    /// Stacks per-slot tokens into `[S, d_global]`; `None` slots become zero rows.
    pub fn sequence(&self, g: &mut Graph<'_>, tokens: &[Option<Var>]) -> Result<Var> {
        let rows: Vec<Var> = tokens
            .iter()
            .map(|t| match t {
                Some(v) => *v,
                None => g.constant(Tensor::zeros(&[1, self.d_global])),
            })
            .collect();
        Ok(g.concat(&rows, 0)?)
    }

    /// Encoder over `seq: [S, d_global]` with a key-padding mask; the ego flag
    /// embedding is added to slot 0 only and no positional encoding is used.
    pub fn encode(&self, g: &mut Graph<'_>, seq: Var, valid: &[bool]) -> Result<(Var, Vec<Var>)> {
        let s = g.shape(seq)[0];
        let dg = self.d_global;
        if valid.len() != s {
            return Err(CoreError::LengthMismatch {
                what: "sequence mask",
                expected: s,
                got: valid.len(),
            });
        }
        let flag = g.param(self.ego_flag);
        let flag = g.reshape(flag, &[1, dg])?;
        let x = if s > 1 {
            let zeros = g.constant(Tensor::zeros(&[s - 1, dg]));
            let offset = g.concat(&[flag, zeros], 0)?;
            g.add(seq, offset)?
        } else {
            g.add(seq, flag)?
        };
        let mask: Vec<f64> = valid.iter().map(|&v| if v { 0.0 } else { MASK_FILL }).collect();
        let x = g.reshape(x, &[1, s, dg])?;
        let (y, probs) = self.encoder.forward(g, x, Some(&mask))?;
        Ok((g.reshape(y, &[s, dg])?, probs))
    }

    /// Adds each valid slot's encoded token back onto that vehicle's feature.
    /// `fstars` lists the valid slots' features in slot order.
    pub fn rebuild_fused(&self, g: &mut Graph<'_>, encoded: Var, fstars: &[Var], valid: &[bool]) -> Result<Vec<Var>> {
        let n_valid = valid.iter().filter(|&&v| v).count();
        if n_valid != fstars.len() {
            return Err(CoreError::LengthMismatch {
                what: "fused features",
                expected: n_valid,
                got: fstars.len(),
            });
        }
        let (c, s, dg) = (self.channels, self.crop, self.d_global);
        let mut out = Vec::with_capacity(fstars.len());
        let slots = valid.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i);
        for (slot, &fstar) in slots.zip(fstars) {
            let row = g.narrow(encoded, 0, slot, 1)?;
            let fused = match &self.rebuild {
                Rebuild::Broadcast(lin) => {
                    let offset = lin.forward(g, row)?;
                    let offset = g.reshape(offset, &[c])?;
                    g.add_trailing(fstar, offset)?
                }
                Rebuild::TileConv(conv) => {
                    let row = g.reshape(row, &[dg])?;
                    let base = g.constant(Tensor::zeros(&[dg, s, s]));
                    let tiled = g.add_trailing(base, row)?;
                    let cat = g.concat(&[fstar, tiled], 0)?;
                    let cat = g.reshape(cat, &[1, c + dg, s, s])?;
                    let y = conv.forward(g, cat)?;
                    let y = g.reshape(y, &[c, s, s])?;
                    g.add(fstar, y)?
                }
            };
            out.push(fused);
        }
        Ok(out)
    }
}
