//! Feature embedding and recurrent waypoint decoders.

use jointdrive_numerics::{Conv2dSpec, Graph, Tensor, Var};
use jointdrive_sim::{HighLevelBehavior, Vec2};

use super::config::ModelConfig;
use super::layers::{Conv, Gru, Init, InitKind, Linear};
use crate::error::{CoreError, Result};

/// Two stride-2 convolutions, flatten, linear. Shared by every vehicle.
#[derive(Clone, Debug)]
pub struct Embedder {
    pub conv1: Conv,
    pub conv2: Conv,
    pub fc: Linear,
    flat: usize,
}

impl Embedder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let [c1, c2] = cfg.embed_channels;
        let side = cfg.embed_side();
        let spec = Conv2dSpec::new(2, 1);
        Ok(Embedder {
            conv1: Conv::new(init, "embed.conv1", cfg.channels(), c1, 3, spec, InitKind::FanIn)?,
            conv2: Conv::new(init, "embed.conv2", c1, c2, 3, spec, InitKind::FanIn)?,
            fc: Linear::new(init, "embed.fc", c2 * side * side, cfg.embed_dim, InitKind::FanIn)?,
            flat: c2 * side * side,
        })
    }

    /// `[N, C, s, s]` → `[N, embed_dim]`.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let n = g.shape(x)[0];
        let y = self.conv1.forward(g, x)?;
        let y = g.relu(y);
        let y = self.conv2.forward(g, y)?;
        let y = g.relu(y);
        let y = g.reshape(y, &[n, self.flat])?;
        self.fc.forward(g, y)
    }
}

/// Initial-state projection, GRU and per-step delta head.
#[derive(Clone, Debug)]
pub struct GruDecoder {
    pub init: Linear,
    pub gru: Gru,
    pub head: Linear,
    delta_scale: f64,
}

impl GruDecoder {
    fn new(init: &mut Init, name: &str, cfg: &ModelConfig) -> Result<Self> {
        Ok(GruDecoder {
            init: Linear::new(init, &format!("{name}.init"), cfg.embed_dim, cfg.gru_hidden, InitKind::FanIn)?,
            gru: Gru::new(init, &format!("{name}.gru"), 2, cfg.gru_hidden)?,
            head: Linear::new(init, &format!("{name}.head"), cfg.gru_hidden, 2, InitKind::FanIn)?,
            delta_scale: cfg.delta_scale,
        })
    }

    /// `v: [1, embed_dim]` → `[T, 2]` deltas in metres. Each step is fed the
    /// previous (normalised) delta, starting from zeros.
    pub fn forward(&self, g: &mut Graph<'_>, v: Var, steps: usize) -> Result<Var> {
        let mut h = self.init.forward(g, v)?;
        let mut x = g.constant(Tensor::zeros(&[1, 2]));
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            h = self.gru.step(g, x, h)?;
            x = self.head.forward(g, h)?;
            out.push(x);
        }
        let out = g.concat(&out, 0)?;
        Ok(g.scale(out, self.delta_scale))
    }
}

/// One decoder branch per high-level behavior.
#[derive(Clone, Debug)]
pub struct EgoDecoder {
    pub branches: Vec<GruDecoder>,
}

impl EgoDecoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let branches = HighLevelBehavior::ALL
            .iter()
            .map(|b| GruDecoder::new(init, &format!("ego.{}", b.name()), cfg))
            .collect::<Result<_>>()?;
        Ok(EgoDecoder { branches })
    }

    pub fn forward(&self, g: &mut Graph<'_>, v: Var, behavior: usize, steps: usize) -> Result<Var> {
        self.branches
            .get(behavior)
            .ok_or(CoreError::InvalidBehavior(behavior))?
            .forward(g, v, steps)
    }
}

/// GNSS-conditioned residual refinement of the coarse ego deltas.
#[derive(Clone, Debug)]
pub struct Refiner {
    pub init: Linear,
    pub gru: Gru,
    pub mlp1: Linear,
    pub mlp2: Linear,
    gnss_scale: f64,
    delta_scale: f64,
}

impl Refiner {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        Ok(Refiner {
            init: Linear::new(init, "refine.init", 2 + 2 * cfg.horizon, cfg.gru_hidden, InitKind::FanIn)?,
            gru: Gru::new(init, "refine.gru", 2, cfg.gru_hidden)?,
            mlp1: Linear::new(init, "refine.mlp1", cfg.gru_hidden, cfg.refine_hidden, InitKind::FanIn)?,
            mlp2: Linear::new(init, "refine.mlp2", cfg.refine_hidden, 2, InitKind::Zero)?,
            gnss_scale: cfg.gnss_scale,
            delta_scale: cfg.delta_scale,
        })
    }

    /// `deltas: [T, 2]`, `target` in the ego frame. Returns refined `[T, 2]`.
    pub fn forward(&self, g: &mut Graph<'_>, deltas: Var, target: Vec2) -> Result<Var> {
        if !target.x.is_finite() || !target.y.is_finite() {
            return Err(CoreError::NonFinite("gnss target".into()));
        }
        let t = g.shape(deltas)[0];
        let goal = g.constant(Tensor::new(
            vec![1, 2],
            vec![target.x / self.gnss_scale, target.y / self.gnss_scale],
        )?);
        let path = accumulate(g, deltas, Vec2::new(0.0, 0.0))?;
        let path = g.reshape(path, &[1, 2 * t])?;
        let path = g.scale(path, 1.0 / self.gnss_scale);
        let unit = g.scale(deltas, 1.0 / self.delta_scale);
        let cond = g.concat(&[goal, path], 1)?;
        let mut h = self.init.forward(g, cond)?;
        let mut corrections = Vec::with_capacity(t);
        for step in 0..t {
            let d = g.narrow(unit, 0, step, 1)?;
            h = self.gru.step(g, d, h)?;
            let z = self.mlp1.forward(g, h)?;
            let z = g.relu(z);
            corrections.push(self.mlp2.forward(g, z)?);
        }
        let corr = g.concat(&corrections, 0)?;
        let corr = g.scale(corr, self.delta_scale);
        Ok(g.add(deltas, corr)?)
    }
}

/// Turns `[T, 2]` deltas into waypoints `p_t = origin + Σ_{k≤t} δ_k`.
pub fn accumulate(g: &mut Graph<'_>, deltas: Var, origin: Vec2) -> Result<Var> {
    let t = g.shape(deltas)[0];
    let lower = g.constant(Tensor::from_fn(&[t, t], |i| if i % t <= i / t { 1.0 } else { 0.0 }));
    let path = g.matmul(lower, deltas)?;
    if origin.x == 0.0 && origin.y == 0.0 {
        return Ok(path);
    }
    let o = g.constant(Tensor::new(vec![2], vec![origin.x, origin.y])?);
    Ok(g.add(path, o)?)
}

/// The single decoder used for every other vehicle.
#[derive(Clone, Debug)]
pub struct OtherDecoder {
    pub decoder: GruDecoder,
}

impl OtherDecoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        Ok(OtherDecoder {
            decoder: GruDecoder::new(init, "other", cfg)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, v: Var, steps: usize) -> Result<Var> {
        self.decoder.forward(g, v, steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use jointdrive_numerics::ParamStore;

    #[test]
    fn accumulate_is_a_running_sum_from_the_origin() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let d = g.input(Tensor::new(vec![3, 2], vec![1.0, 0.0, 1.0, 0.5, 2.0, -1.0]).unwrap());
        let p = accumulate(&mut g, d, Vec2::new(0.0, 0.0)).unwrap();
        assert_eq!(g.value(p), &[1.0, 0.0, 2.0, 0.5, 4.0, -0.5]);
        let q = accumulate(&mut g, d, Vec2::new(10.0, -2.0)).unwrap();
        assert_eq!(g.value(q), &[11.0, -2.0, 12.0, -1.5, 14.0, -2.5]);
    }

    #[test]
    fn refiner_rejects_a_non_finite_target() {
        let cfg = ModelConfig::tiny();
        let mut store = ParamStore::new();
        let refine = Refiner::new(&mut Init::new(&mut store, 0), &cfg).unwrap();
        let mut g = Graph::new(&store);
        let d = g.input(Tensor::zeros(&[cfg.horizon, 2]));
        assert!(refine.forward(&mut g, d, Vec2::new(f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn zero_initialised_refiner_passes_deltas_through() {
        let cfg = ModelConfig::tiny();
        let mut store = ParamStore::new();
        let refine = Refiner::new(&mut Init::new(&mut store, 0), &cfg).unwrap();
        let mut g = Graph::new(&store);
        let deltas = Tensor::from_fn(&[cfg.horizon, 2], |i| i as f64 * 0.3 - 1.0);
        let d = g.input(deltas.clone());
        let out = refine.forward(&mut g, d, Vec2::new(20.0, 3.0)).unwrap();
        assert_eq!(g.value(out), deltas.data());
    }

    #[test]
    fn unknown_behavior_is_rejected() {
        let cfg = ModelConfig::tiny();
        let mut store = ParamStore::new();
        let ego = EgoDecoder::new(&mut Init::new(&mut store, 0), &cfg).unwrap();
        let mut g = Graph::new(&store);
        let v = g.input(Tensor::zeros(&[1, cfg.embed_dim]));
        assert!(matches!(ego.forward(&mut g, v, 9, cfg.horizon), Err(CoreError::InvalidBehavior(9))));
    }
}
