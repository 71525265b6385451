//! Per-vehicle attention over the patch tokens of a cropped feature.

use jointdrive_numerics::{Conv2dSpec, Graph, ParamId, Tensor, Var};

use super::config::ModelConfig;
use super::layers::{Conv, Encoder, Init, InitKind};
use crate::error::{CoreError, Result};

#[derive(Clone, Debug)]
pub struct LocalTransformer {
    pub patch: Conv,
    pub pos: ParamId,
    pub encoder: Encoder,
    pub rebuild: Conv,
    channels: usize,
    crop: usize,
    grid: usize,
    d_model: usize,
}

/// Attention probabilities of one forward pass: per layer a `[heads, Q, K]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub layers: Vec<Tensor>,
}

impl AttentionRecord {
    /// Extracts the records of a single-sequence forward from the graph.
    pub fn from_graph(g: &Graph<'_>, probs: &[Var]) -> Result<Self> {
        let layers = probs
            .iter()
            .map(|&p| {
                let s = g.shape(p);
                let (h, q, k) = (s[s.len() - 3], s[s.len() - 2], s[s.len() - 1]);
                Ok(g.tensor(p).reshaped(&[h, q, k])?)
            })
            .collect::<Result<_>>()?;
        Ok(AttentionRecord { layers })
    }
}

/// Sums one layer's attention over heads and queries for every key, then
/// scales so the largest cell is 1. Returns the key grid row-major.
pub fn accumulate_attention(record: &AttentionRecord, layer: usize) -> Result<Vec<f64>> {
    let t = record.layers.get(layer).ok_or_else(|| {
        CoreError::Config(format!(
            "attention layer {layer} out of range (record has {})",
            record.layers.len()
        ))
    })?;
    let s = t.shape();
    let (heads, q, k) = (s[0], s[1], s[2]);
    let mut acc = vec![0.0; k];
    for h in 0..heads {
        for i in 0..q {
            let row = &t.data()[(h * q + i) * k..(h * q + i + 1) * k];
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    let max = acc.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        acc.iter_mut().for_each(|a| *a /= max);
    }
    Ok(acc)
}

impl LocalTransformer {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.channels();
        let p = cfg.patch();
        let d = cfg.d_model;
        Ok(LocalTransformer {
            patch: Conv::new(init, "local.patch", c, d, p, Conv2dSpec::new(p, 0), InitKind::FanIn)?,
            pos: init.uniform("local.pos", &[cfg.tokens(), d], 0.1)?,
            encoder: Encoder::new(init, "local", d, cfg.local_layers, cfg.local_heads, cfg.ffn_mult)?,
            rebuild: Conv::new(init, "local.rebuild", d, c, 1, Conv2dSpec::default(), InitKind::Zero)?,
            channels: c,
            crop: cfg.crop.size,
            grid: cfg.patch_grid,
            d_model: d,
        })
    }

    /// `[C, s, s]` crop → `[tokens, d_model]` patch tokens with positions added.
    pub fn patchify(&self, g: &mut Graph<'_>, crop: Var) -> Result<Var> {
        let (c, s, n, d) = (self.channels, self.crop, self.grid, self.d_model);
        let x = g.reshape(crop, &[1, c, s, s])?;
        let y = self.patch.forward(g, x)?;
        let y = g.reshape(y, &[d, n * n])?;
        let y = g.transpose(y, 0, 1)?;
        let pos = g.param(self.pos);
        Ok(g.add(y, pos)?)
    }

    /// Encoder stack on `[tokens, d]`; also returns each layer's probabilities.
    pub fn encode(&self, g: &mut Graph<'_>, tokens: Var) -> Result<(Var, Vec<Var>)> {
        let (t, d) = (self.grid * self.grid, self.d_model);
        let x = g.reshape(tokens, &[1, t, d])?;
        let (y, probs) = self.encoder.forward(g, x, None)?;
        Ok((g.reshape(y, &[t, d])?, probs))
    }

    /// Tokens back to a `[C, s, s]` map (1×1 conv, bilinear upsampling) added
    /// onto the input crop.
    pub fn rebuild(&self, g: &mut Graph<'_>, tokens: Var, crop: Var) -> Result<Var> {
        let (c, s, n, d) = (self.channels, self.crop, self.grid, self.d_model);
        let y = g.transpose(tokens, 0, 1)?;
        let y = g.reshape(y, &[1, d, n, n])?;
        let y = self.rebuild.forward(g, y)?;
        let y = g.resize_bilinear(y, s, s)?;
        let y = g.reshape(y, &[c, s, s])?;
        Ok(g.add(crop, y)?)
    }

    pub fn forward(&self, g: &mut Graph<'_>, crop: Var) -> Result<(Var, Vec<Var>)> {
        let tokens = self.patchify(g, crop)?;
        let (encoded, probs) = self.encode(g, tokens)?;
        Ok((self.rebuild(g, encoded, crop)?, probs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(heads: usize, q: usize, k: usize, f: impl Fn(usize, usize, usize) -> f64) -> AttentionRecord {
        let t = Tensor::from_fn(&[heads, q, k], |i| f(i / (q * k), (i / k) % q, i % k));
        AttentionRecord { layers: vec![t] }
    }

    #[test]
    fn uniform_attention_gives_all_ones() {
        let r = record(2, 36, 36, |_, _, _| 1.0 / 36.0);
        let acc = accumulate_attention(&r, 0).unwrap();
        assert_eq!(acc.len(), 36);
        assert!(acc.iter().all(|&a| (a - 1.0).abs() < 1e-12));
    }

    #[test]
    fn single_key_attention_lights_one_cell() {
        let r = record(3, 36, 36, |_, _, k| (k == 14) as u8 as f64);
        let acc = accumulate_attention(&r, 0).unwrap();
        for (k, a) in acc.iter().enumerate() {
            assert_eq!(*a, (k == 14) as u8 as f64);
        }
    }

    #[test]
    fn matches_a_brute_force_re_summation() {
        let f = |h: usize, q: usize, k: usize| ((h * 7 + q * 3 + k * 11) % 13) as f64 / 13.0;
        let r = record(2, 5, 9, f);
        let acc = accumulate_attention(&r, 0).unwrap();
        let mut raw = vec![0.0; 9];
        for (k, slot) in raw.iter_mut().enumerate() {
            for h in 0..2 {
                for q in 0..5 {
                    *slot += f(h, q, k);
                }
            }
        }
        let max = raw.iter().cloned().fold(f64::MIN, f64::max);
        for (a, b) in acc.iter().zip(&raw) {
            assert!((a - b / max).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_layer_is_an_error() {
        let r = record(1, 2, 2, |_, _, _| 0.5);
        assert!(matches!(accumulate_attention(&r, 1), Err(CoreError::Config(_))));
    }
}
