use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::raster::{CropSpec, GridSpec, USED_CHANNELS};

/// Which context modules are present.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Local and global transformers.
    #[default]
    Full,
    /// Without the local transformer: crop features pass through unchanged.
    I,
    /// Without the global transformer: no cross-vehicle context.
    II,
    /// Without either transformer.
    III,
}

impl Variant {
    pub fn has_local(self) -> bool {
        matches!(self, Variant::Full | Variant::II)
    }

    pub fn has_global(self) -> bool {
        matches!(self, Variant::Full | Variant::I)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::I => "i",
            Variant::II => "ii",
            Variant::III => "iii",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Variant::Full),
            "i" | "1" => Ok(Variant::I),
            "ii" | "2" => Ok(Variant::II),
            "iii" | "3" => Ok(Variant::III),
            other => Err(CoreError::Config(format!("unknown variant '{other}'"))),
        }
    }
}

/// How the global transformer's per-vehicle output is fused back into the
/// locally encoded crop features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalRebuild {
    /// Linear projection to one offset per channel, added at every position.
    #[default]
    Broadcast,
    /// Tile the token over the crop, concatenate with the crop features, 1×1 conv back to C.
    TileConv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub grid: GridSpec,
    pub crop: CropSpec,
    /// Patch grid side; the crop splits into `patch_grid²` tokens.
    pub patch_grid: usize,
    pub d_model: usize,
    pub local_layers: usize,
    pub local_heads: usize,
    pub d_global: usize,
    pub global_layers: usize,
    pub global_heads: usize,
    /// Global sequence length: the ego plus at most `max_vehicles − 1` others.
    pub max_vehicles: usize,
    pub ffn_mult: usize,
    pub embed_channels: [usize; 2],
    pub embed_dim: usize,
    pub gru_hidden: usize,
    pub refine_hidden: usize,
    pub seg_hidden: usize,
    /// Waypoints per trajectory.
    pub horizon: usize,
    /// Normalisation of the GNSS target and of accumulated paths, metres.
    pub gnss_scale: f64,
    /// Metres per unit of decoder output; deltas fed back into the GRUs are
    /// divided by it, so recurrent inputs stay near unit scale.
    pub delta_scale: f64,
    pub variant: Variant,
    pub global_rebuild: GlobalRebuild,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            grid: GridSpec::default(),
            crop: CropSpec::default(),
            patch_grid: 6,
            d_model: 64,
            local_layers: 6,
            local_heads: 8,
            d_global: 256,
            global_layers: 6,
            global_heads: 8,
            max_vehicles: 10,
            ffn_mult: 4,
            embed_channels: [32, 64],
            embed_dim: 512,
            gru_hidden: 128,
            refine_hidden: 64,
            seg_hidden: 32,
            horizon: 10,
            gnss_scale: 64.0,
            delta_scale: 4.0,
            variant: Variant::Full,
            global_rebuild: GlobalRebuild::Broadcast,
        }
    }
}

impl ModelConfig {
    /// Small widths and two-layer stacks for fast tests and smoke training.
    pub fn tiny() -> Self {
        ModelConfig {
            d_model: 16,
            local_layers: 2,
            local_heads: 2,
            d_global: 32,
            global_layers: 2,
            global_heads: 2,
            ffn_mult: 2,
            embed_channels: [8, 16],
            embed_dim: 64,
            gru_hidden: 32,
            refine_hidden: 16,
            seg_hidden: 8,
            ..ModelConfig::default()
        }
    }

    pub fn channels(&self) -> usize {
        self.grid.channels
    }

    pub fn patch(&self) -> usize {
        self.crop.size / self.patch_grid
    }

    pub fn tokens(&self) -> usize {
        self.patch_grid * self.patch_grid
    }

    /// Spatial side after the two stride-2 embedding convolutions.
    pub fn embed_side(&self) -> usize {
        let down = |n: usize| (n - 1) / 2 + 1;
        down(down(self.crop.size))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.patch_grid == 0 || self.crop.size % self.patch_grid != 0 {
            return bad(format!(
                "crop size {} is not divisible by the {}×{} patch grid",
                self.crop.size, self.patch_grid, self.patch_grid
            ));
        }
        if self.grid.channels < USED_CHANNELS {
            return bad(format!("need at least {USED_CHANNELS} feature channels"));
        }
        if self.local_heads == 0 || self.d_model % self.local_heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.local_heads));
        }
        if self.global_heads == 0 || self.d_global % self.global_heads != 0 {
            return bad(format!("d_global {} not divisible by {} heads", self.d_global, self.global_heads));
        }
        if self.max_vehicles == 0 {
            return bad("max_vehicles must be at least 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.crop.size < 3 || !(self.gnss_scale > 0.0) || !(self.delta_scale > 0.0) {
            return bad("crop too small, or gnss_scale / delta_scale not positive".into());
        }
        Ok(())
    }
}
