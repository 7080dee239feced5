use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// Output activation applied to the raw density channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DensityActivation {
    /// `min(exp(x), DENSITY_CLAMP)`.
    ExpClamped,
    Softplus,
}

pub const DENSITY_CLAMP: f32 = 1.0e4;

impl DensityActivation {
    pub fn as_str(&self) -> &'static str {
        match self {
            DensityActivation::ExpClamped => "exp",
            DensityActivation::Softplus => "softplus",
        }
    }
}

impl fmt::Display for DensityActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DensityActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp" => Ok(DensityActivation::ExpClamped),
            "softplus" => Ok(DensityActivation::Softplus),
            other => Err(Error::InvalidArgument(format!(
                "unknown density activation `{other}`"
            ))),
        }
    }
}

/// Architecture of a hash-grid field: `hash_levels` tables of `2^log2_table_size`
/// rows with `features_per_level` features each, feeding an MLP of
/// `hidden_layers` ReLU layers of `hidden_width` units and a 4-wide output
/// (density, rgb).
#[derive(Clone, Debug, PartialEq)]
pub struct FieldArch {
    pub hash_levels: u32,
    pub features_per_level: u32,
    pub log2_table_size: u32,
    pub base_resolution: u32,
    pub per_level_scale: f32,
    pub hidden_width: u32,
    pub hidden_layers: u32,
    pub density_activation: DensityActivation,
}

pub const OUTPUT_DIM: usize = 4;
const MAX_LOG2_TABLE: u32 = 24;

impl Default for FieldArch {
    fn default() -> Self {
        Self::desk_default()
    }
}

impl FieldArch {
    /// Architecture used when no category prior is available.
    pub fn desk_default() -> Self {
        Self {
            hash_levels: 8,
            features_per_level: 2,
            log2_table_size: 14,
            base_resolution: 4,
            per_level_scale: 1.5,
            hidden_width: 32,
            hidden_layers: 2,
            density_activation: DensityActivation::ExpClamped,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("hash_levels", self.hash_levels),
            ("features_per_level", self.features_per_level),
            ("base_resolution", self.base_resolution),
            ("hidden_width", self.hidden_width),
            ("hidden_layers", self.hidden_layers),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        if self.log2_table_size > MAX_LOG2_TABLE {
            return Err(Error::InvalidArgument(format!(
                "log2_table_size must be <= {MAX_LOG2_TABLE}"
            )));
        }
        if !(self.per_level_scale >= 1.0 && self.per_level_scale.is_finite()) {
            return Err(Error::InvalidArgument(
                "per_level_scale must be a finite value >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn table_size(&self) -> usize {
        1usize << self.log2_table_size
    }

    pub fn encoding_dim(&self) -> usize {
        (self.hash_levels * self.features_per_level) as usize
    }

    /// Grid cells per axis at `level`.
    pub fn level_resolution(&self, level: u32) -> u32 {
        let r = self.base_resolution as f64 * (self.per_level_scale as f64).powi(level as i32);
        (r.floor() as u32).max(1)
    }

    pub fn hash_param_count(&self) -> usize {
        self.encoding_dim() * self.table_size()
    }

    /// `(fan_in, fan_out)` of every dense layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let w = self.hidden_width as usize;
        let mut dims = Vec::with_capacity(self.hidden_layers as usize + 1);
        let mut fan_in = self.encoding_dim();
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims.push((fan_in, OUTPUT_DIM));
        dims
    }

    pub fn mlp_param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn param_count(&self) -> usize {
        self.hash_param_count() + self.mlp_param_count()
    }

    /// Rough multiply-add count of one forward plus backward pass for one sample.
    pub fn flops_per_sample(&self) -> f64 {
        let enc = (self.hash_levels * 8 * (self.features_per_level + 4)) as f64;
        let mlp: usize = self.layer_dims().iter().map(|(i, o)| i * o).sum();
        3.0 * (enc + mlp as f64)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("arch.hash_levels".into(), self.hash_levels.to_string()),
            (
                "arch.features_per_level".into(),
                self.features_per_level.to_string(),
            ),
            (
                "arch.log2_table_size".into(),
                self.log2_table_size.to_string(),
            ),
            (
                "arch.base_resolution".into(),
                self.base_resolution.to_string(),
            ),
            (
                "arch.per_level_scale".into(),
                self.per_level_scale.to_string(),
            ),
            ("arch.hidden_width".into(), self.hidden_width.to_string()),
            ("arch.hidden_layers".into(), self.hidden_layers.to_string()),
            (
                "arch.density_activation".into(),
                self.density_activation.to_string(),
            ),
        ]
    }

    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = map
                .get(key)
                .ok_or_else(|| Error::config(key, "missing required key"))?;
            raw.parse()
                .map_err(|_| Error::config(key, format!("cannot parse `{raw}`")))
        }
        let arch = Self {
            hash_levels: get(map, "arch.hash_levels")?,
            features_per_level: get(map, "arch.features_per_level")?,
            log2_table_size: get(map, "arch.log2_table_size")?,
            base_resolution: get(map, "arch.base_resolution")?,
            per_level_scale: get(map, "arch.per_level_scale")?,
            hidden_width: get(map, "arch.hidden_width")?,
            hidden_layers: get(map, "arch.hidden_layers")?,
            density_activation: map
                .get("arch.density_activation")
                .ok_or_else(|| Error::config("arch.density_activation", "missing required key"))?
                .parse()?,
        };
        arch.validate()?;
        Ok(arch)
    }
}
