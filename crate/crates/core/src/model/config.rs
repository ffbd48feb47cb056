//! Declarative layer stacks and the slim/wide presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SLIM_PRESET: &str = include_str!("../../../../presets/swishnet-slim.toml");
pub const WIDE_PRESET: &str = include_str!("../../../../presets/swishnet-wide.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Causal convolution producing `2W` maps, gated down to `W`.
    GatedConvBlock,
    /// Depthwise separable gated convolution run in parallel with the
    /// preceding conv layer on the same input; outputs are concatenated.
    GatedSeparableBranch,
    /// Gated causal convolution with stride > 1.
    StridedGatedConv,
    /// Linear 1×1 convolution.
    PointwiseConv,
    /// 1×1 convolution to class logits followed by global average pooling.
    Head,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default)]
    pub width: usize,
    #[serde(default = "one")]
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub residual: bool,
    #[serde(default)]
    pub skip: bool,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, width: usize, kernel: usize, stride: usize) -> Self {
        Self {
            kind,
            width,
            kernel,
            stride,
            residual: false,
            skip: false,
        }
    }

    pub fn residual(mut self) -> Self {
        self.residual = true;
        self
    }

    pub fn skip(mut self) -> Self {
        self.skip = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub input_channels: usize,
    pub n_classes: usize,
    /// Every layer width is multiplied by this (the head excepted).
    #[serde(default = "one")]
    pub width_multiplier: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_rate: Option<f64>,
    pub layers: Vec<LayerSpec>,
}

impl ModelConfig {
    pub fn slim() -> Self {
        Self::from_toml(SLIM_PRESET).expect("slim preset parses")
    }

    pub fn wide() -> Self {
        Self::from_toml(WIDE_PRESET).expect("wide preset parses")
    }

    /// `"slim"`/`"wide"` (or the `swishnet-` prefixed names) select a preset.
    pub fn preset(name: &str) -> Option<Self> {
        match name.trim_start_matches("swishnet-") {
            "slim" => Some(Self::slim()),
            "wide" => Some(Self::wide()),
            _ => None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("model config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    /// The same stack with a different width multiplier.
    pub fn with_width_multiplier(&self, multiplier: usize) -> Self {
        Self {
            width_multiplier: multiplier,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        let slim = ModelConfig::slim();
        let wide = ModelConfig::wide();
        assert_eq!(slim.input_channels, 20);
        assert_eq!(slim.n_classes, 3);
        assert_eq!(slim.width_multiplier, 1);
        assert_eq!(wide.width_multiplier, 2);
        assert_eq!(wide.layers, slim.layers);
        assert_eq!(slim.layers.last().unwrap().kind, LayerKind::Head);
    }

    #[test]
    fn toml_round_trip() {
        let slim = ModelConfig::slim();
        assert_eq!(ModelConfig::from_toml(&slim.to_toml()).unwrap(), slim);
    }

    #[test]
    fn layer_defaults() {
        let c = ModelConfig::from_toml(
            "name = \"x\"\ninput_channels = 2\nn_classes = 3\n[[layers]]\nkind = \"head\"\n",
        )
        .unwrap();
        assert_eq!(c.width_multiplier, 1);
        assert_eq!(c.layers[0], LayerSpec::new(LayerKind::Head, 0, 1, 1));
    }
}
