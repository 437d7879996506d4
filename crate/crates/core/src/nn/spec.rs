//! Architecture description for the residual (and plain) CIFAR-style convnets.
//!
//! Layout for depth `6n + 2`: a 3×3 stem conv, three stages of `n` two-conv
//! blocks at base widths 16/32/64 (times the width multiplier), global average
//! pooling and a linear classifier. Stages two and three open with a stride-2
//! block; residual shortcuts are parameter-free (strided subsample plus zero
//! channel padding), so pruning the first conv of a block never touches a
//! shortcut.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BASE_WIDTHS: [usize; 3] = [16, 32, 64];
pub const KERNEL: usize = 3;
pub const STAGES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Residual,
    /// Same layout with the shortcuts removed; used for small test networks.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub family: Family,
    pub depth: usize,
    pub num_classes: usize,
    /// (channels, height, width)
    pub input_shape: [usize; 3],
    #[serde(default = "default_width")]
    pub width_multiplier: f64,
    /// Output-filter count of the first conv in every block, in block order.
    /// `None` means the unpruned widths. Set by physical compaction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_widths: Option<Vec<usize>>,
}

fn default_width() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv { kernel: usize, stride: usize, padding: usize },
    Linear,
}

/// Shape summary of one weight-bearing layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
}

/// One residual/plain block's identifiers and widths.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockInfo {
    pub prefix: String,
    pub stride: usize,
    pub in_channels: usize,
    pub inner: usize,
    pub out_channels: usize,
}

impl BlockInfo {
    pub fn conv1(&self) -> String {
        format!("{}.conv1", self.prefix)
    }
    pub fn bn1(&self) -> String {
        format!("{}.bn1", self.prefix)
    }
    pub fn conv2(&self) -> String {
        format!("{}.conv2", self.prefix)
    }
    pub fn bn2(&self) -> String {
        format!("{}.bn2", self.prefix)
    }
}

pub const STEM_CONV: &str = "stem.conv";
pub const STEM_BN: &str = "stem.bn";
pub const CLASSIFIER: &str = "fc";

impl NetworkSpec {
    pub fn residual(depth: usize, num_classes: usize, input_shape: [usize; 3]) -> Self {
        Self {
            family: Family::Residual,
            depth,
            num_classes,
            input_shape,
            width_multiplier: 1.0,
            inner_widths: None,
        }
    }

    pub fn plain(depth: usize, num_classes: usize, input_shape: [usize; 3]) -> Self {
        Self { family: Family::Plain, ..Self::residual(depth, num_classes, input_shape) }
    }

    pub fn with_width(mut self, width_multiplier: f64) -> Self {
        self.width_multiplier = width_multiplier;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 8 || !(self.depth - 2).is_multiple_of(6) {
            return Err(Error::config(format!(
                "depth must be 6n+2 for an integer n >= 1 (got {})",
                self.depth
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::config(format!("num_classes must be >= 2 (got {})", self.num_classes)));
        }
        if self.input_shape.contains(&0) {
            return Err(Error::config(format!("input_shape must be positive (got {:?})", self.input_shape)));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(Error::config(format!(
                "width_multiplier must be a positive real (got {})",
                self.width_multiplier
            )));
        }
        if let Some(widths) = &self.inner_widths {
            if widths.len() != STAGES * self.blocks_per_stage() {
                return Err(Error::config(format!(
                    "inner_widths has {} entries, expected one per block ({})",
                    widths.len(),
                    STAGES * self.blocks_per_stage()
                )));
            }
            if widths.contains(&0) {
                return Err(Error::config("inner_widths entries must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn blocks_per_stage(&self) -> usize {
        (self.depth.saturating_sub(2)) / 6
    }

    pub fn stage_widths(&self) -> [usize; 3] {
        BASE_WIDTHS.map(|w| ((w as f64 * self.width_multiplier).round() as usize).max(1))
    }

    /// Input dimensionality `C·H·W`.
    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn blocks(&self) -> Vec<BlockInfo> {
        let widths = self.stage_widths();
        let n = self.blocks_per_stage();
        let mut blocks = Vec::with_capacity(STAGES * n);
        let mut in_ch = widths[0];
        for (s, &out_ch) in widths.iter().enumerate() {
            for b in 0..n {
                let idx = blocks.len();
                let inner = self.inner_widths.as_ref().map_or(out_ch, |w| w[idx]);
                blocks.push(BlockInfo {
                    prefix: format!("stage{}.block{}", s + 1, b),
                    stride: if s > 0 && b == 0 { 2 } else { 1 },
                    in_channels: in_ch,
                    inner,
                    out_channels: out_ch,
                });
                in_ch = out_ch;
            }
        }
        blocks
    }

    /// Weight-bearing layers in execution order.
    pub fn layers(&self) -> Vec<LayerShape> {
        let [c, h, w] = self.input_shape;
        let conv = |name: String, cin, cout, stride, hw: (usize, usize)| {
            let out = (conv_out(hw.0, stride), conv_out(hw.1, stride));
            LayerShape {
                name,
                kind: LayerKind::Conv { kernel: KERNEL, stride, padding: 1 },
                in_channels: cin,
                out_channels: cout,
                in_hw: hw,
                out_hw: out,
            }
        };
        let widths = self.stage_widths();
        let mut layers = vec![conv(STEM_CONV.to_string(), c, widths[0], 1, (h, w))];
        let mut hw = (h, w);
        for block in self.blocks() {
            let c1 = conv(block.conv1(), block.in_channels, block.inner, block.stride, hw);
            hw = c1.out_hw;
            let c2 = conv(block.conv2(), block.inner, block.out_channels, 1, hw);
            layers.push(c1);
            layers.push(c2);
        }
        layers.push(LayerShape {
            name: CLASSIFIER.to_string(),
            kind: LayerKind::Linear,
            in_channels: widths[2],
            out_channels: self.num_classes,
            in_hw: (1, 1),
            out_hw: (1, 1),
        });
        layers
    }

    /// Every parameter tensor name and shape, in construction order.
    pub fn parameter_shapes(&self) -> IndexMap<String, Vec<usize>> {
        let mut shapes = IndexMap::new();
        let bn = |shapes: &mut IndexMap<String, Vec<usize>>, name: &str, ch: usize| {
            for suffix in BN_PARAMS {
                shapes.insert(format!("{name}.{suffix}"), vec![ch]);
            }
        };
        let widths = self.stage_widths();
        shapes.insert(weight_key(STEM_CONV), vec![widths[0], self.input_shape[0], KERNEL, KERNEL]);
        bn(&mut shapes, STEM_BN, widths[0]);
        for block in self.blocks() {
            shapes.insert(weight_key(&block.conv1()), vec![block.inner, block.in_channels, KERNEL, KERNEL]);
            bn(&mut shapes, &block.bn1(), block.inner);
            shapes.insert(weight_key(&block.conv2()), vec![block.out_channels, block.inner, KERNEL, KERNEL]);
            bn(&mut shapes, &block.bn2(), block.out_channels);
        }
        shapes.insert(weight_key(CLASSIFIER), vec![self.num_classes, widths[2]]);
        shapes.insert(format!("{CLASSIFIER}.bias"), vec![self.num_classes]);
        shapes
    }

    /// Spec with the unpruned inner widths made explicit.
    pub fn full_inner_widths(&self) -> Vec<usize> {
        self.blocks().iter().map(|b| b.inner).collect()
    }
}

pub const BN_PARAMS: [&str; 4] = ["gamma", "beta", "running_mean", "running_var"];

pub fn weight_key(layer: &str) -> String {
    format!("{layer}.weight")
}

/// Running statistics are state, not trainable parameters.
pub fn is_trainable(key: &str) -> bool {
    !(key.ends_with(".running_mean") || key.ends_with(".running_var"))
}

/// Output size of a 3×3, padding-1 conv.
pub fn conv_out(size: usize, stride: usize) -> usize {
    (size + 2 - KERNEL) / stride + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_constraint_is_enforced() {
        for depth in [8, 14, 20, 56] {
            NetworkSpec::residual(depth, 10, [3, 32, 32]).validate().unwrap();
        }
        for depth in [0, 2, 7, 9, 21] {
            let err = NetworkSpec::residual(depth, 10, [3, 32, 32]).validate().unwrap_err();
            assert!(err.to_string().contains("depth must be 6n+2"), "{err}");
        }
    }

    #[test]
    fn rejects_single_class() {
        assert!(NetworkSpec::residual(20, 1, [3, 32, 32]).validate().is_err());
    }

    #[test]
    fn resnet20_layer_schedule() {
        let spec = NetworkSpec::residual(20, 10, [3, 32, 32]);
        let layers = spec.layers();
        // stem + 9 blocks × 2 + fc
        assert_eq!(layers.len(), 20);
        assert_eq!(layers[0].out_hw, (32, 32));
        let s2 = layers.iter().find(|l| l.name == "stage2.block0.conv1").unwrap();
        assert_eq!((s2.in_channels, s2.out_channels, s2.out_hw), (16, 32, (16, 16)));
        let s3 = layers.iter().find(|l| l.name == "stage3.block2.conv2").unwrap();
        assert_eq!((s3.in_channels, s3.out_channels, s3.out_hw), (64, 64, (8, 8)));
    }

    #[test]
    fn odd_spatial_sizes_round_up_under_stride() {
        assert_eq!(conv_out(7, 2), 4);
        assert_eq!(conv_out(8, 2), 4);
        assert_eq!(conv_out(1, 2), 1);
    }
}
